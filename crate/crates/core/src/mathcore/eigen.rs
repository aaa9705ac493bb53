//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Ascending eigenvalues with matching unit-norm eigenvectors stored as columns.
///
/// Gauge: within each eigenvector the entry of largest magnitude is
/// nonnegative (lowest index wins ties). Eigenvectors sharing an eigenvalue
/// are ordered by their first differing entry, largest first. This fixes a
/// representative; it does not make degenerate eigenspaces unique.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct JacobiOptions {
    pub max_sweeps: usize,
    /// Convergence when the off-diagonal Frobenius norm drops below
    /// `off_tolerance * ‖S‖_F`.
    pub off_tolerance: f64,
    /// Relative asymmetry admitted on input.
    pub symmetry_tolerance: f64,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            off_tolerance: 1e-12,
            symmetry_tolerance: 1e-9,
        }
    }
}

pub fn sym_eig(s: &Matrix) -> Result<EigenPair> {
    sym_eig_with(s, JacobiOptions::default())
}

pub fn sym_eig_with(s: &Matrix, opts: JacobiOptions) -> Result<EigenPair> {
    if !s.is_square() {
        return Err(Error::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    let n = s.rows();
    let scale = s.max_abs();
    let asym = s.max_asymmetry();
    let tol = opts.symmetry_tolerance * scale.max(f64::MIN_POSITIVE);
    if asym > tol {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    if !s.all_finite() {
        return Err(Error::NonFinite {
            context: "sym_eig input".into(),
        });
    }

    // work on the exactly symmetric part
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let mut v = Matrix::identity(n);
    let target = opts.off_tolerance * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..opts.max_sweeps {
        if off_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
    }
    if !converged {
        let off = off_norm(&a);
        if off > target {
            return Err(Error::NoConvergence {
                sweeps: opts.max_sweeps,
                off_norm: off,
            });
        }
    }

    let eigenvalues: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut columns: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = v.column(j);
            fix_sign(&mut col);
            col
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]).then(i.cmp(&j)));

    // reorder inside clusters of numerically equal eigenvalues
    let lam_scale = eigenvalues.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let cluster_tol = 1e-10 * lam_scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eigenvalues[order[end]] - eigenvalues[order[end - 1]] <= cluster_tol {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by(|&i, &j| lexicographic_desc(&columns[i], &columns[j]));
        }
        start = end;
    }

    let sorted_values: Vec<f64> = order.iter().map(|&i| eigenvalues[i]).collect();
    let sorted_cols: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| std::mem::take(&mut columns[i]))
        .collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| sorted_cols[j][i]);
    Ok(EigenPair {
        eigenvalues: sorted_values,
        eigenvectors,
    })
}

fn off_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// `A ← JᵀAJ`, `V ← VJ` for the plane rotation in `(p, q)`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn fix_sign(col: &mut [f64]) {
    let max = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let lead = col
        .iter()
        .position(|x| x.abs() >= max * (1.0 - 1e-12))
        .unwrap_or(0);
    if col[lead] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

fn lexicographic_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

impl EigenPair {
    /// `‖S − BΛBᵀ‖_F`.
    pub fn reconstruction_residual(&self, s: &Matrix) -> f64 {
        let b = &self.eigenvectors;
        let n = b.rows();
        let recon = Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| b[(i, k)] * self.eigenvalues[k] * b[(j, k)])
                .sum()
        });
        s.sub(&recon)
            .map(|d| d.frobenius_norm())
            .unwrap_or(f64::INFINITY)
    }

    /// Largest `|BᵀB − I|` entry.
    pub fn orthonormality_error(&self) -> f64 {
        let b = &self.eigenvectors;
        let btb = b.t_matmul(b).expect("square basis");
        btb.sub(&Matrix::identity(b.cols()))
            .expect("same shape")
            .max_abs()
    }
}
