//! Graph spectral transformation.
//!
//! Benign features `F` (`B × M`) are projected onto the GFT basis of the
//! observed graph, `S = F·𝓑`, and re-synthesized on the basis of the
//! reconstructed graph, `F̂ = S·𝓑̂ᵀ`. Rows of `F̂` seed the malicious update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{cosine, sym_eig, Matrix, SeededRng};

/// Combinatorial Laplacian `diag(A·1) − A`.
pub fn laplacian(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let scale = a.max_abs().max(1.0);
    let asym = a.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: 1e-12 * scale,
        });
    }
    let n = a.rows();
    let deg = a.row_sums();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            deg[i] - a[(i, i)]
        } else {
            -a[(i, j)]
        }
    }))
}

/// Elementwise `max(A, 0)`, the clamp used on the benign side.
pub fn clamp_nonnegative(a: &Matrix) -> Matrix {
    a.map(|v| v.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub laplacian: Matrix,
    /// Columns are eigenvectors, ascending eigenvalue order.
    pub basis: Matrix,
    pub eigenvalues: Vec<f64>,
}

pub fn gft_basis(l: &Matrix) -> Result<SpectralBasis> {
    let eig = sym_eig(l)?;
    Ok(SpectralBasis {
        laplacian: l.clone(),
        basis: eig.eigenvectors,
        eigenvalues: eig.eigenvalues,
    })
}

/// `S = F·𝓑`.
pub fn spectral_coeffs(f: &Matrix, basis: &SpectralBasis) -> Result<Matrix> {
    f.matmul(&basis.basis)
}

/// `F̂ = S·𝓑̂ᵀ`.
pub fn reconstruct_features(s: &Matrix, basis_hat: &SpectralBasis) -> Result<Matrix> {
    s.matmul_t(&basis_hat.basis)
}

/// Runs the whole transform: benign basis from `max(A, 0)`, reconstructed
/// basis from `Â` as given.
pub fn transform(f: &Matrix, a: &Matrix, a_hat: &Matrix) -> Result<Matrix> {
    let b = gft_basis(&laplacian(&clamp_nonnegative(a))?)?;
    let b_hat = gft_basis(&laplacian(a_hat)?)?;
    reconstruct_features(&spectral_coeffs(f, &b)?, &b_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowPolicy {
    #[default]
    Random,
    /// Row `adversary_index mod B`.
    Cycle,
    /// Row with the largest cosine similarity to a reference vector.
    NearestGlobal,
}

/// Picks one row of `F̂` as the initial malicious update on the selected
/// coordinates. `reference` is only read by [`RowPolicy::NearestGlobal`].
pub fn initial_malicious(
    f_hat: &Matrix,
    policy: RowPolicy,
    adversary_index: usize,
    reference: &[f64],
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let b = f_hat.rows();
    if b == 0 {
        return Err(Error::Empty {
            context: "initial_malicious",
        });
    }
    let row = match policy {
        RowPolicy::Random => rng.below(b),
        RowPolicy::Cycle => adversary_index % b,
        RowPolicy::NearestGlobal => {
            if reference.len() != f_hat.cols() {
                return Err(Error::DimensionMismatch {
                    context: "initial_malicious (reference)",
                    expected: f_hat.cols(),
                    actual: reference.len(),
                });
            }
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for i in 0..b {
                let s = cosine(f_hat.row(i), reference)?;
                if s > best_sim {
                    best_sim = s;
                    best = i;
                }
            }
            best
        }
    };
    Ok(f_hat.row(row).to_vec())
}
