//! The adversary's feature-correlation graph over update coordinates.
//!
//! Nodes are selected coordinates of the update vector; node `m` carries the
//! column `w_m ∈ R^B` of the observed benign updates and edge `(m, m′)` the
//! cosine similarity of the two columns. The diagonal is zero.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::fedsim::UpdateVector;
use crate::mathcore::{cosine_with, Matrix, SeededRng, ZeroNormPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGraph {
    /// `B × M`, one row per observed update in ascending agent order.
    pub features: Matrix,
    /// `M × M` signed cosine similarities between feature columns.
    pub adjacency: Matrix,
    /// Positions of the `M` nodes in the full update vector.
    pub selected: Vec<usize>,
    pub round: usize,
    /// Nodes whose feature column is identically zero.
    pub zero_columns: Vec<usize>,
}

impl CorrelationGraph {
    pub fn nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn observed(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// The `M` coordinates with the largest variance across observed updates.
    #[default]
    VarianceTop,
    /// Every coordinate; requires `M` equal to the full dimension.
    All,
}

/// A deterministic subset of `ceil(fraction · I)` benign updates, returned in
/// ascending agent order. Malicious submissions are never observed.
pub fn observe_benign(
    all: &[UpdateVector],
    fraction: f64,
    rng: &mut SeededRng,
) -> Result<Vec<UpdateVector>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "visibility fraction {fraction} outside (0, 1]"
        )));
    }
    let mut benign: Vec<&UpdateVector> = all.iter().filter(|u| !u.is_malicious).collect();
    benign.sort_by_key(|u| u.agent_id);
    let count = (fraction * benign.len() as f64 - 1e-9).ceil() as usize;
    if count == 0 {
        return Err(Error::Empty {
            context: "observe_benign (no benign updates visible)",
        });
    }
    let mut idx: Vec<usize> = (0..benign.len()).collect();
    rng.shuffle(&mut idx);
    let mut chosen: Vec<UpdateVector> = idx[..count].iter().map(|&i| benign[i].clone()).collect();
    chosen.sort_by_key(|u| u.agent_id);
    Ok(chosen)
}

/// Population variance of every coordinate across `observed` (two-pass).
pub fn coordinate_variances(observed: &[UpdateVector]) -> Result<Vec<f64>> {
    let first = observed.first().ok_or(Error::Empty {
        context: "coordinate_variances",
    })?;
    let len = first.len();
    for u in observed {
        ensure_len("coordinate_variances", len, u.len())?;
    }
    let n = observed.len() as f64;
    let mut mean = vec![0.0; len];
    for u in observed {
        for (m, v) in mean.iter_mut().zip(&u.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for u in observed {
        for ((s, v), m) in var.iter_mut().zip(&u.values).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    Ok(var)
}

/// Picks `m` coordinates, returned in ascending order. Variance ties go to the
/// lower index.
pub fn select_params(
    observed: &[UpdateVector],
    m: usize,
    policy: SelectionPolicy,
) -> Result<Vec<usize>> {
    let full = observed
        .first()
        .ok_or(Error::Empty {
            context: "select_params",
        })?
        .len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "at least two coordinates must be selected, got {m}"
        )));
    }
    if m > full {
        return Err(Error::invalid(format!(
            "cannot select {m} of {full} coordinates"
        )));
    }
    match policy {
        SelectionPolicy::All => {
            if m != full {
                return Err(Error::invalid(format!(
                    "selection policy `all` needs M = {full}, got {m}"
                )));
            }
            Ok((0..full).collect())
        }
        SelectionPolicy::VarianceTop => {
            let var = coordinate_variances(observed)?;
            let mut order: Vec<usize> = (0..full).collect();
            order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
            let mut picked = order[..m].to_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

pub fn build_graph(observed: &[UpdateVector], selected: &[usize]) -> Result<CorrelationGraph> {
    if observed.len() < 2 {
        return Err(Error::invalid(format!(
            "a correlation graph needs at least two observed updates, got {}",
            observed.len()
        )));
    }
    if selected.len() < 2 {
        return Err(Error::invalid(
            "a correlation graph needs at least two nodes",
        ));
    }
    let full = observed[0].len();
    for u in observed {
        ensure_len("build_graph", full, u.len())?;
    }
    if let Some(&bad) = selected.iter().find(|&&i| i >= full) {
        return Err(Error::invalid(format!(
            "selected coordinate {bad} out of range {full}"
        )));
    }
    let mut rows: Vec<&UpdateVector> = observed.iter().collect();
    rows.sort_by_key(|u| u.agent_id);
    let b = rows.len();
    let m = selected.len();
    let features = Matrix::from_fn(b, m, |i, j| rows[i].values[selected[j]]);

    let columns: Vec<Vec<f64>> = (0..m).map(|j| features.column(j)).collect();
    let zero_columns: Vec<usize> = (0..m)
        .filter(|&j| columns[j].iter().all(|&v| v == 0.0))
        .collect();
    let mut adjacency = Matrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let s = cosine_with(&columns[i], &columns[j], ZeroNormPolicy::Zero)?.value;
            adjacency[(i, j)] = s;
            adjacency[(j, i)] = s;
        }
    }
    Ok(CorrelationGraph {
        features,
        adjacency,
        selected: selected.to_vec(),
        round: rows[0].round,
        zero_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(values: Vec<f64>, id: usize, malicious: bool) -> UpdateVector {
        UpdateVector {
            values,
            agent_id: id,
            round: 1,
            claimed_size: 1,
            is_malicious: malicious,
        }
    }

    fn five() -> Vec<UpdateVector> {
        (0..5).map(|i| upd(vec![i as f64, 1.0], i, false)).collect()
    }

    #[test]
    fn visibility_counts() {
        let mut all = five();
        all.push(upd(vec![0.0, 0.0], 5, true));
        let full = observe_benign(&all, 1.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(full.len(), 5);
        assert!(full.iter().all(|u| !u.is_malicious));
        assert_eq!(
            observe_benign(&all, 0.6, &mut SeededRng::new(1))
                .unwrap()
                .len(),
            3
        );
        let a = observe_benign(&all, 0.6, &mut SeededRng::new(4)).unwrap();
        let b = observe_benign(&all, 0.6, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(observe_benign(&all, 0.0, &mut SeededRng::new(1)).is_err());
        assert!(observe_benign(&all[5..], 1.0, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn variance_selection() {
        // coordinate variances (5, 0, 3) up to a common factor
        let s5 = 5f64.sqrt();
        let s3 = 3f64.sqrt();
        let obs = vec![
            upd(vec![s5, 1.0, s3], 0, false),
            upd(vec![-s5, 1.0, -s3], 1, false),
        ];
        assert_eq!(
            select_params(&obs, 2, SelectionPolicy::VarianceTop).unwrap(),
            vec![0, 2]
        );
        assert_eq!(
            select_params(&obs, 3, SelectionPolicy::All).unwrap(),
            vec![0, 1, 2]
        );
        assert!(select_params(&obs, 2, SelectionPolicy::All).is_err());
        assert!(select_params(&obs, 1, SelectionPolicy::VarianceTop).is_err());
        assert!(select_params(&obs, 4, SelectionPolicy::VarianceTop).is_err());
    }

    #[test]
    fn adjacency_hand_computed() {
        // F = [[1, 2, 0], [0, 2, 3]]
        let obs = vec![
            upd(vec![1.0, 2.0, 0.0], 0, false),
            upd(vec![0.0, 2.0, 3.0], 1, false),
        ];
        let g = build_graph(&obs, &[0, 1, 2]).unwrap();
        let a = &g.adjacency;
        let r2 = 2f64.sqrt();
        assert!((a[(0, 1)] - 2.0 / (1.0 * 2.0 * r2)).abs() < 1e-12);
        assert!((a[(0, 2)] - 0.0).abs() < 1e-12);
        assert!((a[(1, 2)] - 6.0 / (2.0 * r2 * 3.0)).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(a[(i, i)], 0.0);
            for j in 0..3 {
                assert_eq!(a[(i, j)], a[(j, i)]);
            }
        }
    }

    #[test]
    fn duplicate_and_zero_columns() {
        let obs = vec![
            upd(vec![1.0, 1.0, 0.0], 3, false),
            upd(vec![2.0, 2.0, 0.0], 1, false),
        ];
        let g = build_graph(&obs, &[0, 1, 2]).unwrap();
        assert!((g.adjacency[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(g.adjacency[(0, 2)], 0.0);
        assert_eq!(g.zero_columns, vec![2]);
        // rows sorted by agent id
        assert_eq!(g.features.row(0), &[2.0, 2.0, 0.0]);
        assert!(build_graph(&obs[..1], &[0, 1]).is_err());
    }
}
