//! Synthetic Gaussian-blob classification data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let d = self.dim();
        let features = Matrix::from_fn(indices.len(), d, |i, j| self.features[(indices[i], j)]);
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            name: name.into(),
        }
    }

    /// Deterministic split into (kept, held-out) with `fraction` of the rows
    /// held out. Both sides keep at least one row; a single-row dataset
    /// appears on both sides.
    pub fn holdout_split(&self, fraction: f64, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
        if self.is_empty() {
            return Err(Error::Empty {
                context: "holdout_split",
            });
        }
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "held-out fraction {fraction} outside [0, 1)"
            )));
        }
        if self.len() == 1 {
            return Ok((
                self.subset(&[0], format!("{}/train", self.name)),
                self.subset(&[0], format!("{}/heldout", self.name)),
            ));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        let n_hold = ((fraction * self.len() as f64).round() as usize).clamp(1, self.len() - 1);
        let (hold, keep) = idx.split_at(n_hold);
        let mut hold = hold.to_vec();
        let mut keep = keep.to_vec();
        hold.sort_unstable();
        keep.sort_unstable();
        Ok((
            self.subset(&keep, format!("{}/train", self.name)),
            self.subset(&hold, format!("{}/heldout", self.name)),
        ))
    }
}

/// Class means on a regular simplex with pairwise distance `separation`,
/// living in the first `classes − 1` coordinates.
pub fn simplex_means(classes: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if classes < 2 {
        return Err(Error::invalid("at least two classes are required"));
    }
    if dim < classes - 1 {
        return Err(Error::invalid(format!(
            "simplex placement of {classes} class means needs input dim >= {}, got {dim}",
            classes - 1
        )));
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let inv_c = 1.0 / classes as f64;
    Ok((0..classes)
        .map(|c| {
            let mut mean = vec![0.0; dim];
            // coordinates of (e_c − 1/C) in the Helmert basis of the sum-zero subspace
            for k in 1..classes {
                let norm = ((k * (k + 1)) as f64).sqrt();
                let mut coord = 0.0;
                for i in 0..=k {
                    let v = if i == c { 1.0 - inv_c } else { -inv_c };
                    let h = if i < k { 1.0 } else { -(k as f64) };
                    coord += h * v;
                }
                mean[k - 1] = radius * coord / norm;
            }
            mean
        })
        .collect())
}

/// Gaussian blobs with unit covariance, `per_class` samples per class,
/// stored class-major.
pub fn synth_dataset(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::invalid("per-class sample count must be positive"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!(
            "separation {separation} must be finite and >= 0"
        )));
    }
    let means = simplex_means(classes, dim, separation)?;
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|m| m + rng.normal()));
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, dim, data)?,
        labels,
        classes,
        "synthetic",
    )
}
