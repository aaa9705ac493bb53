//! Distance and similarity between update vectors.

use crate::error::{Error, Result};

use super::matrix::dot;

/// What to do when a cosine similarity involves an all-zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroNormPolicy {
    /// Report similarity 0 and mark the result degenerate.
    #[default]
    Zero,
    Error,
}

/// Cosine similarity together with a flag telling whether a zero-norm input
/// forced the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine similarity `uᵀv / (‖u‖‖v‖)`, with zero-norm inputs mapped to 0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    cosine_with(u, v, ZeroNormPolicy::Zero).map(|s| s.value)
}

pub fn cosine_with(u: &[f64], v: &[f64], policy: ZeroNormPolicy) -> Result<Similarity> {
    check_pair("cosine", u, v)?;
    if u.is_empty() {
        return Err(Error::Empty { context: "cosine" });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return match policy {
            ZeroNormPolicy::Zero => Ok(Similarity {
                value: 0.0,
                degenerate: true,
            }),
            ZeroNormPolicy::Error => Err(Error::ZeroNorm { context: "cosine" }),
        };
    }
    let value = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(Similarity {
        value,
        degenerate: false,
    })
}

/// Euclidean distance `‖u − v‖₂`.
pub fn euclid(u: &[f64], v: &[f64]) -> Result<f64> {
    check_pair("euclid", u, v)?;
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

fn check_pair(context: &'static str, u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(())
}

/// Nearest-rank percentile of `values` (`q` in `[0, 100]`).
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty {
            context: "percentile",
        });
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid(format!("percentile {q} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 24.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_policy() {
        let s = cosine_with(&[0.0, 0.0], &[1.0, 2.0], ZeroNormPolicy::Zero).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
        assert!(cosine_with(&[0.0, 0.0], &[1.0, 2.0], ZeroNormPolicy::Error).is_err());
        assert!(cosine(&[], &[]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn euclid_examples() {
        assert_eq!(euclid(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(euclid(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclid(&[0.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn nearest_rank() {
        let v = [0.1, 0.5, 0.3, 0.9, 0.7];
        assert_eq!(percentile_nearest_rank(&v, 90.0).unwrap(), 0.9);
        assert_eq!(percentile_nearest_rank(&v, 40.0).unwrap(), 0.3);
        assert_eq!(percentile_nearest_rank(&v, 0.0).unwrap(), 0.1);
        assert!(percentile_nearest_rank(&[], 50.0).is_err());
    }
}
