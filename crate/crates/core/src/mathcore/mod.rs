//! Dense linear algebra, update-geometry metrics, the symmetric eigensolver
//! and seeded randomness shared by the rest of the crate.

mod eigen;
mod matrix;
mod metrics;
mod rng;

pub use eigen::{sym_eig, sym_eig_with, EigenPair, JacobiOptions};
pub use matrix::{axpy, dot, norm2, sub, Matrix};
pub use metrics::{
    cosine, cosine_with, euclid, percentile_nearest_rank, Similarity, ZeroNormPolicy,
};
pub use rng::{rng_split, SeededRng};
