//! Dense real linear algebra and statistics shared by every analysis:
//! row-major `f64` matrices, SVD with a deterministic sign convention,
//! cosine/effective-rank/Spearman statistics, and seeded randomness.

mod matrix;
mod rng;
mod stats;
mod svd;

pub use matrix::Matrix;
pub use rng::{derive_seed, SeededRng, RNG_ALGORITHM};
pub use stats::{effective_rank, max_abs_cosine, spearman};
pub use svd::{svd, SvdResult};
