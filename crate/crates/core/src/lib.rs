//! Training and evaluating link-recommendation models under exposure bias.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: directed graphs with categorical, featured nodes and the
//!   ordered-pair universe.
//! - [`estimators`]: naive, inverse-propensity (`w`), positive-unlabeled (`pu`)
//!   and added-positive (`ap`) estimators of the true risk, with closed-form
//!   bias and variance.
//! - [`models`] and [`training`]: the logistic link model, the category-pair
//!   propensity table and the combined likelihood + risk objective.
//! - [`synthesis`]: semi-synthetic worlds with known ground truth and the
//!   exact enumeration oracles.
//! - [`feedback`]: the iterative recommend/retrain simulator.
//! - [`evaluation`]: classification and ranking metrics.
//! - [`validation`]: the named oracle checks run by `exposure validate`.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod feedback;
pub mod graph;
pub mod models;
pub mod stats;
pub mod synthesis;
pub mod training;
pub mod validation;

pub use error::{Error, ErrorKind, Result};
pub use estimators::{Estimator, GroundTruth, LossKind, LossSpec, PairEstimates, RiskReport};
pub use graph::{Graph, Node, NodeId, PairUniverse};
pub use models::{GradientBundle, LinkModel, PropensityModel};
pub use synthesis::{GroundTruthWorld, SyntheticSpec};
pub use training::{TrainConfig, TrainReport};

/// Floor applied to estimated propensities before any division.
pub const PROPENSITY_FLOOR: f64 = 1e-3;

/// Seeded generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build the crate's RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
