//! Pool-based Bayesian optimization over frozen embeddings with a
//! deep-kernel Gaussian-process surrogate.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI and the acceptance suite use.
//!
//! ```
//! use dkbo::{run_bo, synth, BoConfig, SurrogateKind};
//!
//! let pool = synth::generate(&synth::SyntheticSpec::gp_draw(40, 2, 1.0, 7)).unwrap();
//! let cfg = BoConfig {
//!     surrogate: SurrogateKind::Fixed,
//!     iterations: 3,
//!     ..BoConfig::default()
//! };
//! let session: dkbo::Session = run_bo(&pool, cfg, 0).unwrap();
//! assert_eq!(session.observed.len(), 13);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod bo;
pub mod deep;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod optim;
pub mod scalar;
pub mod store;
pub mod synth;

pub use acquisition::{expected_improvement, Acquisition, AcquisitionScore};
pub use bo::{init_design, run_bo, BoConfig, BoSession, Event, InitPolicy, InitRule, Observation, Suggestion};
pub use deep::{fit_deep, joint_fit, ProjectionMap, TrainConfig};
pub use diagnostics::{CoverageSpec, MetricReport, MetricStats};
pub use error::{Error, Result};
pub use gp::{
    fit_fixed, FitOptions, FittedSurrogate, GpHyperparams, PosteriorGaussian, SurrogateKind, SurrogateRecord,
};
pub use linalg::Matrix;
pub use scalar::Real;
pub use store::{load_pool, save_pool, CandidatePool, PoolFormat, Standardizer};

pub type Session = BoSession<f64>;
pub type Session32 = BoSession<f32>;
pub type Surrogate = FittedSurrogate<f64>;
pub type Surrogate32 = FittedSurrogate<f32>;
pub type Hyperparams = GpHyperparams<f64>;
pub type Projection = ProjectionMap<f64>;
pub type Posterior = PosteriorGaussian<f64>;
pub type Mat = Matrix<f64>;
