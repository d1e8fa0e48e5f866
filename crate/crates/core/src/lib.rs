//! PGD-based adversarial testing with the MultiTargeted surrogate-loss
//! strategy.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices and a Jacobi singular-value routine
//! - [`models`]: small feedforward classifiers with exact input gradients
//! - [`threat`]: ℓ∞ balls and box unions (projection, sampling, membership)
//! - [`losses`]: cross-entropy, margin and logit-difference surrogates
//! - [`optim`]: sign / plain / ℓ2 / Adam directions and step schedules
//! - [`engine`]: restarted PGD, MultiTargeted, PGD+MT and aggregation
//! - [`oracle`]: closed-form optimum for linear models and a grid search
//! - [`analysis`]: basin maps, gradient spectra, logit landscapes
//! - [`harness`]: experiment drivers and file formats used by the CLI

pub mod analysis;
pub mod engine;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod optim;
pub mod oracle;
pub mod threat;

pub use engine::{
    aggregate, run_attack, run_multitargeted, run_pgd_mt, run_untargeted, AttackConfig,
    AttackResult, RestartRecord, Strategy, TargetCount,
};
pub use error::{Error, Result};
pub use losses::SurrogateLoss;
pub use models::{Layer, Model};
pub use numerics::Mat;
pub use optim::{OptimizerKind, StepSchedule};
pub use threat::{Aabb, BoxUnion, LinfBall, ThreatSet};
