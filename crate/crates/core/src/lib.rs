//! Equalized focal loss and its relatives for long-tailed dense classification.
//!
//! * [`loss`]: forward/backward kernels for FL, EFL, EQLv2&Focal and EQFL.
//! * [`state`]: per-category gradient statistics that drive the EFL factors.
//! * [`synth`]: Zipfian synthetic datasets, repeat-factor sampling, imbalance stats.
//! * [`train`]: a deterministic SGD trainer for per-category sigmoid classifiers.
//! * [`metrics`]: `ap_cls`, margins, group means, loss-curve tables.
//! * [`experiment`]: multi-seed comparisons of variants and scale factors.
//! * [`gradcheck`]: finite-difference verification of every analytical gradient.
//!
//! ```
//! use efl::loss::{efl, focal_loss, BinaryTarget, LossHyperParams};
//!
//! let hp = LossHyperParams::default();
//! let t = BinaryTarget::POSITIVE;
//! // A category with gamma_v = 0 is trained exactly like focal loss.
//! assert_eq!(efl(-1.5, t, &hp, 0.0)?, focal_loss(-1.5, t, &hp, hp.gamma_b)?);
//! # Ok::<(), efl::Error>(())
//! ```

pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod state;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use loss::{BinaryTarget, LossHyperParams, Variant};
pub use state::CategoryState;
pub use synth::{DatasetSpec, SyntheticDataset};
pub use train::{ModelParams, TrainConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/focal-loss.md")]
    mod focal_loss {}
    #[doc = include_str!("../../../book/src/efl.md")]
    mod efl {}
    #[doc = include_str!("../../../book/src/category-state.md")]
    mod category_state {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/gradient-checking.md")]
    mod gradient_checking {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
