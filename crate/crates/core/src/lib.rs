//! Direct preference-alignment losses over finite response spaces.
//!
//! The crate covers the DPO, eDPO and PRO family of losses together with
//! brute-force solvers that check their optimality conditions numerically,
//! and a small synthetic-world harness for studying training dynamics.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod feedback;
pub mod hyper;
pub mod losses;
pub mod numeric;
pub mod oracle;
pub mod policy;
pub mod space;
pub mod verify;

pub use error::{Error, Result};
pub use feedback::{
    true_score, BinaryDataset, BinaryRecord, FeedbackDataset, PairRecord, PairwiseDataset,
    PreferenceMatrix, ScalarDataset, ScalarRecord, ScoreMap,
};
pub use hyper::{
    alpha_threshold, augmented_preference, hyper_mass, hyper_reward, mu_bar, HyperConfig,
    HyperSpace, MassMode,
};
pub use numeric::{implicit_reward, kl_bernoulli_half, log_sigmoid};
pub use policy::{AutoregressivePolicy, Policy, TabularPolicy};
pub use space::{Distribution, ResponseSpace, Support};
pub use losses::{
    KtoParams, KtoSign, LossBody, LossKind, LossSpec, LossValue, ProPForm, Proximal,
};
pub use oracle::{SolveReport, SolverConfig, TheoremReport};
pub use experiments::{Diagnostics, Trajectory, WorldShape, WorldSpec};
