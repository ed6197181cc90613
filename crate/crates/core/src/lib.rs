//! Population-level EEG spectral tensors.
//!
//! The crate builds an epoch × sensor × frequency tensor of Welch power
//! spectra, decomposes it into rank-1 spatiospectral patterns with a
//! canonical polyadic decomposition (ALS or Levenberg–Marquardt), selects
//! the rank with DIFFIT, projects unseen epochs onto the recovered basis,
//! and evaluates cohort classifiers on the projection weights with
//! subject-disjoint cross-validation.
//!
//! ```text
//! EDF ─ select_channels ─ bandpass ─ epoch_and_reject ─ select_awake_epochs ─ welch
//!                                                                               │
//!            build_tensor ─ diffit ─ cpd_gn ─ build_basis ─ project ─ cross_validate
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cpd;
pub mod edf;
pub mod error;
pub mod factors;
pub mod preprocess;
pub mod projection;
pub mod rank;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use factors::FactorSet;
pub use tensor::Tensor3;

/// The 19 channels of the 10-20 montage, in tensor order.
pub const CHANNELS: [&str; 19] = [
    "Fp1", "F3", "F7", "C3", "T7", "P3", "P7", "O1", "Fp2", "F4", "F8", "C4", "T8", "P4", "P8",
    "O2", "Fz", "Cz", "Pz",
];

/// Row of `Cz` in [`CHANNELS`]; artifact rejection keys on it.
pub const CZ_INDEX: usize = 17;
