//! Video action-unit recognition from within-video ranking.
//!
//! Per-frame AU labels are predicted in three stages, trained in order:
//!
//! 1. **Pseudo-intensity** ([`pseudo_intensity`]): a siamese scalar network
//!    learns the relative degree of facial appearance change from ranked
//!    frame pairs of the same video, using a margin ranking loss. Scores are
//!    unnormalized and only comparable within a video.
//! 2. **Uncertainty** ([`uncertainty`]): with the pseudo-intensities frozen,
//!    a second siamese network learns a per-frame standard deviation under a
//!    Gaussian model of the pseudo-intensity. The loss is the probability of
//!    margin violation, `Phi((m - r * delta) / sqrt(sigma_i^2 + sigma_j^2))`;
//!    frames that misorder pairs (occlusion, extreme pose) end up with large
//!    sigma.
//! 3. **Mapping** ([`mapping`]): window and whole-video statistics of the two
//!    series feed a small fully connected network, trained with mean absolute
//!    error, that emits per-frame labels. The video-level statistics absorb
//!    each person's neutral-state baseline.
//!
//! [`data`] supplies ingestion, pair construction, splitting, and a synthetic
//! video generator with ground-truth ordering and occlusion flags; [`eval`]
//! implements the competition metric (0.5 x mean F1 + 0.5 x accuracy) and
//! ranking/occlusion diagnostics; [`pipeline`] wires the stages into the CLI
//! commands with deterministic, resumable artifacts.

pub mod data;
pub mod error;
pub mod eval;
pub mod mapping;
pub mod nn;
pub mod pipeline;
pub mod pseudo_intensity;
pub mod uncertainty;

pub use error::{Error, Result};
