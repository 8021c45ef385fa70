//! Siamese uncertainty model: treats each pseudo-intensity as Gaussian with
//! per-frame standard deviation sigma = h(x), and trains h against frozen
//! pseudo-intensities with the expanded ranking error loss
//!
//! ```text
//! L = 1/2 * (1 + erf((m - r (y_i - y_j)) / sqrt(2 (s_i^2 + s_j^2))))
//! ```
//!
//! the probability, under that Gaussian model, that the pair violates the
//! margin. Minimizing it shrinks sigma on confidently correct pairs and grows
//! it on misordered ones, so sigma flags frames whose appearance evidence is
//! unreliable (occlusion, extreme pose).
//!
//! The published formula carries a leading `1 -`, which rewards confident
//! misordering; that reading is kept available as [`LossForm::Literal`] for
//! auditing, with the un-negated form as the default.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stable_seed, FrameStore, Rank, RankedPair, VideoSequence};
use crate::error::{Error, Result};
use crate::nn::math::{normal_cdf, normal_pdf};
use crate::nn::{init_params, GradientTape, OptimizerState, OutputTransform};
use crate::pseudo_intensity::{PseudoIntensityModel, TrainConfig, TrainMeta};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

/// Largest double below 1; keeps the loss strictly inside (0, 1).
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// Margin-violation probability (default).
    Corrected,
    /// The formula exactly as printed, `1 - corrected`; sigma gradients point
    /// the wrong way. Kept for auditability.
    Literal,
}

impl std::str::FromStr for LossForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(LossForm::Corrected),
            "literal" => Ok(LossForm::Literal),
            other => Err(Error::InvalidConfig(format!(
                "loss form must be 'corrected' or 'literal', got {other:?}"
            ))),
        }
    }
}

/// Expanded ranking error loss with its configuration pinned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpandedRankingLoss {
    pub margin: f64,
    pub sigma_floor: f64,
    pub form: LossForm,
}

impl ExpandedRankingLoss {
    pub fn new(margin: f64, sigma_floor: f64, form: LossForm) -> Result<Self> {
        if !(margin > 0.0) {
            return Err(Error::InvalidConfig(format!("margin must be positive, got {margin}")));
        }
        if !(sigma_floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma_floor must be positive, got {sigma_floor}"
            )));
        }
        Ok(ExpandedRankingLoss {
            margin,
            sigma_floor,
            form,
        })
    }

    fn check(&self, y_hat_i: f64, y_hat_j: f64, sigma_i: f64, sigma_j: f64) -> Result<()> {
        for v in [y_hat_i, y_hat_j, sigma_i, sigma_j] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite loss input {v}")));
            }
        }
        if sigma_i < self.sigma_floor || sigma_j < self.sigma_floor {
            return Err(Error::InvalidInput(format!(
                "sigma ({sigma_i}, {sigma_j}) below floor {}",
                self.sigma_floor
            )));
        }
        Ok(())
    }

    /// Standardized margin deficit `(m - r delta) / sqrt(s_i^2 + s_j^2)`.
    fn z(&self, y_hat_i: f64, y_hat_j: f64, sigma_i: f64, sigma_j: f64, rank: Rank) -> f64 {
        let pooled = (sigma_i * sigma_i + sigma_j * sigma_j).sqrt();
        (self.margin - rank.value() * (y_hat_i - y_hat_j)) / pooled
    }

    /// Loss value, strictly inside (0, 1); equals Phi(z) for the corrected
    /// form and monotone decreasing in `r * (y_i - y_j)`.
    pub fn loss(
        &self,
        y_hat_i: f64,
        y_hat_j: f64,
        sigma_i: f64,
        sigma_j: f64,
        rank: Rank,
    ) -> Result<f64> {
        self.check(y_hat_i, y_hat_j, sigma_i, sigma_j)?;
        let p = normal_cdf(self.z(y_hat_i, y_hat_j, sigma_i, sigma_j, rank))
            .clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP);
        Ok(match self.form {
            LossForm::Corrected => p,
            LossForm::Literal => 1.0 - p,
        })
    }

    /// Partials of the loss with respect to (sigma_i, sigma_j); the frozen
    /// pseudo-intensities receive no gradient by construction.
    pub fn sigma_grads(
        &self,
        y_hat_i: f64,
        y_hat_j: f64,
        sigma_i: f64,
        sigma_j: f64,
        rank: Rank,
    ) -> Result<(f64, f64)> {
        self.check(y_hat_i, y_hat_j, sigma_i, sigma_j)?;
        let s2 = sigma_i * sigma_i + sigma_j * sigma_j;
        let z = self.z(y_hat_i, y_hat_j, sigma_i, sigma_j, rank);
        // d Phi(z) / d sigma_k = phi(z) * z * (-sigma_k / s2)
        let common = -normal_pdf(z) * z / s2;
        let sign = match self.form {
            LossForm::Corrected => 1.0,
            LossForm::Literal => -1.0,
        };
        Ok((sign * common * sigma_i, sign * common * sigma_j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    /// Softplus-output network; predicted sigma adds `sigma_floor` on top.
    pub params: crate::nn::NetworkParams,
    pub au_index: usize,
    pub margin: f64,
    pub sigma_floor: f64,
    /// Content hash of the pseudo-intensity model frozen during training.
    pub frozen_model_ref: String,
    pub loss_form: LossForm,
    pub meta: TrainMeta,
}

impl UncertaintyModel {
    fn sigma_from_trace_output(&self, softplus_out: f64) -> f64 {
        self.sigma_floor + softplus_out
    }
}

/// Trains the uncertainty network against frozen pseudo-intensities. The
/// frozen model is only ever read; its content hash is recorded (and
/// re-checked) so prediction-time pairing can be validated.
pub fn train_uncertainty(
    pairs: &[RankedPair],
    videos: &[VideoSequence],
    frozen: &PseudoIntensityModel,
    hidden: &[usize],
    loss: ExpandedRankingLoss,
    cfg: &TrainConfig,
) -> Result<UncertaintyModel> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".to_string()));
    }

    let frozen_hash = frozen.content_hash();
    let store = FrameStore::new(videos);

    // Freeze y-hat: evaluate once per referenced video up front.
    let mut y_hat: HashMap<&str, Vec<f64>> = HashMap::new();
    for video in videos {
        y_hat.insert(
            video.video_id.as_str(),
            crate::pseudo_intensity::predict_pseudo(frozen, video)?,
        );
    }

    let input_dim = store.frame(&pairs[0].video_id, pairs[0].index_i)?.features.len();
    let mut layer_sizes = vec![input_dim];
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(1);

    let mut params = init_params(&layer_sizes, cfg.seed, OutputTransform::Softplus)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stable_seed(cfg.seed, "uncertainty/shuffle"));

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut tape = GradientTape::zeros_like(&params);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            tape.reset();
            for &idx in batch {
                let pair = &pairs[idx];
                let series = y_hat
                    .get(pair.video_id.as_str())
                    .ok_or_else(|| Error::InvalidInput(format!("unknown video {}", pair.video_id)))?;
                let (yi, yj) = (series[pair.index_i], series[pair.index_j]);
                let (xi, xj) = store.pair_features(pair)?;

                let trace_i = params.forward_traced(xi)?;
                let trace_j = params.forward_traced(xj)?;
                let si = loss.sigma_floor + trace_i.output();
                let sj = loss.sigma_floor + trace_j.output();

                loss_sum += loss.loss(yi, yj, si, sj, pair.rank)?;
                let (gi, gj) = loss.sigma_grads(yi, yj, si, sj, pair.rank)?;
                // d sigma / d softplus-output = 1
                params.backward(&trace_i, gi, &mut tape)?;
                params.backward(&trace_j, gj, &mut tape)?;
            }
            tape.scale(1.0 / batch.len() as f64);
            if !tape.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite gradients in uncertainty training".to_string(),
                });
            }
            opt.step(&mut params, &tape)?;
        }
        let mean_loss = loss_sum / pairs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite mean loss {mean_loss}"),
            });
        }
        epoch_loss.push(mean_loss);

        if cfg.early_stop_patience > 0 {
            if mean_loss < best_loss - 1e-6 {
                best_loss = mean_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    debug_assert_eq!(frozen.content_hash(), frozen_hash, "frozen model mutated");

    let final_loss = epoch_loss.last().copied().unwrap_or(0.0);
    Ok(UncertaintyModel {
        params,
        au_index: frozen.au_index,
        margin: loss.margin,
        sigma_floor: loss.sigma_floor,
        frozen_model_ref: frozen_hash,
        loss_form: loss.form,
        meta: TrainMeta {
            epochs_run: epoch_loss.len(),
            seed: cfg.seed,
            final_loss,
            epoch_loss,
        },
    })
}

/// Per-frame sigma for one video; every value is >= the model's sigma floor.
pub fn predict_uncertainty(model: &UncertaintyModel, video: &VideoSequence) -> Result<Vec<f64>> {
    video
        .frames
        .iter()
        .map(|f| {
            model
                .params
                .forward(&f.features)
                .map(|out| model.sigma_from_trace_output(out))
        })
        .collect()
}

/// Sigma for a single feature vector using raw parameters; used by the
/// expanded-loss gradient checks.
pub fn sigma_for(params: &crate::nn::NetworkParams, sigma_floor: f64, features: &[f64]) -> Result<f64> {
    Ok(sigma_floor + params.forward(features)?)
}
