//! Siamese pseudo-intensity model: a shared scalar network scores frames,
//! trained so the score ordering of a pair matches its rank label via the
//! margin ranking loss `max(0, m - r * (f(x_i) - f(x_j)))`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{stable_seed, FrameStore, Rank, RankedPair, VideoSequence};
use crate::error::{Error, Result};
use crate::nn::{
    init_params, GradientTape, NetworkParams, OptimizerKind, OptimizerState, OutputTransform,
};

pub const DEFAULT_MARGIN: f64 = 1.0;

/// Shared training settings for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without improvement before stopping; 0 disables early stop.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            optimizer: OptimizerKind::adam_default(),
            learning_rate: 1e-3,
            seed: 0,
            early_stop_patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub seed: u64,
    pub final_loss: f64,
    /// Mean batch loss per epoch, in order.
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoIntensityModel {
    pub params: NetworkParams,
    pub au_index: usize,
    pub margin: f64,
    pub meta: TrainMeta,
}

impl PseudoIntensityModel {
    /// Content-addressed identity used by the uncertainty stage to pin the
    /// exact frozen model it was trained against.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Margin ranking loss. Zero iff `r * delta >= m`; the subgradient at the
/// hinge point takes the zero branch.
pub fn ranking_loss(delta: f64, rank: Rank, margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::InvalidInput(format!("margin must be positive, got {margin}")));
    }
    if !delta.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite delta {delta}")));
    }
    Ok((margin - rank.value() * delta).max(0.0))
}

/// d ranking_loss / d delta: `-r` on the violated region, 0 once the margin
/// is met (including exactly at the hinge).
pub fn ranking_loss_grad(delta: f64, rank: Rank, margin: f64) -> f64 {
    if rank.value() * delta < margin {
        -rank.value()
    } else {
        0.0
    }
}

/// Trains the pseudo-intensity network on ranked pairs. Both siamese arms
/// evaluate one shared parameter set; gradients from both arms accumulate
/// into the same tape. Deterministic for a fixed config.
///
/// `validation` supplies held-out pairs (with their own videos) for the
/// early-stop monitor; without it, patience falls back to training-pair
/// order accuracy.
pub fn train_pseudo(
    pairs: &[RankedPair],
    videos: &[VideoSequence],
    au_index: usize,
    hidden: &[usize],
    margin: f64,
    cfg: &TrainConfig,
    validation: Option<(&[RankedPair], &[VideoSequence])>,
) -> Result<PseudoIntensityModel> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".to_string()));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidConfig(format!("margin must be positive, got {margin}")));
    }

    let store = FrameStore::new(videos);
    let input_dim = store.frame(&pairs[0].video_id, pairs[0].index_i)?.features.len();
    let mut layer_sizes = vec![input_dim];
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(1);

    let mut params = init_params(&layer_sizes, cfg.seed, OutputTransform::Identity)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stable_seed(cfg.seed, "pseudo/shuffle"));

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut tape = GradientTape::zeros_like(&params);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            tape.reset();
            for &idx in batch {
                let pair = &pairs[idx];
                let (xi, xj) = store.pair_features(pair)?;
                let trace_i = params.forward_traced(xi)?;
                let trace_j = params.forward_traced(xj)?;
                let delta = trace_i.output() - trace_j.output();
                loss_sum += ranking_loss(delta, pair.rank, margin)?;
                let g = ranking_loss_grad(delta, pair.rank, margin);
                if g != 0.0 {
                    params.backward(&trace_i, g, &mut tape)?;
                    params.backward(&trace_j, -g, &mut tape)?;
                }
            }
            tape.scale(1.0 / batch.len() as f64);
            if !tape.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite gradients in pseudo-intensity training".to_string(),
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
            let acc = match validation {
                Some((val_pairs, val_videos)) if !val_pairs.is_empty() => {
                    pair_order_accuracy(&params, val_pairs, &FrameStore::new(val_videos))?
                }
                _ => pair_order_accuracy(&params, pairs, &store)?,
            };
            if acc > best_acc {
                best_acc = acc;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    let final_loss = epoch_loss.last().copied().unwrap_or(0.0);
    Ok(PseudoIntensityModel {
        params,
        au_index,
        margin,
        meta: TrainMeta {
            epochs_run: epoch_loss.len(),
            seed: cfg.seed,
            final_loss,
            epoch_loss,
        },
    })
}

/// Fraction of pairs whose score ordering matches the rank label; ties count
/// as misordered.
pub fn pair_order_accuracy(
    params: &NetworkParams,
    pairs: &[RankedPair],
    store: &FrameStore,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no pairs to score".to_string()));
    }
    let mut correct = 0usize;
    for pair in pairs {
        let (xi, xj) = store.pair_features(pair)?;
        let delta = params.forward(xi)? - params.forward(xj)?;
        if delta.signum() == pair.rank.value() {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Per-frame pseudo-intensities for one video. A pure function of features:
/// duplicate frames score identically and batch order cannot matter.
pub fn predict_pseudo(model: &PseudoIntensityModel, video: &VideoSequence) -> Result<Vec<f64>> {
    video
        .frames
        .iter()
        .map(|f| model.params.forward(&f.features))
        .collect()
}
