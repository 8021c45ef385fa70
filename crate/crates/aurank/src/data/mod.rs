//! Frame/video data model, within-video ranked-pair construction, and
//! video-granularity train/validation splitting.

pub mod io;
pub mod synthetic;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Highest legal intensity annotation; occurrence labels use {0, 1}.
pub const MAX_LABEL: u8 = 5;

/// Raw annotation value marking an unusable frame in interchange files.
pub const INVALID_LABEL_RAW: i64 = -1;

/// Per-frame, per-AU annotation. `Invalid` frames stay in their sequence but
/// never enter pair construction or metric computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Invalid,
    Value(u8),
}

impl Label {
    pub fn from_raw(raw: i64) -> Result<Label> {
        match raw {
            INVALID_LABEL_RAW => Ok(Label::Invalid),
            v if (0..=MAX_LABEL as i64).contains(&v) => Ok(Label::Value(v as u8)),
            v => Err(Error::Schema(format!(
                "label {v} outside 0..={MAX_LABEL} and not the invalid marker {INVALID_LABEL_RAW}"
            ))),
        }
    }

    pub fn to_raw(self) -> i64 {
        match self {
            Label::Invalid => INVALID_LABEL_RAW,
            Label::Value(v) => i64::from(v),
        }
    }

    pub fn value(self) -> Option<u8> {
        match self {
            Label::Invalid => None,
            Label::Value(v) => Some(v),
        }
    }
}

/// One video frame: feature vector plus optional annotations. `occluded` and
/// `latent` carry synthetic ground truth only and are never serialized to the
/// interchange CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub features: Vec<f64>,
    pub labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

impl FrameRecord {
    pub fn label(&self, au_index: usize) -> Option<u8> {
        self.labels.get(au_index).and_then(|l| l.value())
    }
}

/// Ordered frames of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSequence {
    pub video_id: String,
    pub frames: Vec<FrameRecord>,
    pub frames_per_second: f64,
}

impl VideoSequence {
    pub fn new(video_id: String, frames: Vec<FrameRecord>, frames_per_second: f64) -> Result<Self> {
        let seq = VideoSequence {
            video_id,
            frames,
            frames_per_second,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frames_per_second > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "video {}: fps must be positive",
                self.video_id
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::EmptyDataset(format!("video {} has no frames", self.video_id)));
        }
        let dim = self.frames[0].features.len();
        let n_aus = self.frames[0].labels.len();
        let mut prev_index: Option<u32> = None;
        for f in &self.frames {
            if f.video_id != self.video_id {
                return Err(Error::Schema(format!(
                    "frame {} of video {} carries id {}",
                    f.frame_index, self.video_id, f.video_id
                )));
            }
            if let Some(p) = prev_index {
                if f.frame_index <= p {
                    return Err(Error::Schema(format!(
                        "video {}: frame_index {} not strictly increasing after {}",
                        self.video_id, f.frame_index, p
                    )));
                }
            }
            prev_index = Some(f.frame_index);
            if f.features.len() != dim {
                return Err(Error::Schema(format!(
                    "video {} frame {}: feature dim {} != {}",
                    self.video_id,
                    f.frame_index,
                    f.features.len(),
                    dim
                )));
            }
            if f.labels.len() != n_aus {
                return Err(Error::Schema(format!(
                    "video {} frame {}: {} labels, expected {}",
                    self.video_id,
                    f.frame_index,
                    f.labels.len(),
                    n_aus
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.features.len())
    }

    pub fn num_aus(&self) -> usize {
        self.frames.first().map_or(0, |f| f.labels.len())
    }
}

/// Intensity ranking of a pair: `Higher` means `y_i > y_j` (r = +1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rank {
    Higher,
    Lower,
}

impl Rank {
    pub fn value(self) -> f64 {
        match self {
            Rank::Higher => 1.0,
            Rank::Lower => -1.0,
        }
    }

    pub fn flip(self) -> Rank {
        match self {
            Rank::Higher => Rank::Lower,
            Rank::Lower => Rank::Higher,
        }
    }

    pub fn from_i8(raw: i8) -> Result<Rank> {
        match raw {
            1 => Ok(Rank::Higher),
            -1 => Ok(Rank::Lower),
            v => Err(Error::InvalidInput(format!("rank label must be +1 or -1, got {v}"))),
        }
    }
}

/// Two frames of the same video plus their rank label. Indices are positions
/// into `VideoSequence::frames`. Ties never produce a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedPair {
    pub video_id: String,
    pub index_i: usize,
    pub index_j: usize,
    pub rank: Rank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSamplerConfig {
    pub max_pairs_per_video: usize,
    /// Minimum |frame_index_i - frame_index_j|; 0 admits any distinct frames.
    pub min_frame_gap: u32,
    pub balance_by_rank_difference: bool,
    pub seed: u64,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        // Unbalanced sampling floods the easy |dy| = 1 bucket.
        PairSamplerConfig {
            max_pairs_per_video: 200,
            min_frame_gap: 0,
            balance_by_rank_difference: true,
            seed: 0,
        }
    }
}

impl PairSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_pairs_per_video == 0 {
            return Err(Error::InvalidConfig(
                "max_pairs_per_video must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Derives a child seed from a base seed and a context string. Stable across
/// runs and platforms, unlike the std hasher.
pub(crate) fn stable_seed(base: u64, context: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(context.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Builds the ranked-pair training set for one AU: all pairs intra-video,
/// tied labels excluded, per-video count capped at `max_pairs_per_video`,
/// optionally balanced across |y_i - y_j| buckets.
pub fn build_pair_dataset(
    videos: &[VideoSequence],
    au_index: usize,
    cfg: &PairSamplerConfig,
) -> Result<Vec<RankedPair>> {
    cfg.validate()?;
    let mut out = Vec::new();

    for video in videos {
        // (i, j, |dy|, rank) over valid unequal-label frame pairs
        let mut admissible: Vec<(usize, usize, u8, Rank)> = Vec::new();
        let frames = &video.frames;
        for i in 0..frames.len() {
            let Some(yi) = frames[i].label(au_index) else { continue };
            for j in i + 1..frames.len() {
                let Some(yj) = frames[j].label(au_index) else { continue };
                if yi == yj {
                    continue;
                }
                let gap = frames[i].frame_index.abs_diff(frames[j].frame_index);
                if gap < cfg.min_frame_gap {
                    continue;
                }
                let rank = if yi > yj { Rank::Higher } else { Rank::Lower };
                admissible.push((i, j, yi.abs_diff(yj), rank));
            }
        }

        let selected: Vec<(usize, usize, u8, Rank)> = if admissible.len() <= cfg.max_pairs_per_video {
            admissible
        } else {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stable_seed(cfg.seed, &format!("pairs/{}", video.video_id)));
            if cfg.balance_by_rank_difference {
                let mut buckets: Vec<Vec<(usize, usize, u8, Rank)>> =
                    vec![Vec::new(); MAX_LABEL as usize];
                for p in admissible {
                    buckets[(p.2 - 1) as usize].push(p);
                }
                for bucket in &mut buckets {
                    bucket.shuffle(&mut rng);
                }
                // round-robin drain keeps the bucket counts as even as
                // availability permits
                let mut picked = Vec::with_capacity(cfg.max_pairs_per_video);
                while picked.len() < cfg.max_pairs_per_video {
                    let mut took_any = false;
                    for bucket in &mut buckets {
                        if picked.len() == cfg.max_pairs_per_video {
                            break;
                        }
                        if let Some(p) = bucket.pop() {
                            picked.push(p);
                            took_any = true;
                        }
                    }
                    if !took_any {
                        break;
                    }
                }
                picked
            } else {
                let mut all = admissible;
                all.shuffle(&mut rng);
                all.truncate(cfg.max_pairs_per_video);
                all
            }
        };

        out.extend(selected.into_iter().map(|(i, j, _, rank)| RankedPair {
            video_id: video.video_id.clone(),
            index_i: i,
            index_j: j,
            rank,
        }));
    }

    if out.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no rankable pairs for AU index {au_index} in any video"
        )));
    }
    Ok(out)
}

/// Resolves `RankedPair` indices back to frames.
pub struct FrameStore<'a> {
    by_id: HashMap<&'a str, &'a VideoSequence>,
}

impl<'a> FrameStore<'a> {
    pub fn new(videos: &'a [VideoSequence]) -> Self {
        FrameStore {
            by_id: videos.iter().map(|v| (v.video_id.as_str(), v)).collect(),
        }
    }

    pub fn frame(&self, video_id: &str, index: usize) -> Result<&'a FrameRecord> {
        let video = self
            .by_id
            .get(video_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown video {video_id}")))?;
        video
            .frames
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("video {video_id} has no frame position {index}")))
    }

    pub fn pair_features(&self, pair: &RankedPair) -> Result<(&'a [f64], &'a [f64])> {
        let fi = self.frame(&pair.video_id, pair.index_i)?;
        let fj = self.frame(&pair.video_id, pair.index_j)?;
        Ok((&fi.features, &fj.features))
    }
}

/// Partition at video granularity; no video straddles the split.
pub fn split_by_video(
    videos: Vec<VideoSequence>,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<VideoSequence>, Vec<VideoSequence>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction must be in (0, 1), got {validation_fraction}"
        )));
    }
    if videos.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 videos to split, got {}",
            videos.len()
        )));
    }

    let n = videos.len();
    let val_count = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, "split"));
    order.shuffle(&mut rng);
    let validation_set: std::collections::HashSet<usize> =
        order.into_iter().take(val_count).collect();

    let mut train = Vec::with_capacity(n - val_count);
    let mut validation = Vec::with_capacity(val_count);
    for (idx, video) in videos.into_iter().enumerate() {
        if validation_set.contains(&idx) {
            validation.push(video);
        } else {
            train.push(video);
        }
    }
    Ok((train, validation))
}

/// Maps intensity labels onto occurrence labels in place: any nonzero
/// intensity becomes 1, zero stays 0, invalid stays invalid. Idempotent on
/// data that is already 0/1.
pub fn binarize_labels(videos: &mut [VideoSequence]) {
    for video in videos {
        for frame in &mut video.frames {
            for label in &mut frame.labels {
                if let Label::Value(v) = label {
                    *v = u8::from(*v > 0);
                }
            }
        }
    }
}
