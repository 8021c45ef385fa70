//! Synthetic video generator with known latent intensities, person-specific
//! neutral offsets, and ground-truth occlusion flags.
//!
//! Each video models one person: per-AU latent intensity follows a bounded
//! random walk in [0, 5]; features embed the latents along global direction
//! vectors with a per-person offset and gain; occluded frames have their
//! features replaced by high-variance noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stable_seed, FrameRecord, Label, VideoSequence, MAX_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub feature_dim: usize,
    pub num_aus: usize,
    pub frames_per_second: f64,
    /// Per-person neutral appearance offset, uniform per feature dimension.
    pub neutral_offset_range: (f64, f64),
    /// Per-person, per-AU expressiveness gain; keep positive so within-video
    /// ordering matches the latent ordering.
    pub gain_range: (f64, f64),
    /// Random-walk step scale of the latent intensity trajectory.
    pub trajectory_step: f64,
    /// Observation noise added to clean frames; 0 gives noise-free videos.
    pub feature_noise: f64,
    pub occlusion_probability: f64,
    /// Std of the noise that replaces features on occluded frames.
    pub occlusion_noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_videos: 20,
            frames_per_video: 200,
            feature_dim: 8,
            num_aus: 2,
            frames_per_second: 30.0,
            neutral_offset_range: (-0.5, 0.5),
            gain_range: (0.8, 1.5),
            trajectory_step: 0.2,
            feature_noise: 0.01,
            occlusion_probability: 0.0,
            occlusion_noise_scale: 2.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_videos", self.num_videos),
            ("frames_per_video", self.frames_per_video),
            ("feature_dim", self.feature_dim),
            ("num_aus", self.num_aus),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.frames_per_second > 0.0) {
            return Err(Error::InvalidConfig("frames_per_second must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability) {
            return Err(Error::InvalidConfig(format!(
                "occlusion_probability must lie in [0, 1], got {}",
                self.occlusion_probability
            )));
        }
        for (name, (lo, hi)) in [
            ("neutral_offset_range", self.neutral_offset_range),
            ("gain_range", self.gain_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite lo <= hi range")));
            }
        }
        for (name, v) in [
            ("trajectory_step", self.trajectory_step),
            ("feature_noise", self.feature_noise),
            ("occlusion_noise_scale", self.occlusion_noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Standard normal draw via Box-Muller; one value per call keeps the stream
/// layout simple and reproducible.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn uniform_in(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Reflects a random-walk proposal back into [0, max].
fn reflect(x: f64, max: f64) -> f64 {
    let mut v = x;
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > max {
            v = 2.0 * max - v;
        } else {
            return v;
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<VideoSequence>> {
    cfg.validate()?;
    let d = cfg.feature_dim;

    // Global per-AU embedding directions, shared across persons so a single
    // model can recover within-video ordering on held-out people.
    let mut dir_rng = ChaCha8Rng::seed_from_u64(stable_seed(cfg.seed, "directions"));
    let directions: Vec<Vec<f64>> = (0..cfg.num_aus)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| normal(&mut dir_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect();

    let max = f64::from(MAX_LABEL);
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for k in 0..cfg.num_videos {
        let video_id = format!("video{k:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(cfg.seed, &format!("video/{k}")));

        let offset: Vec<f64> = (0..d).map(|_| uniform_in(&mut rng, cfg.neutral_offset_range)).collect();
        let gains: Vec<f64> = (0..cfg.num_aus).map(|_| uniform_in(&mut rng, cfg.gain_range)).collect();
        let mut latents: Vec<f64> = (0..cfg.num_aus).map(|_| rng.gen_range(0.0..max)).collect();

        let mut frames = Vec::with_capacity(cfg.frames_per_video);
        for t in 0..cfg.frames_per_video {
            if t > 0 {
                for latent in &mut latents {
                    *latent = reflect(*latent + cfg.trajectory_step * normal(&mut rng), max);
                }
            }

            let occluded = rng.gen::<f64>() < cfg.occlusion_probability;
            let features: Vec<f64> = if occluded {
                (0..d).map(|_| cfg.occlusion_noise_scale * normal(&mut rng)).collect()
            } else {
                let mut f = offset.clone();
                for (a, dir) in directions.iter().enumerate() {
                    let scale = gains[a] * latents[a];
                    for (fi, di) in f.iter_mut().zip(dir) {
                        *fi += scale * di;
                    }
                }
                if cfg.feature_noise > 0.0 {
                    for fi in &mut f {
                        *fi += cfg.feature_noise * normal(&mut rng);
                    }
                }
                f
            };

            let labels: Vec<Label> = latents
                .iter()
                .map(|&l| Label::Value(l.round().clamp(0.0, max) as u8))
                .collect();

            frames.push(FrameRecord {
                video_id: video_id.clone(),
                frame_index: t as u32,
                features,
                labels,
                occluded: Some(occluded),
                latent: Some(latents.clone()),
            });
        }
        videos.push(VideoSequence::new(video_id, frames, cfg.frames_per_second)?);
    }
    Ok(videos)
}
