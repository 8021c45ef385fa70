//! Mapping stage: turns per-frame (pseudo-intensity, uncertainty) series into
//! AU labels. A feature extractor computes centered-window and whole-video
//! statistics of both series; a small fully connected network trained with
//! mean absolute error maps each frame's row to its label.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stable_seed, VideoSequence};
use crate::error::{Error, Result};
use crate::nn::{init_params, GradientTape, NetworkParams, OptimizerState, OutputTransform};
use crate::pseudo_intensity::{predict_pseudo, PseudoIntensityModel, TrainConfig, TrainMeta};
use crate::uncertainty::{predict_uncertainty, UncertaintyModel};

/// Statistics configuration for the feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GConfig {
    /// Centered window length in seconds, truncated at video boundaries.
    pub window_seconds: f64,
    pub percentiles: Vec<f64>,
    pub include_video_level: bool,
    /// Adds a 1/sigma^2-weighted window mean of the pseudo-intensities.
    pub uncertainty_weighting: bool,
}

impl Default for GConfig {
    fn default() -> Self {
        GConfig {
            window_seconds: 2.0,
            percentiles: vec![5.0, 25.0, 50.0, 75.0, 95.0],
            include_video_level: true,
            uncertainty_weighting: true,
        }
    }
}

impl GConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds > 0.0) {
            return Err(Error::InvalidConfig("window_seconds must be positive".to_string()));
        }
        if self.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(Error::InvalidConfig("percentiles must lie in [0, 100]".to_string()));
        }
        if self.percentiles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "percentiles must be sorted and unique".to_string(),
            ));
        }
        Ok(())
    }

    /// Half-width of the window in frames for a given frame rate.
    fn radius(&self, fps: f64) -> usize {
        let frames = (self.window_seconds * fps).round().max(1.0) as usize;
        frames / 2
    }

    /// Number of statistics per series block: mean, std, min, max, percentiles
    /// of y-hat; mean, std of sigma; optional weighted mean of y-hat.
    fn block_width(&self) -> usize {
        4 + self.percentiles.len() + 2 + usize::from(self.uncertainty_weighting)
    }

    /// Total row width: the frame's own (y-hat, sigma) plus one block per
    /// window and, when enabled, one per video.
    pub fn feature_width(&self) -> usize {
        2 + self.block_width() * (1 + usize::from(self.include_video_level))
    }

    /// Documented column order of a feature row.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["y_hat".to_string(), "sigma".to_string()];
        let block = |prefix: &str, names: &mut Vec<String>| {
            for stat in ["y_mean", "y_std", "y_min", "y_max"] {
                names.push(format!("{prefix}_{stat}"));
            }
            for p in &self.percentiles {
                names.push(format!("{prefix}_y_p{p:02.0}"));
            }
            names.push(format!("{prefix}_s_mean"));
            names.push(format!("{prefix}_s_std"));
            if self.uncertainty_weighting {
                names.push(format!("{prefix}_y_wmean"));
            }
        };
        block("win", &mut names);
        if self.include_video_level {
            block("vid", &mut names);
        }
        names
    }
}

/// Per-frame pseudo-intensities and uncertainties for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySeries {
    pub video_id: String,
    pub y_hat: Vec<f64>,
    pub sigma: Vec<f64>,
    pub frames_per_second: f64,
}

impl IntensitySeries {
    pub fn validate(&self) -> Result<()> {
        if self.y_hat.is_empty() {
            return Err(Error::EmptyDataset(format!("series {} is empty", self.video_id)));
        }
        if self.y_hat.len() != self.sigma.len() {
            return Err(Error::Shape(format!(
                "series {}: {} intensities vs {} sigmas",
                self.video_id,
                self.y_hat.len(),
                self.sigma.len()
            )));
        }
        if !(self.frames_per_second > 0.0) {
            return Err(Error::InvalidConfig("frames_per_second must be positive".to_string()));
        }
        Ok(())
    }
}

/// Linear-interpolation percentile over a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

fn push_block(row: &mut Vec<f64>, y: &[f64], sigma: &[f64], cfg: &GConfig) {
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let y_std = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    row.push(y_mean);
    row.push(y_std);
    row.push(sorted[0]);
    row.push(*sorted.last().unwrap());
    for &p in &cfg.percentiles {
        row.push(percentile(&sorted, p));
    }
    let s_mean = sigma.iter().sum::<f64>() / n;
    let s_std = (sigma.iter().map(|v| (v - s_mean).powi(2)).sum::<f64>() / n).sqrt();
    row.push(s_mean);
    row.push(s_std);
    if cfg.uncertainty_weighting {
        let mut wsum = 0.0;
        let mut wy = 0.0;
        for (&yi, &si) in y.iter().zip(sigma) {
            let w = 1.0 / (si * si);
            wsum += w;
            wy += w * yi;
        }
        row.push(wy / wsum);
    }
}

/// One feature row per frame: the frame's own values followed by window and
/// (optionally) video-level statistics. Windows are centered and truncated at
/// boundaries; a singleton window reproduces the point values.
pub fn extract_g_features(series: &IntensitySeries, cfg: &GConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    series.validate()?;

    let n = series.y_hat.len();
    let radius = cfg.radius(series.frames_per_second);
    let width = cfg.feature_width();

    let mut video_block: Vec<f64> = Vec::new();
    if cfg.include_video_level {
        push_block(&mut video_block, &series.y_hat, &series.sigma, cfg);
    }

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        let mut row = Vec::with_capacity(width);
        row.push(series.y_hat[i]);
        row.push(series.sigma[i]);
        push_block(&mut row, &series.y_hat[lo..hi], &series.sigma[lo..hi], cfg);
        row.extend_from_slice(&video_block);
        debug_assert_eq!(row.len(), width);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature row for {} frame {i}",
                series.video_id
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Occurrence,
    Intensity,
}

impl TargetKind {
    pub fn max_value(self) -> f64 {
        match self {
            TargetKind::Occurrence => 1.0,
            TargetKind::Intensity => 5.0,
        }
    }
}

/// Training rows for the mapping model with the extractor config pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDataset {
    pub au_index: usize,
    pub g_config: GConfig,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Computes the intensity/uncertainty series for a video. With no
/// uncertainty model (P2 mode) sigma is the constant `p2_sigma`, keeping the
/// feature width stable.
pub fn intensity_series(
    video: &VideoSequence,
    pseudo: &PseudoIntensityModel,
    uncertainty: Option<&UncertaintyModel>,
    p2_sigma: f64,
) -> Result<IntensitySeries> {
    let y_hat = predict_pseudo(pseudo, video)?;
    let sigma = match uncertainty {
        Some(model) => predict_uncertainty(model, video)?,
        None => vec![p2_sigma; y_hat.len()],
    };
    Ok(IntensitySeries {
        video_id: video.video_id.clone(),
        y_hat,
        sigma,
        frames_per_second: video.frames_per_second,
    })
}

/// Assembles the mapping training set: one row per frame with a valid label
/// for the AU; invalid-marker frames are skipped.
pub fn build_mapping_dataset(
    videos: &[VideoSequence],
    pseudo: &PseudoIntensityModel,
    uncertainty: Option<&UncertaintyModel>,
    cfg: &GConfig,
    au_index: usize,
    p2_sigma: f64,
) -> Result<MappingDataset> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for video in videos {
        let series = intensity_series(video, pseudo, uncertainty, p2_sigma)?;
        let feats = extract_g_features(&series, cfg)?;
        for (frame, row) in video.frames.iter().zip(feats) {
            if let Some(y) = frame.label(au_index) {
                rows.push(row);
                targets.push(f64::from(y));
            }
        }
    }
    Ok(MappingDataset {
        au_index,
        g_config: cfg.clone(),
        rows,
        targets,
    })
}

/// Writes D_t as a CSV (documented column order plus a trailing `target`
/// column) with a JSON sidecar carrying the extractor snapshot.
pub fn save_mapping_dataset(csv_path: &std::path::Path, dataset: &MappingDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = dataset.g_config.column_names();
    header.push("target".to_string());
    wtr.write_record(&header)?;
    for (row, target) in dataset.rows.iter().zip(&dataset.targets) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(target.to_string());
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    crate::data::io::atomic_write(csv_path, &bytes)?;

    let sidecar = csv_path.with_extension("json");
    let meta = serde_json::json!({
        "au_index": dataset.au_index,
        "g_config": dataset.g_config,
    });
    crate::data::io::atomic_write(&sidecar, &serde_json::to_vec_pretty(&meta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingModel {
    pub params: NetworkParams,
    pub au_index: usize,
    pub g_config: GConfig,
    pub target_kind: TargetKind,
    /// Occurrence cut on the clamped raw output.
    pub decision_threshold: f64,
    pub meta: TrainMeta,
}

/// Trains the mapping network with mean absolute error.
pub fn train_mapping(
    dataset: &MappingDataset,
    hidden: &[usize],
    target_kind: TargetKind,
    decision_threshold: f64,
    cfg: &TrainConfig,
) -> Result<MappingModel> {
    cfg.validate()?;
    if dataset.rows.is_empty() {
        return Err(Error::EmptyDataset("mapping dataset has no rows".to_string()));
    }
    if !(decision_threshold > 0.0 && decision_threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "decision threshold must lie in (0, 1), got {decision_threshold}"
        )));
    }
    let width = dataset.g_config.feature_width();
    if dataset.rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape(format!("mapping rows must all have width {width}")));
    }

    let mut layer_sizes = vec![width];
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(1);
    let mut params = init_params(&layer_sizes, cfg.seed, OutputTransform::Identity)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stable_seed(cfg.seed, "mapping/shuffle"));

    let mut order: Vec<usize> = (0..dataset.rows.len()).collect();
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
                let trace = params.forward_traced(&dataset.rows[idx])?;
                let residual = trace.output() - dataset.targets[idx];
                loss_sum += residual.abs();
                // subgradient of |r| at 0 is 0
                let g = if residual > 0.0 {
                    1.0
                } else if residual < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                params.backward(&trace, g, &mut tape)?;
            }
            tape.scale(1.0 / batch.len() as f64);
            if !tape.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite gradients in mapping training".to_string(),
                });
            }
            opt.step(&mut params, &tape)?;
        }
        let mean_loss = loss_sum / dataset.rows.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite mean absolute error {mean_loss}"),
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

    let final_loss = epoch_loss.last().copied().unwrap_or(0.0);
    Ok(MappingModel {
        params,
        au_index: dataset.au_index,
        g_config: dataset.g_config.clone(),
        target_kind,
        decision_threshold,
        meta: TrainMeta {
            epochs_run: epoch_loss.len(),
            seed: cfg.seed,
            final_loss,
            epoch_loss,
        },
    })
}

/// Converts a clamped raw output into a label.
pub fn decide_label(raw: f64, target_kind: TargetKind, threshold: f64) -> u8 {
    match target_kind {
        TargetKind::Occurrence => u8::from(raw.clamp(0.0, 1.0) >= threshold),
        TargetKind::Intensity => raw.clamp(0.0, 5.0).round() as u8,
    }
}

/// Full-pipeline per-frame prediction for one video.
pub fn predict_labels(
    pseudo: &PseudoIntensityModel,
    uncertainty: Option<&UncertaintyModel>,
    mapping: &MappingModel,
    video: &VideoSequence,
    p2_sigma: f64,
) -> Result<Vec<u8>> {
    if mapping.g_config.feature_width() != mapping.params.input_dim() {
        return Err(Error::InvalidConfig(format!(
            "mapping model expects {} inputs but its feature config produces {}",
            mapping.params.input_dim(),
            mapping.g_config.feature_width()
        )));
    }
    let series = intensity_series(video, pseudo, uncertainty, p2_sigma)?;
    let rows = extract_g_features(&series, &mapping.g_config)?;
    rows.iter()
        .map(|row| {
            let raw = mapping.params.forward(row)?;
            Ok(decide_label(raw, mapping.target_kind, mapping.decision_threshold))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(y: Vec<f64>, sigma: Vec<f64>, fps: f64) -> IntensitySeries {
        IntensitySeries {
            video_id: "v".to_string(),
            y_hat: y,
            sigma,
            frames_per_second: fps,
        }
    }

    /// 3-frame window at 1 fps: window_seconds = 3, radius 1.
    fn three_frame_cfg() -> GConfig {
        GConfig {
            window_seconds: 3.0,
            include_video_level: false,
            ..Default::default()
        }
    }

    #[test]
    fn constant_series_collapses_all_stats() {
        let s = series(vec![4.2; 7], vec![1.0; 7], 1.0);
        let cfg = GConfig::default();
        let rows = extract_g_features(&s, &cfg).unwrap();
        let names = cfg.column_names();
        for row in &rows {
            for (name, &v) in names.iter().zip(row) {
                if name == "sigma" || name.contains("_s_") {
                    continue;
                }
                if name.ends_with("std") {
                    assert_eq!(v, 0.0, "{name}");
                } else {
                    assert!((v - 4.2).abs() < 1e-12, "{name} = {v}");
                }
            }
        }
    }

    #[test]
    fn single_frame_video_uses_point_values() {
        let s = series(vec![2.5], vec![0.3], 30.0);
        let rows = extract_g_features(&s, &GConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row[0], 2.5);
        assert_eq!(row[1], 0.3);
        // window mean/min/max/percentiles all equal the point value
        assert_eq!(row[2], 2.5);
        assert_eq!(row[3], 0.0);
        assert_eq!(row[4], 2.5);
        assert_eq!(row[5], 2.5);
    }

    #[test]
    fn centered_window_hand_computed_stats() {
        let s = series(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1.0; 5], 1.0);
        let rows = extract_g_features(&s, &three_frame_cfg()).unwrap();
        // center frame 2: window {1, 2, 3}
        let row = &rows[2];
        assert!((row[2] - 2.0).abs() < 1e-12, "window mean");
        assert!((row[3] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12, "population std");
        assert_eq!(row[4], 1.0, "window min");
        assert_eq!(row[5], 3.0, "window max");
    }

    #[test]
    fn boundary_windows_truncate() {
        let s = series(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1.0; 5], 1.0);
        let rows = extract_g_features(&s, &three_frame_cfg()).unwrap();
        // frame 0: window {0, 1}, no padding
        assert!((rows[0][2] - 0.5).abs() < 1e-12);
        assert_eq!(rows[0][4], 0.0);
        assert_eq!(rows[0][5], 1.0);
        // frame 4: window {3, 4}
        assert!((rows[4][2] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_uses_inverse_variance() {
        let s = series(vec![0.0, 10.0], vec![1.0, 3.0], 1.0);
        let cfg = GConfig {
            window_seconds: 5.0,
            include_video_level: false,
            ..Default::default()
        };
        let rows = extract_g_features(&s, &cfg).unwrap();
        let names = cfg.column_names();
        let wmean_col = names.iter().position(|n| n == "win_y_wmean").unwrap();
        // weights 1 and 1/9 -> (0 + 10/9) / (1 + 1/9) = 1
        assert!((rows[0][wmean_col] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifting_y_shifts_means_not_stds() {
        let y: Vec<f64> = vec![0.2, 1.4, 0.9, 3.1, 2.2, 0.5];
        let sg: Vec<f64> = vec![0.4, 1.1, 0.8, 0.6, 1.9, 0.3];
        let cfg = GConfig::default();
        let base = extract_g_features(&series(y.clone(), sg.clone(), 2.0), &cfg).unwrap();
        let c = 3.75;
        let shifted =
            extract_g_features(&series(y.iter().map(|v| v + c).collect(), sg, 2.0), &cfg).unwrap();
        let names = cfg.column_names();
        for (r0, r1) in base.iter().zip(&shifted) {
            for ((name, &a), &b) in names.iter().zip(r0).zip(r1) {
                if name.contains("_s_") || name == "sigma" {
                    assert!((a - b).abs() < 1e-9, "{name} changed");
                } else if name.ends_with("std") {
                    assert!((a - b).abs() < 1e-9, "{name} std changed");
                } else {
                    assert!((a + c - b).abs() < 1e-9, "{name} did not shift by c");
                }
            }
        }
    }

    #[test]
    fn feature_width_is_stable_across_videos() {
        let cfg = GConfig::default();
        for n in [1usize, 3, 50] {
            let s = series((0..n).map(|i| i as f64).collect(), vec![1.0; n], 30.0);
            let rows = extract_g_features(&s, &cfg).unwrap();
            assert_eq!(rows.len(), n);
            assert!(rows.iter().all(|r| r.len() == cfg.feature_width()));
        }
        assert_eq!(cfg.column_names().len(), cfg.feature_width());
    }

    #[test]
    fn empty_series_is_rejected() {
        let s = series(vec![], vec![], 30.0);
        assert!(matches!(
            extract_g_features(&s, &GConfig::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn bad_gconfig_is_rejected() {
        let cfg = GConfig {
            percentiles: vec![50.0, 25.0],
            ..Default::default()
        };
        assert!(extract_g_features(&series(vec![1.0], vec![1.0], 1.0), &cfg).is_err());
        let cfg = GConfig {
            window_seconds: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    /// A dataset whose target equals the y_hat column: linearly solvable.
    fn identity_dataset(n: usize) -> MappingDataset {
        let cfg = GConfig {
            include_video_level: false,
            ..Default::default()
        };
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let y = (i % 6) as f64;
            let s = series(vec![y; 3], vec![1.0; 3], 1.0);
            let feats = extract_g_features(&s, &cfg).unwrap();
            rows.push(feats[1].clone());
            targets.push(y);
        }
        MappingDataset {
            au_index: 0,
            g_config: cfg,
            rows,
            targets,
        }
    }

    fn map_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 5e-3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn mapping_learns_identity_to_small_mae() {
        let ds = identity_dataset(120);
        let model =
            train_mapping(&ds, &[16, 8], TargetKind::Intensity, 0.5, &map_cfg(250, 2)).unwrap();
        assert!(
            model.meta.final_loss <= 0.05,
            "final MAE {}",
            model.meta.final_loss
        );
    }

    #[test]
    fn constant_labels_drive_mae_to_zero() {
        let mut ds = identity_dataset(60);
        ds.targets = vec![2.0; ds.targets.len()];
        let model =
            train_mapping(&ds, &[8], TargetKind::Intensity, 0.5, &map_cfg(300, 3)).unwrap();
        assert!(model.meta.final_loss < 0.05, "final MAE {}", model.meta.final_loss);
    }

    #[test]
    fn mapping_training_is_deterministic() {
        let ds = identity_dataset(40);
        let a = train_mapping(&ds, &[8], TargetKind::Intensity, 0.5, &map_cfg(20, 9)).unwrap();
        let b = train_mapping(&ds, &[8], TargetKind::Intensity, 0.5, &map_cfg(20, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mapping_dataset_is_an_error() {
        let ds = MappingDataset {
            au_index: 0,
            g_config: GConfig::default(),
            rows: vec![],
            targets: vec![],
        };
        assert!(matches!(
            train_mapping(&ds, &[8], TargetKind::Occurrence, 0.5, &map_cfg(1, 0)),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn occurrence_decisions_threshold_clamped_output() {
        assert_eq!(decide_label(0.2, TargetKind::Occurrence, 0.5), 0);
        assert_eq!(decide_label(0.7, TargetKind::Occurrence, 0.5), 1);
        assert_eq!(decide_label(9.0, TargetKind::Occurrence, 0.5), 1);
        assert_eq!(decide_label(-3.0, TargetKind::Occurrence, 0.5), 0);
    }

    #[test]
    fn intensity_decisions_clamp_and_round() {
        assert_eq!(decide_label(5.7, TargetKind::Intensity, 0.5), 5);
        assert_eq!(decide_label(-0.4, TargetKind::Intensity, 0.5), 0);
        assert_eq!(decide_label(2.4, TargetKind::Intensity, 0.5), 2);
        assert_eq!(decide_label(2.6, TargetKind::Intensity, 0.5), 3);
    }

    fn labeled_video() -> VideoSequence {
        use crate::data::{FrameRecord, Label};
        let id = "v".to_string();
        let labels = [
            Label::Value(0),
            Label::Value(2),
            Label::Invalid,
            Label::Value(1),
        ];
        let frames = labels
            .iter()
            .enumerate()
            .map(|(t, &label)| FrameRecord {
                video_id: id.clone(),
                frame_index: t as u32,
                features: vec![t as f64, 1.0],
                labels: vec![label],
                occluded: None,
                latent: None,
            })
            .collect();
        VideoSequence::new(id, frames, 30.0).unwrap()
    }

    fn dummy_pseudo(input_dim: usize) -> PseudoIntensityModel {
        PseudoIntensityModel {
            params: init_params(&[input_dim, 4, 1], 0, OutputTransform::Identity).unwrap(),
            au_index: 0,
            margin: 1.0,
            meta: TrainMeta::default(),
        }
    }

    #[test]
    fn invalid_frames_are_skipped_in_mapping_rows() {
        let video = labeled_video();
        let ds = build_mapping_dataset(
            &[video],
            &dummy_pseudo(2),
            None,
            &GConfig::default(),
            0,
            1e-3,
        )
        .unwrap();
        assert_eq!(ds.rows.len(), 3);
        assert_eq!(ds.targets, vec![0.0, 2.0, 1.0]);
    }

    #[test]
    fn p2_mode_fills_sigma_columns_with_the_floor() {
        let video = labeled_video();
        let cfg = GConfig::default();
        let ds = build_mapping_dataset(&[video], &dummy_pseudo(2), None, &cfg, 0, 1e-3).unwrap();
        let names = cfg.column_names();
        for row in &ds.rows {
            for (name, &v) in names.iter().zip(row) {
                if name == "sigma" || name.ends_with("_s_mean") {
                    assert_eq!(v, 1e-3, "{name}");
                } else if name.ends_with("_s_std") {
                    assert_eq!(v, 0.0, "{name}");
                }
            }
        }
    }

    #[test]
    fn mapping_dataset_interchange_writes_csv_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let ds = identity_dataset(5);
        let path = dir.path().join("dt.csv");
        save_mapping_dataset(&path, &ds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("y_hat,sigma,"));
        assert!(header.ends_with(",target"));
        assert_eq!(text.lines().count(), 6);
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("dt.json")).unwrap())
                .unwrap();
        assert_eq!(sidecar["au_index"], 0);
    }
}
