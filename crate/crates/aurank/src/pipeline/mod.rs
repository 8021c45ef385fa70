//! Operator surface behind the CLI: dataset generation, staged training with
//! file-presence resume, multi-seed trial selection, prediction, evaluation,
//! and the P1/P2 ablation.
//!
//! Stage order is pseudo -> uncertainty (frozen pseudo-intensities) ->
//! mapping. A stage retrains when its artifact is missing or any earlier
//! stage retrained this run, so deleting only stage-N artifacts reruns
//! exactly stages >= N. All artifacts are written atomically; reports embed
//! the config hash and dataset manifest hash.

pub mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io::{
    load_dataset, load_features_only, read_label_table, read_manifest, save_dataset,
    write_label_table, DatasetManifest, LabelRow, LabelTable, ANNOTATIONS_FILE, DEFAULT_FPS,
    MANIFEST_FILE,
};
use crate::data::{
    binarize_labels, build_pair_dataset, split_by_video, stable_seed, Label, PairSamplerConfig,
    SyntheticConfig, VideoSequence,
};
use crate::error::{Error, Result};
use crate::eval::{score_occurrence, MetricReport};
use crate::mapping::{
    build_mapping_dataset, predict_labels, train_mapping, GConfig, MappingModel, TargetKind,
};
use crate::pseudo_intensity::{train_pseudo, PseudoIntensityModel, TrainConfig};
use crate::uncertainty::{train_uncertainty, ExpandedRankingLoss, LossForm, UncertaintyModel};
use store::{file_hash, load_model, save_curve, save_json, save_model, sha256_hex};

/// P1 adopts the uncertainty model for every AU; P2 only where the config
/// flags it on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    P1,
    P2,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1" | "P1" => Ok(Mode::P1),
            "p2" | "P2" => Ok(Mode::P2),
            other => Err(Error::InvalidConfig(format!("mode must be p1 or p2, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::P1 => write!(f, "p1"),
            Mode::P2 => write!(f, "p2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub models_dir: PathBuf,
    pub reports_dir: PathBuf,
    /// AU columns to train/score; empty means every column in the annotation
    /// header.
    pub au_names: Vec<String>,
    /// Per-AU uncertainty adoption in P2 mode; AUs not listed default to on.
    pub use_uncertainty: BTreeMap<String, bool>,
    pub target_kind: TargetKind,
    pub margin: f64,
    pub sigma_floor: f64,
    pub loss_form: LossForm,
    pub decision_threshold: f64,
    pub pseudo_hidden: Vec<usize>,
    /// Defaults to the pseudo-intensity backbone dimensions.
    pub uncertainty_hidden: Option<Vec<usize>>,
    pub mapping_hidden: Vec<usize>,
    pub pseudo_train: TrainConfig,
    pub uncertainty_train: TrainConfig,
    pub mapping_train: TrainConfig,
    pub pair_sampler: PairSamplerConfig,
    pub g_config: GConfig,
    /// Trial seeds; the best validation score wins, ties to the lower seed.
    pub seeds: Vec<u64>,
    pub validation_fraction: f64,
    pub split_seed: u64,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            models_dir: PathBuf::from("models"),
            reports_dir: PathBuf::from("reports"),
            au_names: Vec::new(),
            use_uncertainty: BTreeMap::new(),
            target_kind: TargetKind::Occurrence,
            margin: 1.0,
            sigma_floor: 1e-3,
            loss_form: LossForm::Corrected,
            decision_threshold: 0.5,
            pseudo_hidden: vec![32, 16],
            uncertainty_hidden: None,
            mapping_hidden: vec![64, 32],
            pseudo_train: TrainConfig {
                epochs: 40,
                learning_rate: 3e-3,
                ..Default::default()
            },
            uncertainty_train: TrainConfig {
                epochs: 30,
                learning_rate: 3e-3,
                ..Default::default()
            },
            mapping_train: TrainConfig {
                epochs: 200,
                batch_size: 64,
                learning_rate: 3e-3,
                ..Default::default()
            },
            pair_sampler: PairSamplerConfig::default(),
            g_config: GConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            validation_fraction: 0.2,
            split_seed: 42,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list must be non-empty".to_string()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig("margin must be positive".to_string()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma_floor must be positive".to_string()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "decision_threshold must lie in (0, 1)".to_string(),
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "validation_fraction must lie in (0, 1)".to_string(),
            ));
        }
        self.pair_sampler.validate()?;
        self.g_config.validate()?;
        self.pseudo_train.validate()?;
        self.uncertainty_train.validate()?;
        self.mapping_train.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    /// Hash of the canonical JSON form; embedded in every artifact.
    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn uncertainty_enabled(&self, mode: Mode, au_name: &str) -> bool {
        match mode {
            Mode::P1 => true,
            Mode::P2 => *self.use_uncertainty.get(au_name).unwrap_or(&true),
        }
    }

    fn uncertainty_hidden(&self) -> &[usize] {
        self.uncertainty_hidden.as_deref().unwrap_or(&self.pseudo_hidden)
    }

    fn expanded_loss(&self) -> Result<ExpandedRankingLoss> {
        ExpandedRankingLoss::new(self.margin, self.sigma_floor, self.loss_form)
    }

    /// Variant that trains into `trial_<seed>` with stage seeds derived from
    /// the trial seed.
    pub fn for_trial(&self, seed: u64) -> RunConfig {
        let mut cfg = self.clone();
        cfg.models_dir = self.models_dir.join(format!("trial_{seed}"));
        cfg.pair_sampler.seed = seed;
        cfg.pseudo_train.seed = stable_seed(seed, "trial/pseudo");
        cfg.uncertainty_train.seed = stable_seed(seed, "trial/uncertainty");
        cfg.mapping_train.seed = stable_seed(seed, "trial/mapping");
        cfg
    }
}

/// Loads a config file and applies the path-only environment overrides
/// (`AURANK_DATA_DIR`, `AURANK_MODELS_DIR`, `AURANK_REPORTS_DIR`).
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: RunConfig = serde_json::from_slice(&bytes)?;
    if let Ok(dir) = std::env::var("AURANK_DATA_DIR") {
        cfg.data_dir = PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("AURANK_MODELS_DIR") {
        cfg.models_dir = PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("AURANK_REPORTS_DIR") {
        cfg.reports_dir = PathBuf::from(dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub data_dir: PathBuf,
    pub videos: usize,
    pub frames: usize,
    pub dataset_manifest_hash: String,
}

/// Writes the synthetic dataset plus its manifest.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let videos = crate::data::generate_synthetic(&cfg.synthetic)?;
    let au_names = if cfg.au_names.len() == cfg.synthetic.num_aus {
        cfg.au_names.clone()
    } else {
        (1..=cfg.synthetic.num_aus).map(|i| format!("AU{i}")).collect()
    };
    let manifest = DatasetManifest {
        format_version: 1,
        synthetic: cfg.synthetic.clone(),
    };
    save_dataset(&cfg.data_dir, &videos, &au_names, Some(&manifest))?;
    Ok(GenerateSummary {
        data_dir: cfg.data_dir.clone(),
        videos: videos.len(),
        frames: videos.iter().map(|v| v.len()).sum(),
        dataset_manifest_hash: file_hash(&cfg.data_dir.join(MANIFEST_FILE))?,
    })
}

/// Dataset loaded once per command: labels already adapted to the target
/// kind, AU list resolved against the annotation header.
pub struct PreparedData {
    pub train: Vec<VideoSequence>,
    pub validation: Vec<VideoSequence>,
    /// (name, column index in the annotation schema)
    pub aus: Vec<(String, usize)>,
    pub dataset_hash: String,
    pub fps: f64,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let dataset = load_dataset(&cfg.data_dir)?;
    let mut videos = dataset.videos;
    if cfg.target_kind == TargetKind::Occurrence {
        binarize_labels(&mut videos);
    }

    let names: Vec<String> = if cfg.au_names.is_empty() {
        dataset.au_names.clone()
    } else {
        cfg.au_names.clone()
    };
    let aus = names
        .into_iter()
        .map(|name| {
            dataset
                .au_names
                .iter()
                .position(|n| *n == name)
                .map(|idx| (name.clone(), idx))
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("AU {name} not present in the annotation header"))
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest_path = cfg.data_dir.join(MANIFEST_FILE);
    let dataset_hash = if manifest_path.exists() {
        file_hash(&manifest_path)?
    } else {
        file_hash(&cfg.data_dir.join(ANNOTATIONS_FILE))?
    };

    let (train, validation) =
        split_by_video(videos, cfg.validation_fraction, cfg.split_seed)?;
    Ok(PreparedData {
        train,
        validation,
        aus,
        dataset_hash,
        fps: dataset.fps,
    })
}

fn au_dir(models_dir: &Path, au_name: &str) -> PathBuf {
    models_dir.join(format!("au_{au_name}"))
}

fn pseudo_path(models_dir: &Path, au: &str) -> PathBuf {
    au_dir(models_dir, au).join("pseudo.json")
}

fn uncertainty_path(models_dir: &Path, au: &str) -> PathBuf {
    au_dir(models_dir, au).join("uncertainty.json")
}

fn mapping_path(models_dir: &Path, au: &str) -> PathBuf {
    au_dir(models_dir, au).join("mapping.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuTrainOutcome {
    pub au: String,
    pub pseudo_retrained: bool,
    /// None when the stage is skipped for this AU (P2 with the flag off).
    pub uncertainty_retrained: Option<bool>,
    pub mapping_retrained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub config_hash: String,
    pub dataset_manifest_hash: String,
    pub models_dir: PathBuf,
    pub aus: Vec<AuTrainOutcome>,
}

/// Trains all stages for all AUs into `cfg.models_dir`, resuming from
/// completed stage artifacts.
pub fn cmd_train(cfg: &RunConfig, mode: Mode) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    train_into(cfg, mode, &data)
}

fn train_into(cfg: &RunConfig, mode: Mode, data: &PreparedData) -> Result<TrainSummary> {
    let config_hash = cfg.config_hash();
    std::fs::create_dir_all(&cfg.models_dir).map_err(|e| Error::io(&cfg.models_dir, e))?;
    save_json(&cfg.models_dir.join("config.json"), cfg)?;

    let aus = data
        .aus
        .par_iter()
        .map(|(name, au_index)| train_one_au(cfg, mode, data, name, *au_index, &config_hash))
        .collect::<Result<Vec<_>>>()?;

    Ok(TrainSummary {
        mode,
        config_hash,
        dataset_manifest_hash: data.dataset_hash.clone(),
        models_dir: cfg.models_dir.clone(),
        aus,
    })
}

fn train_one_au(
    cfg: &RunConfig,
    mode: Mode,
    data: &PreparedData,
    au_name: &str,
    au_index: usize,
    config_hash: &str,
) -> Result<AuTrainOutcome> {
    let dir = au_dir(&cfg.models_dir, au_name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let lazy_pairs = || build_pair_dataset(&data.train, au_index, &cfg.pair_sampler);

    // Stage 1: pseudo-intensity
    let p_path = pseudo_path(&cfg.models_dir, au_name);
    let (pseudo, pseudo_retrained) = if p_path.exists() {
        let envelope = load_model::<PseudoIntensityModel>(&p_path)?;
        (envelope.model, false)
    } else {
        let pairs = lazy_pairs()?;
        let val_pairs = build_pair_dataset(&data.validation, au_index, &cfg.pair_sampler).ok();
        let model = train_pseudo(
            &pairs,
            &data.train,
            au_index,
            &cfg.pseudo_hidden,
            cfg.margin,
            &cfg.pseudo_train,
            val_pairs.as_deref().map(|p| (p, data.validation.as_slice())),
        )?;
        save_model(&p_path, &model, &data.dataset_hash, config_hash)?;
        save_curve(&dir.join("pseudo_curve.csv"), &model.meta.epoch_loss)?;
        (model, true)
    };

    // Stage 2: uncertainty, only where adopted
    let enabled = cfg.uncertainty_enabled(mode, au_name);
    let u_path = uncertainty_path(&cfg.models_dir, au_name);
    let (uncertainty, uncertainty_retrained) = if !enabled {
        (None, None)
    } else {
        let reusable = if pseudo_retrained || !u_path.exists() {
            None
        } else {
            // a stale artifact (different frozen model) is retrained rather
            // than trusted
            let envelope = load_model::<UncertaintyModel>(&u_path)?;
            (envelope.model.frozen_model_ref == pseudo.content_hash()).then_some(envelope.model)
        };
        match reusable {
            Some(model) => (Some(model), Some(false)),
            None => {
                let pairs = lazy_pairs()?;
                let model = train_uncertainty(
                    &pairs,
                    &data.train,
                    &pseudo,
                    cfg.uncertainty_hidden(),
                    cfg.expanded_loss()?,
                    &cfg.uncertainty_train,
                )?;
                save_model(&u_path, &model, &data.dataset_hash, config_hash)?;
                save_curve(&dir.join("uncertainty_curve.csv"), &model.meta.epoch_loss)?;
                (Some(model), Some(true))
            }
        }
    };

    // Stage 3: mapping
    let m_path = mapping_path(&cfg.models_dir, au_name);
    let upstream_retrained = pseudo_retrained || uncertainty_retrained == Some(true);
    let mapping_retrained = if m_path.exists() && !upstream_retrained {
        false
    } else {
        let dataset = build_mapping_dataset(
            &data.train,
            &pseudo,
            uncertainty.as_ref(),
            &cfg.g_config,
            au_index,
            cfg.sigma_floor,
        )?;
        let model = train_mapping(
            &dataset,
            &cfg.mapping_hidden,
            cfg.target_kind,
            cfg.decision_threshold,
            &cfg.mapping_train,
        )?;
        save_model(&m_path, &model, &data.dataset_hash, config_hash)?;
        save_curve(&dir.join("mapping_curve.csv"), &model.meta.epoch_loss)?;
        true
    };

    Ok(AuTrainOutcome {
        au: au_name.to_string(),
        pseudo_retrained,
        uncertainty_retrained,
        mapping_retrained,
    })
}

/// One AU's loaded three-stage pipeline.
pub struct AuPipeline {
    pub au_name: String,
    pub pseudo: PseudoIntensityModel,
    pub uncertainty: Option<UncertaintyModel>,
    pub mapping: MappingModel,
}

/// Loads trained models for prediction, enforcing the pairing and
/// configuration contracts: the uncertainty model must reference the exact
/// pseudo model on disk, and the mapping model's extractor snapshot must
/// match the run configuration.
pub fn load_pipelines(cfg: &RunConfig, mode: Mode, models_dir: &Path) -> Result<Vec<AuPipeline>> {
    let au_names: Vec<String> = if cfg.au_names.is_empty() {
        list_trained_aus(models_dir)?
    } else {
        cfg.au_names.clone()
    };
    if au_names.is_empty() {
        return Err(Error::MissingStage(format!(
            "no trained AU directories under {}",
            models_dir.display()
        )));
    }

    au_names
        .into_iter()
        .map(|au_name| {
            let pseudo = load_model::<PseudoIntensityModel>(&pseudo_path(models_dir, &au_name))?.model;
            let uncertainty = if cfg.uncertainty_enabled(mode, &au_name) {
                let model = load_model::<UncertaintyModel>(&uncertainty_path(models_dir, &au_name))?.model;
                if model.frozen_model_ref != pseudo.content_hash() {
                    return Err(Error::MissingStage(format!(
                        "AU {au_name}: uncertainty model references frozen pseudo model {} \
                         but {} is on disk; retrain stage 2",
                        &model.frozen_model_ref[..12.min(model.frozen_model_ref.len())],
                        &pseudo.content_hash()[..12],
                    )));
                }
                Some(model)
            } else {
                None
            };
            let mapping = load_model::<MappingModel>(&mapping_path(models_dir, &au_name))?.model;
            if mapping.g_config != cfg.g_config {
                return Err(Error::InvalidConfig(format!(
                    "AU {au_name}: mapping model was trained with a different feature \
                     extractor configuration than this run supplies"
                )));
            }
            Ok(AuPipeline {
                au_name,
                pseudo,
                uncertainty,
                mapping,
            })
        })
        .collect()
}

fn list_trained_aus(models_dir: &Path) -> Result<Vec<String>> {
    if !models_dir.exists() {
        return Err(Error::MissingStage(format!("{} does not exist", models_dir.display())));
    }
    let mut names: Vec<String> = std::fs::read_dir(models_dir)
        .map_err(|e| Error::io(models_dir, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.strip_prefix("au_").map(str::to_string)
        })
        .collect();
    names.sort();
    Ok(names)
}

/// Per-frame predictions for a set of videos as a label table matching the
/// annotation schema.
pub fn predict_table(
    pipelines: &[AuPipeline],
    videos: &[VideoSequence],
    sigma_floor: f64,
) -> Result<LabelTable> {
    let au_names: Vec<String> = pipelines.iter().map(|p| p.au_name.clone()).collect();
    let mut rows = Vec::new();
    for video in videos {
        let per_au: Vec<Vec<u8>> = pipelines
            .par_iter()
            .map(|p| {
                predict_labels(
                    &p.pseudo,
                    p.uncertainty.as_ref(),
                    &p.mapping,
                    video,
                    sigma_floor,
                )
            })
            .collect::<Result<_>>()?;
        for (f_idx, frame) in video.frames.iter().enumerate() {
            rows.push(LabelRow {
                video_id: video.video_id.clone(),
                frame_index: frame.frame_index,
                labels: per_au.iter().map(|labels| Label::Value(labels[f_idx])).collect(),
            });
        }
    }
    Ok(LabelTable { au_names, rows })
}

/// Ground-truth label table for scoring, restricted to the configured AUs.
pub fn truth_table(videos: &[VideoSequence], aus: &[(String, usize)]) -> LabelTable {
    let mut rows = Vec::new();
    for video in videos {
        for frame in &video.frames {
            rows.push(LabelRow {
                video_id: video.video_id.clone(),
                frame_index: frame.frame_index,
                labels: aus.iter().map(|&(_, idx)| frame.labels[idx]).collect(),
            });
        }
    }
    LabelTable {
        au_names: aus.iter().map(|(name, _)| name.clone()).collect(),
        rows,
    }
}

fn binarize_table(table: &mut LabelTable) {
    for row in &mut table.rows {
        for label in &mut row.labels {
            if let Label::Value(v) = label {
                *v = u8::from(*v > 0);
            }
        }
    }
}

/// Scores a trained model set on the held-out validation videos.
fn validation_report(cfg: &RunConfig, mode: Mode, data: &PreparedData, models_dir: &Path) -> Result<MetricReport> {
    let pipelines = load_pipelines(cfg, mode, models_dir)?;
    let mut predictions = predict_table(&pipelines, &data.validation, cfg.sigma_floor)?;
    let mut truth = truth_table(&data.validation, &data.aus);
    binarize_table(&mut predictions);
    binarize_table(&mut truth);
    let au_list: Vec<String> = data.aus.iter().map(|(name, _)| name.clone()).collect();
    score_occurrence(&predictions, &truth, &au_list)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub competition_metric: f64,
    pub average_f1: f64,
    pub total_accuracy: f64,
    pub models_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialsReport {
    pub mode: Mode,
    pub config_hash: String,
    pub dataset_manifest_hash: String,
    pub trials: Vec<TrialResult>,
    pub best_seed: u64,
}

impl TrialsReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>10} {:>10} {:>10}  best\n",
            "seed", "avg F1", "accuracy", "metric"
        );
        for t in &self.trials {
            out.push_str(&format!(
                "{:<8} {:>10.3} {:>10.3} {:>10.3}  {}\n",
                t.seed,
                t.average_f1,
                t.total_accuracy,
                t.competition_metric,
                if t.seed == self.best_seed { "*" } else { "" }
            ));
        }
        out
    }
}

/// Full training per seed, validation scoring, and argmax selection with
/// ties broken toward the lower seed.
pub fn cmd_trials(cfg: &RunConfig, mode: Mode) -> Result<TrialsReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;

    let mut trials: Vec<TrialResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let trial_cfg = cfg.for_trial(seed);
            train_into(&trial_cfg, mode, &data)?;
            let report = validation_report(&trial_cfg, mode, &data, &trial_cfg.models_dir)?;
            Ok(TrialResult {
                seed,
                competition_metric: report.competition_metric,
                average_f1: report.average_f1,
                total_accuracy: report.total_accuracy,
                models_dir: trial_cfg.models_dir.clone(),
            })
        })
        .collect::<Result<_>>()?;
    trials.sort_by_key(|t| t.seed);

    let best_seed = trials
        .iter()
        .max_by(|a, b| {
            a.competition_metric
                .total_cmp(&b.competition_metric)
                // lower seed wins ties
                .then(b.seed.cmp(&a.seed))
        })
        .expect("non-empty seeds")
        .seed;

    let report = TrialsReport {
        mode,
        config_hash: cfg.config_hash(),
        dataset_manifest_hash: data.dataset_hash.clone(),
        trials,
        best_seed,
    };
    std::fs::create_dir_all(&cfg.reports_dir).map_err(|e| Error::io(&cfg.reports_dir, e))?;
    save_json(&cfg.reports_dir.join(format!("trials_{mode}.json")), &report)?;
    Ok(report)
}

/// Predicts every video found under `input_dir` and writes the predictions
/// CSV. An empty input directory yields a header-only file.
pub fn cmd_predict(cfg: &RunConfig, mode: Mode, input_dir: &Path, output: &Path) -> Result<()> {
    cfg.validate()?;
    let fps = match read_manifest(input_dir)? {
        Some(manifest) => manifest.synthetic.frames_per_second,
        None => DEFAULT_FPS,
    };
    let videos = load_features_only(input_dir, fps)?;
    let pipelines = load_pipelines(cfg, mode, &cfg.models_dir)?;
    let table = predict_table(&pipelines, &videos, cfg.sigma_floor)?;
    write_label_table(output, &table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub dataset_manifest_hash: String,
    pub metrics: MetricReport,
}

/// Scores a predictions CSV against a ground-truth annotation CSV. Both
/// tables are reduced to occurrence (any positive intensity counts as
/// present) before scoring.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    predictions_path: &Path,
    truth_path: &Path,
) -> Result<EvaluationReport> {
    let mut predictions = read_label_table(predictions_path)?;
    let mut truth = read_label_table(truth_path)?;
    binarize_table(&mut predictions);
    binarize_table(&mut truth);

    let au_list: Vec<String> = if cfg.au_names.is_empty() {
        truth.au_names.clone()
    } else {
        cfg.au_names.clone()
    };
    let metrics = score_occurrence(&predictions, &truth, &au_list)?;

    let dataset_manifest_hash = {
        let manifest = truth_path.parent().map(|d| d.join(MANIFEST_FILE));
        match manifest {
            Some(path) if path.exists() => file_hash(&path)?,
            _ => file_hash(truth_path)?,
        }
    };
    let report = EvaluationReport {
        config_hash: cfg.config_hash(),
        dataset_manifest_hash,
        metrics,
    };
    std::fs::create_dir_all(&cfg.reports_dir).map_err(|e| Error::io(&cfg.reports_dir, e))?;
    save_json(&cfg.reports_dir.join("evaluation.json"), &report)?;
    crate::data::io::atomic_write(
        &cfg.reports_dir.join("evaluation.txt"),
        report.metrics.to_table().as_bytes(),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub dataset_manifest_hash: String,
    pub p1: MetricReport,
    pub p2: MetricReport,
}

impl AblationReport {
    /// Side-by-side table; no ordering between P1 and P2 is asserted.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<6} {:>12} {:>16} {:>20}\n",
            "run", "average F1", "total accuracy", "competition metric"
        );
        for (name, r) in [("P1", &self.p1), ("P2", &self.p2)] {
            out.push_str(&format!(
                "{:<6} {:>12.3} {:>16.3} {:>20.3}\n",
                name, r.average_f1, r.total_accuracy, r.competition_metric
            ));
        }
        out
    }
}

/// Trains and scores P1 and P2 on the same corpus and split, emitting a
/// comparison report.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;

    let mut reports = Vec::with_capacity(2);
    for mode in [Mode::P1, Mode::P2] {
        let mut mode_cfg = cfg.clone();
        mode_cfg.models_dir = cfg.models_dir.join(mode.to_string());
        train_into(&mode_cfg, mode, &data)?;
        reports.push(validation_report(&mode_cfg, mode, &data, &mode_cfg.models_dir)?);
    }
    let p2 = reports.pop().unwrap();
    let p1 = reports.pop().unwrap();

    let report = AblationReport {
        config_hash: cfg.config_hash(),
        dataset_manifest_hash: data.dataset_hash.clone(),
        p1,
        p2,
    };
    std::fs::create_dir_all(&cfg.reports_dir).map_err(|e| Error::io(&cfg.reports_dir, e))?;
    save_json(&cfg.reports_dir.join("ablation.json"), &report)?;
    crate::data::io::atomic_write(
        &cfg.reports_dir.join("ablation.txt"),
        report.to_table().as_bytes(),
    )?;
    Ok(report)
}
