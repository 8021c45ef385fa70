//! Dataset interchange: one annotation CSV (`video_id,frame_index,AU...`,
//! -1 marks invalid), one feature CSV per video (`frame_index,f0,...`), and a
//! JSON manifest recording the generator config for reproducibility.
//!
//! Float columns round-trip exactly: both writer and reader go through the
//! shortest-representation f64 formatting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FrameRecord, Label, SyntheticConfig, VideoSequence};
use crate::error::{Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const FEATURES_DIR: &str = "features";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_FPS: f64 = 30.0;

/// Labels for a set of frames, detached from features. Doubles as the
/// prediction table so predictions diff directly against annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub au_names: Vec<String>,
    pub rows: Vec<LabelRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub video_id: String,
    pub frame_index: u32,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub synthetic: SyntheticConfig,
}

/// Videos plus the schema information carried by the files.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: Vec<VideoSequence>,
    pub au_names: Vec<String>,
    pub fps: f64,
}

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_label_table(path: &Path, table: &LabelTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["video_id".to_string(), "frame_index".to_string()];
    header.extend(table.au_names.iter().cloned());
    wtr.write_record(&header)?;
    for row in &table.rows {
        if row.labels.len() != table.au_names.len() {
            return Err(Error::Schema(format!(
                "row {}/{} has {} labels for {} AU columns",
                row.video_id,
                row.frame_index,
                row.labels.len(),
                table.au_names.len()
            )));
        }
        let mut rec = vec![row.video_id.clone(), row.frame_index.to_string()];
        rec.extend(row.labels.iter().map(|l| l.to_raw().to_string()));
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    atomic_write(path, &bytes)
}

pub fn read_label_table(path: &Path) -> Result<LabelTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "video_id" || &header[1] != "frame_index" {
        return Err(Error::Schema(format!(
            "{}: header must start with video_id,frame_index",
            path.display()
        )));
    }
    let au_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Schema(format!(
                "{}: row width {} != header width {}",
                path.display(),
                record.len(),
                header.len()
            )));
        }
        let frame_index: u32 = record[1]
            .parse()
            .map_err(|_| Error::Schema(format!("bad frame_index {:?}", &record[1])))?;
        let labels = record
            .iter()
            .skip(2)
            .map(|cell| {
                let raw: i64 = cell
                    .parse()
                    .map_err(|_| Error::Schema(format!("non-integer label {cell:?}")))?;
                Label::from_raw(raw)
            })
            .collect::<Result<Vec<Label>>>()?;
        rows.push(LabelRow {
            video_id: record[0].to_string(),
            frame_index,
            labels,
        });
    }
    Ok(LabelTable { au_names, rows })
}

fn feature_path(features_dir: &Path, video_id: &str) -> PathBuf {
    features_dir.join(format!("{video_id}.csv"))
}

fn write_features(path: &Path, frames: &[FrameRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let dim = frames.first().map_or(0, |f| f.features.len());
    let mut header = vec!["frame_index".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    wtr.write_record(&header)?;
    for f in frames {
        let mut rec = vec![f.frame_index.to_string()];
        rec.extend(f.features.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    atomic_write(path, &bytes)
}

fn read_features(path: &Path) -> Result<Vec<(u32, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != "frame_index" {
        return Err(Error::Schema(format!(
            "{}: feature header must start with frame_index",
            path.display()
        )));
    }
    let dim = header.len() - 1;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(Error::Schema(format!(
                "{}: feature row width {} != {}",
                path.display(),
                record.len(),
                dim + 1
            )));
        }
        let frame_index: u32 = record[0]
            .parse()
            .map_err(|_| Error::Schema(format!("bad frame_index {:?}", &record[0])))?;
        let features = record
            .iter()
            .skip(1)
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|_| Error::Schema(format!("non-numeric feature {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((frame_index, features));
    }
    Ok(rows)
}

/// Writes a dataset directory: annotations, per-video features, and (when
/// given) the generator manifest.
pub fn save_dataset(
    dir: &Path,
    videos: &[VideoSequence],
    au_names: &[String],
    manifest: Option<&DatasetManifest>,
) -> Result<()> {
    fs::create_dir_all(dir.join(FEATURES_DIR)).map_err(|e| Error::io(dir, e))?;

    let mut rows = Vec::new();
    for video in videos {
        for f in &video.frames {
            if f.labels.len() != au_names.len() {
                return Err(Error::Schema(format!(
                    "video {}: {} labels per frame but {} AU names",
                    video.video_id,
                    f.labels.len(),
                    au_names.len()
                )));
            }
            rows.push(LabelRow {
                video_id: f.video_id.clone(),
                frame_index: f.frame_index,
                labels: f.labels.clone(),
            });
        }
        write_features(&feature_path(&dir.join(FEATURES_DIR), &video.video_id), &video.frames)?;
    }
    write_label_table(
        &dir.join(ANNOTATIONS_FILE),
        &LabelTable {
            au_names: au_names.to_vec(),
            rows,
        },
    )?;
    if let Some(manifest) = manifest {
        let json = serde_json::to_vec_pretty(manifest)?;
        atomic_write(&dir.join(MANIFEST_FILE), &json)?;
    }
    Ok(())
}

/// Joins an annotation CSV with per-video feature CSVs into sequences.
/// Invalid-label frames are retained; they are excluded later by pair
/// construction and metric computation.
pub fn load_annotations(annotation_path: &Path, features_dir: &Path, fps: f64) -> Result<Dataset> {
    let table = read_label_table(annotation_path)?;

    let mut by_video: BTreeMap<String, Vec<LabelRow>> = BTreeMap::new();
    for row in table.rows {
        by_video.entry(row.video_id.clone()).or_default().push(row);
    }

    let mut videos = Vec::with_capacity(by_video.len());
    let mut dim: Option<usize> = None;
    for (video_id, mut rows) in by_video {
        rows.sort_by_key(|r| r.frame_index);
        let path = feature_path(features_dir, &video_id);
        if !path.exists() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing feature file"),
            ));
        }
        let feats = read_features(&path)?;
        let feat_map: BTreeMap<u32, Vec<f64>> = feats.into_iter().collect();

        let mut frames = Vec::with_capacity(rows.len());
        for row in rows {
            let features = feat_map.get(&row.frame_index).ok_or_else(|| {
                Error::Schema(format!(
                    "video {video_id}: frame {} annotated but missing from {}",
                    row.frame_index,
                    path.display()
                ))
            })?;
            match dim {
                None => dim = Some(features.len()),
                Some(d) if d != features.len() => {
                    return Err(Error::Schema(format!(
                        "video {video_id} frame {}: feature dim {} != dataset dim {d}",
                        row.frame_index,
                        features.len()
                    )))
                }
                _ => {}
            }
            frames.push(FrameRecord {
                video_id: video_id.clone(),
                frame_index: row.frame_index,
                features: features.clone(),
                labels: row.labels,
                occluded: None,
                latent: None,
            });
        }
        videos.push(VideoSequence::new(video_id, frames, fps)?);
    }

    if videos.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} contains no frames",
            annotation_path.display()
        )));
    }
    Ok(Dataset {
        videos,
        au_names: table.au_names,
        fps,
    })
}

/// Loads a dataset directory, taking fps from the manifest when present.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let fps = match read_manifest(dir)? {
        Some(manifest) => manifest.synthetic.frames_per_second,
        None => DEFAULT_FPS,
    };
    load_annotations(&dir.join(ANNOTATIONS_FILE), &dir.join(FEATURES_DIR), fps)
}

pub fn read_manifest(dir: &Path) -> Result<Option<DatasetManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_slice(&bytes)?))
}

/// Loads feature CSVs only (no annotations required), for prediction input.
/// Returns videos sorted by id; an empty directory yields an empty list.
pub fn load_features_only(dir: &Path, fps: f64) -> Result<Vec<VideoSequence>> {
    let features_dir = dir.join(FEATURES_DIR);
    if !features_dir.exists() {
        return Err(Error::io(
            &features_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing features directory"),
        ));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&features_dir)
        .map_err(|e| Error::io(&features_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();

    let mut videos = Vec::with_capacity(paths.len());
    for path in paths {
        let video_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Schema(format!("bad feature file name {}", path.display())))?
            .to_string();
        let frames = read_features(&path)?
            .into_iter()
            .map(|(frame_index, features)| FrameRecord {
                video_id: video_id.clone(),
                frame_index,
                features,
                labels: Vec::new(),
                occluded: None,
                latent: None,
            })
            .collect();
        videos.push(VideoSequence::new(video_id, frames, fps)?);
    }
    Ok(videos)
}
