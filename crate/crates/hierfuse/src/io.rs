//! On-disk formats: JSON Lines datasets with a sidecar manifest, model JSON,
//! training history and metrics reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hierfuse_core::data::{Dataset, VideoSample};
use hierfuse_core::gradcheck::ParamSet;
use hierfuse_core::metrics::Metrics;
use hierfuse_core::model::{validate_params, zero_model, Modality, ModelConfig, ModelParams};
use hierfuse_core::train::EpochRecord;
use hierfuse_core::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub dims: BTreeMap<Modality, usize>,
    pub n_videos: usize,
}

/// `data/train.jsonl` → `data/train.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
        _ => CliError::Data(format!("{}: {e}", path.display())),
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
}

/// Parses a whole JSON document. `bad` classifies parse failures.
pub fn read_json<T: DeserializeOwned>(path: &Path, bad: fn(String) -> CliError) -> Result<T> {
    let text = std::io::read_to_string(open(path)?).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    write_all(path, text.as_bytes())
}

/// Loads a JSONL dataset and checks it against its manifest.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = open(path)?;
    let manifest: Manifest = read_json(&manifest_path(path), CliError::Data)?;
    let mut videos = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let video: VideoSample = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        videos.push(video);
    }
    if videos.len() != manifest.n_videos {
        return Err(CliError::Data(format!(
            "{}: manifest declares {} videos, file holds {}",
            path.display(),
            manifest.n_videos,
            videos.len()
        )));
    }
    let data = Dataset {
        videos,
        dims: manifest.dims,
        num_classes: manifest.num_classes,
    };
    data.validate().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(data)
}

/// Writes `data` as JSON Lines plus its sidecar manifest.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut text = String::new();
    for v in &data.videos {
        text.push_str(&serde_json::to_string(v).map_err(CliError::runtime)?);
        text.push('\n');
    }
    write_all(path, text.as_bytes())?;
    let manifest = Manifest {
        num_classes: data.num_classes,
        dims: data.dims.clone(),
        n_videos: data.videos.len(),
    };
    write_json(&manifest_path(path), &manifest)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    config: ModelConfig,
    params: BTreeMap<String, Matrix>,
}

pub fn save_model(params: &ModelParams, cfg: &ModelConfig, path: &Path) -> Result<()> {
    let file = ModelFile {
        config: cfg.clone(),
        params: params.tensors().into_iter().map(|(n, m)| (n, m.clone())).collect(),
    };
    write_json(path, &file)
}

/// Loads a model, checking every tensor name and shape against its config.
pub fn load_model(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let file: ModelFile = read_json(path, CliError::Data)?;
    file.config.validate().map_err(|e| bad(e.to_string()))?;
    let mut params = zero_model(&file.config).map_err(|e| bad(e.to_string()))?;
    let mut stored = file.params;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let m = stored.remove(name).ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
        if m.shape() != slot.shape() {
            return Err(bad(format!(
                "tensor `{name}` has shape {:?}, config implies {:?}",
                m.shape(),
                slot.shape()
            )));
        }
        *slot = m;
    }
    if let Some(extra) = stored.keys().next() {
        return Err(bad(format!("unexpected tensor `{extra}`")));
    }
    validate_params(&params, &file.config).map_err(|e| bad(e.to_string()))?;
    Ok((params, file.config))
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r).map_err(CliError::runtime)?);
        text.push('\n');
    }
    write_all(path, text.as_bytes())
}

/// What `run` and `eval` report about a scored model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub modalities: String,
    /// Set for variants that reduce to a dense softmax on raw features.
    pub plain_baseline: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
    #[serde(flatten)]
    pub metrics: Metrics,
}
