//! JSON documents that drive `run` and `gradcheck`.

use std::path::{Path, PathBuf};

use hierfuse_core::data::{split_speaker_disjoint, Dataset};
use hierfuse_core::gradcheck::DEFAULT_EPSILON;
use hierfuse_core::model::ModelConfig;
use hierfuse_core::synth::{synth_generate, SynthSpec};
use hierfuse_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{load_dataset, read_json};

fn default_test_fraction() -> f64 {
    0.2
}

/// Where training and test data come from: files on disk, or the synthetic
/// generator. Without a test file the training data is split by speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Directory receiving `model.json`, `history.jsonl` and `metrics.json`.
    pub output: PathBuf,
}

/// Relative paths inside a config file are taken relative to that file.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path, CliError::Config)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.train = cfg.data.train.map(|p| resolve(base, &p));
        cfg.data.test = cfg.data.test.map(|p| resolve(base, &p));
        cfg.output = resolve(base, &cfg.output);
        cfg.train.validate().map_err(CliError::config)?;
        Ok(cfg)
    }

    /// Loads or generates `(train, test)`.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        match (&d.train, &d.synth) {
            (Some(_), Some(_)) => Err(CliError::Config("data: give either `train` or `synth`, not both".into())),
            (None, None) => Err(CliError::Config("data: one of `train` or `synth` is required".into())),
            (None, Some(spec)) => {
                if d.test.is_some() {
                    return Err(CliError::Config("data: `test` cannot be combined with `synth`".into()));
                }
                synth_generate(spec).map_err(CliError::config)
            }
            (Some(train_path), None) => {
                let train = load_dataset(train_path)?;
                match &d.test {
                    Some(test_path) => {
                        let test = load_dataset(test_path)?;
                        if test.dims != train.dims || test.num_classes != train.num_classes {
                            return Err(CliError::Data(format!(
                                "{} and {} disagree on dims or class count",
                                train_path.display(),
                                test_path.display()
                            )));
                        }
                        Ok((train, test))
                    }
                    None => split_speaker_disjoint(&train, d.test_fraction, self.train.seed).map_err(CliError::data),
                }
            }
        }
    }
}

/// Fills in the data-dependent parts of `model` (input widths, padded length)
/// and checks the rest against the data.
pub fn fit_model_to_data(model: &mut ModelConfig, train: &Dataset, test: &Dataset) -> Result<()> {
    for m in model.modalities.iter() {
        let Some(&width) = train.dims.get(&m) else {
            return Err(CliError::Config(format!("modality {m} selected but absent from the data")));
        };
        match model.input_dims.get(&m) {
            None => {
                model.input_dims.insert(m, width);
            }
            Some(&w) if w != width => {
                return Err(CliError::Config(format!(
                    "model input dim for {m} is {w}, data has {width}"
                )));
            }
            Some(_) => {}
        }
    }
    if model.num_classes != train.num_classes {
        return Err(CliError::Config(format!(
            "model num_classes is {}, data has C = {}",
            model.num_classes, train.num_classes
        )));
    }
    let longest = train.max_utterances().max(test.max_utterances());
    if model.max_utterances == 0 {
        model.max_utterances = longest;
    } else if model.max_utterances < longest {
        return Err(CliError::Config(format!(
            "max_utterances is {}, but the data has a video with {longest}",
            model.max_utterances
        )));
    }
    model.validate().map_err(CliError::config)
}

fn default_videos() -> usize {
    2
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_tolerance() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSettings {
    /// Random probe videos; video `i` keeps `N − (i mod N)` real utterances.
    #[serde(default = "default_videos")]
    pub videos: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Negative control: perturbs the tanh backward rule so the check must fail.
    #[serde(default)]
    pub corrupt_backward: bool,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            videos: default_videos(),
            epsilon: default_epsilon(),
            tolerance: default_tolerance(),
            corrupt_backward: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub gradcheck: GradcheckSettings,
}

impl GradcheckConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: GradcheckConfig = read_json(path, CliError::Config)?;
        cfg.model.validate().map_err(CliError::config)?;
        let g = &cfg.gradcheck;
        if g.videos == 0 {
            return Err(CliError::Config("gradcheck.videos must be at least 1".into()));
        }
        if !(g.epsilon > 0.0 && g.tolerance > 0.0) {
            return Err(CliError::Config("gradcheck epsilon and tolerance must be positive".into()));
        }
        Ok(cfg)
    }
}
