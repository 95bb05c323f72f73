use std::path::{Path, PathBuf};

use hierfuse_core::data::PaddedBatch;
use hierfuse_core::gradcheck::TensorError;
use hierfuse_core::model::{build_model, ModelConfig};
use hierfuse_core::synth::{probe_videos, synth_generate, SynthSpec};
use hierfuse_core::tape::Fault;
use hierfuse_core::train::{check_gradients_with_fault, evaluate, train_observed, EpochRecord, Executor};

use crate::config::{fit_model_to_data, GradcheckConfig, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{
    load_dataset, load_model, read_json, save_dataset, save_model, write_history, write_json, MetricsReport,
};

pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

fn report(cfg: &ModelConfig, metrics: hierfuse_core::metrics::Metrics) -> MetricsReport {
    MetricsReport {
        variant: cfg.variant.to_string(),
        modalities: cfg.modalities.to_string(),
        plain_baseline: cfg.is_plain_baseline(),
        best_epoch: None,
        epochs_run: None,
        metrics,
    }
}

/// Trains and evaluates one configuration and writes its artifacts.
pub fn run<E: Executor>(
    cfg: &RunConfig,
    exec: &E,
    progress: impl FnMut(&EpochRecord),
) -> Result<MetricsReport> {
    let (train_set, test_set) = cfg.datasets()?;
    let mut model = cfg.model.clone();
    fit_model_to_data(&mut model, &train_set, &test_set)?;
    let params = build_model(&model)?;
    let outcome = train_observed(params, &model, &train_set, &cfg.train, exec, progress)?;
    let metrics = evaluate(&outcome.params, &model, &test_set, exec)?;

    let mut rep = report(&model, metrics);
    rep.best_epoch = Some(outcome.best_epoch);
    rep.epochs_run = Some(outcome.history.len());
    save_model(&outcome.params, &model, &cfg.output.join(MODEL_FILE))?;
    write_history(&outcome.history, &cfg.output.join(HISTORY_FILE))?;
    write_json(&cfg.output.join(METRICS_FILE), &rep)?;
    Ok(rep)
}

pub struct GradcheckReport {
    pub errors: Vec<TensorError>,
    pub tolerance: f64,
}

impl GradcheckReport {
    /// Tensors whose max relative error reaches the tolerance.
    pub fn failures(&self) -> Vec<String> {
        self.errors
            .iter()
            .filter(|e| !(e.max_relative_error < self.tolerance))
            .map(|e| e.name.clone())
            .collect()
    }
}

/// Backward pass against central differences on random probe videos drawn
/// from the model seed.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let model = &cfg.model;
    let g = &cfg.gradcheck;
    let params = build_model(model)?;
    let videos = probe_videos(model, g.videos, model.seed)?;
    let refs: Vec<&PaddedBatch> = videos.iter().collect();
    let fault = g.corrupt_backward.then_some(Fault::TanhGrad);
    let errors = check_gradients_with_fault(&params, model, &refs, g.epsilon, fault)?;
    Ok(GradcheckReport {
        errors,
        tolerance: g.tolerance,
    })
}

/// Writes `train.jsonl` and `test.jsonl` (plus manifests) into `out`.
pub fn synth(spec_path: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let spec: SynthSpec = read_json(spec_path, CliError::Config)?;
    let (train_set, test_set) = synth_generate(&spec).map_err(CliError::config)?;
    let (train_path, test_path) = (out.join("train.jsonl"), out.join("test.jsonl"));
    save_dataset(&train_set, &train_path)?;
    save_dataset(&test_set, &test_path)?;
    Ok((train_path, test_path))
}

/// Scores a saved model on a dataset file.
pub fn eval<E: Executor>(model_path: &Path, data_path: &Path, exec: &E) -> Result<MetricsReport> {
    let (params, mut cfg) = load_model(model_path)?;
    let data = load_dataset(data_path)?;
    for m in cfg.modalities.iter() {
        if data.dims.get(&m) != Some(&cfg.input_dim(m)) {
            return Err(CliError::Data(format!(
                "{}: modality {m} width does not match the model ({})",
                data_path.display(),
                cfg.input_dim(m)
            )));
        }
    }
    if data.num_classes != cfg.num_classes {
        return Err(CliError::Data(format!(
            "{}: C = {} but the model has {} classes",
            data_path.display(),
            data.num_classes,
            cfg.num_classes
        )));
    }
    // padding length only; outputs for real utterances do not depend on it
    cfg.max_utterances = cfg.max_utterances.max(data.max_utterances());
    let metrics = evaluate(&params, &cfg, &data, exec)?;
    Ok(report(&cfg, metrics))
}
