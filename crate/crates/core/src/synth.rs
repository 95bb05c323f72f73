//! Synthetic multimodal utterance data.
//!
//! Each (modality, class) pair owns a random unit-length prototype. An
//! utterance of class `c` carries, per modality, `strength · prototype[m][c]`
//! plus isotropic Gaussian noise. With probability `conflict_fraction` one
//! randomly chosen modality shows the prototype of a different class instead,
//! so that modalities disagree.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{pad_video, Dataset, PaddedBatch, Utterance, VideoSample};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Modality};

fn default_dims() -> BTreeMap<Modality, usize> {
    [(Modality::T, 50), (Modality::A, 64), (Modality::V, 30)].into_iter().collect()
}

fn default_strength() -> BTreeMap<Modality, f64> {
    Modality::ALL.into_iter().map(|m| (m, 2.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub utterances_per_video: usize,
    pub dims: BTreeMap<Modality, usize>,
    pub num_classes: usize,
    pub strength: BTreeMap<Modality, f64>,
    pub noise_std: f64,
    pub conflict_fraction: f64,
    /// Speakers per split. Train and test speakers never overlap.
    pub n_speakers: usize,
    /// Probability that an utterance repeats the previous utterance's label
    /// instead of drawing a fresh uniform one. Zero gives i.i.d. labels.
    pub label_persistence: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 200,
            n_test: 60,
            utterances_per_video: 10,
            dims: default_dims(),
            num_classes: 2,
            strength: default_strength(),
            noise_std: 1.0,
            conflict_fraction: 0.0,
            n_speakers: 10,
            label_persistence: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("synthetic spec: {msg}")));
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        if self.utterances_per_video == 0 {
            return bad("utterances_per_video must be positive");
        }
        if self.dims.is_empty() || self.dims.values().any(|&d| d == 0) {
            return bad("dims must name at least one modality with positive width");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        for m in self.dims.keys() {
            match self.strength.get(m) {
                Some(s) if *s >= 0.0 && s.is_finite() => {}
                Some(_) => return bad("strengths must be finite and non-negative"),
                None => return Err(Error::config(format!("synthetic spec: no strength for modality {m}"))),
            }
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be positive");
        }
        if !(0.0..=1.0).contains(&self.conflict_fraction) {
            return bad("conflict_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.label_persistence) {
            return bad("label_persistence must lie in [0, 1]");
        }
        if self.n_speakers == 0 {
            return bad("n_speakers must be positive");
        }
        Ok(())
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws the train and test sets described by `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: BTreeMap<Modality, Vec<Vec<f64>>> = spec
        .dims
        .iter()
        .map(|(&m, &d)| (m, (0..spec.num_classes).map(|_| unit_vector(d, &mut rng)).collect()))
        .collect();
    let modalities: Vec<Modality> = spec.dims.keys().copied().collect();

    let make_split = |count: usize, tag: &str, rng: &mut ChaCha8Rng| {
        let videos = (0..count)
            .map(|i| {
                let mut label = rng.random_range(0..spec.num_classes);
                let utterances = (0..spec.utterances_per_video)
                    .map(|t| {
                        if t > 0 && !(rng.random::<f64>() < spec.label_persistence) {
                            label = rng.random_range(0..spec.num_classes);
                        }
                        let conflicted = if rng.random::<f64>() < spec.conflict_fraction {
                            let m = modalities[rng.random_range(0..modalities.len())];
                            let other = (label + rng.random_range(1..spec.num_classes)) % spec.num_classes;
                            Some((m, other))
                        } else {
                            None
                        };
                        let features = modalities
                            .iter()
                            .map(|&m| {
                                let shown = match conflicted {
                                    Some((cm, other)) if cm == m => other,
                                    _ => label,
                                };
                                let s = spec.strength[&m];
                                let f = prototypes[&m][shown]
                                    .iter()
                                    .map(|&p| {
                                        let n: f64 = StandardNormal.sample(rng);
                                        s * p + spec.noise_std * n
                                    })
                                    .collect();
                                (m, f)
                            })
                            .collect();
                        Utterance { label, features }
                    })
                    .collect();
                VideoSample {
                    video_id: format!("{tag}-{i:05}"),
                    speaker_id: format!("{tag}-spk{:03}", i % spec.n_speakers),
                    utterances,
                }
            })
            .collect();
        Dataset {
            videos,
            dims: spec.dims.clone(),
            num_classes: spec.num_classes,
        }
    };
    let train = make_split(spec.n_train, "train", &mut rng);
    let test = make_split(spec.n_test, "test", &mut rng);
    Ok((train, test))
}

/// Random standard-normal videos shaped for `cfg`, padded to
/// `cfg.max_utterances`. Video `i` keeps `N − (i mod N)` real utterances so
/// that padding is exercised whenever `count > 1`.
pub fn probe_videos(cfg: &ModelConfig, count: usize, seed: u64) -> Result<Vec<PaddedBatch>> {
    cfg.validate()?;
    let n = cfg.max_utterances;
    let dims: BTreeMap<Modality, usize> = cfg.modalities.iter().map(|m| (m, cfg.input_dim(m))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let len = n - (i % n);
            let utterances = (0..len)
                .map(|_| Utterance {
                    label: rng.random_range(0..cfg.num_classes),
                    features: dims
                        .iter()
                        .map(|(&m, &d)| (m, (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()))
                        .collect(),
                })
                .collect();
            let video = VideoSample {
                video_id: format!("probe-{i}"),
                speaker_id: format!("probe-{i}"),
                utterances,
            };
            pad_video(&video, n, &dims)
        })
        .collect()
}
