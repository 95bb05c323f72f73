//! Utterance-level datasets, padding and splitting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Modality;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub label: usize,
    pub features: BTreeMap<Modality, Vec<f64>>,
}

/// One video: an ordered sequence of labelled utterances from one speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoSample {
    pub video_id: String,
    pub speaker_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoSample>,
    /// Feature width per modality; authoritative for every utterance.
    pub dims: BTreeMap<Modality, usize>,
    pub num_classes: usize,
}

impl Dataset {
    /// Checks labels, modality sets and feature widths of every utterance.
    pub fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::contract("dataset has no videos"));
        }
        if self.dims.is_empty() {
            return Err(Error::contract("dataset declares no modalities"));
        }
        if self.num_classes == 0 {
            return Err(Error::contract("dataset declares zero classes"));
        }
        for v in &self.videos {
            if v.utterances.is_empty() {
                return Err(Error::schema(&v.video_id, "video has no utterances"));
            }
            for (i, u) in v.utterances.iter().enumerate() {
                if u.label >= self.num_classes {
                    return Err(Error::schema(
                        &v.video_id,
                        format!("utterance {i}: label {} not below C = {}", u.label, self.num_classes),
                    ));
                }
                if u.features.len() != self.dims.len() || u.features.keys().any(|m| !self.dims.contains_key(m)) {
                    let got: String = u.features.keys().map(|m| m.letter()).collect();
                    let want: String = self.dims.keys().map(|m| m.letter()).collect();
                    return Err(Error::schema(
                        &v.video_id,
                        format!("utterance {i}: modalities {got}, expected {want}"),
                    ));
                }
                for (m, f) in &u.features {
                    if f.len() != self.dims[m] {
                        return Err(Error::schema(
                            &v.video_id,
                            format!("utterance {i}: {m} width {} but dims say {}", f.len(), self.dims[m]),
                        ));
                    }
                    if f.iter().any(|x| !x.is_finite()) {
                        return Err(Error::schema(&v.video_id, format!("utterance {i}: non-finite {m} feature")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn max_utterances(&self) -> usize {
        self.videos.iter().map(|v| v.utterances.len()).max().unwrap_or(0)
    }

    pub fn n_utterances(&self) -> usize {
        self.videos.iter().map(|v| v.utterances.len()).sum()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.videos.iter().map(|v| v.speaker_id.as_str()).collect()
    }

    /// A dataset with the same schema holding `videos`.
    pub fn with_videos(&self, videos: Vec<VideoSample>) -> Dataset {
        Dataset {
            videos,
            dims: self.dims.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Every video padded to `n` utterances.
    pub fn padded(&self, n: usize) -> Result<Vec<PaddedBatch>> {
        self.videos.iter().map(|v| pad_video(v, n, &self.dims)).collect()
    }
}

/// One video padded to a fixed utterance count.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub video_id: String,
    pub speaker_id: String,
    /// `N × d_m` per modality; padded rows are zero.
    pub features: BTreeMap<Modality, Matrix>,
    /// Padded positions carry label 0.
    pub labels: Vec<usize>,
    /// `true` for the real-utterance prefix, `false` for padding.
    pub mask: Vec<bool>,
}

impl PaddedBatch {
    /// A video made entirely of padding.
    pub fn all_padding(video_id: &str, dims: &BTreeMap<Modality, usize>, n: usize) -> Self {
        PaddedBatch {
            video_id: video_id.into(),
            speaker_id: String::new(),
            features: dims.iter().map(|(&m, &d)| (m, Matrix::zeros(n, d))).collect(),
            labels: alloc::vec![0; n],
            mask: alloc::vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Drops masked-out rows and rebuilds the video.
    pub fn unpad(&self) -> VideoSample {
        let utterances = (0..self.len())
            .filter(|&t| self.mask[t])
            .map(|t| Utterance {
                label: self.labels[t],
                features: self.features.iter().map(|(&m, f)| (m, f.row(t).to_vec())).collect(),
            })
            .collect();
        VideoSample {
            video_id: self.video_id.clone(),
            speaker_id: self.speaker_id.clone(),
            utterances,
        }
    }
}

/// Pads `video` with zero "dummy" utterances up to `n`.
pub fn pad_video(video: &VideoSample, n: usize, dims: &BTreeMap<Modality, usize>) -> Result<PaddedBatch> {
    let len = video.utterances.len();
    if len == 0 {
        return Err(Error::contract(format!("video `{}` has no utterances", video.video_id)));
    }
    if len > n {
        return Err(Error::contract(format!(
            "video `{}` has {len} utterances, more than the padded length {n}",
            video.video_id
        )));
    }
    let mut features = BTreeMap::new();
    for (&m, &d) in dims {
        let mut mat = Matrix::zeros(n, d);
        for (t, u) in video.utterances.iter().enumerate() {
            let f = u
                .features
                .get(&m)
                .ok_or_else(|| Error::schema(&video.video_id, format!("utterance {t} lacks modality {m}")))?;
            if f.len() != d {
                return Err(Error::schema(
                    &video.video_id,
                    format!("utterance {t}: {m} width {} but dims say {d}", f.len()),
                ));
            }
            mat.row_mut(t).copy_from_slice(f);
        }
        features.insert(m, mat);
    }
    let mut labels: Vec<usize> = video.utterances.iter().map(|u| u.label).collect();
    labels.resize(n, 0);
    let mut mask = alloc::vec![true; len];
    mask.resize(n, false);
    Ok(PaddedBatch {
        video_id: video.video_id.clone(),
        speaker_id: video.speaker_id.clone(),
        features,
        labels,
        mask,
    })
}

/// Partitions videos so that no speaker appears on both sides. Speakers are
/// shuffled by `seed` and moved to the test side until it holds at least
/// `test_fraction` of the videos (never all speakers).
pub fn split_speaker_disjoint(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut speakers: Vec<&str> = data.speakers().into_iter().collect();
    if speakers.len() < 2 {
        return Err(Error::contract("speaker-disjoint split needs at least two speakers"));
    }
    let mut per_speaker: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &data.videos {
        *per_speaker.entry(v.speaker_id.as_str()).or_default() += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    speakers.shuffle(&mut rng);

    let target = test_fraction * data.videos.len() as f64;
    let mut test_speakers = BTreeSet::new();
    let mut taken = 0usize;
    for s in &speakers[..speakers.len() - 1] {
        if taken as f64 >= target {
            break;
        }
        test_speakers.insert(*s);
        taken += per_speaker[s];
    }
    let (test, train): (Vec<VideoSample>, Vec<VideoSample>) = data
        .videos
        .iter()
        .cloned()
        .partition(|v| test_speakers.contains(v.speaker_id.as_str()));
    Ok((data.with_videos(train), data.with_videos(test)))
}

/// Shuffles video indices by `seed` and returns `(train, validation)` index
/// lists with `ceil(fraction · n)` validation videos (at least one, at most n−1).
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::contract("need at least two videos to hold out a validation set"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("validation fraction {fraction} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = (libm::ceil(fraction * n as f64) as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}
