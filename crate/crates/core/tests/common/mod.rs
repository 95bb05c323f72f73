#![allow(dead_code)]

use hierfuse_core::model::{Modality, ModalitySet, ModelConfig, Variant};
use hierfuse_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[-scale, scale)`.
pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    uniform(rows, cols, 1.0, rng)
}

/// d = (6, 5, 4), D_ctx = 5, D = 8, D2 = 10, D3 = 12, N = 4.
pub fn tiny(variant: Variant, set: ModalitySet, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, set, &[(Modality::T, 6), (Modality::A, 5), (Modality::V, 4)]);
    cfg.context_dims = Modality::ALL.into_iter().map(|m| (m, 5)).collect();
    cfg.shared_dim = 8;
    cfg.bimodal_dim = 10;
    cfg.trimodal_dim = 12;
    cfg.max_utterances = 4;
    cfg.seed = seed;
    cfg
}

/// Every variant over every subset, plus early fusion with its context GRU.
pub fn all_configs(seed: u64) -> Vec<ModelConfig> {
    let mut early = tiny(Variant::Early, ModalitySet::TAV, seed);
    early.early_context = true;
    let mut out = vec![early];
    for variant in [Variant::Early, Variant::Hfusion, Variant::Chfusion] {
        for set in ModalitySet::all_subsets() {
            out.push(tiny(variant, set, seed));
        }
    }
    out
}
