//! One check per acceptance criterion. Each prints a PASS or FAIL line with
//! the measured quantities, then asserts.

use std::fs;
use std::time::Instant;

use hierfuse::commands::{self, GradcheckReport};
use hierfuse::config::{DataConfig, GradcheckConfig, GradcheckSettings, RunConfig};
use hierfuse::io::{load_dataset, save_dataset};
use hierfuse_core::data::{pad_video, Dataset, PaddedBatch, Utterance, VideoSample};
use hierfuse_core::gradcheck::ParamSet;
use hierfuse_core::layers::{bimodal_fuse, gru_forward, trimodal_fuse, PairFusion, PaperGru, TripleFusion};
use hierfuse_core::model::{build_model, forward, param_count, zero_model, Modality, ModalitySet, ModelConfig, Variant};
use hierfuse_core::synth::{probe_videos, synth_generate, SynthSpec};
use hierfuse_core::train::{batch_gradient, cross_entropy, evaluate, evaluate_batches, train, Sequential, TrainConfig};
use hierfuse_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, what: &str, ok: bool, detail: String) {
    println!("{} criterion {n} ({what}): {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({what}): {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rows: usize, cols: usize, scale: f64, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// d = (6, 5, 4), D_ctx = (5, 5, 5), D = 8, D2 = 10, D3 = 12, C = 2, N = 4.
fn tiny(variant: Variant, set: ModalitySet) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, set, &[(Modality::T, 6), (Modality::A, 5), (Modality::V, 4)]);
    cfg.context_dims = Modality::ALL.into_iter().map(|m| (m, 5)).collect();
    cfg.shared_dim = 8;
    cfg.bimodal_dim = 10;
    cfg.trimodal_dim = 12;
    cfg.num_classes = 2;
    cfg.max_utterances = 4;
    cfg
}

fn every_model() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for variant in [Variant::Chfusion, Variant::Hfusion, Variant::Early] {
        for set in ModalitySet::all_subsets() {
            out.push(tiny(variant, set));
        }
    }
    let mut early_ctx = tiny(Variant::Early, ModalitySet::TAV);
    early_ctx.early_context = true;
    out.push(early_ctx);
    out
}

fn label(cfg: &ModelConfig) -> String {
    format!("{} {}{}", cfg.variant, cfg.modalities, if cfg.early_context { "+ctx" } else { "" })
}

#[test]
fn c1_gradient_correctness() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for model in every_model() {
        let cfg = GradcheckConfig {
            model: model.clone(),
            gradcheck: GradcheckSettings::default(),
        };
        assert_eq!((cfg.gradcheck.epsilon, cfg.gradcheck.tolerance), (1e-5, 1e-4));
        let report: GradcheckReport = commands::gradcheck(&cfg).unwrap();
        for e in &report.errors {
            worst = worst.max(e.max_relative_error);
            if !(e.max_relative_error < 1e-4) {
                failures.push(format!(
                    "{} {} rel {:.2e} abs {:.2e}",
                    label(&model),
                    e.name,
                    e.max_relative_error,
                    e.max_abs_error
                ));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 120.0;
    verdict(
        1,
        "gradient correctness",
        ok,
        format!(
            "{} models, worst max rel err {worst:.2e}, {secs:.1}s; failing tensors: [{}]",
            every_model().len(),
            failures.join("; ")
        ),
    );
}

fn vec_mat(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols()).map(|j| (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum()).collect()
}

fn gru_loop(f: &Matrix, p: &PaperGru) -> Matrix {
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let hidden = p.w_z.rows();
    let mut s = vec![0.0; hidden];
    let mut out = Matrix::zeros(f.rows(), hidden);
    for t in 0..f.rows() {
        let x = f.row(t);
        let (xz, sz) = (vec_mat(x, &p.u_z), vec_mat(&s, &p.w_z));
        let (xr, sr) = (vec_mat(x, &p.u_r), vec_mat(&s, &p.w_r));
        let z: Vec<f64> = (0..hidden).map(|l| logistic(xz[l] + sz[l])).collect();
        let r: Vec<f64> = (0..hidden).map(|l| logistic(xr[l] + sr[l])).collect();
        let gated: Vec<f64> = (0..hidden).map(|l| s[l] * r[l]).collect();
        let (xh, sh) = (vec_mat(x, &p.u_h), vec_mat(&gated, &p.w_h));
        let h: Vec<f64> = (0..hidden).map(|l| (xh[l] + sh[l]).tanh()).collect();
        let proj = vec_mat(&h, &p.u_x);
        for l in 0..hidden {
            let ft = (proj[l] + p.b_x.get(0, l)).tanh();
            out.set(t, l, ft);
            s[l] = (1.0 - z[l]) * ft + z[l] * s[l];
        }
    }
    out
}

fn max_gap(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn c2_oracle_equivalence() {
    const INSTANCES: usize = 100;
    let mut r = rng(2);
    let mut worst = [0.0f64; 4];
    for _ in 0..INSTANCES {
        let (n, k, m) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..9));
        let (a, b) = (uniform(n, k, 3.0, &mut r), uniform(k, m, 3.0, &mut r));
        let mut want = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                want.set(i, j, (0..k).map(|t| a.get(i, t) * b.get(t, j)).sum());
            }
        }
        worst[0] = worst[0].max(max_gap(&a.matmul(&b).unwrap(), &want));

        let (d, h) = (r.random_range(1..7), r.random_range(1..7));
        let p = PaperGru {
            u_z: uniform(d, h, 1.0, &mut r),
            u_r: uniform(d, h, 1.0, &mut r),
            u_h: uniform(d, h, 1.0, &mut r),
            w_z: uniform(h, h, 1.0, &mut r),
            w_r: uniform(h, h, 1.0, &mut r),
            w_h: uniform(h, h, 1.0, &mut r),
            u_x: uniform(h, h, 1.0, &mut r),
            b_x: uniform(1, h, 1.0, &mut r),
        };
        let f = uniform(n, d, 2.0, &mut r);
        worst[1] = worst[1].max(max_gap(&gru_forward(&f, &p, None).unwrap(), &gru_loop(&f, &p)));

        let w = r.random_range(1..9);
        let g: Vec<Matrix> = (0..3).map(|_| uniform(n, w, 2.0, &mut r)).collect();
        let pair = PairFusion {
            w1: uniform(1, w, 1.0, &mut r),
            w2: uniform(1, w, 1.0, &mut r),
            b: uniform(1, w, 1.0, &mut r),
        };
        let triple = TripleFusion {
            w1: uniform(1, w, 1.0, &mut r),
            w2: uniform(1, w, 1.0, &mut r),
            w3: uniform(1, w, 1.0, &mut r),
            b: uniform(1, w, 1.0, &mut r),
        };
        let (mut want2, mut want3) = (Matrix::zeros(n, w), Matrix::zeros(n, w));
        for t in 0..n {
            for l in 0..w {
                let z2 = pair.w1.get(0, l) * g[0].get(t, l) + pair.w2.get(0, l) * g[1].get(t, l) + pair.b.get(0, l);
                want2.set(t, l, z2.tanh());
                let z3 = triple.w1.get(0, l) * g[0].get(t, l)
                    + triple.w2.get(0, l) * g[1].get(t, l)
                    + triple.w3.get(0, l) * g[2].get(t, l)
                    + triple.b.get(0, l);
                want3.set(t, l, z3.tanh());
            }
        }
        worst[2] = worst[2].max(max_gap(&bimodal_fuse(&g[0], &g[1], &pair).unwrap(), &want2));
        worst[3] = worst[3].max(max_gap(&trimodal_fuse(&g[0], &g[1], &g[2], &triple).unwrap(), &want3));
    }
    let ok = worst.iter().all(|&w| w <= 1e-12);
    verdict(
        2,
        "oracle equivalence",
        ok,
        format!(
            "{INSTANCES} instances each; max |diff| matmul {:.1e}, gru {:.1e}, bimodal {:.1e}, trimodal {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

#[test]
fn c3_masking_invariance() {
    let (mut loss_gap, mut grad_gap, mut metric_mismatches) = (0.0f64, 0.0f64, 0);
    let models = every_model();
    for cfg in &models {
        let videos = probe_videos(cfg, 3, 11).unwrap();
        let refs: Vec<&PaddedBatch> = videos.iter().collect();
        let params = build_model(cfg).unwrap();
        let (loss, grads) = batch_gradient(&params, cfg, &refs, &Sequential).unwrap();
        let metrics = evaluate_batches(&params, cfg, &refs, &Sequential).unwrap();

        let mut wide = cfg.clone();
        wide.max_utterances = cfg.max_utterances + 3;
        let dims = cfg.modalities.iter().map(|m| (m, cfg.input_dim(m))).collect();
        let mut padded: Vec<PaddedBatch> =
            videos.iter().map(|v| pad_video(&v.unpad(), wide.max_utterances, &dims).unwrap()).collect();
        padded.insert(1, PaddedBatch::all_padding("blank-a", &dims, wide.max_utterances));
        padded.push(PaddedBatch::all_padding("blank-b", &dims, wide.max_utterances));
        let refs: Vec<&PaddedBatch> = padded.iter().collect();
        let (loss2, grads2) = batch_gradient(&params, &wide, &refs, &Sequential).unwrap();
        let metrics2 = evaluate_batches(&params, &wide, &refs, &Sequential).unwrap();

        loss_gap = loss_gap.max((loss - loss2).abs());
        for ((_, a), (_, b)) in grads.tensors().iter().zip(grads2.tensors()) {
            grad_gap = grad_gap.max(max_gap(a, b));
        }
        let m = serde_json::to_value(&metrics).unwrap();
        let m2 = serde_json::to_value(&metrics2).unwrap();
        let fields_close = m.as_object().unwrap().iter().all(|(k, v)| match (v.as_f64(), m2[k].as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            _ => *v == m2[k],
        });
        if !fields_close {
            metric_mismatches += 1;
        }
    }
    let ok = loss_gap < 1e-12 && grad_gap < 1e-12 && metric_mismatches == 0;
    verdict(
        3,
        "masking invariance",
        ok,
        format!(
            "{} models; max loss diff {loss_gap:.1e}, max grad diff {grad_gap:.1e}, metric mismatches {metric_mismatches}",
            models.len()
        ),
    );
}

#[test]
fn c4_degenerate_identities() {
    let mut r = rng(4);
    let mut notes = Vec::new();

    let zero_gru = gru_forward(&uniform(6, 4, 10.0, &mut r), &PaperGru::zeros(4, 3), None).unwrap();
    let zero_ok = zero_gru.data().iter().all(|&v| v == 0.0);
    notes.push(format!("zero GRU max |out| {:.1e}", zero_gru.max_abs()));

    let mut uniform_ok = true;
    for c in [2usize, 3, 6] {
        let mut cfg = tiny(Variant::Chfusion, ModalitySet::TAV);
        cfg.num_classes = c;
        let params = zero_model(&cfg).unwrap();
        let video = &probe_videos(&cfg, 1, 5).unwrap()[0];
        let out = forward(&params, &cfg, &video.features, &video.mask).unwrap();
        let spread = out.probs.data().iter().map(|p| (p - 1.0 / c as f64).abs()).fold(0.0, f64::max);
        let loss = cross_entropy(&out.probs, &video.labels, &video.mask).unwrap();
        let loss_gap = (loss - (c as f64).ln()).abs();
        uniform_ok &= spread < 1e-15 && loss_gap < 1e-12;
        notes.push(format!("C={c}: max |p - 1/C| {spread:.1e}, |loss - ln C| {loss_gap:.1e}"));
    }

    let mut single_ok = true;
    for _ in 0..20 {
        let mut p = PaperGru::zeros(3, 4);
        for m in [&mut p.u_h, &mut p.u_x, &mut p.b_x] {
            *m = uniform(m.rows(), m.cols(), 1.0, &mut r);
        }
        let f = uniform(1, 3, 1.0, &mut r);
        let base = gru_forward(&f, &p, None).unwrap();
        let mut q = p.clone();
        q.u_z = uniform(3, 4, 5.0, &mut r);
        q.u_r = uniform(3, 4, 5.0, &mut r);
        q.w_z = uniform(4, 4, 5.0, &mut r);
        q.w_r = uniform(4, 4, 5.0, &mut r);
        q.w_h = uniform(4, 4, 5.0, &mut r);
        single_ok &= gru_forward(&f, &q, None).unwrap() == base;
    }
    notes.push("N=1 output unchanged under 20 gate/state perturbations".into());

    verdict(4, "degenerate identities", zero_ok && uniform_ok && single_ok, notes.join("; "));
}

fn synth_model(variant: Variant, spec: &SynthSpec, seed: u64) -> ModelConfig {
    let dims: Vec<(Modality, usize)> = spec.dims.iter().map(|(m, d)| (*m, *d)).collect();
    let mut cfg = ModelConfig::new(variant, ModalitySet::TAV, &dims);
    // small widths keep these runs at desk scale on a single core
    cfg.shared_dim = 16;
    cfg.bimodal_dim = 16;
    cfg.trimodal_dim = 16;
    cfg.num_classes = spec.num_classes;
    cfg.max_utterances = spec.utterances_per_video;
    cfg.seed = seed;
    cfg
}

fn test_accuracy(variant: Variant, spec: &SynthSpec, seed: u64) -> f64 {
    let (train_set, test_set) = synth_generate(spec).unwrap();
    let cfg = synth_model(variant, spec, seed);
    let tc = TrainConfig {
        max_epochs: 50,
        seed,
        ..TrainConfig::default()
    };
    let out = train(build_model(&cfg).unwrap(), &cfg, &train_set, &tc, &Sequential).unwrap();
    evaluate(&out.params, &cfg, &test_set, &Sequential).unwrap().accuracy
}

#[test]
fn c5_learnability() {
    let start = Instant::now();
    let accs: Vec<f64> = (0..3u64)
        .map(|seed| {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            test_accuracy(Variant::Chfusion, &spec, seed)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = accs.iter().all(|&a| a >= 0.95) && secs < 600.0;
    verdict(5, "learnability", ok, format!("chfusion TAV test accuracy per seed {accs:.4?}, {secs:.1}s"));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn c6_fusion_ordering() {
    let mut per_variant = Vec::new();
    for variant in [Variant::Early, Variant::Hfusion, Variant::Chfusion] {
        let accs: Vec<f64> = (0..5u64)
            .map(|seed| {
                let spec = SynthSpec {
                    seed,
                    conflict_fraction: 0.3,
                    ..SynthSpec::default()
                };
                test_accuracy(variant, &spec, seed)
            })
            .collect();
        per_variant.push((variant, median(accs.clone()), accs));
    }
    let (early, hfusion, chfusion) = (per_variant[0].1, per_variant[1].1, per_variant[2].1);
    let detail = per_variant
        .iter()
        .map(|(v, med, accs)| format!("{v} median {med:.4} of {accs:.4?}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(6, "hfusion >= early and chfusion >= hfusion", hfusion >= early && chfusion >= hfusion, detail);
}

#[test]
fn c7_parameter_accounting() {
    let mut r = rng(7);
    let variants = [Variant::Early, Variant::Hfusion, Variant::Chfusion];
    let subsets = ModalitySet::all_subsets();
    let mut mismatches = Vec::new();
    for i in 0..20 {
        let dims: Vec<(Modality, usize)> = Modality::ALL.into_iter().map(|m| (m, r.random_range(1..9))).collect();
        let variant = variants[i % 3];
        let mut cfg = ModelConfig::new(variant, subsets[i % subsets.len()], &dims);
        cfg.context_dims = Modality::ALL.into_iter().map(|m| (m, r.random_range(1..7))).collect();
        cfg.shared_dim = r.random_range(1..9);
        cfg.bimodal_dim = r.random_range(1..9);
        cfg.trimodal_dim = r.random_range(1..9);
        cfg.num_classes = r.random_range(2..5);
        cfg.max_utterances = 3;
        cfg.early_context = variant == Variant::Early && r.random_bool(0.5);
        let allocated: usize = build_model(&cfg).unwrap().tensors().iter().map(|(_, m)| m.len()).sum();
        let counted = param_count(&cfg).unwrap();
        if counted != allocated {
            mismatches.push(format!("{}: {counted} vs {allocated}", label(&cfg)));
        }
    }
    verdict(7, "parameter accounting", mismatches.is_empty(), format!("20 configs, mismatches: {mismatches:?}"));
}

#[test]
fn c8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_train: 40,
        n_test: 12,
        utterances_per_video: 6,
        dims: [(Modality::T, 8), (Modality::A, 6), (Modality::V, 5)].into_iter().collect(),
        n_speakers: 6,
        conflict_fraction: 0.3,
        seed: 8,
        ..SynthSpec::default()
    };
    let run_into = |name: &str| {
        let mut model = ModelConfig::new(Variant::Chfusion, ModalitySet::TAV, &[]);
        model.shared_dim = 8;
        model.bimodal_dim = 8;
        model.trimodal_dim = 8;
        let cfg = RunConfig {
            model,
            train: TrainConfig {
                max_epochs: 5,
                ..TrainConfig::default()
            },
            data: DataConfig {
                train: None,
                test: None,
                synth: Some(spec.clone()),
                test_fraction: 0.2,
            },
            output: dir.path().join(name),
        };
        commands::run(&cfg, &Sequential, |_| {}).unwrap();
        fs::read(cfg.output.join(commands::METRICS_FILE)).unwrap()
    };
    let (a, b) = (run_into("first"), run_into("second"));
    verdict(8, "determinism", a == b, format!("metrics files of {} and {} bytes, identical: {}", a.len(), b.len(), a == b));
}

#[test]
fn c9_paper_dims_ingestion() {
    let dims: Vec<(Modality, usize)> = vec![(Modality::T, 500), (Modality::A, 6392), (Modality::V, 300)];
    let mut r = rng(9);
    let videos: Vec<VideoSample> = (0..3)
        .map(|v| VideoSample {
            video_id: format!("video-{v}"),
            speaker_id: format!("speaker-{v}"),
            utterances: (0..2 + v)
                .map(|u| Utterance {
                    label: u % 2,
                    features: dims
                        .iter()
                        .map(|&(m, d)| (m, (0..d).map(|_| r.random_range(-1.0..1.0)).collect()))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let data = Dataset {
        videos,
        dims: dims.iter().copied().collect(),
        num_classes: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("paper-dims.jsonl");
    save_dataset(&data, &path).unwrap();
    let loaded = load_dataset(&path).unwrap();

    let mut cfg = ModelConfig::new(Variant::Chfusion, ModalitySet::TAV, &dims);
    cfg.max_utterances = loaded.max_utterances();
    let params = build_model(&cfg).unwrap();
    let mut forwards = 0;
    let mut finite = true;
    for video in loaded.padded(cfg.max_utterances).unwrap() {
        let out = forward(&params, &cfg, &video.features, &video.mask).unwrap();
        finite &= out.probs.is_finite();
        forwards += 1;
    }
    let ok = loaded == data && forwards == data.videos.len() && finite;
    verdict(
        9,
        "paper-dimension ingestion",
        ok,
        format!(
            "dims T=500 A=6392 V=300, {} videos loaded, {forwards} forward passes, {} parameters, finite outputs: {finite}",
            loaded.videos.len(),
            param_count(&cfg).unwrap()
        ),
    );
}
