use hierfuse_core::data::{split_speaker_disjoint, Dataset, Utterance, VideoSample};
use hierfuse_core::model::{build_model, Modality, ModalitySet, ModelConfig, Variant};
use hierfuse_core::synth::{synth_generate, SynthSpec};
use hierfuse_core::train::{evaluate, train, Sequential, TrainConfig};

fn unimodal_probe(spec: &SynthSpec, m: Modality) -> (f64, f64) {
    let (train_set, test_set) = synth_generate(spec).unwrap();
    let mut cfg = ModelConfig::new(Variant::Hfusion, ModalitySet::new(&[m]).unwrap(), &[(m, spec.dims[&m])]);
    cfg.max_utterances = spec.utterances_per_video;
    assert!(cfg.is_plain_baseline());
    let tc = TrainConfig {
        max_epochs: 60,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let out = train(build_model(&cfg).unwrap(), &cfg, &train_set, &tc, &Sequential).unwrap();
    let on_train = evaluate(&out.params, &cfg, &train_set, &Sequential).unwrap().accuracy;
    let on_test = evaluate(&out.params, &cfg, &test_set, &Sequential).unwrap().accuracy;
    (on_train, on_test)
}

#[test]
fn strong_signal_is_linearly_separable() {
    let mut strength = SynthSpec::default().strength;
    strength.values_mut().for_each(|s| *s = 8.0);
    let spec = SynthSpec {
        n_train: 60,
        strength,
        seed: 4,
        ..SynthSpec::default()
    };
    for m in Modality::ALL {
        let (on_train, _) = unimodal_probe(&spec, m);
        assert!(on_train >= 0.99, "{m}: {on_train}");
    }
}

#[test]
fn no_signal_means_chance() {
    let mut strength = SynthSpec::default().strength;
    strength.values_mut().for_each(|s| *s = 0.0);
    let spec = SynthSpec {
        n_train: 60,
        n_test: 200,
        strength,
        seed: 5,
        ..SynthSpec::default()
    };
    let (_, on_test) = unimodal_probe(&spec, Modality::T);
    // 2000 test utterances: chance is 0.5 with standard error ~0.011
    assert!((on_test - 0.5).abs() < 0.06, "{on_test}");
}

#[test]
fn generation_is_deterministic_and_valid() {
    let spec = SynthSpec {
        conflict_fraction: 0.3,
        ..SynthSpec::default()
    };
    let a = synth_generate(&spec).unwrap();
    let b = synth_generate(&spec).unwrap();
    assert_eq!(a, b);
    a.0.validate().unwrap();
    a.1.validate().unwrap();
    assert_eq!(a.0.videos.len(), 200);
    assert_eq!(a.1.videos.len(), 60);
    assert!(a.0.videos.iter().all(|v| v.utterances.len() == 10));
}

#[test]
fn speaker_split_is_reproducible() {
    let videos: Vec<VideoSample> = (0..100)
        .map(|i| VideoSample {
            video_id: format!("v{i:03}"),
            speaker_id: format!("s{}", i % 10),
            utterances: vec![Utterance {
                label: 0,
                features: [(Modality::A, vec![1.0])].into_iter().collect(),
            }],
        })
        .collect();
    let data = Dataset {
        videos,
        dims: [(Modality::A, 1)].into_iter().collect(),
        num_classes: 2,
    };
    let (train_a, test_a) = split_speaker_disjoint(&data, 0.3, 17).unwrap();
    let (train_b, test_b) = split_speaker_disjoint(&data, 0.3, 17).unwrap();
    assert_eq!((&train_a, &test_a), (&train_b, &test_b));
    assert_eq!(test_a.speakers().len(), 3);
    assert_eq!(test_a.videos.len(), 30);
    assert!(train_a.speakers().is_disjoint(&test_a.speakers()));

    let two = data.with_videos(data.videos.iter().filter(|v| v.speaker_id == "s0" || v.speaker_id == "s1").cloned().collect());
    let (tr, te) = split_speaker_disjoint(&two, 0.5, 0).unwrap();
    assert_eq!((tr.speakers().len(), te.speakers().len()), (1, 1));

    let one = data.with_videos(data.videos.iter().filter(|v| v.speaker_id == "s0").cloned().collect());
    assert!(split_speaker_disjoint(&one, 0.5, 0).is_err());
}
