mod common;

use rand::Rng;

use ionreadout::baselines::fit_threshold;
use ionreadout::bench::{evaluate_method, wilson_interval, Budget, Method};
use ionreadout::nn::{
    activations, build_cnn, build_fcnn, build_fcnn_onboard, forward_batch, load_weights, train,
    Layer, Model, Parameters, TrainConfig,
};
use ionreadout::physics::DataSplit;
use ionreadout::rng::rng_from;
use ionreadout::{Error, Execution, LabeledDataset, PhotonTrajectory, PhysicsParams, State};

#[test]
fn gradients_match_central_differences() {
    let check = common::gradient_check(30, 1e-5, 77);
    let has = |f: fn(&Layer) -> bool| check.specs.iter().any(|s| s.layers.iter().any(f));
    assert!(has(|l| matches!(l, Layer::Conv1d { .. })));
    assert!(has(|l| matches!(l, Layer::MaxPool1d { .. })));
    assert!(has(|l| matches!(l, Layer::Relu)));
    assert!(check.max_relative_error < 1e-4, "{}", check.max_relative_error);
}

#[test]
fn layer_outputs_have_predicted_extents() {
    let mut rng = rng_from(3);
    for _ in 0..50 {
        let spec = common::random_spec(&mut rng);
        let params = Parameters::glorot(&spec, rng.gen());
        let x: Vec<f64> = (0..spec.input_length).map(|_| rng.gen_range(0.0..5.0)).collect();
        let trace = activations(&spec, &params, &x).unwrap();
        let extents = spec.extents().unwrap();
        assert_eq!(trace.len(), spec.layers.len());
        for (i, out) in trace.iter().enumerate() {
            assert_eq!(out.len(), extents[i + 1].size(), "layer {i} of {spec:?}");
        }
    }
}

#[test]
fn same_convolution_commutes_with_shifts() {
    let spec = build_cnn(16).unwrap();
    let params = Parameters::glorot(&spec, 9);
    let mut rng = rng_from(21);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..4.0)).collect();
    let mut shifted = vec![0.0];
    shifted.extend_from_slice(&x[..15]);
    let a = &activations(&spec, &params, &x).unwrap()[0];
    let b = &activations(&spec, &params, &shifted).unwrap()[0];
    let len = 16;
    for c in 0..16 {
        for i in 1..len - 2 {
            let (p, q) = (b[c * len + i], a[c * len + i - 1]);
            assert!((p - q).abs() < 1e-12, "channel {c} column {i}: {p} vs {q}");
        }
    }
}

#[test]
fn weight_file_round_trip_preserves_predictions() {
    let spec = build_cnn(12).unwrap();
    let model = Model::new(spec.clone(), Parameters::glorot(&spec, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.txt");
    model.save(&path).unwrap();
    let back = load_weights(&path).unwrap();
    let mut rng = rng_from(1);
    let x: Vec<f64> = (0..10_000 * 12).map(|_| f64::from(rng.gen_range(0u32..8))).collect();
    let a = forward_batch(&model.spec, &model.params, &x, Execution::default()).unwrap();
    let b = forward_batch(&back.spec, &back.params, &x, Execution::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_weight_file_is_a_parse_error() {
    let spec = build_fcnn_onboard();
    let model = Model::new(spec.clone(), Parameters::glorot(&spec, 4)).unwrap();
    let text = model.to_document().to_string();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.txt");
    std::fs::write(&path, &text[..text.len() * 2 / 3]).unwrap();
    let err = load_weights(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn wrong_shape_header_names_the_layer() {
    let spec = build_fcnn_onboard();
    let model = Model::new(spec.clone(), Parameters::glorot(&spec, 4)).unwrap();
    let text = model
        .to_document()
        .to_string()
        .replacen("weight.shape = 2 20", "weight.shape = 20 2", 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.txt");
    std::fs::write(&path, text).unwrap();
    match load_weights(&path).unwrap_err() {
        Error::LayerShape { layer, .. } => assert_eq!(layer, 2),
        other => panic!("unexpected error {other}"),
    }
}

fn separable(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = rng_from(seed);
    let trajectories = (0..n)
        .map(|_| {
            let bright = rng.gen_bool(0.5);
            let counts: Vec<u32> = if bright {
                let mut c: Vec<u32> = (0..10).map(|_| rng.gen_range(0..4)).collect();
                while c.iter().sum::<u32>() < 10 {
                    c[rng.gen_range(0..10)] += 1;
                }
                c
            } else {
                vec![0; 10]
            };
            PhotonTrajectory {
                counts,
                hidden_path: None,
                true_label: State::from_bright(bright),
                sub_bin_duration: 30e-6,
                params_fingerprint: 0,
            }
        })
        .collect();
    LabeledDataset {
        trajectories,
        seed,
        class_balance: 0.5,
        first_index: 0,
        n_sub_bins: 10,
        sub_bin_duration: 30e-6,
        params_fingerprint: 0,
    }
}

#[test]
fn separable_toy_is_learned_perfectly() {
    let data = separable(20_000, 1);
    let held = separable(5_000, 2);
    // 20k distinct shots, revisited for ten passes.
    let cfg = TrainConfig {
        total_samples: 200_000,
        ..TrainConfig::default()
    };
    let out = train(&build_fcnn_onboard(), &data, Some(&held), &cfg).unwrap();
    assert_eq!(out.held_out_accuracy, Some(1.0));
}

#[test]
fn training_is_reproducible_across_policies() {
    let data = separable(3_000, 5);
    let spec = build_fcnn(10, 8).unwrap();
    let run = |exec| {
        let cfg = TrainConfig {
            total_samples: 3_000,
            seed: 11,
            exec,
            ..TrainConfig::default()
        };
        train(&spec, &data, None, &cfg).unwrap().model
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Sequential);
    let c = run(Execution::Parallel);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn linear_baseline_clears_the_floor() {
    let params = PhysicsParams::software_preset();
    let split = DataSplit::generate(&params, 50_000, 20_000, 7, Execution::default()).unwrap();
    let budget = Budget {
        n_train: 50_000,
        n_test: 20_000,
        passes: None,
        exec: Execution::default(),
    };
    let eval = evaluate_method(Method::Linear, &params, &split, &budget, 7).unwrap();
    let acc = eval.correct as f64 / eval.n as f64;
    let thr = fit_threshold(&split.train).unwrap();
    assert!(acc >= 0.985, "linear {acc}, threshold {thr:?}");
}

#[test]
fn quadrupling_samples_halves_the_interval() {
    for p in [0.6, 0.9, 0.99] {
        let n = 10_000usize;
        let k = (p * n as f64).round() as usize;
        let (lo1, hi1) = wilson_interval(k, n).unwrap();
        let (lo4, hi4) = wilson_interval(4 * k, 4 * n).unwrap();
        let ratio = (hi1 - lo1) / (hi4 - lo4);
        assert!((ratio - 2.0).abs() <= 0.4, "{p}: {ratio}");
    }
}
