//! Helpers shared by several integration targets.
#![allow(dead_code)]

use rand::Rng;

use ionreadout::nn::{backward, forward_batch, loss_l1, Layer, NetworkSpec, Parameters};
use ionreadout::rng::rng_from;
use ionreadout::Execution;

/// A small random network mixing every layer kind the backward pass handles.
pub fn random_spec(rng: &mut impl Rng) -> NetworkSpec {
    let length = 4 * rng.gen_range(1..=3);
    let mut layers = Vec::new();
    let mut channels = 1;
    let mut cur = length;
    if rng.gen_bool(0.7) {
        let out = rng.gen_range(1..=3);
        let kernel = [1, 3, 5][rng.gen_range(0..3)];
        layers.push(Layer::Conv1d {
            in_channels: 1,
            out_channels: out,
            kernel,
        });
        channels = out;
        if rng.gen_bool(0.8) {
            layers.push(Layer::Relu);
        }
        if rng.gen_bool(0.7) {
            layers.push(Layer::MaxPool1d { size: 2 });
            cur /= 2;
        }
        layers.push(Layer::Flatten);
    }
    let flat = channels * cur;
    let hidden = rng.gen_range(2..=6);
    layers.push(Layer::Dense {
        inputs: flat,
        outputs: hidden,
    });
    layers.push(Layer::Relu);
    layers.push(Layer::Dense {
        inputs: hidden,
        outputs: 2,
    });
    NetworkSpec::new(length, layers).expect("generated spec is consistent")
}

pub struct GradientCheck {
    pub max_relative_error: f64,
    pub specs: Vec<NetworkSpec>,
}

/// Analytic gradients against central differences with step `eps` over
/// `cases` random (spec, params, batch) triples. Components smaller than
/// `eps` are compared against `eps`, below which rounding in the difference
/// quotient dominates.
pub fn gradient_check(cases: usize, eps: f64, seed: u64) -> GradientCheck {
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    let mut specs = Vec::new();
    for case in 0..cases {
        let spec = random_spec(&mut rng);
        let params = Parameters::glorot(&spec, seed ^ case as u64);
        let batch = rng.gen_range(1..=4);
        let x: Vec<f64> = (0..batch * spec.input_length)
            .map(|_| rng.gen_range(-2.0..3.0))
            .collect();
        let targets: Vec<[f64; 2]> = (0..batch)
            .map(|_| [rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0)])
            .collect();
        let (_, grads) = backward(&spec, &params, &x, &targets, Execution::Sequential).unwrap();
        let analytic = grads.to_flat();
        let base = params.to_flat();
        let loss_at = |theta: &[f64]| {
            let mut p = params.clone();
            p.set_flat(theta);
            let y = forward_batch(&spec, &p, &x, Execution::Sequential).unwrap();
            loss_l1(&y, &targets)
        };
        let mut theta = base.clone();
        for i in 0..base.len() {
            theta[i] = base[i] + eps;
            let up = loss_at(&theta);
            theta[i] = base[i] - eps;
            let down = loss_at(&theta);
            theta[i] = base[i];
            let numeric = (up - down) / (2.0 * eps);
            let scale = analytic[i].abs().max(numeric.abs()).max(eps);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
        specs.push(spec);
    }
    GradientCheck {
        max_relative_error: worst,
        specs,
    }
}

/// Largest `|forward - enumeration|` posterior gap over random short
/// sequences under random models.
pub fn oracle_gap(instances: usize, max_len: usize, seed: u64) -> f64 {
    use ionreadout::baselines::{brute_force_posterior, forward_posterior, HmmModel};
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let m = HmmModel {
            lambda_bright: rng.gen_range(0.5..6.0),
            lambda_dark: rng.gen_range(0.0..1.0),
            p_bd: rng.gen_range(0.0..0.3),
            p_db: rng.gen_range(0.0..0.3),
            prior_bright: rng.gen_range(0.05..0.95),
        };
        let len = rng.gen_range(1..=max_len);
        let counts: Vec<u32> = (0..len).map(|_| rng.gen_range(0..8)).collect();
        let a = forward_posterior(&counts, &m);
        let b = brute_force_posterior(&counts, &m).expect("within enumeration limit");
        worst = worst.max((a - b).abs());
    }
    worst
}
