mod common;

use rand::Rng;

use ionreadout::baselines::{
    brute_force_posterior, hmm_loglik, ml_classify, HmmModel, ENUMERATION_LIMIT,
};
use ionreadout::physics::{PhysicsParams, State};
use ionreadout::rng::rng_from;

fn random_model(rng: &mut impl Rng) -> HmmModel {
    HmmModel {
        lambda_bright: rng.gen_range(0.5..6.0),
        lambda_dark: rng.gen_range(0.0..1.0),
        p_bd: rng.gen_range(0.0..0.3),
        p_db: rng.gen_range(0.0..0.3),
        prior_bright: rng.gen_range(0.05..0.95),
    }
}

#[test]
fn forward_matches_enumeration_on_random_instances() {
    let worst = common::oracle_gap(1000, 12, 2024);
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn enumeration_refuses_long_sequences() {
    let m = HmmModel::from_params(&PhysicsParams::default()).unwrap();
    assert!(brute_force_posterior(&[1; ENUMERATION_LIMIT + 1], &m).is_err());
}

/// Every count vector of `len` entries in `0..=bound`.
fn for_each_vector(len: usize, bound: u32, mut f: impl FnMut(&[u32])) {
    let mut v = vec![0u32; len];
    loop {
        f(&v);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            if v[i] < bound {
                v[i] += 1;
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn likelihood_mass_is_normalized() {
    let m = HmmModel {
        lambda_bright: 2.1,
        lambda_dark: 0.03,
        p_bd: 0.05,
        p_db: 0.02,
        prior_bright: 0.5,
    };
    for initial in [State::Bright, State::Dark] {
        for len in 1..=4 {
            let mut small = 0.0;
            for_each_vector(len, 4, |c| small += hmm_loglik(c, &m, initial).exp());
            assert!(small <= 1.0 + 1e-12, "{small}");
        }
        let mut full = 0.0;
        for_each_vector(4, 30, |c| full += hmm_loglik(c, &m, initial).exp());
        assert!((full - 1.0).abs() < 1e-6, "{initial}: {full}");
    }
}

#[test]
fn flip_free_ml_is_a_sum_threshold() {
    let p = PhysicsParams::default().without_flips();
    let m = HmmModel::from_params(&p).unwrap().with_prior(0.3);
    let n = p.n_sub_bins as f64;
    // Log-likelihood ratio s*ln(lb/ld) - n*(lb - ld) + prior log-odds > 0.
    let (lb, ld) = (m.lambda_bright, m.lambda_dark);
    let slope = (lb / ld).ln();
    let offset = -n * (lb - ld) + (0.3f64 / 0.7).ln();
    let t_star = (0..=60u32).find(|&s| f64::from(s) * slope + offset > 0.0).unwrap();
    let mut rng = rng_from(5);
    for s in 0..=60u32 {
        for _ in 0..5 {
            let mut counts = vec![0u32; p.n_sub_bins];
            for _ in 0..s {
                counts[rng.gen_range(0..p.n_sub_bins)] += 1;
            }
            let v = ml_classify(&counts, &m);
            assert_eq!(v.state, State::from_bright(s >= t_star), "sum {s}");
        }
    }
}

#[test]
fn verdicts_ignore_common_prior_scale() {
    let mut rng = rng_from(8);
    for _ in 0..200 {
        let m = random_model(&mut rng);
        let counts: Vec<u32> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(0..5)).collect();
        let lb = hmm_loglik(&counts, &m, State::Bright);
        let ld = hmm_loglik(&counts, &m, State::Dark);
        for c in [1e-6, 0.5, 3.0, 1e6] {
            let sb = (c * m.prior_bright).ln() + lb;
            let sd = (c * (1.0 - m.prior_bright)).ln() + ld;
            let scaled = State::from_bright(sb > sd);
            let v = ml_classify(&counts, &m);
            if (v.log_odds).abs() > 1e-9 {
                assert_eq!(scaled, v.state);
            }
        }
    }
}

#[test]
fn symmetric_emissions_make_the_start_irrelevant() {
    let mut rng = rng_from(13);
    for _ in 0..100 {
        let mut m = random_model(&mut rng);
        m.lambda_dark = m.lambda_bright;
        let counts: Vec<u32> = (0..rng.gen_range(1..40)).map(|_| rng.gen_range(0..6)).collect();
        let a = hmm_loglik(&counts, &m, State::Bright);
        let b = hmm_loglik(&counts, &m, State::Dark);
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn long_sequences_stay_finite() {
    let m = HmmModel::from_params(&PhysicsParams::default()).unwrap();
    let counts = vec![40u32; 2000];
    assert!(hmm_loglik(&counts, &m, State::Bright).is_finite());
    assert!(hmm_loglik(&counts, &m, State::Dark).is_finite());
}
