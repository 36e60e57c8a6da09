//! Two-state hidden Markov model with Poisson emissions.
//!
//! The likelihood of a count sequence given the initial state is evaluated
//! by the forward recursion in log space. `brute_force_posterior` enumerates
//! every hidden path in probability space and serves as an independent check
//! on short sequences.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::kv::{Document, Section};
use crate::physics::{transition_probs, PhysicsParams, State};

/// Longest sequence `brute_force_posterior` will enumerate.
pub const ENUMERATION_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmModel {
    /// Mean counts per sub-bin while bright.
    pub lambda_bright: f64,
    /// Mean counts per sub-bin while dark.
    pub lambda_dark: f64,
    pub p_bd: f64,
    pub p_db: f64,
    pub prior_bright: f64,
}

impl HmmModel {
    pub fn from_params(params: &PhysicsParams) -> Result<Self> {
        params.validate()?;
        let (lambda_bright, lambda_dark) = params.mean_counts_per_bin()?;
        let (p_bd, p_db) = transition_probs(params);
        Ok(Self {
            lambda_bright,
            lambda_dark,
            p_bd,
            p_db,
            prior_bright: 0.5,
        })
    }

    pub fn with_prior(mut self, prior_bright: f64) -> Self {
        self.prior_bright = prior_bright;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_bd", self.p_bd),
            ("p_db", self.p_db),
            ("prior_bright", self.prior_bright),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Params(format!("{name} = {p} outside [0, 1]")));
            }
        }
        for (name, r) in [
            ("lambda_bright", self.lambda_bright),
            ("lambda_dark", self.lambda_dark),
        ] {
            if !(r >= 0.0) || r.is_infinite() {
                return Err(Error::Params(format!("{name} = {r} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn to_section(&self) -> Section {
        let mut s = Section::new("hmm");
        s.set_floats("lambda_bright", &[self.lambda_bright]);
        s.set_floats("lambda_dark", &[self.lambda_dark]);
        s.set_floats("p_bd", &[self.p_bd]);
        s.set_floats("p_db", &[self.p_db]);
        s.set_floats("prior_bright", &[self.prior_bright]);
        s
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let s = doc.section("hmm")?;
        let m = Self {
            lambda_bright: s.parse("lambda_bright")?,
            lambda_dark: s.parse("lambda_dark")?,
            p_bd: s.parse("p_bd")?,
            p_db: s.parse("p_db")?,
            prior_bright: s.parse("prior_bright")?,
        };
        m.validate().map_err(|e| s.error(e.to_string()))?;
        Ok(m)
    }
}

fn ln_factorial(k: u32) -> f64 {
    const TABLE: usize = 1024;
    static CACHE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = CACHE.get_or_init(|| {
        let mut t = Vec::with_capacity(TABLE);
        let mut acc = 0.0f64;
        t.push(0.0);
        for i in 1..TABLE {
            acc += (i as f64).ln();
            t.push(acc);
        }
        t
    });
    let k = k as usize;
    if k < TABLE {
        table[k]
    } else {
        table[TABLE - 1] + (TABLE..=k).map(|i| (i as f64).ln()).sum::<f64>()
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-space tables for one model, shared by both initial conditions.
struct LogModel {
    ln_lambda: [f64; 2],
    lambda: [f64; 2],
    /// `trans[from][to]`, index 0 = bright.
    trans: [[f64; 2]; 2],
}

impl LogModel {
    fn new(m: &HmmModel) -> Self {
        Self {
            ln_lambda: [m.lambda_bright.ln(), m.lambda_dark.ln()],
            lambda: [m.lambda_bright, m.lambda_dark],
            trans: [
                [(-m.p_bd).ln_1p(), m.p_bd.ln()],
                [m.p_db.ln(), (-m.p_db).ln_1p()],
            ],
        }
    }

    #[inline]
    fn emit(&self, state: usize, k: u32) -> f64 {
        let lambda = self.lambda[state];
        if lambda == 0.0 {
            return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        f64::from(k) * self.ln_lambda[state] - lambda - ln_factorial(k)
    }

    #[inline]
    fn step(&self, alpha: [f64; 2], k: u32) -> [f64; 2] {
        let t = &self.trans;
        [
            log_add(alpha[0] + t[0][0], alpha[1] + t[1][0]) + self.emit(0, k),
            log_add(alpha[0] + t[0][1], alpha[1] + t[1][1]) + self.emit(1, k),
        ]
    }

    fn start(&self, initial: State, k: u32) -> [f64; 2] {
        match initial {
            State::Bright => [self.emit(0, k), f64::NEG_INFINITY],
            State::Dark => [f64::NEG_INFINITY, self.emit(1, k)],
        }
    }

    fn loglik(&self, counts: &[u32], initial: State) -> f64 {
        let Some((&first, rest)) = counts.split_first() else {
            return 0.0;
        };
        let alpha = rest
            .iter()
            .fold(self.start(initial, first), |a, &k| self.step(a, k));
        log_add(alpha[0], alpha[1])
    }
}

/// `log P(counts | initial state)`. Equals `-inf` only when the counts are
/// impossible under the model (a positive count from a zero-rate state with
/// no route out of it).
pub fn hmm_loglik(counts: &[u32], model: &HmmModel, initial: State) -> f64 {
    LogModel::new(model).loglik(counts, initial)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlVerdict {
    pub state: State,
    /// Posterior log-odds of bright over dark; bright iff strictly positive.
    pub log_odds: f64,
}

fn log_odds(lm: &LogModel, counts: &[u32], prior_bright: f64) -> f64 {
    let lb = prior_bright.ln() + lm.loglik(counts, State::Bright);
    let ld = (-prior_bright).ln_1p() + lm.loglik(counts, State::Dark);
    combine(lb, ld)
}

fn combine(lb: f64, ld: f64) -> f64 {
    if lb == ld {
        // Covers both -inf and both +inf.
        0.0
    } else {
        lb - ld
    }
}

pub fn ml_classify(counts: &[u32], model: &HmmModel) -> MlVerdict {
    let lo = log_odds(&LogModel::new(model), counts, model.prior_bright);
    MlVerdict {
        state: State::from_bright(lo > 0.0),
        log_odds: lo,
    }
}

/// Posterior probability of a bright initial state by the forward recursion.
pub fn forward_posterior(counts: &[u32], model: &HmmModel) -> f64 {
    let lo = log_odds(&LogModel::new(model), counts, model.prior_bright);
    if lo >= 0.0 {
        1.0 / (1.0 + (-lo).exp())
    } else {
        let e = lo.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveVerdict {
    pub state: State,
    pub log_odds: f64,
    /// Sub-bins consumed before the log-odds crossed the stopping bound.
    pub bins_used: usize,
}

/// Stops as soon as `|log-odds|` reaches `bound`; otherwise uses all bins.
pub fn ml_classify_adaptive(counts: &[u32], model: &HmmModel, bound: f64) -> AdaptiveVerdict {
    let lm = LogModel::new(model);
    let prior_b = model.prior_bright.ln();
    let prior_d = (-model.prior_bright).ln_1p();
    let mut bright = [f64::NEG_INFINITY; 2];
    let mut dark = [f64::NEG_INFINITY; 2];
    let mut lo = combine(prior_b, prior_d);
    for (i, &k) in counts.iter().enumerate() {
        if i == 0 {
            bright = lm.start(State::Bright, k);
            dark = lm.start(State::Dark, k);
        } else {
            bright = lm.step(bright, k);
            dark = lm.step(dark, k);
        }
        lo = combine(
            prior_b + log_add(bright[0], bright[1]),
            prior_d + log_add(dark[0], dark[1]),
        );
        if lo.abs() >= bound {
            return AdaptiveVerdict {
                state: State::from_bright(lo > 0.0),
                log_odds: lo,
                bins_used: i + 1,
            };
        }
    }
    AdaptiveVerdict {
        state: State::from_bright(lo > 0.0),
        log_odds: lo,
        bins_used: counts.len(),
    }
}

fn poisson_pmf(k: u32, lambda: f64) -> f64 {
    // Direct product form, deliberately not shared with the log-space path.
    let mut p = (-lambda).exp();
    for i in 1..=k {
        p *= lambda / f64::from(i);
    }
    p
}

/// Exact bright posterior by summing over all `2^n` hidden paths.
pub fn brute_force_posterior(counts: &[u32], model: &HmmModel) -> Result<f64> {
    let n = counts.len();
    if n > ENUMERATION_LIMIT {
        return Err(Error::OracleGuard {
            len: n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if n == 0 {
        return Ok(model.prior_bright);
    }
    let emit = |bright: bool, k: u32| {
        poisson_pmf(
            k,
            if bright {
                model.lambda_bright
            } else {
                model.lambda_dark
            },
        )
    };
    let trans = |from: bool, to: bool| match (from, to) {
        (true, true) => 1.0 - model.p_bd,
        (true, false) => model.p_bd,
        (false, true) => model.p_db,
        (false, false) => 1.0 - model.p_db,
    };
    let (mut from_bright, mut total) = (0.0f64, 0.0f64);
    // Bit i of `path` set means bright during sub-bin i.
    for path in 0u32..(1u32 << n) {
        let state = |i: usize| path & (1 << i) != 0;
        let mut p = if state(0) {
            model.prior_bright
        } else {
            1.0 - model.prior_bright
        };
        p *= emit(state(0), counts[0]);
        for (i, &k) in counts.iter().enumerate().skip(1) {
            p *= trans(state(i - 1), state(i)) * emit(state(i), k);
        }
        total += p;
        if state(0) {
            from_bright += p;
        }
    }
    Ok(if total > 0.0 { from_bright / total } else { 0.5 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(lb: f64, ld: f64, p_bd: f64, p_db: f64) -> HmmModel {
        HmmModel {
            lambda_bright: lb,
            lambda_dark: ld,
            p_bd,
            p_db,
            prior_bright: 0.5,
        }
    }

    #[test]
    fn single_bin_is_poisson() {
        let m = model(2.5, 0.1, 0.0, 0.0);
        for k in 0..10 {
            let expected = (poisson_pmf(k, 2.5)).ln();
            assert!((hmm_loglik(&[k], &m, State::Bright) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_emissions_ignore_initial_state() {
        let m = model(1.3, 1.3, 0.02, 0.07);
        let counts = [0, 3, 1, 0, 2, 5, 0];
        let b = hmm_loglik(&counts, &m, State::Bright);
        let d = hmm_loglik(&counts, &m, State::Dark);
        assert!((b - d).abs() < 1e-12);
    }

    #[test]
    fn zero_counts_are_dark() {
        let m = model(5.0, 0.01, 0.0, 0.0);
        assert_eq!(ml_classify(&[0; 10], &m).state, State::Dark);
    }

    #[test]
    fn exact_tie_is_dark() {
        let m = model(0.4, 0.4, 0.0, 0.0);
        for counts in [[0u32, 0], [3, 1], [9, 9]] {
            let v = ml_classify(&counts, &m);
            assert_eq!(v.log_odds, 0.0);
            assert_eq!(v.state, State::Dark);
        }
    }

    #[test]
    fn impossible_under_both_is_dark() {
        let m = model(0.0, 0.0, 0.0, 0.0);
        assert_eq!(ml_classify(&[1], &m).state, State::Dark);
        assert_eq!(hmm_loglik(&[1], &m, State::Bright), f64::NEG_INFINITY);
    }

    #[test]
    fn enumeration_symmetry_and_guard() {
        let m = model(0.7, 0.7, 0.1, 0.1);
        assert!((brute_force_posterior(&[2], &m).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            brute_force_posterior(&[0; 21], &m),
            Err(Error::OracleGuard { len: 21, .. })
        ));
    }

    #[test]
    fn absorbing_pump_two_bins() {
        // p_db = 1, p_bd = 0: a dark start is bright from the second bin on,
        // so only the first bin carries information.
        let m = model(3.0, 0.2, 0.0, 1.0);
        let (c0, c1) = (1u32, 4u32);
        let fb = poisson_pmf(c0, 3.0);
        let fd = poisson_pmf(c0, 0.2);
        let expected = fb / (fb + fd);
        let got = brute_force_posterior(&[c0, c1], &m).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((forward_posterior(&[c0, c1], &m) - expected).abs() < 1e-12);
    }

    #[test]
    fn adaptive_stops_early_on_strong_evidence() {
        let m = model(2.0, 0.01, 1e-4, 1e-4);
        let mut counts = vec![6u32, 5, 7];
        counts.extend(std::iter::repeat_n(0, 50));
        let v = ml_classify_adaptive(&counts, &m, 10.0);
        assert_eq!(v.state, State::Bright);
        assert!(v.bins_used < counts.len());
        let full = ml_classify_adaptive(&counts, &m, f64::INFINITY);
        assert_eq!(full.bins_used, counts.len());
        assert!((full.log_odds - ml_classify(&counts, &m).log_odds).abs() < 1e-9);
    }

    #[test]
    fn from_params_matches_generator() {
        let p = PhysicsParams::default();
        let m = HmmModel::from_params(&p).unwrap();
        let (lb, ld) = p.mean_counts_per_bin().unwrap();
        assert_eq!((m.lambda_bright, m.lambda_dark), (lb, ld));
        assert_eq!((m.p_bd, m.p_db), transition_probs(&p));
    }

    #[test]
    fn model_section_round_trip() {
        let m = HmmModel::from_params(&PhysicsParams::default()).unwrap();
        let mut doc = Document::new();
        doc.push(m.to_section());
        let back = HmmModel::from_document(&Document::parse(&doc.to_string()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
