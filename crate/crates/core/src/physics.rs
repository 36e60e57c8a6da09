//! Generative model for fluorescence photon counts.
//!
//! The ion is a two-state Markov chain sampled once per sub-bin. A bright ion
//! emits at the saturated fluorescence rate plus background, a dark ion at the
//! background rate alone. Off-resonant pumping flips the state in both
//! directions, with rates proportional to laser power.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kv::{Document, Section};
use crate::rng::{derive_seed, mix64, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    Bright,
    Dark,
}

impl State {
    pub fn is_bright(self) -> bool {
        self == State::Bright
    }

    pub fn from_bright(bright: bool) -> Self {
        if bright {
            State::Bright
        } else {
            State::Dark
        }
    }

    pub fn symbol(self) -> char {
        match self {
            State::Bright => 'B',
            State::Dark => 'D',
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            State::Bright => "bright",
            State::Dark => "dark",
        })
    }
}

/// Full parameterization of the emission and flip model.
///
/// Flip time constants are quoted at `reference_power` and scale inversely
/// with `laser_power`. Set both to `f64::INFINITY` to disable flips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    /// Saturation power P0, microwatt.
    pub p0_saturation: f64,
    /// Saturated photon counting rate n0, counts per second.
    pub n0_saturation_rate: f64,
    /// Incident laser power P, microwatt.
    pub laser_power: f64,
    /// Background counts per second seen for a dark ion.
    pub dark_rate: f64,
    /// Mean bright-to-dark time at the reference power, seconds.
    pub bright_decay_tau: f64,
    /// Mean dark-to-bright time at the reference power, seconds.
    pub dark_pump_tau_ref: f64,
    /// Power at which the flip time constants are quoted, microwatt.
    pub reference_power: f64,
    /// Seconds per sub-bin.
    pub sub_bin_duration: f64,
    pub n_sub_bins: usize,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            p0_saturation: 2.91,
            n0_saturation_rate: 1.39e5,
            laser_power: 2.95,
            dark_rate: 1.0e3,
            bright_decay_tau: 30e-3,
            dark_pump_tau_ref: 300e-3,
            reference_power: 2.95,
            sub_bin_duration: 3e-6,
            n_sub_bins: 100,
        }
    }
}

impl PhysicsParams {
    /// 100 sub-bins of 3 µs, the software comparison setup.
    pub fn software_preset() -> Self {
        Self::default()
    }

    /// 10 sub-bins of 30 µs, the embedded counter setup.
    pub fn embedded_preset() -> Self {
        Self {
            sub_bin_duration: 30e-6,
            n_sub_bins: 10,
            ..Self::default()
        }
    }

    pub fn without_flips(mut self) -> Self {
        self.bright_decay_tau = f64::INFINITY;
        self.dark_pump_tau_ref = f64::INFINITY;
        self
    }

    pub fn with_power(mut self, laser_power: f64) -> Self {
        self.laser_power = laser_power;
        self
    }

    pub fn with_binning(mut self, sub_bin_duration: f64, n_sub_bins: usize) -> Self {
        self.sub_bin_duration = sub_bin_duration;
        self.n_sub_bins = n_sub_bins;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p0_saturation", self.p0_saturation),
            ("n0_saturation_rate", self.n0_saturation_rate),
            ("bright_decay_tau", self.bright_decay_tau),
            ("dark_pump_tau_ref", self.dark_pump_tau_ref),
            ("reference_power", self.reference_power),
            ("sub_bin_duration", self.sub_bin_duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Params(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("laser_power", self.laser_power), ("dark_rate", self.dark_rate)] {
            if !(v >= 0.0) || v.is_infinite() {
                return Err(Error::Params(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.sub_bin_duration.is_finite() {
            return Err(Error::Params("sub_bin_duration must be finite".into()));
        }
        if self.n_sub_bins == 0 {
            return Err(Error::Params("n_sub_bins must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable 64-bit digest of every field.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for v in [
            self.p0_saturation,
            self.n0_saturation_rate,
            self.laser_power,
            self.dark_rate,
            self.bright_decay_tau,
            self.dark_pump_tau_ref,
            self.reference_power,
            self.sub_bin_duration,
        ] {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((self.n_sub_bins as u64).to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Names accepted by [`PhysicsParams::set_field`], in file order.
    pub const FIELDS: [&'static str; 9] = [
        "p0_saturation",
        "n0_saturation_rate",
        "laser_power",
        "dark_rate",
        "bright_decay_tau",
        "dark_pump_tau_ref",
        "reference_power",
        "sub_bin_duration",
        "n_sub_bins",
    ];

    /// Overrides one field by name from its text form.
    pub fn set_field(&mut self, name: &str, value: &str) -> Result<()> {
        let bad = || Error::Params(format!("{name}: cannot parse `{value}`"));
        if name == "n_sub_bins" {
            self.n_sub_bins = value.trim().parse().map_err(|_| bad())?;
            return Ok(());
        }
        let v: f64 = value.trim().parse().map_err(|_| bad())?;
        let slot = match name {
            "p0_saturation" => &mut self.p0_saturation,
            "n0_saturation_rate" => &mut self.n0_saturation_rate,
            "laser_power" => &mut self.laser_power,
            "dark_rate" => &mut self.dark_rate,
            "bright_decay_tau" => &mut self.bright_decay_tau,
            "dark_pump_tau_ref" => &mut self.dark_pump_tau_ref,
            "reference_power" => &mut self.reference_power,
            "sub_bin_duration" => &mut self.sub_bin_duration,
            _ => return Err(Error::Params(format!("unknown parameter `{name}`"))),
        };
        *slot = v;
        Ok(())
    }

    pub fn to_section(&self) -> Section {
        let mut s = Section::new("physics");
        for (name, v) in [
            ("p0_saturation", self.p0_saturation),
            ("n0_saturation_rate", self.n0_saturation_rate),
            ("laser_power", self.laser_power),
            ("dark_rate", self.dark_rate),
            ("bright_decay_tau", self.bright_decay_tau),
            ("dark_pump_tau_ref", self.dark_pump_tau_ref),
            ("reference_power", self.reference_power),
            ("sub_bin_duration", self.sub_bin_duration),
        ] {
            s.set_floats(name, &[v]);
        }
        s.set("n_sub_bins", self.n_sub_bins);
        s.set("fingerprint", format!("{:016x}", self.fingerprint()));
        s
    }

    /// Reads the `[physics]` section. Every field is required.
    pub fn from_document(doc: &Document) -> Result<Self> {
        let s = doc.section("physics")?;
        let mut p = Self::default();
        for name in Self::FIELDS {
            p.set_field(name, s.require(name)?)
                .map_err(|e| s.error(e.to_string()))?;
        }
        p.validate().map_err(|e| s.error(e.to_string()))?;
        if s.get("fingerprint").is_some() && s.parse_hex("fingerprint")? != p.fingerprint() {
            return Err(s.error("fingerprint does not match the parameters"));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut doc = Document::new();
        doc.push(self.to_section());
        fs::write(path, doc.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&Document::parse(&text)?)
    }

    /// Mean counts per sub-bin for each state, `(bright, dark)`.
    pub fn mean_counts_per_bin(&self) -> Result<(f64, f64)> {
        let fluorescence = saturation_rate(self.laser_power, self)?;
        Ok((
            (fluorescence + self.dark_rate) * self.sub_bin_duration,
            self.dark_rate * self.sub_bin_duration,
        ))
    }
}

/// Detected fluorescence rate `n0 * x / (1 + x)` with `x = P / P0`.
pub fn saturation_rate(power: f64, params: &PhysicsParams) -> Result<f64> {
    if !(power >= 0.0) {
        return Err(Error::Domain(format!("laser power must be >= 0, got {power}")));
    }
    if power.is_infinite() {
        return Ok(params.n0_saturation_rate);
    }
    let x = power / params.p0_saturation;
    Ok(params.n0_saturation_rate * x / (1.0 + x))
}

/// Per-sub-bin flip probabilities `(p_bright_to_dark, p_dark_to_bright)`.
pub fn transition_probs(params: &PhysicsParams) -> (f64, f64) {
    let scale = params.laser_power / params.reference_power;
    let dt = params.sub_bin_duration;
    let flip = |tau: f64| -(-(dt * scale / tau)).exp_m1();
    (flip(params.bright_decay_tau), flip(params.dark_pump_tau_ref))
}

/// One detection shot.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTrajectory {
    pub counts: Vec<u32>,
    /// State during each sub-bin; only known for simulated shots.
    pub hidden_path: Option<Vec<State>>,
    /// State at the start of detection.
    pub true_label: State,
    pub sub_bin_duration: f64,
    pub params_fingerprint: u64,
}

impl PhotonTrajectory {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// First `bins` sub-bins of this shot.
    pub fn prefix(&self, bins: usize) -> Result<PhotonTrajectory> {
        if bins == 0 || bins > self.counts.len() {
            return Err(Error::Argument(format!(
                "prefix length {bins} outside 1..={}",
                self.counts.len()
            )));
        }
        Ok(PhotonTrajectory {
            counts: self.counts[..bins].to_vec(),
            hidden_path: self.hidden_path.as_ref().map(|p| p[..bins].to_vec()),
            true_label: self.true_label,
            sub_bin_duration: self.sub_bin_duration,
            params_fingerprint: self.params_fingerprint,
        })
    }
}

struct Emission {
    bright: Option<Poisson<f64>>,
    dark: Option<Poisson<f64>>,
}

impl Emission {
    fn new(params: &PhysicsParams) -> Result<Self> {
        let (bright, dark) = params.mean_counts_per_bin()?;
        let make = |mean: f64| -> Result<Option<Poisson<f64>>> {
            if mean > 0.0 {
                Poisson::new(mean)
                    .map(Some)
                    .map_err(|e| Error::Params(format!("poisson mean {mean}: {e}")))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            bright: make(bright)?,
            dark: make(dark)?,
        })
    }

    fn sample(&self, state: State, rng: &mut crate::rng::Rng) -> u32 {
        let dist = match state {
            State::Bright => &self.bright,
            State::Dark => &self.dark,
        };
        dist.as_ref().map_or(0, |d| d.sample(rng) as u32)
    }
}

/// Samples one shot. Deterministic in `(params, initial, seed)`.
pub fn sample_trajectory(
    params: &PhysicsParams,
    initial: State,
    seed: u64,
) -> Result<PhotonTrajectory> {
    params.validate()?;
    let emission = Emission::new(params)?;
    Ok(sample_with(params, &emission, transition_probs(params), initial, seed))
}

fn sample_with(
    params: &PhysicsParams,
    emission: &Emission,
    (p_bd, p_db): (f64, f64),
    initial: State,
    seed: u64,
) -> PhotonTrajectory {
    let mut rng = rng_from(seed);
    let n = params.n_sub_bins;
    let mut counts = Vec::with_capacity(n);
    let mut path = Vec::with_capacity(n);
    let mut state = initial;
    for i in 0..n {
        if i > 0 {
            let u: f64 = rng.gen();
            state = match state {
                State::Bright if u < p_bd => State::Dark,
                State::Dark if u < p_db => State::Bright,
                s => s,
            };
        }
        path.push(state);
        counts.push(emission.sample(state, &mut rng));
    }
    PhotonTrajectory {
        counts,
        hidden_path: Some(path),
        true_label: initial,
        sub_bin_duration: params.sub_bin_duration,
        params_fingerprint: params.fingerprint(),
    }
}

/// Sums consecutive groups of `factor` sub-bins. Drops the hidden path.
pub fn rebin(traj: &PhotonTrajectory, factor: usize) -> Result<PhotonTrajectory> {
    if factor == 0 || !traj.counts.len().is_multiple_of(factor) {
        return Err(Error::Argument(format!(
            "rebin factor {factor} does not divide {} sub-bins",
            traj.counts.len()
        )));
    }
    Ok(PhotonTrajectory {
        counts: traj.counts.chunks(factor).map(|c| c.iter().sum()).collect(),
        hidden_path: None,
        true_label: traj.true_label,
        sub_bin_duration: traj.sub_bin_duration * factor as f64,
        params_fingerprint: traj.params_fingerprint,
    })
}

/// Labeled shots sharing one binning.
///
/// Shot `i` of a dataset is generated from `derive_seed(seed, first_index + i)`,
/// so two datasets drawn from the same master seed over disjoint index
/// ranges never share a shot.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub trajectories: Vec<PhotonTrajectory>,
    pub seed: u64,
    pub class_balance: f64,
    pub first_index: u64,
    pub n_sub_bins: usize,
    pub sub_bin_duration: f64,
    pub params_fingerprint: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn index_range(&self) -> std::ops::Range<u64> {
        self.first_index..self.first_index + self.trajectories.len() as u64
    }

    pub fn labels(&self) -> impl Iterator<Item = State> + '_ {
        self.trajectories.iter().map(|t| t.true_label)
    }

    pub fn bright_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels().filter(|s| s.is_bright()).count() as f64 / self.len() as f64
    }

    /// Mean total counts per class, `(bright, dark)`; NaN for an absent class.
    pub fn class_means(&self) -> (f64, f64) {
        let mut sums = [0.0f64; 2];
        let mut ns = [0usize; 2];
        for t in &self.trajectories {
            let k = usize::from(!t.true_label.is_bright());
            sums[k] += t.total() as f64;
            ns[k] += 1;
        }
        (sums[0] / ns[0] as f64, sums[1] / ns[1] as f64)
    }

    /// Keeps the first `bins` sub-bins of every shot.
    pub fn truncated(&self, bins: usize) -> Result<LabeledDataset> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| t.prefix(bins))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            trajectories,
            n_sub_bins: bins,
            ..self.clone_meta()
        })
    }

    pub fn rebinned(&self, factor: usize) -> Result<LabeledDataset> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| rebin(t, factor))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            trajectories,
            n_sub_bins: self.n_sub_bins / factor,
            sub_bin_duration: self.sub_bin_duration * factor as f64,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> LabeledDataset {
        LabeledDataset {
            trajectories: Vec::new(),
            seed: self.seed,
            class_balance: self.class_balance,
            first_index: self.first_index,
            n_sub_bins: self.n_sub_bins,
            sub_bin_duration: self.sub_bin_duration,
            params_fingerprint: self.params_fingerprint,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "ionreadout-dataset version=1 n_sub_bins={} sub_bin_duration={:e} fingerprint={:016x} seed={} class_balance={} first_index={}",
            self.n_sub_bins,
            self.sub_bin_duration,
            self.params_fingerprint,
            self.seed,
            self.class_balance,
            self.first_index
        )?;
        let mut line = String::new();
        for t in &self.trajectories {
            line.clear();
            line.push(t.true_label.symbol());
            for c in &t.counts {
                line.push(',');
                line.push_str(&c.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LabeledDataset> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<LabeledDataset> {
        let perr = |message: String| Error::Parse {
            section: "dataset".into(),
            message,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr("empty file".into()))?
            .map_err(|e| perr(e.to_string()))?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some("ionreadout-dataset") {
            return Err(perr("missing ionreadout-dataset header".into()));
        }
        let mut ds = LabeledDataset {
            trajectories: Vec::new(),
            seed: 0,
            class_balance: 0.5,
            first_index: 0,
            n_sub_bins: 0,
            sub_bin_duration: 0.0,
            params_fingerprint: 0,
        };
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| perr(format!("header token `{tok}` is not key=value")))?;
            let bad = |_| perr(format!("bad value for {k}: `{v}`"));
            match k {
                "version" if v == "1" => {}
                "version" => return Err(perr(format!("unsupported version {v}"))),
                "n_sub_bins" => ds.n_sub_bins = v.parse().map_err(|_| perr(format!("bad n_sub_bins `{v}`")))?,
                "sub_bin_duration" => ds.sub_bin_duration = v.parse().map_err(|_| perr(format!("bad sub_bin_duration `{v}`")))?,
                "fingerprint" => ds.params_fingerprint = u64::from_str_radix(v, 16).map_err(|_| perr(format!("bad fingerprint `{v}`")))?,
                "seed" => ds.seed = v.parse().map_err(|_| perr(format!("bad seed `{v}`")))?,
                "class_balance" => ds.class_balance = v.parse().map_err(bad)?,
                "first_index" => ds.first_index = v.parse().map_err(|_| perr(format!("bad first_index `{v}`")))?,
                other => return Err(perr(format!("unknown header key `{other}`"))),
            }
        }
        if ds.n_sub_bins == 0 {
            return Err(perr("header lacks n_sub_bins".into()));
        }
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| perr(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label = match fields.next().map(str::trim) {
                Some("B") => State::Bright,
                Some("D") => State::Dark,
                other => return Err(perr(format!("record {i}: bad label {other:?}"))),
            };
            let counts = fields
                .map(|f| f.trim().parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(format!("record {i}: {e}")))?;
            if counts.len() != ds.n_sub_bins {
                return Err(perr(format!(
                    "record {i}: {} counts, header says {}",
                    counts.len(),
                    ds.n_sub_bins
                )));
            }
            ds.trajectories.push(PhotonTrajectory {
                counts,
                hidden_path: None,
                true_label: label,
                sub_bin_duration: ds.sub_bin_duration,
                params_fingerprint: ds.params_fingerprint,
            });
        }
        Ok(ds)
    }
}

/// Label for shot `index` of the stream rooted at `seed`.
fn draw_label(traj_seed: u64, balance: f64) -> State {
    let u: f64 = rng_from(mix64(traj_seed ^ 0x5851_f42d_4c95_7f2d)).gen();
    State::from_bright(u < balance)
}

/// Shots `first_index .. first_index + n` of the stream rooted at `seed`.
pub fn generate_range(
    params: &PhysicsParams,
    first_index: u64,
    n: usize,
    balance: f64,
    seed: u64,
    exec: Execution,
) -> Result<LabeledDataset> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Argument("dataset size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&balance) {
        return Err(Error::Argument(format!("class balance {balance} outside [0, 1]")));
    }
    let emission = Emission::new(params)?;
    let probs = transition_probs(params);
    let trajectories = exec.map_range(n, |i| {
        let traj_seed = derive_seed(seed, first_index + i as u64);
        let label = draw_label(traj_seed, balance);
        sample_with(params, &emission, probs, label, traj_seed)
    });
    Ok(LabeledDataset {
        trajectories,
        seed,
        class_balance: balance,
        first_index,
        n_sub_bins: params.n_sub_bins,
        sub_bin_duration: params.sub_bin_duration,
        params_fingerprint: params.fingerprint(),
    })
}

pub fn generate_dataset(
    params: &PhysicsParams,
    n: usize,
    balance: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    generate_range(params, 0, n, balance, seed, Execution::default())
}

/// Disjoint train and held-out sets from one seed stream.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl DataSplit {
    pub fn generate(
        params: &PhysicsParams,
        n_train: usize,
        n_test: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<DataSplit> {
        let train = generate_range(params, 0, n_train, 0.5, seed, exec)?;
        let test = generate_range(params, n_train as u64, n_test, 0.5, seed, exec)?;
        Ok(DataSplit { train, test })
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.seed != self.test.seed
            || self.train.index_range().end <= self.test.index_range().start
            || self.test.index_range().end <= self.train.index_range().start
    }

    pub fn truncated(&self, bins: usize) -> Result<DataSplit> {
        Ok(DataSplit {
            train: self.train.truncated(bins)?,
            test: self.test.truncated(bins)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_examples() {
        let p = PhysicsParams::default();
        assert_eq!(saturation_rate(0.0, &p).unwrap(), 0.0);
        let half = PhysicsParams {
            laser_power: 2.91,
            ..p
        };
        assert!((saturation_rate(2.91, &half).unwrap() - 6.95e4).abs() < 1e-9);
        let expected = 1.39e5 * (2.95 / 2.91) / (1.0 + 2.95 / 2.91);
        let got = saturation_rate(2.95, &p).unwrap();
        assert!((got - expected).abs() < 1e-9);
        // Quoted to four significant figures.
        assert!((got - 6.997e4).abs() <= 5.0, "{got}");
        assert!(matches!(saturation_rate(-1.0, &p), Err(Error::Domain(_))));
        assert!(matches!(saturation_rate(f64::NAN, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn saturation_supremum_is_n0() {
        let p = PhysicsParams::default();
        let r = saturation_rate(1e6 * p.p0_saturation, &p).unwrap();
        assert!((p.n0_saturation_rate - r) / p.n0_saturation_rate < 1e-4);
    }

    #[test]
    fn transition_examples() {
        let p = PhysicsParams::default().without_flips();
        assert_eq!(transition_probs(&p).0, 0.0);
        assert_eq!(transition_probs(&p).1, 0.0);

        let p = PhysicsParams {
            bright_decay_tau: 30e-3,
            ..PhysicsParams::embedded_preset()
        };
        let (p_bd, _) = transition_probs(&p);
        assert!((p_bd - (1.0 - (-0.001f64).exp())).abs() < 1e-15);
        assert!((p_bd - 9.995e-4).abs() < 1e-7);

        let dark_laser = PhysicsParams::default().with_power(0.0);
        assert_eq!(transition_probs(&dark_laser), (0.0, 0.0));
    }

    #[test]
    fn zero_rate_dark_shot_is_empty() {
        let p = PhysicsParams {
            dark_rate: 0.0,
            ..PhysicsParams::default().without_flips()
        };
        let t = sample_trajectory(&p, State::Dark, 11).unwrap();
        assert!(t.counts.iter().all(|&c| c == 0));
        assert!(t.hidden_path.unwrap().iter().all(|&s| s == State::Dark));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = PhysicsParams::default();
        let a = sample_trajectory(&p, State::Bright, 99).unwrap();
        let b = sample_trajectory(&p, State::Bright, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.len(), p.n_sub_bins);
        assert_eq!(a.hidden_path.as_ref().unwrap().len(), a.counts.len());
    }

    #[test]
    fn rebin_examples() {
        let t = PhotonTrajectory {
            counts: vec![1, 0, 2, 1],
            hidden_path: Some(vec![State::Bright; 4]),
            true_label: State::Bright,
            sub_bin_duration: 3e-6,
            params_fingerprint: 0,
        };
        assert_eq!(rebin(&t, 1).unwrap().counts, t.counts);
        let r = rebin(&t, 2).unwrap();
        assert_eq!(r.counts, vec![1, 3]);
        assert!(r.hidden_path.is_none());
        assert_eq!(r.true_label, State::Bright);
        assert!((r.sub_bin_duration - 6e-6).abs() < 1e-18);
        assert!(matches!(rebin(&t, 3), Err(Error::Argument(_))));
        assert!(matches!(rebin(&t, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn rebin_hundred_to_ten_conserves_total() {
        let t = sample_trajectory(&PhysicsParams::default(), State::Bright, 5).unwrap();
        let r = rebin(&t, 10).unwrap();
        assert_eq!(r.counts.len(), 10);
        assert_eq!(r.total(), t.total());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = PhysicsParams {
            n_sub_bins: 0,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
        let p = PhysicsParams {
            laser_power: -1.0,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
        let p = PhysicsParams {
            sub_bin_duration: 0.0,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn single_bright_dataset() {
        let d = generate_dataset(&PhysicsParams::default(), 1, 1.0, 3).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.trajectories[0].true_label, State::Bright);
        assert!(generate_dataset(&PhysicsParams::default(), 0, 0.5, 3).is_err());
        assert!(generate_dataset(&PhysicsParams::default(), 3, 1.5, 3).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let d = generate_dataset(&PhysicsParams::default(), 20, 0.5, 8).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = LabeledDataset::read_from(&buf[..]).unwrap();
        assert_eq!(back.len(), d.len());
        assert_eq!(back.seed, d.seed);
        assert_eq!(back.params_fingerprint, d.params_fingerprint);
        assert_eq!(back.sub_bin_duration, d.sub_bin_duration);
        for (a, b) in back.trajectories.iter().zip(&d.trajectories) {
            assert_eq!(a.counts, b.counts);
            assert_eq!(a.true_label, b.true_label);
        }
    }

    #[test]
    fn dataset_parse_errors() {
        let bad_len = "ionreadout-dataset version=1 n_sub_bins=3 sub_bin_duration=3e-6 fingerprint=0 seed=1\nB,1,2\n";
        assert!(matches!(
            LabeledDataset::read_from(bad_len.as_bytes()),
            Err(Error::Parse { .. })
        ));
        let bad_label = "ionreadout-dataset version=1 n_sub_bins=1 sub_bin_duration=3e-6 fingerprint=0 seed=1\nX,1\n";
        assert!(LabeledDataset::read_from(bad_label.as_bytes()).is_err());
        assert!(LabeledDataset::read_from("".as_bytes()).is_err());
    }

    #[test]
    fn params_file_round_trip() {
        let p = PhysicsParams {
            dark_pump_tau_ref: 0.0168,
            ..PhysicsParams::default().with_power(5.9)
        };
        let mut doc = Document::new();
        doc.push(p.to_section());
        let back = PhysicsParams::from_document(&Document::parse(&doc.to_string()).unwrap()).unwrap();
        assert_eq!(back, p);
        let flipless = PhysicsParams::default().without_flips();
        let mut doc = Document::new();
        doc.push(flipless.to_section());
        let back = PhysicsParams::from_document(&Document::parse(&doc.to_string()).unwrap()).unwrap();
        assert_eq!(back, flipless);
        let mut q = p;
        assert!(q.set_field("laser", "1").is_err());
        assert!(q.set_field("dark_rate", "x").is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let s = DataSplit::generate(&PhysicsParams::default(), 10, 5, 1, Execution::Sequential).unwrap();
        assert!(s.is_disjoint());
        assert_eq!(s.test.first_index, 10);
        // The held-out shots are exactly the continuation of the training stream.
        let all = generate_range(&PhysicsParams::default(), 0, 15, 0.5, 1, Execution::Sequential).unwrap();
        assert_eq!(all.trajectories[10..], s.test.trajectories[..]);
    }
}
