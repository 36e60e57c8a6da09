//! Photon-counting front end: PMT edge synthesis, the gate-synchronised
//! frequency divider and the per-sub-bin counter.
//!
//! Times are integer nanoseconds. The divider restarts on the first
//! system-clock tick at or after the gate rising edge, so every sub-bin
//! boundary sits on a tick and within one clock period of its nominal time.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::physics::PhotonTrajectory;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterConfig {
    /// System clock period in ns (10 ns at 100 MHz).
    pub clock_period_ns: u64,
    pub divider_ratio: u32,
    pub gate_high_ns: u64,
    pub gate_frequency_hz: f64,
    pub n_sub_bins: usize,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self {
            clock_period_ns: 10,
            divider_ratio: 3000,
            gate_high_ns: 300_000,
            gate_frequency_hz: 1.67e3,
            n_sub_bins: 10,
        }
    }
}

impl CounterConfig {
    /// Builds a config from a clock frequency given in MHz. The period must
    /// come out as a whole number of nanoseconds.
    pub fn with_clock_mhz(mut self, mhz: f64) -> Result<Self> {
        let period = 1e3 / mhz;
        if !(period.is_finite() && period >= 1.0) || (period - period.round()).abs() > 1e-9 {
            return Err(Error::Params(format!(
                "clock {mhz} MHz does not have an integer-ns period"
            )));
        }
        self.clock_period_ns = period.round() as u64;
        Ok(self)
    }

    pub fn clock_hz(&self) -> f64 {
        1e9 / self.clock_period_ns as f64
    }

    pub fn sub_bin_ns(&self) -> u64 {
        u64::from(self.divider_ratio) * self.clock_period_ns
    }

    pub fn sub_bin_seconds(&self) -> f64 {
        self.sub_bin_ns() as f64 * 1e-9
    }

    pub fn divider_frequency_hz(&self) -> f64 {
        self.clock_hz() / f64::from(self.divider_ratio)
    }

    pub fn gate_period_ns(&self) -> f64 {
        1e9 / self.gate_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.clock_period_ns == 0 {
            return Err(Error::Params("clock period must be positive".into()));
        }
        if self.divider_ratio < 1 {
            return Err(Error::Params("divider ratio must be at least 1".into()));
        }
        if self.n_sub_bins == 0 {
            return Err(Error::Params("n_sub_bins must be positive".into()));
        }
        if !(self.gate_frequency_hz > 0.0) || self.gate_high_ns as f64 >= self.gate_period_ns() {
            return Err(Error::Params(format!(
                "gate high time {} ns does not fit a {} Hz gate",
                self.gate_high_ns, self.gate_frequency_hz
            )));
        }
        let needed = self.n_sub_bins as u64 * self.sub_bin_ns();
        if self.gate_high_ns < needed {
            return Err(Error::Params(format!(
                "gate high time {} ns is shorter than {} sub-bins of {} ns",
                self.gate_high_ns,
                self.n_sub_bins,
                self.sub_bin_ns()
            )));
        }
        Ok(())
    }

    /// First divider tick at or after the gate rising edge.
    pub fn sync_ns(&self, gate_start_ns: u64) -> u64 {
        gate_start_ns.div_ceil(self.clock_period_ns) * self.clock_period_ns
    }

    /// The `n_sub_bins + 1` boundaries of one gate, closed form.
    pub fn boundaries(&self, gate_start_ns: u64) -> Vec<u64> {
        let sync = self.sync_ns(gate_start_ns);
        (0..=self.n_sub_bins as u64)
            .map(|k| sync + k * self.sub_bin_ns())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TtlEdgeStream {
    pub edges_ns: Vec<u64>,
    pub gate_start_ns: u64,
    pub gate_duration_ns: u64,
}

impl TtlEdgeStream {
    pub fn validate(&self) -> Result<()> {
        if self.edges_ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("edge timestamps must strictly increase".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges_ns.is_empty()
    }
}

/// Places `counts[i]` edges on distinct random clock ticks of sub-bin `i`.
/// The gate rising edge gets a random offset so the tick phase varies.
pub fn simulate_ttl(traj: &PhotonTrajectory, cfg: &CounterConfig, seed: u64) -> Result<TtlEdgeStream> {
    cfg.validate()?;
    let dt = cfg.sub_bin_seconds();
    if (traj.sub_bin_duration - dt).abs() > 1e-9 * dt {
        return Err(Error::Argument(format!(
            "trajectory sub-bin {} s differs from counter sub-bin {} s",
            traj.sub_bin_duration, dt
        )));
    }
    if traj.counts.len() > cfg.n_sub_bins {
        return Err(Error::Argument(format!(
            "{} sub-bins do not fit a {}-bin gate",
            traj.counts.len(),
            cfg.n_sub_bins
        )));
    }
    let ratio = cfg.divider_ratio as usize;
    if let Some((bin, &count)) = traj.counts.iter().enumerate().find(|(_, &c)| c as usize > ratio) {
        return Err(Error::TtlOverflow {
            bin,
            count,
            ticks: u64::from(cfg.divider_ratio),
        });
    }
    let mut rng = rng_from(seed);
    let gate_start_ns = rng.gen_range(0..1_000_000);
    let sync = cfg.sync_ns(gate_start_ns);
    let mut edges_ns = Vec::with_capacity(traj.total() as usize);
    for (i, &c) in traj.counts.iter().enumerate() {
        let mut ticks = sample(&mut rng, ratio, c as usize).into_vec();
        ticks.sort_unstable();
        let base = (i * ratio) as u64;
        edges_ns.extend(ticks.into_iter().map(|t| sync + (base + t as u64) * cfg.clock_period_ns));
    }
    Ok(TtlEdgeStream {
        edges_ns,
        gate_start_ns,
        gate_duration_ns: cfg.gate_high_ns,
    })
}

/// Counts edges per sub-bin. Edges outside the gate are dropped; an edge on
/// a boundary belongs to the later sub-bin; edges between the gate rising
/// edge and the first tick land in sub-bin 0.
pub fn divider_counter(stream: &TtlEdgeStream, cfg: &CounterConfig) -> Vec<u32> {
    let mut counts = vec![0u32; cfg.n_sub_bins];
    let sync = cfg.sync_ns(stream.gate_start_ns);
    let gate_end = stream.gate_start_ns + stream.gate_duration_ns;
    let width = cfg.sub_bin_ns();
    for &t in &stream.edges_ns {
        if t < stream.gate_start_ns || t >= gate_end {
            continue;
        }
        let k = (t.saturating_sub(sync) / width) as usize;
        if let Some(c) = counts.get_mut(k) {
            *c += 1;
        }
    }
    counts
}

/// Tick-level model of the gate-synchronised divider, one step per
/// system-clock rising edge.
#[derive(Debug, Clone)]
pub struct FrequencyDivider {
    ratio: u32,
    phase: u32,
    running: bool,
}

impl FrequencyDivider {
    pub fn new(ratio: u32) -> Self {
        Self {
            ratio: ratio.max(1),
            phase: 0,
            running: false,
        }
    }

    /// Square-wave output level.
    pub fn output(&self) -> bool {
        self.running && self.phase < self.ratio / 2
    }

    /// Advances one tick with the sampled gate level. Returns true when a
    /// sub-bin boundary is emitted on this tick.
    pub fn tick(&mut self, gate_high: bool) -> bool {
        if !gate_high {
            self.running = false;
            return false;
        }
        if !self.running {
            self.running = true;
            self.phase = 0;
            return true;
        }
        self.phase += 1;
        if self.phase == self.ratio {
            self.phase = 0;
            return true;
        }
        false
    }
}

/// Sub-bin start times produced by stepping [`FrequencyDivider`] across one
/// gate.
pub fn simulated_boundaries(gate_start_ns: u64, cfg: &CounterConfig) -> Vec<u64> {
    let p = cfg.clock_period_ns;
    let gate_end = gate_start_ns + cfg.gate_high_ns;
    let mut div = FrequencyDivider::new(cfg.divider_ratio);
    let mut out = Vec::with_capacity(cfg.n_sub_bins);
    let mut t = gate_start_ns / p * p;
    while out.len() < cfg.n_sub_bins && t < gate_end {
        let high = t >= gate_start_ns && t < gate_end;
        if div.tick(high) {
            out.push(t);
        }
        t += p;
    }
    out
}
