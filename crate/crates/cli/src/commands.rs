use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use ionreadout::baselines::{fit_threshold, Discriminator, HmmModel, ThresholdModel};
use ionreadout::bench::{
    calibrate_from, max_boundary_error, run_preset, Budget, CalibrationBudget, CalibrationTarget,
    Method, Preset, PresetConfig, ReportRow,
};
use ionreadout::exec::{set_thread_limit, Execution};
use ionreadout::kv::Document;
use ionreadout::nn::{train, Model, TrainConfig};
use ionreadout::physics::{generate_range, DataSplit, LabeledDataset, PhysicsParams};
use ionreadout::quant::{divider_counter, quantize, simulate_ttl, CounterConfig, FixedPointNet};
use ionreadout::rng::derive_seed;

use crate::config::Resolver;
use crate::{Cli, Command, CounterArgs, PhysicsArgs};

/// Runs one subcommand. `Ok(false)` means an `--assert` check failed.
pub fn run(cli: Cli) -> Result<bool> {
    let mut r = Resolver::from_file(cli.config.as_deref())?;
    let seed = r.value("seed", cli.seed, 0u64)?;
    if let Some(t) = r.optional("threads", cli.threads)? {
        set_thread_limit(t.max(1));
    }
    let assert = r.switch("assert", cli.assert)?;
    let out = r.optional("out", cli.out.map(|p| p.display().to_string()))?;
    let ctx = Ctx { seed, assert, out };
    match cli.command {
        Command::Simulate {
            physics,
            n,
            balance,
            first_index,
        } => simulate(&mut r, &ctx, &physics, n, balance, first_index),
        Command::Calibrate {
            physics,
            target,
            tolerance,
            n_train,
            n_test,
        } => cmd_calibrate(&mut r, &ctx, &physics, target, tolerance, n_train, n_test),
        Command::FitThreshold { data } => fit_threshold_cmd(&mut r, &ctx, data),
        Command::FitMl { physics, data } => fit_ml(&mut r, &ctx, &physics, data),
        Command::Train {
            physics,
            data,
            test,
            method,
            n_train,
            n_test,
            passes,
            standardize,
        } => {
            let a = TrainArgs {
                data,
                test,
                method,
                n_train,
                n_test,
                passes,
                standardize,
            };
            train_cmd(&mut r, &ctx, &physics, a)
        }
        Command::Eval {
            model,
            data,
            fixed_point,
        } => eval(&mut r, &ctx, model, data, fixed_point),
        Command::Quantize { weights } => quantize_cmd(&mut r, &ctx, weights),
        Command::TtlRoundtrip {
            physics,
            counter,
            data,
            n,
            phases,
        } => ttl_roundtrip(&mut r, &ctx, &physics, &counter, data, n, phases),
        Command::Bench {
            preset,
            physics,
            counter,
            n_train,
            n_test,
            passes,
            powers,
            latency_trials,
        } => {
            let a = BenchArgs {
                preset,
                n_train,
                n_test,
                passes,
                powers,
                latency_trials,
            };
            bench(&mut r, &ctx, &physics, &counter, a)
        }
    }
}

struct Ctx {
    seed: u64,
    assert: bool,
    out: Option<String>,
}

impl Ctx {
    fn out_or(&self, default: &str) -> PathBuf {
        PathBuf::from(self.out.as_deref().unwrap_or(default))
    }
}

/// Checks for unknown keys, prints the resolved config and saves it beside
/// the artifact.
fn finish(r: &Resolver, command: &str, log_path: Option<&Path>) -> Result<()> {
    r.finish()?;
    let log = r.log(command);
    eprint!("{log}");
    if let Some(p) = log_path {
        fs::write(p, &log).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn config_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

fn resolve_physics(r: &mut Resolver, a: &PhysicsArgs, default: &str) -> Result<PhysicsParams> {
    let base = r.value("physics", a.physics.clone(), default.to_string())?;
    let mut p = match base.as_str() {
        "software" => PhysicsParams::software_preset(),
        "embedded" => PhysicsParams::embedded_preset(),
        "toy" => PhysicsParams {
            dark_rate: 0.0,
            ..PhysicsParams::embedded_preset().without_flips()
        },
        other => bail!("unknown physics base `{other}` (software, embedded, toy)"),
    };
    if let Some(path) = r.optional("params", a.params.as_ref().map(|p| p.display().to_string()))? {
        p = PhysicsParams::load(&path)?;
    }
    let mut flags = BTreeMap::new();
    for kv in &a.param {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--param expects KEY=VALUE, got `{kv}`"))?;
        let k = k.trim();
        if !PhysicsParams::FIELDS.contains(&k) {
            bail!("unknown physics parameter `{k}`");
        }
        flags.insert(k.to_string(), v.trim().to_string());
    }
    for name in PhysicsParams::FIELDS {
        if let Some(v) = r.optional::<String>(name, flags.remove(name))? {
            p.set_field(name, &v)?;
        }
    }
    p.validate()?;
    r.record("fingerprint", &format!("{:016x}", p.fingerprint()));
    Ok(p)
}

fn resolve_counter(r: &mut Resolver, a: &CounterArgs) -> Result<CounterConfig> {
    let d = CounterConfig::default();
    let mhz = r.value("clock_mhz", a.clock_mhz, 1e3 / d.clock_period_ns as f64)?;
    let cfg = CounterConfig {
        divider_ratio: r.value("ratio", a.ratio, d.divider_ratio)?,
        gate_high_ns: r.value("gate_ns", a.gate_ns, d.gate_high_ns)?,
        gate_frequency_hz: r.value("gate_hz", a.gate_hz, d.gate_frequency_hz)?,
        n_sub_bins: r.value("sub_bins", a.sub_bins, d.n_sub_bins)?,
        ..d
    }
    .with_clock_mhz(mhz)?;
    cfg.validate()?;
    Ok(cfg)
}

fn path_key(r: &mut Resolver, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    r.optional(key, flag.map(|p| p.display().to_string()))?
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("missing --{}", key.replace('_', "-")))
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn accuracy_line(label: &str, correct: usize, n: usize) -> Result<String> {
    let row = ReportRow::new(label, correct, n)?;
    Ok(format!(
        "{label} {:.4}% ({correct} of {n}, 95% [{:.4}%, {:.4}%])",
        100.0 * row.accuracy,
        100.0 * row.ci_low,
        100.0 * row.ci_high
    ))
}

fn score(d: &impl Discriminator, data: &LabeledDataset) -> usize {
    Execution::default()
        .map_slice(&data.trajectories, |t| d.classify(&t.counts) == t.true_label)
        .into_iter()
        .filter(|&h| h)
        .count()
}

fn simulate(
    r: &mut Resolver,
    ctx: &Ctx,
    physics: &PhysicsArgs,
    n: Option<usize>,
    balance: Option<f64>,
    first_index: Option<u64>,
) -> Result<bool> {
    let params = resolve_physics(r, physics, "software")?;
    let n = r.value("n", n, 1000usize)?;
    let balance = r.value("balance", balance, 0.5f64)?;
    let first = r.value("first_index", first_index, 0u64)?;
    let path = ctx.out_or("dataset.txt");
    finish(r, "simulate", Some(&config_path(&path)))?;
    let data = generate_range(&params, first, n, balance, ctx.seed, Execution::default())?;
    data.save(&path)?;
    let (bright_mean, dark_mean) = data.class_means();
    println!("wrote {} shots to {}", data.len(), path.display());
    println!("bright_fraction {}", data.bright_fraction());
    println!("mean_total_bright {bright_mean:.4}");
    println!("mean_total_dark {dark_mean:.4}");
    Ok(true)
}

fn cmd_calibrate(
    r: &mut Resolver,
    ctx: &Ctx,
    physics: &PhysicsArgs,
    target: Option<f64>,
    tolerance: Option<f64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
) -> Result<bool> {
    let start = resolve_physics(r, physics, "software")?;
    let d = CalibrationTarget::default();
    let target = CalibrationTarget {
        accuracy: r.value("target", target, d.accuracy)?,
        tolerance: r.value("tolerance", tolerance, d.tolerance)?,
    };
    let b = CalibrationBudget::default();
    let budget = CalibrationBudget {
        n_train: r.value("n_train", n_train, b.n_train)?,
        n_test: r.value("n_test", n_test, b.n_test)?,
        ..b
    };
    let path = ctx.out_or("physics.txt");
    finish(r, "calibrate", Some(&config_path(&path)))?;
    let c = calibrate_from(target, &start, &budget, ctx.seed)?;
    for (p, a) in &c.trace {
        println!(
            "eval dark_rate={} bright_decay_tau={} dark_pump_tau_ref={} accuracy={a}",
            p.dark_rate, p.bright_decay_tau, p.dark_pump_tau_ref
        );
    }
    c.params.save(&path)?;
    println!("threshold_accuracy {}", c.accuracy);
    println!("wrote {}", path.display());
    Ok(true)
}

fn fit_threshold_cmd(r: &mut Resolver, ctx: &Ctx, data: Option<PathBuf>) -> Result<bool> {
    let data_path = path_key(r, "data", data)?;
    let path = ctx.out_or("threshold.txt");
    finish(r, "fit-threshold", Some(&config_path(&path)))?;
    let data = load_dataset(&data_path)?;
    let model = fit_threshold(&data)?;
    let mut doc = Document::new();
    doc.push(model.to_section());
    fs::write(&path, doc.to_string()).with_context(|| format!("writing {}", path.display()))?;
    println!("threshold {}", model.threshold);
    println!("{}", accuracy_line("training_accuracy", score(&model, &data), data.len())?);
    Ok(true)
}

fn fit_ml(r: &mut Resolver, ctx: &Ctx, physics: &PhysicsArgs, data: Option<PathBuf>) -> Result<bool> {
    let params = resolve_physics(r, physics, "software")?;
    let data_path = r.optional("data", data.map(|p| p.display().to_string()))?;
    let path = ctx.out_or("hmm.txt");
    finish(r, "fit-ml", Some(&config_path(&path)))?;
    let mut model = HmmModel::from_params(&params)?;
    let data = data_path.map(|p| load_dataset(Path::new(&p))).transpose()?;
    if let Some(d) = &data {
        if d.params_fingerprint != params.fingerprint() {
            eprintln!("warning: dataset was generated with different physics");
        }
        model = model.with_prior(d.bright_fraction());
    }
    let mut doc = Document::new();
    doc.push(model.to_section());
    fs::write(&path, doc.to_string()).with_context(|| format!("writing {}", path.display()))?;
    print!("{doc}");
    if let Some(d) = &data {
        println!("{}", accuracy_line("accuracy", score(&model, d), d.len())?);
    }
    Ok(true)
}

struct TrainArgs {
    data: Option<PathBuf>,
    test: Option<PathBuf>,
    method: Option<String>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    passes: Option<usize>,
    standardize: bool,
}

fn train_cmd(r: &mut Resolver, ctx: &Ctx, physics: &PhysicsArgs, a: TrainArgs) -> Result<bool> {
    let method: Method = r.value("method", a.method, "onboard-fcnn".to_string())?.parse()?;
    if !method.is_neural() {
        bail!("`{method}` is not a network; use fit-threshold or fit-ml");
    }
    let data_path = r.optional("data", a.data.map(|p| p.display().to_string()))?;
    let test_path = r.optional("test", a.test.map(|p| p.display().to_string()))?;
    let (train_set, test_set) = match data_path {
        Some(p) => {
            let tr = load_dataset(Path::new(&p))?;
            let te = test_path.map(|p| load_dataset(Path::new(&p))).transpose()?;
            (tr, te)
        }
        None => {
            let params = resolve_physics(r, physics, "embedded")?;
            let n_train = r.value("n_train", a.n_train, 200_000usize)?;
            let n_test = r.value("n_test", a.n_test, 50_000usize)?;
            let split = DataSplit::generate(&params, n_train, n_test, ctx.seed, Execution::default())?;
            (split.train, Some(split.test))
        }
    };
    let passes = r.value("passes", a.passes, method.default_passes())?;
    let standardize = r.switch("standardize", a.standardize)?;
    let path = ctx.out_or("weights.txt");
    finish(r, "train", Some(&config_path(&path)))?;

    let spec = method.network(train_set.n_sub_bins)?;
    let cfg = TrainConfig {
        total_samples: passes * train_set.len(),
        seed: ctx.seed,
        standardize,
        ..TrainConfig::default()
    };
    println!("network {spec}");
    println!("parameters {}", spec.param_count());
    let outcome = train(&spec, &train_set, test_set.as_ref(), &cfg)?;
    for e in &outcome.log {
        println!(
            "step {} samples {} loss {:.6} lr {:.3e}",
            e.step, e.samples_seen, e.mean_loss, e.lr
        );
    }
    if let Some(acc) = outcome.held_out_accuracy {
        println!("held_out_accuracy {acc}");
    }
    outcome.model.save(&path)?;
    println!("wrote {}", path.display());
    Ok(true)
}

enum Loaded {
    Network(Box<Model>),
    Threshold(ThresholdModel),
    Hmm(HmmModel),
    Fixed(FixedPointNet),
}

fn load_any(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc = Document::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    let loaded = if doc.has_section("network") {
        Loaded::Network(Box::new(Model::from_document(&doc)?))
    } else if doc.has_section("fixed") {
        Loaded::Fixed(FixedPointNet::from_document(&doc)?)
    } else if doc.has_section("threshold") {
        Loaded::Threshold(ThresholdModel::from_document(&doc)?)
    } else if doc.has_section("hmm") {
        Loaded::Hmm(HmmModel::from_document(&doc)?)
    } else {
        bail!("{}: no [network], [fixed], [threshold] or [hmm] section", path.display());
    };
    Ok(loaded)
}

fn eval(
    r: &mut Resolver,
    ctx: &Ctx,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    fixed_point: bool,
) -> Result<bool> {
    let model_path = path_key(r, "model", model)?;
    let data_path = path_key(r, "data", data)?;
    let fixed_point = r.switch("fixed_point", fixed_point)?;
    finish(r, "eval", ctx.out.as_ref().map(Path::new))?;
    let data = load_dataset(&data_path)?;
    let exec = Execution::default();
    let mut ok = true;
    match load_any(&model_path)? {
        Loaded::Threshold(m) => println!("{}", accuracy_line("accuracy", score(&m, &data), data.len())?),
        Loaded::Hmm(m) => println!("{}", accuracy_line("accuracy", score(&m, &data), data.len())?),
        Loaded::Fixed(net) => {
            let (correct, events) = fixed_score(&net, &data)?;
            println!("{}", accuracy_line("fixed_point_accuracy", correct, data.len())?);
            println!("saturation_events {events}");
        }
        Loaded::Network(m) => {
            let preds = m.predict_dataset(&data, exec)?;
            let correct = preds.iter().zip(data.labels()).filter(|(p, l)| **p == *l).count();
            println!("{}", accuracy_line("accuracy", correct, data.len())?);
            if fixed_point {
                let net = quantize(&m)?;
                let per_shot = exec.map_slice(&data.trajectories, |t| net.classify(&t.counts));
                let mut agree = 0;
                let mut events = 0u64;
                let mut fixed_correct = 0;
                for ((res, p), t) in per_shot.into_iter().zip(&preds).zip(&data.trajectories) {
                    let (state, ev) = res?;
                    agree += usize::from(state == *p);
                    fixed_correct += usize::from(state == t.true_label);
                    events += u64::from(ev);
                }
                let bound = net.activation_bounds(ionreadout::bench::BOUND_MAX_COUNT);
                println!("{}", accuracy_line("fixed_point_accuracy", fixed_correct, data.len())?);
                println!("{}", accuracy_line("agreement", agree, data.len())?);
                println!("saturation_events {events}");
                println!("interval_bound_saturation_free {}", bound.saturation_free());
                ok = agree as f64 >= 0.999 * data.len() as f64 && events == 0;
            }
        }
    }
    Ok(ok || !ctx.assert)
}

fn fixed_score(net: &FixedPointNet, data: &LabeledDataset) -> Result<(usize, u64)> {
    let mut correct = 0;
    let mut events = 0;
    for t in &data.trajectories {
        let (s, e) = net.classify(&t.counts)?;
        correct += usize::from(s == t.true_label);
        events += u64::from(e);
    }
    Ok((correct, events))
}

fn quantize_cmd(r: &mut Resolver, ctx: &Ctx, weights: Option<PathBuf>) -> Result<bool> {
    let weights = path_key(r, "weights", weights)?;
    let path = ctx.out_or("quantized.txt");
    finish(r, "quantize", Some(&config_path(&path)))?;
    let model = ionreadout::nn::load_weights(&weights)?;
    let net = quantize(&model)?;
    net.save(&path)?;
    let bound = net.activation_bounds(ionreadout::bench::BOUND_MAX_COUNT);
    println!("parameters {}", net.param_count());
    println!("max_quantization_error {:e}", net.max_quantization_error);
    println!(
        "interval_bound max_count={} max_activation={:.4} max_accumulator={:.4} saturation_free={}",
        bound.max_count,
        bound.max_activation,
        bound.max_accumulator,
        bound.saturation_free()
    );
    println!("wrote {}", path.display());
    Ok(bound.saturation_free() || !ctx.assert)
}

fn ttl_roundtrip(
    r: &mut Resolver,
    ctx: &Ctx,
    physics: &PhysicsArgs,
    counter: &CounterArgs,
    data: Option<PathBuf>,
    n: Option<usize>,
    phases: Option<usize>,
) -> Result<bool> {
    let cfg = resolve_counter(r, counter)?;
    let data_path = r.optional("data", data.map(|p| p.display().to_string()))?;
    let data = match data_path {
        Some(p) => load_dataset(Path::new(&p))?,
        None => {
            let params = resolve_physics(r, physics, "embedded")?
                .with_binning(cfg.sub_bin_seconds(), cfg.n_sub_bins);
            let n = r.value("n", n, 10_000usize)?;
            generate_range(&params, 0, n, 0.5, ctx.seed, Execution::default())?
        }
    };
    let phases = r.value("phases", phases, 1000usize)?;
    finish(r, "ttl-roundtrip", ctx.out.as_ref().map(Path::new))?;
    let results = Execution::default().map_range(data.len(), |i| -> ionreadout::Result<bool> {
        let t = &data.trajectories[i];
        let stream = simulate_ttl(t, &cfg, derive_seed(ctx.seed, i as u64))?;
        Ok(divider_counter(&stream, &cfg)[..t.counts.len()] == t.counts[..])
    });
    let mut exact = 0;
    for res in results {
        exact += usize::from(res?);
    }
    let worst = max_boundary_error(&cfg, phases, ctx.seed)?;
    println!("divider_frequency_hz {:.3}", cfg.divider_frequency_hz());
    println!("sub_bin_ns {}", cfg.sub_bin_ns());
    println!("roundtrip_exact {exact} of {}", data.len());
    println!("max_boundary_error_ns {worst} over {phases} gate phases");
    let ok = exact == data.len() && worst <= cfg.clock_period_ns;
    Ok(ok || !ctx.assert)
}

struct BenchArgs {
    preset: String,
    n_train: Option<usize>,
    n_test: Option<usize>,
    passes: Option<usize>,
    powers: Option<String>,
    latency_trials: Option<usize>,
}

fn bench(
    r: &mut Resolver,
    ctx: &Ctx,
    physics: &PhysicsArgs,
    counter: &CounterArgs,
    a: BenchArgs,
) -> Result<bool> {
    let preset: Preset = a.preset.parse()?;
    r.record("preset", &preset.name());
    let d = PresetConfig::default();
    let explicit = physics.params.is_some()
        || !physics.param.is_empty()
        || physics.physics.is_some()
        || ["physics", "params"]
            .into_iter()
            .chain(PhysicsParams::FIELDS)
            .any(|k| r.in_file(k));
    // Without explicit physics the preset calibrates its own.
    let params = if explicit {
        Some(resolve_physics(r, physics, "software")?)
    } else {
        None
    };
    let counter = resolve_counter(r, counter)?;
    let budget = Budget {
        n_train: r.value("n_train", a.n_train, d.budget.n_train)?,
        n_test: r.value("n_test", a.n_test, d.budget.n_test)?,
        passes: r.optional("passes", a.passes)?,
        exec: Execution::default(),
    };
    let powers = match r.optional("powers", a.powers)? {
        Some(s) => s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("--powers: `{p}`: {e}")))
            .collect::<Result<Vec<_>>>()?,
        None => d.powers.clone(),
    };
    let latency_trials = r.value("latency_trials", a.latency_trials, d.latency_trials)?;
    let dir = ctx.out_or("reports");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    finish(r, "bench", Some(&dir.join(format!("{}.config", preset.name()))))?;

    let mut onboard = d.onboard;
    onboard.n_train = budget.n_train;
    onboard.n_eval = 2 * budget.n_test;
    if let Some(p) = budget.passes {
        onboard.passes = p;
    }
    let cfg = PresetConfig {
        seed: ctx.seed,
        params,
        budget,
        onboard,
        counter,
        powers,
        latency_trials,
        ..d
    };
    let outcome = run_preset(preset, &cfg)?;
    outcome.params.save(dir.join(format!("{}_physics.txt", preset.name())))?;
    for rep in &outcome.reports {
        let p = rep.write_csv(&dir)?;
        eprintln!("wrote {}", p.display());
    }
    if let Some(m) = &outcome.model {
        m.save(dir.join(format!("{}_weights.txt", preset.name())))?;
    }
    let mut summary = outcome.text.clone();
    for c in &outcome.checks {
        summary.push_str(&format!(
            "check {} {} {}\n",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        ));
    }
    fs::write(dir.join(format!("{}_summary.txt", preset.name())), &summary)?;
    print!("{summary}");
    Ok(outcome.passed() || !ctx.assert)
}
