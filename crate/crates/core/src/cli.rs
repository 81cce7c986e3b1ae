//! Command-line front end.
//!
//! ```text
//! smsplit run      --engine nexus --workload long-data --rate 2.5 --seed 1
//! smsplit compare  --engines nexus,monolithic,static:50 --workload mixed
//! smsplit sweep    --engine nexus --rate 1..6 --step 0.5
//! smsplit gen-trace --workload arxiv --rate 3 --count 1000 --out trace.jsonl
//! smsplit calibrate-import profile.txt
//! smsplit replay   results/nexus/events.jsonl
//! ```
//!
//! # Config file
//!
//! `--config FILE` reads TOML. Every key is optional; flags given on the
//! command line win over the file, the file wins over built-in defaults.
//!
//! ```toml
//! model = "8b"            # 3b | 8b | 14b
//! gpu = "l20"
//! seed = 1
//! out = "results"
//! calibration = "profile.txt"
//!
//! [workload]
//! preset = "mixed"        # long-data | arxiv | sharegpt | mixed
//! trace = "trace.jsonl"   # replaces preset when set
//! rate = 2.0
//! count = 500             # or: duration = 300.0
//!
//! [controller]            # any ControllerConfig field
//! alpha = 1.3
//! beta = 1.1
//! kv_switch_fraction = 0.7
//! delta = 5
//! gamma = 15.0
//! chunk_size = 2048
//! token_budget = 2048
//! max_decode_batch = 256
//! prefill_policy = "spf"  # spf | fcfs
//! skip_nonfitting = false
//! initial_r_p = 50
//!
//! [sim]
//! contention = true
//! max_sim_time_s = 3600.0
//! max_events = 10000000
//! transfer_base_s = 0.05
//! transfer_bandwidth_fraction = 0.5
//! ```
//!
//! # Calibration file
//!
//! Whitespace-separated columns `op r_sat lambda`, one operator per line,
//! `#` starts a comment. Operator names: `qkv_proj`, `attn_prefill`,
//! `attn_decode`, `attn_out_proj`, `ffn`.
//!
//! # Seeds
//!
//! The top-level seed is the workload seed. Inside the generator it is
//! split into independent streams: arrivals, mixture choice, and one length
//! stream per component. A sweep reuses the seed at every rate so traces
//! differ only in arrival spacing.
//!
//! # Outputs
//!
//! Per engine, under `OUT/<engine>/` (`:` in names becomes `_`):
//! `summary.json`, `events.jsonl`, `decisions.jsonl`. `OUT/plot_data.csv`
//! holds `engine,metric,stat,value` rows for every engine; `sweep` also
//! writes `OUT/sweep.csv`. Exit status is nonzero if any run timed out or
//! left an admitted request unfinished.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_config, ControllerConfig, GpuSpec, KernelProfile, ModelConfig, PrefillPolicy,
    Request, SaturationCurve,
};
use crate::metrics::{write_plot_data, MetricsReport};
use crate::opcost::OperatorKind;
use crate::simulator::{
    read_events, replay, run, write_events, EngineKind, SimConfig, SimOutcome, TransferConfig,
};
use crate::workload::{generate_trace, load_trace, save_trace, Stop, WorkloadSpec};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "smsplit", version, about = "Prefill/decode SM partitioning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one engine.
    Run {
        #[arg(long, default_value = "nexus")]
        engine: EngineKind,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate several engines on the same trace.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "nexus,monolithic,static:50,engine-disagg")]
        engines: Vec<EngineKind>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate one engine over a range of arrival rates.
    Sweep {
        #[arg(long, default_value = "nexus")]
        engine: EngineKind,
        /// Inclusive range `LO..HI`.
        #[arg(long = "rate-range", alias = "rates", default_value = "1..6")]
        rate_range: String,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write a generated trace.
    GenTrace {
        #[command(flatten)]
        common: CommonArgs,
        /// Trace file to write.
        #[arg(long = "trace-out")]
        trace_out: PathBuf,
    },
    /// Parse and validate a calibration file, then print the profile.
    CalibrateImport {
        path: PathBuf,
        /// Also write the profile as a config fragment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from an event log.
    Replay { events: PathBuf },
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub gpu: Option<String>,
    /// Workload preset.
    #[arg(long)]
    pub workload: Option<String>,
    /// Trace file instead of a generated workload.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Arrival rate in requests per second (for sweep: `LO..HI`).
    #[arg(long)]
    pub rate: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Stop generating after this many seconds instead of a count.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<u8>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub kv_switch_fraction: Option<f64>,
    #[arg(long)]
    pub token_budget: Option<u64>,
    #[arg(long)]
    pub chunk_size: Option<u64>,
    #[arg(long)]
    pub prefill_policy: Option<String>,
    #[arg(long)]
    pub no_contention: bool,
    #[arg(long)]
    pub max_sim_time: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub gpu: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub workload: WorkloadSection,
    pub controller: ControllerConfig,
    pub sim: SimSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub preset: Option<String>,
    pub trace: Option<PathBuf>,
    pub rate: Option<f64>,
    pub count: Option<usize>,
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub contention: bool,
    pub max_sim_time_s: f64,
    pub max_events: u64,
    pub transfer_base_s: f64,
    pub transfer_bandwidth_fraction: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let t = TransferConfig::default();
        SimSection {
            contention: true,
            max_sim_time_s: 3600.0,
            max_events: 10_000_000,
            transfer_base_s: t.base_s,
            transfer_bandwidth_fraction: t.bandwidth_fraction,
        }
    }
}

/// Everything an experiment needs after merging defaults, file and flags.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub sim: SimConfig,
    pub workload: Option<String>,
    pub trace: Option<PathBuf>,
    pub rate: f64,
    pub stop: Stop,
    pub seed: u64,
    pub out: PathBuf,
}

/// Parses a calibration table. Returns the profile and the operator kinds
/// that were missing and filled from defaults.
pub fn parse_calibration(text: &str) -> CliResult<(KernelProfile, Vec<OperatorKind>)> {
    let mut prof = KernelProfile::empty();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [op, r_sat, lambda] = cols[..] else {
            return Err(format!("line {}: expected `op r_sat lambda`", n + 1).into());
        };
        let kind = OperatorKind::from_name(op)
            .ok_or_else(|| format!("line {}: unknown operator `{op}`", n + 1))?;
        let r_sat: f64 = r_sat
            .parse()
            .map_err(|_| format!("line {}: bad r_sat `{r_sat}`", n + 1))?;
        let lambda: f64 = lambda
            .parse()
            .map_err(|_| format!("line {}: bad lambda `{lambda}`", n + 1))?;
        if !(r_sat > 0.0 && r_sat <= 1.0) {
            return Err(format!("line {}: r_sat {r_sat} outside (0, 1]", n + 1).into());
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(format!("line {}: lambda {lambda} must be >= 0", n + 1).into());
        }
        prof.set(kind, SaturationCurve { r_sat, lambda });
    }
    let missing = prof.missing_kinds();
    for &k in &missing {
        prof.set(k, KernelProfile::default_curve(k));
    }
    Ok((prof, missing))
}

pub fn import_calibration(path: &Path) -> CliResult<KernelProfile> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (prof, missing) = parse_calibration(&text)?;
    for k in missing {
        log::warn!("calibration lacks `{}`, using the default curve", k.name());
    }
    Ok(prof)
}

fn parse_policy(s: &str) -> CliResult<PrefillPolicy> {
    match s {
        "spf" => Ok(PrefillPolicy::Spf),
        "fcfs" => Ok(PrefillPolicy::Fcfs),
        _ => Err(format!("unknown prefill policy `{s}`").into()),
    }
}

/// Merges defaults, the config file and flags, then validates.
pub fn build_spec(args: &CommonArgs) -> CliResult<ExperimentSpec> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => FileConfig::default(),
    };

    let model_name = args.model.clone().or(file.model).unwrap_or_else(|| "8b".into());
    let model = ModelConfig::preset(&model_name).ok_or_else(|| {
        format!("unknown model preset `{model_name}` (have {:?})", ModelConfig::PRESETS)
    })?;
    let gpu_name = args.gpu.clone().or(file.gpu).unwrap_or_else(|| "l20".into());
    let gpu = GpuSpec::preset(&gpu_name, &model).ok_or_else(|| {
        format!("unknown gpu preset `{gpu_name}` (have {:?})", GpuSpec::PRESETS)
    })?;

    let mut ctrl = file.controller;
    if let Some(v) = args.alpha {
        ctrl.alpha = v;
    }
    if let Some(v) = args.beta {
        ctrl.beta = v;
    }
    if let Some(v) = args.delta {
        ctrl.delta = v;
    }
    if let Some(v) = args.gamma {
        ctrl.gamma = v;
    }
    if let Some(v) = args.kv_switch_fraction {
        ctrl.kv_switch_fraction = v;
    }
    if let Some(v) = args.token_budget {
        ctrl.token_budget = v;
    }
    if let Some(v) = args.chunk_size {
        ctrl.chunk_size = v;
    }
    if let Some(p) = &args.prefill_policy {
        ctrl.prefill_policy = parse_policy(p)?;
    }

    let profile = match args.calibration.as_ref().or(file.calibration.as_ref()) {
        Some(p) => import_calibration(p)?,
        None => KernelProfile::default(),
    };
    let validated = validate_config(&model, &gpu, &ctrl, &profile)?;
    let mut sim = SimConfig::new(validated);
    sim.contention = file.sim.contention && !args.no_contention;
    sim.max_sim_time_s = args.max_sim_time.unwrap_or(file.sim.max_sim_time_s);
    sim.max_events = file.sim.max_events;
    sim.transfer = TransferConfig {
        base_s: file.sim.transfer_base_s,
        bandwidth_fraction: file.sim.transfer_bandwidth_fraction,
    };

    let rate = match &args.rate {
        Some(r) => r.parse().map_err(|_| format!("bad rate `{r}`"))?,
        None => file.workload.rate.unwrap_or(2.0),
    };
    let stop = match (args.count, args.duration, file.workload.count, file.workload.duration) {
        (Some(n), _, _, _) => Stop::Count(n),
        (None, Some(d), _, _) => Stop::Duration(d),
        (None, None, Some(n), _) => Stop::Count(n),
        (None, None, None, Some(d)) => Stop::Duration(d),
        _ => Stop::Count(500),
    };
    let trace = args.trace.clone().or(file.workload.trace);
    let workload = args.workload.clone().or(file.workload.preset);
    Ok(ExperimentSpec {
        sim,
        workload: if trace.is_some() {
            None
        } else {
            Some(workload.unwrap_or_else(|| "mixed".into()))
        },
        trace,
        rate,
        stop,
        seed: args.seed.or(file.seed).unwrap_or(0),
        out: args.out.clone().or(file.out).unwrap_or_else(|| "results".into()),
    })
}

/// The trace for `spec` at arrival rate `rate`.
pub fn make_trace(spec: &ExperimentSpec, rate: f64) -> CliResult<Vec<Request>> {
    if let Some(p) = &spec.trace {
        return Ok(load_trace(p)?);
    }
    let name = spec.workload.as_deref().unwrap_or("mixed");
    let w = WorkloadSpec::preset(name, rate, spec.stop, spec.seed)?;
    Ok(generate_trace(&w)?)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| format!("{}: {e}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    engine: String,
    requests: usize,
    completed: usize,
    rejected: &'a [u64],
    timed_out: bool,
    partition_switches: usize,
    report: &'a Option<MetricsReport>,
}

pub fn engine_dir_name(e: EngineKind) -> String {
    e.to_string().replace(':', "_")
}

/// Writes one engine's result files under `dir`.
pub fn write_outcome(dir: &Path, out: &SimOutcome) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let summary = SummaryFile {
        engine: out.engine.to_string(),
        requests: out.requests.len(),
        completed: out.requests.iter().filter(|r| r.is_finished()).count(),
        rejected: &out.rejected,
        timed_out: out.timed_out,
        partition_switches: out.switches,
        report: &out.report,
    };
    write_atomic(&dir.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    write_atomic(&dir.join("events.jsonl"), |w| write_events(w, &out.events))?;
    write_atomic(&dir.join("decisions.jsonl"), |w| {
        for d in &out.decisions {
            serde_json::to_writer(&mut *w, d)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Whether a run counts as a success for the exit status.
pub fn succeeded(out: &SimOutcome) -> bool {
    !out.timed_out
        && out
            .requests
            .iter()
            .all(|r| r.is_finished() || out.rejected.contains(&r.id))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Plain-text comparison table.
pub fn comparison_table(outcomes: &[SimOutcome]) -> String {
    let mut s = format!(
        "{:<15} {:>6} {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "engine", "done", "thr(r/s)", "ttft_mean", "ttft_p95", "tbt_mean", "tbt_p95", "norm_mean", "norm_p95"
    );
    for o in outcomes {
        let r = o.report.as_ref();
        s += &format!(
            "{:<15} {:>6} {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}{}\n",
            o.engine.to_string(),
            r.map_or(0, |r| r.completed),
            fmt_opt(r.map(|r| r.throughput_rps)),
            fmt_opt(r.map(|r| r.ttft.mean)),
            fmt_opt(r.map(|r| r.ttft.p95)),
            fmt_opt(r.and_then(|r| r.tbt.map(|t| t.mean))),
            fmt_opt(r.and_then(|r| r.tbt.map(|t| t.p95))),
            fmt_opt(r.map(|r| r.normalized.mean)),
            fmt_opt(r.map(|r| r.normalized.p95)),
            if o.timed_out { "  (timed out)" } else { "" },
        );
    }
    s
}

/// Runs each engine on the same trace and writes results. Returns the
/// outcomes in engine order.
pub fn run_engines(spec: &ExperimentSpec, engines: &[EngineKind]) -> CliResult<Vec<SimOutcome>> {
    let trace = make_trace(spec, spec.rate)?;
    fs::create_dir_all(&spec.out).map_err(|e| format!("{}: {e}", spec.out.display()))?;
    let mut outcomes = Vec::new();
    let mut rows = Vec::new();
    for &e in engines {
        let out = run(e, &trace, &spec.sim)?;
        write_outcome(&spec.out.join(engine_dir_name(e)), &out)?;
        if let Some(r) = &out.report {
            rows.extend(r.plot_rows(&e.to_string()));
        }
        outcomes.push(out);
    }
    write_atomic(&spec.out.join("plot_data.csv"), |w| write_plot_data(w, &rows))?;
    Ok(outcomes)
}

fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("rate range `{s}` is not LO..HI"))?;
    let (a, b): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
    if !(a > 0.0 && b >= a) {
        return Err(format!("rate range `{s}` must satisfy 0 < LO <= HI").into());
    }
    Ok((a, b))
}

/// One row of a rate sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub rate: f64,
    pub completed: usize,
    pub timed_out: bool,
    pub throughput_rps: f64,
    pub mean_queue_delay_s: f64,
    pub mean_ttft_s: f64,
    pub p95_ttft_s: f64,
    pub mean_tbt_s: f64,
    pub p95_tbt_s: f64,
}

/// Runs `engine` at each rate in `[lo, hi]` with the given step, in parallel.
pub fn sweep(spec: &ExperimentSpec, engine: EngineKind, lo: f64, hi: f64, step: f64) -> CliResult<Vec<SweepRow>> {
    if !(step > 0.0) {
        return Err("step must be positive".into());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let rates: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
    let results: Vec<CliResult<SweepRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = rates
            .iter()
            .map(|&rate| {
                s.spawn(move || -> CliResult<SweepRow> {
                    let trace = make_trace(spec, rate)?;
                    let out = run(engine, &trace, &spec.sim)?;
                    let r = out.report.as_ref();
                    let nan = f64::NAN;
                    Ok(SweepRow {
                        rate,
                        completed: r.map_or(0, |r| r.completed),
                        timed_out: !succeeded(&out),
                        throughput_rps: r.map_or(nan, |r| r.throughput_rps),
                        mean_queue_delay_s: r.map_or(nan, |r| r.queue_delay.mean),
                        mean_ttft_s: r.map_or(nan, |r| r.ttft.mean),
                        p95_ttft_s: r.map_or(nan, |r| r.ttft.p95),
                        mean_tbt_s: r.and_then(|r| r.tbt).map_or(nan, |t| t.mean),
                        p95_tbt_s: r.and_then(|r| r.tbt).map_or(nan, |t| t.p95),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}

fn execute(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Run { engine, common } => {
            let spec = build_spec(&common)?;
            let outs = run_engines(&spec, &[engine])?;
            print!("{}", comparison_table(&outs));
            Ok(outs.iter().all(succeeded))
        }
        Command::Compare { engines, common } => {
            let spec = build_spec(&common)?;
            let outs = run_engines(&spec, &engines)?;
            print!("{}", comparison_table(&outs));
            Ok(outs.iter().all(succeeded))
        }
        Command::Sweep {
            engine,
            rate_range,
            step,
            mut common,
        } => {
            let range = common.rate.take().unwrap_or(rate_range);
            let (lo, hi) = parse_range(&range)?;
            let spec = build_spec(&common)?;
            let rows = sweep(&spec, engine, lo, hi, step)?;
            fs::create_dir_all(&spec.out).map_err(|e| format!("{}: {e}", spec.out.display()))?;
            let header = "rate,completed,timed_out,throughput_rps,mean_queue_delay_s,mean_ttft_s,p95_ttft_s,mean_tbt_s,p95_tbt_s";
            let line = |r: &SweepRow| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    r.rate,
                    r.completed,
                    r.timed_out,
                    r.throughput_rps,
                    r.mean_queue_delay_s,
                    r.mean_ttft_s,
                    r.p95_ttft_s,
                    r.mean_tbt_s,
                    r.p95_tbt_s
                )
            };
            write_atomic(&spec.out.join("sweep.csv"), |w| {
                writeln!(w, "{header}")?;
                for r in &rows {
                    writeln!(w, "{}", line(r))?;
                }
                Ok(())
            })?;
            println!("{header}");
            for r in &rows {
                println!("{}", line(r));
            }
            Ok(rows.iter().all(|r| !r.timed_out))
        }
        Command::GenTrace { common, trace_out } => {
            let spec = build_spec(&common)?;
            let trace = make_trace(&spec, spec.rate)?;
            save_trace(&trace_out, &trace)?;
            println!("wrote {} requests to {}", trace.len(), trace_out.display());
            Ok(true)
        }
        Command::CalibrateImport { path, out } => {
            let prof = import_calibration(&path)?;
            let mut text = String::new();
            for (k, c) in prof.iter() {
                text += &format!("{:<14} {:.4} {:.4}\n", k.name(), c.r_sat, c.lambda);
            }
            print!("{text}");
            if let Some(o) = out {
                fs::write(&o, format!("# op r_sat lambda\n{text}"))
                    .map_err(|e| format!("{}: {e}", o.display()))?;
            }
            Ok(true)
        }
        Command::Replay { events } => {
            let f = fs::File::open(&events).map_err(|e| format!("{}: {e}", events.display()))?;
            let ev = read_events(BufReader::new(f))?;
            let rep = replay(&ev)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(true)
        }
    }
}

/// Parses `args` (including the program name) and runs. Returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: a run timed out or left requests unfinished; partial results written");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
