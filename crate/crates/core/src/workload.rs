//! Request traces: Poisson arrivals, length distributions, trace files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Request;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("unknown workload preset `{0}`")]
    UnknownPreset(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported trace version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// Token-length distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LengthDist {
    Constant {
        value: u64,
    },
    /// Lognormal truncated to `[1, max]` by rejection.
    LogNormal { mu: f64, sigma: f64, max: u64 },
    /// Summary statistics, realized as a fitted truncated lognormal.
    Empirical { mean: f64, p50: f64, p95: f64, p99: f64 },
}

const Z95: f64 = 1.644_853_626_951_472_2;
const Z99: f64 = 2.326_347_874_040_840_8;

impl LengthDist {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let ok = match *self {
            LengthDist::Constant { value } => value >= 1,
            LengthDist::LogNormal { mu, sigma, max } => mu.is_finite() && sigma >= 0.0 && sigma.is_finite() && max >= 1,
            LengthDist::Empirical { mean, p50, p95, p99 } => {
                p50 >= 1.0 && mean > 0.0 && p50 <= p95 && p95 <= p99
            }
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::Invalid(format!("bad length distribution {self:?}")))
        }
    }

    /// Concrete sampler; empirical summaries are fitted here.
    pub fn resolve(&self) -> LengthDist {
        match *self {
            LengthDist::Empirical { mean, p50, p95, p99 } => {
                let fit = fit_lognormal(mean, p50, p95, p99);
                LengthDist::LogNormal {
                    mu: fit.0,
                    sigma: fit.1,
                    max: (2.0 * p99).ceil() as u64,
                }
            }
            ref other => other.clone(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            LengthDist::Constant { value } => value,
            LengthDist::LogNormal { mu, sigma, max } => {
                let d = LogNormal::new(mu, sigma).expect("validated lognormal");
                for _ in 0..1000 {
                    let x = d.sample(rng).round();
                    if x >= 1.0 && x <= max as f64 {
                        return x as u64;
                    }
                }
                d.sample(rng).round().clamp(1.0, max as f64) as u64
            }
            LengthDist::Empirical { .. } => self.resolve().sample(rng),
        }
    }
}

/// `(mu, sigma)` with `mu = ln p50` and `sigma` minimizing the squared log
/// error of the mean, P95 and P99, searched on a 0.001 grid.
pub fn fit_lognormal(mean: f64, p50: f64, p95: f64, p99: f64) -> (f64, f64) {
    let mu = p50.ln();
    let err = |s: f64| {
        let e_mean = (mu + s * s / 2.0) - mean.ln();
        let e95 = (mu + Z95 * s) - p95.ln();
        let e99 = (mu + Z99 * s) - p99.ln();
        e_mean * e_mean + e95 * e95 + e99 * e99
    };
    let sigma = (1..=3000)
        .map(|i| i as f64 * 0.001)
        .min_by(|a, b| err(*a).total_cmp(&err(*b)))
        .unwrap();
    (mu, sigma)
}

/// One request population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadComponent {
    pub name: String,
    pub input: LengthDist,
    pub output: LengthDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stop {
    Count(usize),
    Duration(f64),
}

/// Poisson arrival process over a weighted mixture of populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub rate_rps: f64,
    pub stop: Stop,
    /// `(component, weight)`; weights sum to 1.
    pub components: Vec<(WorkloadComponent, f64)>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn single(component: WorkloadComponent, rate_rps: f64, stop: Stop, seed: u64) -> Self {
        WorkloadSpec {
            rate_rps,
            stop,
            components: vec![(component, 1.0)],
            seed,
        }
    }

    pub fn preset(name: &str, rate_rps: f64, stop: Stop, seed: u64) -> Result<Self, WorkloadError> {
        Ok(WorkloadSpec {
            rate_rps,
            stop,
            components: preset_components(name)?,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.rate_rps > 0.0 && self.rate_rps.is_finite()) {
            return Err(WorkloadError::Invalid("rate must be positive".into()));
        }
        if self.components.is_empty() {
            return Err(WorkloadError::Invalid("no components".into()));
        }
        let total: f64 = self.components.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 || self.components.iter().any(|(_, w)| *w < 0.0) {
            return Err(WorkloadError::Invalid(format!("mixture weights sum to {total}, not 1")));
        }
        for (c, _) in &self.components {
            c.input.validate()?;
            c.output.validate()?;
        }
        match self.stop {
            Stop::Duration(d) if !(d > 0.0) => Err(WorkloadError::Invalid("duration must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// Independent per-purpose RNG streams from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a trace sorted by arrival, ids `0..n`.
///
/// Arrivals, the mixture choice and each component's lengths draw from
/// separate streams, so a component with weight 1 yields exactly the trace
/// of that component alone.
pub fn generate_trace(spec: &WorkloadSpec) -> Result<Vec<Request>, WorkloadError> {
    spec.validate()?;
    let gaps = Exp::new(spec.rate_rps).map_err(|e| WorkloadError::Invalid(e.to_string()))?;
    let mut arrivals = stream(spec.seed, 0);
    let mut choice = stream(spec.seed, 1);
    let mut lengths: Vec<ChaCha8Rng> = (0..spec.components.len())
        .map(|i| stream(spec.seed, 2 + i as u64))
        .collect();
    let resolved: Vec<(LengthDist, LengthDist)> = spec
        .components
        .iter()
        .map(|(c, _)| (c.input.resolve(), c.output.resolve()))
        .collect();

    let mut trace = Vec::new();
    let mut t = 0.0;
    for id in 0u64.. {
        if let Stop::Count(n) = spec.stop {
            if id as usize >= n {
                break;
            }
        }
        t += gaps.sample(&mut arrivals);
        if let Stop::Duration(d) = spec.stop {
            if t > d {
                break;
            }
        }
        let u: f64 = choice.random();
        let k = pick_component(&spec.components, u);
        let rng = &mut lengths[k];
        let prompt = resolved[k].0.sample(rng);
        let output = resolved[k].1.sample(rng);
        trace.push(Request::new(id, t, prompt, output));
    }
    Ok(trace)
}

fn pick_component(components: &[(WorkloadComponent, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, (_, w)) in components.iter().enumerate() {
        acc += w;
        if *w > 0.0 && u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum
    components.iter().rposition(|(_, w)| *w > 0.0).unwrap_or(0)
}

/// Merges populations with weights into one Poisson stream.
pub fn mix_traces(
    components: &[(WorkloadComponent, f64)],
    rate_rps: f64,
    stop: Stop,
    seed: u64,
) -> Result<Vec<Request>, WorkloadError> {
    generate_trace(&WorkloadSpec {
        rate_rps,
        stop,
        components: components.to_vec(),
        seed,
    })
}

fn empirical(mean: f64, p50: f64, p95: f64, p99: f64) -> LengthDist {
    LengthDist::Empirical { mean, p50, p95, p99 }
}

/// Summary statistics of three public serving datasets.
pub fn preset_component(name: &str) -> Option<WorkloadComponent> {
    let (input, output) = match name {
        "long-data" => (
            empirical(5905.0, 5461.0, 9292.0, 9817.0),
            empirical(180.0, 159.0, 339.0, 454.0),
        ),
        "arxiv" => (
            empirical(3832.0, 3575.0, 6460.0, 6894.0),
            empirical(200.0, 181.0, 357.0, 443.0),
        ),
        "sharegpt" => (
            empirical(496.0, 432.0, 970.0, 1367.0),
            empirical(97.0, 37.0, 383.0, 474.0),
        ),
        _ => return None,
    };
    Some(WorkloadComponent {
        name: name.into(),
        input,
        output,
    })
}

pub const WORKLOAD_PRESETS: [&str; 4] = ["long-data", "arxiv", "sharegpt", "mixed"];

pub fn preset_components(name: &str) -> Result<Vec<(WorkloadComponent, f64)>, WorkloadError> {
    if name == "mixed" {
        return Ok(vec![
            (preset_component("sharegpt").unwrap(), 0.6),
            (preset_component("long-data").unwrap(), 0.4),
        ]);
    }
    preset_component(name)
        .map(|c| vec![(c, 1.0)])
        .ok_or_else(|| WorkloadError::UnknownPreset(name.into()))
}

pub const TRACE_FORMAT: &str = "smsplit-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    id: u64,
    arrival_s: f64,
    prompt_tokens: u64,
    output_tokens: u64,
}

/// Writes a header line then one JSON record per request.
pub fn save_trace(path: &Path, trace: &[Request]) -> Result<(), WorkloadError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trace(&mut w, trace)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(w: &mut W, trace: &[Request]) -> Result<(), WorkloadError> {
    let header = TraceHeader {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in trace {
        let rec = TraceRecord {
            id: r.id,
            arrival_s: r.arrival_s,
            prompt_tokens: r.prompt_len,
            output_tokens: r.output_len,
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
    }
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>, WorkloadError> {
    read_trace(BufReader::new(File::open(path)?))
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<Request>, WorkloadError> {
    let mut lines = r.lines().enumerate();
    let header: TraceHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| WorkloadError::Parse {
            line: 1,
            msg: format!("bad header: {e}"),
        })?,
        None => {
            return Err(WorkloadError::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    if header.format != TRACE_FORMAT {
        return Err(WorkloadError::Parse {
            line: 1,
            msg: format!("not a trace file (format `{}`)", header.format),
        });
    }
    if header.version != TRACE_VERSION {
        return Err(WorkloadError::Version {
            found: header.version,
            expected: TRACE_VERSION,
        });
    }
    let mut trace = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.prompt_tokens == 0 || rec.output_tokens == 0 {
            return Err(WorkloadError::Parse {
                line: i + 1,
                msg: "token counts must be positive".into(),
            });
        }
        trace.push(Request::new(rec.id, rec.arrival_s, rec.prompt_tokens, rec.output_tokens));
    }
    Ok(trace)
}
