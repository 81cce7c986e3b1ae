//! Python bindings. Results with nested structure come back as plain
//! dicts and lists (built through `json.loads`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use smsplit::domain::{ControllerConfig, GpuSpec, KernelProfile, ModelConfig, PartitionState, Phase};
use smsplit::opcost::BatchShape;
use smsplit::optimizer::{self, PhaseLatencyOracle};
use smsplit::schedulers::{self, PrefillQueueEntry};
use smsplit::simulator::{self, EngineKind, SimConfig};
use smsplit::workload::{self, Stop, WorkloadSpec};
use smsplit::{costmodel, SaturationCurve};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(err)?;
    PyModule::import(py, "json")?.call_method1("loads", (s,))
}

fn presets(model: &str, gpu: &str) -> PyResult<(ModelConfig, GpuSpec)> {
    let m = ModelConfig::preset(model).ok_or_else(|| err(format!("unknown model `{model}`")))?;
    let g = GpuSpec::preset(gpu, &m).ok_or_else(|| err(format!("unknown gpu `{gpu}`")))?;
    Ok((m, g))
}

fn parse_phase(s: &str) -> PyResult<Phase> {
    match s {
        "prefill" => Ok(Phase::Prefill),
        "decode" => Ok(Phase::Decode),
        _ => Err(err(format!("phase must be `prefill` or `decode`, got `{s}`"))),
    }
}

#[pyfunction]
fn model_presets() -> Vec<&'static str> {
    ModelConfig::PRESETS.to_vec()
}

#[pyfunction]
fn workload_presets() -> Vec<&'static str> {
    workload::WORKLOAD_PRESETS.to_vec()
}

#[pyfunction]
fn model_config<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let m = ModelConfig::preset(name).ok_or_else(|| err(format!("unknown model `{name}`")))?;
    to_py(py, &m)
}

/// Compute time of `flops` at SM fraction `r`.
#[pyfunction]
fn compute_latency(flops: f64, r: f64, r_sat: f64, lam: f64, peak_flops: f64) -> PyResult<f64> {
    costmodel::compute_latency(flops, r, SaturationCurve { r_sat, lambda: lam }, peak_flops)
        .map_err(err)
}

#[pyfunction]
fn effective_decode_bandwidth(m_d: f64, m_p1: f64, m_p2: f64, p: f64, bandwidth: f64) -> PyResult<f64> {
    costmodel::effective_decode_bandwidth(m_d, m_p1, m_p2, p, bandwidth).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (kv_used, kv_capacity, fraction = 0.7))]
fn select_mode(kv_used: u64, kv_capacity: u64, fraction: f64) -> &'static str {
    match optimizer::select_mode(kv_used, kv_capacity, fraction) {
        optimizer::ObjectiveMode::PrefillPrioritized => "prefill_prioritized",
        optimizer::ObjectiveMode::DecodePrioritized => "decode_prioritized",
    }
}

struct Tables {
    prefill: Vec<f64>,
    decode: Vec<f64>,
}

impl PhaseLatencyOracle for Tables {
    fn latency(&self, phase: Phase, share: u8) -> f64 {
        match phase {
            Phase::Prefill => self.prefill[share as usize],
            Phase::Decode => self.decode[share as usize],
        }
    }
    fn min_latency(&self, phase: Phase) -> f64 {
        self.latency(phase, 100)
    }
    fn has_work(&self, _: Phase) -> bool {
        true
    }
}

/// Greedy split search over latency tables indexed by share 0..=100.
/// Returns `(r_p, r_d, infeasible, queries)`.
#[pyfunction]
#[pyo3(signature = (target, r_p, prefill_table, decode_table, alpha = 1.3, beta = 1.1))]
fn adjust_partition(
    target: &str,
    r_p: u8,
    prefill_table: Vec<f64>,
    decode_table: Vec<f64>,
    alpha: f64,
    beta: f64,
) -> PyResult<(u8, u8, bool, u32)> {
    if prefill_table.len() != 101 || decode_table.len() != 101 {
        return Err(err("latency tables need 101 entries (shares 0..=100)"));
    }
    let cur = PartitionState::new(r_p).map_err(err)?;
    let cfg = ControllerConfig {
        alpha,
        beta,
        ..ControllerConfig::default()
    };
    let t = Tables {
        prefill: prefill_table,
        decode: decode_table,
    };
    let a = optimizer::adjust_partition(parse_phase(target)?, &cur, &cfg, &t);
    Ok((a.r_p, a.r_d, a.infeasible, a.queries))
}

/// `queue` holds `(id, arrival_s, remaining_tokens)`; returns `[(id, tokens)]`.
#[pyfunction]
#[pyo3(signature = (queue, budget, gamma = 15.0, now = 0.0))]
fn spf_schedule(queue: Vec<(u64, f64, u64)>, budget: u64, gamma: f64, now: f64) -> PyResult<Vec<(u64, u64)>> {
    if budget == 0 {
        return Err(err("budget must be positive"));
    }
    let q: Vec<PrefillQueueEntry> = queue
        .into_iter()
        .map(|(id, arrival_s, remaining)| PrefillQueueEntry {
            id,
            arrival_s,
            remaining,
        })
        .collect();
    let plan = schedulers::spf_schedule(&q, budget, gamma, now);
    Ok(plan.members.iter().map(|m| (m.id, m.tokens)).collect())
}

/// Generated trace as a list of request dicts.
#[pyfunction]
#[pyo3(signature = (workload, rate, count, seed = 0))]
fn generate_trace<'py>(py: Python<'py>, workload: &str, rate: f64, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let spec = WorkloadSpec::preset(workload, rate, Stop::Count(count), seed).map_err(err)?;
    to_py(py, &workload::generate_trace(&spec).map_err(err)?)
}

/// Runs one engine on a generated workload; returns the summary dict.
#[pyfunction]
#[pyo3(signature = (engine, workload = "mixed", rate = 2.0, count = 200, seed = 0, model = "8b", gpu = "l20"))]
fn simulate<'py>(
    py: Python<'py>,
    engine: &str,
    workload: &str,
    rate: f64,
    count: usize,
    seed: u64,
    model: &str,
    gpu: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let engine: EngineKind = engine.parse().map_err(err)?;
    let cfg = SimConfig::preset(model, gpu).ok_or_else(|| err("unknown model or gpu preset"))?;
    let spec = WorkloadSpec::preset(workload, rate, Stop::Count(count), seed).map_err(err)?;
    let trace = workload::generate_trace(&spec).map_err(err)?;
    let out = py
        .detach(|| simulator::run(engine, &trace, &cfg))
        .map_err(err)?;
    let summary = serde_json::json!({
        "engine": out.engine.to_string(),
        "requests": out.requests.len(),
        "completed": out.requests.iter().filter(|r| r.is_finished()).count(),
        "timed_out": out.timed_out,
        "partition_switches": out.switches,
        "events": out.events.len(),
        "report": out.report,
    });
    to_py(py, &summary)
}

/// Iteration latency model for one preset model on one preset GPU.
#[pyclass(name = "CostModel")]
struct PyCostModel {
    model: ModelConfig,
    inner: costmodel::CostModel,
}

#[pymethods]
impl PyCostModel {
    #[new]
    #[pyo3(signature = (model = "8b", gpu = "l20"))]
    fn new(model: &str, gpu: &str) -> PyResult<Self> {
        let (m, g) = presets(model, gpu)?;
        Ok(PyCostModel {
            model: m,
            inner: costmodel::CostModel::new(g, KernelProfile::default()),
        })
    }

    /// Latency of one prefill chunk at SM fraction `r`.
    fn prefill_latency(&self, chunk: u64, context: u64, r: f64) -> PyResult<f64> {
        let ops = BatchShape {
            prefill_chunks: vec![(chunk, context)],
            decode_contexts: vec![],
        }
        .workloads(&self.model)
        .map_err(err)?;
        Ok(self.inner.phase_latency_isolated(&ops, r).map_err(err)?.total_s)
    }

    /// Decode iteration latency, optionally slowed by a concurrent prefill
    /// chunk `(tokens, context)` running at `1 - r`.
    #[pyo3(signature = (contexts, r, prefill = None))]
    fn decode_latency(&self, contexts: Vec<u64>, r: f64, prefill: Option<(u64, u64)>) -> PyResult<f64> {
        let ops = BatchShape {
            prefill_chunks: vec![],
            decode_contexts: contexts,
        }
        .workloads(&self.model)
        .map_err(err)?;
        let Some((n, l)) = prefill else {
            return Ok(self.inner.phase_latency_isolated(&ops, r).map_err(err)?.total_s);
        };
        let p_ops = BatchShape {
            prefill_chunks: vec![(n, l)],
            decode_contexts: vec![],
        }
        .workloads(&self.model)
        .map_err(err)?;
        let p_bd = self
            .inner
            .phase_latency_isolated(&p_ops, (1.0 - r).max(0.01))
            .map_err(err)?;
        let bd = self
            .inner
            .decode_latency_contended(
                &ops,
                r,
                Some(costmodel::ConcurrentPrefill {
                    breakdown: &p_bd,
                    ops: &p_ops,
                }),
            )
            .map_err(err)?;
        Ok(bd.total_s)
    }
}

#[pymodule]
fn smsplit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(model_presets, m)?)?;
    m.add_function(wrap_pyfunction!(workload_presets, m)?)?;
    m.add_function(wrap_pyfunction!(model_config, m)?)?;
    m.add_function(wrap_pyfunction!(compute_latency, m)?)?;
    m.add_function(wrap_pyfunction!(effective_decode_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(select_mode, m)?)?;
    m.add_function(wrap_pyfunction!(adjust_partition, m)?)?;
    m.add_function(wrap_pyfunction!(spf_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<PyCostModel>()?;
    Ok(())
}
