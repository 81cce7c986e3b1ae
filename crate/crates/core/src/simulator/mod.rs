//! Discrete-event simulation of the serving engines.
//!
//! Events are kept in a min-heap keyed by `(time, sequence)`, so ties resolve
//! in insertion order and a run is a pure function of trace and config.
//!
//! Engines:
//! - `Nexus`: one GPU, a prefill lane and a decode lane sharing SMs; the
//!   controller re-picks the split whenever a lane launches a batch. Batches
//!   already in flight keep the split they launched with.
//! - `StaticPartition(r_p)`: same lanes, fixed split.
//! - `MonolithicChunked`: one lane, all SMs, fused decode + chunked prefill.
//! - `EngineLevelDisagg`: a prefill GPU and a decode GPU joined by a KV
//!   transfer link.

pub mod eventlog;
mod kv;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{ConcurrentPrefill, CostError, CostModel, PhaseLatencyBreakdown};
use crate::domain::{
    ControllerConfig, GpuSpec, KernelProfile, ModelConfig, PartitionState, Phase, PrefillPolicy,
    Request, ValidatedConfig,
};
use crate::metrics::{report_for, MetricsReport};
use crate::opcost::{BatchShape, OpCostError, OperatorWorkload};
use crate::optimizer::{DecisionRecord, PartitionController, PhaseLatencyOracle};
use crate::schedulers::{
    chunked_mixed_schedule, fcfs_decode_schedule, prefill_schedule, BatchPhase, BatchPlan,
    DecodeEntry, PrefillOptions, PrefillOrder, PrefillQueueEntry,
};

pub use eventlog::{read_events, replay, replay_requests, write_events, EventKind, EventRecord, LaneKind};
pub use kv::{kv_account, KvError, KvEvent, KvLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineKind {
    Nexus,
    MonolithicChunked,
    /// Fixed prefill share in percent.
    StaticPartition(u8),
    EngineLevelDisagg,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineKind::Nexus => write!(f, "nexus"),
            EngineKind::MonolithicChunked => write!(f, "monolithic"),
            EngineKind::StaticPartition(r) => write!(f, "static:{r}"),
            EngineKind::EngineLevelDisagg => write!(f, "engine-disagg"),
        }
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nexus" => Ok(EngineKind::Nexus),
            "monolithic" => Ok(EngineKind::MonolithicChunked),
            "engine-disagg" => Ok(EngineKind::EngineLevelDisagg),
            _ => {
                let r = s
                    .strip_prefix("static:")
                    .ok_or_else(|| format!("unknown engine `{s}`"))?;
                let r: u8 = r.parse().map_err(|_| format!("bad static split `{r}`"))?;
                if !(PartitionState::MIN_SHARE..=PartitionState::MAX_SHARE).contains(&r) {
                    return Err(format!("static split {r} outside [1, 99]"));
                }
                Ok(EngineKind::StaticPartition(r))
            }
        }
    }
}

/// KV hand-off between devices of the disaggregated baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub base_s: f64,
    /// Link bandwidth as a fraction of the prefill device's memory bandwidth.
    pub bandwidth_fraction: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            base_s: 0.05,
            bandwidth_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: ModelConfig,
    pub gpu: GpuSpec,
    pub ctrl: ControllerConfig,
    pub profile: KernelProfile,
    /// Model decode-attention slowdown from a concurrent prefill batch.
    pub contention: bool,
    pub transfer: TransferConfig,
    /// Decode device of the disaggregated baseline; defaults to `gpu`.
    pub decode_gpu: Option<GpuSpec>,
    pub max_sim_time_s: f64,
    pub max_events: u64,
}

impl SimConfig {
    pub fn new(v: ValidatedConfig) -> Self {
        SimConfig {
            model: v.model,
            gpu: v.gpu,
            ctrl: v.ctrl,
            profile: v.profile,
            contention: true,
            transfer: TransferConfig::default(),
            decode_gpu: None,
            max_sim_time_s: 3600.0,
            max_events: 10_000_000,
        }
    }

    /// Preset model on a preset GPU with default controller and profile.
    pub fn preset(model: &str, gpu: &str) -> Option<Self> {
        let model = ModelConfig::preset(model)?;
        let gpu = GpuSpec::preset(gpu, &model)?;
        let v = crate::domain::validate_config(
            &model,
            &gpu,
            &ControllerConfig::default(),
            &KernelProfile::default(),
        )
        .ok()?;
        Some(SimConfig::new(v))
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    OpCost(#[from] OpCostError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub engine: EngineKind,
    /// Requests in trace order with their final lifecycle state.
    pub requests: Vec<Request>,
    pub events: Vec<EventRecord>,
    pub decisions: Vec<DecisionRecord>,
    /// Requests whose KV footprint can never fit.
    pub rejected: Vec<u64>,
    /// Hit `max_sim_time_s` or `max_events` before draining.
    pub timed_out: bool,
    pub report: Option<MetricsReport>,
    pub switches: usize,
}

impl SimOutcome {
    pub fn all_completed(&self) -> bool {
        self.requests.iter().all(Request::is_finished)
    }
}

/// Simulates `trace` (sorted by arrival) on `engine`.
pub fn run(engine: EngineKind, trace: &[Request], cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    check_trace(trace)?;
    if let EngineKind::StaticPartition(r) = engine {
        PartitionState::new(r).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    }
    let mut sim = Sim::new(engine, trace, cfg)?;
    sim.run()?;
    Ok(sim.finish())
}

fn check_trace(trace: &[Request]) -> Result<(), SimError> {
    let mut seen = HashSet::new();
    let mut last = f64::NEG_INFINITY;
    for r in trace {
        if !r.arrival_s.is_finite() || r.arrival_s < last {
            return Err(SimError::InvalidTrace(format!(
                "request {} arrives out of order",
                r.id
            )));
        }
        last = r.arrival_s;
        if r.prompt_len == 0 || r.output_len == 0 {
            return Err(SimError::InvalidTrace(format!(
                "request {} has an empty prompt or output",
                r.id
            )));
        }
        if !seen.insert(r.id) {
            return Err(SimError::InvalidTrace(format!("duplicate id {}", r.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lane {
    /// Prefill lane, or the only lane of the monolithic engine.
    Main,
    Decode,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrival(usize),
    Done(Lane),
    Transferred(usize),
}

struct Pending {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

struct InFlight {
    plan: BatchPlan,
    idx: Vec<usize>,
    ops: Vec<OperatorWorkload>,
    breakdown: PhaseLatencyBreakdown,
    r_p: u8,
}

/// Latency of the batches under consideration at any split.
struct BatchCostOracle<'a> {
    cost: &'a CostModel,
    prefill: Option<&'a [OperatorWorkload]>,
    decode: Option<&'a [OperatorWorkload]>,
    contention: bool,
}

impl BatchCostOracle<'_> {
    fn prefill_at(&self, share: u8) -> Option<PhaseLatencyBreakdown> {
        let ops = self.prefill?;
        self.cost
            .phase_latency_isolated(ops, f64::from(share) / 100.0)
            .ok()
    }

    fn decode_at(&self, share: u8, prefill_share: u8) -> f64 {
        let Some(ops) = self.decode else { return 0.0 };
        let r = f64::from(share) / 100.0;
        let concurrent = if self.contention {
            self.prefill.zip(self.prefill_at(prefill_share))
        } else {
            None
        };
        let b = match &concurrent {
            Some((p_ops, p_bd)) => self.cost.decode_latency_contended(
                ops,
                r,
                Some(ConcurrentPrefill {
                    breakdown: p_bd,
                    ops: p_ops,
                }),
            ),
            None => self.cost.phase_latency_isolated(ops, r),
        };
        b.map(|b| b.total_s).unwrap_or(f64::INFINITY)
    }
}

impl PhaseLatencyOracle for BatchCostOracle<'_> {
    fn latency(&self, phase: Phase, share: u8) -> f64 {
        match phase {
            Phase::Prefill => self.prefill_at(share).map_or(0.0, |b| b.total_s),
            Phase::Decode => self.decode_at(share, 100 - share.min(99)),
        }
    }

    fn min_latency(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Prefill => self.latency(Phase::Prefill, 100),
            // with the least contention a concurrent prefill can cause
            Phase::Decode => self.decode_at(100, PartitionState::MIN_SHARE),
        }
    }

    fn has_work(&self, phase: Phase) -> bool {
        match phase {
            Phase::Prefill => self.prefill.is_some(),
            Phase::Decode => self.decode.is_some(),
        }
    }
}

struct Sim<'a> {
    engine: EngineKind,
    cfg: &'a SimConfig,
    cost: CostModel,
    decode_cost: CostModel,
    kvbpt: u64,
    now: f64,
    heap: BinaryHeap<Pending>,
    seq: u64,
    reqs: Vec<Request>,
    by_id: HashMap<u64, usize>,
    /// Arrived and not fully prefilled, in arrival order.
    waiting: Vec<usize>,
    admitted: Vec<bool>,
    /// Prefilled and producing tokens, in arrival order.
    decoding: Vec<usize>,
    /// Transferred to the decode device, waiting for its KV space.
    buffer: VecDeque<usize>,
    main: Option<InFlight>,
    dec: Option<InFlight>,
    kv: KvLedger,
    dkv: KvLedger,
    partition: PartitionState,
    controller: Option<PartitionController>,
    events: Vec<EventRecord>,
    rejected: Vec<u64>,
    timed_out: bool,
}

impl<'a> Sim<'a> {
    fn new(engine: EngineKind, trace: &[Request], cfg: &'a SimConfig) -> Result<Self, SimError> {
        let decode_gpu = cfg.decode_gpu.clone().unwrap_or_else(|| cfg.gpu.clone());
        let r_p = match engine {
            EngineKind::StaticPartition(r) => r,
            _ => cfg.ctrl.initial_r_p,
        };
        let partition =
            PartitionState::new(r_p).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let mut sim = Sim {
            engine,
            cfg,
            cost: CostModel::new(cfg.gpu.clone(), cfg.profile.clone()),
            decode_cost: CostModel::new(decode_gpu.clone(), cfg.profile.clone()),
            kvbpt: cfg.model.kv_bytes_per_token,
            now: 0.0,
            heap: BinaryHeap::new(),
            seq: 0,
            reqs: trace.iter().map(Request::reset).collect(),
            by_id: trace.iter().enumerate().map(|(i, r)| (r.id, i)).collect(),
            waiting: Vec::new(),
            admitted: vec![false; trace.len()],
            decoding: Vec::new(),
            buffer: VecDeque::new(),
            main: None,
            dec: None,
            kv: KvLedger::new(cfg.gpu.kv_capacity_bytes),
            dkv: KvLedger::new(decode_gpu.kv_capacity_bytes),
            partition,
            controller: (engine == EngineKind::Nexus)
                .then(|| PartitionController::new(cfg.ctrl.clone(), partition)),
            events: Vec::new(),
            rejected: Vec::new(),
            timed_out: false,
        };
        for i in 0..trace.len() {
            let t = sim.reqs[i].arrival_s;
            sim.push(t, Ev::Arrival(i));
        }
        Ok(sim)
    }

    fn disagg(&self) -> bool {
        self.engine == EngineKind::EngineLevelDisagg
    }

    fn push(&mut self, time: f64, ev: Ev) {
        self.heap.push(Pending {
            time,
            seq: self.seq,
            ev,
        });
        self.seq += 1;
    }

    fn log_r_p(&self) -> u8 {
        match self.engine {
            EngineKind::Nexus | EngineKind::StaticPartition(_) => self.partition.r_p(),
            _ => 100,
        }
    }

    fn log(&mut self, lane: LaneKind, kind: EventKind, ids: Vec<u64>, latency: Option<f64>, tokens: Vec<u64>) {
        let kv_used = if lane == LaneKind::Decode && self.disagg() {
            self.dkv.used()
        } else {
            self.kv.used()
        };
        self.events.push(EventRecord {
            time: self.now,
            lane,
            event_kind: kind,
            request_ids: ids,
            r_p: self.log_r_p(),
            kv_used,
            latency,
            tokens,
        });
    }

    /// Peak tokens a request holds on the device that prefills it.
    fn prefill_footprint(&self, i: usize) -> u64 {
        let r = &self.reqs[i];
        if self.disagg() {
            r.prompt_len
        } else {
            r.prompt_len + r.output_len - 1
        }
    }

    fn full_footprint(&self, i: usize) -> u64 {
        let r = &self.reqs[i];
        r.prompt_len + r.output_len - 1
    }

    fn run(&mut self) -> Result<(), SimError> {
        let mut processed = 0u64;
        while let Some(p) = self.heap.pop() {
            if p.time > self.cfg.max_sim_time_s || processed >= self.cfg.max_events {
                self.timed_out = true;
                break;
            }
            processed += 1;
            self.now = p.time;
            match p.ev {
                Ev::Arrival(i) => self.on_arrival(i),
                Ev::Done(lane) => self.on_done(lane)?,
                Ev::Transferred(i) => self.on_transferred(i)?,
            }
            self.dispatch()?;
        }
        Ok(())
    }

    fn finish(self) -> SimOutcome {
        let switches = self.controller.as_ref().map_or(0, |c| c.switches());
        let decisions = self.controller.map(|c| c.into_log()).unwrap_or_default();
        SimOutcome {
            engine: self.engine,
            report: report_for(&self.reqs),
            requests: self.reqs,
            events: self.events,
            decisions,
            rejected: self.rejected,
            timed_out: self.timed_out,
            switches,
        }
    }

    fn on_arrival(&mut self, i: usize) {
        let r = &self.reqs[i];
        let (id, tokens) = (r.id, vec![r.prompt_len, r.output_len]);
        self.log(LaneKind::System, EventKind::Arrival, vec![id], None, tokens);
        let mut fits = self.prefill_footprint(i) * self.kvbpt <= self.kv.capacity();
        if self.disagg() {
            fits &= self.full_footprint(i) * self.kvbpt <= self.dkv.capacity();
        }
        if fits {
            self.waiting.push(i);
        } else {
            self.rejected.push(id);
            self.log(LaneKind::System, EventKind::Reject, vec![id], None, Vec::new());
        }
    }

    fn dispatch(&mut self) -> Result<(), SimError> {
        match self.engine {
            EngineKind::MonolithicChunked => {
                if self.main.is_none() {
                    self.launch_mixed()?;
                }
            }
            _ => {
                if self.main.is_none() {
                    self.launch_prefill()?;
                }
                if self.disagg() {
                    self.admit_transferred()?;
                }
                if self.dec.is_none() {
                    self.launch_decode()?;
                }
            }
        }
        Ok(())
    }

    /// Waiting requests that are admitted or could be admitted on their own.
    fn prefill_candidates(&self) -> Vec<PrefillQueueEntry> {
        self.waiting
            .iter()
            .filter(|&&i| {
                self.admitted[i] || self.kv.can_reserve(self.prefill_footprint(i) * self.kvbpt)
            })
            .map(|&i| {
                let r = &self.reqs[i];
                PrefillQueueEntry {
                    id: r.id,
                    arrival_s: r.arrival_s,
                    remaining: r.remaining_prompt(),
                }
            })
            .collect()
    }

    fn decode_entries(&self) -> Vec<DecodeEntry> {
        self.decoding
            .iter()
            .map(|&i| DecodeEntry {
                id: self.reqs[i].id,
                arrival_s: self.reqs[i].arrival_s,
            })
            .collect()
    }

    /// Reserves KV for new prefill members in plan order; the first one that
    /// no longer fits ends the prefill part of the batch.
    fn admit_plan(&mut self, plan: BatchPlan) -> Result<BatchPlan, SimError> {
        let mut kept = Vec::with_capacity(plan.members.len());
        let mut blocked = false;
        for m in plan.members {
            if m.phase == Phase::Prefill {
                if blocked {
                    continue;
                }
                let i = self.by_id[&m.id];
                if !self.admitted[i] {
                    let tokens = self.prefill_footprint(i);
                    if !self.kv.can_reserve(tokens * self.kvbpt) {
                        blocked = true;
                        continue;
                    }
                    kv_account(&mut self.kv, KvEvent::Admit { tokens }, self.kvbpt)?;
                    self.admitted[i] = true;
                }
            }
            kept.push(m);
        }
        Ok(BatchPlan::new(plan.phase, kept))
    }

    fn shape_of(&self, plan: &BatchPlan) -> (Vec<usize>, BatchShape, Vec<u64>) {
        let mut idx = Vec::with_capacity(plan.members.len());
        let mut shape = BatchShape::default();
        let mut tokens = Vec::with_capacity(plan.members.len());
        for m in &plan.members {
            let i = self.by_id[&m.id];
            let r = &self.reqs[i];
            idx.push(i);
            match m.phase {
                Phase::Prefill => {
                    shape.prefill_chunks.push((m.tokens, r.prefilled_len + m.tokens));
                    tokens.push(m.tokens);
                }
                Phase::Decode => {
                    shape.decode_contexts.push(r.cached_tokens());
                    tokens.push(r.cached_tokens());
                }
            }
        }
        (idx, shape, tokens)
    }

    fn mark_scheduled(&mut self, idx: &[usize], plan: &BatchPlan) {
        for (m, &i) in plan.members.iter().zip(idx) {
            if m.phase == Phase::Prefill && self.reqs[i].first_scheduled_s.is_none() {
                self.reqs[i].first_scheduled_s = Some(self.now);
            }
        }
    }

    fn would_be_decode_ops(&self) -> Result<Option<Vec<OperatorWorkload>>, SimError> {
        if self.decoding.is_empty() {
            return Ok(None);
        }
        let plan = fcfs_decode_schedule(&self.decode_entries(), self.cfg.ctrl.max_decode_batch);
        let (_, shape, _) = self.shape_of(&plan);
        Ok(Some(shape.workloads(&self.cfg.model)?))
    }

    /// Runs the controller and logs a switch; returns nothing, the new split
    /// is read from `self.partition`.
    fn decide(&mut self, prefill: Option<&[OperatorWorkload]>, decode: Option<&[OperatorWorkload]>) {
        let Some(ctl) = self.controller.as_mut() else {
            return;
        };
        let oracle = BatchCostOracle {
            cost: &self.cost,
            prefill,
            decode,
            contention: self.cfg.contention,
        };
        let d = ctl.decide(self.now, self.kv.used(), self.kv.capacity(), &oracle);
        self.partition = ctl.state();
        if d.switched {
            self.log(LaneKind::System, EventKind::Partition, Vec::new(), None, Vec::new());
        }
    }

    fn launch_prefill(&mut self) -> Result<(), SimError> {
        let queue = self.prefill_candidates();
        if queue.is_empty() {
            return Ok(());
        }
        let ctrl = &self.cfg.ctrl;
        let order = match (self.engine, ctrl.prefill_policy) {
            (EngineKind::EngineLevelDisagg, _) | (_, PrefillPolicy::Fcfs) => PrefillOrder::Fcfs,
            (_, PrefillPolicy::Spf) => PrefillOrder::Spf { gamma: ctrl.gamma },
        };
        let opts = PrefillOptions {
            budget: ctrl.token_budget,
            chunk_size: ctrl.chunk_size,
            skip_nonfitting: ctrl.skip_nonfitting,
        };
        let plan = self.admit_plan(prefill_schedule(&queue, order, opts, self.now))?;
        if plan.is_empty() {
            return Ok(());
        }
        let (idx, shape, tokens) = self.shape_of(&plan);
        let ops = shape.workloads(&self.cfg.model)?;

        if self.controller.is_some() {
            let decode_ops = match &self.dec {
                Some(f) => Some(f.ops.clone()),
                None => self.would_be_decode_ops()?,
            };
            self.decide(Some(&ops), decode_ops.as_deref());
        }
        let r_p = if self.disagg() { 100 } else { self.partition.r_p() };
        let breakdown = self.cost.phase_latency_isolated(&ops, f64::from(r_p) / 100.0)?;
        self.start(Lane::Main, LaneKind::Prefill, plan, idx, ops, breakdown, r_p, tokens);
        Ok(())
    }

    fn launch_decode(&mut self) -> Result<(), SimError> {
        if self.decoding.is_empty() {
            return Ok(());
        }
        let plan = fcfs_decode_schedule(&self.decode_entries(), self.cfg.ctrl.max_decode_batch);
        let (idx, shape, tokens) = self.shape_of(&plan);
        let ops = shape.workloads(&self.cfg.model)?;

        if self.controller.is_some() {
            let prefill_ops = self.main.as_ref().map(|f| f.ops.clone());
            self.decide(prefill_ops.as_deref(), Some(&ops));
        }
        let (r_d, cost) = if self.disagg() {
            (100, &self.decode_cost)
        } else {
            (self.partition.r_d(), &self.cost)
        };
        let r = f64::from(r_d) / 100.0;
        let breakdown = match (&self.main, self.cfg.contention && !self.disagg()) {
            (Some(f), true) => cost.decode_latency_contended(
                &ops,
                r,
                Some(ConcurrentPrefill {
                    breakdown: &f.breakdown,
                    ops: &f.ops,
                }),
            )?,
            _ => cost.phase_latency_isolated(&ops, r)?,
        };
        let r_p = 100 - r_d;
        self.start(Lane::Decode, LaneKind::Decode, plan, idx, ops, breakdown, r_p, tokens);
        Ok(())
    }

    fn launch_mixed(&mut self) -> Result<(), SimError> {
        let queue = self.prefill_candidates();
        if queue.is_empty() && self.decoding.is_empty() {
            return Ok(());
        }
        let ctrl = &self.cfg.ctrl;
        let plan = chunked_mixed_schedule(
            &queue,
            &self.decode_entries(),
            ctrl.token_budget,
            ctrl.max_decode_batch,
            ctrl.chunk_size,
        );
        let plan = self.admit_plan(plan)?;
        if plan.is_empty() {
            return Ok(());
        }
        let (idx, shape, tokens) = self.shape_of(&plan);
        let ops = shape.workloads(&self.cfg.model)?;
        let breakdown = self.cost.phase_latency_isolated(&ops, 1.0)?;
        self.start(Lane::Main, LaneKind::Mixed, plan, idx, ops, breakdown, 100, tokens);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn start(
        &mut self,
        lane: Lane,
        kind: LaneKind,
        plan: BatchPlan,
        idx: Vec<usize>,
        ops: Vec<OperatorWorkload>,
        breakdown: PhaseLatencyBreakdown,
        r_p: u8,
        tokens: Vec<u64>,
    ) {
        self.mark_scheduled(&idx, &plan);
        let latency = breakdown.total_s;
        self.log(kind, EventKind::Launch, plan.ids(), Some(latency), tokens);
        let f = InFlight {
            plan,
            idx,
            ops,
            breakdown,
            r_p,
        };
        match lane {
            Lane::Main => self.main = Some(f),
            Lane::Decode => self.dec = Some(f),
        }
        self.push(self.now + latency, Ev::Done(lane));
    }

    fn on_done(&mut self, lane: Lane) -> Result<(), SimError> {
        let f = match lane {
            Lane::Main => self.main.take(),
            Lane::Decode => self.dec.take(),
        }
        .expect("completion for an idle lane");
        let kind = match (lane, f.plan.phase) {
            (Lane::Decode, _) => LaneKind::Decode,
            (Lane::Main, BatchPhase::Prefill) => LaneKind::Prefill,
            (Lane::Main, _) => LaneKind::Mixed,
        };
        debug_assert!(f.r_p <= 100);
        self.log(kind, EventKind::Complete, f.plan.ids(), Some(f.breakdown.total_s), Vec::new());

        let kvbpt = self.kvbpt;
        let mut emitted = Vec::new();
        let mut finished = Vec::new();
        for (m, &i) in f.plan.members.iter().zip(&f.idx) {
            match m.phase {
                Phase::Prefill => {
                    self.reqs[i].prefilled_len += m.tokens;
                    kv_account(&mut self.kv, KvEvent::Store { tokens: m.tokens }, kvbpt)?;
                    if !self.reqs[i].is_prefilled() {
                        continue;
                    }
                    self.waiting.retain(|&w| w != i);
                    self.reqs[i].emit(self.now);
                    emitted.push(self.reqs[i].id);
                    if self.reqs[i].is_finished() {
                        self.release(i, false)?;
                        finished.push(self.reqs[i].id);
                    } else if self.disagg() {
                        self.start_transfer(i);
                    } else {
                        self.enqueue_decode(i);
                    }
                }
                Phase::Decode => {
                    self.reqs[i].decoded_len += 1;
                    let ledger = if self.disagg() { &mut self.dkv } else { &mut self.kv };
                    kv_account(ledger, KvEvent::DecodeToken, kvbpt)?;
                    self.reqs[i].emit(self.now);
                    emitted.push(self.reqs[i].id);
                    if self.reqs[i].is_finished() {
                        self.decoding.retain(|&d| d != i);
                        self.release(i, self.disagg())?;
                        finished.push(self.reqs[i].id);
                    }
                }
            }
        }
        if !emitted.is_empty() {
            self.log(kind, EventKind::Token, emitted, None, Vec::new());
        }
        if !finished.is_empty() {
            self.log(kind, EventKind::Finish, finished, None, Vec::new());
        }
        Ok(())
    }

    /// Frees a finished request's KV on the prefill or the decode device.
    fn release(&mut self, i: usize, on_decode_device: bool) -> Result<(), SimError> {
        let stored = self.reqs[i].cached_tokens();
        if on_decode_device {
            let reserved = self.full_footprint(i);
            kv_account(&mut self.dkv, KvEvent::Release { stored, reserved }, self.kvbpt)?;
        } else {
            let reserved = self.prefill_footprint(i);
            kv_account(&mut self.kv, KvEvent::Release { stored, reserved }, self.kvbpt)?;
        }
        Ok(())
    }

    fn enqueue_decode(&mut self, i: usize) {
        let key = |j: usize| (self.reqs[j].arrival_s, self.reqs[j].id);
        let (a, id) = key(i);
        let pos = self.decoding.partition_point(|&j| {
            let (b, jd) = key(j);
            b.total_cmp(&a).then(jd.cmp(&id)) == Ordering::Less
        });
        self.decoding.insert(pos, i);
    }

    fn start_transfer(&mut self, i: usize) {
        let bytes = (self.reqs[i].prompt_len * self.kvbpt) as f64;
        let t = self.cfg.transfer.base_s
            + bytes / (self.cfg.transfer.bandwidth_fraction * self.cfg.gpu.peak_bandwidth);
        let id = self.reqs[i].id;
        self.log(LaneKind::Transfer, EventKind::Launch, vec![id], Some(t), Vec::new());
        self.push(self.now + t, Ev::Transferred(i));
    }

    fn on_transferred(&mut self, i: usize) -> Result<(), SimError> {
        let prompt = self.reqs[i].prompt_len;
        kv_account(
            &mut self.kv,
            KvEvent::Release {
                stored: prompt,
                reserved: prompt,
            },
            self.kvbpt,
        )?;
        let id = self.reqs[i].id;
        self.log(LaneKind::Transfer, EventKind::Complete, vec![id], None, Vec::new());
        self.buffer.push_back(i);
        Ok(())
    }

    /// Moves transferred requests onto the decode device in arrival order of
    /// transfer, stalling at the first that does not fit.
    fn admit_transferred(&mut self) -> Result<(), SimError> {
        while let Some(&i) = self.buffer.front() {
            let tokens = self.full_footprint(i);
            if !self.dkv.can_reserve(tokens * self.kvbpt) {
                break;
            }
            self.buffer.pop_front();
            kv_account(&mut self.dkv, KvEvent::Admit { tokens }, self.kvbpt)?;
            let prompt = self.reqs[i].prompt_len;
            kv_account(&mut self.dkv, KvEvent::Store { tokens: prompt }, self.kvbpt)?;
            self.enqueue_decode(i);
        }
        Ok(())
    }
}
