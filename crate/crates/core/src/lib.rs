//! smsplit: intra-GPU prefill/decode SM partitioning, simulated.
//!
//! The crate models a single GPU whose streaming multiprocessors are split
//! between a prefill lane and a decode lane running concurrently. A roofline
//! style cost model with compute saturation and decode-side bandwidth
//! contention predicts per-iteration latency for any split; a greedy
//! controller picks the split per batch; phase-specific schedulers form the
//! batches. Baseline engines (monolithic chunked prefill, a static split, and
//! two-device disaggregation) run on the same event loop for comparison.
//!
//! ```text
//!  workload ──▶ simulator ──▶ metrics
//!                  │
//!        ┌─────────┼───────────┐
//!        ▼         ▼           ▼
//!   schedulers  optimizer  costmodel ◀── opcost
//! ```

pub mod cli;
pub mod costmodel;
pub mod domain;
pub mod metrics;
pub mod opcost;
pub mod optimizer;
pub mod schedulers;
pub mod simulator;
pub mod workload;

pub use costmodel::{
    compute_latency, effective_decode_bandwidth, p_attn, Bound, ContentionContext, CostModel,
    OpLatency, PhaseLatencyBreakdown,
};
pub use domain::{
    validate_config, ControllerConfig, GpuSpec, InvalidField, KernelProfile, ModelConfig,
    PartitionState, Phase, PrefillPolicy, Request, SaturationCurve, ValidatedConfig,
};
pub use metrics::{aggregate, compute_request_metrics, MetricsReport, RequestMetrics, Summary};
pub use opcost::{OperatorKind, OperatorWorkload};
pub use optimizer::{
    adjust_partition, select_mode, Adjustment, ObjectiveMode, PartitionController,
    PartitionDecision, PhaseLatencyOracle,
};
pub use schedulers::{BatchMember, BatchPhase, BatchPlan, PrefillQueueEntry};
pub use simulator::{run, EngineKind, SimConfig, SimOutcome};
pub use workload::{LengthDist, WorkloadSpec};
