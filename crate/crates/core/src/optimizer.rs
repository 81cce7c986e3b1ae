//! SM split selection.
//!
//! The controller prioritizes one phase by KV pressure, then walks that
//! phase's share with unit steps: down until the other phase's latency fits
//! its slack budget, then up while it still fits. A hysteresis band around the
//! last applied split filters out small moves.

use serde::{Deserialize, Serialize};

use crate::domain::{ControllerConfig, PartitionState, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    PrefillPrioritized,
    DecodePrioritized,
}

impl ObjectiveMode {
    /// The phase whose share the search maximizes.
    pub fn target(self) -> Phase {
        match self {
            ObjectiveMode::PrefillPrioritized => Phase::Prefill,
            ObjectiveMode::DecodePrioritized => Phase::Decode,
        }
    }
}

/// Decode is prioritized only when usage strictly exceeds the switch point.
pub fn select_mode(kv_used_bytes: u64, kv_capacity_bytes: u64, kv_switch_fraction: f64) -> ObjectiveMode {
    if kv_used_bytes as f64 > kv_switch_fraction * kv_capacity_bytes as f64 {
        ObjectiveMode::DecodePrioritized
    } else {
        ObjectiveMode::PrefillPrioritized
    }
}

/// Latency predictions for the batches currently under consideration.
pub trait PhaseLatencyOracle {
    /// Predicted latency of `phase` when it holds `share_pct` percent of SMs.
    fn latency(&self, phase: Phase, share_pct: u8) -> f64;

    /// Reference latency with all SMs.
    fn min_latency(&self, phase: Phase) -> f64;

    /// Whether `phase` has a batch to run at all.
    fn has_work(&self, phase: Phase) -> bool;
}

/// Result of one greedy search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjustment {
    pub r_p: u8,
    pub r_d: u8,
    /// No split kept the other phase within its slack; the other phase got 99%.
    pub infeasible: bool,
    /// Cost-model queries issued, including the reference latency.
    pub queries: u32,
}

impl Adjustment {
    fn with_target_share(target: Phase, share: u8, infeasible: bool, queries: u32) -> Self {
        let (r_p, r_d) = match target {
            Phase::Prefill => (share, 100 - share),
            Phase::Decode => (100 - share, share),
        };
        Adjustment {
            r_p,
            r_d,
            infeasible,
            queries,
        }
    }
}

/// Largest share for `target` that keeps the other phase within
/// `slack * T_min`, searched from the current split.
pub fn adjust_partition(
    target: Phase,
    cur: &PartitionState,
    cfg: &ControllerConfig,
    oracle: &impl PhaseLatencyOracle,
) -> Adjustment {
    let other = target.other();
    if !oracle.has_work(other) {
        return Adjustment::with_target_share(target, PartitionState::MAX_SHARE, false, 0);
    }
    let slack = match target {
        Phase::Prefill => cfg.beta,
        Phase::Decode => cfg.alpha,
    };
    let limit = slack * oracle.min_latency(other);
    let mut queries = 1;
    let mut fits = |share: u8| {
        queries += 1;
        oracle.latency(other, 100 - share) <= limit
    };

    let mut r = cur.share(target);
    while !fits(r) {
        if r == PartitionState::MIN_SHARE {
            return Adjustment::with_target_share(target, r, true, queries);
        }
        r -= 1;
    }
    while r < PartitionState::MAX_SHARE && fits(r + 1) {
        r += 1;
    }
    Adjustment::with_target_share(target, r, false, queries)
}

/// One controller call's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionDecision {
    pub r_p: u8,
    pub r_d: u8,
    pub mode: ObjectiveMode,
    pub candidate_r_p: u8,
    pub switched: bool,
    pub infeasible: bool,
    pub iterations_searched: u32,
}

/// Audit record written to the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub kv_frac: f64,
    pub mode: ObjectiveMode,
    pub candidate_r_p: u8,
    pub applied_r_p: u8,
    pub switched: bool,
    pub queries: u32,
}

/// Stateful split controller; owns the applied partition.
#[derive(Debug, Clone)]
pub struct PartitionController {
    cfg: ControllerConfig,
    state: PartitionState,
    log: Vec<DecisionRecord>,
}

impl PartitionController {
    pub fn new(cfg: ControllerConfig, initial: PartitionState) -> Self {
        PartitionController {
            cfg,
            state: initial,
            log: Vec::new(),
        }
    }

    pub fn state(&self) -> PartitionState {
        self.state
    }

    pub fn log(&self) -> &[DecisionRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<DecisionRecord> {
        self.log
    }

    pub fn switches(&self) -> usize {
        self.log.iter().filter(|r| r.switched).count()
    }

    pub fn decide(
        &mut self,
        now: f64,
        kv_used: u64,
        kv_capacity: u64,
        oracle: &impl PhaseLatencyOracle,
    ) -> PartitionDecision {
        let mode = select_mode(kv_used, kv_capacity, self.cfg.kv_switch_fraction);
        let cur = self.state;
        let (candidate, infeasible, queries) = if oracle.has_work(mode.target()) {
            let adj = adjust_partition(mode.target(), &cur, &self.cfg, oracle);
            (adj.r_p, adj.infeasible, adj.queries)
        } else {
            (cur.r_p(), false, 0)
        };

        let moved = candidate.abs_diff(cur.last_applied_r_p());
        let switched = candidate != cur.r_p() && moved >= self.cfg.delta;
        if switched {
            self.state
                .apply(candidate)
                .expect("search keeps shares within [1, 99]");
        }

        self.log.push(DecisionRecord {
            time: now,
            kv_frac: kv_used as f64 / kv_capacity as f64,
            mode,
            candidate_r_p: candidate,
            applied_r_p: self.state.r_p(),
            switched,
            queries,
        });
        PartitionDecision {
            r_p: self.state.r_p(),
            r_d: self.state.r_d(),
            mode,
            candidate_r_p: candidate,
            switched,
            infeasible,
            iterations_searched: queries,
        }
    }
}
