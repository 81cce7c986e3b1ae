//! Batch formation: prefill (SPF with age credit, or FCFS), decode (FCFS),
//! and the fused chunked batch of the monolithic baseline.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::Phase;

/// A request waiting for (more) prefill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefillQueueEntry {
    pub id: u64,
    pub arrival_s: f64,
    /// Prompt tokens not yet prefilled.
    pub remaining: u64,
}

impl PrefillQueueEntry {
    /// `remaining - gamma * age`, lower is scheduled first.
    pub fn score(&self, gamma: f64, now: f64) -> f64 {
        self.remaining as f64 - gamma * (now - self.arrival_s)
    }
}

/// A request in the decode phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeEntry {
    pub id: u64,
    pub arrival_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchPhase {
    Prefill,
    Decode,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchMember {
    pub id: u64,
    pub tokens: u64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub phase: BatchPhase,
    pub members: Vec<BatchMember>,
    pub total_tokens: u64,
}

impl BatchPlan {
    pub fn new(phase: BatchPhase, members: Vec<BatchMember>) -> Self {
        let total_tokens = members.iter().map(|m| m.tokens).sum();
        BatchPlan {
            phase,
            members,
            total_tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.id).collect()
    }
}

/// Prefill ordering and fill options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefillOptions {
    pub budget: u64,
    /// Per-request cap on tokens taken in one batch.
    pub chunk_size: u64,
    /// Keep scanning past a request that does not fit.
    pub skip_nonfitting: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrefillOrder {
    Spf { gamma: f64 },
    Fcfs,
}

fn arrival_then_id(a: &PrefillQueueEntry, b: &PrefillQueueEntry) -> Ordering {
    a.arrival_s.total_cmp(&b.arrival_s).then(a.id.cmp(&b.id))
}

/// Orders the queue by `(score, arrival, id)` or `(arrival, id)`.
pub fn order_prefill_queue(queue: &[PrefillQueueEntry], order: PrefillOrder, now: f64) -> Vec<PrefillQueueEntry> {
    let mut sorted = queue.to_vec();
    match order {
        PrefillOrder::Spf { gamma } => sorted.sort_by(|a, b| {
            a.score(gamma, now)
                .total_cmp(&b.score(gamma, now))
                .then_with(|| arrival_then_id(a, b))
        }),
        PrefillOrder::Fcfs => sorted.sort_by(arrival_then_id),
    }
    sorted
}

/// Greedy prefill fill over an ordered queue.
///
/// Entries are taken whole while the running total stays within the budget;
/// the first entry that does not fit ends the batch unless
/// `skip_nonfitting` is set. An entry larger than the budget at the head of
/// an empty batch contributes one budget-sized chunk.
pub fn prefill_schedule(
    queue: &[PrefillQueueEntry],
    order: PrefillOrder,
    opts: PrefillOptions,
    now: f64,
) -> BatchPlan {
    assert!(opts.budget >= 1, "prefill budget must be positive");
    let mut members = Vec::new();
    let mut total = 0u64;
    for e in order_prefill_queue(queue, order, now) {
        let want = e.remaining.min(opts.chunk_size);
        if want == 0 {
            continue;
        }
        if total + want <= opts.budget {
            members.push(BatchMember {
                id: e.id,
                tokens: want,
                phase: Phase::Prefill,
            });
            total += want;
        } else if members.is_empty() {
            members.push(BatchMember {
                id: e.id,
                tokens: opts.budget,
                phase: Phase::Prefill,
            });
            break;
        } else if !opts.skip_nonfitting {
            break;
        }
    }
    BatchPlan::new(BatchPhase::Prefill, members)
}

/// Shortest-remaining-prompt-first with age credit `gamma` tokens/second.
pub fn spf_schedule(queue: &[PrefillQueueEntry], budget: u64, gamma: f64, now: f64) -> BatchPlan {
    prefill_schedule(
        queue,
        PrefillOrder::Spf { gamma },
        PrefillOptions {
            budget,
            chunk_size: u64::MAX,
            skip_nonfitting: false,
        },
        now,
    )
}

/// The `max_batch` earliest arrivals, one token each; ties by id.
pub fn fcfs_decode_schedule(active: &[DecodeEntry], max_batch: usize) -> BatchPlan {
    let mut sorted = active.to_vec();
    sorted.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.id.cmp(&b.id)));
    let members = sorted
        .into_iter()
        .take(max_batch)
        .map(|e| BatchMember {
            id: e.id,
            tokens: 1,
            phase: Phase::Decode,
        })
        .collect();
    BatchPlan::new(BatchPhase::Decode, members)
}

/// One fused iteration: decode tokens first, then prefill chunks in arrival
/// order until the budget is spent.
pub fn chunked_mixed_schedule(
    prefill_queue: &[PrefillQueueEntry],
    active_decodes: &[DecodeEntry],
    budget: u64,
    max_batch: usize,
    chunk_size: u64,
) -> BatchPlan {
    let decode = fcfs_decode_schedule(active_decodes, max_batch.min(budget as usize));
    let mut members = decode.members;
    let mut left = budget - members.len() as u64;
    for e in order_prefill_queue(prefill_queue, PrefillOrder::Fcfs, 0.0) {
        if left == 0 {
            break;
        }
        let take = e.remaining.min(chunk_size).min(left);
        if take == 0 {
            continue;
        }
        members.push(BatchMember {
            id: e.id,
            tokens: take,
            phase: Phase::Prefill,
        });
        left -= take;
    }
    let phase = if members.iter().any(|m| m.phase == Phase::Prefill) {
        BatchPhase::Mixed
    } else {
        BatchPhase::Decode
    };
    BatchPlan::new(phase, members)
}
