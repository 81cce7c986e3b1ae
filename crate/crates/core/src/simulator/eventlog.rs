//! Line-delimited event log and metric replay.
//!
//! Each line is one JSON object:
//!
//! | key          | meaning                                                  |
//! |--------------|----------------------------------------------------------|
//! | `time`       | simulated seconds                                        |
//! | `lane`       | `system`, `prefill`, `decode`, `mixed` or `transfer`     |
//! | `event_kind` | `arrival`, `reject`, `launch`, `complete`, `token`, `finish`, `partition` |
//! | `request_ids`| requests involved, in batch order                        |
//! | `r_p`        | prefill SM percent in force (100 for single-lane engines)|
//! | `kv_used`    | KV bytes in use on the lane's device after the event     |
//! | `latency`    | predicted batch latency (`launch`/`complete` only)       |
//! | `tokens`     | `arrival`: `[prompt, output]`; `launch`: chunk tokens of prefill members, context length of decode members |
//!
//! Replaying `arrival`, `launch`, `token` and `finish` records reconstructs
//! every request's timeline, and with it the metrics report.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::Request;
use crate::metrics::{report_for, MetricsReport};
use crate::workload::WorkloadError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneKind {
    System,
    Prefill,
    Decode,
    Mixed,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Arrival,
    Reject,
    Launch,
    Complete,
    Token,
    Finish,
    Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub lane: LaneKind,
    pub event_kind: EventKind,
    pub request_ids: Vec<u64>,
    pub r_p: u8,
    pub kv_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<u64>,
}

pub fn write_events<W: Write>(mut w: W, events: &[EventRecord]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<EventRecord>, WorkloadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Rebuilds request timelines from a log.
pub fn replay_requests(events: &[EventRecord]) -> Result<Vec<Request>, String> {
    let mut reqs: Vec<Request> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let lookup = |index: &HashMap<u64, usize>, id: u64| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| format!("event references unknown request {id}"))
    };
    for e in events {
        match e.event_kind {
            EventKind::Arrival => {
                let id = e.request_ids[0];
                let [prompt, output] = e.tokens[..] else {
                    return Err(format!("arrival of {id} lacks [prompt, output]"));
                };
                index.insert(id, reqs.len());
                reqs.push(Request::new(id, e.time, prompt, output));
            }
            EventKind::Launch if e.lane != LaneKind::Transfer => {
                for (k, &id) in e.request_ids.iter().enumerate() {
                    let r = &mut reqs[lookup(&index, id)?];
                    let is_prefill = r.prefilled_len < r.prompt_len
                        && matches!(e.lane, LaneKind::Prefill | LaneKind::Mixed);
                    if is_prefill {
                        if r.first_scheduled_s.is_none() {
                            r.first_scheduled_s = Some(e.time);
                        }
                        r.prefilled_len += e.tokens.get(k).copied().unwrap_or(0);
                    }
                }
            }
            EventKind::Token => {
                for &id in &e.request_ids {
                    let i = lookup(&index, id)?;
                    reqs[i].emit(e.time);
                }
            }
            EventKind::Finish => {
                for &id in &e.request_ids {
                    let i = lookup(&index, id)?;
                    reqs[i].finish_s = Some(e.time);
                }
            }
            _ => {}
        }
    }
    Ok(reqs)
}

/// Metrics derived from a log alone.
pub fn replay(events: &[EventRecord]) -> Result<Option<MetricsReport>, String> {
    Ok(report_for(&replay_requests(events)?))
}
