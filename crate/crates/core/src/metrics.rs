//! Per-request latency metrics and their aggregation.
//!
//! Percentiles use the nearest-rank convention: the `p`-th percentile of `n`
//! sorted values is the value at rank `ceil(p / 100 * n)`. TBT is pooled over
//! every inter-token gap of every request (token-weighted); the mean of
//! per-request TBT means is reported alongside.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Request;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("request {0} has not finished")]
    Incomplete(u64),
    #[error("no completed requests to aggregate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub id: u64,
    pub ttft_s: f64,
    pub tbt_s: Vec<f64>,
    pub e2e_s: f64,
    pub normalized_s_per_token: f64,
    /// Arrival to first prefill launch.
    pub queue_delay_s: f64,
    pub output_len: u64,
}

pub fn compute_request_metrics(req: &Request) -> Result<RequestMetrics, MetricsError> {
    let (Some(first), Some(finish)) = (req.first_token_s, req.finish_s) else {
        return Err(MetricsError::Incomplete(req.id));
    };
    if req.emissions.is_empty() || req.emissions.len() as u64 != req.output_len {
        return Err(MetricsError::Incomplete(req.id));
    }
    let tbt_s = req.emissions.windows(2).map(|w| w[1] - w[0]).collect();
    let e2e_s = finish - req.arrival_s;
    Ok(RequestMetrics {
        id: req.id,
        ttft_s: first - req.arrival_s,
        tbt_s,
        e2e_s,
        normalized_s_per_token: e2e_s / req.output_len as f64,
        queue_delay_s: req.first_scheduled_s.unwrap_or(first) - req.arrival_s,
        output_len: req.output_len,
    })
}

/// Mean and nearest-rank percentiles of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of already sorted values.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Summary {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p50: nearest_rank(&sorted, 50.0),
            p95: nearest_rank(&sorted, 95.0),
            p99: nearest_rank(&sorted, 99.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub completed: usize,
    pub ttft: Summary,
    /// Pooled over all inter-token gaps; `None` if every request emitted one token.
    pub tbt: Option<Summary>,
    pub tbt_per_request: Option<Summary>,
    pub e2e: Summary,
    pub normalized: Summary,
    pub queue_delay: Summary,
    pub throughput_rps: f64,
    pub makespan_s: f64,
    #[serde(skip)]
    pub requests: Vec<RequestMetrics>,
}

/// Aggregates per-request metrics. `first_arrival_s` anchors the makespan.
pub fn aggregate(reports: &[RequestMetrics], first_arrival_s: f64, last_finish_s: f64) -> Result<MetricsReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let col = |f: fn(&RequestMetrics) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.tbt_s.iter().copied()).collect();
    let per_request: Vec<f64> = reports
        .iter()
        .filter(|r| !r.tbt_s.is_empty())
        .map(|r| r.tbt_s.iter().sum::<f64>() / r.tbt_s.len() as f64)
        .collect();
    let makespan_s = last_finish_s - first_arrival_s;
    Ok(MetricsReport {
        completed: reports.len(),
        ttft: Summary::of(&col(|r| r.ttft_s)).unwrap(),
        tbt: Summary::of(&pooled),
        tbt_per_request: Summary::of(&per_request),
        e2e: Summary::of(&col(|r| r.e2e_s)).unwrap(),
        normalized: Summary::of(&col(|r| r.normalized_s_per_token)).unwrap(),
        queue_delay: Summary::of(&col(|r| r.queue_delay_s)).unwrap(),
        throughput_rps: if makespan_s > 0.0 {
            reports.len() as f64 / makespan_s
        } else {
            0.0
        },
        makespan_s,
        requests: reports.to_vec(),
    })
}

/// Metrics of every finished request in `requests`; unfinished ones are
/// left out. `None` when nothing finished.
pub fn report_for(requests: &[Request]) -> Option<MetricsReport> {
    let done: Vec<RequestMetrics> = requests
        .iter()
        .filter_map(|r| compute_request_metrics(r).ok())
        .collect();
    let first = requests
        .iter()
        .map(|r| r.arrival_s)
        .fold(f64::INFINITY, f64::min);
    let last = requests
        .iter()
        .filter_map(|r| r.finish_s)
        .fold(f64::NEG_INFINITY, f64::max);
    aggregate(&done, first, last).ok()
}

impl MetricsReport {
    /// Rows of `engine,metric,stat,value` for plotting.
    pub fn plot_rows(&self, engine: &str) -> Vec<(String, String, String, f64)> {
        let mut rows = Vec::new();
        let mut push = |metric: &str, s: &Summary| {
            for (stat, v) in [("mean", s.mean), ("p50", s.p50), ("p95", s.p95), ("p99", s.p99)] {
                rows.push((engine.to_string(), metric.to_string(), stat.to_string(), v));
            }
        };
        push("ttft_s", &self.ttft);
        if let Some(t) = &self.tbt {
            push("tbt_s", t);
        }
        push("e2e_s", &self.e2e);
        push("normalized_s_per_token", &self.normalized);
        push("queue_delay_s", &self.queue_delay);
        rows.push((engine.into(), "throughput_rps".into(), "value".into(), self.throughput_rps));
        rows.push((engine.into(), "makespan_s".into(), "value".into(), self.makespan_s));
        rows
    }
}

pub fn write_plot_data<W: Write>(
    mut w: W,
    rows: &[(String, String, String, f64)],
) -> std::io::Result<()> {
    writeln!(w, "engine,metric,stat,value")?;
    for (engine, metric, stat, v) in rows {
        writeln!(w, "{engine},{metric},{stat},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn finished(id: u64, arrival: f64, tokens: &[f64]) -> Request {
        let mut r = Request::new(id, arrival, 10, tokens.len() as u64);
        r.prefilled_len = 10;
        for &t in tokens {
            r.emit(t);
        }
        r.decoded_len = tokens.len() as u64 - 1;
        r
    }

    #[test]
    fn three_token_request() {
        let m = compute_request_metrics(&finished(0, 0.0, &[0.5, 0.6, 0.7])).unwrap();
        assert_eq!(m.ttft_s, 0.5);
        assert_eq!(m.tbt_s.len(), 2);
        assert_relative_eq!(m.tbt_s[0], 0.1, max_relative = 1e-12);
        assert_relative_eq!(m.tbt_s[1], 0.1, max_relative = 1e-12);
        assert_relative_eq!(m.normalized_s_per_token, 0.7 / 3.0);
    }

    #[test]
    fn single_token_has_no_gaps() {
        let m = compute_request_metrics(&finished(0, 1.0, &[1.5])).unwrap();
        assert!(m.tbt_s.is_empty());
        assert_eq!(m.e2e_s, 0.5);
    }

    #[test]
    fn incomplete_rejected() {
        let r = Request::new(3, 0.0, 10, 5);
        assert_eq!(compute_request_metrics(&r), Err(MetricsError::Incomplete(3)));
        assert_eq!(aggregate(&[], 0.0, 0.0), Err(MetricsError::Empty));
    }

    #[test]
    fn nearest_rank_convention() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = Summary::of(&v).unwrap();
        assert_eq!((s.p50, s.p95, s.p99), (50.0, 95.0, 99.0));
        let s = Summary::of(&[4.2; 100]).unwrap();
        assert_relative_eq!(s.mean, 4.2, max_relative = 1e-12);
        assert_eq!(s.p95, 4.2);
    }

    /// Independent percentile: count how many values are <= candidate.
    fn oracle_percentile(values: &[f64], p: f64) -> f64 {
        let n = values.len();
        let need = (p / 100.0 * n as f64).ceil().max(1.0) as usize;
        let mut best = f64::INFINITY;
        for &c in values {
            let le = values.iter().filter(|&&x| x <= c).count();
            if le >= need && c < best {
                best = c;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn percentiles_match_oracle(values in proptest::collection::vec(0.0f64..1e3, 1..200)) {
            let s = Summary::of(&values).unwrap();
            prop_assert_eq!(s.p50, oracle_percentile(&values, 50.0));
            prop_assert_eq!(s.p95, oracle_percentile(&values, 95.0));
            prop_assert_eq!(s.p99, oracle_percentile(&values, 99.0));
            prop_assert!(s.p50 <= s.p95 && s.p95 <= s.p99);
        }

        #[test]
        fn pooled_tbt_is_token_weighted(
            gaps in proptest::collection::vec(proptest::collection::vec(0.001f64..1.0, 0..20), 1..20),
            ttft in 0.0f64..5.0,
        ) {
            let reqs: Vec<Request> = gaps.iter().enumerate().map(|(i, g)| {
                let mut t = ttft;
                let mut ts = vec![t];
                for x in g { t += x; ts.push(t); }
                finished(i as u64, 0.0, &ts)
            }).collect();
            let ms: Vec<_> = reqs.iter().map(|r| compute_request_metrics(r).unwrap()).collect();
            let rep = aggregate(&ms, 0.0, 1.0).unwrap();
            let total: f64 = gaps.iter().flatten().sum();
            let count: usize = gaps.iter().map(Vec::len).sum();
            match rep.tbt {
                Some(t) => prop_assert!((t.mean - total / count as f64).abs() <= 1e-9),
                None => prop_assert_eq!(count, 0),
            }
            for m in &ms {
                prop_assert!(m.ttft_s <= m.e2e_s);
                if m.output_len >= 2 {
                    let mean_tbt = m.tbt_s.iter().sum::<f64>() / m.tbt_s.len() as f64;
                    prop_assert!(m.normalized_s_per_token >= mean_tbt * (m.output_len as f64 - 1.0) / m.output_len as f64 - 1e-12);
                }
            }
        }
    }
}
