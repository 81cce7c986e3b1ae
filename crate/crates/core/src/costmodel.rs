//! Iteration latency under an SM share.
//!
//! Each operator costs `max(compute, memory)`. Compute time follows a
//! two-regime curve: inverse scaling up to the saturation share `r_sat`, then
//! a linear penalty with slope `lambda`. Memory time uses peak bandwidth,
//! except decode attention running next to a prefill batch, which sees the
//! effective bandwidth left over by prefill traffic. Contention is one-sided:
//! prefill never sees decode traffic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{GpuSpec, KernelProfile, SaturationCurve};
use crate::opcost::{sum_where, OperatorKind, OperatorWorkload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("SM share {0} outside (0, 1]")]
    InvalidShare(f64),
    #[error("negative FLOP count {0}")]
    NegativeFlops(f64),
    #[error("decode attention traffic must be positive")]
    NoDecodeTraffic,
}

/// Compute latency of `flops` at SM share `r`.
pub fn compute_latency(
    flops: f64,
    r: f64,
    curve: SaturationCurve,
    peak_flops: f64,
) -> Result<f64, CostError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(CostError::InvalidShare(r));
    }
    if flops < 0.0 {
        return Err(CostError::NegativeFlops(flops));
    }
    if r <= curve.r_sat {
        Ok(flops / (r * peak_flops))
    } else {
        Ok(flops / (curve.r_sat * peak_flops) * (1.0 + curve.lambda * (r - curve.r_sat)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpLatency {
    pub kind: OperatorKind,
    pub compute_s: f64,
    pub mem_s: f64,
    pub bound: Bound,
}

impl OpLatency {
    fn new(kind: OperatorKind, compute_s: f64, mem_s: f64) -> Self {
        let bound = if mem_s > compute_s {
            Bound::Memory
        } else {
            Bound::Compute
        };
        OpLatency {
            kind,
            compute_s,
            mem_s,
            bound,
        }
    }

    pub fn latency(&self) -> f64 {
        self.compute_s.max(self.mem_s)
    }
}

/// Per-operator latencies of one phase iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLatencyBreakdown {
    pub ops: Vec<OpLatency>,
    pub total_s: f64,
    /// Time spent in memory-bound attention operators.
    pub attn_mem_time_s: f64,
}

impl PhaseLatencyBreakdown {
    fn from_ops(ops: Vec<OpLatency>) -> Self {
        let total_s = ops.iter().map(OpLatency::latency).sum();
        let attn_mem_time_s = ops
            .iter()
            .filter(|o| o.kind.is_attention() && o.bound == Bound::Memory)
            .map(OpLatency::latency)
            .sum();
        PhaseLatencyBreakdown {
            ops,
            total_s,
            attn_mem_time_s,
        }
    }

    pub fn empty() -> Self {
        Self::from_ops(Vec::new())
    }
}

/// Fraction of a prefill iteration spent in memory-bound attention; zero
/// when no prefill is running.
pub fn p_attn(prefill: &PhaseLatencyBreakdown) -> f64 {
    if prefill.total_s > 0.0 {
        prefill.attn_mem_time_s / prefill.total_s
    } else {
        0.0
    }
}

/// Bandwidth left to decode attention while prefill runs alongside.
///
/// Each overlap window is assumed to saturate bandwidth, which is then split
/// in proportion to traffic: against prefill attention with probability
/// `p_attn`, against prefill dense weights otherwise.
pub fn effective_decode_bandwidth(
    m_d: f64,
    m_p1: f64,
    m_p2: f64,
    p_attn: f64,
    bandwidth: f64,
) -> Result<f64, CostError> {
    if !(m_d > 0.0) {
        return Err(CostError::NoDecodeTraffic);
    }
    let attn_share = m_d / (m_d + m_p1);
    let dense_share = m_d / (m_d + m_p2);
    Ok(attn_share * p_attn * bandwidth + dense_share * (1.0 - p_attn) * bandwidth)
}

/// Traffic figures that determine decode's effective bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionContext {
    pub p_attn: f64,
    /// Decode attention KV bytes.
    pub m_d: f64,
    /// Prefill attention KV bytes.
    pub m_p1: f64,
    /// Prefill dense weight bytes.
    pub m_p2: f64,
    pub b_decode: f64,
}

impl ContentionContext {
    /// `None` when decode reads no KV, in which case there is nothing to
    /// contend over.
    pub fn new(
        decode_ops: &[OperatorWorkload],
        prefill: &PhaseLatencyBreakdown,
        prefill_ops: &[OperatorWorkload],
        bandwidth: f64,
    ) -> Option<Self> {
        let m_d = sum_where(decode_ops, |o| o.kind == OperatorKind::AttnDecode, |o| o.kv_bytes);
        if m_d <= 0.0 {
            return None;
        }
        let m_p1 = sum_where(prefill_ops, |o| o.is_attention, |o| o.kv_bytes);
        let m_p2 = sum_where(prefill_ops, |o| !o.is_attention, |o| o.mem_bytes);
        let p = p_attn(prefill);
        let b_decode = effective_decode_bandwidth(m_d, m_p1, m_p2, p, bandwidth).ok()?;
        Some(ContentionContext {
            p_attn: p,
            m_d,
            m_p1,
            m_p2,
            b_decode,
        })
    }
}

/// Prefill batch running concurrently with a decode batch.
#[derive(Debug, Clone, Copy)]
pub struct ConcurrentPrefill<'a> {
    pub breakdown: &'a PhaseLatencyBreakdown,
    pub ops: &'a [OperatorWorkload],
}

/// Device plus kernel coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub gpu: GpuSpec,
    pub profile: KernelProfile,
}

impl CostModel {
    pub fn new(gpu: GpuSpec, profile: KernelProfile) -> Self {
        CostModel { gpu, profile }
    }

    fn op_compute(&self, op: &OperatorWorkload, r: f64) -> Result<f64, CostError> {
        compute_latency(op.flops, r, self.profile.curve(op.kind), self.gpu.peak_flops)
    }

    /// Latency of `ops` at share `r` with peak bandwidth for every operator.
    pub fn phase_latency_isolated(
        &self,
        ops: &[OperatorWorkload],
        r: f64,
    ) -> Result<PhaseLatencyBreakdown, CostError> {
        let lat = ops
            .iter()
            .map(|op| {
                Ok(OpLatency::new(
                    op.kind,
                    self.op_compute(op, r)?,
                    op.mem_bytes / self.gpu.peak_bandwidth,
                ))
            })
            .collect::<Result<Vec<_>, CostError>>()?;
        Ok(PhaseLatencyBreakdown::from_ops(lat))
    }

    /// Decode latency at share `r_d`, with decode attention slowed by a
    /// concurrent prefill batch if there is one. Dense decode operators keep
    /// peak bandwidth.
    pub fn decode_latency_contended(
        &self,
        decode_ops: &[OperatorWorkload],
        r_d: f64,
        prefill: Option<ConcurrentPrefill<'_>>,
    ) -> Result<PhaseLatencyBreakdown, CostError> {
        let ctx = prefill.and_then(|p| {
            ContentionContext::new(decode_ops, p.breakdown, p.ops, self.gpu.peak_bandwidth)
        });
        let Some(ctx) = ctx else {
            return self.phase_latency_isolated(decode_ops, r_d);
        };
        let lat = decode_ops
            .iter()
            .map(|op| {
                let bw = if op.kind == OperatorKind::AttnDecode {
                    ctx.b_decode
                } else {
                    self.gpu.peak_bandwidth
                };
                Ok(OpLatency::new(
                    op.kind,
                    self.op_compute(op, r_d)?,
                    op.mem_bytes / bw,
                ))
            })
            .collect::<Result<Vec<_>, CostError>>()?;
        Ok(PhaseLatencyBreakdown::from_ops(lat))
    }

    /// Latency with every SM; zero for an empty phase.
    pub fn min_phase_latency(&self, ops: &[OperatorWorkload]) -> f64 {
        if ops.is_empty() {
            return 0.0;
        }
        self.phase_latency_isolated(ops, 1.0)
            .map(|b| b.total_s)
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ModelConfig;
    use crate::opcost::{decode_op_workloads, prefill_op_workloads};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const CURVE: SaturationCurve = SaturationCurve {
        r_sat: 0.6,
        lambda: 0.2,
    };

    fn desk() -> (ModelConfig, CostModel) {
        let m = ModelConfig::preset("3b").unwrap();
        let gpu = GpuSpec::l20_like(&m);
        (m, CostModel::new(gpu, KernelProfile::default()))
    }

    #[test]
    fn saturation_curve_points() {
        assert_eq!(compute_latency(6e11, 0.3, CURVE, 1e12).unwrap(), 2.0);
        assert_relative_eq!(compute_latency(6e11, 0.6, CURVE, 1e12).unwrap(), 1.0);
        assert_relative_eq!(
            compute_latency(6e11, 0.8, CURVE, 1e12).unwrap(),
            1.04,
            max_relative = 1e-12
        );
        assert!(compute_latency(1.0, 0.0, CURVE, 1e12).is_err());
        assert!(compute_latency(1.0, -0.5, CURVE, 1e12).is_err());
        assert!(compute_latency(1.0, 1.01, CURVE, 1e12).is_err());
    }

    #[test]
    fn both_branches_agree_at_r_sat() {
        let c = 6e11;
        let sub = c / (CURVE.r_sat * 1e12);
        let post = c / (CURVE.r_sat * 1e12) * (1.0 + CURVE.lambda * 0.0);
        assert_eq!(sub, post);
        assert_eq!(compute_latency(c, CURVE.r_sat, CURVE, 1e12).unwrap(), sub);
    }

    fn op(flops: f64, mem: f64) -> OperatorWorkload {
        OperatorWorkload {
            kind: OperatorKind::Ffn,
            flops,
            mem_bytes: mem,
            kv_bytes: 0.0,
            is_attention: false,
        }
    }

    #[test]
    fn single_op_isolated() {
        let (_, cm) = desk();
        let c = op(1e13, 1.0);
        let b = cm.phase_latency_isolated(&[c], 0.5).unwrap();
        let want = compute_latency(1e13, 0.5, cm.profile.curve(OperatorKind::Ffn), cm.gpu.peak_flops)
            .unwrap();
        assert_eq!(b.total_s, want);
        let m = op(1.0, 1e12);
        let b = cm.phase_latency_isolated(&[m], 0.5).unwrap();
        assert_eq!(b.total_s, 1e12 / cm.gpu.peak_bandwidth);
        assert_eq!(b.ops[0].bound, Bound::Memory);
    }

    #[test]
    fn prefill_iteration_matches_per_op_oracle() {
        let (m, cm) = desk();
        let ops = prefill_op_workloads(&m, 2048, 6000).unwrap();
        let b = cm.phase_latency_isolated(&ops, 1.0).unwrap();
        let mut want = 0.0;
        for o in &ops {
            let curve = cm.profile.curve(o.kind);
            // post-saturation branch at r = 1 for every default curve
            let compute = o.flops / (curve.r_sat * 119.5e12) * (1.0 + curve.lambda * (1.0 - curve.r_sat));
            want += compute.max(o.mem_bytes / 864e9);
        }
        assert_relative_eq!(b.total_s, want, max_relative = 1e-12);
        assert_eq!(cm.min_phase_latency(&ops), b.total_s);
        assert_eq!(cm.min_phase_latency(&[]), 0.0);
    }

    #[test]
    fn p_attn_bounds() {
        assert_eq!(p_attn(&PhaseLatencyBreakdown::empty()), 0.0);
        let b = PhaseLatencyBreakdown::from_ops(vec![OpLatency::new(
            OperatorKind::AttnPrefill,
            0.1,
            0.3,
        )]);
        assert_eq!(p_attn(&b), 1.0);
        let b = PhaseLatencyBreakdown::from_ops(vec![OpLatency::new(OperatorKind::Ffn, 0.3, 0.1)]);
        assert_eq!(p_attn(&b), 0.0);
    }

    #[test]
    fn p_attn_for_small_chunk_long_context() {
        let (m, cm) = desk();
        let ops = prefill_op_workloads(&m, 16, 6000).unwrap();
        let b = cm.phase_latency_isolated(&ops, 0.5).unwrap();
        // hand computation from the per-op breakdown
        let attn = b
            .ops
            .iter()
            .find(|o| o.kind == OperatorKind::AttnPrefill)
            .unwrap();
        assert_eq!(attn.bound, Bound::Memory);
        let p = p_attn(&b);
        assert!(p > 0.0 && p < 1.0);
        assert_relative_eq!(p, attn.mem_s / b.total_s, max_relative = 1e-12);
    }

    #[test]
    fn effective_bandwidth_cases() {
        assert_relative_eq!(
            effective_decode_bandwidth(1.0, 1.0, 3.0, 0.5, 100.0).unwrap(),
            37.5
        );
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(effective_decode_bandwidth(5.0, 0.0, 0.0, p, 100.0).unwrap(), 100.0);
        }
        assert_eq!(effective_decode_bandwidth(2.0, 9.0, 2.0, 0.0, 100.0).unwrap(), 50.0);
        assert!(effective_decode_bandwidth(0.0, 1.0, 1.0, 0.5, 100.0).is_err());
    }

    #[test]
    fn no_prefill_means_isolated() {
        let (m, cm) = desk();
        let d = decode_op_workloads(&m, 3, &[100, 2000, 5000]).unwrap();
        let a = cm.decode_latency_contended(&d, 0.3, None).unwrap();
        let b = cm.phase_latency_isolated(&d, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equal_attention_traffic_halves_bandwidth() {
        let (m, cm) = desk();
        let d = decode_op_workloads(&m, 1, &[4000]).unwrap();
        let m_d = d.iter().find(|o| o.kind == OperatorKind::AttnDecode).unwrap().kv_bytes;
        // a prefill that is nothing but memory-bound attention with m_p1 = m_d
        let p_ops = vec![OperatorWorkload {
            kind: OperatorKind::AttnPrefill,
            flops: 0.0,
            mem_bytes: m_d,
            kv_bytes: m_d,
            is_attention: true,
        }];
        let p_b = cm.phase_latency_isolated(&p_ops, 0.5).unwrap();
        assert_eq!(p_attn(&p_b), 1.0);
        let iso = cm.phase_latency_isolated(&d, 0.5).unwrap();
        let con = cm
            .decode_latency_contended(
                &d,
                0.5,
                Some(ConcurrentPrefill {
                    breakdown: &p_b,
                    ops: &p_ops,
                }),
            )
            .unwrap();
        let idx = d.iter().position(|o| o.kind == OperatorKind::AttnDecode).unwrap();
        assert_relative_eq!(con.ops[idx].mem_s, 2.0 * iso.ops[idx].mem_s, max_relative = 1e-12);
    }

    #[test]
    fn growing_prefill_context_slows_decode() {
        let (m, cm) = desk();
        let d = decode_op_workloads(&m, 4, &[300; 4]).unwrap();
        let mut last = 0.0;
        for ctx in (2000..=10000).step_by(1000) {
            let p = prefill_op_workloads(&m, 16, ctx).unwrap();
            let pb = cm.phase_latency_isolated(&p, 0.5).unwrap();
            let t = cm
                .decode_latency_contended(&d, 0.5, Some(ConcurrentPrefill { breakdown: &pb, ops: &p }))
                .unwrap()
                .total_s;
            assert!(t > last, "ctx {ctx}: {t} <= {last}");
            last = t;
        }
    }

    #[test]
    fn t_min_below_sub_saturation_latency() {
        // With a post-saturation penalty the all-SM latency only undercuts
        // shares up to r_sat / (1 + lambda * (1 - r_sat)); check that grid.
        let (m, cm) = desk();
        let ops = prefill_op_workloads(&m, 512, 4096).unwrap();
        let t_min = cm.min_phase_latency(&ops);
        let bound = cm
            .profile
            .iter()
            .map(|(_, c)| c.r_sat / (1.0 + c.lambda * (1.0 - c.r_sat)))
            .fold(f64::INFINITY, f64::min);
        for pct in 1..=99u32 {
            let r = pct as f64 / 100.0;
            if r <= bound {
                assert!(t_min <= cm.phase_latency_isolated(&ops, r).unwrap().total_s);
            }
        }
    }

    proptest! {
        #[test]
        fn continuity_at_r_sat(c in 1.0f64..1e15, r_sat in 0.05f64..1.0, lambda in 0.0f64..2.0) {
            let curve = SaturationCurve { r_sat, lambda };
            let at = compute_latency(c, r_sat, curve, 1e14).unwrap();
            let eps = 1e-9;
            let below = compute_latency(c, r_sat - eps, curve, 1e14).unwrap();
            prop_assert!((below - at).abs() <= 1e-6 * at);
            if r_sat + eps <= 1.0 {
                let above = compute_latency(c, r_sat + eps, curve, 1e14).unwrap();
                prop_assert!((above - at).abs() <= 1e-6 * at);
            }
        }

        #[test]
        fn monotone_below_saturation(c in 1.0f64..1e15, r1 in 0.01f64..0.6, dr in 0.001f64..0.5) {
            let r2 = (r1 + dr).min(CURVE.r_sat);
            prop_assume!(r2 > r1);
            let a = compute_latency(c, r1, CURVE, 1e14).unwrap();
            let b = compute_latency(c, r2, CURVE, 1e14).unwrap();
            prop_assert!(a > b);
        }

        #[test]
        fn penalty_above_saturation(c in 1.0f64..1e15, r in 0.61f64..1.0) {
            let a = compute_latency(c, r, CURVE, 1e14).unwrap();
            let at = compute_latency(c, CURVE.r_sat, CURVE, 1e14).unwrap();
            prop_assert!(a > at);
        }

        #[test]
        fn decode_bandwidth_in_range(
            m_d in 1.0f64..1e12, m_p1 in 0.0f64..1e12, m_p2 in 0.0f64..1e12, p in 0.0f64..=1.0
        ) {
            let b = effective_decode_bandwidth(m_d, m_p1, m_p2, p, 864e9).unwrap();
            prop_assert!(b > 0.0 && b <= 864e9 * (1.0 + 1e-12));
        }

        #[test]
        fn more_prefill_kv_never_speeds_decode(
            ctx in proptest::collection::vec(1u64..8000, 1..16),
            l1 in 1u64..20000, dl in 0u64..20000, n in 1u64..64, r in 0.05f64..1.0,
        ) {
            let (m, cm) = desk();
            let d = decode_op_workloads(&m, ctx.len(), &ctx).unwrap();
            let l1 = l1.max(n);
            let eval = |l: u64| {
                let p = prefill_op_workloads(&m, n, l).unwrap();
                let pb = cm.phase_latency_isolated(&p, 1.0 - r.min(0.95)).unwrap();
                // hold p_attn fixed so only m_p1 moves
                let pb = PhaseLatencyBreakdown { attn_mem_time_s: 0.5 * pb.total_s, ..pb };
                cm.decode_latency_contended(&d, r, Some(ConcurrentPrefill { breakdown: &pb, ops: &p }))
                    .unwrap()
                    .total_s
            };
            prop_assert!(eval(l1 + dl) >= eval(l1));
        }

        #[test]
        fn contention_never_helps(
            ctx in proptest::collection::vec(1u64..8000, 1..16),
            n in 1u64..2048, extra in 0u64..8000, r in 0.05f64..0.95,
        ) {
            let (m, cm) = desk();
            let d = decode_op_workloads(&m, ctx.len(), &ctx).unwrap();
            let p = prefill_op_workloads(&m, n, n + extra).unwrap();
            let pb = cm.phase_latency_isolated(&p, 1.0 - r).unwrap();
            let iso = cm.decode_latency_contended(&d, r, None).unwrap().total_s;
            let con = cm
                .decode_latency_contended(&d, r, Some(ConcurrentPrefill { breakdown: &pb, ops: &p }))
                .unwrap()
                .total_s;
            prop_assert!(con >= iso);
        }
    }
}
