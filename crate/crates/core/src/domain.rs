//! Shared domain types and configuration validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opcost::OperatorKind;

/// The two serving phases that share one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub fn other(self) -> Phase {
        match self {
            Phase::Prefill => Phase::Decode,
            Phase::Decode => Phase::Prefill,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Prefill => f.write_str("prefill"),
            Phase::Decode => f.write_str("decode"),
        }
    }
}

/// Transformer shape used for FLOP and byte estimates.
///
/// `kv_bytes_per_token` is derived: `2 * num_layers * hidden_dim * element_bytes`
/// (one key and one value vector per layer). Weight byte counts are per layer:
/// `weight_bytes_per_layer_attn` covers the QKV and output projections,
/// `weight_bytes_per_layer_dense` covers the feed-forward block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub hidden_dim: u64,
    pub ffn_dim: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub element_bytes: u64,
    pub kv_bytes_per_token: u64,
    pub weight_bytes_per_layer_dense: u64,
    pub weight_bytes_per_layer_attn: u64,
}

impl ModelConfig {
    /// Builds a model with every derived field computed from its dimensions.
    pub fn from_dims(
        name: impl Into<String>,
        hidden_dim: u64,
        ffn_dim: u64,
        num_layers: u64,
        num_heads: u64,
        element_bytes: u64,
    ) -> Self {
        let d = hidden_dim;
        ModelConfig {
            name: name.into(),
            hidden_dim,
            ffn_dim,
            num_layers,
            num_heads,
            element_bytes,
            kv_bytes_per_token: 2 * num_layers * d * element_bytes,
            weight_bytes_per_layer_dense: 2 * d * ffn_dim * element_bytes,
            weight_bytes_per_layer_attn: 4 * d * d * element_bytes,
        }
    }

    pub fn expected_kv_bytes_per_token(&self) -> u64 {
        2 * self.num_layers * self.hidden_dim * self.element_bytes
    }

    /// Bytes of all projection and feed-forward weights across layers.
    pub fn total_weight_bytes(&self) -> u64 {
        self.num_layers * (self.weight_bytes_per_layer_dense + self.weight_bytes_per_layer_attn)
    }

    /// Presets sized like common 3B, 8B and 14B decoder-only models.
    pub fn preset(name: &str) -> Option<ModelConfig> {
        match name {
            "3b" => Some(ModelConfig::from_dims("3b", 2048, 8192, 36, 16, 2)),
            "8b" => Some(ModelConfig::from_dims("8b", 4096, 14336, 32, 32, 2)),
            "14b" => Some(ModelConfig::from_dims("14b", 5120, 13824, 48, 40, 2)),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["3b", "8b", "14b"];
}

/// Simulated device capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub name: String,
    pub total_sm: u32,
    /// Peak dense throughput, FLOP/s.
    pub peak_flops: f64,
    /// Peak memory bandwidth, bytes/s.
    pub peak_bandwidth: f64,
    pub kv_capacity_bytes: u64,
}

impl GpuSpec {
    /// An L20-class card: 92 SMs, 48 GB, 864 GB/s. The KV pool is 90% of
    /// device memory minus the model weights.
    pub fn l20_like(model: &ModelConfig) -> GpuSpec {
        let usable = (0.9 * 48e9) as u64;
        GpuSpec {
            name: "l20".into(),
            total_sm: 92,
            peak_flops: 119.5e12,
            peak_bandwidth: 864e9,
            kv_capacity_bytes: usable.saturating_sub(model.total_weight_bytes()),
        }
    }

    pub fn preset(name: &str, model: &ModelConfig) -> Option<GpuSpec> {
        match name {
            "l20" => Some(GpuSpec::l20_like(model)),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 1] = ["l20"];
}

/// Two-regime saturation curve coefficients for one operator kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    pub r_sat: f64,
    pub lambda: f64,
}

/// Per-operator saturation coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProfile {
    entries: BTreeMap<OperatorKind, SaturationCurve>,
}

impl KernelProfile {
    pub fn empty() -> Self {
        KernelProfile {
            entries: BTreeMap::new(),
        }
    }

    /// Default coefficient for one kind when no calibration is supplied.
    pub fn default_curve(kind: OperatorKind) -> SaturationCurve {
        if kind.is_attention() {
            SaturationCurve {
                r_sat: 0.4,
                lambda: 0.05,
            }
        } else {
            SaturationCurve {
                r_sat: 0.6,
                lambda: 0.1,
            }
        }
    }

    pub fn set(&mut self, kind: OperatorKind, curve: SaturationCurve) {
        self.entries.insert(kind, curve);
    }

    pub fn get(&self, kind: OperatorKind) -> Option<SaturationCurve> {
        self.entries.get(&kind).copied()
    }

    /// Coefficients for `kind`, falling back to the default curve.
    pub fn curve(&self, kind: OperatorKind) -> SaturationCurve {
        self.get(kind).unwrap_or_else(|| Self::default_curve(kind))
    }

    pub fn iter(&self) -> impl Iterator<Item = (OperatorKind, SaturationCurve)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn missing_kinds(&self) -> Vec<OperatorKind> {
        OperatorKind::ALL
            .iter()
            .copied()
            .filter(|k| !self.entries.contains_key(k))
            .collect()
    }
}

impl Default for KernelProfile {
    fn default() -> Self {
        let mut p = KernelProfile::empty();
        for kind in OperatorKind::ALL {
            p.set(kind, KernelProfile::default_curve(kind));
        }
        p
    }
}

/// One serving request and its lifecycle.
///
/// `decoded_len` counts tokens produced by decode iterations; the first output
/// token comes from prefill, so a finished request has
/// `decoded_len == output_len - 1` and `emissions.len() == output_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_s: f64,
    pub prompt_len: u64,
    pub output_len: u64,
    pub prefilled_len: u64,
    pub decoded_len: u64,
    pub first_scheduled_s: Option<f64>,
    pub first_token_s: Option<f64>,
    pub finish_s: Option<f64>,
    pub emissions: Vec<f64>,
}

impl Request {
    pub fn new(id: u64, arrival_s: f64, prompt_len: u64, output_len: u64) -> Self {
        Request {
            id,
            arrival_s,
            prompt_len,
            output_len,
            prefilled_len: 0,
            decoded_len: 0,
            first_scheduled_s: None,
            first_token_s: None,
            finish_s: None,
            emissions: Vec::new(),
        }
    }

    pub fn remaining_prompt(&self) -> u64 {
        self.prompt_len - self.prefilled_len
    }

    pub fn is_prefilled(&self) -> bool {
        self.prefilled_len == self.prompt_len
    }

    pub fn is_finished(&self) -> bool {
        self.finish_s.is_some()
    }

    /// Tokens currently held in the KV cache for this request.
    pub fn cached_tokens(&self) -> u64 {
        self.prefilled_len + self.decoded_len
    }

    /// Record an emitted output token at `t`.
    pub(crate) fn emit(&mut self, t: f64) {
        debug_assert!(self.emissions.last().is_none_or(|&last| t > last));
        if self.first_token_s.is_none() {
            self.first_token_s = Some(t);
        }
        self.emissions.push(t);
        if self.emissions.len() as u64 == self.output_len {
            self.finish_s = Some(t);
        }
    }

    /// Strips lifecycle progress, keeping only what a trace file stores.
    pub fn reset(&self) -> Request {
        Request::new(self.id, self.arrival_s, self.prompt_len, self.output_len)
    }
}

/// Current SM split in integer percent, plus the last split the controller
/// actually applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionState {
    r_p: u8,
    r_d: u8,
    last_applied_r_p: u8,
}

impl PartitionState {
    pub const MIN_SHARE: u8 = 1;
    pub const MAX_SHARE: u8 = 99;

    pub fn new(r_p: u8) -> Result<Self, InvalidField> {
        check_share(r_p)?;
        Ok(PartitionState {
            r_p,
            r_d: 100 - r_p,
            last_applied_r_p: r_p,
        })
    }

    pub fn r_p(&self) -> u8 {
        self.r_p
    }

    pub fn r_d(&self) -> u8 {
        self.r_d
    }

    pub fn last_applied_r_p(&self) -> u8 {
        self.last_applied_r_p
    }

    pub fn share(&self, phase: Phase) -> u8 {
        match phase {
            Phase::Prefill => self.r_p,
            Phase::Decode => self.r_d,
        }
    }

    /// Apply a new prefill share; decode gets the complement.
    pub fn apply(&mut self, r_p: u8) -> Result<(), InvalidField> {
        check_share(r_p)?;
        self.r_p = r_p;
        self.r_d = 100 - r_p;
        self.last_applied_r_p = r_p;
        Ok(())
    }
}

fn check_share(r_p: u8) -> Result<(), InvalidField> {
    if (PartitionState::MIN_SHARE..=PartitionState::MAX_SHARE).contains(&r_p) {
        Ok(())
    } else {
        Err(InvalidField::new("r_p", format!("{r_p} outside [1, 99]")))
    }
}

/// How the prefill lane orders its queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefillPolicy {
    /// Shortest remaining prompt first with age credit.
    Spf,
    /// Arrival order.
    Fcfs,
}

/// Controller and scheduler knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Prefill slack when decode is prioritized.
    pub alpha: f64,
    /// Decode slack when prefill is prioritized.
    pub beta: f64,
    pub kv_switch_fraction: f64,
    /// Hysteresis band in percentage points.
    pub delta: u8,
    /// Age credit in tokens per second of waiting.
    pub gamma: f64,
    pub chunk_size: u64,
    pub max_decode_batch: usize,
    /// Token budget per prefill (or mixed) batch.
    pub token_budget: u64,
    pub prefill_policy: PrefillPolicy,
    /// Skip non-fitting prefill entries instead of stopping at the first one.
    pub skip_nonfitting: bool,
    /// Split used before the first controller decision.
    pub initial_r_p: u8,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            alpha: 1.3,
            beta: 1.1,
            kv_switch_fraction: 0.7,
            delta: 5,
            gamma: 15.0,
            chunk_size: 2048,
            max_decode_batch: 256,
            token_budget: 2048,
            prefill_policy: PrefillPolicy::Spf,
            skip_nonfitting: false,
            initial_r_p: 50,
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid field `{field}`: {reason}")]
pub struct InvalidField {
    pub field: String,
    pub reason: String,
}

impl InvalidField {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{} invalid field(s): {}", .0.len(), join_errors(.0))]
pub struct ConfigErrors(pub Vec<InvalidField>);

fn join_errors(errs: &[InvalidField]) -> String {
    errs.iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A configuration that passed [`validate_config`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub model: ModelConfig,
    pub gpu: GpuSpec,
    pub ctrl: ControllerConfig,
    pub profile: KernelProfile,
}

/// Checks every invariant and reports all violations at once.
pub fn validate_config(
    model: &ModelConfig,
    gpu: &GpuSpec,
    ctrl: &ControllerConfig,
    prof: &KernelProfile,
) -> Result<ValidatedConfig, ConfigErrors> {
    let mut errs = Vec::new();
    let mut bad = |field: &str, reason: &str| errs.push(InvalidField::new(field, reason));

    for (field, v) in [
        ("hidden_dim", model.hidden_dim),
        ("ffn_dim", model.ffn_dim),
        ("num_layers", model.num_layers),
        ("num_heads", model.num_heads),
        ("element_bytes", model.element_bytes),
        ("kv_bytes_per_token", model.kv_bytes_per_token),
        (
            "weight_bytes_per_layer_dense",
            model.weight_bytes_per_layer_dense,
        ),
        (
            "weight_bytes_per_layer_attn",
            model.weight_bytes_per_layer_attn,
        ),
    ] {
        if v == 0 {
            bad(field, "must be positive");
        }
    }
    if model.ffn_dim < model.hidden_dim {
        bad("ffn_dim", "must be at least hidden_dim");
    }
    if model.kv_bytes_per_token != model.expected_kv_bytes_per_token() {
        bad(
            "kv_bytes_per_token",
            "must equal 2 * num_layers * hidden_dim * element_bytes",
        );
    }

    if gpu.total_sm < 2 {
        bad("total_sm", "must be at least 2");
    }
    if !(gpu.peak_flops.is_finite() && gpu.peak_flops > 0.0) {
        bad("peak_flops", "must be positive");
    }
    if !(gpu.peak_bandwidth.is_finite() && gpu.peak_bandwidth > 0.0) {
        bad("peak_bandwidth", "must be positive");
    }
    if gpu.kv_capacity_bytes == 0 {
        bad("kv_capacity_bytes", "must be positive");
    }

    if !(ctrl.alpha > 1.0 && ctrl.alpha.is_finite()) {
        bad("alpha", "must exceed 1");
    }
    if !(ctrl.beta > 1.0 && ctrl.beta.is_finite()) {
        bad("beta", "must exceed 1");
    }
    if !(ctrl.kv_switch_fraction > 0.0 && ctrl.kv_switch_fraction < 1.0) {
        bad("kv_switch_fraction", "must lie strictly between 0 and 1");
    }
    if ctrl.delta > 98 {
        bad("delta", "must be at most 98 percentage points");
    }
    if !(ctrl.gamma >= 0.0 && ctrl.gamma.is_finite()) {
        bad("gamma", "must be non-negative");
    }
    if ctrl.chunk_size == 0 {
        bad("chunk_size", "must be positive");
    }
    if ctrl.max_decode_batch == 0 {
        bad("max_decode_batch", "must be positive");
    }
    if ctrl.token_budget == 0 {
        bad("token_budget", "must be positive");
    }
    if check_share(ctrl.initial_r_p).is_err() {
        bad("initial_r_p", "must lie in [1, 99]");
    }

    for kind in OperatorKind::ALL {
        let name = format!("profile.{}", kind.name());
        match prof.get(kind) {
            None => errs.push(InvalidField::new(name, "missing entry")),
            Some(c) => {
                if !(c.r_sat > 0.0 && c.r_sat <= 1.0) {
                    errs.push(InvalidField::new(
                        format!("{name}.r_sat"),
                        "must lie in (0, 1]",
                    ));
                }
                if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
                    errs.push(InvalidField::new(
                        format!("{name}.lambda"),
                        "must be non-negative",
                    ));
                }
            }
        }
    }

    if errs.is_empty() {
        Ok(ValidatedConfig {
            model: model.clone(),
            gpu: gpu.clone(),
            ctrl: ctrl.clone(),
            profile: prof.clone(),
        })
    } else {
        Err(ConfigErrors(errs))
    }
}
