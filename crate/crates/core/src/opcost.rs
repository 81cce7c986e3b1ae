//! Operator FLOP and byte estimates for one prefill, decode or mixed iteration.
//!
//! GEMMs use the `2 * m * n * k` multiply-add convention. Every count is
//! aggregated over all layers. Dense operators read their weights once per
//! iteration and nothing else; attention operators read the KV of every
//! attended token plus the query/key/value/output activations of the tokens
//! being processed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{compute_latency, CostError};
use crate::domain::{GpuSpec, ModelConfig, SaturationCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    QkvProj,
    AttnPrefill,
    AttnDecode,
    AttnOutProj,
    Ffn,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::QkvProj,
        OperatorKind::AttnPrefill,
        OperatorKind::AttnDecode,
        OperatorKind::AttnOutProj,
        OperatorKind::Ffn,
    ];

    pub fn is_attention(self) -> bool {
        matches!(self, OperatorKind::AttnPrefill | OperatorKind::AttnDecode)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::QkvProj => "qkv_proj",
            OperatorKind::AttnPrefill => "attn_prefill",
            OperatorKind::AttnDecode => "attn_decode",
            OperatorKind::AttnOutProj => "attn_out_proj",
            OperatorKind::Ffn => "ffn",
        }
    }

    pub fn from_name(s: &str) -> Option<OperatorKind> {
        OperatorKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// FLOPs and memory traffic of one operator, summed over layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorWorkload {
    pub kind: OperatorKind,
    pub flops: f64,
    pub mem_bytes: f64,
    /// Share of `mem_bytes` spent reading cached keys and values.
    pub kv_bytes: f64,
    pub is_attention: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpCostError {
    #[error("prefill chunk must contain at least one token")]
    EmptyChunk,
    #[error("context length {context} shorter than chunk {chunk}")]
    ContextShorterThanChunk { chunk: u64, context: u64 },
    #[error("decode batch is empty")]
    EmptyBatch,
    #[error("batch size {batch_size} does not match {contexts} context lengths")]
    BatchSizeMismatch { batch_size: usize, contexts: usize },
}

/// Token composition of one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchShape {
    /// `(chunk_tokens, context_len)` per prefill member. `context_len`
    /// includes the chunk itself.
    pub prefill_chunks: Vec<(u64, u64)>,
    /// Attended context length per decode member.
    pub decode_contexts: Vec<u64>,
}

impl BatchShape {
    pub fn is_empty(&self) -> bool {
        self.prefill_chunks.is_empty() && self.decode_contexts.is_empty()
    }

    fn dense_tokens(&self) -> u64 {
        self.prefill_chunks.iter().map(|(n, _)| n).sum::<u64>() + self.decode_contexts.len() as u64
    }

    /// Operators for this batch. Dense operators run once over every token
    /// in the batch; prefill and decode attention appear only when the batch
    /// has members of that phase.
    pub fn workloads(&self, model: &ModelConfig) -> Result<Vec<OperatorWorkload>, OpCostError> {
        for &(n, l) in &self.prefill_chunks {
            if n == 0 {
                return Err(OpCostError::EmptyChunk);
            }
            if l < n {
                return Err(OpCostError::ContextShorterThanChunk {
                    chunk: n,
                    context: l,
                });
            }
        }
        if self.is_empty() {
            return Err(OpCostError::EmptyBatch);
        }

        let d = model.hidden_dim as f64;
        let d_ff = model.ffn_dim as f64;
        let layers = model.num_layers as f64;
        let elem = model.element_bytes as f64;
        let kv_per_token = model.kv_bytes_per_token as f64;
        let attn_w = model.weight_bytes_per_layer_attn as f64;
        let n = self.dense_tokens() as f64;
        // Per-token activation traffic of an attention kernel: q, k, v in, o out.
        let io_per_token = 4.0 * d * elem * layers;

        let mut ops = Vec::with_capacity(5);
        ops.push(OperatorWorkload {
            kind: OperatorKind::QkvProj,
            flops: 3.0 * 2.0 * n * d * d * layers,
            mem_bytes: 0.75 * attn_w * layers,
            kv_bytes: 0.0,
            is_attention: false,
        });
        if !self.prefill_chunks.is_empty() {
            let (mut flops, mut kv, mut io) = (0.0, 0.0, 0.0);
            for &(n_i, l_i) in &self.prefill_chunks {
                flops += 2.0 * 2.0 * n_i as f64 * l_i as f64 * d * layers;
                kv += l_i as f64 * kv_per_token;
                io += n_i as f64 * io_per_token;
            }
            ops.push(OperatorWorkload {
                kind: OperatorKind::AttnPrefill,
                flops,
                mem_bytes: kv + io,
                kv_bytes: kv,
                is_attention: true,
            });
        }
        if !self.decode_contexts.is_empty() {
            let (mut flops, mut kv) = (0.0, 0.0);
            for &l_i in &self.decode_contexts {
                flops += 2.0 * 2.0 * l_i as f64 * d * layers;
                kv += l_i as f64 * kv_per_token;
            }
            let io = self.decode_contexts.len() as f64 * io_per_token;
            ops.push(OperatorWorkload {
                kind: OperatorKind::AttnDecode,
                flops,
                mem_bytes: kv + io,
                kv_bytes: kv,
                is_attention: true,
            });
        }
        ops.push(OperatorWorkload {
            kind: OperatorKind::AttnOutProj,
            flops: 2.0 * n * d * d * layers,
            mem_bytes: 0.25 * attn_w * layers,
            kv_bytes: 0.0,
            is_attention: false,
        });
        ops.push(OperatorWorkload {
            kind: OperatorKind::Ffn,
            flops: 2.0 * 2.0 * n * d * d_ff * layers,
            mem_bytes: model.weight_bytes_per_layer_dense as f64 * layers,
            kv_bytes: 0.0,
            is_attention: false,
        });
        Ok(ops)
    }
}

/// Operators of one prefill chunk of `chunk_tokens` ending at `context_len`.
pub fn prefill_op_workloads(
    model: &ModelConfig,
    chunk_tokens: u64,
    context_len: u64,
) -> Result<Vec<OperatorWorkload>, OpCostError> {
    BatchShape {
        prefill_chunks: vec![(chunk_tokens, context_len)],
        decode_contexts: Vec::new(),
    }
    .workloads(model)
}

/// Operators of one decode iteration over `batch_size` requests.
pub fn decode_op_workloads(
    model: &ModelConfig,
    batch_size: usize,
    context_lens: &[u64],
) -> Result<Vec<OperatorWorkload>, OpCostError> {
    if batch_size != context_lens.len() {
        return Err(OpCostError::BatchSizeMismatch {
            batch_size,
            contexts: context_lens.len(),
        });
    }
    if batch_size == 0 {
        return Err(OpCostError::EmptyBatch);
    }
    BatchShape {
        prefill_chunks: Vec::new(),
        decode_contexts: context_lens.to_vec(),
    }
    .workloads(model)
}

/// True when the operator's peak-bandwidth memory time exceeds its compute
/// time at SM share `r`.
pub fn classify_memory_bound(
    w: &OperatorWorkload,
    gpu: &GpuSpec,
    curve: SaturationCurve,
    r: f64,
) -> Result<bool, CostError> {
    let compute = compute_latency(w.flops, r, curve, gpu.peak_flops)?;
    Ok(w.mem_bytes / gpu.peak_bandwidth > compute)
}

/// Sum of a field over operators matching `pred`.
pub(crate) fn sum_where(
    ops: &[OperatorWorkload],
    pred: impl Fn(&OperatorWorkload) -> bool,
    field: impl Fn(&OperatorWorkload) -> f64,
) -> f64 {
    ops.iter().filter(|o| pred(o)).map(field).sum()
}
