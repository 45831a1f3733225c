//! Classification net: stacked bidirectional GRU layers, windowed additive
//! attention between layers, global attention after the last layer, and a
//! two-layer dense head.
//!
//! Sequences are carried time-major as `[T * B, F]` tensors: row `t * B + b`
//! holds frame `t` of batch item `b`.

use crate::autodiff::{Rng, Tape, Tensor, Var};

use super::config::{attention_window_spans, ModelConfig};
use super::params::{glorot, uniform, ParamStore};
use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruIdx {
    pub wx: usize,
    pub wh: usize,
    pub bx: usize,
    pub bh: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerIdx {
    fwd: GruIdx,
    bwd: GruIdx,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct AttentionIdx {
    w: usize,
    b: usize,
    v: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    cfg: ModelConfig,
    spans: Vec<usize>,
    params: ParamStore,
    layers: Vec<LayerIdx>,
    attention: Vec<AttentionIdx>,
    head: [usize; 4],
}

/// Time-major sequence on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Sequence {
    pub data: Var,
    pub steps: usize,
    pub batch: usize,
}

fn gru_params(params: &mut ParamStore, rng: &mut Rng, name: &str, input: usize, hidden: usize) -> GruIdx {
    let limit = 1.0 / (hidden as f64).sqrt();
    GruIdx {
        wx: params.push(format!("{name}.wx"), uniform(rng, limit, &[input, 3 * hidden])),
        wh: params.push(format!("{name}.wh"), uniform(rng, limit, &[hidden, 3 * hidden])),
        bx: params.push(format!("{name}.bx"), uniform(rng, limit, &[3 * hidden])),
        bh: params.push(format!("{name}.bh"), uniform(rng, limit, &[3 * hidden])),
    }
}

/// One direction of a GRU over a time-major sequence; returns the hidden
/// state at every step, in input time order, as `[T * B, H]`.
///
/// Gates as in [`Tape::gru_cell`].
pub fn gru_direction(
    tape: &mut Tape,
    vars: &[Var],
    idx: GruIdx,
    input: Sequence,
    hidden: usize,
    reverse: bool,
) -> Result<Var, ModelError> {
    let (steps, batch) = (input.steps, input.batch);
    let projected = tape.dense(input.data, vars[idx.wx], vars[idx.bx])?;
    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut outputs = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        h = tape.gru_cell(projected, t * batch, h, vars[idx.wh], vars[idx.bh])?;
        outputs[t] = h;
    }
    Ok(tape.concat(&outputs, 0)?)
}

/// Forward and backward GRU passes concatenated per step: `[T * B, 2H]`.
pub fn bidirectional_gru(
    tape: &mut Tape,
    vars: &[Var],
    fwd: GruIdx,
    bwd: GruIdx,
    input: Sequence,
    hidden: usize,
) -> Result<Sequence, ModelError> {
    let f = gru_direction(tape, vars, fwd, input, hidden, false)?;
    let b = gru_direction(tape, vars, bwd, input, hidden, true)?;
    Ok(Sequence {
        data: tape.concat(&[f, b], 1)?,
        ..input
    })
}

/// Partitions the sequence into consecutive windows of `span` steps (the
/// last may be shorter) and collapses each window to its additive-attention
/// weighted sum, `score_t = vᵀ tanh(W h_t + b)`.
fn windowed_attention(
    tape: &mut Tape,
    vars: &[Var],
    idx: AttentionIdx,
    seq: Sequence,
    span: usize,
) -> Result<Sequence, ModelError> {
    let (steps, batch) = (seq.steps, seq.batch);
    let hidden = tape.dense(seq.data, vars[idx.w], vars[idx.b])?;
    let hidden = tape.tanh(hidden)?;
    let scores = tape.matmul(hidden, vars[idx.v])?;
    let n_windows = steps.div_ceil(span);
    let mut pooled = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let start = w * span;
        let len = span.min(steps - start);
        let window_scores = tape.slice(scores, 0, start * batch, len * batch)?;
        // [len * B, 1] time-major -> [B, len]
        let per_step: Vec<Var> = (0..len)
            .map(|k| tape.slice(window_scores, 0, k * batch, batch))
            .collect::<Result<_, _>>()?;
        let stacked = if len == 1 { per_step[0] } else { tape.concat(&per_step, 1)? };
        let weights = tape.softmax(stacked, 1)?;
        let mut acc: Option<Var> = None;
        for k in 0..len {
            let h = tape.slice(seq.data, 0, (start + k) * batch, batch)?;
            let a = tape.slice(weights, 1, k, 1)?;
            let term = tape.scale_rows(h, a)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => tape.add(prev, term)?,
            });
        }
        pooled.push(acc.expect("window has at least one step"));
    }
    let data = if pooled.len() == 1 { pooled[0] } else { tape.concat(&pooled, 0)? };
    Ok(Sequence {
        data,
        steps: n_windows,
        batch,
    })
}

impl ClassifierNet {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let hidden = cfg.rnn_hidden;
        let mut layers = Vec::new();
        let mut attention = Vec::new();
        for l in 0..cfg.rnn_layers {
            let input = if l == 0 { cfg.latent_dim } else { 2 * hidden };
            let fwd = gru_params(&mut params, rng, &format!("gru{l}.fwd"), input, hidden);
            let bwd = gru_params(&mut params, rng, &format!("gru{l}.bwd"), input, hidden);
            layers.push(LayerIdx { fwd, bwd });
            let a = cfg.attention_dim;
            attention.push(AttentionIdx {
                w: params.push(format!("attn{l}.w"), glorot(rng, 2 * hidden, a, &[2 * hidden, a])),
                b: params.push(format!("attn{l}.b"), Tensor::zeros(&[a])),
                v: params.push(format!("attn{l}.v"), glorot(rng, a, 1, &[a, 1])),
            });
        }
        let (d, m) = (cfg.head_hidden, cfg.n_classes);
        let head = [
            params.push("head1.w", glorot(rng, 2 * hidden, d, &[2 * hidden, d])),
            params.push("head1.b", Tensor::zeros(&[d])),
            params.push("head2.w", glorot(rng, d, m, &[d, m])),
            params.push("head2.b", Tensor::zeros(&[m])),
        ];
        Ok(Self {
            cfg: cfg.clone(),
            spans: attention_window_spans(cfg),
            params,
            layers,
            attention,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn spans(&self) -> &[usize] {
        &self.spans
    }

    /// GRU parameter indices of layer `layer`, `(forward, backward)`.
    pub fn gru_indices(&self, layer: usize) -> (GruIdx, GruIdx) {
        (self.layers[layer].fwd, self.layers[layer].bwd)
    }

    /// Class logits `[B, n_classes]` for a time-major latent sequence.
    pub fn logits(&self, tape: &mut Tape, vars: &[Var], input: Sequence) -> Result<Var, ModelError> {
        Ok(self.logits_traced(tape, vars, input)?.0)
    }

    /// Logits plus the sequence length entering each recurrent layer and
    /// after the global stage.
    pub fn logits_traced(&self, tape: &mut Tape, vars: &[Var], input: Sequence) -> Result<(Var, Vec<usize>), ModelError> {
        if input.steps < self.cfg.min_attention_window {
            return Err(ModelError::TooFewFrames {
                found: input.steps,
                needed: self.cfg.min_attention_window,
            });
        }
        let hidden = self.cfg.rnn_hidden;
        let mut seq = input;
        let mut lengths = Vec::with_capacity(self.layers.len() + 1);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            lengths.push(seq.steps);
            seq = bidirectional_gru(tape, vars, layer.fwd, layer.bwd, seq, hidden)?;
            let span = if l == last { seq.steps } else { self.spans[l] };
            seq = windowed_attention(tape, vars, self.attention[l], seq, span)?;
        }
        lengths.push(seq.steps);
        let [w1, b1, w2, b2] = self.head;
        let h = tape.dense(seq.data, vars[w1], vars[b1])?;
        let h = tape.relu(h)?;
        Ok((tape.dense(h, vars[w2], vars[b2])?, lengths))
    }
}
