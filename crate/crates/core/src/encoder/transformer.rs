//! Post-norm transformer encoder built on the tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, ParamId, ParamStore, Tape, Var};
use crate::encoder::{EncoderConfig, Mode};

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
struct LayerNormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockIds {
    w_query: ParamId,
    b_query: ParamId,
    w_key: ParamId,
    b_key: ParamId,
    w_value: ParamId,
    b_value: ParamId,
    w_out: ParamId,
    b_out: ParamId,
    attn_norm: LayerNormIds,
    w_ff1: ParamId,
    b_ff1: ParamId,
    w_ff2: ParamId,
    b_ff2: ParamId,
    ff_norm: LayerNormIds,
}

/// Handles to one encoder's parameters inside a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    config: EncoderConfig,
    embedding: ParamId,
    embed_norm: LayerNormIds,
    blocks: Vec<BlockIds>,
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

fn layer_norm_ids(store: &mut ParamStore, prefix: &str, dim: usize) -> LayerNormIds {
    LayerNormIds {
        gain: store.add(format!("{prefix}.gain"), Mat::ones((1, dim))),
        bias: store.add(format!("{prefix}.bias"), Mat::zeros((1, dim))),
    }
}

/// Fixed sinusoidal position encodings, `n × d`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Mat {
    Mat::from_shape_fn((n, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl TransformerEncoder {
    /// Registers fresh parameters under `prefix` and returns their handles.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: &EncoderConfig,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = config.hidden_dim;
        let ff = config.ffn_dim;
        let bound_d = 1.0 / (d as f64).sqrt();
        let bound_ff = 1.0 / (ff as f64).sqrt();
        let embedding = store.add(format!("{prefix}.embedding"), uniform(rng, vocab_size, d, 1.0));
        let embed_norm = layer_norm_ids(store, &format!("{prefix}.embedding_norm"), d);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("{prefix}.layer{l}");
            let mut linear = |name: &str, rows: usize, cols: usize, bound: f64| {
                (
                    store.add(format!("{p}.{name}.weight"), uniform(rng, rows, cols, bound)),
                    store.add(format!("{p}.{name}.bias"), Mat::zeros((1, rows))),
                )
            };
            let (w_query, b_query) = linear("query", d, d, bound_d);
            let (w_key, b_key) = linear("key", d, d, bound_d);
            let (w_value, b_value) = linear("value", d, d, bound_d);
            let (w_out, b_out) = linear("attn_out", d, d, bound_d);
            let (w_ff1, b_ff1) = linear("ff1", ff, d, bound_d);
            let (w_ff2, b_ff2) = linear("ff2", d, ff, bound_ff);
            blocks.push(BlockIds {
                w_query,
                b_query,
                w_key,
                b_key,
                w_value,
                b_value,
                w_out,
                b_out,
                attn_norm: layer_norm_ids(store, &format!("{p}.attn_norm"), d),
                w_ff1,
                b_ff1,
                w_ff2,
                b_ff2,
                ff_norm: layer_norm_ids(store, &format!("{p}.ff_norm"), d),
            });
        }
        TransformerEncoder {
            config: config.clone(),
            embedding,
            embed_norm,
            blocks,
        }
    }

    /// Re-binds handles by parameter name, e.g. after loading a checkpoint.
    pub fn bind(store: &ParamStore, prefix: &str, config: &EncoderConfig) -> Option<Self> {
        let id = |name: String| store.id(&name);
        let ln = |p: String| {
            Some(LayerNormIds {
                gain: id(format!("{p}.gain"))?,
                bias: id(format!("{p}.bias"))?,
            })
        };
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("{prefix}.layer{l}");
            let w = |name: &str| id(format!("{p}.{name}.weight"));
            let b = |name: &str| id(format!("{p}.{name}.bias"));
            blocks.push(BlockIds {
                w_query: w("query")?,
                b_query: b("query")?,
                w_key: w("key")?,
                b_key: b("key")?,
                w_value: w("value")?,
                b_value: b("value")?,
                w_out: w("attn_out")?,
                b_out: b("attn_out")?,
                attn_norm: ln(format!("{p}.attn_norm"))?,
                w_ff1: w("ff1")?,
                b_ff1: b("ff1")?,
                w_ff2: w("ff2")?,
                b_ff2: b("ff2")?,
                ff_norm: ln(format!("{p}.ff_norm"))?,
            });
        }
        Some(TransformerEncoder {
            config: config.clone(),
            embedding: id(format!("{prefix}.embedding"))?,
            embed_norm: ln(format!("{prefix}.embedding_norm"))?,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    fn norm(&self, tape: &mut Tape, x: Var, ids: &LayerNormIds) -> Var {
        let y = tape.layer_norm(x, LN_EPS);
        let g = tape.param(ids.gain);
        let y = tape.mul_row(y, g);
        let b = tape.param(ids.bias);
        tape.add_row(y, b)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
        let wv = tape.param(w);
        let y = tape.matmul_bt(x, wv);
        let bv = tape.param(b);
        tape.add_row(y, bv)
    }

    /// Final hidden states (`ids.len() × d`) for a token id sequence.
    pub fn forward(&self, tape: &mut Tape, ids: &[usize], mode: &mut Mode) -> Var {
        let d = self.config.hidden_dim;
        let n = ids.len();
        let heads = self.config.n_heads;
        let head_dim = d / heads;
        let p = self.config.dropout_rate;

        let table = tape.param(self.embedding);
        let x = tape.gather(table, ids);
        let pos = tape.constant(sinusoidal_positions(n, d));
        let x = tape.add(x, pos);
        let mut x = self.norm(tape, x, &self.embed_norm);

        for block in &self.blocks {
            let q = self.linear(tape, x, block.w_query, block.b_query);
            let k = self.linear(tape, x, block.w_key, block.b_key);
            let v = self.linear(tape, x, block.w_value, block.b_value);
            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
                let qh = tape.cols(q, lo, hi);
                let kh = tape.cols(k, lo, hi);
                let vh = tape.cols(v, lo, hi);
                let scores = tape.matmul_bt(qh, kh);
                let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
                let weights = tape.softmax_rows(scores);
                head_outputs.push(tape.matmul(weights, vh));
            }
            let attn = if heads == 1 {
                head_outputs[0]
            } else {
                tape.concat_cols(&head_outputs)
            };
            let attn = self.linear(tape, attn, block.w_out, block.b_out);
            let attn = mode.dropout(tape, attn, p);
            let res = tape.add(x, attn);
            let x1 = self.norm(tape, res, &block.attn_norm);

            let hidden = self.linear(tape, x1, block.w_ff1, block.b_ff1);
            let hidden = tape.relu(hidden);
            let ff = self.linear(tape, hidden, block.w_ff2, block.b_ff2);
            let ff = mode.dropout(tape, ff, p);
            let res = tape.add(x1, ff);
            x = self.norm(tape, res, &block.ff_norm);
        }
        x
    }
}
