//! Retrieval attention fusion of the masked-sentence feature with the joint
//! encoding, plus the softmax classifier.
//!
//! The masked-sentence vector `h` queries the text token states `Z`:
//! β_j = (W_q h)ᵀ (W_k Z_j), α = softmax(β), and the fused feature is
//! `h ∥ z ∥ Σ_j α_j W_v Z_j` with length `2·d_m + d_s`.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Stance;
use crate::encoder::transformer::uniform;
use crate::error::{Error, Result};

pub const DEFAULT_FUSION_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Attention,
    Concat,
}

/// Each matrix is `d_s × d_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl AttentionParams {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>, w_v: Array2<f64>) -> Result<Self> {
        let p = AttentionParams { w_q, w_k, w_v };
        if p.w_q.dim() != p.w_k.dim() || p.w_q.dim() != p.w_v.dim() {
            return Err(Error::contract("W_q, W_k and W_v must share one d_s × d_m shape"));
        }
        Ok(p)
    }

    /// Uniform in ±1/√d_m.
    pub fn random(d_m: usize, d_s: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d_m as f64).sqrt();
        AttentionParams {
            w_q: uniform(rng, d_s, d_m, bound),
            w_k: uniform(rng, d_s, d_m, bound),
            w_v: uniform(rng, d_s, d_m, bound),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.ncols()
    }

    pub fn fusion_dim(&self) -> usize {
        self.w_q.nrows()
    }
}

/// `W_o` is `d_p × (2·d_m + d_s)`, `b_o` has length `d_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
}

impl ClassifierParams {
    pub fn new(w_o: Array2<f64>, b_o: Array1<f64>) -> Result<Self> {
        if w_o.nrows() != b_o.len() {
            return Err(Error::contract("classifier bias length must equal W_o rows"));
        }
        Ok(ClassifierParams { w_o, b_o })
    }

    pub fn random(feature_dim: usize, d_m: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d_m as f64).sqrt();
        ClassifierParams {
            w_o: uniform(rng, Stance::COUNT, feature_dim, bound),
            b_o: Array1::zeros(Stance::COUNT),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub vector: Array1<f64>,
}

impl FusedFeature {
    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }
}

fn check_inputs(
    h: ArrayView1<f64>,
    z: ArrayView1<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<()> {
    let d_m = params.input_dim();
    if tokens.nrows() == 0 {
        return Err(Error::contract("fusion needs at least one token row"));
    }
    if h.len() != d_m || z.len() != d_m || tokens.ncols() != d_m {
        return Err(Error::contract(format!(
            "fusion inputs must have width {d_m} (h={}, z={}, tokens={})",
            h.len(),
            z.len(),
            tokens.ncols()
        )));
    }
    Ok(())
}

fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = x.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

/// Attention scores β over the text tokens.
pub fn attention_scores(h: ArrayView1<f64>, tokens: ArrayView2<f64>, params: &AttentionParams) -> Array1<f64> {
    let query = params.w_q.dot(&h);
    let keys = tokens.dot(&params.w_k.t());
    keys.dot(&query)
}

/// Softmax-normalized attention weights α.
pub fn attention_weights(
    h: ArrayView1<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<Array1<f64>> {
    check_inputs(h, h, tokens, params)?;
    Ok(softmax(&attention_scores(h, tokens, params)))
}

fn assemble(h: ArrayView1<f64>, z: ArrayView1<f64>, tail: Array1<f64>) -> FusedFeature {
    FusedFeature {
        vector: concatenate(Axis(0), &[h, z, tail.view()]).expect("1-d concat"),
    }
}

pub fn attend_fuse(
    h: ArrayView1<f64>,
    z: ArrayView1<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<FusedFeature> {
    check_inputs(h, z, tokens, params)?;
    let alpha = softmax(&attention_scores(h, tokens, params));
    let values = tokens.dot(&params.w_v.t());
    Ok(assemble(h, z, values.t().dot(&alpha)))
}

/// The concatenation variant: uniform pooling of `W_v Z_j` replaces attention.
///
/// Pooling uses the same weighted sum as [`attend_fuse`] with weights 1/n, so
/// the two agree exactly whenever attention is uniform.
pub fn concat_fuse(
    h: ArrayView1<f64>,
    z: ArrayView1<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<FusedFeature> {
    check_inputs(h, z, tokens, params)?;
    let n = tokens.nrows();
    let uniform = Array1::from_elem(n, 1.0 / n as f64);
    let values = tokens.dot(&params.w_v.t());
    Ok(assemble(h, z, values.t().dot(&uniform)))
}

pub fn fuse(
    kind: FusionKind,
    h: ArrayView1<f64>,
    z: ArrayView1<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<FusedFeature> {
    match kind {
        FusionKind::Attention => attend_fuse(h, z, tokens, params),
        FusionKind::Concat => concat_fuse(h, z, tokens, params),
    }
}

/// softmax(W_o f + b_o).
pub fn classify(f: &FusedFeature, params: &ClassifierParams) -> Result<Array1<f64>> {
    if f.len() != params.w_o.ncols() {
        return Err(Error::contract(format!(
            "classifier expects features of length {}, got {}",
            params.w_o.ncols(),
            f.len()
        )));
    }
    Ok(softmax(&(params.w_o.dot(&f.vector) + &params.b_o)))
}
