//! The full stance model: encoders, projection head, fusion and classifier
//! sharing one parameter store.

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamId, ParamStore, Tape, Var};
use crate::contrastive::ProjectionHead;
use crate::corpus::{Instance, Stance};
use crate::encoder::transformer::uniform;
use crate::encoder::{DualEncoder, EncoderConfig, FrozenFeatures, JointVars, Mode, TapeEncoder, Vocab};
use crate::error::{Error, Result};
use crate::fusion::{AttentionParams, ClassifierParams, FusionKind, DEFAULT_FUSION_DIM};

pub const PROJECTION_W1: &str = "projection.w1";
pub const PROJECTION_W2: &str = "projection.w2";
pub const FUSION_QUERY: &str = "fusion.query";
pub const FUSION_KEY: &str = "fusion.key";
pub const FUSION_VALUE: &str = "fusion.value";
pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

/// Where text features come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    /// The trainable transformer pair.
    #[default]
    Toy,
    /// Precomputed features from an external pretrained encoder.
    Frozen { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Hidden width of the projection head; `None` uses the encoder width.
    pub projection_hidden: Option<usize>,
    pub projection_dim: usize,
    pub fusion_dim: usize,
    pub fusion: FusionKind,
    pub backend: Backend,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            projection_hidden: None,
            projection_dim: 128,
            fusion_dim: DEFAULT_FUSION_DIM,
            fusion: FusionKind::Attention,
            backend: Backend::Toy,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.projection_dim == 0 || self.fusion_dim == 0 || self.projection_hidden == Some(0) {
            return Err(Error::config("projection and fusion widths must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Encoders {
    Toy(DualEncoder),
    Frozen(FrozenFeatures),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeadIds {
    proj_w1: ParamId,
    proj_w2: ParamId,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

/// Per-instance tape outputs of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub joint: JointVars,
    /// Masked-sentence vector fed to fusion.
    pub h: Var,
    /// Class probabilities, `1 × 3`.
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct StanceModel {
    pub store: ParamStore,
    config: ModelConfig,
    encoders: Encoders,
    ids: HeadIds,
}

fn masked_text(inst: &Instance) -> Result<&str> {
    inst.masked_text.as_deref().ok_or_else(|| {
        Error::contract(format!(
            "instance {} has no masked text; run augmentation first",
            inst.id
        ))
    })
}

impl StanceModel {
    /// Fresh parameters drawn from `seed`. `vocab` is used by the toy backend
    /// only.
    pub fn init(config: &ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoders = match &config.backend {
            Backend::Toy => {
                let enc = DualEncoder::init(&mut store, vocab, &config.encoder, &mut rng)?;
                config.encoder = enc.config().clone();
                Encoders::Toy(enc)
            }
            Backend::Frozen { path } => {
                let features = FrozenFeatures::load(path, config.encoder.dropout_rate)?;
                config.encoder.hidden_dim = features.hidden_dim();
                Encoders::Frozen(features)
            }
        };
        let d_m = config.encoder.hidden_dim;
        let d_h = config.projection_hidden.unwrap_or(d_m);
        let d_c = config.projection_dim;
        let d_s = config.fusion_dim;
        let bound_m = 1.0 / (d_m as f64).sqrt();
        let bound_h = 1.0 / (d_h as f64).sqrt();
        let ids = HeadIds {
            proj_w1: store.add(PROJECTION_W1, uniform(&mut rng, d_h, d_m, bound_m)),
            proj_w2: store.add(PROJECTION_W2, uniform(&mut rng, d_c, d_h, bound_h)),
            w_q: store.add(FUSION_QUERY, uniform(&mut rng, d_s, d_m, bound_m)),
            w_k: store.add(FUSION_KEY, uniform(&mut rng, d_s, d_m, bound_m)),
            w_v: store.add(FUSION_VALUE, uniform(&mut rng, d_s, d_m, bound_m)),
            w_o: store.add(
                CLASSIFIER_WEIGHT,
                uniform(&mut rng, Stance::COUNT, 2 * d_m + d_s, bound_m),
            ),
            b_o: store.add(CLASSIFIER_BIAS, Mat::zeros((1, Stance::COUNT))),
        };
        Ok(StanceModel {
            store,
            config,
            encoders,
            ids,
        })
    }

    /// Rebuilds a model around loaded parameters.
    pub fn from_store(config: &ModelConfig, store: ParamStore, vocab: Option<Vocab>) -> Result<Self> {
        let encoders = match &config.backend {
            Backend::Toy => {
                let vocab = vocab.ok_or_else(|| Error::config("toy backend needs a vocabulary"))?;
                Encoders::Toy(DualEncoder::bind(&store, vocab, &config.encoder)?)
            }
            Backend::Frozen { path } => Encoders::Frozen(FrozenFeatures::load(path, config.encoder.dropout_rate)?),
        };
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::config(format!("parameter store lacks {name}")))
        };
        let ids = HeadIds {
            proj_w1: id(PROJECTION_W1)?,
            proj_w2: id(PROJECTION_W2)?,
            w_q: id(FUSION_QUERY)?,
            w_k: id(FUSION_KEY)?,
            w_v: id(FUSION_VALUE)?,
            w_o: id(CLASSIFIER_WEIGHT)?,
            b_o: id(CLASSIFIER_BIAS)?,
        };
        Ok(StanceModel {
            store,
            config: config.clone(),
            encoders,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match &self.encoders {
            Encoders::Toy(e) => Some(&e.vocab),
            Encoders::Frozen(_) => None,
        }
    }

    pub fn encoder(&self) -> &dyn TapeEncoder {
        match &self.encoders {
            Encoders::Toy(e) => e,
            Encoders::Frozen(f) => f,
        }
    }

    pub fn fusion_kind(&self) -> FusionKind {
        self.config.fusion
    }

    pub fn set_fusion_kind(&mut self, kind: FusionKind) {
        self.config.fusion = kind;
    }

    pub fn projection(&self) -> ProjectionHead {
        ProjectionHead {
            w1: self.store.get(self.ids.proj_w1).clone(),
            w2: self.store.get(self.ids.proj_w2).clone(),
        }
    }

    pub fn attention_params(&self) -> AttentionParams {
        AttentionParams {
            w_q: self.store.get(self.ids.w_q).clone(),
            w_k: self.store.get(self.ids.w_k).clone(),
            w_v: self.store.get(self.ids.w_v).clone(),
        }
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            w_o: self.store.get(self.ids.w_o).clone(),
            b_o: self.store.get(self.ids.b_o).row(0).to_owned(),
        }
    }

    /// Ids of the projection head, fusion and classifier parameters.
    pub fn head_param_ids(&self) -> [ParamId; 7] {
        let i = self.ids;
        [i.proj_w1, i.proj_w2, i.w_q, i.w_k, i.w_v, i.w_o, i.b_o]
    }

    /// `relu(H W1ᵀ) W2ᵀ` for stacked rows `H`.
    pub fn project_rows(&self, tape: &mut Tape, h: Var) -> Var {
        let w1 = tape.param(self.ids.proj_w1);
        let hidden = tape.matmul_bt(h, w1);
        let hidden = tape.relu(hidden);
        let w2 = tape.param(self.ids.proj_w2);
        tape.matmul_bt(hidden, w2)
    }

    /// Fusion of `h` with a joint encoding followed by the softmax classifier.
    pub fn classify_vars(&self, tape: &mut Tape, joint: JointVars, h: Var) -> Var {
        let n = tape.value(joint.tokens).nrows();
        let w_v = tape.param(self.ids.w_v);
        let values = tape.matmul_bt(joint.tokens, w_v);
        let weights = match self.config.fusion {
            FusionKind::Attention => {
                let w_q = tape.param(self.ids.w_q);
                let query = tape.matmul_bt(h, w_q);
                let w_k = tape.param(self.ids.w_k);
                let keys = tape.matmul_bt(joint.tokens, w_k);
                let scores = tape.matmul_bt(query, keys);
                tape.softmax_rows(scores)
            }
            FusionKind::Concat => tape.constant(Mat::from_elem((1, n), 1.0 / n as f64)),
        };
        let tail = tape.matmul(weights, values);
        let fused = tape.concat_cols(&[h, joint.pooled, tail]);
        let w_o = tape.param(self.ids.w_o);
        let logits = tape.matmul_bt(fused, w_o);
        let b_o = tape.param(self.ids.b_o);
        let logits = tape.add_row(logits, b_o);
        tape.softmax_rows(logits)
    }

    /// Joint encoding, one masked-sentence pass and classification.
    pub fn forward(&self, tape: &mut Tape, inst: &Instance, mode: &mut Mode) -> Result<ForwardVars> {
        let masked = masked_text(inst)?;
        let enc = self.encoder();
        let joint = enc.joint(tape, &inst.target, &inst.text, mode)?;
        let h = enc.masked(tape, masked, mode)?;
        let probs = self.classify_vars(tape, joint, h);
        Ok(ForwardVars { joint, h, probs })
    }

    /// A second stochastic view of the instance's masked sentence.
    pub fn extra_view(&self, tape: &mut Tape, inst: &Instance, mode: &mut Mode) -> Result<Var> {
        self.encoder().masked(tape, masked_text(inst)?, mode)
    }

    /// Deterministic class probabilities.
    pub fn predict_proba(&self, inst: &Instance) -> Result<Array1<f64>> {
        let mut tape = Tape::new(&self.store);
        let vars = self.forward(&mut tape, inst, &mut Mode::Deterministic)?;
        Ok(tape.value(vars.probs).row(0).to_owned())
    }

    /// Deterministic probabilities for many instances, `n × 3`.
    pub fn predict_proba_batch(&self, instances: &[Instance]) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = instances
            .par_iter()
            .map(|inst| self.predict_proba(inst))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), Stance::COUNT));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }

    /// Argmax predictions; ties go to the lower class index.
    pub fn predict(&self, instances: &[Instance]) -> Result<Vec<Stance>> {
        let probs = self.predict_proba_batch(instances)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                Stance::from_index(best).expect("three classes")
            })
            .collect())
    }

    /// Deterministic masked-sentence vector `h`.
    pub fn embed_masked(&self, masked: &str) -> Result<Array1<f64>> {
        let mut tape = Tape::new(&self.store);
        let h = self.encoder().masked(&mut tape, masked, &mut Mode::Deterministic)?;
        Ok(tape.value(h).row(0).to_owned())
    }
}
