//! Text encoders shared by both branches of the model.
//!
//! The joint encoder reads `[CLS] target [SEP] text [SEP]` and yields a pooled
//! vector plus the hidden states of the text positions. The masked-sentence
//! encoder reads `[CLS] masked_text [SEP]` and yields the pooled vector only.
//! In stochastic mode dropout is active, so two passes over the same input
//! give a positive pair for contrastive learning.

pub mod frozen;
pub mod transformer;
pub mod vocab;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::autodiff::{Mat, ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub use frozen::FrozenFeatures;
pub use transformer::TransformerEncoder;
pub use vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    /// Filled in from the vocabulary when a model is built.
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    pub dropout_rate: f64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub seed: u64,
    /// Use one parameter set for the joint and the masked-sentence encoder.
    pub share_weights: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 64,
            vocab_size: 0,
            max_sequence_length: 64,
            dropout_rate: 0.1,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            seed: 0,
            share_weights: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        if self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return Err(Error::config("hidden_dim must be divisible by n_heads"));
        }
        if self.max_sequence_length < 4 {
            return Err(Error::config("max_sequence_length must be >= 4"));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be >= 1"));
        }
        Ok(())
    }
}

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Deterministic,
    Stochastic(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Mode::Stochastic(_))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by 1/(1−p).
    pub fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Var {
        match self {
            Mode::Stochastic(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let shape = tape.value(x).raw_dim();
                let mask = Mat::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
            _ => x,
        }
    }
}

/// Pooled vector `z` and text-position states `Z` of a joint encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub pooled: Array1<f64>,
    pub tokens: Array2<f64>,
    pub token_count: usize,
}

/// Two dropout views of one masked sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub first: Array1<f64>,
    pub second: Array1<f64>,
}

/// Tape variables of a joint encoding: pooled `1 × d`, tokens `n × d`.
#[derive(Debug, Clone, Copy)]
pub struct JointVars {
    pub pooled: Var,
    pub tokens: Var,
}

/// An encoder that records its forward pass on a tape.
pub trait TapeEncoder {
    fn hidden_dim(&self) -> usize;

    fn joint(
        &self,
        tape: &mut Tape,
        target: &str,
        text: &str,
        mode: &mut Mode,
    ) -> Result<JointVars>;

    fn masked(&self, tape: &mut Tape, masked_text: &str, mode: &mut Mode) -> Result<Var>;

    fn dropout_rate(&self) -> f64;
}

/// The encode contract used outside training.
pub trait TextEncoder {
    fn hidden_dim(&self) -> usize;

    fn encode_joint(&self, target: &str, text: &str, mode: Mode) -> Result<EncodedText>;

    fn encode_masked(&self, masked_text: &str, mode: Mode) -> Result<Array1<f64>>;

    /// Two independent stochastic passes over the same masked sentence.
    fn make_view_pair(&self, masked_text: &str, rng: &mut ChaCha8Rng) -> Result<ViewPair>;
}

/// Runs a [`TapeEncoder`] over a parameter store on throwaway tapes.
pub struct Encoding<'a, E: TapeEncoder> {
    pub store: &'a ParamStore,
    pub encoder: &'a E,
}

fn row_vector(m: &Mat) -> Array1<f64> {
    m.row(0).to_owned()
}

impl<E: TapeEncoder> TextEncoder for Encoding<'_, E> {
    fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    fn encode_joint(&self, target: &str, text: &str, mut mode: Mode) -> Result<EncodedText> {
        let mut tape = Tape::new(self.store);
        let vars = self.encoder.joint(&mut tape, target, text, &mut mode)?;
        let tokens = tape.value(vars.tokens).clone();
        Ok(EncodedText {
            pooled: row_vector(tape.value(vars.pooled)),
            token_count: tokens.nrows(),
            tokens,
        })
    }

    fn encode_masked(&self, masked_text: &str, mut mode: Mode) -> Result<Array1<f64>> {
        let mut tape = Tape::new(self.store);
        let h = self.encoder.masked(&mut tape, masked_text, &mut mode)?;
        Ok(row_vector(tape.value(h)))
    }

    fn make_view_pair(&self, masked_text: &str, rng: &mut ChaCha8Rng) -> Result<ViewPair> {
        if self.encoder.dropout_rate() == 0.0 {
            warn!("dropout rate is 0: both views are identical and the contrastive loss degenerates");
        }
        let first = self.encode_masked(masked_text, Mode::Stochastic(rng))?;
        let second = self.encode_masked(masked_text, Mode::Stochastic(rng))?;
        Ok(ViewPair { first, second })
    }
}

/// Vocabulary plus the two transformer encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub vocab: Vocab,
    pub joint: TransformerEncoder,
    pub masked: TransformerEncoder,
}

pub const JOINT_PREFIX: &str = "joint_encoder";
pub const MASKED_PREFIX: &str = "masked_encoder";

impl DualEncoder {
    pub fn init(store: &mut ParamStore, vocab: Vocab, config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        config.vocab_size = vocab.len();
        let joint = TransformerEncoder::init(store, JOINT_PREFIX, &config, vocab.len(), rng);
        let masked = if config.share_weights {
            joint.clone()
        } else {
            TransformerEncoder::init(store, MASKED_PREFIX, &config, vocab.len(), rng)
        };
        Ok(DualEncoder { vocab, joint, masked })
    }

    pub fn bind(store: &ParamStore, vocab: Vocab, config: &EncoderConfig) -> Result<Self> {
        let missing = || Error::config("parameter store lacks encoder tensors");
        let joint = TransformerEncoder::bind(store, JOINT_PREFIX, config).ok_or_else(missing)?;
        let masked = if config.share_weights {
            joint.clone()
        } else {
            TransformerEncoder::bind(store, MASKED_PREFIX, config).ok_or_else(missing)?
        };
        Ok(DualEncoder { vocab, joint, masked })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.joint.config()
    }

    /// `[CLS] target [SEP] text [SEP]` ids and the text span, truncating text only.
    pub fn joint_ids(&self, target: &str, text: &str) -> Result<(Vec<usize>, std::ops::Range<usize>)> {
        let target_ids = self.vocab.encode(target);
        let mut text_ids = self.vocab.encode(text);
        if text_ids.is_empty() {
            return Err(Error::contract("cannot encode an empty text"));
        }
        let max_len = self.config().max_sequence_length;
        let budget = max_len.saturating_sub(target_ids.len() + 3);
        if budget == 0 {
            return Err(Error::contract(format!(
                "target {target:?} leaves no room for text within {max_len} tokens"
            )));
        }
        text_ids.truncate(budget);
        let mut ids = Vec::with_capacity(target_ids.len() + text_ids.len() + 3);
        ids.push(vocab::CLS_ID);
        ids.extend(target_ids);
        ids.push(vocab::SEP_ID);
        let start = ids.len();
        ids.extend(text_ids);
        let end = ids.len();
        ids.push(vocab::SEP_ID);
        Ok((ids, start..end))
    }

    /// `[CLS] masked_text [SEP]` ids, truncated from the right.
    pub fn masked_ids(&self, masked_text: &str) -> Result<Vec<usize>> {
        let mut body = self.vocab.encode(masked_text);
        if body.is_empty() {
            return Err(Error::contract("cannot encode an empty masked text"));
        }
        body.truncate(self.config().max_sequence_length - 2);
        let mut ids = Vec::with_capacity(body.len() + 2);
        ids.push(vocab::CLS_ID);
        ids.extend(body);
        ids.push(vocab::SEP_ID);
        Ok(ids)
    }
}

impl TapeEncoder for DualEncoder {
    fn hidden_dim(&self) -> usize {
        self.config().hidden_dim
    }

    fn dropout_rate(&self) -> f64 {
        self.config().dropout_rate
    }

    fn joint(&self, tape: &mut Tape, target: &str, text: &str, mode: &mut Mode) -> Result<JointVars> {
        let (ids, span) = self.joint_ids(target, text)?;
        let hidden = self.joint.forward(tape, &ids, mode);
        Ok(JointVars {
            pooled: tape.rows(hidden, 0, 1),
            tokens: tape.rows(hidden, span.start, span.end),
        })
    }

    fn masked(&self, tape: &mut Tape, masked_text: &str, mode: &mut Mode) -> Result<Var> {
        let ids = self.masked_ids(masked_text)?;
        let hidden = self.masked.forward(tape, &ids, mode);
        Ok(tape.rows(hidden, 0, 1))
    }
}

/// A self-contained toy encoder pair owning its parameters.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub store: ParamStore,
    pub encoder: DualEncoder,
}

impl ToyEncoder {
    /// Builds the vocabulary from `corpus` and initializes parameters from `config.seed`.
    pub fn new<S: AsRef<str>>(config: &EncoderConfig, corpus: impl IntoIterator<Item = S>) -> Result<Self> {
        let vocab = Vocab::build(corpus, 1);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = DualEncoder::init(&mut store, vocab, config, &mut rng)?;
        Ok(ToyEncoder { store, encoder })
    }

    pub fn encoding(&self) -> Encoding<'_, DualEncoder> {
        Encoding {
            store: &self.store,
            encoder: &self.encoder,
        }
    }
}

impl TextEncoder for ToyEncoder {
    fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    fn encode_joint(&self, target: &str, text: &str, mode: Mode) -> Result<EncodedText> {
        self.encoding().encode_joint(target, text, mode)
    }

    fn encode_masked(&self, masked_text: &str, mode: Mode) -> Result<Array1<f64>> {
        self.encoding().encode_masked(masked_text, mode)
    }

    fn make_view_pair(&self, masked_text: &str, rng: &mut ChaCha8Rng) -> Result<ViewPair> {
        self.encoding().make_view_pair(masked_text, rng)
    }
}
