//! Adapter for features produced by an external pretrained encoder.
//!
//! The external model is run once over the corpus and its outputs are stored
//! as line-delimited JSON. During training the features are constants; in
//! stochastic mode dropout is applied to them so view pairs still differ.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::encoder::{JointVars, Mode, TapeEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureRecord {
    Joint {
        target: String,
        text: String,
        pooled: Vec<f64>,
        tokens: Vec<Vec<f64>>,
    },
    Masked {
        text: String,
        pooled: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct FrozenFeatures {
    hidden_dim: usize,
    dropout_rate: f64,
    joint: HashMap<(String, String), (Vec<f64>, Array2<f64>)>,
    masked: HashMap<String, Vec<f64>>,
}

impl FrozenFeatures {
    pub fn from_records(records: impl IntoIterator<Item = FeatureRecord>, dropout_rate: f64) -> Result<Self> {
        let mut out = FrozenFeatures {
            dropout_rate,
            ..Default::default()
        };
        for (i, record) in records.into_iter().enumerate() {
            let row = i + 1;
            let pooled_len = match &record {
                FeatureRecord::Joint { pooled, .. } | FeatureRecord::Masked { pooled, .. } => pooled.len(),
            };
            if out.hidden_dim == 0 {
                out.hidden_dim = pooled_len;
            }
            if pooled_len != out.hidden_dim || pooled_len == 0 {
                return Err(Error::Data {
                    row,
                    message: format!("feature width {pooled_len}, expected {}", out.hidden_dim),
                });
            }
            match record {
                FeatureRecord::Joint { target, text, pooled, tokens } => {
                    let n = tokens.len();
                    if n == 0 || tokens.iter().any(|t| t.len() != pooled_len) {
                        return Err(Error::Data {
                            row,
                            message: "token matrix is empty or ragged".into(),
                        });
                    }
                    let flat: Vec<f64> = tokens.into_iter().flatten().collect();
                    let tokens = Array2::from_shape_vec((n, pooled_len), flat).expect("checked shape");
                    out.joint.insert((target, text), (pooled, tokens));
                }
                FeatureRecord::Masked { text, pooled } => {
                    out.masked.insert(text, pooled);
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path, dropout_rate: f64) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Self::from_records(records, dropout_rate)
    }

    fn missing(what: &str, key: &str) -> Error {
        Error::contract(format!("no precomputed {what} features for {key:?}"))
    }
}

fn row(values: &[f64]) -> Mat {
    Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

impl TapeEncoder for FrozenFeatures {
    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    fn joint(&self, tape: &mut Tape, target: &str, text: &str, mode: &mut Mode) -> Result<JointVars> {
        let (pooled, tokens) = self
            .joint
            .get(&(target.to_string(), text.to_string()))
            .ok_or_else(|| Self::missing("joint", text))?;
        let p = tape.constant(row(pooled));
        let t = tape.constant(tokens.clone());
        Ok(JointVars {
            pooled: mode.dropout(tape, p, self.dropout_rate),
            tokens: mode.dropout(tape, t, self.dropout_rate),
        })
    }

    fn masked(&self, tape: &mut Tape, masked_text: &str, mode: &mut Mode) -> Result<Var> {
        let pooled = self
            .masked
            .get(masked_text)
            .ok_or_else(|| Self::missing("masked", masked_text))?;
        let h = tape.constant(row(pooled));
        Ok(mode.dropout(tape, h, self.dropout_rate))
    }
}
