//! Checkpoint directories: a versioned manifest, one little-endian `f64`
//! file per tensor, the vocabulary and the epoch history.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamStore};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::training::{ModelConfig, StanceModel, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f64-le";
const MANIFEST: &str = "manifest.json";
const VOCAB: &str = "vocab.txt";
const HISTORY: &str = "history.jsonl";
const TENSOR_DIR: &str = "tensors";

/// One line of the epoch history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cls_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub epoch: usize,
    pub seed: u64,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: StanceModel,
    pub train_config: TrainConfig,
    /// Index of the epoch whose parameters are stored.
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

fn checkpoint_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn tensor_bytes(m: &Mat) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 8);
    for x in m.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn read_tensor(path: &Path, shape: [usize; 2]) -> Result<Mat> {
    let bytes = fs::read(path)?;
    let expected = shape[0] * shape[1] * 8;
    if bytes.len() != expected {
        return Err(checkpoint_error(
            path,
            format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Mat::from_shape_vec((shape[0], shape[1]), values).expect("length checked"))
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tensor_dir = dir.join(TENSOR_DIR);
        fs::create_dir_all(&tensor_dir)?;
        let mut tensors = Vec::with_capacity(self.model.store.len());
        for (name, value) in self.model.store.iter() {
            let file = format!("{TENSOR_DIR}/{name}.bin");
            fs::write(dir.join(&file), tensor_bytes(value))?;
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [value.nrows(), value.ncols()],
                dtype: DTYPE.to_string(),
                file,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            seed: self.seed,
            model_config: self.model.config().clone(),
            train_config: self.train_config.clone(),
            tensors,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        if let Some(vocab) = self.model.vocab() {
            vocab.save(&dir.join(VOCAB))?;
        }
        let mut history = fs::File::create(dir.join(HISTORY))?;
        for record in &self.history {
            writeln!(history, "{}", serde_json::to_string(record)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest = serde_json::from_str(
            &fs::read_to_string(&manifest_path).map_err(|e| checkpoint_error(&manifest_path, e.to_string()))?,
        )?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(checkpoint_error(
                &manifest_path,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        let mut store = ParamStore::new();
        for entry in &manifest.tensors {
            if entry.dtype != DTYPE {
                return Err(checkpoint_error(&manifest_path, format!("unsupported dtype {}", entry.dtype)));
            }
            let path: PathBuf = dir.join(&entry.file);
            store.add(entry.name.clone(), read_tensor(&path, entry.shape)?);
        }
        let vocab_path = dir.join(VOCAB);
        let vocab = if vocab_path.exists() {
            Some(Vocab::load(&vocab_path)?)
        } else {
            None
        };
        let model = StanceModel::from_store(&manifest.model_config, store, vocab)?;
        let mut history = Vec::new();
        let history_path = dir.join(HISTORY);
        if history_path.exists() {
            for line in BufReader::new(fs::File::open(&history_path)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    history.push(serde_json::from_str(&line)?);
                }
            }
        }
        Ok(Checkpoint {
            model,
            train_config: manifest.train_config,
            epoch: manifest.epoch,
            seed: manifest.seed,
            history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn bit_exact_round_trip() {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                hidden_dim: 4,
                n_heads: 1,
                ffn_dim: 4,
                n_layers: 1,
                ..EncoderConfig::default()
            },
            projection_dim: 3,
            fusion_dim: 2,
            ..ModelConfig::default()
        };
        let model = StanceModel::init(&cfg, Vocab::build(["a b c"], 1), 1).unwrap();
        let ckpt = Checkpoint {
            model,
            train_config: TrainConfig::default(),
            epoch: 2,
            seed: 9,
            history: vec![EpochRecord {
                epoch: 0,
                cls_loss: 1.5,
                cl_loss: 0.25,
                total_loss: 1.525,
                dev_metric: 0.1 + 0.2,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.model.store, ckpt.model.store);
        assert_eq!(back.history, ckpt.history);
        assert_eq!((back.epoch, back.seed), (2, 9));
        assert_eq!(back.model.config(), ckpt.model.config());
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(read_tensor(&path, [1, 2]), Err(Error::Checkpoint { .. })));
    }
}
