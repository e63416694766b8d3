//! Alignment/uniformity traces during training and embedding export.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::contrastive::{alignment_metric, project, uniformity_metric, ProjectionHead};
use crate::corpus::{DatasetBundle, Instance};
use crate::derive_seed;
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::harness::metrics::HeadlineMetric;
use crate::training::{fit_with_observer, Checkpoint, ModelConfig, StanceModel, TrainConfig};

/// Steps between trace records.
pub const TRACE_INTERVAL: usize = 5;
const PROBE_DROPOUT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub alignment: f64,
    pub uniformity: f64,
}

/// Where the probe vectors are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSpace {
    /// The masked-sentence vector `h`.
    #[default]
    Sentence,
    /// The projection head output the contrastive loss is computed on.
    Projection,
}

impl std::str::FromStr for ProbeSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sentence" | "h" => Ok(ProbeSpace::Sentence),
            "projection" | "z" => Ok(ProbeSpace::Projection),
            _ => Err(Error::config(format!("unknown probe space {s:?}"))),
        }
    }
}

/// Masked sentences on which the metrics are measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub sentences: Vec<String>,
    /// Pairs use dropout views when set; otherwise both members are the
    /// deterministic encoding.
    pub stochastic_views: bool,
    pub space: ProbeSpace,
    pub seed: u64,
}

impl ProbeSet {
    pub fn new(sentences: Vec<String>, seed: u64) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::contract("probe set is empty"));
        }
        Ok(ProbeSet {
            sentences,
            stochastic_views: true,
            space: ProbeSpace::Sentence,
            seed,
        })
    }

    /// Up to `limit` masked sentences taken in order.
    pub fn from_instances(instances: &[Instance], limit: usize, seed: u64) -> Result<Self> {
        let sentences: Vec<String> = instances
            .iter()
            .filter_map(|i| i.masked_text.clone())
            .take(limit)
            .collect();
        Self::new(sentences, seed)
    }

    pub fn deterministic(mut self) -> Self {
        self.stochastic_views = false;
        self
    }

    pub fn in_space(mut self, space: ProbeSpace) -> Self {
        self.space = space;
        self
    }
}

/// Alignment over view pairs and uniformity over deterministic `h`.
/// The same dropout stream is replayed at every call, so records from
/// different steps see identical masks.
pub fn measure(model: &StanceModel, probes: &ProbeSet, step: usize) -> Result<TraceRecord> {
    if probes.sentences.is_empty() {
        return Err(Error::contract("probe set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(probes.seed, PROBE_DROPOUT_STREAM));
    let head = model.projection();
    let place = |v: Array1<f64>, head: &ProjectionHead| -> Result<Array1<f64>> {
        match probes.space {
            ProbeSpace::Sentence => Ok(v),
            ProbeSpace::Projection => project(v.view(), head),
        }
    };
    let mut pairs = Vec::with_capacity(probes.sentences.len());
    let mut points = Vec::with_capacity(probes.sentences.len());
    for sentence in &probes.sentences {
        let h = place(model.embed_masked(sentence)?, &head)?;
        let pair = if probes.stochastic_views {
            let mut tape = Tape::new(&model.store);
            let mut mode = Mode::Stochastic(&mut rng);
            let a = model.encoder().masked(&mut tape, sentence, &mut mode)?;
            let b = model.encoder().masked(&mut tape, sentence, &mut mode)?;
            let a = tape.value(a).row(0).to_owned();
            let b = tape.value(b).row(0).to_owned();
            (place(a, &head)?, place(b, &head)?)
        } else {
            (h.clone(), h.clone())
        };
        pairs.push(pair);
        points.push(h);
    }
    let uniformity = if points.len() >= 2 {
        uniformity_metric(&points)?
    } else {
        0.0
    };
    Ok(TraceRecord {
        step,
        alignment: alignment_metric(&pairs)?,
        uniformity,
    })
}

/// Trains like `fit` and records the probe metrics at step 0, every
/// `TRACE_INTERVAL` steps and at the last step.
pub fn diagnostics_trace(
    bundle: &DatasetBundle,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    metric: HeadlineMetric,
    probes: &ProbeSet,
) -> Result<(Checkpoint, Vec<TraceRecord>)> {
    if probes.sentences.is_empty() {
        return Err(Error::contract("probe set is empty"));
    }
    let mut trace = Vec::new();
    let mut last: Option<(usize, StanceModel)> = None;
    let checkpoint = fit_with_observer(bundle, model_config, train_config, metric, &mut |model, step| {
        let step = step.map_or(0, |m| m.step);
        if step % TRACE_INTERVAL == 0 {
            trace.push(measure(model, probes, step)?);
            last = None;
        } else {
            last = Some((step, model.clone()));
        }
        Ok(())
    })?;
    if let Some((step, model)) = last {
        trace.push(measure(&model, probes, step)?);
    }
    Ok((checkpoint, trace))
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in trace {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Projector {
    #[default]
    None,
    Pca2d,
}

impl std::str::FromStr for Projector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" => Ok(Projector::None),
            "pca2d" | "pca" => Ok(Projector::Pca2d),
            _ => Err(Error::config(format!("unknown projector {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub target: String,
    pub split: String,
    pub label: Option<String>,
    pub values: Vec<f64>,
}

/// Deterministic masked-sentence vectors for tagged instances, optionally
/// reduced to their first two principal components.
pub fn export_embeddings(
    model: &StanceModel,
    tagged: &[(&str, &Instance)],
    projector: Projector,
) -> Result<Vec<EmbeddingRow>> {
    let mut vectors = Vec::with_capacity(tagged.len());
    for (_, inst) in tagged {
        let masked = inst
            .masked_text
            .as_deref()
            .ok_or_else(|| Error::contract(format!("instance {} has no masked text", inst.id)))?;
        vectors.push(model.embed_masked(masked)?);
    }
    let values: Vec<Vec<f64>> = match projector {
        Projector::None => vectors.into_iter().map(|v| v.to_vec()).collect(),
        Projector::Pca2d => {
            let d = vectors.first().map_or(0, |v| v.len());
            let mut m = Array2::zeros((vectors.len(), d));
            for (i, v) in vectors.iter().enumerate() {
                m.row_mut(i).assign(v);
            }
            pca(&m, 2).rows().into_iter().map(|r| r.to_vec()).collect()
        }
    };
    Ok(tagged
        .iter()
        .zip(values)
        .map(|((split, inst), values)| EmbeddingRow {
            id: inst.id.clone(),
            target: inst.target.clone(),
            split: split.to_string(),
            label: inst.label.map(|l| l.as_str().to_string()),
            values,
        })
        .collect())
}

/// Scores of mean-centred rows on the top `k` principal axes. Axes beyond
/// the rank of the data are zero columns.
pub fn pca(data: &Array2<f64>, k: usize) -> Array2<f64> {
    let (n, d) = data.dim();
    let mut out = Array2::zeros((n, k));
    if n == 0 || d == 0 {
        return out;
    }
    let mean: Array1<f64> = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centred = DMatrix::from_fn(n, d, |i, j| data[[i, j]] - mean[j]);
    let svd = centred.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    for (c, &axis) in order.iter().take(k).enumerate() {
        let direction = v_t.row(axis);
        // Sign convention: the largest-magnitude loading is positive.
        let pivot = direction.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[[i, c]] = sign * centred.row(i).dot(&direction);
        }
    }
    out
}

pub fn write_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?;
    let width = rows.first().map_or(0, |r| r.values.len());
    let mut header = vec!["id".to_string(), "target".into(), "split".into(), "label".into()];
    header.extend((0..width).map(|j| format!("dim{j}")));
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![
            row.id.clone(),
            row.target.clone(),
            row.split.clone(),
            row.label.clone().unwrap_or_default(),
        ];
        record.extend(row.values.iter().map(|v| format!("{v:e}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
