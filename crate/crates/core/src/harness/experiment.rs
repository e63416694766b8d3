//! Run configuration and the split → topics → augment → train → evaluate
//! pipeline, repeated over seeds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{error, info};

use crate::corpus::{
    load_dataset, make_cross_target_split, make_vast_split, make_zero_shot_split, write_masked_bundle,
    ColumnSpec, DatasetBundle, Instance, LabelScheme, Protocol, Stance, VastSubset,
};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::harness::evaluate::evaluate;
use crate::harness::metrics::{HeadlineMetric, MetricReport, MicroScope};
use crate::harness::synthetic::{synthetic_bundle, SyntheticConfig};
use crate::topicmask::{apply_augmentation, fit_topic_lexicon, MaskStrategy, TopicLexicon, TopicModelParams};
use crate::training::{fit, Backend, Checkpoint, ModelConfig, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Sem16,
    Wtwt,
    Covid,
    Vast,
    /// Any delimited file; columns given in the config.
    Custom,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "sem16" | "semeval" => Ok(DatasetKind::Sem16),
            "wtwt" | "wt-wt" => Ok(DatasetKind::Wtwt),
            "covid" | "covid-19" | "covid19" => Ok(DatasetKind::Covid),
            "vast" => Ok(DatasetKind::Vast),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(Error::config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Everything one experiment needs. Read from a flat TOML file; every
/// field has a default except the dataset paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Single labeled file for SEM16, WT-WT, COVID-19 and custom data.
    pub data_path: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub text_column: Option<String>,
    pub target_column: Option<String>,
    pub label_column: Option<String>,
    pub id_column: Option<String>,
    pub delimiter: Option<char>,

    /// Defaults from the dataset: cross-target when source and destination
    /// targets are set, otherwise zero-shot.
    pub protocol: Option<Protocol>,
    pub held_out_target: Option<String>,
    pub source_target: Option<String>,
    pub dest_target: Option<String>,
    pub vast_subset: VastSubset,
    /// 0.15 for leave-one-target-out, 0.3 for cross-target when unset.
    pub dev_fraction: Option<f64>,
    pub micro_scope: MicroScope,

    pub variant: Variant,
    pub output_dir: Option<PathBuf>,
    pub repeats: usize,
    pub parallel: bool,
    pub seed: u64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eta: f64,
    pub l2_coefficient: f64,
    pub temperature: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    /// 0 disables gradient clipping.
    pub grad_clip: f64,

    pub n_topics: usize,
    pub n_keywords: usize,
    pub doc_topic_prior: Option<f64>,
    pub topic_word_prior: f64,
    pub gibbs_iterations: usize,
    pub filter_stop_words: bool,
    pub random_mask_fraction: f64,

    pub hidden_dim: usize,
    pub max_sequence_length: usize,
    pub dropout_rate: f64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub share_weights: bool,
    pub projection_hidden: Option<usize>,
    pub projection_dim: usize,
    pub fusion_dim: usize,
    /// Precomputed pretrained-encoder features; selects the frozen backend.
    pub features_path: Option<PathBuf>,

    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let topics = TopicModelParams::default();
        let encoder = EncoderConfig::default();
        let model = ModelConfig::default();
        RunConfig {
            dataset: DatasetKind::Synthetic,
            data_path: None,
            train_path: None,
            dev_path: None,
            test_path: None,
            text_column: None,
            target_column: None,
            label_column: None,
            id_column: None,
            delimiter: None,
            protocol: None,
            held_out_target: None,
            source_target: None,
            dest_target: None,
            vast_subset: VastSubset::All,
            dev_fraction: None,
            micro_scope: MicroScope::FavorAgainst,
            variant: Variant::Full,
            output_dir: None,
            repeats: 1,
            parallel: false,
            seed: 0,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            eta: train.eta,
            l2_coefficient: train.l2_coefficient,
            temperature: train.temperature,
            patience: train.patience.unwrap_or(0),
            grad_clip: train.grad_clip.unwrap_or(0.0),
            n_topics: topics.n_topics,
            n_keywords: topics.n_keywords,
            doc_topic_prior: topics.doc_topic_prior,
            topic_word_prior: topics.topic_word_prior,
            gibbs_iterations: topics.gibbs_iterations,
            filter_stop_words: topics.filter_stop_words,
            random_mask_fraction: 0.15,
            hidden_dim: encoder.hidden_dim,
            max_sequence_length: encoder.max_sequence_length,
            dropout_rate: encoder.dropout_rate,
            n_layers: encoder.n_layers,
            n_heads: encoder.n_heads,
            ffn_dim: encoder.ffn_dim,
            share_weights: encoder.share_weights,
            projection_hidden: model.projection_hidden,
            projection_dim: model.projection_dim,
            fusion_dim: model.fusion_dim,
            features_path: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::config(format!("{key} is required for this dataset")))
}

impl RunConfig {
    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Applies `key=value` overrides on top of `base`. Values are read as
    /// TOML literals and fall back to plain strings; `synthetic.key` reaches
    /// the generator table.
    pub fn with_overrides(base: &RunConfig, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&base.to_toml()?).map_err(|e| Error::config(e.to_string()))?;
        for (key, raw) in overrides {
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            let mut slot = &mut table;
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::config("empty override key"))?;
            for part in parts {
                slot = slot
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(format!("{part} is not a table")))?;
            }
            slot.insert(leaf.to_string(), value);
        }
        Self::from_toml(&toml::to_string(&table).map_err(|e| Error::config(e.to_string()))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be >= 1"));
        }
        if !(self.random_mask_fraction > 0.0 && self.random_mask_fraction <= 1.0) {
            return Err(Error::config("random_mask_fraction must lie in (0, 1]"));
        }
        self.train_config(self.seed).validate()?;
        self.topic_params(self.seed).validate()?;
        self.model_config().validate()?;
        if self.dataset == DatasetKind::Synthetic {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    /// Seed of repeat `r`.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            eta: self.eta,
            l2_coefficient: self.l2_coefficient,
            temperature: self.temperature,
            seed,
            variant: self.variant,
            patience: (self.patience > 0).then_some(self.patience),
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            detach_contrastive: false,
        }
    }

    pub fn topic_params(&self, seed: u64) -> TopicModelParams {
        TopicModelParams {
            n_topics: self.n_topics,
            n_keywords: self.n_keywords,
            doc_topic_prior: self.doc_topic_prior,
            topic_word_prior: self.topic_word_prior,
            gibbs_iterations: self.gibbs_iterations,
            seed,
            filter_stop_words: self.filter_stop_words,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hidden_dim: self.hidden_dim,
                vocab_size: 0,
                max_sequence_length: self.max_sequence_length,
                dropout_rate: self.dropout_rate,
                n_layers: self.n_layers,
                n_heads: self.n_heads,
                ffn_dim: self.ffn_dim,
                seed: self.seed,
                share_weights: self.share_weights,
            },
            projection_hidden: self.projection_hidden,
            projection_dim: self.projection_dim,
            fusion_dim: self.fusion_dim,
            fusion: if self.variant == Variant::Concat {
                FusionKind::Concat
            } else {
                FusionKind::Attention
            },
            backend: match &self.features_path {
                Some(path) => Backend::Frozen { path: path.clone() },
                None => Backend::Toy,
            },
        }
    }

    pub fn mask_strategy(&self, seed: u64) -> MaskStrategy {
        match self.variant {
            Variant::NoTopicmask => MaskStrategy::Random {
                fraction: self.random_mask_fraction,
                seed,
            },
            _ => MaskStrategy::Topic,
        }
    }

    fn column_spec(&self) -> ColumnSpec {
        let mut spec = match self.dataset {
            DatasetKind::Sem16 => ColumnSpec::semeval(),
            DatasetKind::Wtwt => ColumnSpec::new("text", "target", Some("stance")),
            DatasetKind::Covid => ColumnSpec::new("Tweet", "Target", Some("Stance")).with_delimiter(b','),
            DatasetKind::Vast => ColumnSpec::vast(),
            DatasetKind::Custom | DatasetKind::Synthetic => ColumnSpec::canonical(),
        };
        if let Some(c) = &self.text_column {
            spec.text = c.clone();
        }
        if let Some(c) = &self.target_column {
            spec.target = c.clone();
        }
        if let Some(c) = &self.label_column {
            spec.label = Some(c.clone());
        }
        if let Some(c) = &self.id_column {
            spec.id = Some(c.clone());
        }
        if let Some(d) = self.delimiter {
            spec.delimiter = d as u8;
        }
        if self.dataset == DatasetKind::Custom {
            spec.seen = None;
            spec.masked_text = None;
        }
        spec
    }

    fn label_scheme(&self) -> LabelScheme {
        match self.dataset {
            DatasetKind::Sem16 => LabelScheme::semeval(),
            DatasetKind::Wtwt => LabelScheme::wtwt(),
            DatasetKind::Covid => LabelScheme::covid(),
            DatasetKind::Vast => LabelScheme::vast(),
            DatasetKind::Custom | DatasetKind::Synthetic => LabelScheme::canonical(),
        }
    }

    /// The headline metric: all three classes for VAST, otherwise by protocol.
    pub fn headline(&self, protocol: Protocol) -> HeadlineMetric {
        match (self.dataset, protocol) {
            (DatasetKind::Vast, _) => HeadlineMetric::AllClasses,
            (_, Protocol::CrossTarget) => HeadlineMetric::MicroMacro {
                micro: self.micro_scope,
            },
            _ => HeadlineMetric::FavorAgainst,
        }
    }

    /// Loads the data and builds the configured split. The synthetic
    /// generator is reseeded per run with `synthetic.seed + seed`.
    pub fn build_bundle(&self, seed: u64) -> Result<DatasetBundle> {
        match self.dataset {
            DatasetKind::Synthetic => synthetic_bundle(&SyntheticConfig {
                seed: self.synthetic.seed.wrapping_add(seed),
                ..self.synthetic.clone()
            }),
            DatasetKind::Vast => make_vast_split(
                require(&self.train_path, "train_path")?,
                require(&self.dev_path, "dev_path")?,
                require(&self.test_path, "test_path")?,
                &self.column_spec(),
                &self.label_scheme(),
                self.vast_subset,
            ),
            _ => {
                let instances = load_dataset(
                    require(&self.data_path, "data_path")?,
                    &self.column_spec(),
                    &self.label_scheme(),
                )?;
                self.split(&instances, seed)
            }
        }
    }

    /// Applies the configured protocol to already loaded instances.
    pub fn split(&self, instances: &[Instance], seed: u64) -> Result<DatasetBundle> {
        let cross = self.source_target.is_some() || self.dest_target.is_some();
        match self.protocol {
            Some(Protocol::CrossTarget) | None if cross => {
                let src = self
                    .source_target
                    .as_deref()
                    .ok_or_else(|| Error::config("source_target is required for cross-target runs"))?;
                let dst = self
                    .dest_target
                    .as_deref()
                    .ok_or_else(|| Error::config("dest_target is required for cross-target runs"))?;
                make_cross_target_split(instances, src, dst, self.dev_fraction.unwrap_or(0.3), seed)
            }
            Some(Protocol::CrossTarget) => Err(Error::config("cross-target runs need source_target and dest_target")),
            Some(Protocol::FewShot) => Err(Error::config("the few-shot protocol is only defined for VAST")),
            Some(Protocol::ZeroShot) | None => {
                let held_out = self
                    .held_out_target
                    .as_deref()
                    .ok_or_else(|| Error::config("held_out_target is required for zero-shot runs"))?;
                make_zero_shot_split(instances, held_out, self.dev_fraction.unwrap_or(0.15), seed)
            }
        }
    }
}

/// Fits the topic lexicon (topic masking only) and fills `masked_text` on
/// every split.
///
/// Topic models are unsupervised and fit per target, so test targets get
/// their own lexicon from their unlabeled text.
pub fn augment_bundle(bundle: &mut DatasetBundle, config: &RunConfig, seed: u64) -> Result<Option<TopicLexicon>> {
    let strategy = config.mask_strategy(seed);
    let lexicon = match strategy {
        MaskStrategy::Topic => {
            let all: Vec<Instance> = bundle
                .train
                .iter()
                .chain(&bundle.dev)
                .chain(&bundle.test)
                .cloned()
                .collect();
            fit_topic_lexicon(&all, &config.topic_params(seed))?
        }
        MaskStrategy::Random { .. } => TopicLexicon::default(),
    };
    for split in bundle.splits_mut() {
        apply_augmentation(split, &lexicon, strategy)?;
    }
    Ok(matches!(strategy, MaskStrategy::Topic).then_some(lexicon))
}

/// Result of one repeat.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub report: MetricReport,
}

/// One full pipeline pass for `seed`.
pub fn run_once(config: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let mut bundle = config.build_bundle(seed)?;
    let lexicon = augment_bundle(&mut bundle, config, seed)?;
    let metric = config.headline(bundle.protocol);
    let checkpoint = fit(&bundle, &config.model_config(), &config.train_config(seed), metric)?;
    let mut report = evaluate(&checkpoint, &bundle, metric)?;
    report.run_seed = seed;
    if let Some(out) = &config.output_dir {
        let dir = out.join(format!("run-{seed}"));
        fs::create_dir_all(&dir)?;
        write_masked_bundle(&dir.join("bundle"), &bundle)?;
        if let Some(lexicon) = &lexicon {
            lexicon.save(&dir.join("lexicon.tsv"))?;
        }
        checkpoint.save(&dir.join("checkpoint"))?;
        write_reports(&dir.join("report.jsonl"), std::slice::from_ref(&report))?;
    }
    Ok(RunOutcome {
        seed,
        checkpoint,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Mean and sample standard deviation over completed repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub completed: usize,
    pub headline_mean: f64,
    pub headline_stdev: f64,
    pub per_class_f1_mean: std::collections::BTreeMap<Stance, f64>,
    pub failures: Vec<RunFailure>,
}

pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(reports: &[MetricReport], failures: Vec<RunFailure>) -> Summary {
    let headlines: Vec<f64> = reports.iter().map(|r| r.headline).collect();
    let (headline_mean, headline_stdev) = mean_stdev(&headlines);
    let per_class_f1_mean = Stance::ALL
        .iter()
        .map(|&c| {
            let v: Vec<f64> = reports.iter().map(|r| r.per_class_f1[&c]).collect();
            (c, mean_stdev(&v).0)
        })
        .collect();
    Summary {
        runs: reports.len() + failures.len(),
        completed: reports.len(),
        headline_mean,
        headline_stdev,
        per_class_f1_mean,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub reports: Vec<MetricReport>,
    pub summary: Summary,
}

/// Runs every repeat; a failing repeat is recorded in the summary instead of
/// aborting the others.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.repeats).map(|r| config.repeat_seed(r)).collect();
    let run = |&seed: &u64| {
        info!(seed, variant = ?config.variant, "starting run");
        (seed, run_once(config, seed).map(|o| o.report))
    };
    let outcomes: Vec<(u64, Result<MetricReport>)> = if config.parallel {
        seeds.par_iter().map(run).collect()
    } else {
        seeds.iter().map(run).collect()
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) => {
                error!(seed, error = %e, "run failed");
                failures.push(RunFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let summary = summarize(&reports, failures);
    if let Some(out) = &config.output_dir {
        fs::create_dir_all(out)?;
        write_reports(&out.join("reports.jsonl"), &reports)?;
        fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(ExperimentResult { reports, summary })
}

pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in reports {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricReport>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
