use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use stancekit::corpus::{read_bundle, write_bundle, write_masked_bundle, DatasetBundle, Instance, Stance};
use stancekit::harness::diagnostics::{diagnostics_trace, export_embeddings, write_embeddings, write_trace};
use stancekit::harness::experiment::{augment_bundle, read_reports, write_reports, RunConfig, Summary};
use stancekit::harness::{evaluate, run_experiment, MetricReport, ProbeSet, ProbeSpace, Projector};
use stancekit::topicmask::{apply_augmentation, fit_topic_lexicon, MaskStrategy, TopicLexicon};
use stancekit::training::{fit, Checkpoint, EpochRecord};

#[derive(Parser)]
#[command(name = "stancekit", version, about = "Zero-shot stance detection toolkit")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML run config supplying defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config field, e.g. `--set eta=0.5 --set synthetic.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        let mut pairs = Vec::with_capacity(self.overrides.len());
        for raw in &self.overrides {
            let (k, v) = raw
                .split_once('=')
                .with_context(|| format!("override {raw:?} is not KEY=VALUE"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::with_overrides(&base, &pairs)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and write train/dev/test files plus a manifest.
    Prepare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-target topic keywords over a prepared bundle.
    FitTopics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add masked sentences to a bundle, from a lexicon or freshly fitted.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on an augmented bundle and save the best-dev checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a bundle's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Append the report as one JSON line.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Full experiment: every repeat builds, masks, trains and evaluates.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train while recording alignment and uniformity every 5 steps.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of masked test sentences to probe.
        #[arg(long, default_value_t = 64)]
        probes: usize,
        #[arg(long, default_value = "sentence")]
        space: ProbeSpace,
    },
    /// Write masked-sentence vectors, optionally reduced to two dimensions.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "none")]
        projector: Projector,
        /// Comma-separated splits to include.
        #[arg(long, default_value = "train,test")]
        splits: String,
    },
    /// Print saved reports as a table.
    Show {
        reports: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    match cli.command {
        Command::Prepare { common, out } => {
            let cfg = common.config()?;
            let bundle = cfg.build_bundle(cfg.seed)?;
            write_bundle(&out, &bundle)?;
            print_bundle(&bundle);
        }
        Command::FitTopics { common, bundle, out } => {
            let cfg = common.config()?;
            let bundle = read_bundle(&bundle)?;
            let all: Vec<Instance> = bundle.train.iter().chain(&bundle.dev).chain(&bundle.test).cloned().collect();
            let lexicon = fit_topic_lexicon(&all, &cfg.topic_params(cfg.seed))?;
            lexicon.save(&out)?;
            for (target, words) in &lexicon.per_target {
                println!("{target}\t{}", words.join(", "));
            }
        }
        Command::Augment {
            common,
            bundle,
            lexicon,
            out,
        } => {
            let cfg = common.config()?;
            let mut bundle = read_bundle(&bundle)?;
            match (lexicon, cfg.mask_strategy(cfg.seed)) {
                (Some(path), MaskStrategy::Topic) => {
                    let lexicon = TopicLexicon::load(&path)?;
                    for split in bundle.splits_mut() {
                        apply_augmentation(split, &lexicon, MaskStrategy::Topic)?;
                    }
                }
                (Some(_), MaskStrategy::Random { .. }) => bail!("--lexicon cannot be combined with NO_TOPICMASK"),
                (None, _) => {
                    augment_bundle(&mut bundle, &cfg, cfg.seed)?;
                }
            }
            write_masked_bundle(&out, &bundle)?;
            print_bundle(&bundle);
        }
        Command::Train { common, bundle, out } => {
            let cfg = common.config()?;
            let bundle = read_augmented(&bundle)?;
            let metric = cfg.headline(bundle.protocol);
            let checkpoint = fit(&bundle, &cfg.model_config(), &cfg.train_config(cfg.seed), metric)?;
            checkpoint.save(&out)?;
            print_history(&checkpoint.history, checkpoint.epoch);
        }
        Command::Evaluate {
            common,
            checkpoint,
            bundle,
            report,
        } => {
            let cfg = common.config()?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let bundle = read_augmented(&bundle)?;
            let mut result = evaluate(&checkpoint, &bundle, cfg.headline(bundle.protocol))?;
            result.run_seed = cfg.seed;
            if let Some(path) = report {
                append_report(&path, &result)?;
            }
            print_reports(std::slice::from_ref(&result));
        }
        Command::Run { common, out } => {
            let mut cfg = common.config()?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let result = run_experiment(&cfg)?;
            print_reports(&result.reports);
            print_summary(&result.summary);
            if result.summary.completed == 0 {
                bail!("every run failed");
            }
        }
        Command::Trace {
            common,
            bundle,
            out,
            probes,
            space,
        } => {
            let cfg = common.config()?;
            let bundle = read_augmented(&bundle)?;
            let probe_set = ProbeSet::from_instances(&bundle.test, probes, cfg.seed)?.in_space(space);
            let metric = cfg.headline(bundle.protocol);
            let (_, trace) =
                diagnostics_trace(&bundle, &cfg.model_config(), &cfg.train_config(cfg.seed), metric, &probe_set)?;
            write_trace(&out, &trace)?;
            println!("{:>6}  {:>10}  {:>10}", "step", "alignment", "uniformity");
            for r in &trace {
                println!("{:>6}  {:>10.4}  {:>10.4}", r.step, r.alignment, r.uniformity);
            }
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            bundle,
            out,
            projector,
            splits,
        } => {
            let _cfg = common.config()?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let bundle = read_augmented(&bundle)?;
            let mut tagged: Vec<(&str, &Instance)> = Vec::new();
            for name in splits.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let split = match name {
                    "train" => &bundle.train,
                    "dev" => &bundle.dev,
                    "test" => &bundle.test,
                    other => bail!("unknown split {other:?}"),
                };
                tagged.extend(split.iter().map(|i| (name, i)));
            }
            let rows = export_embeddings(&checkpoint.model, &tagged, projector)?;
            write_embeddings(&out, &rows)?;
            println!("wrote {} rows of width {} to {}", rows.len(), rows.first().map_or(0, |r| r.values.len()), out.display());
        }
        Command::Show { reports } => {
            let reports = read_reports(&reports)?;
            print_reports(&reports);
        }
    }
    Ok(())
}

fn read_augmented(dir: &Path) -> Result<DatasetBundle> {
    let bundle = read_bundle(dir).with_context(|| format!("reading bundle {}", dir.display()))?;
    if let Some(inst) = bundle
        .train
        .iter()
        .chain(&bundle.dev)
        .chain(&bundle.test)
        .find(|i| i.masked_text.is_none())
    {
        bail!("instance {} has no masked text; run `augment` first", inst.id);
    }
    Ok(bundle)
}

fn append_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut all = if path.exists() { read_reports(path)? } else { Vec::new() };
    all.push(report.clone());
    write_reports(path, &all)?;
    Ok(())
}

fn print_bundle(bundle: &DatasetBundle) {
    println!("protocol {:?}, seed {}", bundle.protocol, bundle.seed);
    println!("{:<6} {:>8} {:>8}", "split", "count", "targets");
    for (name, split) in [("train", &bundle.train), ("dev", &bundle.dev), ("test", &bundle.test)] {
        println!("{:<6} {:>8} {:>8}", name, split.len(), stancekit::corpus::targets_of(split).len());
    }
}

fn print_history(history: &[EpochRecord], best: usize) {
    println!("{:>5}  {:>10}  {:>8}  {:>10}  {:>8}", "epoch", "cls", "cl", "total", "dev");
    for r in history {
        let mark = if r.epoch == best { " *" } else { "" };
        println!(
            "{:>5}  {:>10.4}  {:>8.4}  {:>10.4}  {:>8.4}{mark}",
            r.epoch, r.cls_loss, r.cl_loss, r.total_loss, r.dev_metric
        );
    }
}

fn print_reports(reports: &[MetricReport]) {
    println!(
        "{:>6}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}",
        "seed", "favor", "against", "neutral", "headline", "n"
    );
    for r in reports {
        let f1 = |c: Stance| r.per_class_f1.get(&c).copied().unwrap_or(0.0);
        println!(
            "{:>6}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>6}",
            r.run_seed,
            f1(Stance::Favor),
            f1(Stance::Against),
            f1(Stance::Neutral),
            r.headline,
            r.support.values().sum::<u64>()
        );
    }
}

fn print_summary(summary: &Summary) {
    println!(
        "headline {:.4} ± {:.4} over {}/{} runs",
        summary.headline_mean, summary.headline_stdev, summary.completed, summary.runs
    );
    for failure in &summary.failures {
        println!("run {} failed: {}", failure.seed, failure.error);
    }
}
