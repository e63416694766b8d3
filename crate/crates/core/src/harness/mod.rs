//! Metrics, experiment orchestration and diagnostics.

pub mod diagnostics;
pub mod evaluate;
pub mod experiment;
pub mod metrics;
pub mod synthetic;

pub use diagnostics::{diagnostics_trace, export_embeddings, ProbeSet, ProbeSpace, Projector, TraceRecord};
pub use evaluate::{evaluate, evaluate_instances};
pub use experiment::{run_experiment, run_once, ExperimentResult, RunConfig, Summary};
pub use metrics::{f1_per_class, headline_metric, ConfusionTable, HeadlineMetric, MetricReport, MicroScope};
