//! Deterministic inference over labeled instances.

use crate::corpus::{DatasetBundle, Instance, Protocol};
use crate::error::{Error, Result};
use crate::harness::metrics::{ConfusionTable, HeadlineMetric, MetricReport};
use crate::training::{Checkpoint, StanceModel};

/// Scores `model` on `instances`; every instance must carry a gold label.
pub fn evaluate_instances(
    model: &StanceModel,
    instances: &[Instance],
    protocol: Protocol,
    metric: HeadlineMetric,
    run_seed: u64,
) -> Result<MetricReport> {
    if let Some(inst) = instances.iter().find(|i| i.label.is_none()) {
        return Err(Error::contract(format!("evaluation instance {} has no gold label", inst.id)));
    }
    let predictions = model.predict(instances)?;
    let table = ConfusionTable::from_pairs(
        instances
            .iter()
            .zip(predictions)
            .map(|(inst, pred)| (inst.label.expect("checked above"), pred)),
    );
    Ok(MetricReport::from_table(table, protocol, metric, run_seed))
}

/// Scores a checkpoint on the bundle's test split.
pub fn evaluate(checkpoint: &Checkpoint, bundle: &DatasetBundle, metric: HeadlineMetric) -> Result<MetricReport> {
    evaluate_instances(&checkpoint.model, &bundle.test, bundle.protocol, metric, checkpoint.seed)
}
