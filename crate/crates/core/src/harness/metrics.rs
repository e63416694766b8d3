//! Confusion tables, per-class F1 and the protocol headline scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Protocol, Stance};
use crate::error::{Error, Result};

/// 3×3 counts indexed `(gold, predicted)` in [`Stance::ALL`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub counts: [[u64; Stance::COUNT]; Stance::COUNT],
}

impl ConfusionTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Stance, Stance)>) -> Self {
        let mut table = ConfusionTable::default();
        for (gold, pred) in pairs {
            table.record(gold, pred);
        }
        table
    }

    pub fn record(&mut self, gold: Stance, predicted: Stance) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: Stance, predicted: Stance) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn gold_count(&self, class: Stance) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn predicted_count(&self, class: Stance) -> u64 {
        self.counts.iter().map(|row| row[class.index()]).sum()
    }

    /// The table restricted to rows whose gold label is in `classes`.
    pub fn restrict_gold(&self, classes: &[Stance]) -> ConfusionTable {
        let mut out = ConfusionTable::default();
        for &c in classes {
            out.counts[c.index()] = self.counts[c.index()];
        }
        out
    }
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let predicted = tp + fp;
    let gold = tp + fn_;
    if tp == 0 || predicted == 0 || gold == 0 {
        return 0.0;
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / gold as f64;
    2.0 * p * r / (p + r)
}

/// 2PR/(P+R) per class; 0 when the class has no true positives.
pub fn f1_per_class(table: &ConfusionTable) -> BTreeMap<Stance, f64> {
    Stance::ALL
        .iter()
        .map(|&c| {
            let tp = table.get(c, c);
            let fp = table.predicted_count(c) - tp;
            let fn_ = table.gold_count(c) - tp;
            (c, f1_from_counts(tp, fp, fn_))
        })
        .collect()
}

/// Micro-F1 over `classes`: true positives, false positives and false
/// negatives are pooled across those classes before computing 2PR/(P+R).
pub fn micro_f1(table: &ConfusionTable, classes: &[Stance]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for &c in classes {
        let t = table.get(c, c);
        tp += t;
        fp += table.predicted_count(c) - t;
        fn_ += table.gold_count(c) - t;
    }
    f1_from_counts(tp, fp, fn_)
}

const FAVOR_AGAINST: [Stance; 2] = [Stance::Favor, Stance::Against];

/// Which rows count toward cross-target micro-F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroScope {
    /// Only rows with gold FAVOR or AGAINST, scored over those two classes.
    #[default]
    FavorAgainst,
    /// Every row, scored over all three classes.
    AllClasses,
}

/// The aggregate reported as the headline score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadlineMetric {
    /// Mean of F1(FAVOR) and F1(AGAINST).
    FavorAgainst,
    /// Mean of all three per-class F1 scores.
    AllClasses,
    /// Mean of micro-F1 and macro-F1 (FAVOR/AGAINST).
    MicroMacro { micro: MicroScope },
}

impl HeadlineMetric {
    /// The customary metric for a protocol; VAST-style data should use
    /// [`HeadlineMetric::AllClasses`] regardless of protocol.
    pub fn for_protocol(protocol: Protocol) -> Self {
        match protocol {
            Protocol::ZeroShot => HeadlineMetric::FavorAgainst,
            Protocol::FewShot => HeadlineMetric::AllClasses,
            Protocol::CrossTarget => HeadlineMetric::MicroMacro {
                micro: MicroScope::FavorAgainst,
            },
        }
    }
}

pub fn headline_metric(table: &ConfusionTable, metric: HeadlineMetric) -> f64 {
    match metric {
        HeadlineMetric::FavorAgainst => {
            let f1 = f1_per_class(table);
            (f1[&Stance::Favor] + f1[&Stance::Against]) / 2.0
        }
        HeadlineMetric::AllClasses => {
            let f1 = f1_per_class(table);
            f1.values().sum::<f64>() / Stance::COUNT as f64
        }
        HeadlineMetric::MicroMacro { micro } => {
            let (micro_f1, macro_table) = match micro {
                MicroScope::FavorAgainst => {
                    let restricted = table.restrict_gold(&FAVOR_AGAINST);
                    (micro_f1(&restricted, &FAVOR_AGAINST), restricted)
                }
                MicroScope::AllClasses => (micro_f1(table, &Stance::ALL), *table),
            };
            let f1 = f1_per_class(&macro_table);
            let macro_f1 = (f1[&Stance::Favor] + f1[&Stance::Against]) / 2.0;
            (micro_f1 + macro_f1) / 2.0
        }
    }
}

/// One evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: Protocol,
    pub metric: HeadlineMetric,
    pub per_class_f1: BTreeMap<Stance, f64>,
    pub headline: f64,
    pub support: BTreeMap<Stance, u64>,
    pub confusion: ConfusionTable,
    pub run_seed: u64,
}

impl MetricReport {
    pub fn from_table(table: ConfusionTable, protocol: Protocol, metric: HeadlineMetric, run_seed: u64) -> Self {
        MetricReport {
            protocol,
            metric,
            per_class_f1: f1_per_class(&table),
            headline: headline_metric(&table, metric),
            support: Stance::ALL.iter().map(|&c| (c, table.gold_count(c))).collect(),
            confusion: table,
            run_seed,
        }
    }

    /// Recomputes every derived field from the stored confusion table.
    pub fn check_consistency(&self) -> Result<()> {
        let fresh = MetricReport::from_table(self.confusion, self.protocol, self.metric, self.run_seed);
        if fresh != *self {
            return Err(Error::contract("report fields disagree with its confusion table"));
        }
        Ok(())
    }
}
