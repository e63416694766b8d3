//! A generated zero-shot task: the stance is carried by word order
//! (declarative support vs rhetorical question order), topics are disjoint
//! between train and test targets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetBundle, Instance, Protocol, Stance};
use crate::error::{Error, Result};

/// Declarative order supports the topic; the same words in question order
/// (auxiliary first) are a rhetorical challenge. Both forms of a pair use
/// the same words and punctuation, and every template word is a stop word,
/// so only word order separates the labels once topics are masked.
const TEMPLATE_PAIRS: &[(&str, &str)] = &[
    ("{a} is here for {b} .", "is {a} here for {b} ."),
    ("{a} will do it for {b} .", "will {a} do it for {b} ."),
    ("{a} can do more for {b} .", "can {a} do more for {b} ."),
    ("{a} should be there for {b} .", "should {a} be there for {b} ."),
    ("{a} has been there for {b} .", "has {a} been there for {b} ."),
    ("{a} would do that for {b} .", "would {a} do that for {b} ."),
    ("{a} was there for {b} .", "was {a} there for {b} ."),
];

fn templates(label: Stance) -> impl Iterator<Item = &'static str> {
    TEMPLATE_PAIRS
        .iter()
        .map(move |&(favor, against)| if label == Stance::Favor { favor } else { against })
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "n", "r", "l", "x", "k"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub train_targets: usize,
    pub test_targets: usize,
    pub instances_per_target: usize,
    pub topic_words_per_target: usize,
    /// Probability that a topic word comes from the half of the target's
    /// vocabulary associated with the instance's label. 0.5 means no
    /// correlation between topic words and stance.
    pub topic_label_correlation: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_targets: 6,
            test_targets: 2,
            instances_per_target: 120,
            topic_words_per_target: 10,
            topic_label_correlation: 0.5,
            dev_fraction: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_targets == 0 || self.test_targets == 0 || self.instances_per_target == 0 {
            return Err(Error::config("synthetic task needs targets and instances"));
        }
        if self.topic_words_per_target < 2 {
            return Err(Error::config("topic_words_per_target must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.topic_label_correlation) {
            return Err(Error::config("topic_label_correlation must lie in [0, 1]"));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::config("dev_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Distinct pseudo-words, none of which is an English function word used by
/// the templates.
fn pseudo_words(n: usize, rng: &mut ChaCha8Rng, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(NUCLEI.choose(rng).expect("non-empty"));
        }
        w.push_str(CODAS.choose(rng).expect("non-empty"));
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sentence(template: &str, a: &str, b: &str) -> String {
    template.replace("{a}", a).replace("{b}", b)
}

fn target_instances(
    target: &str,
    words: &[String],
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
    start_id: usize,
) -> Vec<Instance> {
    let half = words.len() / 2;
    let (favor_words, against_words) = words.split_at(half);
    (0..cfg.instances_per_target)
        .map(|k| {
            let label = if k % 2 == 0 { Stance::Favor } else { Stance::Against };
            let (own, other) = match label {
                Stance::Favor => (favor_words, against_words),
                _ => (against_words, favor_words),
            };
            let pick = |rng: &mut ChaCha8Rng| {
                let pool = if rng.gen::<f64>() < cfg.topic_label_correlation {
                    own
                } else {
                    other
                };
                pool.choose(rng).expect("non-empty pool").clone()
            };
            let a = pick(rng);
            let b = pick(rng);
            let pair = rng.gen_range(0..TEMPLATE_PAIRS.len());
            let template = templates(label).nth(pair).expect("pair index in range");
            Instance::new(format!("syn-{}", start_id + k), target, sentence(template, &a, &b)).with_label(label)
        })
        .collect()
}

/// Train and test instances; every target gets its own topic vocabulary.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Vec<Instance>, Vec<Instance>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = std::collections::HashSet::new();
    for (f, a) in TEMPLATE_PAIRS {
        taken.extend(f.split_whitespace().chain(a.split_whitespace()).map(str::to_string));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in 0..cfg.train_targets + cfg.test_targets {
        let words = pseudo_words(cfg.topic_words_per_target + 1, &mut rng, &mut taken);
        let (name, topic) = words.split_first().expect("at least one word");
        let start = t * cfg.instances_per_target;
        let rows = target_instances(name, topic, cfg, &mut rng, start);
        if t < cfg.train_targets {
            train.extend(rows);
        } else {
            test.extend(rows);
        }
    }
    Ok((train, test))
}

/// A zero-shot bundle: dev is carved from the shuffled train-target pool.
pub fn synthetic_bundle(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    let (mut pool, test) = generate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    pool.shuffle(&mut rng);
    let n_dev = ((cfg.dev_fraction * pool.len() as f64) + 1e-9).floor() as usize;
    let train = pool.split_off(n_dev);
    let bundle = DatasetBundle {
        train,
        dev: pool,
        test,
        protocol: Protocol::ZeroShot,
        seed: cfg.seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::targets_of;

    #[test]
    fn sizes_labels_and_disjoint_topics() {
        let cfg = SyntheticConfig::default();
        let bundle = synthetic_bundle(&cfg).unwrap();
        assert!(bundle.train.len() >= 500);
        assert!(bundle.test.len() >= 200);
        let vocab = |xs: &[Instance]| -> std::collections::HashSet<String> {
            xs.iter()
                .flat_map(|i| i.text.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .collect()
        };
        let train_words = vocab(&bundle.train);
        let test_words = vocab(&bundle.test);
        let template_words: std::collections::HashSet<String> = TEMPLATE_PAIRS
            .iter()
            .flat_map(|(f, a)| f.split_whitespace().chain(a.split_whitespace()).map(str::to_string))
            .collect();
        for w in test_words.difference(&template_words) {
            assert!(!train_words.contains(w), "{w} leaked into train");
        }
        assert!(targets_of(&bundle.test).is_disjoint(&targets_of(&bundle.train)));
        for inst in bundle.train.iter().chain(&bundle.test) {
            let first = inst.text.split_whitespace().next().unwrap();
            assert_eq!(template_words.contains(first), inst.label == Some(Stance::Against));
        }
    }

    #[test]
    fn template_words_survive_stop_word_filtering() {
        for (f, a) in TEMPLATE_PAIRS {
            let mut fw: Vec<&str> = f.split_whitespace().collect();
            let mut aw: Vec<&str> = a.split_whitespace().collect();
            fw.sort_unstable();
            aw.sort_unstable();
            assert_eq!(fw, aw);
            for w in fw {
                assert!(w.starts_with('{') || w == "." || crate::topicmask::STOP_WORDS.contains(&w), "{w}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::default();
        assert_eq!(synthetic_bundle(&cfg).unwrap(), synthetic_bundle(&cfg).unwrap());
    }
}
