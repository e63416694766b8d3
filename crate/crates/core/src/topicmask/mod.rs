//! Topic-word masking augmentation.
//!
//! A separate LDA model is fit on each target's texts. The top words of every
//! topic form that target's keyword lexicon, and sentences are rewritten with
//! those keywords replaced by `[MASK]`.

pub mod lda;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::corpus::Instance;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::text::{self, TokenKind, MASK};

/// Function words kept out of the topic vocabulary.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "don't", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "isn't", "it",
    "it's", "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not",
    "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out",
    "over", "own", "rt", "same", "she", "should", "so", "some", "such", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
    "yours", "yourself", "yourselves",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicModelParams {
    pub n_topics: usize,
    pub n_keywords: usize,
    /// `None` selects the 50/T default.
    pub doc_topic_prior: Option<f64>,
    pub topic_word_prior: f64,
    pub gibbs_iterations: usize,
    pub seed: u64,
    pub filter_stop_words: bool,
}

impl Default for TopicModelParams {
    fn default() -> Self {
        TopicModelParams {
            n_topics: 6,
            n_keywords: 5,
            doc_topic_prior: None,
            topic_word_prior: 0.01,
            gibbs_iterations: 1000,
            seed: 0,
            filter_stop_words: true,
        }
    }
}

impl TopicModelParams {
    pub fn alpha(&self) -> f64 {
        self.doc_topic_prior
            .unwrap_or(50.0 / self.n_topics.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 || self.n_keywords == 0 || self.gibbs_iterations == 0 {
            return Err(Error::config(
                "topic model needs n_topics, n_keywords and gibbs_iterations >= 1",
            ));
        }
        let alpha = self.alpha();
        if !(alpha > 0.0 && self.topic_word_prior > 0.0) {
            return Err(Error::config("topic model priors must be positive"));
        }
        Ok(())
    }
}

/// Per-target ordered keyword lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLexicon {
    pub per_target: BTreeMap<String, Vec<String>>,
}

impl TopicLexicon {
    pub fn keywords(&self, target: &str) -> Option<&[String]> {
        self.per_target.get(target).map(Vec::as_slice)
    }

    /// One line per target: the target, a tab, then comma-joined keywords.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (target, words) in &self.per_target {
            out.push_str(target);
            out.push('\t');
            out.push_str(&words.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(raw: &str) -> Result<Self> {
        let mut per_target = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (target, words) = line.split_once('\t').ok_or_else(|| Error::Data {
                row: i + 1,
                message: "lexicon line lacks a tab separator".into(),
            })?;
            let words: Vec<String> = words
                .split(',')
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect();
            per_target.insert(target.to_string(), words);
        }
        Ok(TopicLexicon { per_target })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn stable_hash(s: &str) -> u64 {
    // FNV-1a; seeds must not depend on the process-random std hasher.
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn topic_tokens(text: &str, filter_stop_words: bool) -> Vec<String> {
    text::tokenize(text)
        .tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Word)
        .map(|t| t.text.to_lowercase())
        .filter(|w| !w.contains([',', '\t']))
        .filter(|w| !filter_stop_words || !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

/// Fits one target's LDA model and returns its deduplicated keyword list.
pub fn fit_target_keywords<S: AsRef<str>>(
    target: &str,
    texts: &[S],
    params: &TopicModelParams,
) -> Result<Vec<String>> {
    params.validate()?;
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut docs = Vec::new();
    for text in texts {
        let doc: Vec<usize> = topic_tokens(text.as_ref(), params.filter_stop_words)
            .into_iter()
            .map(|w| {
                let next = vocab.len();
                *index.entry(w.clone()).or_insert_with(|| {
                    vocab.push(w);
                    next
                })
            })
            .collect();
        if !doc.is_empty() {
            docs.push(doc);
        }
    }
    if docs.is_empty() {
        return Err(Error::Data {
            row: 0,
            message: format!("target {target:?} has no documents with topic vocabulary"),
        });
    }
    if vocab.len() < params.n_keywords {
        info!(
            target,
            vocab = vocab.len(),
            k = params.n_keywords,
            "vocabulary smaller than keyword count; using the whole vocabulary"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ stable_hash(target));
    let model = lda::fit(
        &docs,
        vocab.len(),
        params.n_topics,
        params.alpha(),
        params.topic_word_prior,
        params.gibbs_iterations,
        &mut rng,
    );
    let mut seen = HashSet::new();
    let mut keywords = Vec::new();
    for topic in 0..params.n_topics {
        for w in model.top_words(topic, params.n_keywords) {
            if seen.insert(w) {
                keywords.push(vocab[w].clone());
            }
        }
    }
    Ok(keywords)
}

/// Fits a separate topic model on each target's texts.
///
/// Labels are never read, so unlabeled test-target texts may be included.
pub fn fit_topic_lexicon(instances: &[Instance], params: &TopicModelParams) -> Result<TopicLexicon> {
    if instances.is_empty() {
        return Err(Error::contract("cannot fit topics on an empty corpus"));
    }
    params.validate()?;
    let mut by_target: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        by_target
            .entry(inst.target.as_str())
            .or_default()
            .push(inst.text.as_str());
    }
    let fitted: Vec<(String, Vec<String>)> = by_target
        .into_par_iter()
        .map(|(target, texts)| {
            fit_target_keywords(target, &texts, params).map(|kw| (target.to_string(), kw))
        })
        .collect::<Result<_>>()?;
    Ok(TopicLexicon {
        per_target: fitted.into_iter().collect(),
    })
}

fn keyword_set<S: AsRef<str>>(keywords: &[S]) -> HashSet<String> {
    keywords.iter().map(|k| k.as_ref().to_lowercase()).collect()
}

fn mask_with_set(text: &str, keywords: &HashSet<String>) -> String {
    if keywords.is_empty() {
        return text.to_string();
    }
    let tokenized = text::tokenize(text);
    let mut pieces: Vec<(&str, &str)> = Vec::with_capacity(tokenized.tokens.len());
    let mut last_was_mask = false;
    for tok in &tokenized.tokens {
        let is_mask = match tok.kind {
            TokenKind::Mask => true,
            TokenKind::Word => keywords.contains(&tok.text.to_lowercase()),
            TokenKind::Punct => false,
        };
        if is_mask {
            if !last_was_mask {
                pieces.push((tok.leading, MASK));
            }
        } else {
            pieces.push((tok.leading, tok.text));
        }
        last_was_mask = is_mask;
    }
    text::render(pieces, tokenized.trailing)
}

/// Replaces keyword tokens with `[MASK]`, collapsing consecutive masks.
///
/// Matching is case-insensitive on the punctuation-stripped token; all other
/// tokens and the original spacing are preserved.
pub fn mask_sentence<S: AsRef<str>>(text: &str, keywords: &[S]) -> String {
    mask_with_set(text, &keyword_set(keywords))
}

/// Masks `ceil(fraction × n_words)` word positions chosen uniformly by `seed`.
/// Punctuation tokens are never counted or masked; masks are not collapsed.
pub fn mask_random(text: &str, fraction: f64, seed: u64) -> String {
    let fraction = if fraction.is_nan() { 0.0 } else { fraction.clamp(0.0, 1.0) };
    let tokenized = text::tokenize(text);
    let words: Vec<usize> = tokenized
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == TokenKind::Word)
        .map(|(i, _)| i)
        .collect();
    let n = words.len();
    let k = (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n);
    if k == 0 {
        return text.to_string();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> = sample(&mut rng, n, k).into_iter().map(|j| words[j]).collect();
    let pieces = tokenized.tokens.iter().enumerate().map(|(i, t)| {
        if chosen.contains(&i) {
            (t.leading, MASK)
        } else {
            (t.leading, t.text)
        }
    });
    text::render(pieces, tokenized.trailing)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum MaskStrategy {
    Topic,
    Random { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub instance_id: String,
    pub masked_text: String,
}

/// Produces one masked sentence per instance.
pub fn augment_corpus(
    instances: &[Instance],
    lexicon: &TopicLexicon,
    strategy: MaskStrategy,
) -> Result<Vec<MaskedInstance>> {
    match strategy {
        MaskStrategy::Topic => {
            let mut sets: HashMap<&str, HashSet<String>> = HashMap::new();
            for inst in instances {
                if !sets.contains_key(inst.target.as_str()) {
                    let words = lexicon.keywords(&inst.target).ok_or_else(|| {
                        Error::contract(format!(
                            "target {:?} is missing from the topic lexicon",
                            inst.target
                        ))
                    })?;
                    sets.insert(inst.target.as_str(), keyword_set(words));
                }
            }
            Ok(instances
                .iter()
                .map(|inst| MaskedInstance {
                    instance_id: inst.id.clone(),
                    masked_text: mask_with_set(&inst.text, &sets[inst.target.as_str()]),
                })
                .collect())
        }
        MaskStrategy::Random { fraction, seed } => Ok(instances
            .iter()
            .enumerate()
            .map(|(i, inst)| MaskedInstance {
                instance_id: inst.id.clone(),
                masked_text: mask_random(&inst.text, fraction, derive_seed(seed, i as u64)),
            })
            .collect()),
    }
}

/// Augments `instances` in place, filling `masked_text`.
pub fn apply_augmentation(
    instances: &mut [Instance],
    lexicon: &TopicLexicon,
    strategy: MaskStrategy,
) -> Result<()> {
    let masked = augment_corpus(instances, lexicon, strategy)?;
    for (inst, m) in instances.iter_mut().zip(masked) {
        inst.masked_text = Some(m.masked_text);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Stance;

    const TABLE1: &str = "Today Europe is breaking heat records, while Asia is breaking the lowest temperature records! Should we not be concerned?";

    #[test]
    fn reproduces_reference_example() {
        let kw = ["breaking", "heat", "records", "the", "lowest", "temperature", "concerned"];
        assert_eq!(
            mask_sentence(TABLE1, &kw),
            "Today Europe is [MASK], while Asia is [MASK]! Should we not be [MASK]?"
        );
    }

    #[test]
    fn empty_keywords_is_identity() {
        let none: [&str; 0] = [];
        assert_eq!(mask_sentence("  odd   spacing , here ", &none), "  odd   spacing , here ");
    }

    #[test]
    fn collapses_runs_and_matches_case_insensitively() {
        assert_eq!(mask_sentence("cats cats dogs", &["cats"]), "[MASK] dogs");
        assert_eq!(mask_sentence("Cats, CATS!", &["cats"]), "[MASK], [MASK]!");
        assert_eq!(mask_sentence("[MASK] cats", &["cats"]), "[MASK]");
    }

    #[test]
    fn random_mask_counts() {
        assert_eq!(mask_random("a b c", 0.0, 1), "a b c");
        assert_eq!(mask_random("a b c", 1.0, 1), "[MASK] [MASK] [MASK]");
        let s: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let out = mask_random(&s.join(" "), 0.15, 7);
        assert_eq!(out.matches(MASK).count(), 3);
        assert_eq!(out, mask_random(&s.join(" "), 0.15, 7));
    }

    #[test]
    fn single_document_single_topic() {
        let params = TopicModelParams {
            n_topics: 1,
            n_keywords: 1,
            gibbs_iterations: 10,
            filter_stop_words: false,
            ..Default::default()
        };
        let kw = fit_target_keywords("t", &["a a a b"], &params).unwrap();
        assert_eq!(kw, vec!["a"]);
    }

    #[test]
    fn vocabulary_of_exactly_k_words() {
        let params = TopicModelParams {
            n_topics: 1,
            n_keywords: 3,
            gibbs_iterations: 10,
            ..Default::default()
        };
        let mut kw = fit_target_keywords("t", &["red green", "blue red"], &params).unwrap();
        kw.sort();
        assert_eq!(kw, vec!["blue", "green", "red"]);
        // Smaller vocabulary than K still returns everything.
        let params = TopicModelParams { n_keywords: 9, ..params };
        assert_eq!(fit_target_keywords("t", &["red green"], &params).unwrap().len(), 2);
    }

    #[test]
    fn stop_word_only_target_is_an_error() {
        let err = fit_target_keywords("tt", &["the and of"], &TopicModelParams::default());
        assert!(err.unwrap_err().to_string().contains("tt"));
    }

    #[test]
    fn lexicon_bounds_and_determinism() {
        let mut instances = Vec::new();
        for i in 0..30 {
            let text = format!("alpha beta{} gamma delta{} epsilon the of", i % 7, i % 5);
            instances.push(Instance::new(format!("x{i}"), "x", text).with_label(Stance::Favor));
            let text = format!("one two{} three four{}", i % 4, i % 9);
            instances.push(Instance::new(format!("y{i}"), "y", text));
        }
        let params = TopicModelParams {
            gibbs_iterations: 50,
            seed: 3,
            ..Default::default()
        };
        let a = fit_topic_lexicon(&instances, &params).unwrap();
        let b = fit_topic_lexicon(&instances, &params).unwrap();
        assert_eq!(a, b);
        for words in a.per_target.values() {
            assert!(words.len() <= 30);
            let unique: HashSet<_> = words.iter().collect();
            assert_eq!(unique.len(), words.len());
            assert!(!words.iter().any(|w| w == "the" || w == "of"));
        }
    }

    #[test]
    fn augment_requires_lexicon_coverage() {
        let instances = vec![Instance::new("1", "missing", "hello world")];
        let err = augment_corpus(&instances, &TopicLexicon::default(), MaskStrategy::Topic)
            .unwrap_err();
        assert!(err.to_string().contains("missing"));
        let random = augment_corpus(
            &instances,
            &TopicLexicon::default(),
            MaskStrategy::Random { fraction: 0.0, seed: 1 },
        )
        .unwrap();
        assert_eq!(random[0].masked_text, "hello world");
    }

    #[test]
    fn lexicon_text_round_trip() {
        let mut lex = TopicLexicon::default();
        lex.per_target.insert("Climate Change".into(), vec!["heat".into(), "records".into()]);
        lex.per_target.insert("empty".into(), vec![]);
        assert_eq!(TopicLexicon::from_text(&lex.to_text()).unwrap(), lex);
    }
}
