//! Collapsed Gibbs sampling for latent Dirichlet allocation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Count tables of a fitted model.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub n_topics: usize,
    pub vocab_size: usize,
    /// `topic_word[k * vocab_size + w]`
    topic_word: Vec<u32>,
    topic_totals: Vec<u32>,
    beta: f64,
}

impl LdaModel {
    /// Smoothed topic-word probability φ_kw = (n_kw + β) / (n_k + Vβ).
    pub fn word_probability(&self, topic: usize, word: usize) -> f64 {
        let v = self.vocab_size as f64;
        (self.topic_word[topic * self.vocab_size + word] as f64 + self.beta)
            / (self.topic_totals[topic] as f64 + v * self.beta)
    }

    /// The `k` most probable word ids of `topic`; ties go to the lower id.
    pub fn top_words(&self, topic: usize, k: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.vocab_size).collect();
        ids.sort_by(|&a, &b| {
            self.word_probability(topic, b)
                .total_cmp(&self.word_probability(topic, a))
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids
    }
}

/// Runs `iterations` sweeps of collapsed Gibbs sampling over `docs`
/// (each a list of word ids below `vocab_size`).
pub fn fit(
    docs: &[Vec<usize>],
    vocab_size: usize,
    n_topics: usize,
    alpha: f64,
    beta: f64,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> LdaModel {
    let t = n_topics;
    let mut topic_word = vec![0u32; t * vocab_size];
    let mut topic_totals = vec![0u32; t];
    let mut doc_topic = vec![0u32; docs.len() * t];
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(docs.len());

    for (d, doc) in docs.iter().enumerate() {
        let mut z = Vec::with_capacity(doc.len());
        for &w in doc {
            let k = rng.gen_range(0..t);
            z.push(k);
            topic_word[k * vocab_size + w] += 1;
            topic_totals[k] += 1;
            doc_topic[d * t + k] += 1;
        }
        assignments.push(z);
    }

    let v_beta = vocab_size as f64 * beta;
    let mut weights = vec![0.0; t];
    for _ in 0..iterations {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = assignments[d][i];
                topic_word[old * vocab_size + w] -= 1;
                topic_totals[old] -= 1;
                doc_topic[d * t + old] -= 1;

                let mut total = 0.0;
                for k in 0..t {
                    let p = (doc_topic[d * t + k] as f64 + alpha)
                        * (topic_word[k * vocab_size + w] as f64 + beta)
                        / (topic_totals[k] as f64 + v_beta);
                    total += p;
                    weights[k] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(t - 1);

                assignments[d][i] = new;
                topic_word[new * vocab_size + w] += 1;
                topic_totals[new] += 1;
                doc_topic[d * t + new] += 1;
            }
        }
    }

    LdaModel {
        n_topics: t,
        vocab_size,
        topic_word,
        topic_totals,
        beta,
    }
}
