//! Latent Dirichlet allocation over word-id documents.
//!
//! Forward sampling ([`generate_corpus`]) draws topics from `Dir_V(eta)`,
//! per-document proportions from `Dir_K(alpha)`, then a topic and a word per
//! token. Training inverts that process with collapsed Gibbs sampling:
//!
//! ```text
//! p(z = k | rest) ∝ (n_dk + alpha_k) * (n_kw + eta) / (n_k + V * eta)
//! ```
//!
//! with the current token's own assignment removed from every count. After
//! burn-in, theta, beta and the corpus topic prior are estimated from the
//! smoothed counts and averaged over every retained sweep.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::vocab::{Corpus, Document};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LdaError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("word {word} is outside the vocabulary of size {vocab_size}")]
    UnknownWord { word: usize, vocab_size: usize },
    #[error("word {0} has zero probability under every topic")]
    ZeroProbabilityWord(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),
    #[error("model JSON: {0}")]
    Json(String),
}

/// Topic-word distributions plus the hyperparameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub schema_version: u32,
    pub n_topics: usize,
    pub vocab_size: usize,
    pub alpha: Vec<f64>,
    pub eta: f64,
    /// `n_topics` rows, each a distribution over `vocab_size` words.
    pub beta: Vec<Vec<f64>>,
    /// Corpus-level p(z).
    pub topic_prior: Vec<f64>,
    pub seed: u64,
    pub n_iters: usize,
}

impl LdaModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LdaError> {
        let m: LdaModel = serde_json::from_str(text).map_err(|e| LdaError::Json(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(LdaError::SchemaVersion(m.schema_version));
        }
        if m.beta.len() != m.n_topics
            || m.alpha.len() != m.n_topics
            || m.topic_prior.len() != m.n_topics
            || m.beta.iter().any(|r| r.len() != m.vocab_size)
        {
            return Err(LdaError::ShapeMismatch(
                "model arrays disagree with n_topics/vocab_size".into(),
            ));
        }
        Ok(m)
    }

    fn check_word(&self, word: usize) -> Result<(), LdaError> {
        if word >= self.vocab_size {
            return Err(LdaError::UnknownWord {
                word,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }
}

/// Per-document topic proportions, one K-simplex per document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocTopics {
    pub theta: Vec<Vec<f64>>,
}

/// Topic id of every token, shaped like the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignments {
    pub z: Vec<Vec<usize>>,
}

fn validate_hyper(n_topics: usize, alpha: f64, eta: f64) -> Result<(), LdaError> {
    if n_topics == 0 {
        return Err(LdaError::InvalidArgument(
            "n_topics must be at least 1".into(),
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(LdaError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LdaError::InvalidArgument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    Ok(())
}

fn draw_dirichlet(rng: &mut Rng, concentration: f64, dim: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut v: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        // every gamma draw underflowed; the limit is a vertex of the simplex
        v.iter_mut().for_each(|x| *x = 0.0);
        v[rng.random_range(0..dim)] = 1.0;
    }
    v
}

/// Draw an index from unnormalized non-negative weights.
fn draw_index(rng: &mut Rng, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack at the top; take the last positive weight
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateConfig {
    pub n_topics: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub eta: f64,
    pub n_docs: usize,
    pub doc_len: usize,
    pub seed: u64,
}

/// A corpus sampled from a known model, with every latent draw recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub model: LdaModel,
    pub corpus: Corpus,
    pub doc_topics: DocTopics,
    pub assignments: TopicAssignments,
}

/// Sample a corpus from the LDA generative process.
///
/// The returned model's `topic_prior` is the empirical topic marginal of the
/// drawn assignments.
pub fn generate_corpus(config: &GenerateConfig) -> Result<SyntheticCorpus, LdaError> {
    validate_hyper(config.n_topics, config.alpha, config.eta)?;
    if config.vocab_size == 0 || config.n_docs == 0 || config.doc_len == 0 {
        return Err(LdaError::InvalidArgument(
            "all counts must be positive".into(),
        ));
    }
    let k = config.n_topics;
    let mut rng = rng_from_seed(config.seed);
    let beta: Vec<Vec<f64>> = (0..k)
        .map(|_| draw_dirichlet(&mut rng, config.eta, config.vocab_size))
        .collect();
    let mut topic_counts = vec![0usize; k];
    let mut thetas = Vec::with_capacity(config.n_docs);
    let mut zs = Vec::with_capacity(config.n_docs);
    let mut documents = Vec::with_capacity(config.n_docs);
    for d in 0..config.n_docs {
        let theta = draw_dirichlet(&mut rng, config.alpha, k);
        let mut z_doc = Vec::with_capacity(config.doc_len);
        let mut tokens = Vec::with_capacity(config.doc_len);
        for _ in 0..config.doc_len {
            let z = draw_index(&mut rng, &theta, 1.0);
            let w = draw_index(&mut rng, &beta[z], 1.0);
            topic_counts[z] += 1;
            z_doc.push(z);
            tokens.push(w);
        }
        documents.push(Document {
            song_id: format!("doc{d:05}"),
            genre: "synthetic".into(),
            tokens,
        });
        thetas.push(theta);
        zs.push(z_doc);
    }
    let total = (config.n_docs * config.doc_len) as f64;
    let model = LdaModel {
        schema_version: MODEL_SCHEMA_VERSION,
        n_topics: k,
        vocab_size: config.vocab_size,
        alpha: vec![config.alpha; k],
        eta: config.eta,
        beta,
        topic_prior: topic_counts.iter().map(|&c| c as f64 / total).collect(),
        seed: config.seed,
        n_iters: 0,
    };
    Ok(SyntheticCorpus {
        model,
        corpus: Corpus {
            documents,
            vocab_size: config.vocab_size,
            genres: BTreeSet::from(["synthetic".to_string()]),
            bucket_id: 0,
        },
        doc_topics: DocTopics { theta: thetas },
        assignments: TopicAssignments { z: zs },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_topics: usize,
    /// Symmetric Dirichlet prior on theta; `None` means `50 / n_topics`.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub n_iters: usize,
    /// Sweeps discarded before averaging; `None` means `n_iters / 2`.
    pub burn_in: Option<usize>,
    pub seed: u64,
}

impl GibbsConfig {
    pub fn new(n_topics: usize, n_iters: usize, seed: u64) -> Self {
        GibbsConfig {
            n_topics,
            alpha: None,
            eta: 0.01,
            n_iters,
            burn_in: None,
            seed,
        }
    }

    pub fn alpha_value(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.n_topics.max(1) as f64)
    }

    pub fn burn_in_value(&self) -> usize {
        self.burn_in.unwrap_or(self.n_iters / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsOutput {
    pub model: LdaModel,
    pub doc_topics: DocTopics,
    /// Assignments after the final sweep.
    pub assignments: TopicAssignments,
    /// Log-likelihood of the point estimate after each sweep.
    pub log_likelihood_trace: Vec<f64>,
}

struct Counts {
    k: usize,
    v: usize,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
}

impl Counts {
    fn theta(&self, d: usize, len: usize, alpha: &[f64], alpha_sum: f64) -> Vec<f64> {
        let denom = len as f64 + alpha_sum;
        (0..self.k)
            .map(|t| (self.doc_topic[d * self.k + t] as f64 + alpha[t]) / denom)
            .collect()
    }

    fn beta(&self, eta: f64) -> Vec<Vec<f64>> {
        let v_eta = self.v as f64 * eta;
        (0..self.k)
            .map(|t| {
                let denom = self.topic_total[t] as f64 + v_eta;
                (0..self.v)
                    .map(|w| (self.topic_word[t * self.v + w] as f64 + eta) / denom)
                    .collect()
            })
            .collect()
    }
}

/// Train LDA by collapsed Gibbs sampling.
pub fn train_gibbs(corpus: &Corpus, config: &GibbsConfig) -> Result<GibbsOutput, LdaError> {
    let alpha_scalar = config.alpha_value();
    validate_hyper(config.n_topics, alpha_scalar, config.eta)?;
    if config.n_iters == 0 {
        return Err(LdaError::InvalidArgument(
            "n_iters must be at least 1".into(),
        ));
    }
    if corpus.token_count() == 0 {
        return Err(LdaError::EmptyCorpus);
    }
    let k = config.n_topics;
    let v = corpus.vocab_size;
    for doc in &corpus.documents {
        if let Some(&w) = doc.tokens.iter().find(|&&w| w >= v) {
            return Err(LdaError::UnknownWord {
                word: w,
                vocab_size: v,
            });
        }
    }
    let alpha = vec![alpha_scalar; k];
    let alpha_sum: f64 = alpha.iter().sum();
    let eta = config.eta;
    let v_eta = v as f64 * eta;
    let n_docs = corpus.documents.len();
    let mut rng = rng_from_seed(config.seed);

    let mut counts = Counts {
        k,
        v,
        doc_topic: vec![0; n_docs * k],
        topic_word: vec![0; k * v],
        topic_total: vec![0; k],
    };
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(n_docs);
    for (d, doc) in corpus.documents.iter().enumerate() {
        let zd: Vec<usize> = doc.tokens.iter().map(|_| rng.random_range(0..k)).collect();
        for (&w, &t) in doc.tokens.iter().zip(&zd) {
            counts.doc_topic[d * k + t] += 1;
            counts.topic_word[t * v + w] += 1;
            counts.topic_total[t] += 1;
        }
        z.push(zd);
    }

    let burn_in = config.burn_in_value().min(config.n_iters - 1);
    let retained = (config.n_iters - burn_in) as f64;
    let total_tokens = corpus.token_count() as f64;
    let mut theta_acc = vec![vec![0.0; k]; n_docs];
    let mut beta_acc = vec![vec![0.0; v]; k];
    let mut prior_acc = vec![0.0; k];
    let mut trace = Vec::with_capacity(config.n_iters);
    let mut weights = vec![0.0; k];

    for sweep in 0..config.n_iters {
        for (d, doc) in corpus.documents.iter().enumerate() {
            let dt = &mut counts.doc_topic[d * k..(d + 1) * k];
            for (n, &w) in doc.tokens.iter().enumerate() {
                let old = z[d][n];
                dt[old] -= 1;
                counts.topic_word[old * v + w] -= 1;
                counts.topic_total[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    let p = (dt[t] as f64 + alpha[t]) * (counts.topic_word[t * v + w] as f64 + eta)
                        / (counts.topic_total[t] as f64 + v_eta);
                    weights[t] = p;
                    total += p;
                }
                let new = draw_index(&mut rng, &weights, total);
                z[d][n] = new;
                dt[new] += 1;
                counts.topic_word[new * v + w] += 1;
                counts.topic_total[new] += 1;
            }
        }

        let beta = counts.beta(eta);
        let thetas: Vec<Vec<f64>> = corpus
            .documents
            .iter()
            .enumerate()
            .map(|(d, doc)| counts.theta(d, doc.tokens.len(), &alpha, alpha_sum))
            .collect();
        trace.push(ll_sum(&corpus.documents, &thetas, &beta));

        if sweep >= burn_in {
            for (acc, th) in theta_acc.iter_mut().zip(&thetas) {
                acc.iter_mut().zip(th).for_each(|(a, x)| *a += x);
            }
            for (acc, row) in beta_acc.iter_mut().zip(&beta) {
                acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
            }
            for (t, p) in prior_acc.iter_mut().enumerate() {
                *p += (counts.topic_total[t] as f64 + alpha[t]) / (total_tokens + alpha_sum);
            }
        }
    }

    let avg = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| r.into_iter().map(|x| x / retained).collect())
            .collect()
    };
    let model = LdaModel {
        schema_version: MODEL_SCHEMA_VERSION,
        n_topics: k,
        vocab_size: v,
        alpha,
        eta,
        beta: avg(beta_acc),
        topic_prior: prior_acc.into_iter().map(|x| x / retained).collect(),
        seed: config.seed,
        n_iters: config.n_iters,
    };
    Ok(GibbsOutput {
        model,
        doc_topics: DocTopics {
            theta: avg(theta_acc),
        },
        assignments: TopicAssignments { z },
        log_likelihood_trace: trace,
    })
}

/// Fold-in inference of one document's topic proportions with beta held
/// fixed. An empty document returns the normalized prior.
pub fn infer_theta(
    model: &LdaModel,
    tokens: &[usize],
    n_iters: usize,
    seed: u64,
) -> Result<Vec<f64>, LdaError> {
    let k = model.n_topics;
    let alpha_sum: f64 = model.alpha.iter().sum();
    if let Some(&w) = tokens.iter().find(|&&w| w >= model.vocab_size) {
        return Err(LdaError::UnknownWord {
            word: w,
            vocab_size: model.vocab_size,
        });
    }
    if tokens.is_empty() {
        return Ok(model.alpha.iter().map(|a| a / alpha_sum).collect());
    }
    let n_iters = n_iters.max(1);
    let burn_in = (n_iters / 2).min(n_iters - 1);
    let mut rng = rng_from_seed(seed);
    let mut z: Vec<usize> = tokens.iter().map(|_| rng.random_range(0..k)).collect();
    let mut counts = vec![0u32; k];
    z.iter().for_each(|&t| counts[t] += 1);
    let mut acc = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let denom = tokens.len() as f64 + alpha_sum;
    for sweep in 0..n_iters {
        for (n, &w) in tokens.iter().enumerate() {
            counts[z[n]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                weights[t] = (counts[t] as f64 + model.alpha[t]) * model.beta[t][w];
                total += weights[t];
            }
            let new = if total > 0.0 {
                draw_index(&mut rng, &weights, total)
            } else {
                z[n]
            };
            z[n] = new;
            counts[new] += 1;
        }
        if sweep >= burn_in {
            for t in 0..k {
                acc[t] += (counts[t] as f64 + model.alpha[t]) / denom;
            }
        }
    }
    let retained = (n_iters - burn_in) as f64;
    Ok(acc.into_iter().map(|x| x / retained).collect())
}

/// Fold in many documents. Each document's seed is derived from `seed` and
/// its song id, so results do not depend on batch composition or order.
pub fn infer_batch(
    model: &LdaModel,
    documents: &[Document],
    n_iters: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>, LdaError> {
    par::map(exec, documents, |doc| {
        infer_theta(model, &doc.tokens, n_iters, derive_seed(seed, &doc.song_id))
    })
    .into_iter()
    .collect()
}

/// p(z = k | w) ∝ topic_prior[k] * beta[k][w].
pub fn term_topic_posterior(model: &LdaModel, word: usize) -> Result<Vec<f64>, LdaError> {
    model.check_word(word)?;
    let joint: Vec<f64> = model
        .topic_prior
        .iter()
        .zip(&model.beta)
        .map(|(p, row)| p * row[word])
        .collect();
    let total: f64 = joint.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(LdaError::ZeroProbabilityWord(word));
    }
    Ok(joint.into_iter().map(|j| j / total).collect())
}

fn ll_sum(documents: &[Document], thetas: &[Vec<f64>], beta: &[Vec<f64>]) -> f64 {
    documents
        .iter()
        .zip(thetas)
        .map(|(doc, theta)| {
            doc.tokens
                .iter()
                .map(|&w| {
                    theta
                        .iter()
                        .zip(beta)
                        .map(|(th, row)| th * row[w])
                        .sum::<f64>()
                        .ln()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Σ_d Σ_n log Σ_k theta_d[k] * beta[k][w_dn].
pub fn log_likelihood(
    model: &LdaModel,
    corpus: &Corpus,
    doc_topics: &DocTopics,
) -> Result<f64, LdaError> {
    if doc_topics.theta.len() != corpus.documents.len() {
        return Err(LdaError::ShapeMismatch(format!(
            "{} thetas for {} documents",
            doc_topics.theta.len(),
            corpus.documents.len()
        )));
    }
    if doc_topics.theta.iter().any(|t| t.len() != model.n_topics) {
        return Err(LdaError::ShapeMismatch(
            "theta length differs from n_topics".into(),
        ));
    }
    for doc in &corpus.documents {
        if let Some(&w) = doc.tokens.iter().find(|&&w| w >= model.vocab_size) {
            return Err(LdaError::UnknownWord {
                word: w,
                vocab_size: model.vocab_size,
            });
        }
    }
    Ok(ll_sum(&corpus.documents, &doc_topics.theta, &model.beta))
}
