//! Genre classification on topic proportions.
//!
//! Each song is represented by its theta vector; a one-vs-rest linear SVM
//! (Pegasos-style stochastic subgradient on the L2-regularized hinge loss)
//! predicts its genre. [`sweep_topic_counts`] fills the bucket × topic-count
//! accuracy grid.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lda::{infer_batch, train_gibbs, GibbsConfig, LdaError, LdaModel};
use crate::par::{self, Execution};
use crate::seed::{derive_seed, rng_from_seed};
use crate::vocab::Corpus;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("genre {genre} has {count} document(s); a split needs at least 2")]
    GenreTooSmall { genre: String, count: usize },
    #[error("classifier needs at least two distinct labels")]
    SingleClass,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Lda(#[from] LdaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

/// Document indices of a train/test partition, each in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Seeded train/test partition. When stratified, every genre is split in
/// proportion with at least one document on each side.
pub fn split_indices(corpus: &Corpus, spec: &SplitSpec) -> Result<Split, EvalError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(EvalError::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in corpus.documents.iter().enumerate() {
        let key = if spec.stratified {
            d.genre.as_str()
        } else {
            ""
        };
        groups.entry(key).or_default().push(i);
    }
    for (genre, mut idx) in groups {
        if idx.len() < 2 {
            return Err(EvalError::GenreTooSmall {
                genre: genre.to_string(),
                count: idx.len(),
            });
        }
        let mut rng = rng_from_seed(derive_seed(spec.seed, genre));
        idx.shuffle(&mut rng);
        let n_train = train_count(idx.len(), spec.train_fraction);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

pub fn split_stratified(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), EvalError> {
    let s = split_indices(corpus, spec)?;
    Ok((corpus.subset(&s.train), corpus.subset(&s.test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            epochs: 200,
            lambda: 1e-3,
            seed: 0,
        }
    }
}

/// One-vs-rest linear classifier over theta features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// Sorted genre labels; index `i` owns `weights[i]` and `bias[i]`.
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub config: SvmConfig,
}

impl LinearClassifier {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect()
    }

    /// Highest-scoring genre; ties go to the lexicographically smallest.
    pub fn predict(&self, x: &[f64]) -> &str {
        let scores = self.scores(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        &self.classes[best]
    }
}

/// Pegasos on the augmented vector `[w, b]` with projection onto the ball of
/// radius `1 / sqrt(lambda)`.
fn pegasos_binary(
    features: &[Vec<f64>],
    y: &[f64],
    config: &SvmConfig,
    seed: u64,
) -> (Vec<f64>, f64) {
    let dim = features[0].len();
    let mut w = vec![0.0; dim + 1];
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = rng_from_seed(seed);
    let radius = 1.0 / config.lambda.sqrt();
    let mut t = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (config.lambda * t as f64);
            let x = &features[i];
            let margin = y[i] * (w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim]);
            let shrink = 1.0 - eta * config.lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (v, xi) in w[..dim].iter_mut().zip(x) {
                    *v += eta * y[i] * xi;
                }
                w[dim] += eta * y[i];
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
        }
    }
    let b = w.pop().unwrap();
    (w, b)
}

pub fn train_classifier(
    features: &[Vec<f64>],
    labels: &[String],
    config: &SvmConfig,
) -> Result<LinearClassifier, EvalError> {
    if features.len() != labels.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(config.lambda > 0.0) || config.epochs == 0 {
        return Err(EvalError::InvalidArgument(
            "need lambda > 0 and epochs > 0".into(),
        ));
    }
    let classes: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(EvalError::InvalidArgument("ragged feature matrix".into()));
    }
    let (weights, bias) = classes
        .iter()
        .map(|c| {
            let y: Vec<f64> = labels
                .iter()
                .map(|l| if l == c { 1.0 } else { -1.0 })
                .collect();
            pegasos_binary(features, &y, config, derive_seed(config.seed, c))
        })
        .unzip();
    Ok(LinearClassifier {
        classes,
        weights,
        bias,
        config: *config,
    })
}

pub fn evaluate_accuracy(
    classifier: &LinearClassifier,
    features: &[Vec<f64>],
    labels: &[String],
) -> Result<f64, EvalError> {
    if features.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if features.len() != labels.len() {
        return Err(EvalError::InvalidArgument(
            "features and labels differ in length".into(),
        ));
    }
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(x, y)| classifier.predict(x) == y.as_str())
        .count();
    Ok(hits as f64 / features.len() as f64)
}

/// Hyperparameters shared by every sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    /// `None` means `50 / K`.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub lda_iters: usize,
    pub infer_iters: usize,
    pub svm_epochs: usize,
    pub svm_lambda: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            alpha: None,
            eta: 0.01,
            lda_iters: 500,
            infer_iters: 100,
            svm_epochs: 200,
            svm_lambda: 1e-3,
        }
    }
}

/// Seeds used by one (bucket, K) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub cell: u64,
    pub lda: u64,
    pub fold_in: u64,
    pub svm: u64,
}

impl CellSeeds {
    pub fn derive(master: u64, bucket_id: u8, n_topics: usize) -> Self {
        let cell = derive_seed(master, &format!("cell/bucket{bucket_id}/K{n_topics}"));
        CellSeeds {
            cell,
            lda: derive_seed(cell, "lda"),
            fold_in: derive_seed(cell, "fold-in"),
            svm: derive_seed(cell, "svm"),
        }
    }
}

/// Everything one sweep cell produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub n_topics: usize,
    pub seeds: CellSeeds,
    pub model: LdaModel,
    pub train_theta: Vec<Vec<f64>>,
    pub test_theta: Vec<Vec<f64>>,
    pub classifier: LinearClassifier,
    pub accuracy: f64,
}

/// Train LDA on the training documents only, fold in the test documents,
/// then fit and score the classifier.
pub fn evaluate_cell(
    train: &Corpus,
    test: &Corpus,
    n_topics: usize,
    config: &CellConfig,
    seeds: CellSeeds,
    exec: Execution,
) -> Result<CellOutcome, EvalError> {
    if test.documents.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let gibbs = GibbsConfig {
        n_topics,
        alpha: config.alpha,
        eta: config.eta,
        n_iters: config.lda_iters,
        burn_in: None,
        seed: seeds.lda,
    };
    let trained = train_gibbs(train, &gibbs)?;
    let test_theta = infer_batch(
        &trained.model,
        &test.documents,
        config.infer_iters,
        seeds.fold_in,
        exec,
    )?;
    let labels = |c: &Corpus| {
        c.documents
            .iter()
            .map(|d| d.genre.clone())
            .collect::<Vec<_>>()
    };
    let classifier = train_classifier(
        &trained.doc_topics.theta,
        &labels(train),
        &SvmConfig {
            epochs: config.svm_epochs,
            lambda: config.svm_lambda,
            seed: seeds.svm,
        },
    )?;
    let accuracy = evaluate_accuracy(&classifier, &test_theta, &labels(test))?;
    Ok(CellOutcome {
        n_topics,
        seeds,
        model: trained.model,
        train_theta: trained.doc_topics.theta,
        test_theta,
        classifier,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub n_topics: usize,
    pub accuracy: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub bucket_id: u8,
    pub cells: Vec<AccuracyCell>,
}

/// Rows are genre buckets, columns are topic counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub topic_counts: Vec<usize>,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn get(&self, bucket_id: u8, n_topics: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.bucket_id == bucket_id)?
            .cells
            .iter()
            .find(|c| c.n_topics == n_topics)?
            .accuracy
    }

    /// `bucket,2,3,4,5` header, one line per bucket; failed cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket");
        for k in &self.topic_counts {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.bucket_id.to_string());
            for cell in &row.cells {
                out.push(',');
                if let Some(a) = cell.accuracy {
                    out.push_str(&format!("{a:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |m: &str| EvalError::InvalidArgument(format!("accuracy CSV: {m}"));
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| bad(&e.to_string()))?.clone();
        let topic_counts = headers
            .iter()
            .skip(1)
            .map(|h| {
                h.parse::<usize>()
                    .map_err(|_| bad("non-numeric topic header"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| bad(&e.to_string()))?;
            let bucket_id = rec[0].parse().map_err(|_| bad("bad bucket id"))?;
            let cells = topic_counts
                .iter()
                .zip(rec.iter().skip(1))
                .map(|(&k, v)| {
                    Ok(AccuracyCell {
                        n_topics: k,
                        accuracy: if v.is_empty() {
                            None
                        } else {
                            Some(v.parse().map_err(|_| bad("bad accuracy"))?)
                        },
                        seed: 0,
                        error: None,
                    })
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            rows.push(AccuracyRow { bucket_id, cells });
        }
        Ok(AccuracyTable { topic_counts, rows })
    }
}

/// One bucket's input to the sweep. `split` overrides the seeded split.
#[derive(Debug, Clone)]
pub struct BucketInput {
    pub corpus: Corpus,
    pub split: Option<Split>,
}

/// Train and score every (bucket, K) cell. A failing cell is recorded with
/// its error and does not stop the others. Cells run in parallel under
/// `exec`; results are gathered in grid order.
pub fn sweep_topic_counts(
    buckets: &[BucketInput],
    topic_counts: &[usize],
    split_spec: &SplitSpec,
    config: &CellConfig,
    master_seed: u64,
    exec: Execution,
) -> (AccuracyTable, Vec<Vec<Result<CellOutcome, EvalError>>>) {
    let jobs: Vec<(usize, usize)> = (0..buckets.len())
        .flat_map(|b| topic_counts.iter().map(move |&k| (b, k)))
        .collect();
    let splits: Vec<Result<Split, EvalError>> = buckets
        .iter()
        .map(|b| match &b.split {
            Some(s) => Ok(s.clone()),
            None => split_indices(&b.corpus, split_spec),
        })
        .collect();
    let results = par::map(exec, &jobs, |&(b, k)| {
        let bucket = &buckets[b];
        let seeds = CellSeeds::derive(master_seed, bucket.corpus.bucket_id, k);
        let split = splits[b]
            .as_ref()
            .map_err(|e| EvalError::InvalidArgument(e.to_string()))?;
        let train = bucket.corpus.subset(&split.train);
        let test = bucket.corpus.subset(&split.test);
        // inner fold-in stays sequential; the grid is the parallel axis
        evaluate_cell(&train, &test, k, config, seeds, Execution::Sequential)
    });
    let mut outcomes: Vec<Vec<Result<CellOutcome, EvalError>>> =
        buckets.iter().map(|_| Vec::new()).collect();
    for ((b, _), r) in jobs.iter().zip(results) {
        outcomes[*b].push(r);
    }
    let rows = buckets
        .iter()
        .zip(&outcomes)
        .map(|(bucket, row)| AccuracyRow {
            bucket_id: bucket.corpus.bucket_id,
            cells: topic_counts
                .iter()
                .zip(row)
                .map(|(&k, r)| AccuracyCell {
                    n_topics: k,
                    accuracy: r.as_ref().ok().map(|o| o.accuracy),
                    seed: CellSeeds::derive(master_seed, bucket.corpus.bucket_id, k).cell,
                    error: r.as_ref().err().map(|e| e.to_string()),
                })
                .collect(),
        })
        .collect();
    (
        AccuracyTable {
            topic_counts: topic_counts.to_vec(),
            rows,
        },
        outcomes,
    )
}
