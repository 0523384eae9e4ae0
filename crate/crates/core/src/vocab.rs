//! Musical-word codebook: seeded k-means++ / Lloyd over clip features, nearest
//! centroid quantization, and corpus construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mfcc::ClipFeature;
use crate::par::{self, Execution};
use crate::seed::rng_from_seed;

pub const VOCAB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("k-means needs at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("feature has dimension {got}, vocabulary expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("song {0} has no clips")]
    EmptyDocument(String),
    #[error("song {0} has no genre label")]
    MissingLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported vocabulary schema version {0}")]
    SchemaVersion(u32),
    #[error("vocabulary JSON: {0}")]
    Json(String),
}

/// K-means centroids acting as the word codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub schema_version: u32,
    pub seed: u64,
    pub feature_dim: usize,
    pub centroids: Vec<Vec<f64>>,
}

impl Vocabulary {
    pub fn new(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self, VocabError> {
        let feature_dim = centroids.first().map(Vec::len).ok_or_else(|| {
            VocabError::InvalidArgument("vocabulary needs at least one centroid".into())
        })?;
        if centroids.iter().any(|c| c.len() != feature_dim) {
            return Err(VocabError::InvalidArgument("ragged centroid matrix".into()));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(VocabError::InvalidArgument(
                "non-finite centroid entry".into(),
            ));
        }
        Ok(Vocabulary {
            schema_version: VOCAB_SCHEMA_VERSION,
            seed,
            feature_dim,
            centroids,
        })
    }

    /// Codebook size V.
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let v: Vocabulary =
            serde_json::from_str(text).map_err(|e| VocabError::Json(e.to_string()))?;
        if v.schema_version != VOCAB_SCHEMA_VERSION {
            return Err(VocabError::SchemaVersion(v.schema_version));
        }
        Vocabulary::new(v.centroids, v.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub song_id: String,
    pub genre: String,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab_size: usize,
    pub genres: BTreeSet<String>,
    pub bucket_id: u8,
}

impl Corpus {
    pub fn token_count(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }

    /// A corpus holding the documents at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            vocab_size: self.vocab_size,
            genres: self.genres.clone(),
            bucket_id: self.bucket_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub v: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(v: usize, seed: u64) -> Self {
        KMeansConfig {
            v,
            seed,
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

/// A fitted codebook plus the Lloyd objective after each accepted iteration
/// (element 0 is the objective of the k-means++ initialization).
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub vocabulary: Vocabulary,
    pub objectives: Vec<f64>,
    pub assignments: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// lowest index.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(centroids: &[Vec<f64>], points: &[&[f64]], exec: Execution) -> (Vec<usize>, f64) {
    let nearest_all = par::map(exec, points, |x| nearest(centroids, x));
    // summed sequentially so the objective is independent of scheduling
    let objective = nearest_all.iter().map(|&(_, d)| d).sum();
    (nearest_all.into_iter().map(|(j, _)| j).collect(), objective)
}

fn plus_plus_init(points: &[&[f64]], v: usize, rng: &mut crate::seed::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < v {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let threshold = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= threshold {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave acc just short of threshold
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every point coincides with a chosen centroid
            rng.random_range(0..n)
        };
        let c = points[pick].to_vec();
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Recompute centroids as cluster means. Empty clusters are reseeded with the
/// point farthest from its (new) centroid, each point used at most once.
fn update_centroids(
    points: &[&[f64]],
    assignments: &[usize],
    v: usize,
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; v];
    let mut counts = vec![0usize; v];
    for (x, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, xi) in sums[a].iter_mut().zip(x.iter()) {
            *s += xi;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                s
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect();
    let mut used = BTreeSet::new();
    for j in 0..v {
        if counts[j] > 0 {
            continue;
        }
        let mut far = (usize::MAX, -1.0);
        for (i, (x, &a)) in points.iter().zip(assignments).enumerate() {
            if used.contains(&i) {
                continue;
            }
            let d = sq_dist(x, &centroids[a]);
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.0 == usize::MAX {
            far.0 = 0;
        }
        used.insert(far.0);
        centroids[j] = points[far.0].to_vec();
    }
    centroids
}

/// Seeded k-means++ initialization followed by Lloyd iterations.
///
/// Stops when the largest centroid displacement falls below `tol`, after
/// `max_iters` iterations, or when an iteration would not lower the
/// objective. The recorded objective sequence is therefore non-increasing.
pub fn kmeans_fit_with(
    points: &[Vec<f64>],
    config: &KMeansConfig,
    exec: Execution,
) -> Result<KMeansFit, VocabError> {
    if config.v == 0 {
        return Err(VocabError::InvalidArgument(
            "codebook size must be at least 1".into(),
        ));
    }
    if points.len() < config.v {
        return Err(VocabError::InsufficientData {
            needed: config.v,
            got: points.len(),
        });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(VocabError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(VocabError::InvalidArgument(
            "non-finite feature value".into(),
        ));
    }
    let views: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let mut rng = rng_from_seed(config.seed);
    let mut centroids = plus_plus_init(&views, config.v, &mut rng);
    let (mut assignments, mut objective) = assign_all(&centroids, &views, exec);
    let mut objectives = vec![objective];

    for _ in 0..config.max_iters {
        let next = update_centroids(&views, &assignments, config.v, dim);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        let (next_assign, next_obj) = assign_all(&next, &views, exec);
        if next_obj > objective {
            break;
        }
        centroids = next;
        assignments = next_assign;
        objective = next_obj;
        objectives.push(objective);
        if shift < config.tol {
            break;
        }
    }
    Ok(KMeansFit {
        vocabulary: Vocabulary::new(centroids, config.seed)?,
        objectives,
        assignments,
    })
}

/// Fit a codebook of `v` words over clip features.
pub fn kmeans_fit(
    features: &[ClipFeature],
    v: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<Vocabulary, VocabError> {
    let points: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let config = KMeansConfig {
        v,
        seed,
        max_iters,
        tol,
    };
    Ok(kmeans_fit_with(&points, &config, Execution::default())?.vocabulary)
}

/// Nearest-centroid word id; ties go to the lowest index.
pub fn assign_word(vocabulary: &Vocabulary, feature: &[f64]) -> Result<usize, VocabError> {
    if feature.len() != vocabulary.feature_dim {
        return Err(VocabError::DimensionMismatch {
            expected: vocabulary.feature_dim,
            got: feature.len(),
        });
    }
    Ok(nearest(&vocabulary.centroids, feature).0)
}

/// Tokenize every song into a document. Documents come out in song-id order;
/// tokens follow clip index order.
pub fn build_corpus(
    per_song_features: &BTreeMap<String, Vec<ClipFeature>>,
    labels: &BTreeMap<String, String>,
    vocabulary: &Vocabulary,
    bucket_id: u8,
) -> Result<Corpus, VocabError> {
    let mut documents = Vec::with_capacity(per_song_features.len());
    let mut genres = BTreeSet::new();
    for (song_id, features) in per_song_features {
        let genre = labels
            .get(song_id)
            .ok_or_else(|| VocabError::MissingLabel(song_id.clone()))?;
        if features.is_empty() {
            return Err(VocabError::EmptyDocument(song_id.clone()));
        }
        let mut ordered: Vec<&ClipFeature> = features.iter().collect();
        ordered.sort_by_key(|f| f.clip_index);
        let tokens = ordered
            .iter()
            .map(|f| assign_word(vocabulary, &f.values))
            .collect::<Result<Vec<_>, _>>()?;
        genres.insert(genre.clone());
        documents.push(Document {
            song_id: song_id.clone(),
            genre: genre.clone(),
            tokens,
        });
    }
    Ok(Corpus {
        documents,
        vocab_size: vocabulary.size(),
        genres,
        bucket_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn feat(song: &str, idx: usize, values: Vec<f64>) -> ClipFeature {
        ClipFeature {
            song_id: song.into(),
            clip_index: idx,
            values,
        }
    }

    fn fit(points: &[Vec<f64>], v: usize, seed: u64) -> KMeansFit {
        kmeans_fit_with(points, &KMeansConfig::new(v, seed), Execution::Sequential).unwrap()
    }

    #[test]
    fn distinct_points_each_get_a_centroid() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![5.0, 1.0],
            vec![-3.0, 7.0],
            vec![2.0, 2.0],
        ];
        let f = fit(&pts, 4, 9);
        assert_eq!(*f.objectives.last().unwrap(), 0.0);
        let mut cs = f.vocabulary.centroids.clone();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = pts.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cs, want);
    }

    #[test]
    fn identical_points_collapse() {
        let pts = vec![vec![1.5, -2.0]; 10];
        let f = fit(&pts, 3, 1);
        assert!(f.vocabulary.centroids.iter().all(|c| c == &pts[0]));
        assert_eq!(*f.objectives.last().unwrap(), 0.0);
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = rng_from_seed(77);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let means = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let mut pts = Vec::new();
        for m in &means {
            for _ in 0..200 {
                pts.push(m.iter().map(|c| c + noise.sample(&mut rng)).collect());
            }
        }
        let f = fit(&pts, 2, 3);
        for m in &means {
            let best = f
                .vocabulary
                .centroids
                .iter()
                .map(|c| sq_dist(c, m).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "{best}");
        }
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            kmeans_fit_with(
                &[vec![1.0]],
                &KMeansConfig::new(2, 0),
                Execution::Sequential
            )
            .unwrap_err(),
            VocabError::InsufficientData { needed: 2, got: 1 }
        );
    }

    #[test]
    fn sequential_and_parallel_fit_identically() {
        let mut rng = rng_from_seed(4);
        let pts: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let a = kmeans_fit_with(&pts, &KMeansConfig::new(8, 2), Execution::Sequential).unwrap();
        let b = kmeans_fit_with(&pts, &KMeansConfig::new(8, 2), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assign_word_exact_and_ties() {
        let v = Vocabulary::new(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]], 0).unwrap();
        assert_eq!(assign_word(&v, &[5.0, 5.0]).unwrap(), 2);
        assert_eq!(assign_word(&v, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(
            assign_word(&v, &[1.0]),
            Err(VocabError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn corpus_construction_and_errors() {
        let v = Vocabulary::new(vec![vec![0.0], vec![10.0]], 0).unwrap();
        let mut songs = BTreeMap::new();
        songs.insert(
            "a".to_string(),
            vec![
                feat("a", 2, vec![9.0]),
                feat("a", 0, vec![1.0]),
                feat("a", 1, vec![11.0]),
            ],
        );
        songs.insert(
            "b".to_string(),
            vec![
                feat("b", 0, vec![10.0]),
                feat("b", 1, vec![0.0]),
                feat("b", 2, vec![0.0]),
            ],
        );
        let mut labels = BTreeMap::new();
        labels.insert("a".to_string(), "blues".to_string());
        labels.insert("b".to_string(), "jazz".to_string());
        let c = build_corpus(&songs, &labels, &v, 2).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[0].tokens, vec![0, 1, 1]);
        assert_eq!(c.documents[1].tokens, vec![1, 0, 0]);
        assert_eq!(c.vocab_size, 2);

        labels.remove("b");
        assert_eq!(
            build_corpus(&songs, &labels, &v, 2).unwrap_err(),
            VocabError::MissingLabel("b".into())
        );
        labels.insert("b".to_string(), "jazz".to_string());
        songs.insert("c".to_string(), vec![]);
        labels.insert("c".to_string(), "jazz".to_string());
        assert_eq!(
            build_corpus(&songs, &labels, &v, 2).unwrap_err(),
            VocabError::EmptyDocument("c".into())
        );
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = Vocabulary::new(vec![vec![0.125, -3.5], vec![1e-7, 42.0]], 99).unwrap();
        let text = v.to_json();
        assert!(text.contains("\"schema_version\""));
        assert_eq!(Vocabulary::from_json(&text).unwrap(), v);
    }

    proptest! {
        #[test]
        fn objective_never_increases(seed in 0u64..1000, n in 5usize..60, v in 1usize..6) {
            let mut rng = rng_from_seed(seed);
            let pts: Vec<Vec<f64>> = (0..n.max(v))
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let f = fit(&pts, v, seed);
            for w in f.objectives.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }

        #[test]
        fn assignment_matches_linear_scan(seed in 0u64..1000) {
            let mut rng = rng_from_seed(seed);
            let cs: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let v = Vocabulary::new(cs.clone(), 0).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = 0;
            for j in 1..cs.len() {
                if sq_dist(&cs[j], &x) < sq_dist(&cs[best], &x) {
                    best = j;
                }
            }
            prop_assert_eq!(assign_word(&v, &x).unwrap(), best);
        }
    }
}
