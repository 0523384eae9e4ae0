//! End-to-end bucket runs with on-disk, content-hashed checkpoints.
//!
//! Every stage reads its inputs from the bucket directory and writes its
//! outputs back, so a stage can be re-run alone. `checkpoints.json` records,
//! per stage, a key derived from the config and upstream output hashes plus
//! the SHA-256 of every file the stage wrote. A stage whose key and outputs
//! still match is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{load_song, segment_clips, CANONICAL_RATE, DEFAULT_CLIP_SECONDS};
use crate::dataset::{
    validate_buckets, BucketSpec, DatasetError, DatasetManifest, ManifestEntry, SplitTag,
};
use crate::eval::{
    evaluate_accuracy, split_indices, train_classifier, AccuracyCell, AccuracyRow, AccuracyTable,
    CellSeeds, SplitSpec, SvmConfig,
};
use crate::interpret::{
    doc_genre_profile, progressive_timeline, term_genre_profiles, topic_genre_profiles,
    word_genre_profiles, GenreDistribution, GenreTimeline, ProfileCounting,
};
use crate::lda::{infer_batch, train_gibbs, GibbsConfig, LdaModel};
use crate::mfcc::{ClipFeature, MfccConfig, MfccExtractor};
use crate::par::{self, Execution};
use crate::seed::derive_seed;
use crate::viz::{self, ChartMeta, Palette, Report, Stamp};
use crate::vocab::{build_corpus, kmeans_fit_with, Corpus, Document, KMeansConfig, Vocabulary};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoints.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Features,
    Vocab,
    Train,
    Interpret,
    Eval,
    Viz,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Features,
        Stage::Vocab,
        Stage::Train,
        Stage::Interpret,
        Stage::Eval,
        Stage::Viz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Features => "features",
            Stage::Vocab => "vocab",
            Stage::Train => "train",
            Stage::Interpret => "interpret",
            Stage::Eval => "eval",
            Stage::Viz => "viz",
        }
    }

    /// Direct upstream stages.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Features => &[],
            Stage::Vocab => &[Stage::Features],
            Stage::Train => &[Stage::Features, Stage::Vocab],
            Stage::Interpret => &[Stage::Features, Stage::Vocab, Stage::Train],
            Stage::Eval => &[Stage::Train],
            Stage::Viz => &[Stage::Interpret, Stage::Eval],
        }
    }

    /// `self` and everything it transitively depends on, in run order.
    pub fn closure(self) -> Vec<Stage> {
        let mut need = BTreeSet::new();
        let mut stack = vec![self];
        while let Some(s) = stack.pop() {
            if need.insert(s) {
                stack.extend_from_slice(s.inputs());
            }
        }
        need.into_iter().collect()
    }

    /// Stages that transitively depend on `self`, including `self`.
    fn downstream(self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| s.closure().contains(&self))
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[dataset] {0}")]
    Dataset(DatasetError),
    #[error("bucket {bucket} [{stage}] {message}")]
    Stage {
        bucket: u8,
        stage: Stage,
        message: String,
    },
    #[error("[output] {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Buckets(Vec<PipelineError>),
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        PipelineError::Dataset(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartSizes {
    pub doughnut_px: u32,
    pub timeline_width_px: u32,
    pub timeline_height_px: u32,
}

impl Default for ChartSizes {
    fn default() -> Self {
        ChartSizes {
            doughnut_px: 320,
            timeline_width_px: 800,
            timeline_height_px: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub mfcc: MfccConfig,
    /// Codebook size V.
    pub codebook_size: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    /// Fit the codebook on test songs' clips too (they never enter LDA
    /// training counts either way).
    pub codebook_includes_test: bool,
    pub topics: Vec<usize>,
    /// `None` means `50 / K`.
    pub alpha: Option<f64>,
    pub eta: f64,
    /// Gibbs sweeps for training.
    pub iters: usize,
    /// Gibbs sweeps for fold-in inference.
    pub infer_iters: usize,
    pub svm_epochs: usize,
    pub svm_lambda: f64,
    pub split: SplitSpec,
    /// Master seed; stage seeds are derived from it.
    pub seed: u64,
    /// Topic count whose model is interpreted and charted.
    pub interpret_topics: usize,
    pub profile_counting: ProfileCounting,
    /// Clips averaged per timeline entry.
    pub timeline_window: usize,
    pub buckets: Vec<BucketSpec>,
    pub charts: ChartSizes,
    /// Output root. Not part of the config hash.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            clip_seconds: DEFAULT_CLIP_SECONDS,
            sample_rate: CANONICAL_RATE,
            mfcc: MfccConfig::default(),
            codebook_size: 3,
            kmeans_max_iters: 300,
            kmeans_tol: 1e-6,
            codebook_includes_test: true,
            topics: vec![2, 3, 4, 5],
            alpha: None,
            eta: 0.01,
            iters: 500,
            infer_iters: 100,
            svm_epochs: 200,
            svm_lambda: 1e-3,
            split: SplitSpec::default(),
            seed: 42,
            interpret_topics: 4,
            profile_counting: ProfileCounting::PerClip,
            timeline_window: 11,
            buckets: BucketSpec::defaults(),
            charts: ChartSizes::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return bad(format!(
                "clip_seconds must be positive, got {}",
                self.clip_seconds
            ));
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        self.mfcc
            .validate(self.sample_rate)
            .map_err(|e| PipelineError::Config(format!("mfcc: {e}")))?;
        if self.codebook_size == 0 {
            return bad("codebook_size must be at least 1".into());
        }
        if self.topics.is_empty() || self.topics.contains(&0) {
            return bad("topics must be a non-empty list of positive counts".into());
        }
        if self.topics.iter().collect::<BTreeSet<_>>().len() != self.topics.len() {
            return bad("topics contains duplicates".into());
        }
        if !self.topics.contains(&self.interpret_topics) {
            return bad(format!(
                "interpret_topics {} is not among topics {:?}",
                self.interpret_topics, self.topics
            ));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("alpha must be positive, got {a}"));
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.iters == 0 || self.infer_iters == 0 || self.svm_epochs == 0 {
            return bad("iteration counts must be positive".into());
        }
        if !(self.svm_lambda > 0.0) {
            return bad("svm_lambda must be positive".into());
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad("split.train_fraction must be in (0, 1)".into());
        }
        if self.timeline_window == 0 {
            return bad("timeline_window must be at least 1".into());
        }
        let c = self.charts;
        if c.doughnut_px == 0 || c.timeline_width_px == 0 || c.timeline_height_px == 0 {
            return bad("chart sizes must be positive".into());
        }
        validate_buckets(&self.buckets)?;
        Ok(())
    }

    /// Config as sorted-key JSON without the output path.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
        }
        let mut s = serde_json::to_string_pretty(&viz::sort_keys(v)).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.config_hash(),
            seed: self.seed,
        }
    }

    pub fn bucket(&self, bucket_id: u8) -> Option<&BucketSpec> {
        self.buckets.iter().find(|b| b.bucket_id == bucket_id)
    }
}

/// Per-song clip features of one bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub schema_version: u32,
    pub bucket_id: u8,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub songs: Vec<SongFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongFeatures {
    pub song_id: String,
    pub genre: String,
    pub split: SplitTag,
    /// One MFCC vector per clip, in clip order.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub song_id: String,
    pub genre: String,
    pub split: SplitTag,
    pub theta: Vec<f64>,
}

/// Document-topic proportions of one trained model: Gibbs estimates for
/// training songs, fold-in estimates for test songs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSet {
    pub schema_version: u32,
    pub n_topics: usize,
    pub seeds: CellSeeds,
    pub documents: Vec<ThetaRow>,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub schema_version: u32,
    pub n_topics: usize,
    pub counting: ProfileCounting,
    /// Indexed by word id; `None` for words no training clip maps to.
    pub words: Vec<Option<GenreDistribution>>,
    pub topics: Vec<GenreDistribution>,
    pub terms: Vec<GenreDistribution>,
    pub documents: BTreeMap<String, GenreDistribution>,
    pub timelines: BTreeMap<String, GenreTimeline>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Checkpoints {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    stages: BTreeMap<Stage, StageRecord>,
}

pub fn model_file(k: usize) -> String {
    format!("model_K{k}.json")
}

pub fn thetas_file(k: usize) -> String {
    format!("thetas_K{k}.json")
}

pub fn bucket_dir(out: &Path, bucket_id: u8) -> PathBuf {
    out.join(format!("bucket{bucket_id}"))
}

/// Song id reduced to characters that are safe in file names.
pub fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn compact<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec(value).expect("artifact serializes");
    s.push(b'\n');
    s
}

type Outputs = Vec<(String, Vec<u8>)>;

/// What happened to one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSummary {
    pub bucket_id: u8,
    pub dir: PathBuf,
    pub computed: Vec<Stage>,
    pub reused: Vec<Stage>,
}

struct BucketRun<'a> {
    manifest: &'a DatasetManifest,
    bucket: &'a BucketSpec,
    config: &'a RunConfig,
    exec: Execution,
    dir: PathBuf,
    config_hash: String,
    checkpoints: Checkpoints,
}

impl<'a> BucketRun<'a> {
    fn fail(&self, stage: Stage, message: impl fmt::Display) -> PipelineError {
        PipelineError::Stage {
            bucket: self.bucket.bucket_id,
            stage,
            message: message.to_string(),
        }
    }

    fn read(&self, name: &str) -> Result<Vec<u8>, String> {
        std::fs::read(self.dir.join(name)).map_err(|e| format!("reading {name}: {e}"))
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, String> {
        serde_json::from_slice(&self.read(name)?).map_err(|e| format!("parsing {name}: {e}"))
    }

    fn save_checkpoints(&self) -> Result<(), PipelineError> {
        let path = self.dir.join(CHECKPOINT_FILE);
        let text = viz::to_canonical_json(&self.checkpoints);
        write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::Output {
            path,
            message: e.to_string(),
        })
    }

    fn stage_key(&self, stage: Stage, extra: &str) -> String {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(self.config_hash.as_bytes());
        h.update(extra.as_bytes());
        for up in stage.inputs() {
            if let Some(rec) = self.checkpoints.stages.get(up) {
                for (file, digest) in &rec.outputs {
                    h.update(file.as_bytes());
                    h.update(digest.as_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    fn outputs_intact(&self, rec: &StageRecord) -> bool {
        rec.outputs.iter().all(|(file, digest)| {
            std::fs::read(self.dir.join(file))
                .map(|b| &sha256_hex(&b) == digest)
                .unwrap_or(false)
        })
    }

    /// Delete the recorded outputs of `stages` and forget them.
    fn clear(&mut self, stages: &[Stage]) {
        for s in stages {
            if let Some(rec) = self.checkpoints.stages.remove(s) {
                for file in rec.outputs.keys() {
                    let _ = std::fs::remove_file(self.dir.join(file));
                }
            }
        }
    }

    /// Returns true when the stage was reused from its checkpoint.
    fn run_stage(
        &mut self,
        stage: Stage,
        extra_key: &str,
        compute: impl FnOnce(&Self) -> Result<Outputs, String>,
    ) -> Result<bool, PipelineError> {
        let key = self.stage_key(stage, extra_key);
        if let Some(rec) = self.checkpoints.stages.get(&stage) {
            if rec.key == key && self.outputs_intact(rec) {
                log::info!("bucket {}: {stage} reused", self.bucket.bucket_id);
                return Ok(true);
            }
        }
        log::info!("bucket {}: {stage} running", self.bucket.bucket_id);
        let result = compute(self);
        let outputs = match result {
            Ok(o) => o,
            Err(message) => {
                self.clear(&stage.downstream());
                self.save_checkpoints()?;
                return Err(self.fail(stage, message));
            }
        };
        // stale files of this stage and anything built on them go first
        self.clear(&stage.downstream());
        let mut record = StageRecord {
            key,
            outputs: BTreeMap::new(),
        };
        for (name, bytes) in &outputs {
            let path = self.dir.join(name);
            if let Err(e) = write_atomic(&path, bytes) {
                for written in record.outputs.keys() {
                    let _ = std::fs::remove_file(self.dir.join(written));
                }
                self.save_checkpoints()?;
                return Err(self.fail(stage, format!("writing {name}: {e}")));
            }
            record.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        self.checkpoints.stages.insert(stage, record);
        self.save_checkpoints()?;
        Ok(false)
    }

    fn entries(&self) -> Result<Vec<&'a ManifestEntry>, PipelineError> {
        Ok(self.manifest.select_bucket(self.bucket)?)
    }

    /// Manifest rows plus audio content hashes.
    fn source_fingerprint(&self, entries: &[&ManifestEntry]) -> Result<String, PipelineError> {
        let mut h = Sha256::new();
        for e in entries {
            let path = self.manifest.absolute_path(e);
            let bytes = std::fs::read(&path).map_err(|err| {
                self.fail(
                    Stage::Features,
                    format!("song {}: {}: {err}", e.song_id, path.display()),
                )
            })?;
            h.update(e.song_id.as_bytes());
            h.update(e.genre.as_bytes());
            h.update(format!("{:?}", e.split).as_bytes());
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }

    fn assign_splits(&self, entries: &[&ManifestEntry]) -> Result<Vec<SplitTag>, String> {
        let tagged = entries.iter().filter(|e| e.split.is_some()).count();
        if tagged == entries.len() {
            return Ok(entries
                .iter()
                .map(|e| e.split.expect("all tagged"))
                .collect());
        }
        if tagged > 0 {
            return Err(format!(
                "manifest tags {tagged} of {} songs with a split; tag all or none",
                entries.len()
            ));
        }
        let labels = Corpus {
            documents: entries
                .iter()
                .map(|e| Document {
                    song_id: e.song_id.clone(),
                    genre: e.genre.clone(),
                    tokens: Vec::new(),
                })
                .collect(),
            vocab_size: 0,
            genres: entries.iter().map(|e| e.genre.clone()).collect(),
            bucket_id: self.bucket.bucket_id,
        };
        let split = split_indices(&labels, &self.config.split).map_err(|e| e.to_string())?;
        let mut tags = vec![SplitTag::Train; entries.len()];
        for i in split.test {
            tags[i] = SplitTag::Test;
        }
        Ok(tags)
    }

    fn compute_features(&self, entries: &[&ManifestEntry]) -> Result<Outputs, String> {
        let cfg = self.config;
        let splits = self.assign_splits(entries)?;
        let extractor = MfccExtractor::new(cfg.mfcc.clone(), cfg.sample_rate)
            .map_err(|e| format!("mfcc: {e}"))?;
        let per_song = par::map(self.exec, entries, |e| {
            let path = self.manifest.absolute_path(e);
            let signal = load_song(&path, cfg.sample_rate)
                .map_err(|err| format!("song {}: {err}", e.song_id))?;
            let clips = segment_clips(&signal, &e.song_id, cfg.clip_seconds)
                .map_err(|err| format!("song {}: {err}", e.song_id))?;
            let feats = extractor
                .extract_batch(&clips, Execution::Sequential)
                .map_err(|err| format!("song {}: {err}", e.song_id))?;
            Ok::<_, String>(feats.into_iter().map(|f| f.values).collect::<Vec<_>>())
        });
        let mut songs = Vec::with_capacity(entries.len());
        for ((e, split), feats) in entries.iter().zip(splits).zip(per_song) {
            songs.push(SongFeatures {
                song_id: e.song_id.clone(),
                genre: e.genre.clone(),
                split,
                features: feats?,
            });
        }
        let set = FeatureSet {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            bucket_id: self.bucket.bucket_id,
            clip_seconds: cfg.clip_seconds,
            sample_rate: cfg.sample_rate,
            songs,
        };
        Ok(vec![("features.json".into(), compact(&set))])
    }

    fn compute_vocab(&self) -> Result<Outputs, String> {
        let set: FeatureSet = self.read_json("features.json")?;
        let points: Vec<Vec<f64>> = set
            .songs
            .iter()
            .filter(|s| self.config.codebook_includes_test || s.split == SplitTag::Train)
            .flat_map(|s| s.features.iter().cloned())
            .collect();
        let kcfg = KMeansConfig {
            v: self.config.codebook_size,
            seed: derive_seed(
                self.config.seed,
                &format!("bucket{}/codebook", self.bucket.bucket_id),
            ),
            max_iters: self.config.kmeans_max_iters,
            tol: self.config.kmeans_tol,
        };
        let fit =
            kmeans_fit_with(&points, &kcfg, self.exec).map_err(|e| format!("codebook: {e}"))?;
        Ok(vec![(
            "vocab.json".into(),
            fit.vocabulary.to_json().into_bytes(),
        )])
    }

    /// Full corpus in song-id order with each document's split.
    fn load_corpus(&self) -> Result<(Corpus, Vec<SplitTag>), String> {
        let set: FeatureSet = self.read_json("features.json")?;
        let text = String::from_utf8(self.read("vocab.json")?).map_err(|e| e.to_string())?;
        let vocab = Vocabulary::from_json(&text).map_err(|e| e.to_string())?;
        let mut feats = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut splits = BTreeMap::new();
        for s in set.songs {
            let clips = s
                .features
                .into_iter()
                .enumerate()
                .map(|(i, values)| ClipFeature {
                    song_id: s.song_id.clone(),
                    clip_index: i,
                    values,
                })
                .collect();
            feats.insert(s.song_id.clone(), clips);
            labels.insert(s.song_id.clone(), s.genre);
            splits.insert(s.song_id, s.split);
        }
        let corpus = build_corpus(&feats, &labels, &vocab, self.bucket.bucket_id)
            .map_err(|e| e.to_string())?;
        let tags = corpus
            .documents
            .iter()
            .map(|d| splits[&d.song_id])
            .collect();
        Ok((corpus, tags))
    }

    fn compute_train(&self) -> Result<Outputs, String> {
        let (corpus, tags) = self.load_corpus()?;
        let pick = |want: SplitTag| -> Vec<usize> {
            (0..tags.len()).filter(|&i| tags[i] == want).collect()
        };
        let train_idx = pick(SplitTag::Train);
        let test_idx = pick(SplitTag::Test);
        let train = corpus.subset(&train_idx);
        let test = corpus.subset(&test_idx);
        let cfg = self.config;
        let cells = par::map(self.exec, &cfg.topics, |&k| {
            let seeds = CellSeeds::derive(cfg.seed, self.bucket.bucket_id, k);
            let gibbs = GibbsConfig {
                n_topics: k,
                alpha: cfg.alpha,
                eta: cfg.eta,
                n_iters: cfg.iters,
                burn_in: None,
                seed: seeds.lda,
            };
            let trained = train_gibbs(&train, &gibbs).map_err(|e| format!("K={k}: {e}"))?;
            let test_theta = infer_batch(
                &trained.model,
                &test.documents,
                cfg.infer_iters,
                seeds.fold_in,
                Execution::Sequential,
            )
            .map_err(|e| format!("K={k}: {e}"))?;
            let mut rows: Vec<ThetaRow> = Vec::with_capacity(corpus.documents.len());
            let thetas = trained
                .doc_topics
                .theta
                .into_iter()
                .zip(&train_idx)
                .chain(test_theta.into_iter().zip(&test_idx));
            for (theta, &i) in thetas {
                let d = &corpus.documents[i];
                rows.push(ThetaRow {
                    song_id: d.song_id.clone(),
                    genre: d.genre.clone(),
                    split: tags[i],
                    theta,
                });
            }
            rows.sort_by(|a, b| a.song_id.cmp(&b.song_id));
            let set = ThetaSet {
                schema_version: ARTIFACT_SCHEMA_VERSION,
                n_topics: k,
                seeds,
                documents: rows,
                log_likelihood_trace: trained.log_likelihood_trace,
            };
            Ok::<_, String>(vec![
                (model_file(k), trained.model.to_json().into_bytes()),
                (thetas_file(k), compact(&set)),
            ])
        });
        let mut out = Vec::new();
        for c in cells {
            out.extend(c?);
        }
        Ok(out)
    }

    fn compute_interpret(&self) -> Result<Outputs, String> {
        let k = self.config.interpret_topics;
        let (corpus, tags) = self.load_corpus()?;
        let text = String::from_utf8(self.read(&model_file(k))?).map_err(|e| e.to_string())?;
        let model = LdaModel::from_json(&text).map_err(|e| e.to_string())?;
        let thetas: ThetaSet = self.read_json(&thetas_file(k))?;
        let train_idx: Vec<usize> = (0..tags.len())
            .filter(|&i| tags[i] == SplitTag::Train)
            .collect();
        let words = word_genre_profiles(&corpus.subset(&train_idx), self.config.profile_counting);
        let topics = topic_genre_profiles(&model, &words).map_err(|e| e.to_string())?;
        let terms = term_genre_profiles(&model, &topics).map_err(|e| e.to_string())?;
        let mut documents = BTreeMap::new();
        for row in &thetas.documents {
            let p = doc_genre_profile(&row.theta, &topics)
                .map_err(|e| format!("song {}: {e}", row.song_id))?;
            documents.insert(row.song_id.clone(), p);
        }
        let mut timelines = BTreeMap::new();
        for doc in &corpus.documents {
            let window = self.config.timeline_window.min(doc.tokens.len());
            let tl = progressive_timeline(doc, self.config.clip_seconds, &terms, window)
                .map_err(|e| format!("song {}: {e}", doc.song_id))?;
            timelines.insert(doc.song_id.clone(), tl);
        }
        let profiles = Profiles {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            n_topics: k,
            counting: self.config.profile_counting,
            words,
            topics,
            terms,
            documents,
            timelines,
        };
        Ok(vec![("profiles.json".into(), compact(&profiles))])
    }

    fn accuracy_cell(&self, k: usize) -> AccuracyCell {
        let seeds = CellSeeds::derive(self.config.seed, self.bucket.bucket_id, k);
        let result = (|| -> Result<f64, String> {
            let set: ThetaSet = self.read_json(&thetas_file(k))?;
            let (train, test): (Vec<&ThetaRow>, Vec<&ThetaRow>) = set
                .documents
                .iter()
                .partition(|r| r.split == SplitTag::Train);
            let xs = |rows: &[&ThetaRow]| rows.iter().map(|r| r.theta.clone()).collect::<Vec<_>>();
            let ys = |rows: &[&ThetaRow]| rows.iter().map(|r| r.genre.clone()).collect::<Vec<_>>();
            let svm = SvmConfig {
                epochs: self.config.svm_epochs,
                lambda: self.config.svm_lambda,
                seed: seeds.svm,
            };
            let clf =
                train_classifier(&xs(&train), &ys(&train), &svm).map_err(|e| e.to_string())?;
            evaluate_accuracy(&clf, &xs(&test), &ys(&test)).map_err(|e| e.to_string())
        })();
        if let Err(e) = &result {
            log::warn!("bucket {} K={k}: {e}", self.bucket.bucket_id);
        }
        AccuracyCell {
            n_topics: k,
            accuracy: result.as_ref().ok().copied(),
            seed: seeds.cell,
            error: result.err(),
        }
    }

    fn compute_eval(&self) -> Result<Outputs, String> {
        let table = AccuracyTable {
            topic_counts: self.config.topics.clone(),
            rows: vec![AccuracyRow {
                bucket_id: self.bucket.bucket_id,
                cells: self
                    .config
                    .topics
                    .iter()
                    .map(|&k| self.accuracy_cell(k))
                    .collect(),
            }],
        };
        Ok(vec![
            ("accuracy.csv".into(), table.to_csv().into_bytes()),
            (
                "accuracy.json".into(),
                viz::to_canonical_json(&table).into_bytes(),
            ),
        ])
    }

    fn compute_viz(&self) -> Result<Outputs, String> {
        let profiles: Profiles = self.read_json("profiles.json")?;
        let table: AccuracyTable = self.read_json("accuracy.json")?;
        let stamp = Stamp {
            config_hash: self.config_hash.clone(),
            seed: self.config.seed,
        };
        let stamp_text = format!("config_hash={} seed={}", stamp.config_hash, stamp.seed);
        let palette = Palette::for_genres(self.bucket.genres.iter().map(String::as_str));
        let mut report = Report::new(
            self.bucket.bucket_id,
            &profiles.topics,
            profiles.documents.clone(),
            &profiles.terms,
            Some(table),
        );
        report.stamp = Some(stamp);
        let mut out: Outputs = vec![(
            "report.json".into(),
            viz::export_report_json(&report).into_bytes(),
        )];
        for (i, dist) in profiles.topics.iter().enumerate() {
            let meta = ChartMeta {
                title: Some(format!("Topic {i}")),
                stamp: Some(stamp_text.clone()),
            };
            let svg = viz::doughnut_svg_with(dist, &palette, self.config.charts.doughnut_px, &meta)
                .map_err(|e| format!("topic {i}: {e}"))?;
            out.push((format!("topic{i}.svg"), svg.into_bytes()));
        }
        let mut used = BTreeSet::new();
        for (song, tl) in &profiles.timelines {
            if tl.entries.len() < 2 {
                log::warn!(
                    "song {song}: timeline has {} entries, chart skipped",
                    tl.entries.len()
                );
                continue;
            }
            let base = file_safe(song);
            let mut name = format!("timeline_{base}.svg");
            let mut n = 2;
            while !used.insert(name.clone()) {
                name = format!("timeline_{base}_{n}.svg");
                n += 1;
            }
            let meta = ChartMeta {
                title: Some(song.clone()),
                stamp: Some(stamp_text.clone()),
            };
            let c = self.config.charts;
            let svg = viz::timeline_svg_with(
                tl,
                &palette,
                c.timeline_width_px,
                c.timeline_height_px,
                &meta,
            )
            .map_err(|e| format!("song {song}: {e}"))?;
            out.push((name, svg.into_bytes()));
        }
        Ok(out)
    }
}

/// Run one bucket through `target` and every stage it depends on.
pub fn run_bucket(
    manifest: &DatasetManifest,
    bucket: &BucketSpec,
    config: &RunConfig,
    target: Stage,
    exec: Execution,
) -> Result<BucketSummary, PipelineError> {
    config.validate()?;
    let dir = bucket_dir(&config.out, bucket.bucket_id);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Output {
        path: dir.clone(),
        message: e.to_string(),
    })?;
    let config_hash = config.config_hash();
    let checkpoints = std::fs::read(dir.join(CHECKPOINT_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<Checkpoints>(&b).ok())
        .filter(|c| c.schema_version == ARTIFACT_SCHEMA_VERSION)
        .unwrap_or_default();
    let mut run = BucketRun {
        manifest,
        bucket,
        config,
        exec,
        dir: dir.clone(),
        config_hash: config_hash.clone(),
        checkpoints,
    };
    run.checkpoints.schema_version = ARTIFACT_SCHEMA_VERSION;
    run.checkpoints.config_hash = config_hash;
    run.checkpoints.seed = config.seed;

    let entries = run.entries()?;
    let mut summary = BucketSummary {
        bucket_id: bucket.bucket_id,
        dir,
        computed: Vec::new(),
        reused: Vec::new(),
    };
    for stage in target.closure() {
        let reused = match stage {
            Stage::Features => {
                let fp = run.source_fingerprint(&entries)?;
                run.run_stage(stage, &fp, |r| r.compute_features(&entries))?
            }
            Stage::Vocab => run.run_stage(stage, "", |r| r.compute_vocab())?,
            Stage::Train => run.run_stage(stage, "", |r| r.compute_train())?,
            Stage::Interpret => run.run_stage(stage, "", |r| r.compute_interpret())?,
            Stage::Eval => run.run_stage(stage, "", |r| r.compute_eval())?,
            Stage::Viz => run.run_stage(stage, "", |r| r.compute_viz())?,
        };
        if reused {
            summary.reused.push(stage);
        } else {
            summary.computed.push(stage);
        }
    }
    Ok(summary)
}

/// Outcome of a multi-bucket run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub buckets: Vec<BucketSummary>,
    /// Merged accuracy grid when the eval stage ran.
    pub accuracy: Option<AccuracyTable>,
}

/// Merge the per-bucket accuracy rows found under `out` into one grid.
pub fn collect_accuracy(out: &Path, config: &RunConfig) -> Result<AccuracyTable, PipelineError> {
    let mut rows = Vec::new();
    for b in &config.buckets {
        let path = bucket_dir(out, b.bucket_id).join("accuracy.json");
        if let Ok(bytes) = std::fs::read(&path) {
            let t: AccuracyTable =
                serde_json::from_slice(&bytes).map_err(|e| PipelineError::Output {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            rows.extend(t.rows);
        }
    }
    rows.sort_by_key(|r| r.bucket_id);
    Ok(AccuracyTable {
        topic_counts: config.topics.clone(),
        rows,
    })
}

fn write_top_level(out: &Path, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
    let path = out.join(name);
    write_atomic(&path, bytes).map_err(|e| PipelineError::Output {
        path,
        message: e.to_string(),
    })
}

/// Run the selected buckets (all configured buckets when `only` is empty).
/// Every bucket's genres are checked against the manifest before any audio
/// is touched. A failing bucket does not stop the others; the failures are
/// returned together once all buckets have been attempted.
pub fn run_all(
    manifest: &DatasetManifest,
    config: &RunConfig,
    only: &[u8],
    target: Stage,
    exec: Execution,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let buckets: Vec<&BucketSpec> = if only.is_empty() {
        config.buckets.iter().collect()
    } else {
        only.iter()
            .map(|id| {
                config
                    .bucket(*id)
                    .ok_or_else(|| PipelineError::Config(format!("no bucket with id {id}")))
            })
            .collect::<Result<_, _>>()?
    };
    for b in &buckets {
        manifest.select_bucket(b)?;
    }
    std::fs::create_dir_all(&config.out).map_err(|e| PipelineError::Output {
        path: config.out.clone(),
        message: e.to_string(),
    })?;
    write_top_level(
        &config.out,
        "config.json",
        config.canonical_json().as_bytes(),
    )?;
    write_top_level(&config.out, "manifest.csv", manifest.to_csv().as_bytes())?;

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for b in buckets {
        match run_bucket(manifest, b, config, target, exec) {
            Ok(s) => summaries.push(s),
            Err(e) => {
                log::error!("{e}");
                failures.push(e);
            }
        }
    }
    let accuracy = if target.closure().contains(&Stage::Eval) {
        let table = collect_accuracy(&config.out, config)?;
        write_top_level(&config.out, "accuracy.csv", table.to_csv().as_bytes())?;
        write_top_level(
            &config.out,
            "accuracy.json",
            viz::to_canonical_json(&table).as_bytes(),
        )?;
        Some(table)
    } else {
        None
    };
    if !failures.is_empty() {
        return Err(PipelineError::Buckets(failures));
    }
    Ok(RunSummary {
        buckets: summaries,
        accuracy,
    })
}
