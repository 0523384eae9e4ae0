//! Genre-mixture interpretation of the latent space.
//!
//! Every musical word gets a genre distribution from the labels of the clips
//! quantized to it. Topics, documents, terms and time windows are then convex
//! combinations of those distributions:
//!
//! * word: normalized genre counts of its clips
//! * topic: Σ_w beta[t][w] · word[w]
//! * document: Σ_k theta[k] · topic[k]
//! * term: Σ_k p(z = k | w) · topic[k]
//! * timeline entry i: mean of term profiles over tokens `i..i + window`

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lda::{term_topic_posterior, LdaError, LdaModel};
use crate::vocab::{Corpus, Document};

#[derive(Debug, Error, PartialEq)]
pub enum InterpretError {
    #[error("word {0} has no clips assigned")]
    UnusedWord(usize),
    #[error("no genre profile for word {0}")]
    MissingWordProfile(usize),
    #[error("topic {0} puts all of its mass on words without clips")]
    NoInterpretableWords(usize),
    #[error("no genre profile for topic {0}")]
    MissingTopicProfile(usize),
    #[error("window of {window} exceeds the {tokens} tokens of the document")]
    WindowTooLarge { window: usize, tokens: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Lda(#[from] LdaError),
}

/// A probability distribution over genre labels. Zero-mass genres are not
/// stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct GenreDistribution {
    weights: BTreeMap<String, f64>,
}

impl GenreDistribution {
    /// Normalize non-negative weights. Fails if the total is not positive.
    pub fn from_weights<I, S>(weights: I) -> Result<Self, InterpretError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map: BTreeMap<String, f64> = BTreeMap::new();
        for (g, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(InterpretError::InvalidArgument(format!("bad weight {w}")));
            }
            *map.entry(g.into()).or_insert(0.0) += w;
        }
        let total: f64 = map.values().sum();
        if !(total > 0.0) {
            return Err(InterpretError::InvalidArgument(
                "distribution has no mass".into(),
            ));
        }
        map.retain(|_, w| *w > 0.0);
        map.values_mut().for_each(|w| *w /= total);
        Ok(GenreDistribution { weights: map })
    }

    pub fn from_counts<'a, I>(labels: I) -> Result<Self, InterpretError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::from_weights(labels.into_iter().map(|g| (g, 1.0)))
    }

    pub fn single(genre: &str) -> Self {
        GenreDistribution {
            weights: BTreeMap::from([(genre.to_string(), 1.0)]),
        }
    }

    /// Convex combination `Σ w_i · d_i`, renormalized to absorb rounding.
    pub fn mix<'a, I>(parts: I) -> Result<Self, InterpretError>
    where
        I: IntoIterator<Item = (f64, &'a GenreDistribution)>,
    {
        let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
        for (w, d) in parts {
            for (g, p) in &d.weights {
                *acc.entry(g.as_str()).or_insert(0.0) += w * p;
            }
        }
        Self::from_weights(acc)
    }

    pub fn get(&self, genre: &str) -> f64 {
        self.weights.get(genre).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(g, w)| (g.as_str(), *w))
    }

    pub fn genres(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }
}

impl fmt::Display for GenreDistribution {
    /// Two-decimal display form, e.g. `0.67 blues + 0.33 country`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(g, w)| format!("{w:.2} {g}")).collect();
        f.write_str(&parts.join(" + "))
    }
}

/// What one observation means when counting genres behind a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileCounting {
    /// Every clip quantized to the word counts once.
    #[default]
    PerClip,
    /// Every song with at least one such clip counts once.
    PerSong,
}

pub fn word_genre_profile(
    word: usize,
    corpus: &Corpus,
    counting: ProfileCounting,
) -> Result<GenreDistribution, InterpretError> {
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for doc in &corpus.documents {
        let hits = doc.tokens.iter().filter(|&&w| w == word).count();
        let n = match counting {
            ProfileCounting::PerClip => hits,
            ProfileCounting::PerSong => hits.min(1),
        };
        if n > 0 {
            *counts.entry(doc.genre.as_str()).or_insert(0.0) += n as f64;
        }
    }
    if counts.is_empty() {
        return Err(InterpretError::UnusedWord(word));
    }
    GenreDistribution::from_weights(counts)
}

/// Profiles for every word id in `0..vocab_size`; `None` marks unused words.
pub fn word_genre_profiles(
    corpus: &Corpus,
    counting: ProfileCounting,
) -> Vec<Option<GenreDistribution>> {
    (0..corpus.vocab_size)
        .map(|w| word_genre_profile(w, corpus, counting).ok())
        .collect()
}

/// Topic profile as a beta-weighted mixture of word profiles. Words marked
/// `None` (no clips) are skipped and the remaining mass renormalized.
pub fn topic_genre_profile(
    topic: usize,
    model: &LdaModel,
    word_profiles: &[Option<GenreDistribution>],
) -> Result<GenreDistribution, InterpretError> {
    let row = model
        .beta
        .get(topic)
        .ok_or_else(|| InterpretError::InvalidArgument(format!("no topic {topic}")))?;
    let mut parts = Vec::new();
    for (w, &b) in row.iter().enumerate() {
        if b <= 0.0 {
            continue;
        }
        match word_profiles.get(w) {
            None => return Err(InterpretError::MissingWordProfile(w)),
            Some(None) => {}
            Some(Some(p)) => parts.push((b, p)),
        }
    }
    if parts.is_empty() {
        return Err(InterpretError::NoInterpretableWords(topic));
    }
    GenreDistribution::mix(parts)
}

pub fn topic_genre_profiles(
    model: &LdaModel,
    word_profiles: &[Option<GenreDistribution>],
) -> Result<Vec<GenreDistribution>, InterpretError> {
    (0..model.n_topics)
        .map(|t| topic_genre_profile(t, model, word_profiles))
        .collect()
}

pub fn doc_genre_profile(
    theta: &[f64],
    topic_profiles: &[GenreDistribution],
) -> Result<GenreDistribution, InterpretError> {
    let mut parts = Vec::new();
    for (k, &p) in theta.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let profile = topic_profiles
            .get(k)
            .ok_or(InterpretError::MissingTopicProfile(k))?;
        parts.push((p, profile));
    }
    GenreDistribution::mix(parts)
}

pub fn term_genre_profile(
    word: usize,
    model: &LdaModel,
    topic_profiles: &[GenreDistribution],
) -> Result<GenreDistribution, InterpretError> {
    let posterior = term_topic_posterior(model, word)?;
    doc_genre_profile(&posterior, topic_profiles)
}

pub fn term_genre_profiles(
    model: &LdaModel,
    topic_profiles: &[GenreDistribution],
) -> Result<Vec<GenreDistribution>, InterpretError> {
    (0..model.vocab_size)
        .map(|w| term_genre_profile(w, model, topic_profiles))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub start_time: f64,
    pub distribution: GenreDistribution,
}

/// Genre proportions over a song's duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreTimeline {
    pub entries: Vec<TimelineEntry>,
}

impl GenreTimeline {
    /// Every genre appearing in any entry.
    pub fn genres(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.distribution.genres())
            .collect()
    }
}

/// Moving average of per-token term profiles. Entry `i` covers tokens
/// `i..i + window` and starts at `i * clip_seconds`.
pub fn progressive_timeline(
    document: &Document,
    clip_seconds: f64,
    term_profiles: &[GenreDistribution],
    window: usize,
) -> Result<GenreTimeline, InterpretError> {
    if window == 0 {
        return Err(InterpretError::InvalidArgument(
            "window must be at least 1".into(),
        ));
    }
    if !(clip_seconds > 0.0) {
        return Err(InterpretError::InvalidArgument(
            "clip_seconds must be positive".into(),
        ));
    }
    let n = document.tokens.len();
    if n == 0 {
        return Err(InterpretError::InvalidArgument(format!(
            "document {} has no tokens",
            document.song_id
        )));
    }
    if window > n {
        return Err(InterpretError::WindowTooLarge { window, tokens: n });
    }
    let profiles = document
        .tokens
        .iter()
        .map(|&w| {
            term_profiles
                .get(w)
                .ok_or(InterpretError::MissingWordProfile(w))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let weight = 1.0 / window as f64;
    let entries = profiles
        .windows(window)
        .enumerate()
        .map(|(i, span)| {
            Ok(TimelineEntry {
                start_time: i as f64 * clip_seconds,
                distribution: GenreDistribution::mix(span.iter().map(|p| (weight, *p)))?,
            })
        })
        .collect::<Result<Vec<_>, InterpretError>>()?;
    Ok(GenreTimeline { entries })
}
