//! Dataset discovery: genre-labelled WAV files and the genre buckets that
//! partition them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// File name of an explicit manifest at the dataset root.
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no WAV files found under {0}")]
    EmptyDataset(PathBuf),
    #[error("song id {0} appears more than once")]
    DuplicateSongId(String),
    #[error("manifest: {0}")]
    InvalidManifest(String),
    #[error("file listed in manifest does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("bucket {bucket}: genre {genre} not found in dataset")]
    MissingGenre { bucket: u8, genre: String },
    #[error("bucket {bucket}: genre {genre} has {count} song(s), need at least 2")]
    TooFewSongs {
        bucket: u8,
        genre: String,
        count: usize,
    },
    #[error("invalid bucket definition: {0}")]
    InvalidBucket(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Lowercase, trimmed, with the `hip-hop` spelling folded into `hiphop`.
pub fn normalize_genre(label: &str) -> String {
    let g = label.trim().to_lowercase();
    match g.as_str() {
        "hip-hop" | "hip_hop" | "hip hop" => "hiphop".to_string(),
        _ => g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

impl SplitTag {
    fn parse(s: &str) -> Result<Option<Self>, DatasetError> {
        match s.trim().to_lowercase().as_str() {
            "" => Ok(None),
            "train" => Ok(Some(SplitTag::Train)),
            "test" => Ok(Some(SplitTag::Test)),
            other => Err(DatasetError::InvalidManifest(format!(
                "unknown split tag {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub song_id: String,
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub genre: String,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted by song id.
    pub entries: Vec<ManifestEntry>,
}

fn default_song_id(genre: &str, path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{genre}_{stem}")
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("wav"))
        .unwrap_or(false)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    #[serde(default)]
    song_id: String,
    path: String,
    genre: String,
    #[serde(default)]
    split: String,
}

impl DatasetManifest {
    fn from_entries(root: PathBuf, mut entries: Vec<ManifestEntry>) -> Result<Self, DatasetError> {
        if entries.is_empty() {
            return Err(DatasetError::EmptyDataset(root));
        }
        entries.sort_by(|a, b| a.song_id.cmp(&b.song_id));
        for pair in entries.windows(2) {
            if pair[0].song_id == pair[1].song_id {
                return Err(DatasetError::DuplicateSongId(pair[0].song_id.clone()));
            }
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Parse manifest CSV with header `song_id,path,genre[,split]`. An empty
    /// `song_id` falls back to `<genre>_<file stem>`.
    pub fn from_csv(root: &Path, text: &str) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for row in reader.deserialize::<ManifestRow>() {
            let row = row.map_err(|e| DatasetError::InvalidManifest(e.to_string()))?;
            let genre = normalize_genre(&row.genre);
            if genre.is_empty() {
                return Err(DatasetError::InvalidManifest(format!(
                    "empty genre for {}",
                    row.path
                )));
            }
            let path = PathBuf::from(&row.path);
            let song_id = if row.song_id.is_empty() {
                default_song_id(&genre, &path)
            } else {
                row.song_id
            };
            entries.push(ManifestEntry {
                song_id,
                path,
                genre,
                split: SplitTag::parse(&row.split)?,
            });
        }
        Self::from_entries(root.to_path_buf(), entries)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["song_id", "path", "genre", "split"])
            .expect("in-memory write");
        for e in &self.entries {
            let split = e.split.map(|s| s.to_string()).unwrap_or_default();
            let path = e.path.to_string_lossy().replace('\\', "/");
            w.write_record([
                e.song_id.as_str(),
                path.as_str(),
                e.genre.as_str(),
                split.as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn absolute_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Check that every listed file exists.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for e in &self.entries {
            let p = self.absolute_path(e);
            if !p.is_file() {
                return Err(DatasetError::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn genres(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.genre.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Entries of the bucket's genres, failing on any genre that is absent or
    /// has fewer than two songs.
    pub fn select_bucket(&self, bucket: &BucketSpec) -> Result<Vec<&ManifestEntry>, DatasetError> {
        let counts = self.genres();
        for g in &bucket.genres {
            match counts.get(g.as_str()).copied().unwrap_or(0) {
                0 => {
                    return Err(DatasetError::MissingGenre {
                        bucket: bucket.bucket_id,
                        genre: g.clone(),
                    })
                }
                1 => {
                    return Err(DatasetError::TooFewSongs {
                        bucket: bucket.bucket_id,
                        genre: g.clone(),
                        count: 1,
                    })
                }
                _ => {}
            }
        }
        Ok(self
            .entries
            .iter()
            .filter(|e| bucket.genres.contains(&e.genre))
            .collect())
    }
}

/// Read `root/manifest.csv` when present, otherwise treat each subdirectory
/// as a genre and each `.wav` file inside it as a song.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest = DatasetManifest::from_csv(root, &text)?;
        manifest.validate()?;
        return Ok(manifest);
    }
    let mut entries = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .map(|d| d.map(|d| d.path()).map_err(io_err(root)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let genre = normalize_genre(&name);
        if genre.is_empty() || genre.starts_with('.') {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .map(|d| d.map(|d| d.path()).map_err(io_err(&dir)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|p| p.is_file() && is_wav(p))
            .collect();
        files.sort();
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f).to_path_buf();
            entries.push(ManifestEntry {
                song_id: default_song_id(&genre, &f),
                path: rel,
                genre: genre.clone(),
                split: None,
            });
        }
    }
    DatasetManifest::from_entries(root.to_path_buf(), entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSpec {
    pub bucket_id: u8,
    pub genres: BTreeSet<String>,
}

impl BucketSpec {
    pub fn new<I, S>(bucket_id: u8, genres: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        BucketSpec {
            bucket_id,
            genres: genres
                .into_iter()
                .map(|g| normalize_genre(g.as_ref()))
                .collect(),
        }
    }

    pub fn defaults() -> Vec<BucketSpec> {
        vec![
            BucketSpec::new(1, ["rock", "metal", "pop"]),
            BucketSpec::new(2, ["blues", "jazz", "country"]),
            BucketSpec::new(3, ["reggae", "disco", "hiphop"]),
        ]
    }
}

/// Bucket ids must be unique and no genre may appear in two buckets.
pub fn validate_buckets(buckets: &[BucketSpec]) -> Result<(), DatasetError> {
    let mut ids = BTreeSet::new();
    let mut seen: BTreeMap<&str, u8> = BTreeMap::new();
    for b in buckets {
        if !ids.insert(b.bucket_id) {
            return Err(DatasetError::InvalidBucket(format!(
                "bucket id {} repeated",
                b.bucket_id
            )));
        }
        if b.genres.len() < 2 {
            return Err(DatasetError::InvalidBucket(format!(
                "bucket {} needs at least two genres",
                b.bucket_id
            )));
        }
        for g in &b.genres {
            if let Some(other) = seen.insert(g.as_str(), b.bucket_id) {
                return Err(DatasetError::InvalidBucket(format!(
                    "genre {g} is in buckets {other} and {}",
                    b.bucket_id
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"RIFF").unwrap();
    }

    #[test]
    fn directory_scan_labels_by_folder() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("blues/b1.wav"));
        touch(&dir.path().join("jazz/j1.wav"));
        touch(&dir.path().join("jazz/notes.txt"));
        let m = scan_dataset(dir.path()).unwrap();
        let got: Vec<(&str, &str)> = m
            .entries
            .iter()
            .map(|e| (e.song_id.as_str(), e.genre.as_str()))
            .collect();
        assert_eq!(got, vec![("blues_b1", "blues"), ("jazz_j1", "jazz")]);
    }

    #[test]
    fn empty_root_and_genre_prefixing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_dataset(dir.path()),
            Err(DatasetError::EmptyDataset(_))
        ));
        touch(&dir.path().join("rock/song.wav"));
        touch(&dir.path().join("pop/song.wav"));
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.entries[0].song_id, "pop_song");
        assert_eq!(m.entries[1].song_id, "rock_song");
    }

    #[test]
    fn hiphop_spellings_merge_and_collide() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("Hip-Hop/a.wav"));
        touch(&dir.path().join("hiphop/b.wav"));
        let m = scan_dataset(dir.path()).unwrap();
        assert!(m.entries.iter().all(|e| e.genre == "hiphop"));
        touch(&dir.path().join("hiphop/a.wav"));
        assert!(
            matches!(scan_dataset(dir.path()), Err(DatasetError::DuplicateSongId(id)) if id == "hiphop_a")
        );
    }

    #[test]
    fn manifest_file_overrides_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("audio/x.wav"));
        touch(&dir.path().join("audio/y.wav"));
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            "song_id,path,genre,split\n,audio/x.wav,Blues,train\nsong-y,audio/y.wav,jazz,test\n",
        )
        .unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.entries[0].song_id, "blues_x");
        assert_eq!(m.entries[0].split, Some(SplitTag::Train));
        assert_eq!(m.entries[1].song_id, "song-y");
        let again = DatasetManifest::from_csv(dir.path(), &m.to_csv()).unwrap();
        assert_eq!(again, m);

        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            "song_id,path,genre\n,audio/z.wav,rock\n",
        )
        .unwrap();
        assert!(matches!(
            scan_dataset(dir.path()),
            Err(DatasetError::MissingFile(_))
        ));
    }

    #[test]
    fn bucket_selection_fails_fast() {
        let text = "song_id,path,genre\na,a.wav,rock\nb,b.wav,rock\nc,c.wav,pop\nd,d.wav,pop\ne,e.wav,metal\n";
        let m = DatasetManifest::from_csv(Path::new("."), text).unwrap();
        let err = m.select_bucket(&BucketSpec::defaults()[0]).unwrap_err();
        assert!(matches!(err, DatasetError::TooFewSongs { ref genre, .. } if genre == "metal"));
        let err = m.select_bucket(&BucketSpec::defaults()[1]).unwrap_err();
        assert!(err.to_string().contains("blues"));
        let ok = m
            .select_bucket(&BucketSpec::new(9, ["rock", "POP"]))
            .unwrap();
        assert_eq!(ok.len(), 4);
    }

    #[test]
    fn default_buckets_are_disjoint() {
        validate_buckets(&BucketSpec::defaults()).unwrap();
        let bad = [
            BucketSpec::new(1, ["rock", "pop"]),
            BucketSpec::new(2, ["pop", "jazz"]),
        ];
        assert!(validate_buckets(&bad).is_err());
    }
}
