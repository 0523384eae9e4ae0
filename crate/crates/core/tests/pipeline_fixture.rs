//! The full pipeline over the generated nine-song fixture.

use std::collections::BTreeMap;
use std::path::Path;

use genretopic::dataset::{scan_dataset, BucketSpec, DatasetError};
use genretopic::eval::AccuracyTable;
use genretopic::lda::LdaModel;
use genretopic::par::Execution;
use genretopic::pipeline::{
    bucket_dir, run_all, run_bucket, PipelineError, Profiles, RunConfig, Stage, ThetaSet,
};
use genretopic::synth::{write_fixture, FixtureSpec};

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &FixtureSpec::default()).unwrap();
    dir
}

fn config(out: &Path) -> RunConfig {
    RunConfig {
        out: out.to_path_buf(),
        iters: 200,
        infer_iters: 50,
        ..RunConfig::default()
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn assert_simplex(v: &[f64], what: &str) {
    let s: f64 = v.iter().sum();
    assert!((s - 1.0).abs() < 1e-9, "{what} sums to {s}");
    assert!(v.iter().all(|x| *x >= 0.0), "{what} has a negative entry");
}

#[test]
fn fixture_run_produces_a_full_row_and_valid_simplices() {
    let data = fixture();
    let out = tempfile::tempdir().unwrap();
    let manifest = scan_dataset(data.path()).unwrap();
    let cfg = config(out.path());
    let summary = run_all(&manifest, &cfg, &[1], Stage::Viz, Execution::default()).unwrap();
    let table = summary.accuracy.unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].cells.len(), 4);
    for cell in &table.rows[0].cells {
        let a = cell.accuracy.expect("cell succeeded");
        assert!((0.0..=1.0).contains(&a));
    }
    let csv = std::fs::read_to_string(out.path().join("accuracy.csv")).unwrap();
    assert_eq!(AccuracyTable::from_csv(&csv).unwrap().rows.len(), 1);

    let b = bucket_dir(out.path(), 1);
    for k in &cfg.topics {
        let model = LdaModel::from_json(
            &std::fs::read_to_string(b.join(format!("model_K{k}.json"))).unwrap(),
        )
        .unwrap();
        for row in &model.beta {
            assert_simplex(row, "beta row");
        }
        let thetas: ThetaSet =
            serde_json::from_slice(&std::fs::read(b.join(format!("thetas_K{k}.json"))).unwrap())
                .unwrap();
        assert_eq!(thetas.documents.len(), 9);
        for r in &thetas.documents {
            assert_simplex(&r.theta, "theta");
        }
    }
    let profiles: Profiles =
        serde_json::from_slice(&std::fs::read(b.join("profiles.json")).unwrap()).unwrap();
    let all = profiles
        .words
        .iter()
        .flatten()
        .chain(&profiles.topics)
        .chain(&profiles.terms)
        .chain(profiles.documents.values())
        .chain(
            profiles
                .timelines
                .values()
                .flat_map(|t| t.entries.iter().map(|e| &e.distribution)),
        );
    for d in all {
        assert!((d.total() - 1.0).abs() < 1e-9);
    }
    for i in 0..4 {
        let svg = std::fs::read_to_string(b.join(format!("topic{i}.svg"))).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }
    assert!(b.join("timeline_rock_song00.svg").is_file());
    assert!(b.join("report.json").is_file());
}

#[test]
fn deleting_downstream_artifacts_reuses_upstream() {
    let data = fixture();
    let out = tempfile::tempdir().unwrap();
    let manifest = scan_dataset(data.path()).unwrap();
    let cfg = config(out.path());
    let bucket = &cfg.buckets[0];
    let first = run_bucket(&manifest, bucket, &cfg, Stage::Viz, Execution::default()).unwrap();
    assert_eq!(first.computed, Stage::ALL.to_vec());
    let before = snapshot(out.path());

    let b = bucket_dir(out.path(), 1);
    std::fs::remove_file(b.join("model_K3.json")).unwrap();
    std::fs::remove_file(b.join("report.json")).unwrap();
    let second = run_bucket(&manifest, bucket, &cfg, Stage::Viz, Execution::default()).unwrap();
    assert_eq!(second.reused, vec![Stage::Features, Stage::Vocab]);
    assert_eq!(snapshot(out.path()), before);

    let third = run_bucket(&manifest, bucket, &cfg, Stage::Viz, Execution::default()).unwrap();
    assert!(third.computed.is_empty());
}

#[test]
fn execution_modes_agree() {
    let data = fixture();
    let manifest = scan_dataset(data.path()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(
        &manifest,
        &config(a.path()),
        &[1],
        Stage::Viz,
        Execution::Sequential,
    )
    .unwrap();
    run_all(
        &manifest,
        &config(b.path()),
        &[1],
        Stage::Viz,
        Execution::default(),
    )
    .unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn missing_genre_fails_before_processing() {
    let data = fixture();
    let out = tempfile::tempdir().unwrap();
    let manifest = scan_dataset(data.path()).unwrap();
    let cfg = config(out.path());
    let err = run_all(&manifest, &cfg, &[], Stage::Viz, Execution::default()).unwrap_err();
    assert!(
        matches!(&err, PipelineError::Dataset(DatasetError::MissingGenre { genre, .. }) if genre == "blues"),
        "{err}"
    );
    assert!(!bucket_dir(out.path(), 1).exists());
}

#[test]
fn failed_stage_leaves_no_partial_outputs() {
    let data = fixture();
    let out = tempfile::tempdir().unwrap();
    let manifest = scan_dataset(data.path()).unwrap();
    let ok = config(out.path());
    run_bucket(
        &manifest,
        &ok.buckets[0],
        &ok,
        Stage::Viz,
        Execution::default(),
    )
    .unwrap();

    // more codebook words than clips makes the codebook stage fail
    let bad = RunConfig {
        codebook_size: 10_000,
        ..ok.clone()
    };
    let err = run_bucket(
        &manifest,
        &bad.buckets[0],
        &bad,
        Stage::Viz,
        Execution::default(),
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::Stage {
                stage: Stage::Vocab,
                ..
            }
        ),
        "{err}"
    );
    let b = bucket_dir(out.path(), 1);
    let left: Vec<String> = std::fs::read_dir(&b)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let mut left = left;
    left.sort();
    assert_eq!(left, vec!["checkpoints.json", "features.json"]);
}

#[test]
fn bucket_with_custom_genres() {
    let data = tempfile::tempdir().unwrap();
    write_fixture(
        data.path(),
        &FixtureSpec {
            genres: vec!["jazz".into(), "polka".into()],
            songs_per_genre: 2,
            seconds: 1.0,
            ..FixtureSpec::default()
        },
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        buckets: vec![BucketSpec::new(5, ["jazz", "polka"])],
        topics: vec![2],
        interpret_topics: 2,
        ..config(out.path())
    };
    let manifest = scan_dataset(data.path()).unwrap();
    let s = run_all(&manifest, &cfg, &[], Stage::Viz, Execution::default()).unwrap();
    assert_eq!(s.accuracy.unwrap().rows[0].bucket_id, 5);
}
