//! Topic-count sweeps over generated corpora.

use genretopic::eval::{
    evaluate_cell, sweep_topic_counts, BucketInput, CellConfig, CellSeeds, SplitSpec,
};
use genretopic::lda::{generate_corpus, GenerateConfig};
use genretopic::par::Execution;
use genretopic::vocab::Corpus;

/// A corpus whose three genres each draw from their own topic mixture, so
/// thetas carry label information.
fn bucket(bucket_id: u8, seed: u64) -> Corpus {
    let mut s = generate_corpus(&GenerateConfig {
        n_topics: 3,
        vocab_size: 12,
        alpha: 0.1,
        eta: 0.2,
        n_docs: 30,
        doc_len: 60,
        seed,
    })
    .unwrap();
    for (d, theta) in s.corpus.documents.iter_mut().zip(&s.doc_topics.theta) {
        let top = (0..3)
            .max_by(|&a, &b| theta[a].total_cmp(&theta[b]))
            .unwrap();
        d.genre = ["blues", "country", "jazz"][top].to_string();
    }
    s.corpus.genres = s.corpus.documents.iter().map(|d| d.genre.clone()).collect();
    s.corpus.bucket_id = bucket_id;
    s.corpus
}

fn quick() -> CellConfig {
    CellConfig {
        lda_iters: 60,
        infer_iters: 30,
        ..CellConfig::default()
    }
}

#[test]
fn sweep_fills_a_three_by_four_grid() {
    let buckets: Vec<BucketInput> = (1..=3)
        .map(|b| BucketInput {
            corpus: bucket(b, 100 + b as u64),
            split: None,
        })
        .collect();
    let run = |exec| {
        sweep_topic_counts(
            &buckets,
            &[2, 3, 4, 5],
            &SplitSpec::default(),
            &quick(),
            42,
            exec,
        )
    };
    let (table, outcomes) = run(Execution::default());
    assert_eq!(table.rows.len(), 3);
    for (row, cells) in table.rows.iter().zip(&outcomes) {
        assert_eq!(row.cells.len(), 4);
        assert_eq!(cells.len(), 4);
        for c in &row.cells {
            let a = c.accuracy.expect("cell ran");
            assert!((0.0..=1.0).contains(&a));
        }
    }
    let csv = table.to_csv();
    assert!(csv.starts_with("bucket,2,3,4,5\n1,"));
    let (again, _) = run(Execution::Sequential);
    assert_eq!(table, again);
}

#[test]
fn failing_cells_do_not_stop_the_sweep() {
    let good = BucketInput {
        corpus: bucket(1, 7),
        split: None,
    };
    let mut single = bucket(2, 8);
    for d in &mut single.documents {
        d.genre = "blues".into();
    }
    single.genres = ["blues".to_string()].into();
    let bad = BucketInput {
        corpus: single,
        split: None,
    };
    let (table, _) = sweep_topic_counts(
        &[good, bad],
        &[2, 3],
        &SplitSpec::default(),
        &quick(),
        1,
        Execution::default(),
    );
    assert!(table.rows[0].cells.iter().all(|c| c.accuracy.is_some()));
    assert!(table.rows[1]
        .cells
        .iter()
        .all(|c| c.accuracy.is_none() && c.error.is_some()));
}

#[test]
fn test_documents_never_reach_training_counts() {
    let corpus = bucket(1, 21);
    let train = corpus.subset(&(0..24).collect::<Vec<_>>());
    let test_a = corpus.subset(&(24..30).collect::<Vec<_>>());
    let mut test_b = test_a.clone();
    for d in &mut test_b.documents {
        d.tokens.iter_mut().for_each(|w| *w = (*w + 5) % 12);
    }
    let seeds = CellSeeds::derive(42, 1, 3);
    let a = evaluate_cell(&train, &test_a, 3, &quick(), seeds, Execution::default()).unwrap();
    let b = evaluate_cell(&train, &test_b, 3, &quick(), seeds, Execution::default()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.train_theta, b.train_theta);
    assert_eq!(a.classifier, b.classifier);
}
