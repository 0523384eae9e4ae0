//! Cross-module invariants checked on generated inputs.

use proptest::prelude::*;
use rand::Rng;

use genretopic::audio::{resample, segment_clips, AudioClip, AudioSignal};
use genretopic::eval::{split_indices, train_classifier, SplitSpec, SvmConfig};
use genretopic::interpret::{
    progressive_timeline, GenreDistribution, GenreTimeline, TimelineEntry,
};
use genretopic::lda::{
    generate_corpus, infer_batch, infer_theta, term_topic_posterior, train_gibbs, GenerateConfig,
    GibbsConfig,
};
use genretopic::mfcc::{mfcc_clip, MfccConfig};
use genretopic::par::Execution;
use genretopic::seed::{derive_seed, rng_from_seed};
use genretopic::viz::{
    doughnut_svg, export_report_json, parse_report_json, timeline_svg, Palette, Report,
    GTZAN_GENRES,
};
use genretopic::vocab::{assign_word, kmeans_fit_with, Corpus, Document, KMeansConfig, Vocabulary};

fn random_signal(seed: u64, len: usize, rate: u32) -> AudioSignal {
    let mut rng = rng_from_seed(seed);
    AudioSignal::mono(
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        rate,
    )
}

fn simplex(v: &[f64]) -> bool {
    (v.iter().sum::<f64>() - 1.0).abs() < 1e-9 && v.iter().all(|x| *x >= 0.0)
}

fn small_synth(seed: u64, k: usize, v: usize) -> genretopic::lda::SyntheticCorpus {
    generate_corpus(&GenerateConfig {
        n_topics: k,
        vocab_size: v,
        alpha: 0.5,
        eta: 0.3,
        n_docs: 12,
        doc_len: 20,
        seed,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clips_concatenate_to_a_prefix(seed in 0u64..1000, len in 50usize..3000, clip_ms in 1u32..200) {
        let sig = random_signal(seed, len, 8000);
        let secs = clip_ms as f64 / 1000.0;
        match segment_clips(&sig, "s", secs) {
            Ok(clips) => {
                let joined: Vec<f64> = clips.iter().flat_map(|c| c.samples.iter().copied()).collect();
                prop_assert_eq!(&sig.samples[..joined.len()], &joined[..]);
                prop_assert!(sig.samples.len() - joined.len() < clips[0].samples.len());
                for (i, c) in clips.iter().enumerate() {
                    prop_assert_eq!(c.clip_index, i);
                    prop_assert_eq!(c.start_time, i as f64 * secs);
                }
            }
            Err(_) => prop_assert!((len as f64) < (secs * 8000.0).round()),
        }
    }

    #[test]
    fn resampling_at_the_same_rate_is_identity(seed in 0u64..1000, len in 1usize..500) {
        let sig = random_signal(seed, len, 16000);
        prop_assert_eq!(resample(&sig, 16000).unwrap(), sig);
    }

    #[test]
    fn amplitude_scaling_moves_only_the_first_coefficient(seed in 0u64..200, scale in 0.1f64..4.0) {
        let sig = random_signal(seed, 2205, 22050);
        let clip = |s: f64| AudioClip {
            song_id: "p".into(),
            clip_index: 0,
            start_time: 0.0,
            samples: sig.samples.iter().map(|x| 0.2 * s * x).collect(),
            sample_rate: 22050,
        };
        let cfg = MfccConfig::default();
        let a = mfcc_clip(&clip(1.0), &cfg).unwrap().values;
        let b = mfcc_clip(&clip(scale), &cfg).unwrap().values;
        prop_assert_eq!(a.len(), 13);
        let shift = 2.0 * scale.ln() * 40f64.sqrt();
        prop_assert!((b[0] - a[0] - shift).abs() < 1e-9);
        for c in 1..13 {
            prop_assert!((a[c] - b[c]).abs() < 1e-9, "coefficient {} moved", c);
        }
    }

    #[test]
    fn word_assignment_is_an_exhaustive_scan(seed in 0u64..1000, v in 1usize..8, dim in 1usize..5) {
        let mut rng = rng_from_seed(seed);
        let centroids: Vec<Vec<f64>> = (0..v).map(|_| (0..dim).map(|_| rng.random_range(-3i32..3) as f64).collect()).collect();
        let vocab = Vocabulary::new(centroids.clone(), seed).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3i32..3) as f64).collect();
            let d = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let mut best = 0;
            for (i, c) in centroids.iter().enumerate() {
                if d(c) < d(&centroids[best]) {
                    best = i;
                }
            }
            prop_assert_eq!(assign_word(&vocab, &x).unwrap(), best);
        }
    }

    #[test]
    fn kmeans_is_reproducible(seed in 0u64..1000, n in 4usize..80) {
        let mut rng = rng_from_seed(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let cfg = KMeansConfig::new(3.min(n), seed);
        let a = kmeans_fit_with(&pts, &cfg, Execution::Sequential).unwrap();
        let b = kmeans_fit_with(&pts, &cfg, Execution::default()).unwrap();
        prop_assert_eq!(a.vocabulary.to_json(), b.vocabulary.to_json());
        prop_assert!(a.assignments.iter().all(|&w| w < 3));
    }

    #[test]
    fn lda_outputs_are_simplices(seed in 0u64..300, k in 1usize..5, v in 1usize..7) {
        let synth = small_synth(seed, k, v);
        let out = train_gibbs(&synth.corpus, &GibbsConfig::new(k, 20, seed)).unwrap();
        for row in out.model.beta.iter().chain(&out.doc_topics.theta) {
            prop_assert!(simplex(row));
        }
        prop_assert!(simplex(&out.model.topic_prior));
        for w in 0..v {
            prop_assert!(simplex(&term_topic_posterior(&out.model, w).unwrap()));
        }
        for d in &synth.corpus.documents {
            prop_assert!(simplex(&infer_theta(&out.model, &d.tokens, 10, seed).unwrap()));
        }
    }

    #[test]
    fn fold_in_ignores_batch_order(seed in 0u64..300) {
        let synth = small_synth(seed, 3, 5);
        let model = train_gibbs(&synth.corpus, &GibbsConfig::new(3, 20, seed)).unwrap().model;
        let docs = &synth.corpus.documents;
        let forward = infer_batch(&model, docs, 15, 77, Execution::default()).unwrap();
        let mut reversed: Vec<Document> = docs.clone();
        reversed.reverse();
        let mut backward = infer_batch(&model, &reversed, 15, 77, Execution::Sequential).unwrap();
        backward.reverse();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn stratified_split_partitions(seed in 0u64..1000, sizes in proptest::collection::vec(2usize..15, 1..5), frac in 0.05f64..0.95) {
        let mut documents = Vec::new();
        for (g, n) in sizes.iter().enumerate() {
            for i in 0..*n {
                documents.push(Document { song_id: format!("g{g}_{i:02}"), genre: format!("g{g}"), tokens: vec![0] });
            }
        }
        let corpus = Corpus {
            genres: (0..sizes.len()).map(|g| format!("g{g}")).collect(),
            documents,
            vocab_size: 1,
            bucket_id: 1,
        };
        let spec = SplitSpec { train_fraction: frac, seed, stratified: true };
        let s = split_indices(&corpus, &spec).unwrap();
        prop_assert_eq!(&s, &split_indices(&corpus, &spec).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..corpus.documents.len()).collect::<Vec<_>>());
        for g in &corpus.genres {
            let count = |idx: &[usize]| idx.iter().filter(|&&i| &corpus.documents[i].genre == g).count();
            prop_assert!(count(&s.train) >= 1 && count(&s.test) >= 1);
        }
    }

    #[test]
    fn classifier_weights_match_feature_dimension(seed in 0u64..300, k in 2usize..6) {
        let mut rng = rng_from_seed(seed);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| {
            let mut v: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        }).collect();
        let ys: Vec<String> = (0..30).map(|i| format!("c{}", i % 3)).collect();
        let cfg = SvmConfig { seed, ..SvmConfig::default() };
        let a = train_classifier(&xs, &ys, &cfg).unwrap();
        prop_assert!(a.weights.iter().all(|w| w.len() == k));
        prop_assert_eq!(a, train_classifier(&xs, &ys, &cfg).unwrap());
    }

    #[test]
    fn timelines_have_one_entry_per_window(seed in 0u64..500, n in 1usize..60, window in 1usize..15) {
        let mut rng = rng_from_seed(seed);
        let terms: Vec<GenreDistribution> = (0..4)
            .map(|_| GenreDistribution::from_weights([("a", rng.random::<f64>() + 0.01), ("b", rng.random::<f64>())]).unwrap())
            .collect();
        let doc = Document { song_id: "s".into(), genre: "a".into(), tokens: (0..n).map(|_| rng.random_range(0..4)).collect() };
        match progressive_timeline(&doc, 0.1, &terms, window) {
            Ok(tl) => {
                prop_assert_eq!(tl.entries.len(), n - window + 1);
                prop_assert!(tl.entries.windows(2).all(|w| w[0].start_time < w[1].start_time));
                prop_assert!(tl.entries.iter().all(|e| (e.distribution.total() - 1.0).abs() < 1e-9));
            }
            Err(_) => prop_assert!(window > n),
        }
    }

    #[test]
    fn charts_and_report_hold_their_invariants(seed in 0u64..500, n in 1usize..10, steps in 2usize..30) {
        let mut rng = rng_from_seed(seed);
        let palette = Palette::gtzan();
        let mut dist = || {
            GenreDistribution::from_weights(GTZAN_GENRES.iter().take(n).map(|g| (*g, rng.random::<f64>() + 1e-6))).unwrap()
        };
        let d = dist();
        let svg = doughnut_svg(&d, &palette, 200).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let total: f64 = doc.descendants().filter_map(|e| e.attribute("data-sweep")).map(|s| s.parse::<f64>().unwrap()).sum();
        prop_assert!((total - 360.0).abs() < 1e-6);

        let tl = GenreTimeline {
            entries: (0..steps).map(|i| TimelineEntry { start_time: i as f64 * 0.1, distribution: dist() }).collect(),
        };
        roxmltree::Document::parse(&timeline_svg(&tl, &palette, 600, 240).unwrap()).unwrap();

        let docs = (0..3).map(|i| (format!("song{i}"), dist())).collect();
        let topics: Vec<GenreDistribution> = (0..3).map(|_| dist()).collect();
        let report = Report::new(1, &topics, docs, &topics, None);
        let text = export_report_json(&report);
        let back = parse_report_json(&text).unwrap();
        for (a, b) in report.topics.values().zip(back.topics.values()) {
            for ((ga, pa), (gb, pb)) in a.iter().zip(b.iter()) {
                prop_assert_eq!(ga, gb);
                prop_assert!((pa - pb).abs() < 1e-9);
            }
        }
        prop_assert_eq!(text, export_report_json(&report));
    }
}

#[test]
fn derived_seeds_differ_by_label() {
    assert_ne!(
        derive_seed(42, "bucket1/codebook"),
        derive_seed(42, "bucket2/codebook")
    );
    assert_eq!(derive_seed(42, "x"), derive_seed(42, "x"));
}
