use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, TimeZone, Utc};
use fastfashion_core::trends::synth::{self, LabelScore, PlantedRole, SyntheticSpec};
use fastfashion_core::trends::{
    self, cluster_with, detect_increasing, ingest, normalized_counts, report_for, Bin, ClusterCount, Corpus,
    DetectorParams, FeedRecord, NormalizedCountSeries, ReportParams, TrendLabel,
};
use fastfashion_core::ImageBuffer;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn no_images(id: &str) -> fastfashion_core::Result<ImageBuffer> {
    Err(fastfashion_core::Error::NotFound(id.into()))
}

fn corpus_of(records: Vec<FeedRecord>) -> Corpus {
    ingest(records, None, no_images).unwrap().0
}

fn score_spec(spec: &SyntheticSpec, seeds: std::ops::Range<u64>) -> BTreeMap<TrendLabel, LabelScore> {
    let params = ReportParams::default();
    let mut total: BTreeMap<TrendLabel, LabelScore> = BTreeMap::new();
    for seed in seeds {
        let planted = synth::generate(spec, seed);
        let corpus = corpus_of(planted.records.clone());
        let assignment = cluster_with(&corpus, &params.clusters, seed).unwrap();
        assert_eq!(assignment.k(), planted.roles.len(), "seed {seed}: k chosen by silhouette");
        let report = report_for(&corpus, &assignment, &params, seed).unwrap();
        for (label, s) in synth::score_report(&planted, &corpus, &assignment, &report) {
            total.entry(label).or_default().merge(&s);
        }
    }
    total
}

#[test]
fn planted_labels_recovered_over_twenty_seeds() {
    let scores = score_spec(&SyntheticSpec::default(), 0..20);
    for (label, s) in &scores {
        assert!(s.precision() >= 0.95 && s.recall() >= 0.95, "{label:?}: {s:?}");
    }
    assert_eq!(scores[&TrendLabel::Increasing].planted, 20);
}

#[test]
fn quirky_cluster_detected_over_twenty_seeds() {
    let scores = score_spec(&SyntheticSpec::quirky(), 100..120);
    let a = scores[&TrendLabel::Anomalous];
    assert_eq!(a.planted, 20);
    assert!(a.recovered >= 19, "{a:?}");
    assert!(a.precision() >= 0.95, "{a:?}");
}

fn series(values: &[f64]) -> NormalizedCountSeries {
    let t0 = Utc.with_ymd_and_hms(2020, 1, 6, 0, 0, 0).unwrap();
    NormalizedCountSeries {
        bins: values
            .iter()
            .enumerate()
            .map(|(i, v)| Bin { start: t0 + Duration::days(7 * i as i64), value: *v })
            .collect(),
    }
}

#[test]
fn noisy_linear_growth_is_increasing() {
    let params = DetectorParams::default();
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let growing: Vec<f64> = (0..12).map(|t| 0.05 + 0.05 * t as f64 + noise.sample(&mut rng)).collect();
        let flat: Vec<f64> = (0..12).map(|_| 0.3 + noise.sample(&mut rng)).collect();
        let map = BTreeMap::from([(0, series(&growing)), (1, series(&flat))]);
        let got = detect_increasing(&map, &params);
        if got == BTreeSet::from([0]) {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn bin_shares_sum_to_one() {
    let planted = synth::generate(&SyntheticSpec::default(), 3);
    let corpus = corpus_of(planted.records.clone());
    let a = trends::cluster(&corpus, 6, 3).unwrap();
    let series = normalized_counts(&a, &corpus, Duration::days(7)).unwrap();
    let nbins = series[&0].bins.len();
    assert_eq!(nbins, 12);
    for b in 0..nbins {
        let s: f64 = series.values().map(|s| s.bins[b].value).sum();
        assert!((s - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn report_is_reproducible_and_serializes() {
    let planted = synth::generate(&SyntheticSpec::default(), 8);
    let corpus = corpus_of(planted.records);
    let params = ReportParams { clusters: ClusterCount::Fixed(6), ..ReportParams::default() };
    let a = trends::report(&corpus, &params, 1).unwrap();
    let b = trends::report(&corpus, &params, 1).unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(v["clusters"].as_array().unwrap().len(), 6);
    assert!(a.clusters.iter().all(|c| c.exemplars.len() == 5));
}

#[test]
fn roles_cover_expected_labels() {
    let p = synth::generate(&SyntheticSpec::quirky(), 0);
    assert!(p.roles.contains(&PlantedRole::Quirky));
    assert!(!p.roles.contains(&PlantedRole::Increasing));
}

fn arb_records() -> impl Strategy<Value = Vec<(i64, Vec<f64>)>> {
    prop::collection::vec((0i64..60, prop::collection::vec(-1.0f64..1.0, 3)), 4..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn shares_partition_every_bin(rows in arb_records(), k in 2usize..4, seed in any::<u64>()) {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let records: Vec<FeedRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (d, mut e))| {
                e[0] += 0.01;
                FeedRecord { id: format!("r{i}"), timestamp: t0 + Duration::days(d), image: String::new(), embedding: Some(e) }
            })
            .collect();
        let corpus = corpus_of(records);
        prop_assume!(k <= corpus.len());
        let a = trends::cluster(&corpus, k, seed).unwrap();
        prop_assert!(a.labels.iter().all(|l| *l < k));
        let series = normalized_counts(&a, &corpus, Duration::days(7)).unwrap();
        let nbins = series[&0].bins.len();
        for b in 0..nbins {
            let s: f64 = series.values().map(|s| s.bins[b].value).sum();
            prop_assert!(s == 0.0 || (s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn embeddings_are_unit_after_ingest(rows in arb_records()) {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let records: Vec<FeedRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (d, mut e))| {
                e[1] += 2.0;
                FeedRecord { id: format!("r{i}"), timestamp: t0 + Duration::days(d), image: String::new(), embedding: Some(e) }
            })
            .collect();
        let corpus = corpus_of(records);
        for r in corpus.records() {
            let n = r.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
        prop_assert!(corpus.records().windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn core_set_is_never_empty(sizes in prop::collection::vec(1usize..500, 1..15), q in 0.01f64..1.0) {
        let map: BTreeMap<usize, usize> = sizes.iter().copied().enumerate().collect();
        let core = trends::detect_core(&map, q);
        prop_assert!(!core.is_empty());
        let max = *sizes.iter().max().unwrap();
        prop_assert!(core.iter().any(|id| map[id] == max));
    }
}
