use std::collections::HashMap;

use mmdr_core::corpus::{Document, Domain};
use mmdr_core::embeddings::{EmbeddingStore, StoreKind};
use mmdr_core::evaluation::{
    evaluate, full_collection_pool, hit_at_k, mrr_at_10, ndcg_at_10, split_only_pool, EvalOptions, MetricRow, QRels,
};
use mmdr_core::fusion::FusionParams;
use mmdr_core::retrieval::{
    build_flat, build_hnsw_from_rows, index_bytes, read_index_from_bytes, search_flat, search_hnsw, AnyIndex,
    FlatIndex, HnswParams,
};
use mmdr_core::synth::{generate, Signal, SynthConfig};
use mmdr_core::train::{train, AlignedData, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<String>, Vec<Vec<f32>>) {
    let ids = (0..n).map(|i| format!("r{i:04}")).collect();
    let rows = (0..n)
        .map(|_| loop {
            let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().any(|x| x.abs() > 1e-3) {
                break v;
            }
        })
        .collect();
    (ids, rows)
}

fn pairs<'a>(ids: &'a [String], rows: &'a [Vec<f32>]) -> impl Iterator<Item = (&'a str, &'a [f32])> {
    ids.iter().map(String::as_str).zip(rows.iter().map(Vec::as_slice))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exhaustive_beam_equals_flat(seed in any::<u64>(), n in 1usize..120, d in 1usize..12, m in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ids, rows) = random_rows(&mut rng, n, d);
        let params = HnswParams { m_links: m, ef_construction: 20, ef_search: n };
        let hnsw = build_hnsw_from_rows(d, pairs(&ids, &rows), params, seed).unwrap();
        let flat = FlatIndex::from_rows(d, pairs(&ids, &rows)).unwrap();
        let (_, qs) = random_rows(&mut rng, 5, d);
        for q in &qs {
            let k = rng.gen_range(1..=n);
            prop_assert_eq!(search_hnsw(&hnsw, q, k, n).unwrap(), search_flat(&flat, q, k).unwrap());
        }
    }

    #[test]
    fn rescaling_by_powers_of_two_keeps_rankings(seed in any::<u64>(), n in 1usize..80, d in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ids, rows) = random_rows(&mut rng, n, d);
        let scaled: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| {
                let c = 2f32.powi(rng.gen_range(-10..=10));
                r.iter().map(|x| x * c).collect()
            })
            .collect();
        let a = FlatIndex::from_rows(d, pairs(&ids, &rows)).unwrap();
        let b = FlatIndex::from_rows(d, pairs(&ids, &scaled)).unwrap();
        let (_, q) = random_rows(&mut rng, 1, d);
        let q2: Vec<f32> = q[0].iter().map(|x| x * 64.0).collect();
        prop_assert_eq!(search_flat(&a, &q[0], n).unwrap(), search_flat(&b, &q2, n).unwrap());
    }

    #[test]
    fn metrics_ignore_query_order_and_are_ordered(
        ranks in prop::collection::vec(prop::option::of(1usize..40), 1..60),
        rot in 0usize..60,
    ) {
        let mut shuffled = ranks.clone();
        let r = rot % ranks.len();
        shuffled.rotate_left(r);
        prop_assert!((mrr_at_10(&ranks).unwrap() - mrr_at_10(&shuffled).unwrap()).abs() <= 1e-12);
        prop_assert!((ndcg_at_10(&ranks).unwrap() - ndcg_at_10(&shuffled).unwrap()).abs() <= 1e-12);
        let row = MetricRow::from_ranks("full", &ranks).unwrap();
        prop_assert!(row.is_consistent());
        prop_assert!(hit_at_k(&ranks, 1) <= row.mrr10 + 1e-12);
        prop_assert!(row.mrr10 <= row.ndcg10 + 1e-12 && row.ndcg10 <= row.hit10 + 1e-12);
        prop_assert!(row.hit1 <= row.hit3 && row.hit3 <= row.hit10);
    }
}

fn doc(id: &str, domain: Domain) -> Document {
    Document {
        id: id.into(),
        domain,
        texts: vec!["t".into()],
        images: vec!["i.png".into()],
        queries: vec!["q".into()],
    }
}

/// A larger pool can only push the relevant document down.
#[test]
fn growing_the_pool_never_improves_a_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 6;
    let docs: Vec<Document> = (0..40).map(|i| doc(&format!("p{i:02}"), Domain::ALL[i % 3])).collect();
    let (_, rows) = random_rows(&mut rng, 40, d);
    let mut queries = EmbeddingStore::new(StoreKind::Query, d, false);
    for (k, d) in docs[30..].iter().enumerate() {
        let noisy: Vec<f32> = rows[30 + k].iter().map(|x| x + rng.gen_range(-0.6..0.6)).collect();
        queries.push(d.query_id(0), &noisy).unwrap();
    }
    let qrels = QRels::from_documents(&docs[30..]).unwrap();
    let domains: HashMap<String, Domain> = docs.iter().map(|d| (d.id.clone(), d.domain)).collect();
    let mut previous: Option<Vec<Option<usize>>> = None;
    for start in [30, 20, 10, 0] {
        let ids: Vec<String> = docs[start..].iter().map(|d| d.id.clone()).collect();
        let index = FlatIndex::from_rows(d, pairs(&ids, &rows[start..])).unwrap();
        let report = evaluate(&queries, &index, &qrels, &domains, &EvalOptions::default()).unwrap();
        assert_eq!(report.pool_size, 40 - start);
        let ranks: Vec<Option<usize>> = report.ranks.iter().map(|r| r.rank).collect();
        if let Some(prev) = &previous {
            for (now, before) in ranks.iter().zip(prev) {
                assert!(now.unwrap() >= before.unwrap());
            }
        }
        previous = Some(ranks);
    }
}

#[test]
fn flat_and_exhaustive_hnsw_give_identical_reports() {
    let c = generate(&SynthConfig { docs: 90, dim: 12, seed: 9, ..SynthConfig::default() }).unwrap();
    let all: Vec<Document> = c.train.iter().chain(&c.valid).chain(&c.test).cloned().collect();
    let data = AlignedData::from_stores(&all, &c.text, &c.image, None).unwrap();
    let fused = data.fused_store(&FusionParams::weighted_sum()).unwrap();
    let flat = AnyIndex::Flat(build_flat(&fused).unwrap());
    let params = HnswParams { m_links: 4, ef_construction: 16, ef_search: fused.len() };
    let hnsw = AnyIndex::Hnsw(build_hnsw_from_rows(fused.dim(), fused.iter(), params, 1).unwrap());
    let pool = full_collection_pool(&c.train, &c.valid, &c.test).unwrap();
    let qrels = QRels::from_documents(&c.test).unwrap();
    let opts = EvalOptions::default();
    let a = evaluate(&c.query, &flat, &qrels, &pool.domain_map(), &opts).unwrap();
    let b = evaluate(&c.query, &hnsw, &qrels, &pool.domain_map(), &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.pool_size, 90);

    // The index survives serialization with identical reports.
    let back = read_index_from_bytes(&index_bytes(&hnsw)).unwrap();
    assert_eq!(evaluate(&c.query, &back, &qrels, &pool.domain_map(), &opts).unwrap(), b);

    // Split-only pools are strictly smaller and rank no worse.
    let split = split_only_pool(&c.test, mmdr_core::corpus::Split::Test).unwrap();
    let test_ids: Vec<String> = split.doc_ids.clone();
    let test_index = FlatIndex::from_rows(
        fused.dim(),
        test_ids.iter().map(|id| (id.as_str(), fused.get(id).unwrap())),
    )
    .unwrap();
    let s = evaluate(&c.query, &test_index, &qrels, &split.domain_map(), &opts).unwrap();
    assert_eq!(s.pool_size, c.test.len());
    assert!(s.full().mrr10 >= a.full().mrr10);
}

fn aligned(signal: Signal, seed: u64) -> (AlignedData, AlignedData) {
    let c = generate(&SynthConfig { signal, seed, ..SynthConfig::default() }).unwrap();
    (
        AlignedData::from_stores(&c.train, &c.text, &c.image, Some(&c.query)).unwrap(),
        AlignedData::from_stores(&c.valid, &c.text, &c.image, Some(&c.query)).unwrap(),
    )
}

/// Independent oracle for the direction of the fusion weight: with all
/// signal in the text channel, validation MRR over a fixed alpha grid does
/// not decrease as alpha moves toward the text side; the mirror holds for
/// the image channel.
#[test]
fn alpha_sweep_is_monotone_toward_the_signal() {
    for (signal, toward_text) in [(Signal::Text, true), (Signal::Image, false)] {
        let (_, valid) = aligned(signal, 31);
        let curve: Vec<f64> = (0..=10)
            .map(|k| {
                let alpha = k as f64 / 10.0;
                valid.mrr10(&FusionParams::weighted_sum().with_alpha(alpha)).unwrap()
            })
            .collect();
        let ordered: Vec<f64> = if toward_text { curve.clone() } else { curve.iter().rev().copied().collect() };
        assert!(ordered.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{signal:?}: {curve:?}");
        assert!(ordered[10] - ordered[0] > 0.5, "{signal:?}: {curve:?}");
    }
}

#[test]
fn training_is_reproducible_and_logs_every_epoch() {
    let (tr, va) = aligned(Signal::Text, 32);
    let cfg = TrainConfig { max_epochs: 15, seed: 4, ..TrainConfig::default() };
    let a = train(&tr, &va, &cfg).unwrap();
    let b = train(&tr, &va, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    a.log.write_jsonl(&mut la).unwrap();
    b.log.write_jsonl(&mut lb).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.log.epochs.len(), 15);
    let other = train(&tr, &va, &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(other.params, a.params);
}

#[test]
fn patience_stops_training_early() {
    let (tr, va) = aligned(Signal::Text, 33);
    // A negligible learning rate leaves validation flat, and flat epochs are
    // not drops, so the run reaches the epoch limit.
    let flat = train(&tr, &va, &TrainConfig { lr: 1e-12, max_epochs: 12, patience_epochs: 2, ..TrainConfig::default() })
        .unwrap();
    assert_eq!(flat.log.epochs.len(), 12);
    assert!(!flat.log.stopped_early);

    let wild = train(
        &tr,
        &va,
        &TrainConfig {
            lr: 5.0,
            init_alpha: 0.99,
            weight_decay: 0.0,
            max_epochs: 200,
            patience_epochs: 3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    if wild.log.stopped_early {
        assert!(wild.log.epochs.len() < 200);
        assert!(wild.log.epochs.len() >= wild.log.best_epoch + 3);
    }
}
