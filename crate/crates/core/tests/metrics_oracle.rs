mod support;

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::brute_force_ap;
use xfdreid::datamodel::{Domain, Split};
use xfdreid::evaluation::{
    average_precision, build_protocol_sets, cmc, embed_dataset_with, evaluate, overall_map, Protocol, ProtocolResult,
    QueryRanking, CMC_RANKS,
};
use xfdreid::pooling::{AttentionPoolParams, NeckParams, PoolingMode};
use xfdreid::retrieval::{rank_lists, DistanceMatrix, DistanceStage, RerankParams};
use xfdreid::synthfix::{generate, FixtureConfig};
use xfdreid::Error;

struct Instance {
    distances: Vec<f64>,
    ids: Vec<u32>,
    junk: Vec<bool>,
    query: u32,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let g = rng.random_range(1..40);
    Instance {
        // Coarse values so ties occur.
        distances: (0..g).map(|_| rng.random_range(0..20) as f64 / 10.0).collect(),
        ids: (0..g).map(|_| rng.random_range(0..4)).collect(),
        junk: (0..g).map(|_| rng.random_bool(0.15)).collect(),
        query: 0,
    }
}

fn ranking(inst: &Instance) -> QueryRanking {
    let d = DistanceMatrix {
        values: Array2::from_shape_vec((1, inst.distances.len()), inst.distances.clone()).unwrap(),
        stage: DistanceStage::RawCosine,
        params: None,
    };
    let order = rank_lists(&d).remove(0);
    QueryRanking {
        query_id: inst.query,
        ranked_ids: order.iter().map(|&j| inst.ids[j]).collect(),
        valid: order.iter().map(|&j| !inst.junk[j]).collect(),
    }
}

#[test]
fn ap_matches_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut scored = 0;
    for _ in 0..1000 {
        let inst = random_instance(&mut rng);
        let q = ranking(&inst);
        let ours = average_precision(&q.ranked_ids, q.query_id, &q.valid);
        match brute_force_ap(&inst.distances, &inst.ids, &inst.junk, inst.query) {
            Some(expected) => {
                assert_eq!(ours.unwrap(), expected);
                scored += 1;
            }
            None => assert!(matches!(ours, Err(Error::NoRelevant))),
        }
        if let Ok(r) = cmc(&[q], &CMC_RANKS) {
            assert!(r[0] <= r[1] && r[1] <= r[2]);
        }
    }
    assert!(scored > 500);
}

#[test]
fn fixed_cases() {
    let all = [true; 3];
    assert!((average_precision(&[5, 0, 5], 5, &all).unwrap() - 0.8333333333333334).abs() < 1e-9);
    for k in 1..=20usize {
        let mut ids = vec![0u32; 20];
        ids[k - 1] = 5;
        assert_eq!(average_precision(&ids, 5, &[true; 20]).unwrap(), 1.0 / k as f64);
    }
}

#[test]
fn trailing_non_relevant_item_is_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let q = ranking(&inst);
        let Ok(ap) = average_precision(&q.ranked_ids, q.query_id, &q.valid) else {
            continue;
        };
        let last_hit = q.ranked_ids.iter().rposition(|&id| id == q.query_id).unwrap();
        if let Some(extra) = (last_hit + 1..q.ranked_ids.len()).find(|&i| q.ranked_ids[i] != q.query_id) {
            let mut ids = q.ranked_ids.clone();
            let mut valid = q.valid.clone();
            ids.remove(extra);
            valid.remove(extra);
            assert_eq!(average_precision(&ids, q.query_id, &valid).unwrap(), ap);
        }
    }
}

fn protocol(map: f64, n: usize, p: Protocol) -> ProtocolResult {
    ProtocolResult {
        protocol: p,
        num_queries: n,
        excluded: 0,
        gallery_size: 1,
        map,
        r1: 0.0,
        r5: 0.0,
        r10: 0.0,
        ap: vec![map / 100.0; n],
    }
}

#[test]
fn overall_map_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for _ in 0..1000 {
        let mut results: Vec<ProtocolResult> = Protocol::ALL
            .iter()
            .map(|&p| protocol(rng.random_range(0.0..100.0), rng.random_range(0..50), p))
            .collect();
        let Ok(m) = overall_map(&results) else {
            assert!(results.iter().all(|r| r.num_queries == 0));
            continue;
        };
        let nonempty: Vec<f64> = results.iter().filter(|r| r.num_queries > 0).map(|r| r.map).collect();
        let lo = nonempty.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = nonempty.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= m && m <= hi);
        results.shuffle(&mut rng);
        assert_eq!(overall_map(&results).unwrap(), m);

        // Equal counts: plain mean.
        let n = rng.random_range(1..100);
        let maps: Vec<f64> = (0..3).map(|_| (rng.random_range(0..10000) as f64) / 100.0).collect();
        let equal: Vec<ProtocolResult> = maps
            .iter()
            .zip(Protocol::ALL)
            .map(|(&m, p)| protocol(m, n, p))
            .collect();
        let mut sorted = maps.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(overall_map(&equal).unwrap(), (sorted[0] + sorted[1] + sorted[2]) / 3.0);
    }
}

fn mean_embeddings(fx: &xfdreid::synthfix::Fixture) -> xfdreid::evaluation::TrackletEmbeddings {
    let c = fx.dataset.feature_dim;
    embed_dataset_with(
        &fx.dataset,
        PoolingMode::Mean,
        &AttentionPoolParams::zeros(c),
        &NeckParams::disabled(),
    )
    .unwrap()
}

#[test]
fn protocol_sets_partition_queries() {
    let fx = generate(&FixtureConfig {
        num_ids: 6,
        tracklets_per_id: 8,
        ..FixtureConfig::default()
    })
    .unwrap();
    let emb = mean_embeddings(&fx);
    let mut union = BTreeSet::new();
    for p in Protocol::ALL {
        let sets = build_protocol_sets(&fx.dataset, &emb, p).unwrap();
        assert!(sets
            .query_records
            .iter()
            .all(|r| r.domain == p.query_domain() && r.split == Split::Query));
        assert!(sets
            .gallery_records
            .iter()
            .all(|r| r.domain == p.gallery_domain() && r.split == Split::Gallery));
        union.extend(sets.queries.tracklets.iter().copied());
    }
    let expected: BTreeSet<usize> = fx
        .dataset
        .records
        .iter()
        .filter(|r| r.split == Split::Query)
        .map(|r| r.tracklet_index)
        .collect();
    assert_eq!(union, expected);
}

#[test]
fn missing_domain_is_empty_protocol() {
    let mut fx = generate(&FixtureConfig {
        num_ids: 4,
        tracklets_per_id: 4,
        ..FixtureConfig::default()
    })
    .unwrap();
    for r in fx.dataset.records.iter_mut().filter(|r| r.split == Split::Query) {
        r.domain = Domain::Aerial;
    }
    let emb = mean_embeddings(&fx);
    assert!(matches!(
        build_protocol_sets(&fx.dataset, &emb, Protocol::G2A),
        Err(Error::EmptyProtocol(_))
    ));
    let report = evaluate(&fx.dataset, &emb, None).unwrap();
    assert_eq!(report.protocol(Protocol::G2A).unwrap().num_queries, 0);
}

#[test]
fn separable_fixture_scores_perfectly() {
    let fx = generate(&FixtureConfig {
        cluster_spread: 0.0,
        corrupt_frac: 0.0,
        ..FixtureConfig::default()
    })
    .unwrap();
    let report = evaluate(&fx.dataset, &mean_embeddings(&fx), None).unwrap();
    for r in &report.protocols {
        assert_eq!(
            (r.map, r.r1, r.r5, r.r10),
            (100.0, 100.0, 100.0, 100.0),
            "{}",
            r.protocol
        );
    }
    assert_eq!(report.overall_map, 100.0);
}

#[test]
fn rerank_with_unit_lambda_matches_raw_report() {
    let fx = generate(&FixtureConfig {
        num_ids: 8,
        tracklets_per_id: 8,
        ..FixtureConfig::default()
    })
    .unwrap();
    let emb = mean_embeddings(&fx);
    let raw = evaluate(&fx.dataset, &emb, None).unwrap();
    let blended = evaluate(&fx.dataset, &emb, Some(&RerankParams::new(6, 2, 1.0))).unwrap();
    assert_eq!(raw.protocols, blended.protocols);
    assert_eq!(raw.overall_map, blended.overall_map);
}

/// Expected overall mAP when gallery labels are shuffled uniformly,
/// estimated by the brute-force AP over many permutations.
fn chance_level(fx: &xfdreid::synthfix::Fixture, rng: &mut ChaCha8Rng, draws: usize) -> f64 {
    let mut total = 0.0;
    for _ in 0..draws {
        let mut ds = fx.dataset.clone();
        let gallery: Vec<usize> = (0..ds.records.len())
            .filter(|&i| ds.records[i].split == Split::Gallery)
            .collect();
        let mut ids: Vec<u32> = gallery.iter().map(|&i| ds.records[i].person_id).collect();
        ids.shuffle(rng);
        for (&i, id) in gallery.iter().zip(ids) {
            ds.records[i].person_id = id;
        }
        total += evaluate(&ds, &mean_embeddings(fx), None).unwrap().overall_map;
    }
    total / draws as f64
}

#[test]
fn permuted_gallery_labels_give_chance() {
    let fx = generate(&FixtureConfig {
        num_ids: 16,
        tracklets_per_id: 8,
        cluster_spread: 0.5,
        corrupt_frac: 0.0,
        ..FixtureConfig::default()
    })
    .unwrap();
    let clean = evaluate(&fx.dataset, &mean_embeddings(&fx), None).unwrap().overall_map;
    assert!(clean > 99.0);
    let permuted = chance_level(&fx, &mut ChaCha8Rng::seed_from_u64(1003), 20);
    let chance = chance_level(&fx, &mut ChaCha8Rng::seed_from_u64(2003), 40);
    assert!(
        (permuted - chance).abs() < 4.0,
        "permuted {permuted} vs chance {chance}"
    );
    assert!(permuted < 40.0);
}

#[test]
fn fully_corrupted_fixture_is_near_chance() {
    let (mut observed, mut chance) = (0.0, 0.0);
    for seed in 0..5 {
        let fx = generate(&FixtureConfig {
            num_ids: 16,
            tracklets_per_id: 8,
            corrupt_frac: 1.0,
            seed,
            ..FixtureConfig::default()
        })
        .unwrap();
        observed += evaluate(&fx.dataset, &mean_embeddings(&fx), None).unwrap().overall_map / 5.0;
        chance += chance_level(&fx, &mut ChaCha8Rng::seed_from_u64(1004 + seed), 8) / 5.0;
    }
    assert!(
        (observed - chance).abs() < 4.0,
        "observed {observed} vs chance {chance}"
    );
}
