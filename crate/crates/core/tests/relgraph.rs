mod common;

use common::{oracle_additive, oracle_reweight, random_case, to_rows};
use hpt_core::encoders::ModMode;
use hpt_core::relgraph::{
    align_words, build_additive_matrix, build_reweight_matrix, build_selective_matrix,
    related_indicator, RelationGraph,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn additive_matches_pair_enumeration_on_fifty_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut nontrivial = 0;
    for case in 0..50 {
        let (seq, graph) = random_case(&mut rng, 2, case % 3);
        let m = build_additive_matrix(&graph, &align_words(&seq, &graph), 0.7, -0.3, &seq.layout);
        assert_eq!(m.mode, ModMode::Additive);
        assert_eq!(
            to_rows(&m.values),
            oracle_additive(&seq, &graph, 0.7, -0.3),
            "case {case}"
        );
        if m.values.data().iter().any(|&v| v == 0.7) && m.values.data().iter().any(|&v| v == -0.3) {
            nontrivial += 1;
        }
    }
    assert!(
        nontrivial >= 10,
        "only {nontrivial} cases exercise both relation types"
    );
}

#[test]
fn reweight_matches_pair_enumeration_on_fifty_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut boosted = 0;
    for case in 0..50 {
        let (seq, graph) = random_case(&mut rng, 2, case % 3);
        let beta = [0.0, 0.2, 0.5, 1.0][case % 4];
        let m =
            build_reweight_matrix(&graph, &align_words(&seq, &graph), beta, &seq.layout).unwrap();
        assert_eq!(m.mode, ModMode::Multiplicative);
        assert_eq!(
            to_rows(&m.values),
            oracle_reweight(&seq, &graph, beta),
            "case {case}"
        );
        if beta > 0.0 && m.values.data().contains(&(1.0 + beta)) {
            boosted += 1;
        }
    }
    assert!(boosted >= 10, "only {boosted} cases contain related cells");
}

#[test]
fn selective_boosts_only_related_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (seq, graph) = random_case(&mut rng, 2, 1);
        let alignment = align_words(&seq, &graph);
        let m = build_selective_matrix(&graph, &alignment, 0.4, &seq.layout).unwrap();
        let rel = related_indicator(&graph, &alignment, &seq.layout);
        for (v, r) in m.values.data().iter().zip(rel.data()) {
            assert_eq!(*v, if *r > 0.0 { 1.4 } else { 1.0 });
        }
    }
}

#[test]
fn word_absent_from_text_is_unmatched() {
    let (seq, _) = random_case(&mut ChaCha8Rng::seed_from_u64(4), 0, 0);
    let graph = RelationGraph {
        entities: vec!["zebra".into()],
        ..Default::default()
    };
    let alignment = align_words(&seq, &graph);
    assert_eq!(alignment.unmatched_words, vec!["zebra".to_string()]);
    assert_eq!(alignment.miss_ratio(), 1.0);
}

proptest! {
    #[test]
    fn matrices_are_symmetric_and_confined_to_low_block(seed in any::<u64>(), beta in 0.0f64..3.0) {
        let (seq, graph) = random_case(&mut ChaCha8Rng::seed_from_u64(seed), 2, 2);
        let alignment = align_words(&seq, &graph);
        let add = build_additive_matrix(&graph, &alignment, 1.5, 0.5, &seq.layout);
        let rw = build_reweight_matrix(&graph, &alignment, beta, &seq.layout).unwrap();
        let n = seq.len();
        let low = seq.layout.low_range();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(add.values.get(i, j), add.values.get(j, i));
                prop_assert_eq!(rw.values.get(i, j), rw.values.get(j, i));
                if !low.contains(&i) || !low.contains(&j) {
                    prop_assert_eq!(add.values.get(i, j), 0.0);
                    prop_assert_eq!(rw.values.get(i, j), 1.0);
                }
                prop_assert!(rw.values.get(i, j) > 0.0);
            }
        }
    }
}
