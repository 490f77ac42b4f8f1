mod common;

use common::reference;
use proptest::prelude::*;
use rand::Rng;
use sbprune::encoder::{EncoderConfig, EncoderModel};
use sbprune::pruning::{plan_prune, prune_model, verify_prune, PruneKind, PrunePlan, PruneStrategy};
use sbprune::Error;

fn model(layers: usize, seed: u64) -> EncoderModel<f64> {
    let mut m = EncoderModel::<f64>::init(EncoderConfig {
        vocab_size: 7,
        hidden_dim: 4,
        num_layers: layers,
        num_heads: 2,
        ffn_dim: 6,
        max_seq_len: 5,
        layer_norm_eps: 1e-12,
        seed,
    })
    .unwrap();
    let mut r = common::rng(seed);
    for p in m.params_mut() {
        p.data_mut().iter_mut().for_each(|x| *x += r.random_range(-0.5..0.5));
    }
    m
}

fn plan(layers: usize, kind: PruneKind, k: usize) -> PrunePlan {
    plan_prune(layers, PruneStrategy::new(kind, k)).unwrap()
}

#[test]
fn pruned_forward_skips_removed_blocks() {
    let mut r = common::rng(11);
    for seed in 0..12 {
        let layers = 2 + seed as usize % 5;
        let m = model(layers, seed);
        for kind in PruneKind::ALL {
            let k = r.random_range(0..layers);
            let p = plan(layers, kind, k);
            let pruned = prune_model(&m, &p).unwrap();
            let ids: Vec<usize> = (0..5).map(|_| r.random_range(0..7)).collect();
            let mask = [true, true, false, true, true];
            let want = reference::forward(&m, &p.retained, &ids, &mask);
            let got = pruned.encode(&ids, &mask).unwrap();
            assert!(reference::max_diff(&want, &got) < 1e-10, "{kind} k={k} L={layers}");
        }
    }
}

#[test]
fn explicit_retention_maps_layers_in_order() {
    let m = model(4, 1);
    let p = PrunePlan::from_retained(4, vec![0, 3]).unwrap();
    assert_eq!(p.removed, vec![1, 2]);
    let pruned = prune_model(&m, &p).unwrap();
    assert_eq!(pruned.layers[0], m.layers[0]);
    assert_eq!(pruned.layers[1], m.layers[3]);
    assert!(pruned.token_embedding.bit_eq(&m.token_embedding));
    assert!(pruned.position_embedding.bit_eq(&m.position_embedding));
    assert!(PrunePlan::from_retained(4, vec![2, 1]).is_err());
    assert!(PrunePlan::from_retained(4, vec![]).is_err());
}

#[test]
fn twelve_layer_strategies() {
    assert_eq!(plan(12, PruneKind::Top, 6).removed, (6..12).collect::<Vec<_>>());
    assert_eq!(plan(12, PruneKind::Middle, 6).removed, (3..9).collect::<Vec<_>>());
    assert_eq!(plan(12, PruneKind::Bottom, 6).retained, (6..12).collect::<Vec<_>>());
    assert_eq!(plan(12, PruneKind::Top, 10).retained, vec![0, 1]);
}

#[test]
fn illegal_plans() {
    let err = plan_prune(12, PruneStrategy::new(PruneKind::Top, 12)).unwrap_err();
    assert!(matches!(err, Error::Plan(_)));
    assert!(err.to_string().contains("cannot remove all layers"));
    assert!(matches!(
        PruneStrategy::from_signed(PruneKind::Top, -1),
        Err(Error::Input(_))
    ));
}

#[test]
fn verification_catches_tampering() {
    let m = model(5, 2);
    let p = plan(5, PruneKind::Middle, 2);
    let mut pruned = prune_model(&m, &p).unwrap();
    let ok = verify_prune(&m, &pruned, &p);
    assert!(ok.ok && ok.issues.is_empty());

    pruned.layers[1].ffn_in_weight.data_mut()[0] += 1e-3;
    let bad = verify_prune(&m, &pruned, &p);
    assert!(!bad.ok);
    assert!(bad.issues.iter().any(|i| i.contains("layer 1")), "{:?}", bad.issues);

    let other = plan(5, PruneKind::Top, 1);
    let mismatch = verify_prune(&m, &prune_model(&m, &p).unwrap(), &other);
    assert!(!mismatch.ok);
    assert!(
        mismatch.issues.iter().any(|i| i.contains("count")),
        "{:?}",
        mismatch.issues
    );
}

fn strategy() -> impl Strategy<Value = (usize, PruneKind, usize)> {
    (1usize..=12, 0usize..3).prop_flat_map(|(layers, kind)| (Just(layers), Just(PruneKind::ALL[kind]), 0..layers))
}

proptest! {
    #[test]
    fn plan_arithmetic((layers, kind, k) in strategy()) {
        let p = plan(layers, kind, k);
        prop_assert_eq!(p.removed.len(), k);
        prop_assert_eq!(p.retained.len() + p.removed.len(), layers);
        prop_assert!(p.retained.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(p.removed.windows(2).all(|w| w[1] == w[0] + 1));
        prop_assert!(p.retained.iter().all(|i| !p.removed.contains(i)));
    }
}
