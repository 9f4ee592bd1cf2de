mod common;

use gridplan::costmodel::{
    cost_2d_stationary_a, cost_batch_parallel, cost_domain_parallel, cost_hybrid_15d, cost_integrated,
    cost_model_parallel, cost_redistribution, crossover_batch, memory_footprint, Assignment, GridConfig,
};
use gridplan::netspec::{alexnet_preset, ConvLayer, InputShape, LayerDef, NetworkSpec};
use proptest::prelude::*;

fn square_fc(d: u64, layers: usize) -> NetworkSpec {
    NetworkSpec::fully_connected(&vec![d; layers + 1], 1).unwrap()
}

proptest! {
    #[test]
    fn hybrid_reduces_to_batch_and_model(net in common::arb_network(), procs in 1u64..=4096, batch in 1u64..=8192) {
        let b = batch as f64;
        prop_assert_eq!(cost_hybrid_15d(&net, 1, procs, b), cost_batch_parallel(&net, procs));
        prop_assert_eq!(cost_hybrid_15d(&net, procs, 1, b), cost_model_parallel(&net, procs, b));
    }

    #[test]
    fn all_model_integration_is_hybrid(net in common::arb_network(), p_r in 1u64..=64, p_c in 1u64..=64, batch in 1u64..=4096) {
        let grid = GridConfig::uniform(p_r, p_c, net.len(), Assignment::Model).unwrap();
        prop_assert_eq!(cost_integrated(&net, &grid, batch as f64).unwrap(), cost_hybrid_15d(&net, p_r, p_c, batch as f64));
    }

    #[test]
    fn batch_words_grow_with_procs(net in common::arb_network(), p in 1u64..=4096) {
        prop_assert!(cost_batch_parallel(&net, p).words() <= cost_batch_parallel(&net, p + 1).words());
    }

    #[test]
    fn model_words_grow_with_procs_and_batch(net in common::arb_network(), p in 1u64..=4096, b in 1u64..=4096) {
        let base = cost_model_parallel(&net, p, b as f64).words();
        prop_assert!(base <= cost_model_parallel(&net, p + 1, b as f64).words());
        prop_assert!(base <= cost_model_parallel(&net, p, (b + 1) as f64).words());
    }

    #[test]
    fn domain_words_are_linear_in_batch_plus_weights(
        (h, w, c) in (8u64..=64, 8u64..=64, 1u64..=16),
        k in prop::sample::select(vec![1u64, 3, 5]),
        out in 1u64..=64,
        p in 1u64..=64,
        b in 1u64..=512,
    ) {
        let net = NetworkSpec::new(InputShape::new(h, w, c), vec![LayerDef::Conv(ConvLayer::new(k, k, 1, out))], 1).unwrap();
        let one = cost_domain_parallel(&net, p, 1.0).unwrap();
        let many = cost_domain_parallel(&net, p, b as f64).unwrap();
        let weight = cost_batch_parallel(&net, p).words();
        let halo = (w * c + w * out) as f64 * (k / 2) as f64;
        prop_assert!((one.words() - weight - halo).abs() <= 1e-9 * one.words().max(1.0));
        prop_assert!((many.words() - weight - b as f64 * halo).abs() <= 1e-9 * many.words().max(1.0));
    }

    /// Below the crossover, three activation transfers of the layer output
    /// (the model-parallel volume for `d_in = d_out`) are smaller than the
    /// weight all-reduce; above it they are larger.
    #[test]
    fn crossover_separates_batch_and_model(
        (h, c) in (4u64..=64, 1u64..=256),
        k in prop::sample::select(vec![1u64, 3, 5, 7, 11]),
        out in 1u64..=512,
        p in 2u64..=1024,
        b in 1u64..=4096,
    ) {
        let net = NetworkSpec::new(InputShape::new(h, h, c), vec![LayerDef::Conv(ConvLayer::new(k, k, 1, out))], 1).unwrap();
        let layer = net.layer(0);
        let b_star = crossover_batch(layer).unwrap();
        let batch_words = cost_batch_parallel(&net, p).words();
        let model_words = 3.0 * cost_redistribution(layer, p, b as f64).words();
        let bf = b as f64;
        if bf < b_star * (1.0 - 1e-9) {
            prop_assert!(model_words < batch_words);
        } else if bf > b_star * (1.0 + 1e-9) {
            prop_assert!(model_words > batch_words);
        }
    }

    #[test]
    fn summa_never_beats_the_15d_forward(d in 1u64..=8192, p_r in 1u64..=32, p_c in 1u64..=32, b in 1u64..=8192) {
        let net = square_fc(d, 2);
        let layer = net.layer(1);
        let two_d = cost_2d_stationary_a(layer, p_r, p_c, b as f64).words();
        let hybrid = cost_hybrid_15d(&net, p_r, p_c, b as f64);
        let forward: f64 = hybrid.records().iter().filter(|r| r.layer == 1 && r.phase == gridplan::costmodel::Phase::Forward).map(|r| r.words).sum();
        prop_assert!(two_d >= forward);
    }

    #[test]
    fn model_layer_is_three_redistributions(d in 1u64..=65_536, p in 2u64..=64, b in 1u64..=8192) {
        let net = square_fc(d, 3);
        let layer = net.layer(1);
        let model = cost_model_parallel(&net, p, b as f64).layer_words(1);
        prop_assert_eq!(model, 3.0 * cost_redistribution(layer, p, b as f64).words());
    }

    #[test]
    fn weight_memory_shrinks_with_model_partitions(net in common::arb_fc_network(), p in 1u64..=64) {
        let batch = 256.0;
        let one = memory_footprint(&net, &GridConfig::uniform(1, p, net.len(), Assignment::Model).unwrap(), batch).unwrap();
        let two = memory_footprint(&net, &GridConfig::uniform(2, p, net.len(), Assignment::Model).unwrap(), batch).unwrap();
        prop_assert!(two.weights < one.weights);
        prop_assert_eq!(two.activations, one.activations);
    }
}

#[test]
fn alexnet_conv4_crossover_is_near_thirteen() {
    let net = alexnet_preset();
    let b = crossover_batch(net.layer(3)).unwrap();
    assert!((b - 13.633).abs() < 1e-3, "{b}");
    assert!(crossover_batch(net.layer(5)).is_err());
}

#[test]
fn pointwise_crossover_closed_form() {
    let net = NetworkSpec::new(InputShape::new(7, 7, 96), vec![LayerDef::conv(1, 1, 1, 32)], 1).unwrap();
    assert_eq!(crossover_batch(net.layer(0)).unwrap(), 2.0 * 96.0 / (3.0 * 49.0));
}

#[test]
fn domain_rejects_fully_connected() {
    let net = NetworkSpec::fully_connected(&[4, 4], 1).unwrap();
    assert!(cost_domain_parallel(&net, 2, 1.0).is_err());
    let grid = GridConfig::uniform(2, 1, 1, Assignment::Domain).unwrap();
    assert!(cost_integrated(&net, &grid, 1.0).is_err());
}
