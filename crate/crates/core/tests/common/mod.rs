#![allow(dead_code)]

use gridplan::netspec::{ConvLayer, InputShape, LayerDef, NetworkSpec};
use proptest::prelude::*;

/// Convolutions (possibly pooled) followed by fully connected layers.
pub fn arb_network() -> impl Strategy<Value = NetworkSpec> {
    let conv = (prop::sample::select(vec![1u64, 3, 5, 7]), 1u64..=2, 1u64..=48, prop::option::of(2u64..=3))
        .prop_map(|(k, s, out, pool)| {
            let c = ConvLayer::new(k, k, s, out);
            LayerDef::Conv(match pool {
                Some(d) => c.with_pool(d),
                None => c,
            })
        });
    let fc = (1u64..=512).prop_map(LayerDef::fc);
    (
        (8u64..=64, 8u64..=64, 1u64..=8),
        prop::collection::vec(conv, 0..=3),
        prop::collection::vec(fc, 0..=3),
        1u64..=2_000_000,
    )
        .prop_filter_map("network must have layers and valid shapes", |((h, w, c), convs, fcs, n)| {
            let layers: Vec<LayerDef> = convs.into_iter().chain(fcs).collect();
            NetworkSpec::new(InputShape::new(h, w, c), layers, n).ok()
        })
}

/// Fully connected stack.
pub fn arb_fc_network() -> impl Strategy<Value = NetworkSpec> {
    (prop::collection::vec(1u64..=4096, 2..=6), 1u64..=1_000_000)
        .prop_map(|(sizes, n)| NetworkSpec::fully_connected(&sizes, n).unwrap())
}
