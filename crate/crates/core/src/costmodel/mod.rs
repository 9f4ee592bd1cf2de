//! Alpha-beta communication costs for batch, model, domain and integrated
//! parallelism, plus the memory footprint and the 2D SUMMA comparison.
//!
//! Every function returns a [`CostBreakdown`]: one record per collective per
//! layer, counting latency units (multiples of `alpha`) and words (multiples
//! of `beta`). Batch sizes and partition shares are real-valued; nothing is
//! rounded up.
//!
//! Conventions that follow the published model literally:
//!
//! * All-gather (Bruck) costs `ceil(log2 P)` latency units.
//! * Ring all-reduce is charged as `2 * (alpha ceil(log2 P) + beta (P-1)/P n)`,
//!   i.e. the latency term is `2 ceil(log2 P)` rather than the ring's `2(P-1)`
//!   actual rounds.
//! * The first layer has no activation-gradient term.
//! * Halo terms always carry one latency unit per layer, even at `P = 1` or for
//!   1x1 kernels where they move no words. The backward halo uses
//!   `Y_W * Y_C * floor(k_w / 2)` exactly as the closed form prints it.

mod breakdown;
mod grid;
mod hardware;

pub use breakdown::{Collective, CommGroup, CostBreakdown, CostRecord, Phase};
pub use grid::{Assignment, GridConfig};
pub use hardware::{parse_hardware, ComputeModel, ComputeTable, HardwareModel};

use crate::error::{Error, Result};
use crate::netspec::{Layer, LayerDims, NetworkSpec};

/// `ceil(log2 p)`, with `log 1 = 0`.
pub fn log2_ceil(p: u64) -> u64 {
    if p <= 1 {
        0
    } else {
        (u64::BITS - (p - 1).leading_zeros()) as u64
    }
}

/// `(p - 1) / p`.
fn spread(p: u64) -> f64 {
    (p - 1) as f64 / p as f64
}

fn record(layer: usize, phase: Phase, collective: Collective, group: CommGroup, latency_units: u64, words: f64) -> CostRecord {
    CostRecord { layer, phase, collective, group, latency_units, words }
}

pub fn cost_batch_parallel(net: &NetworkSpec, procs: u64) -> CostBreakdown {
    let mut out = CostBreakdown::new();
    for layer in net.iter() {
        let w = layer.dims.weight_count as f64;
        out.push(record(
            layer.index,
            Phase::BackwardWeights,
            Collective::AllReduce,
            CommGroup::Batch(procs),
            2 * log2_ceil(procs),
            2.0 * spread(procs) * w,
        ));
    }
    out
}

pub fn cost_model_parallel(net: &NetworkSpec, procs: u64, batch: f64) -> CostBreakdown {
    let mut out = CostBreakdown::new();
    for layer in net.iter() {
        let d = layer.dims;
        out.push(record(
            layer.index,
            Phase::Forward,
            Collective::AllGather,
            CommGroup::Model(procs),
            log2_ceil(procs),
            batch * spread(procs) * d.d_out as f64,
        ));
        if layer.index > 0 {
            out.push(record(
                layer.index,
                Phase::BackwardData,
                Collective::AllReduce,
                CommGroup::Model(procs),
                2 * log2_ceil(procs),
                2.0 * (batch * spread(procs) * d.d_in as f64),
            ));
        }
    }
    out
}

fn half(k: u64) -> f64 {
    (k / 2) as f64
}

/// Pure domain parallelism over `procs` processes. Fully connected layers are
/// rejected.
pub fn cost_domain_parallel(net: &NetworkSpec, procs: u64, batch: f64) -> Result<CostBreakdown> {
    let mut out = CostBreakdown::new();
    for layer in net.iter() {
        let conv = layer.conv().ok_or(Error::NotConv { layer: layer.index, what: "domain parallelism" })?;
        let d = layer.dims;
        out.push(record(
            layer.index,
            Phase::Forward,
            Collective::Halo,
            CommGroup::Neighbors,
            1,
            batch * (d.x_w * d.x_c) as f64 * half(conv.kernel_h),
        ));
        out.push(record(
            layer.index,
            Phase::BackwardData,
            Collective::Halo,
            CommGroup::Neighbors,
            1,
            batch * (d.y_w * d.y_c) as f64 * half(conv.kernel_w),
        ));
        out.push(record(
            layer.index,
            Phase::BackwardWeights,
            Collective::AllReduce,
            CommGroup::Batch(procs),
            2 * log2_ceil(procs),
            2.0 * spread(procs) * d.weight_count as f64,
        ));
    }
    Ok(out)
}

fn push_model_layer(out: &mut CostBreakdown, layer: Layer<'_>, p_r: u64, p_c: u64, batch: f64) {
    let d = layer.dims;
    let local_batch = batch / p_c as f64;
    out.push(record(
        layer.index,
        Phase::Forward,
        Collective::AllGather,
        CommGroup::Model(p_r),
        log2_ceil(p_r),
        local_batch * spread(p_r) * d.d_out as f64,
    ));
    if layer.index > 0 {
        out.push(record(
            layer.index,
            Phase::BackwardData,
            Collective::AllReduce,
            CommGroup::Model(p_r),
            2 * log2_ceil(p_r),
            2.0 * (local_batch * spread(p_r) * d.d_in as f64),
        ));
    }
    out.push(record(
        layer.index,
        Phase::BackwardWeights,
        Collective::AllReduce,
        CommGroup::Batch(p_c),
        2 * log2_ceil(p_c),
        2.0 * spread(p_c) * (d.weight_count as f64 / p_r as f64),
    ));
}

/// The 1.5D algorithm: weights row-partitioned over `p_r`, activations
/// column-partitioned over `p_c`, the same grid for every layer.
pub fn cost_hybrid_15d(net: &NetworkSpec, p_r: u64, p_c: u64, batch: f64) -> CostBreakdown {
    let mut out = CostBreakdown::new();
    for layer in net.iter() {
        push_model_layer(&mut out, layer, p_r, p_c, batch);
    }
    out
}

/// Full integration: each layer is batch-only, model-partitioned (`L_M`) or
/// domain-partitioned (`L_D`) over the grid's `p_r` axis.
pub fn cost_integrated(net: &NetworkSpec, grid: &GridConfig, batch: f64) -> Result<CostBreakdown> {
    grid.validate(net)?;
    let (p_r, p_c) = (grid.p_r, grid.p_c);
    let procs = grid.procs();
    let mut out = CostBreakdown::new();
    for layer in net.iter() {
        let d = layer.dims;
        match grid.effective(layer.index) {
            Assignment::Model => push_model_layer(&mut out, layer, p_r, p_c, batch),
            Assignment::Domain => {
                let conv = layer.conv().ok_or(Error::NotConv { layer: layer.index, what: "domain parallelism" })?;
                let local_batch = batch / p_c as f64;
                out.push(record(
                    layer.index,
                    Phase::Forward,
                    Collective::Halo,
                    CommGroup::Neighbors,
                    1,
                    local_batch * (d.x_w * d.x_c) as f64 * half(conv.kernel_h),
                ));
                out.push(record(
                    layer.index,
                    Phase::BackwardData,
                    Collective::Halo,
                    CommGroup::Neighbors,
                    1,
                    local_batch * (d.y_w * d.y_c) as f64 * half(conv.kernel_w),
                ));
                out.push(weight_allreduce(layer.index, procs, d));
            }
            Assignment::BatchOnly => out.push(weight_allreduce(layer.index, procs, d)),
        }
    }
    Ok(out)
}

fn weight_allreduce(layer: usize, procs: u64, d: &LayerDims) -> CostRecord {
    record(
        layer,
        Phase::BackwardWeights,
        Collective::AllReduce,
        CommGroup::Batch(procs),
        2 * log2_ceil(procs),
        2.0 * spread(procs) * d.weight_count as f64,
    )
}

/// Switching a layer's input from a batch distribution to a model
/// distribution: one all-gather of the layer output.
pub fn cost_redistribution(layer: Layer<'_>, procs: u64, batch: f64) -> CostBreakdown {
    let mut out = CostBreakdown::new();
    out.push(record(
        layer.index,
        Phase::Forward,
        Collective::AllGather,
        CommGroup::Model(procs),
        log2_ceil(procs),
        batch * spread(procs) * layer.dims.d_out as f64,
    ));
    out
}

/// Batch size `B*` above which pure batch parallelism moves fewer words than
/// pure model parallelism for this convolution: `2 k_h k_w X_C / (3 Y_H Y_W)`.
pub fn crossover_batch(layer: Layer<'_>) -> Result<f64> {
    let conv = layer.conv().ok_or(Error::NotConv { layer: layer.index, what: "the crossover batch" })?;
    let d = layer.dims;
    Ok((2 * conv.kernel_h * conv.kernel_w * d.x_c) as f64 / (3 * d.y_h * d.y_w) as f64)
}

/// Stationary-A 2D SUMMA for `Y = W X`: `2 B d / p_r + B d / p_c` words in
/// four communication steps.
pub fn cost_2d_stationary_a(layer: Layer<'_>, p_r: u64, p_c: u64, batch: f64) -> CostBreakdown {
    let d = layer.dims.d_out as f64;
    let mut out = CostBreakdown::new();
    out.push(record(
        layer.index,
        Phase::Forward,
        Collective::Summa2d,
        CommGroup::Grid { p_r, p_c },
        4,
        2.0 * batch * d / p_r as f64 + batch * d / p_c as f64,
    ));
    out
}

/// Per-process storage in words.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryFootprint {
    pub weights: f64,
    pub activations: f64,
}

impl MemoryFootprint {
    pub fn total(&self) -> f64 {
        self.weights + self.activations
    }
}

/// Weights are split `p_r` ways on model-partitioned layers and replicated
/// otherwise; activations are split `p_c` ways (and additionally `p_r` ways
/// on domain-partitioned layers).
pub fn memory_footprint(net: &NetworkSpec, grid: &GridConfig, batch: f64) -> Result<MemoryFootprint> {
    grid.validate(net)?;
    let (p_r, p_c, procs) = (grid.p_r as f64, grid.p_c as f64, grid.procs() as f64);
    let mut fp = MemoryFootprint { weights: 0.0, activations: 0.0 };
    for layer in net.iter() {
        let d = layer.dims;
        let w = d.weight_count as f64;
        let act = batch * (d.d_in + d.d_out) as f64;
        let (wi, ai) = match grid.effective(layer.index) {
            Assignment::Model => (w / p_r, act / p_c),
            Assignment::Domain | Assignment::BatchOnly => (w, act / procs),
        };
        fp.weights += wi;
        fp.activations += ai;
    }
    Ok(fp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{alexnet_preset, InputShape, LayerDef};

    fn unit() -> (f64, f64) {
        (1.0, 1.0)
    }

    #[test]
    fn log2_ceil_values() {
        let got: Vec<u64> = [1, 2, 3, 4, 5, 8, 9, 512, 513].iter().map(|&p| log2_ceil(p)).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 4, 9, 10]);
    }

    #[test]
    fn batch_single_layer() {
        // |W| = 1000 from a 10 -> 100 fc layer
        let net = NetworkSpec::fully_connected(&[10, 100], 1).unwrap();
        let c = cost_batch_parallel(&net, 4);
        let (a, b) = unit();
        assert_eq!(c.latency_units(), 4);
        assert_eq!(c.words(), 1500.0);
        assert_eq!(c.total(a, b), 1504.0);
        assert!(cost_batch_parallel(&net, 1).is_empty());
    }

    #[test]
    fn model_single_layer() {
        let net = NetworkSpec::fully_connected(&[3, 10], 1).unwrap();
        let c = cost_model_parallel(&net, 2, 8.0);
        assert_eq!(c.total(1.0, 1.0), 41.0);
        assert_eq!(c.records().len(), 1);
        assert_eq!(cost_model_parallel(&net, 1, 8.0).total(1.0, 1.0), 0.0);
    }

    #[test]
    fn model_middle_layer_volume_is_three_bd() {
        let net = NetworkSpec::fully_connected(&[16, 16, 16], 1).unwrap();
        let c = cost_model_parallel(&net, 4, 8.0);
        assert_eq!(c.layer_words(1), 3.0 * 8.0 * 0.75 * 16.0);
    }

    #[test]
    fn domain_halo_terms() {
        let net = NetworkSpec::new(InputShape::new(13, 13, 384), vec![LayerDef::conv(3, 3, 1, 384)], 1).unwrap();
        let c = cost_domain_parallel(&net, 4, 8.0).unwrap();
        let fwd = c.records().iter().find(|r| r.phase == Phase::Forward).unwrap();
        assert_eq!(fwd.words, 39_936.0);
        assert_eq!(fwd.latency_units, 1);

        let pointwise = NetworkSpec::new(InputShape::new(13, 13, 384), vec![LayerDef::conv(1, 1, 1, 64)], 1).unwrap();
        let c = cost_domain_parallel(&pointwise, 4, 8.0).unwrap();
        let halo_words: f64 = c.records().iter().filter(|r| r.collective == Collective::Halo).map(|r| r.words).sum();
        assert_eq!(halo_words, 0.0);
        assert_eq!(c.words(), 2.0 * 0.75 * (384 * 64) as f64);

        // P = 1: only the two halo latency units survive
        let c = cost_domain_parallel(&pointwise, 1, 8.0).unwrap();
        assert_eq!(c.latency_units(), 2);
        assert_eq!(c.words(), 0.0);
    }

    #[test]
    fn domain_rejects_fc() {
        let net = NetworkSpec::fully_connected(&[4, 4], 1).unwrap();
        assert!(matches!(cost_domain_parallel(&net, 2, 1.0), Err(Error::NotConv { .. })));
    }

    #[test]
    fn hybrid_hand_value() {
        // |W| = 1200, d_1 = 10
        let net = NetworkSpec::fully_connected(&[120, 10], 1).unwrap();
        let c = cost_hybrid_15d(&net, 2, 3, 12.0);
        assert!((c.total(0.0, 1.0) - 820.0).abs() < 1e-9);
        let fwd = c.records().iter().find(|r| r.phase == Phase::Forward).unwrap();
        assert_eq!(fwd.words, 20.0);
        assert_eq!(fwd.group, CommGroup::Model(2));
        let wgt = c.records().iter().find(|r| r.phase == Phase::BackwardWeights).unwrap();
        assert_eq!(wgt.group, CommGroup::Batch(3));
    }

    #[test]
    fn hybrid_reduces_to_pure_forms() {
        let net = alexnet_preset();
        for p in [1, 2, 3, 8, 512] {
            assert_eq!(cost_hybrid_15d(&net, 1, p, 2048.0), cost_batch_parallel(&net, p));
            assert_eq!(cost_hybrid_15d(&net, p, 1, 2048.0), cost_model_parallel(&net, p, 2048.0));
        }
    }

    #[test]
    fn integrated_reductions() {
        let net = alexnet_preset();
        let n = net.len();
        for (p_r, p_c) in [(1, 16), (2, 8), (4, 4), (16, 1)] {
            let all_model = GridConfig::uniform(p_r, p_c, n, Assignment::Model).unwrap();
            assert_eq!(cost_integrated(&net, &all_model, 256.0).unwrap(), cost_hybrid_15d(&net, p_r, p_c, 256.0));
        }
        let batch = GridConfig::uniform(1, 64, n, Assignment::BatchOnly).unwrap();
        assert_eq!(cost_integrated(&net, &batch, 256.0).unwrap(), cost_batch_parallel(&net, 64));
    }

    #[test]
    fn integrated_mixed_toy() {
        // conv 3x3 on 4x4x2 -> 4x4x3, then fc 48 -> 5
        let net = NetworkSpec::new(InputShape::new(4, 4, 2), vec![LayerDef::conv(3, 3, 1, 3), LayerDef::fc(5)], 1).unwrap();
        let grid = GridConfig::new(2, 4, vec![Assignment::Domain, Assignment::Model]).unwrap();
        let c = cost_integrated(&net, &grid, 16.0).unwrap();
        // hand evaluation, alpha = 0, beta = 1, B/p_c = 4
        let conv_halo_fwd = 4.0 * 4.0 * 2.0 * 1.0; // B/p_c * X_W * X_C * floor(3/2)
        let conv_halo_bwd = 4.0 * 4.0 * 3.0 * 1.0; // B/p_c * Y_W * Y_C * floor(3/2)
        let conv_weights = 2.0 * (7.0 / 8.0) * 54.0; // all P = 8 processes, |W| = 3*3*2*3
        let fc_fwd = 4.0 * 0.5 * 5.0;
        let fc_bwd = 2.0 * 4.0 * 0.5 * 48.0;
        let fc_weights = 2.0 * 0.75 * (240.0 / 2.0);
        let expected = conv_halo_fwd + conv_halo_bwd + conv_weights + fc_fwd + fc_bwd + fc_weights;
        assert!((c.total(0.0, 1.0) - expected).abs() < 1e-9);
        // latency: 1 + 1 + 2*3 | 1 + 2*1 + 2*2
        assert_eq!(c.latency_units(), 8 + 7);
    }

    #[test]
    fn integrated_rejects_domain_fc() {
        let net = NetworkSpec::fully_connected(&[4, 4], 1).unwrap();
        let grid = GridConfig::new(2, 2, vec![Assignment::Domain]).unwrap();
        assert!(cost_integrated(&net, &grid, 4.0).is_err());
    }

    #[test]
    fn redistribution_values() {
        let net = NetworkSpec::fully_connected(&[3, 10], 1).unwrap();
        assert_eq!(cost_redistribution(net.layer(0), 2, 8.0).total(1.0, 1.0), 41.0);
        assert_eq!(cost_redistribution(net.layer(0), 1, 8.0).total(1.0, 1.0), 0.0);
    }

    #[test]
    fn crossover_values() {
        let net = NetworkSpec::new(InputShape::new(13, 13, 384), vec![LayerDef::conv(3, 3, 1, 384)], 1).unwrap();
        let b = crossover_batch(net.layer(0)).unwrap();
        assert!((b - 6912.0 / 507.0).abs() < 1e-12);

        let net = NetworkSpec::new(InputShape::new(7, 5, 96), vec![LayerDef::conv(1, 1, 1, 24)], 1).unwrap();
        assert_eq!(crossover_batch(net.layer(0)).unwrap(), 2.0 * 96.0 / (3.0 * 35.0));

        let fc = NetworkSpec::fully_connected(&[4, 4], 1).unwrap();
        assert!(crossover_batch(fc.layer(0)).is_err());
    }

    #[test]
    fn summa_words() {
        let net = NetworkSpec::fully_connected(&[10, 10], 1).unwrap();
        let c = cost_2d_stationary_a(net.layer(0), 2, 3, 6.0);
        assert_eq!(c.words(), 80.0);
        assert_eq!(c.latency_units(), 4);
        let far = cost_2d_stationary_a(net.layer(0), 1 << 40, 3, 6.0).words();
        assert!((far - 20.0).abs() < 1e-9);
    }

    #[test]
    fn memory_extremes() {
        let net = NetworkSpec::fully_connected(&[3, 4], 1).unwrap(); // |W| = 12
        let g = GridConfig::uniform(2, 1, 1, Assignment::Model).unwrap();
        assert_eq!(memory_footprint(&net, &g, 1.0).unwrap().weights, 6.0);

        let net = alexnet_preset();
        let n = net.len();
        let pure_batch = GridConfig::uniform(1, 32, n, Assignment::Model).unwrap();
        let m = memory_footprint(&net, &pure_batch, 64.0).unwrap();
        assert_eq!(m.weights, net.total_weights() as f64);

        let pure_model = GridConfig::uniform(32, 1, n, Assignment::Model).unwrap();
        let m = memory_footprint(&net, &pure_model, 64.0).unwrap();
        let full: f64 = net.dims().iter().map(|d| 64.0 * (d.d_in + d.d_out) as f64).sum();
        assert_eq!(m.activations, full);
    }
}
