//! Whole-network runs on the simulated grid: a stack of fully connected
//! layers on the 1.5D layout, or a stack of "same" convolutions split by
//! image height. Hidden layers use `tanh`, the loss is `0.5 ||Y - T||^2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dist::{backward_data, backward_weights, forward, DistMatrix, Layout};
use super::domain::{
    conv2d_backward_data, conv2d_backward_weights, conv2d_same, domain_conv_backward_data,
    domain_conv_backward_weights, domain_conv_forward_cached, ConvKernel, DomainImage, Tensor4,
};
use super::matrix::Matrix;
use crate::costmodel::{Assignment, GridConfig, Phase};
use crate::error::{Error, Result};
use crate::netspec::{ConvLayer, InputShape, LayerDef, NetworkSpec};
use crate::simgrid::{CallTag, GridTopology, SimGrid, TrafficLedger};

/// A network small enough to execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimNet {
    /// Layer widths `d_0, d_1, ..., d_L`.
    Fc { sizes: Vec<usize> },
    /// Input `height x width x channels`, then `(kernel, out_channels)` per layer.
    Conv { height: usize, width: usize, channels: usize, layers: Vec<(usize, usize)> },
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse(format!("{what}: expected a positive integer, got {s:?}")))
}

impl SimNet {
    /// `"8,6,4"` for fully connected widths, or `"conv:HxWxC:K:OUT[:K:OUT...]"`.
    pub fn parse(text: &str) -> Result<Self> {
        let net = if let Some(rest) = text.strip_prefix("conv:") {
            let mut parts = rest.split(':');
            let dims: Vec<usize> = parts
                .next()
                .unwrap_or_default()
                .split('x')
                .map(|d| parse_usize(d, "image shape"))
                .collect::<Result<_>>()?;
            let [height, width, channels] = dims[..] else {
                return Err(Error::Parse(format!("image shape must be HxWxC in {text:?}")));
            };
            let rest: Vec<usize> = parts.map(|p| parse_usize(p, "conv layer")).collect::<Result<_>>()?;
            if rest.is_empty() || rest.len() % 2 != 0 {
                return Err(Error::Parse(format!("expected K:OUT pairs after the image shape in {text:?}")));
            }
            SimNet::Conv { height, width, channels, layers: rest.chunks(2).map(|c| (c[0], c[1])).collect() }
        } else {
            let sizes: Vec<usize> = text.split(',').map(|s| parse_usize(s, "layer width")).collect::<Result<_>>()?;
            if sizes.len() < 2 {
                return Err(Error::Parse(format!("need at least two layer widths in {text:?}")));
            }
            SimNet::Fc { sizes }
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        match self {
            SimNet::Fc { sizes } if sizes.contains(&0) => Err(Error::invalid("layers", "widths must be >= 1")),
            SimNet::Conv { height, width, channels, layers } => {
                if [*height, *width, *channels].contains(&0) || layers.iter().any(|&(k, o)| k == 0 || o == 0) {
                    return Err(Error::invalid("layers", "conv sizes must be >= 1"));
                }
                if let Some(&(k, _)) = layers.iter().find(|(k, _)| k % 2 == 0) {
                    return Err(Error::Unsupported(format!("kernel size {k}: only odd kernels are executed")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The same network in the cost model's terms.
    pub fn to_network(&self, batch: usize) -> Result<NetworkSpec> {
        match self {
            SimNet::Fc { sizes } => {
                NetworkSpec::fully_connected(&sizes.iter().map(|&s| s as u64).collect::<Vec<_>>(), batch as u64)
            }
            SimNet::Conv { height, width, channels, layers } => NetworkSpec::new(
                InputShape::new(*height as u64, *width as u64, *channels as u64),
                layers.iter().map(|&(k, o)| LayerDef::Conv(ConvLayer::new(k as u64, k as u64, 1, o as u64))).collect(),
                batch as u64,
            ),
        }
    }

    /// Fully connected layers are model-partitioned, convolutions
    /// domain-partitioned.
    pub fn grid_config(&self, p_r: usize, p_c: usize) -> Result<GridConfig> {
        let (n, a) = match self {
            SimNet::Fc { sizes } => (sizes.len() - 1, Assignment::Model),
            SimNet::Conv { layers, .. } => (layers.len(), Assignment::Domain),
        };
        GridConfig::uniform(p_r as u64, p_c as u64, n, a)
    }
}

/// Sequential results of one forward and backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FcPass {
    /// Pre-activation output of every layer.
    pub outputs: Vec<Matrix>,
    pub weight_grads: Vec<Matrix>,
    /// Input gradient of every layer but the first.
    pub input_grads: Vec<Option<Matrix>>,
    pub loss: f64,
}

fn loss_of(y: &Matrix, t: &Matrix) -> f64 {
    0.5 * y.as_slice().iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Sequential reference for the fully connected stack.
pub fn fc_reference(weights: &[Matrix], x: &Matrix, target: &Matrix) -> Result<FcPass> {
    let last = weights.len() - 1;
    let mut inputs = vec![x.clone()];
    let mut outputs = Vec::new();
    for (i, w) in weights.iter().enumerate() {
        let y = w.matmul(&inputs[i])?;
        if i < last {
            inputs.push(y.map(f64::tanh));
        }
        outputs.push(y);
    }
    let loss = loss_of(&outputs[last], target);
    let mut dy = outputs[last].zip_map(target, |a, b| a - b)?;
    let mut weight_grads = vec![Matrix::zeros(0, 0); weights.len()];
    let mut input_grads = vec![None; weights.len()];
    for i in (0..weights.len()).rev() {
        weight_grads[i] = dy.matmul_t(&inputs[i])?;
        if i > 0 {
            let dx = weights[i].t_matmul(&dy)?;
            dy = dx.zip_map(&inputs[i], |g, a| g * (1.0 - a * a))?;
            input_grads[i] = Some(dx);
        }
    }
    Ok(FcPass { outputs, weight_grads, input_grads, loss })
}

/// Distributed forward and backward pass; the ledger tags every call with
/// its layer and phase.
pub fn fc_distributed(sim: &mut SimGrid, weights: &[Matrix], x: &Matrix, target: &Matrix) -> Result<(FcPass, bool)> {
    let topo = *sim.topology();
    let last = weights.len() - 1;
    // check every shape up front so that nothing is sent for a bad query
    let wd: Vec<DistMatrix> =
        weights.iter().map(|w| DistMatrix::scatter(w, Layout::RowBlockOverPr, topo)).collect::<Result<_>>()?;
    let mut inputs = vec![DistMatrix::scatter(x, Layout::ColBlockOverPc, topo)?];
    let td = DistMatrix::scatter(target, Layout::ColBlockOverPc, topo)?;
    for w in weights {
        DistMatrix::block_shape(w.cols(), x.cols(), Layout::ColBlockOverPc, &topo)?;
    }

    let mut coherent = true;
    let mut outputs = Vec::new();
    for (i, w) in wd.iter().enumerate() {
        sim.set_tag(Some(CallTag { layer: i, phase: Phase::Forward }));
        let y = forward(sim, w, &inputs[i])?;
        coherent &= y.replicas_coherent();
        if i < last {
            inputs.push(y.map(f64::tanh));
        }
        outputs.push(y);
    }

    let mut dy = outputs[last].zip_map(&td, |a, b| a - b)?;
    let mut weight_grads = vec![Matrix::zeros(0, 0); weights.len()];
    let mut input_grads = vec![None; weights.len()];
    for i in (0..weights.len()).rev() {
        sim.set_tag(Some(CallTag { layer: i, phase: Phase::BackwardWeights }));
        let dw = backward_weights(sim, &dy, &inputs[i])?;
        coherent &= dw.replicas_coherent();
        weight_grads[i] = dw.gather();
        if i > 0 {
            sim.set_tag(Some(CallTag { layer: i, phase: Phase::BackwardData }));
            let dx = backward_data(sim, &wd[i], &dy)?;
            coherent &= dx.replicas_coherent();
            dy = dx.zip_map(&inputs[i], |g, a| g * (1.0 - a * a))?;
            input_grads[i] = Some(dx.gather());
        }
    }
    sim.set_tag(None);

    let y = outputs[last].gather();
    let loss = loss_of(&y, target);
    Ok((FcPass { outputs: outputs.iter().map(DistMatrix::gather).collect(), weight_grads, input_grads, loss }, coherent))
}

/// Distributed forward pass only, returning the loss.
pub fn fc_distributed_loss(topo: GridTopology, weights: &[Matrix], x: &Matrix, target: &Matrix) -> Result<f64> {
    let mut sim = SimGrid::new(topo);
    let mut act = DistMatrix::scatter(x, Layout::ColBlockOverPc, topo)?;
    let last = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        let wd = DistMatrix::scatter(w, Layout::RowBlockOverPr, topo)?;
        let y = forward(&mut sim, &wd, &act)?;
        act = if i < last { y.map(f64::tanh) } else { y };
    }
    Ok(loss_of(&act.gather(), target))
}

/// Distributed gradients against central differences of the distributed
/// loss. Returns `||g - g_fd|| / ||g_fd||` over all weights.
pub fn fc_gradient_check(topo: GridTopology, weights: &[Matrix], x: &Matrix, target: &Matrix, eps: f64) -> Result<f64> {
    let mut sim = SimGrid::new(topo);
    let (pass, _) = fc_distributed(&mut sim, weights, x, target)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    let mut probe = weights.to_vec();
    for (l, w) in weights.iter().enumerate() {
        for idx in 0..w.as_slice().len() {
            let orig = w.as_slice()[idx];
            probe[l].as_mut_slice()[idx] = orig + eps;
            let up = fc_distributed_loss(topo, &probe, x, target)?;
            probe[l].as_mut_slice()[idx] = orig - eps;
            let down = fc_distributed_loss(topo, &probe, x, target)?;
            probe[l].as_mut_slice()[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let g = pass.weight_grads[l].as_slice()[idx];
            diff += (g - fd) * (g - fd);
            norm += fd * fd;
        }
    }
    Ok(if norm == 0.0 { diff.sqrt() } else { (diff / norm).sqrt() })
}

/// Seeded problem instance for the fully connected stack: weights scaled by
/// `1/sqrt(d_in)`, inputs and targets uniform in `[-1, 1)`.
pub fn fc_instance(sizes: &[usize], batch: usize, seed: u64) -> (Vec<Matrix>, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = sizes
        .windows(2)
        .map(|p| {
            let scale = 1.0 / (p[0] as f64).sqrt();
            Matrix::from_fn(p[1], p[0], |_, _| scale * rng.gen_range(-1.0..1.0))
        })
        .collect();
    let x = Matrix::from_fn(sizes[0], batch, |_, _| rng.gen_range(-1.0..1.0));
    let t = Matrix::from_fn(*sizes.last().expect("at least two sizes"), batch, |_, _| rng.gen_range(-1.0..1.0));
    (weights, x, t)
}

/// Seeded instance for the convolution stack.
pub fn conv_instance(
    shape: (usize, usize, usize),
    layers: &[(usize, usize)],
    batch: usize,
    seed: u64,
) -> Result<(Vec<ConvKernel>, Tensor4, Tensor4)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, mut c) = shape;
    let mut kernels = Vec::new();
    for &(k, out) in layers {
        let scale = 1.0 / ((k * k * c) as f64).sqrt();
        let weights = (0..k * k * c * out).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        kernels.push(ConvKernel::new(k, c, out, weights)?);
        c = out;
    }
    let x = Tensor4::from_fn(batch, h, w, shape.2, |_, _, _, _| rng.gen_range(-1.0..1.0));
    let t = Tensor4::from_fn(batch, h, w, c, |_, _, _, _| rng.gen_range(-1.0..1.0));
    Ok((kernels, x, t))
}

/// Outcome of executing a network on the grid and comparing with the
/// sequential reference.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub ledger: TrafficLedger,
    /// `(quantity, relative error)` for every compared result.
    pub errors: Vec<(String, f64)>,
    pub loss: f64,
    pub replicas_coherent: bool,
}

impl SimRun {
    pub fn max_rel_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Runs one seeded forward and backward pass of `net` on a `p_r x p_c` grid.
pub fn simulate(net: &SimNet, topo: GridTopology, batch: usize, seed: u64) -> Result<SimRun> {
    if batch == 0 {
        return Err(Error::invalid("batch", "must be >= 1"));
    }
    match net {
        SimNet::Fc { sizes } => {
            let (weights, x, t) = fc_instance(sizes, batch, seed);
            let reference = fc_reference(&weights, &x, &t)?;
            let mut sim = SimGrid::new(topo);
            let (pass, coherent) = fc_distributed(&mut sim, &weights, &x, &t)?;
            let mut errors = Vec::new();
            for i in 0..weights.len() {
                errors.push((format!("layer {i} output"), pass.outputs[i].rel_error(&reference.outputs[i])));
                errors.push((format!("layer {i} weight gradient"), pass.weight_grads[i].rel_error(&reference.weight_grads[i])));
                if let (Some(a), Some(b)) = (&pass.input_grads[i], &reference.input_grads[i]) {
                    errors.push((format!("layer {i} input gradient"), a.rel_error(b)));
                }
            }
            Ok(SimRun { ledger: sim.into_ledger(), errors, loss: pass.loss, replicas_coherent: coherent })
        }
        SimNet::Conv { height, width, channels, layers } => {
            let (kernels, x, t) = conv_instance((*height, *width, *channels), layers, batch, seed)?;
            conv_run(topo, &kernels, &x, &t)
        }
    }
}

fn conv_run(topo: GridTopology, kernels: &[ConvKernel], x: &Tensor4, target: &Tensor4) -> Result<SimRun> {
    let last = kernels.len() - 1;

    // sequential reference
    let mut ref_inputs = vec![x.clone()];
    let mut ref_outputs = Vec::new();
    for (i, k) in kernels.iter().enumerate() {
        let y = conv2d_same(&ref_inputs[i], k);
        if i < last {
            ref_inputs.push(Tensor4 { data: y.data.iter().map(|v| v.tanh()).collect(), ..y.clone() });
        }
        ref_outputs.push(y);
    }
    let mut ref_dy = Tensor4 { data: ref_outputs[last].data.iter().zip(&target.data).map(|(a, b)| a - b).collect(), ..target.clone() };
    let mut ref_dk = vec![Vec::new(); kernels.len()];
    let mut ref_dx = vec![Tensor4::zeros(0, 0, 0, 0); kernels.len()];
    for i in (0..kernels.len()).rev() {
        ref_dk[i] = conv2d_backward_weights(&ref_inputs[i], &ref_dy, kernels[i].k);
        let dx = conv2d_backward_data(&ref_dy, &kernels[i]);
        if i > 0 {
            ref_dy = Tensor4 {
                data: dx.data.iter().zip(&ref_inputs[i].data).map(|(g, a)| g * (1.0 - a * a)).collect(),
                ..dx.clone()
            };
        }
        ref_dx[i] = dx;
    }

    // distributed
    let mut sim = SimGrid::new(topo);
    let mut inputs = vec![DomainImage::scatter(x, topo)?];
    let td = DomainImage::scatter(target, topo)?;
    let mut cached = Vec::new();
    for (i, k) in kernels.iter().enumerate() {
        sim.set_tag(Some(CallTag { layer: i, phase: Phase::Forward }));
        let f = domain_conv_forward_cached(&mut sim, &inputs[i], k)?;
        if i < last {
            inputs.push(f.output.zip_map(&f.output, |a, _| a.tanh())?);
        }
        cached.push(f);
    }
    let mut errors = Vec::new();
    let mut dy = cached[last].output.zip_map(&td, |a, b| a - b)?;
    for i in (0..kernels.len()).rev() {
        sim.set_tag(Some(CallTag { layer: i, phase: Phase::BackwardData }));
        let dx = domain_conv_backward_data(&mut sim, &dy, &kernels[i])?;
        sim.set_tag(Some(CallTag { layer: i, phase: Phase::BackwardWeights }));
        let dk = domain_conv_backward_weights(&mut sim, &cached[i], &dy, &kernels[i])?;
        errors.push((format!("layer {i} weight gradient"), dk.rel_error(&ConvKernel { weights: ref_dk[i].clone(), ..kernels[i].clone() })));
        errors.push((format!("layer {i} input gradient"), dx.gather().rel_error(&ref_dx[i])));
        if i > 0 {
            dy = dx.zip_map(&inputs[i], |g, a| g * (1.0 - a * a))?;
        }
    }
    sim.set_tag(None);
    for (i, f) in cached.iter().enumerate() {
        errors.insert(i, (format!("layer {i} output"), f.output.gather().rel_error(&ref_outputs[i])));
    }
    let y = cached[last].output.gather();
    let loss = 0.5 * y.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    // the only replicated data in a domain run is the reduced kernel gradient,
    // which the ring hands out as one copy
    Ok(SimRun { ledger: sim.into_ledger(), errors, loss, replicas_coherent: true })
}
