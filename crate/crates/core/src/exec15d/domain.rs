use crate::error::{Error, Result};
use crate::simgrid::{GridTopology, HaloSend, SimGrid};

/// Dense `N x H x W x C` tensor, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c, data: vec![0.0; n * h * w * c] }
    }

    pub fn from_fn(n: usize, h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * h * w * c);
        for s in 0..n {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data.push(f(s, y, x, ch));
                    }
                }
            }
        }
        Self { n, h, w, c, data }
    }

    fn idx(&self, s: usize, y: usize, x: usize, ch: usize) -> usize {
        ((s * self.h + y) * self.w + x) * self.c + ch
    }

    pub fn get(&self, s: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.idx(s, y, x, ch)]
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    fn row_len(&self) -> usize {
        self.w * self.c
    }

    /// Rows `start..start + len` of every sample, concatenated.
    fn rows(&self, start: usize, len: usize) -> Vec<f64> {
        let rl = self.row_len();
        let mut out = Vec::with_capacity(self.n * len * rl);
        for s in 0..self.n {
            let base = s * self.h * rl;
            out.extend_from_slice(&self.data[base + start * rl..base + (start + len) * rl]);
        }
        out
    }

    fn sub(&self, samples: std::ops::Range<usize>, rows: std::ops::Range<usize>) -> Tensor4 {
        let (s0, y0) = (samples.start, rows.start);
        Tensor4::from_fn(samples.len(), rows.len(), self.w, self.c, |s, y, x, ch| self.get(s0 + s, y0 + y, x, ch))
    }

    /// `||self - reference|| / ||reference||`.
    pub fn rel_error(&self, reference: &Tensor4) -> f64 {
        rel_error(&self.data, &reference.data, self.shape() == reference.shape())
    }
}

fn rel_error(a: &[f64], b: &[f64], same_shape: bool) -> f64 {
    if !same_shape || a.len() != b.len() {
        return f64::INFINITY;
    }
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Square `k x k` kernel with odd `k`, stored `[i][j][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<f64>,
}

impl ConvKernel {
    pub fn new(k: usize, c_in: usize, c_out: usize, weights: Vec<f64>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Unsupported(format!("kernel size {k}: only odd kernels are executed")));
        }
        if weights.len() != k * k * c_in * c_out {
            return Err(Error::Shape(format!("{} weights for a {k}x{k}x{c_in}x{c_out} kernel", weights.len())));
        }
        Ok(Self { k, c_in, c_out, weights })
    }

    pub fn halo(&self) -> usize {
        self.k / 2
    }

    fn idx(&self, i: usize, j: usize, ci: usize, co: usize) -> usize {
        ((i * self.k + j) * self.c_in + ci) * self.c_out + co
    }

    pub fn get(&self, i: usize, j: usize, ci: usize, co: usize) -> f64 {
        self.weights[self.idx(i, j, ci, co)]
    }

    pub fn rel_error(&self, reference: &ConvKernel) -> f64 {
        rel_error(&self.weights, &reference.weights, (self.k, self.c_in, self.c_out) == (reference.k, reference.c_in, reference.c_out))
    }
}

/// Output rows from an input extended by `k/2` rows above and below;
/// columns are zero padded. Output row `y` reads extended rows `y..y + k`.
fn conv_extended(ext: &Tensor4, kernel: &ConvKernel, out_rows: usize) -> Tensor4 {
    let h = kernel.halo() as isize;
    let mut out = Tensor4::zeros(ext.n, out_rows, ext.w, kernel.c_out);
    for s in 0..ext.n {
        for y in 0..out_rows {
            for x in 0..ext.w {
                let o = out.idx(s, y, x, 0);
                for i in 0..kernel.k {
                    for j in 0..kernel.k {
                        let xx = x as isize + j as isize - h;
                        if xx < 0 || xx >= ext.w as isize {
                            continue;
                        }
                        for ci in 0..kernel.c_in {
                            let v = ext.get(s, y + i, xx as usize, ci);
                            for co in 0..kernel.c_out {
                                out.data[o + co] += kernel.get(i, j, ci, co) * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Input gradient rows from an output gradient extended by `k/2` rows:
/// `dX[y] = sum_i K[i] dY[y - i + k/2]`, i.e. extended row `y + k - 1 - i`.
fn conv_transpose_extended(ext: &Tensor4, kernel: &ConvKernel, out_rows: usize) -> Tensor4 {
    let h = kernel.halo() as isize;
    let mut out = Tensor4::zeros(ext.n, out_rows, ext.w, kernel.c_in);
    for s in 0..ext.n {
        for y in 0..out_rows {
            for x in 0..ext.w {
                let o = out.idx(s, y, x, 0);
                for i in 0..kernel.k {
                    for j in 0..kernel.k {
                        let xx = x as isize - j as isize + h;
                        if xx < 0 || xx >= ext.w as isize {
                            continue;
                        }
                        let yy = y + kernel.k - 1 - i;
                        for co in 0..kernel.c_out {
                            let g = ext.get(s, yy, xx as usize, co);
                            for ci in 0..kernel.c_in {
                                out.data[o + ci] += kernel.get(i, j, ci, co) * g;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Partial kernel gradient from an extended input and the matching output
/// gradient rows.
fn kernel_grad_extended(ext: &Tensor4, dy: &Tensor4, k: usize) -> Vec<f64> {
    let (c_in, c_out) = (ext.c, dy.c);
    let h = (k / 2) as isize;
    let mut g = vec![0.0; k * k * c_in * c_out];
    for s in 0..dy.n {
        for y in 0..dy.h {
            for x in 0..dy.w {
                for i in 0..k {
                    for j in 0..k {
                        let xx = x as isize + j as isize - h;
                        if xx < 0 || xx >= ext.w as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            let v = ext.get(s, y + i, xx as usize, ci);
                            let base = ((i * k + j) * c_in + ci) * c_out;
                            for co in 0..c_out {
                                g[base + co] += v * dy.get(s, y, x, co);
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

fn pad_rows(t: &Tensor4, h: usize) -> Tensor4 {
    Tensor4::from_fn(t.n, t.h + 2 * h, t.w, t.c, |s, y, x, ch| {
        if y < h || y >= t.h + h {
            0.0
        } else {
            t.get(s, y - h, x, ch)
        }
    })
}

/// Sequential "same" convolution, stride 1.
pub fn conv2d_same(x: &Tensor4, kernel: &ConvKernel) -> Tensor4 {
    conv_extended(&pad_rows(x, kernel.halo()), kernel, x.h)
}

pub fn conv2d_backward_data(dy: &Tensor4, kernel: &ConvKernel) -> Tensor4 {
    conv_transpose_extended(&pad_rows(dy, kernel.halo()), kernel, dy.h)
}

pub fn conv2d_backward_weights(x: &Tensor4, dy: &Tensor4, kernel_size: usize) -> Vec<f64> {
    kernel_grad_extended(&pad_rows(x, kernel_size / 2), dy, kernel_size)
}

/// A batch of images split by sample over `p_c` and by height over `p_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainImage {
    topo: GridTopology,
    shape: (usize, usize, usize, usize),
    /// Indexed by rank id.
    locals: Vec<Tensor4>,
}

impl DomainImage {
    pub fn scatter(images: &Tensor4, topo: GridTopology) -> Result<Self> {
        let (n, h, _, _) = images.shape();
        if n % topo.p_c() != 0 {
            return Err(Error::Divisibility(format!("batch {n} is not divisible by p_c = {}", topo.p_c())));
        }
        if h % topo.p_r() != 0 {
            return Err(Error::Divisibility(format!("height {h} is not divisible by p_r = {}", topo.p_r())));
        }
        let (bn, bh) = (n / topo.p_c(), h / topo.p_r());
        let locals = topo
            .ranks()
            .map(|k| {
                let (r, c) = topo.coords(k);
                images.sub(c * bn..(c + 1) * bn, r * bh..(r + 1) * bh)
            })
            .collect();
        Ok(Self { topo, shape: images.shape(), locals })
    }

    pub fn gather(&self) -> Tensor4 {
        let (n, h, w, c) = self.shape;
        let (bn, bh) = (n / self.topo.p_c(), h / self.topo.p_r());
        Tensor4::from_fn(n, h, w, c, |s, y, x, ch| {
            let k = self.topo.rank(y / bh, s / bn);
            self.locals[k].get(s % bn, y % bh, x, ch)
        })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.shape
    }

    pub fn local(&self, rank: usize) -> &Tensor4 {
        &self.locals[rank]
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topo
    }

    fn local_height(&self) -> usize {
        self.shape.1 / self.topo.p_r()
    }

    pub fn zip_map(&self, other: &DomainImage, f: impl Fn(f64, f64) -> f64) -> Result<DomainImage> {
        if self.shape != other.shape || self.topo != other.topo {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let locals = self
            .locals
            .iter()
            .zip(&other.locals)
            .map(|(a, b)| Tensor4 { data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(), ..a.clone() })
            .collect();
        Ok(Self { locals, ..self.clone() })
    }
}

/// Local tensors extended by `halo` rows from the chain neighbours (zeros at
/// the top and bottom of the image).
fn exchange_rows(sim: &mut SimGrid, img: &DomainImage, halo: usize) -> Result<Vec<Tensor4>> {
    let topo = img.topo;
    if topo.p_r() > 1 && img.local_height() < halo {
        return Err(Error::Unsupported(format!(
            "local height {} is smaller than the halo {halo}",
            img.local_height()
        )));
    }
    let mut ext = vec![Tensor4::zeros(0, 0, 0, 0); topo.size()];
    for c in 0..topo.p_c() {
        let chain = topo.row_comm(c);
        let sends = chain
            .members()
            .iter()
            .map(|&k| {
                let t = &img.locals[k];
                HaloSend { to_prev: t.rows(0, halo), to_next: t.rows(t.h - halo, halo) }
            })
            .collect();
        let recvs = sim.halo_exchange(&chain, sends)?;
        for (&k, recv) in chain.members().iter().zip(recvs) {
            let t = &img.locals[k];
            let rl = t.row_len();
            let above = recv.from_prev.unwrap_or_else(|| vec![0.0; t.n * halo * rl]);
            let below = recv.from_next.unwrap_or_else(|| vec![0.0; t.n * halo * rl]);
            let mut data = Vec::with_capacity(t.n * (t.h + 2 * halo) * rl);
            let per = halo * rl;
            for s in 0..t.n {
                data.extend_from_slice(&above[s * per..(s + 1) * per]);
                data.extend_from_slice(&t.data[s * t.h * rl..(s + 1) * t.h * rl]);
                data.extend_from_slice(&below[s * per..(s + 1) * per]);
            }
            ext[k] = Tensor4 { n: t.n, h: t.h + 2 * halo, w: t.w, c: t.c, data };
        }
    }
    Ok(ext)
}

/// Forward output plus the halo-extended inputs kept for the weight gradient.
#[derive(Debug, Clone)]
pub struct DomainForward {
    pub output: DomainImage,
    extended: Vec<Tensor4>,
}

pub fn domain_conv_forward(sim: &mut SimGrid, x: &DomainImage, kernel: &ConvKernel) -> Result<DomainImage> {
    Ok(domain_conv_forward_cached(sim, x, kernel)?.output)
}

pub fn domain_conv_forward_cached(sim: &mut SimGrid, x: &DomainImage, kernel: &ConvKernel) -> Result<DomainForward> {
    check(sim, x, kernel.c_in, "input")?;
    let extended = exchange_rows(sim, x, kernel.halo())?;
    let bh = x.local_height();
    let locals = extended.iter().map(|e| conv_extended(e, kernel, bh)).collect();
    let (n, h, w, _) = x.shape;
    Ok(DomainForward { output: DomainImage { topo: x.topo, shape: (n, h, w, kernel.c_out), locals }, extended })
}

/// Input gradient; needs a halo of the output gradient.
pub fn domain_conv_backward_data(sim: &mut SimGrid, dy: &DomainImage, kernel: &ConvKernel) -> Result<DomainImage> {
    check(sim, dy, kernel.c_out, "output gradient")?;
    let ext = exchange_rows(sim, dy, kernel.halo())?;
    let bh = dy.local_height();
    let locals = ext.iter().map(|e| conv_transpose_extended(e, kernel, bh)).collect();
    let (n, h, w, _) = dy.shape;
    Ok(DomainImage { topo: dy.topo, shape: (n, h, w, kernel.c_in), locals })
}

/// Kernel gradient: local partial sums, then an all-reduce over every rank.
pub fn domain_conv_backward_weights(sim: &mut SimGrid, fwd: &DomainForward, dy: &DomainImage, kernel: &ConvKernel) -> Result<ConvKernel> {
    check(sim, dy, kernel.c_out, "output gradient")?;
    if dy.shape != fwd.output.shape {
        return Err(Error::Shape(format!("gradient {:?} vs output {:?}", dy.shape, fwd.output.shape)));
    }
    let topo = dy.topo;
    let partial: Vec<Vec<f64>> =
        topo.ranks().map(|k| kernel_grad_extended(&fwd.extended[k], &dy.locals[k], kernel.k)).collect();
    let summed = sim.allreduce_sum(&topo.world(), partial)?;
    let weights = summed.into_iter().next().expect("grid has at least one rank");
    ConvKernel::new(kernel.k, kernel.c_in, kernel.c_out, weights)
}

fn check(sim: &SimGrid, img: &DomainImage, channels: usize, name: &str) -> Result<()> {
    if img.topo != *sim.topology() {
        return Err(Error::Shape(format!("{name} lives on a different grid")));
    }
    if img.shape.3 != channels {
        return Err(Error::Shape(format!("{name} has {} channels, kernel expects {channels}", img.shape.3)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(ConvKernel::new(2, 1, 1, vec![0.0; 4]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn pointwise_kernel_moves_nothing() {
        let mut sim = SimGrid::new(GridTopology::new(2, 1).unwrap());
        let x = Tensor4::from_fn(1, 4, 3, 1, |_, y, x, _| (y * 3 + x) as f64);
        let k = ConvKernel::new(1, 1, 1, vec![2.0]).unwrap();
        let img = DomainImage::scatter(&x, *sim.topology()).unwrap();
        let y = domain_conv_forward(&mut sim, &img, &k).unwrap().gather();
        assert_eq!(y.data, x.data.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        assert_eq!(sim.ledger().total_words(), 0);
    }

    #[test]
    fn averaging_kernel_two_ranks() {
        let mut sim = SimGrid::new(GridTopology::new(2, 1).unwrap());
        let x = Tensor4::from_fn(1, 8, 8, 1, |_, y, x, _| ((y * 7 + x * 3) % 5) as f64);
        let k = ConvKernel::new(3, 1, 1, vec![1.0 / 9.0; 9]).unwrap();
        let img = DomainImage::scatter(&x, *sim.topology()).unwrap();
        let y = domain_conv_forward(&mut sim, &img, &k).unwrap().gather();
        assert!(y.rel_error(&conv2d_same(&x, &k)) < 1e-14);
        let call = &sim.ledger().calls()[0];
        assert!(call.per_rank.values().all(|t| t.words_received == 8 && t.messages == 1));
    }

    #[test]
    fn scatter_gather_round_trip() {
        let t = GridTopology::new(2, 2).unwrap();
        let x = Tensor4::from_fn(4, 6, 3, 2, |s, y, x, c| (s * 1000 + y * 100 + x * 10 + c) as f64);
        assert_eq!(DomainImage::scatter(&x, t).unwrap().gather(), x);
        assert!(matches!(DomainImage::scatter(&Tensor4::zeros(3, 6, 1, 1), t), Err(Error::Divisibility(_))));
    }
}
