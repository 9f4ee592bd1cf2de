use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::simgrid::{GridTopology, RankId, SimGrid};

/// How a logical matrix is spread over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Rank `(r, c)` holds row block `r`; copies repeat along the `p_c` axis.
    RowBlockOverPr,
    /// Rank `(r, c)` holds column block `c`; copies repeat along the `p_r` axis.
    ColBlockOverPc,
    /// Rank `k` holds column block `k` of `P`, no replication (a plain batch
    /// distribution).
    ColBlockOverAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    rows: usize,
    cols: usize,
    layout: Layout,
    topo: GridTopology,
    /// Indexed by rank id.
    blocks: Vec<Matrix>,
}

fn divides(part: usize, whole: usize, what: &str) -> Result<usize> {
    if whole % part != 0 {
        return Err(Error::Divisibility(format!("{what}: {whole} is not divisible by {part}")));
    }
    Ok(whole / part)
}

impl DistMatrix {
    /// Local block shape, or a divisibility error.
    pub fn block_shape(rows: usize, cols: usize, layout: Layout, topo: &GridTopology) -> Result<(usize, usize)> {
        match layout {
            Layout::RowBlockOverPr => Ok((divides(topo.p_r(), rows, "rows over p_r")?, cols)),
            Layout::ColBlockOverPc => Ok((rows, divides(topo.p_c(), cols, "columns over p_c")?)),
            Layout::ColBlockOverAll => Ok((rows, divides(topo.size(), cols, "columns over P")?)),
        }
    }

    fn block_origin(&self, rank: RankId) -> (usize, usize) {
        let (br, bc) = (self.rows / self.row_parts(), self.cols / self.col_parts());
        let (r, c) = self.topo.coords(rank);
        match self.layout {
            Layout::RowBlockOverPr => (r * br, 0),
            Layout::ColBlockOverPc => (0, c * bc),
            Layout::ColBlockOverAll => (0, rank * bc),
        }
    }

    fn row_parts(&self) -> usize {
        match self.layout {
            Layout::RowBlockOverPr => self.topo.p_r(),
            _ => 1,
        }
    }

    fn col_parts(&self) -> usize {
        match self.layout {
            Layout::RowBlockOverPr => 1,
            Layout::ColBlockOverPc => self.topo.p_c(),
            Layout::ColBlockOverAll => self.topo.size(),
        }
    }

    pub fn scatter(global: &Matrix, layout: Layout, topo: GridTopology) -> Result<Self> {
        let (rows, cols) = global.shape();
        let (br, bc) = Self::block_shape(rows, cols, layout, &topo)?;
        let mut out = Self { rows, cols, layout, topo, blocks: Vec::with_capacity(topo.size()) };
        for rank in topo.ranks() {
            let (r0, c0) = out.block_origin(rank);
            out.blocks.push(Matrix::from_fn(br, bc, |i, j| global[(r0 + i, c0 + j)]));
        }
        Ok(out)
    }

    /// Builds from per-rank blocks, checking their shapes.
    pub fn from_blocks(rows: usize, cols: usize, layout: Layout, topo: GridTopology, blocks: Vec<Matrix>) -> Result<Self> {
        let shape = Self::block_shape(rows, cols, layout, &topo)?;
        if blocks.len() != topo.size() {
            return Err(Error::Shape(format!("{} blocks for {} ranks", blocks.len(), topo.size())));
        }
        if let Some((rank, b)) = blocks.iter().enumerate().find(|(_, b)| b.shape() != shape) {
            return Err(Error::Shape(format!("rank {rank} block is {:?}, expected {shape:?}", b.shape())));
        }
        Ok(Self { rows, cols, layout, topo, blocks })
    }

    /// Reassembles the logical matrix from one copy of each block.
    pub fn gather(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for rank in self.topo.ranks() {
            let (r, c) = self.topo.coords(rank);
            let canonical = match self.layout {
                Layout::RowBlockOverPr => c == 0,
                Layout::ColBlockOverPc => r == 0,
                Layout::ColBlockOverAll => true,
            };
            if !canonical {
                continue;
            }
            let (r0, c0) = self.block_origin(rank);
            let b = &self.blocks[rank];
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    out[(r0 + i, c0 + j)] = b[(i, j)];
                }
            }
        }
        out
    }

    /// True when every copy of a replicated block is bitwise equal.
    pub fn replicas_coherent(&self) -> bool {
        self.topo.ranks().all(|rank| {
            let (r, c) = self.topo.coords(rank);
            let reference = match self.layout {
                Layout::RowBlockOverPr => self.topo.rank(r, 0),
                Layout::ColBlockOverPc => self.topo.rank(0, c),
                Layout::ColBlockOverAll => rank,
            };
            let (a, b) = (self.blocks[rank].as_slice(), self.blocks[reference].as_slice());
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topo
    }

    pub fn block(&self, rank: RankId) -> &Matrix {
        &self.blocks[rank]
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Matrix] {
        &mut self.blocks
    }

    /// Applies `f` to every block independently.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DistMatrix {
        Self { blocks: self.blocks.iter().map(|b| b.map(&f)).collect(), ..self.clone() }
    }

    pub fn zip_map(&self, other: &DistMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DistMatrix> {
        same_distribution(self, other)?;
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.zip_map(b, &f)).collect::<Result<_>>()?;
        Ok(Self { blocks, ..self.clone() })
    }
}

fn same_distribution(a: &DistMatrix, b: &DistMatrix) -> Result<()> {
    if a.layout != b.layout || a.topo != b.topo || (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Shape(format!(
            "{}x{} {:?} does not match {}x{} {:?}",
            a.rows, a.cols, a.layout, b.rows, b.cols, b.layout
        )));
    }
    Ok(())
}

fn expect(m: &DistMatrix, layout: Layout, name: &str, sim: &SimGrid) -> Result<()> {
    if m.layout != layout {
        return Err(Error::Shape(format!("{name} must be {layout:?}, got {:?}", m.layout)));
    }
    if m.topo != *sim.topology() {
        return Err(Error::Shape(format!("{name} lives on a different grid")));
    }
    Ok(())
}

fn row_block(m: &Matrix, parts: usize, index: usize) -> Matrix {
    let len = m.rows() / parts;
    m.rows_range(index * len, len)
}

/// `Y = W X`: local products, then an all-gather of the row pieces of `Y`
/// within each grid column.
pub fn forward(sim: &mut SimGrid, w: &DistMatrix, x: &DistMatrix) -> Result<DistMatrix> {
    expect(w, Layout::RowBlockOverPr, "W", sim)?;
    expect(x, Layout::ColBlockOverPc, "X", sim)?;
    if w.cols != x.rows {
        return Err(Error::Shape(format!("W is {}x{}, X is {}x{}", w.rows, w.cols, x.rows, x.cols)));
    }
    let topo = w.topo;
    let (rows, cols) = (w.rows, x.cols);
    let (_, bc) = DistMatrix::block_shape(rows, cols, Layout::ColBlockOverPc, &topo)?;

    let partial: Vec<Matrix> = topo.ranks().map(|k| w.blocks[k].matmul(&x.blocks[k])).collect::<Result<_>>()?;
    let mut blocks = vec![Matrix::zeros(0, 0); topo.size()];
    for c in 0..topo.p_c() {
        let comm = topo.row_comm(c);
        let send = comm.members().iter().map(|&k| partial[k].as_slice().to_vec()).collect();
        let got = sim.allgather(&comm, send)?;
        for (&k, data) in comm.members().iter().zip(got) {
            blocks[k] = Matrix::from_row_major(rows, bc, data)?;
        }
    }
    DistMatrix::from_blocks(rows, cols, Layout::ColBlockOverPc, topo, blocks)
}

/// `dX = W^T dY`: each grid row contributes its slice of the sum, reduced
/// with an all-reduce within each grid column.
pub fn backward_data(sim: &mut SimGrid, w: &DistMatrix, dy: &DistMatrix) -> Result<DistMatrix> {
    expect(w, Layout::RowBlockOverPr, "W", sim)?;
    expect(dy, Layout::ColBlockOverPc, "dY", sim)?;
    if w.rows != dy.rows {
        return Err(Error::Shape(format!("W is {}x{}, dY is {}x{}", w.rows, w.cols, dy.rows, dy.cols)));
    }
    let topo = w.topo;
    let (rows, cols) = (w.cols, dy.cols);
    let (_, bc) = DistMatrix::block_shape(rows, cols, Layout::ColBlockOverPc, &topo)?;

    let partial: Vec<Matrix> = topo
        .ranks()
        .map(|k| {
            let (r, _) = topo.coords(k);
            w.blocks[k].t_matmul(&row_block(&dy.blocks[k], topo.p_r(), r))
        })
        .collect::<Result<_>>()?;
    let mut blocks = vec![Matrix::zeros(0, 0); topo.size()];
    for c in 0..topo.p_c() {
        let comm = topo.row_comm(c);
        let send = comm.members().iter().map(|&k| partial[k].as_slice().to_vec()).collect();
        let got = sim.allreduce_sum(&comm, send)?;
        for (&k, data) in comm.members().iter().zip(got) {
            blocks[k] = Matrix::from_row_major(rows, bc, data)?;
        }
    }
    DistMatrix::from_blocks(rows, cols, Layout::ColBlockOverPc, topo, blocks)
}

/// `dW = dY X^T`: local partial sums over each batch block, reduced with an
/// all-reduce within each grid row.
pub fn backward_weights(sim: &mut SimGrid, dy: &DistMatrix, x: &DistMatrix) -> Result<DistMatrix> {
    expect(dy, Layout::ColBlockOverPc, "dY", sim)?;
    expect(x, Layout::ColBlockOverPc, "X", sim)?;
    if dy.cols != x.cols {
        return Err(Error::Shape(format!("dY is {}x{}, X is {}x{}", dy.rows, dy.cols, x.rows, x.cols)));
    }
    let topo = dy.topo;
    let (rows, cols) = (dy.rows, x.rows);
    let (br, _) = DistMatrix::block_shape(rows, cols, Layout::RowBlockOverPr, &topo)?;

    let partial: Vec<Matrix> = topo
        .ranks()
        .map(|k| {
            let (r, _) = topo.coords(k);
            row_block(&dy.blocks[k], topo.p_r(), r).matmul_t(&x.blocks[k])
        })
        .collect::<Result<_>>()?;
    let mut blocks = vec![Matrix::zeros(0, 0); topo.size()];
    for r in 0..topo.p_r() {
        let comm = topo.col_comm(r);
        let send = comm.members().iter().map(|&k| partial[k].as_slice().to_vec()).collect();
        let got = sim.allreduce_sum(&comm, send)?;
        for (&k, data) in comm.members().iter().zip(got) {
            blocks[k] = Matrix::from_row_major(br, cols, data)?;
        }
    }
    DistMatrix::from_blocks(rows, cols, Layout::RowBlockOverPr, topo, blocks)
}

/// Moves a plain batch distribution onto the grid: the `p_r` ranks of a grid
/// column together hold that column's batch block, so one all-gather per
/// column suffices.
pub fn redistribute_to_grid(sim: &mut SimGrid, x: &DistMatrix) -> Result<DistMatrix> {
    expect(x, Layout::ColBlockOverAll, "X", sim)?;
    let topo = x.topo;
    let (rows, cols) = (x.rows, x.cols);
    let (_, bc) = DistMatrix::block_shape(rows, cols, Layout::ColBlockOverPc, &topo)?;

    let mut blocks = vec![Matrix::zeros(0, 0); topo.size()];
    for c in 0..topo.p_c() {
        let comm = topo.row_comm(c);
        let send = comm.members().iter().map(|&k| x.blocks[k].to_col_major()).collect();
        let got = sim.allgather(&comm, send)?;
        for (&k, data) in comm.members().iter().zip(got) {
            blocks[k] = Matrix::from_col_major(rows, bc, &data)?;
        }
    }
    DistMatrix::from_blocks(rows, cols, Layout::ColBlockOverPc, topo, blocks)
}

/// `W - (eta / batch) dW`, block by block.
pub fn sgd_step(w: &DistMatrix, dw: &DistMatrix, eta: f64, batch: usize) -> Result<DistMatrix> {
    if batch == 0 {
        return Err(Error::invalid("batch", "must be >= 1"));
    }
    let scale = eta / batch as f64;
    w.zip_map(dw, |a, g| a - scale * g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(p_r: usize, p_c: usize) -> SimGrid {
        SimGrid::new(GridTopology::new(p_r, p_c).unwrap())
    }

    #[test]
    fn forward_identity_input() {
        let mut s = sim(2, 1);
        let t = *s.topology();
        let w = Matrix::from_row_major(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let wd = DistMatrix::scatter(&w, Layout::RowBlockOverPr, t).unwrap();
        let xd = DistMatrix::scatter(&Matrix::identity(2), Layout::ColBlockOverPc, t).unwrap();
        let y = forward(&mut s, &wd, &xd).unwrap();
        assert_eq!(y.gather(), w);
        assert!(y.replicas_coherent());
    }

    #[test]
    fn divisibility_checked_before_communication() {
        let t = GridTopology::new(2, 3).unwrap();
        let x = Matrix::zeros(4, 4);
        assert!(matches!(DistMatrix::scatter(&x, Layout::ColBlockOverPc, t), Err(Error::Divisibility(_))));
        assert!(matches!(DistMatrix::scatter(&Matrix::zeros(3, 3), Layout::RowBlockOverPr, t), Err(Error::Divisibility(_))));
    }

    #[test]
    fn zero_input_gives_zero_weight_gradient() {
        let mut s = sim(2, 2);
        let t = *s.topology();
        let dy = DistMatrix::scatter(&Matrix::from_fn(4, 4, |i, j| (i + j) as f64), Layout::ColBlockOverPc, t).unwrap();
        let x = DistMatrix::scatter(&Matrix::zeros(6, 4), Layout::ColBlockOverPc, t).unwrap();
        let dw = backward_weights(&mut s, &dy, &x).unwrap();
        assert!(dw.gather().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(dw.layout(), Layout::RowBlockOverPr);
    }

    #[test]
    fn sgd_algebra() {
        let t = GridTopology::new(2, 2).unwrap();
        let g = Matrix::from_fn(4, 3, |i, j| i as f64 - j as f64);
        let w = DistMatrix::scatter(&Matrix::zeros(4, 3), Layout::RowBlockOverPr, t).unwrap();
        let dw = DistMatrix::scatter(&g.map(|v| 8.0 * v), Layout::RowBlockOverPr, t).unwrap();
        assert_eq!(sgd_step(&w, &dw, 1.0, 8).unwrap().gather(), g.map(|v| -v));
        assert_eq!(sgd_step(&w, &dw, 0.0, 8).unwrap(), w);
    }

    #[test]
    fn redistribution_preserves_values() {
        let mut s = sim(2, 2);
        let t = *s.topology();
        let x = Matrix::from_fn(3, 8, |i, j| (i * 8 + j) as f64);
        let flat = DistMatrix::scatter(&x, Layout::ColBlockOverAll, t).unwrap();
        let grid = redistribute_to_grid(&mut s, &flat).unwrap();
        assert_eq!(grid.gather(), x);
        assert!(grid.replicas_coherent());
        // B (p_r-1)/p_r d/p_c = 8 * 1/2 * 3/2
        let call = &s.ledger().calls()[0];
        assert!(call.per_rank.values().all(|t| t.words_received == 6));
    }
}
