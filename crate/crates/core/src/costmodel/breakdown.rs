use std::fmt;

use super::HardwareModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Forward,
    /// Activation-gradient traffic (`dX = W^T dY`, backward halos).
    BackwardData,
    /// Weight-gradient traffic (`dW = dY X^T`).
    BackwardWeights,
}

impl Phase {
    pub fn is_backward(self) -> bool {
        !matches!(self, Phase::Forward)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Forward => "forward",
            Phase::BackwardData => "backward_data",
            Phase::BackwardWeights => "backward_weights",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Collective {
    AllGather,
    AllReduce,
    Halo,
    /// The aggregate of a stationary-A SUMMA multiply.
    Summa2d,
}

impl Collective {
    pub fn as_str(self) -> &'static str {
        match self {
            Collective::AllGather => "allgather",
            Collective::AllReduce => "allreduce",
            Collective::Halo => "halo",
            Collective::Summa2d => "summa2d",
        }
    }
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which processes take part in a collective.
///
/// `Model(n)` spans the `p_r` axis (ranks sharing a batch slice), `Batch(n)`
/// spans ranks holding replicas of the same weights: the `p_c` axis for
/// model-partitioned layers, every process for batch- or domain-parallel ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CommGroup {
    Model(u64),
    Batch(u64),
    Neighbors,
    Grid { p_r: u64, p_c: u64 },
}

impl fmt::Display for CommGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommGroup::Model(n) => write!(f, "model[{n}]"),
            CommGroup::Batch(n) => write!(f, "batch[{n}]"),
            CommGroup::Neighbors => f.write_str("neighbors"),
            CommGroup::Grid { p_r, p_c } => write!(f, "grid[{p_r}x{p_c}]"),
        }
    }
}

/// One alpha-beta term: `latency_units * alpha + words * beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRecord {
    pub layer: usize,
    pub phase: Phase,
    pub collective: Collective,
    pub group: CommGroup,
    pub latency_units: u64,
    pub words: f64,
}

impl CostRecord {
    pub fn seconds(&self, hw: &HardwareModel) -> f64 {
        self.latency_units as f64 * hw.alpha + self.words * hw.beta()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostBreakdown {
    records: Vec<CostRecord>,
}

impl CostBreakdown {
    pub fn new() -> Self {
        Self::default()
    }

    /// Terms that are identically zero are not stored.
    pub fn push(&mut self, record: CostRecord) {
        debug_assert!(record.words >= 0.0 && record.words.is_finite());
        if record.latency_units > 0 || record.words > 0.0 {
            self.records.push(record);
        }
    }

    pub fn extend(&mut self, other: CostBreakdown) {
        self.records.extend(other.records);
    }

    pub fn records(&self) -> &[CostRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn latency_units(&self) -> u64 {
        self.records.iter().map(|r| r.latency_units).sum()
    }

    pub fn words(&self) -> f64 {
        self.records.iter().map(|r| r.words).fold(0.0, |a, b| a + b)
    }

    pub fn to_seconds(&self, hw: &HardwareModel) -> f64 {
        self.records.iter().map(|r| r.seconds(hw)).fold(0.0, |a, b| a + b)
    }

    /// `alpha * latency + beta * words` with explicit coefficients.
    pub fn total(&self, alpha: f64, beta: f64) -> f64 {
        self.records.iter().map(|r| r.latency_units as f64 * alpha + r.words * beta).fold(0.0, |a, b| a + b)
    }

    pub fn layer_words(&self, layer: usize) -> f64 {
        self.records.iter().filter(|r| r.layer == layer).map(|r| r.words).fold(0.0, |a, b| a + b)
    }

    pub fn filter(&self, mut keep: impl FnMut(&CostRecord) -> bool) -> CostBreakdown {
        CostBreakdown { records: self.records.iter().copied().filter(|r| keep(r)).collect() }
    }

    /// Backward-phase all-reduce records: the traffic that can hide behind
    /// backprop compute.
    pub fn overlappable(&self) -> CostBreakdown {
        self.filter(|r| r.phase.is_backward() && r.collective == Collective::AllReduce)
    }
}
