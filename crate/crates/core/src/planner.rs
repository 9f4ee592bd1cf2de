//! Process-grid search and scaling sweeps.
//!
//! For a fixed global batch `B` on `P` processes the planner evaluates every
//! factorisation `P = p_r x p_c` (and, depending on the policy, several
//! per-layer assignments), converts the integrated cost breakdown into
//! per-epoch seconds and ranks the candidates. Compute time comes from the
//! hardware model's optional [`ComputeModel`]; without one it is zero.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::costmodel::{cost_integrated, Assignment, ComputeModel, CostBreakdown, GridConfig, HardwareModel};
use crate::error::{Error, Result};
use crate::netspec::NetworkSpec;

/// Share of compute spent in backprop (two of the three products).
const BACKPROP_COMPUTE_SHARE: f64 = 2.0 / 3.0;
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Same grid and model partitioning for every layer.
    AllModel,
    /// Convolutions pure batch parallel, fully connected layers on the grid.
    ConvBatchFcModel,
    /// Convolutions domain parallel, fully connected layers model parallel.
    ConvDomainFcModel,
    /// Every per-layer combination of batch/model/domain, up to a cap.
    Exhaustive,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::AllModel => "all-model",
            Policy::ConvBatchFcModel => "conv-batch-fc-model",
            Policy::ConvDomainFcModel => "conv-domain-fc-model",
            Policy::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-model" => Ok(Policy::AllModel),
            "conv-batch-fc-model" => Ok(Policy::ConvBatchFcModel),
            "conv-domain-fc-model" => Ok(Policy::ConvDomainFcModel),
            "exhaustive" => Ok(Policy::Exhaustive),
            other => Err(Error::invalid("policy", format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overlap {
    #[default]
    None,
    /// Backward all-reduces hide behind backprop compute.
    BackpropOverlap,
}

#[derive(Debug, Clone)]
pub struct PlanQuery {
    pub net: NetworkSpec,
    pub hw: HardwareModel,
    pub procs: u64,
    pub batch: u64,
    pub policy: Policy,
    pub overlap: Overlap,
    pub max_batch_per_process: Option<u64>,
    pub exhaustive_cap: usize,
}

impl PlanQuery {
    pub fn new(net: NetworkSpec, hw: HardwareModel, procs: u64, batch: u64, policy: Policy) -> Self {
        Self {
            net,
            hw,
            procs,
            batch,
            policy,
            overlap: Overlap::None,
            max_batch_per_process: None,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
        }
    }

    pub fn with_overlap(mut self, overlap: Overlap) -> Self {
        self.overlap = overlap;
        self
    }

    pub fn with_max_batch_per_process(mut self, max: Option<u64>) -> Self {
        self.max_batch_per_process = max;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.procs == 0 {
            return Err(Error::invalid("procs", "must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be >= 1"));
        }
        if self.max_batch_per_process == Some(0) {
            return Err(Error::invalid("max_batch_per_process", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch times (seconds) for one candidate configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub grid: GridConfig,
    pub policy: Policy,
    pub t_comm: f64,
    pub t_comp: f64,
    pub t_total: f64,
    /// Pure-batch (`1 x P`) total time over this total time.
    pub speedup_vs_pure_batch: f64,
    /// Same ratio for communication time only.
    pub comm_speedup: f64,
    pub feasible: bool,
    /// Per-iteration breakdown.
    pub breakdown: CostBreakdown,
}

/// Divisor pairs `(p_r, p_c)` of `procs`, in increasing `p_r`.
pub fn factor_pairs(procs: u64) -> Vec<(u64, u64)> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut r = 1;
    while r * r <= procs {
        if procs % r == 0 {
            small.push((r, procs / r));
            if r * r != procs {
                large.push((procs / r, r));
            }
        }
        r += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn policy_assignment(net: &NetworkSpec, policy: Policy) -> Vec<Assignment> {
    net.layers()
        .iter()
        .map(|l| match (policy, l.is_conv()) {
            (Policy::AllModel, _) | (_, false) => Assignment::Model,
            (Policy::ConvBatchFcModel, true) => Assignment::BatchOnly,
            (Policy::ConvDomainFcModel, true) => Assignment::Domain,
            (Policy::Exhaustive, true) => unreachable!("exhaustive assignments are enumerated separately"),
        })
        .collect()
}

fn exhaustive_assignments(net: &NetworkSpec, cap: usize) -> Vec<Vec<Assignment>> {
    let choices: Vec<Vec<Assignment>> = net
        .layers()
        .iter()
        .map(|l| {
            if l.is_conv() {
                vec![Assignment::BatchOnly, Assignment::Model, Assignment::Domain]
            } else {
                vec![Assignment::BatchOnly, Assignment::Model]
            }
        })
        .collect();
    let mut out = Vec::new();
    let mut index = vec![0usize; choices.len()];
    'outer: while out.len() < cap {
        out.push(index.iter().zip(&choices).map(|(&i, c)| c[i]).collect());
        for pos in (0..index.len()).rev() {
            index[pos] += 1;
            if index[pos] < choices[pos].len() {
                continue 'outer;
            }
            index[pos] = 0;
        }
        break;
    }
    out
}

/// Candidate grids for `procs` under a policy. With `p_r = 1` every
/// assignment degenerates to batch parallelism, so that grid appears once.
pub fn enumerate_grids(net: &NetworkSpec, procs: u64, policy: Policy, exhaustive_cap: usize) -> Vec<GridConfig> {
    let mut grids = Vec::new();
    for (p_r, p_c) in factor_pairs(procs) {
        if policy == Policy::Exhaustive && p_r > 1 {
            for a in exhaustive_assignments(net, exhaustive_cap.max(1)) {
                grids.push(GridConfig { p_r, p_c, assignment: a });
            }
        } else if policy == Policy::Exhaustive {
            grids.push(GridConfig { p_r, p_c, assignment: vec![Assignment::BatchOnly; net.len()] });
        } else {
            grids.push(GridConfig { p_r, p_c, assignment: policy_assignment(net, policy) });
        }
    }
    grids
}

/// Whether every layer gets at least one sample (and one row / one neuron)
/// per process.
pub fn is_feasible(net: &NetworkSpec, grid: &GridConfig, batch: u64) -> bool {
    net.iter().all(|layer| match grid.effective(layer.index) {
        Assignment::BatchOnly => batch >= grid.procs(),
        Assignment::Model => batch >= grid.p_c && layer.dims.d_out >= grid.p_r,
        Assignment::Domain => batch >= grid.p_c && layer.dims.x_h >= grid.p_r,
    })
}

fn compute_seconds(net: &NetworkSpec, grid: &GridConfig, batch: u64, model: Option<&ComputeModel>) -> f64 {
    let b = batch as f64;
    match model {
        None => 0.0,
        Some(ComputeModel::Table(table)) => table.seconds_at(b / grid.p_c as f64) / grid.p_r as f64,
        Some(ComputeModel::Throughput { flops_per_second, efficiency }) => {
            let flops: f64 = net
                .iter()
                .map(|layer| {
                    let per_process = match grid.effective(layer.index) {
                        Assignment::BatchOnly => b / grid.procs() as f64,
                        Assignment::Model | Assignment::Domain => b / grid.p_c as f64 / grid.p_r as f64,
                    };
                    6.0 * layer.dims.weight_count as f64 * per_process
                })
                .sum();
            flops / (flops_per_second * efficiency)
        }
    }
}

struct Timing {
    comm: f64,
    comp: f64,
    total: f64,
}

fn epoch_timing(breakdown: &CostBreakdown, comp_iter: f64, query: &PlanQuery) -> Timing {
    let iterations = query.net.sample_count().div_ceil(query.batch) as f64;
    let comm_iter = breakdown.to_seconds(&query.hw);
    let credit = match query.overlap {
        Overlap::None => 0.0,
        Overlap::BackpropOverlap => {
            let hideable = breakdown.overlappable().to_seconds(&query.hw);
            hideable.min(BACKPROP_COMPUTE_SHARE * comp_iter)
        }
    };
    let (comm, comp) = (comm_iter * iterations, comp_iter * iterations);
    Timing { comm, comp, total: comm + comp - credit * iterations }
}

fn ratio(reference: f64, value: f64) -> f64 {
    if value == 0.0 {
        if reference == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        reference / value
    }
}

fn evaluate(query: &PlanQuery, grid: GridConfig, reference: &Timing) -> Result<PlanResult> {
    let batch = query.batch as f64;
    let breakdown = cost_integrated(&query.net, &grid, batch)?;
    let comp = compute_seconds(&query.net, &grid, query.batch, query.hw.compute.as_ref());
    let t = epoch_timing(&breakdown, comp, query);
    Ok(PlanResult {
        feasible: is_feasible(&query.net, &grid, query.batch),
        policy: query.policy,
        t_comm: t.comm,
        t_comp: t.comp,
        t_total: t.total,
        speedup_vs_pure_batch: ratio(reference.total, t.total),
        comm_speedup: ratio(reference.comm, t.comm),
        breakdown,
        grid,
    })
}

fn pure_batch_reference(query: &PlanQuery) -> Result<Timing> {
    let grid = GridConfig::uniform(1, query.procs, query.net.len(), Assignment::BatchOnly)?;
    let breakdown = cost_integrated(&query.net, &grid, query.batch as f64)?;
    let comp = compute_seconds(&query.net, &grid, query.batch, query.hw.compute.as_ref());
    Ok(epoch_timing(&breakdown, comp, query))
}

/// Ascending total time; ties prefer more batch parallelism (larger `p_c`).
/// The sort is stable, so equal candidates keep enumeration order.
fn rank(results: &mut [PlanResult]) {
    results.sort_by(|a, b| {
        b.feasible
            .cmp(&a.feasible)
            .then(a.t_total.total_cmp(&b.t_total))
            .then(b.grid.p_c.cmp(&a.grid.p_c))
            .then(a.grid.p_r.cmp(&b.grid.p_r))
    });
}

/// Every candidate, feasible or not, ranked (feasible first).
pub fn evaluate_all(query: &PlanQuery) -> Result<Vec<PlanResult>> {
    query.validate()?;
    let reference = pure_batch_reference(query)?;
    let mut grids = enumerate_grids(&query.net, query.procs, query.policy, query.exhaustive_cap);
    if let Some(max) = query.max_batch_per_process {
        grids.retain(|g| query.batch as f64 / g.p_c as f64 <= max as f64);
    }
    let mut results = grids
        .into_par_iter()
        .map(|g| evaluate(query, g, &reference))
        .collect::<Result<Vec<_>>>()?;
    rank(&mut results);
    Ok(results)
}

/// Feasible configurations ranked by per-epoch total time.
pub fn plan(query: &PlanQuery) -> Result<Vec<PlanResult>> {
    let mut results = evaluate_all(query)?;
    results.retain(|r| r.feasible);
    if results.is_empty() {
        return Err(Error::Infeasible(format!(
            "P = {}, B = {}, policy {}{}",
            query.procs,
            query.batch,
            query.policy,
            query.max_batch_per_process.map(|m| format!(", max batch per process {m}")).unwrap_or_default()
        )));
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub procs: u64,
    pub batch: u64,
    pub result: PlanResult,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: [&str; 9] =
    ["P", "p_r", "p_c", "policy", "t_comm_s", "t_comp_s", "t_total_s", "speedup", "feasible"];

pub fn csv_record(procs: u64, r: &PlanResult) -> [String; 9] {
    [
        procs.to_string(),
        r.grid.p_r.to_string(),
        r.grid.p_c.to_string(),
        r.policy.to_string(),
        r.t_comm.to_string(),
        r.t_comp.to_string(),
        r.t_total.to_string(),
        r.speedup_vs_pure_batch.to_string(),
        r.feasible.to_string(),
    ]
}

/// Comma-separated, header row, LF line endings.
pub fn results_to_csv(rows: impl IntoIterator<Item = (u64, PlanResult)>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for (procs, r) in rows {
        w.write_record(csv_record(procs, &r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        results_to_csv(self.rows.iter().map(|r| (r.procs, r.result.clone())))
    }

    pub fn for_procs(&self, procs: u64) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.procs == procs)
    }
}

fn sweep_pairs(base: &PlanQuery, pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<SweepTable> {
    let mut table = SweepTable::default();
    for (procs, batch) in pairs {
        let query = PlanQuery { procs, batch, ..base.clone() };
        for result in evaluate_all(&query)? {
            table.rows.push(SweepRow { procs, batch, result });
        }
    }
    Ok(table)
}

/// Fixed global batch, growing process count.
pub fn sweep_strong(base: &PlanQuery, procs_list: &[u64]) -> Result<SweepTable> {
    sweep_pairs(base, procs_list.iter().map(|&p| (p, base.batch)))
}

/// Batch and process count grown together, pairwise.
pub fn sweep_weak(base: &PlanQuery, procs_list: &[u64], batch_list: &[u64]) -> Result<SweepTable> {
    if batch_list.is_empty() {
        return Err(Error::invalid("batch-list", "weak scaling needs at least one batch size"));
    }
    if procs_list.len() != batch_list.len() {
        return Err(Error::invalid(
            "batch-list",
            format!("{} batch sizes for {} process counts", batch_list.len(), procs_list.len()),
        ));
    }
    sweep_pairs(base, procs_list.iter().copied().zip(batch_list.iter().copied()))
}

/// Strong scaling past `P = B` with domain-parallel convolutions. Pure batch
/// rows stay in the table, flagged infeasible once `B / P < 1`.
pub fn sweep_beyond_batch(base: &PlanQuery, procs_list: &[u64]) -> Result<SweepTable> {
    let base = PlanQuery { policy: Policy::ConvDomainFcModel, ..base.clone() };
    sweep_strong(&base, procs_list)
}
