//! Measured traffic against the cost model's word coefficients.
//!
//! Each cost record carries the words one process receives in one collective.
//! For all-gathers and all-reduces every rank of the grid sits in exactly one
//! communicator of the record's kind, so the expectation applies to every
//! rank. A halo record counts one boundary, so a rank expects it once per
//! chain neighbour. Only word counts are compared; the cost model's latency
//! bookkeeping does not follow the ring's actual round count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::costmodel::{Collective, CostBreakdown, Phase};
use crate::error::{Error, Result};
use crate::simgrid::{CallKind, GridTopology, LedgerRow, TrafficLedger};

/// Where an entry's traffic is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryKey {
    /// `None` for untagged calls or kind-level aggregates.
    pub layer: Option<usize>,
    pub phase: Option<Phase>,
    pub kind: CallKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileEntry {
    pub key: EntryKey,
    /// Per rank, from the cost model.
    pub expected: Vec<f64>,
    /// Per rank, words received according to the ledger.
    pub measured: Vec<u64>,
    /// False when a coefficient is fractional; the comparison then falls back
    /// to the total over all ranks.
    pub per_rank: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconcileReport {
    pub entries: Vec<ReconcileEntry>,
}

fn kind_of(c: Collective) -> Option<CallKind> {
    match c {
        Collective::AllGather => Some(CallKind::AllGather),
        Collective::AllReduce => Some(CallKind::AllReduce),
        Collective::Halo => Some(CallKind::Halo),
        Collective::Summa2d => None,
    }
}

fn neighbours(topo: &GridTopology, rank: usize) -> f64 {
    let (r, _) = topo.coords(rank);
    (r > 0) as u8 as f64 + (r + 1 < topo.p_r()) as u8 as f64
}

fn is_integral(v: f64) -> bool {
    (v - v.round()).abs() < 1e-6
}

fn expected_map(breakdown: &CostBreakdown, topo: &GridTopology, by_layer: bool) -> BTreeMap<EntryKey, Vec<f64>> {
    let mut out: BTreeMap<EntryKey, Vec<f64>> = BTreeMap::new();
    for rec in breakdown.records() {
        let Some(kind) = kind_of(rec.collective) else { continue };
        let key = if by_layer {
            EntryKey { layer: Some(rec.layer), phase: Some(rec.phase), kind }
        } else {
            EntryKey { layer: None, phase: None, kind }
        };
        let slot = out.entry(key).or_insert_with(|| vec![0.0; topo.size()]);
        for (rank, e) in slot.iter_mut().enumerate() {
            *e += match kind {
                CallKind::Halo => rec.words * neighbours(topo, rank),
                _ => rec.words,
            };
        }
    }
    out
}

fn compare(expected: BTreeMap<EntryKey, Vec<f64>>, measured: BTreeMap<EntryKey, Vec<u64>>, size: usize) -> ReconcileReport {
    let mut keys: Vec<EntryKey> = expected.keys().chain(measured.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let entries = keys
        .into_iter()
        .map(|key| {
            let expected = expected.get(&key).cloned().unwrap_or_else(|| vec![0.0; size]);
            let measured = measured.get(&key).cloned().unwrap_or_else(|| vec![0; size]);
            let per_rank = expected.iter().all(|&e| is_integral(e));
            let ok = if per_rank {
                expected.iter().zip(&measured).all(|(&e, &m)| e.round() as u64 == m)
            } else {
                let total: f64 = expected.iter().sum();
                is_integral(total) && total.round() as u64 == measured.iter().sum::<u64>()
            };
            ReconcileEntry { key, expected, measured, per_rank, ok }
        })
        .collect();
    ReconcileReport { entries }
}

/// Compares a tagged run ledger with the breakdown for the same network,
/// grid and batch, per layer, phase and collective.
pub fn reconcile(ledger: &TrafficLedger, breakdown: &CostBreakdown, topo: &GridTopology) -> Result<ReconcileReport> {
    let mut measured: BTreeMap<EntryKey, Vec<u64>> = BTreeMap::new();
    for call in ledger.calls() {
        let key = EntryKey { layer: call.tag.map(|t| t.layer), phase: call.tag.map(|t| t.phase), kind: call.kind };
        let slot = measured.entry(key).or_insert_with(|| vec![0; topo.size()]);
        for (&rank, t) in &call.per_rank {
            *slot.get_mut(rank).ok_or_else(|| rank_error(rank, topo))? += t.words_received;
        }
    }
    Ok(compare(expected_map(breakdown, topo, true), measured, topo.size()))
}

/// Same comparison for an exported ledger, which carries no layer or phase:
/// traffic is summed per collective kind on both sides.
pub fn reconcile_rows(rows: &[LedgerRow], breakdown: &CostBreakdown, topo: &GridTopology) -> Result<ReconcileReport> {
    let mut measured: BTreeMap<EntryKey, Vec<u64>> = BTreeMap::new();
    for row in rows {
        let kind: CallKind = row.kind.parse()?;
        let slot = measured.entry(EntryKey { layer: None, phase: None, kind }).or_insert_with(|| vec![0; topo.size()]);
        *slot.get_mut(row.rank).ok_or_else(|| rank_error(row.rank, topo))? += row.words_received;
    }
    Ok(compare(expected_map(breakdown, topo, false), measured, topo.size()))
}

fn rank_error(rank: usize, topo: &GridTopology) -> Error {
    Error::invalid("ledger", format!("rank {rank} is outside the {}x{} grid", topo.p_r(), topo.p_c()))
}

fn span<T: PartialOrd + Copy + std::fmt::Display>(v: &[T]) -> String {
    let lo = v.iter().copied().fold(v[0], |a, b| if b < a { b } else { a });
    let hi = v.iter().copied().fold(v[0], |a, b| if b > a { b } else { a });
    if lo == hi {
        format!("{lo}")
    } else {
        format!("{lo}..{hi}")
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "*".to_string(), |x| x.to_string())
}

impl ReconcileReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &ReconcileEntry> {
        self.entries.iter().filter(|e| !e.ok)
    }

    /// One line per entry plus a verdict; per-rank values are shown as a
    /// range when they differ across ranks.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<6} {:<17} {:<10} {:>16} {:>16}  {}\n", "layer", "phase", "kind", "expected/rank", "measured/rank", "status");
        for e in &self.entries {
            let status = match (e.ok, e.per_rank) {
                (true, true) => "ok",
                (true, false) => "ok (total)",
                (false, _) => "MISMATCH",
            };
            let _ = writeln!(
                s,
                "{:<6} {:<17} {:<10} {:>16} {:>16}  {}",
                opt(e.key.layer),
                opt(e.key.phase),
                e.key.kind,
                span(&e.expected),
                span(&e.measured),
                status
            );
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "reconcile: {verdict} ({} entries, {} mismatched)", self.entries.len(), self.mismatches().count());
        s
    }

    /// One row per entry and rank:
    /// `layer,phase,kind,rank,expected_words,measured_words,match`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,phase,kind,rank,expected_words,measured_words,match\n");
        for e in &self.entries {
            for (rank, (exp, got)) in e.expected.iter().zip(&e.measured).enumerate() {
                let matched = if e.per_rank { exp.round() as u64 == *got } else { e.ok };
                let _ = writeln!(s, "{},{},{},{rank},{exp},{got},{matched}", opt(e.key.layer), opt(e.key.phase), e.key.kind);
            }
        }
        s
    }
}
