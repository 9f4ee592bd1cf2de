use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::topology::RankId;
use crate::costmodel::Phase;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CallKind {
    AllGather,
    AllReduce,
    Halo,
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::AllGather => "allgather",
            CallKind::AllReduce => "allreduce",
            CallKind::Halo => "halo",
        }
    }
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CallKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allgather" => Ok(CallKind::AllGather),
            "allreduce" => Ok(CallKind::AllReduce),
            "halo" => Ok(CallKind::Halo),
            other => Err(Error::invalid("kind", format!("unknown collective {other:?}"))),
        }
    }
}

/// Which layer and phase a collective call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallTag {
    pub layer: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RankTraffic {
    pub words_sent: u64,
    pub words_received: u64,
    pub messages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub seq: u64,
    pub kind: CallKind,
    pub tag: Option<CallTag>,
    /// Supersteps the call took.
    pub rounds: u64,
    pub per_rank: BTreeMap<RankId, RankTraffic>,
}

impl CallRecord {
    pub fn words_sent(&self) -> u64 {
        self.per_rank.values().map(|t| t.words_sent).sum()
    }

    pub fn words_received(&self) -> u64 {
        self.per_rank.values().map(|t| t.words_received).sum()
    }
}

/// One row of the ledger CSV export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub rank: RankId,
    pub call_seq: u64,
    pub kind: String,
    pub words_sent: u64,
    pub words_received: u64,
    pub messages: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    calls: Vec<CallRecord>,
}

impl TrafficLedger {
    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    pub fn calls_mut(&mut self) -> &mut [CallRecord] {
        &mut self.calls
    }

    pub(crate) fn push(&mut self, call: CallRecord) {
        self.calls.push(call);
    }

    pub fn next_seq(&self) -> u64 {
        self.calls.len() as u64
    }

    pub fn total_words(&self) -> u64 {
        self.calls.iter().map(|c| c.words_received()).sum()
    }

    pub fn rows(&self) -> Vec<LedgerRow> {
        self.calls
            .iter()
            .flat_map(|c| {
                c.per_rank.iter().map(move |(&rank, t)| LedgerRow {
                    rank,
                    call_seq: c.seq,
                    kind: c.kind.to_string(),
                    words_sent: t.words_sent,
                    words_received: t.words_received,
                    messages: t.messages,
                })
            })
            .collect()
    }

    /// CSV with columns `rank, call_seq, kind, words_sent, words_received, messages`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn parse_ledger_csv(text: &str) -> Result<Vec<LedgerRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<LedgerRow>, _>>()?;
    for row in &rows {
        row.kind.parse::<CallKind>()?;
    }
    Ok(rows)
}
