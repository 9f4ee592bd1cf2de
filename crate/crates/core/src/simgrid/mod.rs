//! A deterministic message-passing fabric of virtual ranks.
//!
//! Collectives run their real schedules (Bruck all-gather, ring all-reduce,
//! pairwise halo exchange) as a sequence of supersteps. Each superstep moves
//! every message at once and charges it to the [`TrafficLedger`]. There is no
//! clock: time comes from the cost model, the fabric only checks semantics and
//! counts words, messages and rounds. One element is one word.

mod ledger;
mod topology;

use std::collections::BTreeMap;
use std::ops::{Add, Range};

pub use ledger::{parse_ledger_csv, CallKind, CallRecord, CallTag, LedgerRow, RankTraffic, TrafficLedger};
pub use topology::{Communicator, GridTopology, RankId};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimGrid {
    topo: GridTopology,
    ledger: TrafficLedger,
    tag: Option<CallTag>,
}

/// Accounting for one collective call in progress.
struct Call {
    kind: CallKind,
    rounds: u64,
    per_rank: BTreeMap<RankId, RankTraffic>,
}

impl Call {
    /// Charges one superstep of `(src, dst, words)` transfers.
    fn superstep(&mut self, transfers: &[(RankId, RankId, usize)]) {
        let mut any = false;
        for &(src, dst, words) in transfers {
            if words == 0 {
                continue;
            }
            debug_assert_ne!(src, dst);
            any = true;
            let s = self.per_rank.entry(src).or_default();
            s.words_sent += words as u64;
            s.messages += 1;
            self.per_rank.entry(dst).or_default().words_received += words as u64;
        }
        if any {
            self.rounds += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloSend<T> {
    pub to_prev: Vec<T>,
    pub to_next: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloRecv<T> {
    pub from_prev: Option<Vec<T>>,
    pub from_next: Option<Vec<T>>,
}

fn chunk(c: usize, n: usize, p: usize) -> Range<usize> {
    (c * n / p)..((c + 1) * n / p)
}

fn equal_lengths<T>(comm: &Communicator, blocks: &[Vec<T>], what: &str) -> Result<usize> {
    if blocks.len() != comm.size() {
        return Err(Error::Shape(format!("{what}: {} blocks for {} members", blocks.len(), comm.size())));
    }
    let n = blocks[0].len();
    if let Some((i, b)) = blocks.iter().enumerate().find(|(_, b)| b.len() != n) {
        return Err(Error::Shape(format!("{what}: member {i} supplied {} words, member 0 supplied {n}", b.len())));
    }
    Ok(n)
}

impl SimGrid {
    pub fn new(topo: GridTopology) -> Self {
        Self { topo, ledger: TrafficLedger::default(), tag: None }
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topo
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> TrafficLedger {
        self.ledger
    }

    /// Labels subsequent calls until changed.
    pub fn set_tag(&mut self, tag: Option<CallTag>) {
        self.tag = tag;
    }

    fn begin(&self, kind: CallKind, comm: &Communicator) -> Call {
        let per_rank = comm.members().iter().map(|&r| (r, RankTraffic::default())).collect();
        Call { kind, rounds: 0, per_rank }
    }

    fn finish(&mut self, call: Call) {
        let seq = self.ledger.next_seq();
        self.ledger.push(CallRecord { seq, kind: call.kind, tag: self.tag, rounds: call.rounds, per_rank: call.per_rank });
    }

    fn check_members(&self, comm: &Communicator) -> Result<()> {
        match comm.members().iter().find(|&&r| r >= self.topo.size()) {
            Some(r) => Err(Error::Shape(format!("rank {r} is outside a {}-rank grid", self.topo.size()))),
            None => Ok(()),
        }
    }

    /// Bruck all-gather. `blocks[i]` belongs to communicator rank `i`; every
    /// member gets the blocks concatenated in communicator order.
    pub fn allgather<T: Clone>(&mut self, comm: &Communicator, blocks: Vec<Vec<T>>) -> Result<Vec<Vec<T>>> {
        self.check_members(comm)?;
        let n = equal_lengths(comm, &blocks, "allgather")?;
        let p = comm.size();
        let ids = comm.members();
        let mut call = self.begin(CallKind::AllGather, comm);

        // held[i][j] is the block of communicator rank (i + j) mod p
        let mut held: Vec<Vec<Vec<T>>> = blocks.into_iter().map(|b| vec![b]).collect();
        let mut dist = 1;
        while dist < p {
            let count = dist.min(p - dist);
            let outgoing: Vec<Vec<Vec<T>>> = held.iter().map(|h| h[..count].to_vec()).collect();
            let transfers: Vec<_> = (0..p).map(|i| (ids[i], ids[(i + p - dist) % p], count * n)).collect();
            call.superstep(&transfers);
            for (src, payload) in outgoing.into_iter().enumerate() {
                held[(src + p - dist) % p].extend(payload);
            }
            dist *= 2;
        }
        self.finish(call);

        Ok((0..p)
            .map(|i| (0..p).flat_map(|k| held[i][(k + p - i) % p].iter().cloned()).collect())
            .collect())
    }

    /// Ring all-reduce (reduce-scatter then all-gather around the ring).
    ///
    /// Each chunk is summed exactly once, left to right along the ring starting
    /// at the rank that owns it, and then copied to everyone, so all members
    /// end with bitwise identical results. Lengths that are not a multiple of
    /// the communicator size use uneven chunks; only real elements are
    /// charged.
    pub fn allreduce_sum<T>(&mut self, comm: &Communicator, blocks: Vec<Vec<T>>) -> Result<Vec<Vec<T>>>
    where
        T: Copy + Add<Output = T>,
    {
        self.check_members(comm)?;
        let n = equal_lengths(comm, &blocks, "allreduce")?;
        let p = comm.size();
        let ids = comm.members();
        let mut call = self.begin(CallKind::AllReduce, comm);
        let mut buf = blocks;

        for step in 0..p.saturating_sub(1) {
            let sends: Vec<(usize, Range<usize>)> = (0..p).map(|i| (i, chunk((i + p - step) % p, n, p))).collect();
            let payloads: Vec<Vec<T>> = sends.iter().map(|(i, r)| buf[*i][r.clone()].to_vec()).collect();
            let transfers: Vec<_> = sends.iter().map(|(i, r)| (ids[*i], ids[(i + 1) % p], r.len())).collect();
            call.superstep(&transfers);
            for ((src, range), payload) in sends.into_iter().zip(payloads) {
                let dst = &mut buf[(src + 1) % p][range];
                for (d, incoming) in dst.iter_mut().zip(payload) {
                    *d = incoming + *d;
                }
            }
        }
        for step in 0..p.saturating_sub(1) {
            let sends: Vec<(usize, Range<usize>)> =
                (0..p).map(|i| (i, chunk((i + 1 + p - step) % p, n, p))).collect();
            let payloads: Vec<Vec<T>> = sends.iter().map(|(i, r)| buf[*i][r.clone()].to_vec()).collect();
            let transfers: Vec<_> = sends.iter().map(|(i, r)| (ids[*i], ids[(i + 1) % p], r.len())).collect();
            call.superstep(&transfers);
            for ((src, range), payload) in sends.into_iter().zip(payloads) {
                buf[(src + 1) % p][range].copy_from_slice(&payload);
            }
        }
        self.finish(call);
        Ok(buf)
    }

    /// Pairwise boundary exchange along a 1-D chain: member `i` sends
    /// `to_prev` to `i - 1` and `to_next` to `i + 1` in a single superstep.
    /// Sends past either end of the chain are dropped.
    pub fn halo_exchange<T: Clone>(&mut self, chain: &Communicator, sends: Vec<HaloSend<T>>) -> Result<Vec<HaloRecv<T>>> {
        self.check_members(chain)?;
        let p = chain.size();
        if sends.len() != p {
            return Err(Error::Shape(format!("halo: {} send sets for {p} members", sends.len())));
        }
        let ids = chain.members();
        let mut call = self.begin(CallKind::Halo, chain);
        let mut transfers = Vec::new();
        for (i, s) in sends.iter().enumerate() {
            if i > 0 {
                transfers.push((ids[i], ids[i - 1], s.to_prev.len()));
            }
            if i + 1 < p {
                transfers.push((ids[i], ids[i + 1], s.to_next.len()));
            }
        }
        call.superstep(&transfers);
        self.finish(call);

        Ok((0..p)
            .map(|i| HaloRecv {
                from_prev: (i > 0).then(|| sends[i - 1].to_next.clone()),
                from_next: (i + 1 < p).then(|| sends[i + 1].to_prev.clone()),
            })
            .collect())
    }
}
