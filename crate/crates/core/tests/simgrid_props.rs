use gridplan::simgrid::{GridTopology, HaloSend, SimGrid};
use proptest::prelude::*;

fn world(p: usize) -> SimGrid {
    SimGrid::new(GridTopology::new(1, p).unwrap())
}

fn blocks(p: usize, n: usize, seed: i64) -> Vec<Vec<i64>> {
    (0..p).map(|r| (0..n).map(|j| (seed + r as i64 * 7919 + j as i64 * 104_729) % 1_000_003 - 500_000).collect()).collect()
}

proptest! {
    #[test]
    fn allgather_concatenates(p in 1usize..=16, n in 0usize..=12, seed in any::<i32>()) {
        let input = blocks(p, n, seed as i64);
        let mut g = world(p);
        let w = g.topology().world();
        let out = g.allgather(&w, input.clone()).unwrap();
        let expected: Vec<i64> = input.concat();
        for o in &out {
            prop_assert_eq!(o, &expected);
        }
        let call = &g.ledger().calls()[0];
        for t in call.per_rank.values() {
            prop_assert_eq!(t.words_received as usize, (p - 1) * n);
        }
        let log = if p <= 1 { 0 } else { (usize::BITS - (p - 1).leading_zeros()) as u64 };
        prop_assert_eq!(call.rounds, if n == 0 { 0 } else { log });
    }

    #[test]
    fn ring_allreduce_is_exact(p in 1usize..=16, chunks in 0usize..=6, seed in any::<i32>()) {
        let n = p * chunks;
        let input = blocks(p, n, seed as i64);
        let mut g = world(p);
        let w = g.topology().world();
        let out = g.allreduce_sum(&w, input.clone()).unwrap();
        let expected: Vec<i64> = (0..n).map(|j| input.iter().map(|b| b[j]).sum()).collect();
        for o in &out {
            prop_assert_eq!(o, &expected);
        }
        for t in g.ledger().calls()[0].per_rank.values() {
            // 2 (P-1)/P n with P | n
            prop_assert_eq!(t.words_received as usize, 2 * (p - 1) * chunks);
            prop_assert_eq!(t.words_sent, t.words_received);
        }
    }

    #[test]
    fn float_allreduce_replicas_agree_bitwise(p in 1usize..=12, n in 0usize..=40, seed in any::<u32>()) {
        let input: Vec<Vec<f64>> = (0..p)
            .map(|r| (0..n).map(|j| ((seed as f64 + 1.0) * 1e-3).sin() * (r as f64 + 1.0) / (j as f64 + 0.5)).collect())
            .collect();
        let mut g = world(p);
        let w = g.topology().world();
        let out = g.allreduce_sum(&w, input.clone()).unwrap();
        for o in &out {
            prop_assert!(o.iter().zip(&out[0]).all(|(a, b)| a.to_bits() == b.to_bits()));
            for (j, v) in o.iter().enumerate() {
                let s: f64 = input.iter().map(|b| b[j]).sum();
                prop_assert!((v - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
        let call = &g.ledger().calls()[0];
        prop_assert_eq!(call.words_sent(), call.words_received());
    }

    #[test]
    fn collectives_are_deterministic(p_r in 1usize..=4, p_c in 1usize..=4, n in 1usize..=9, seed in any::<i32>()) {
        let run = || {
            let topo = GridTopology::new(p_r, p_c).unwrap();
            let mut g = SimGrid::new(topo);
            let mut outs = Vec::new();
            for c in 0..p_c {
                let comm = topo.row_comm(c);
                outs.push(g.allreduce_sum(&comm, blocks(p_r, n, seed as i64 + c as i64)).unwrap());
                outs.push(g.allgather(&comm, blocks(p_r, n, seed as i64)).unwrap());
            }
            for r in 0..p_r {
                let comm = topo.col_comm(r);
                outs.push(g.allreduce_sum(&comm, blocks(p_c, n, seed as i64 - r as i64)).unwrap());
            }
            (outs, g.ledger().to_csv().unwrap())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn halo_counts_each_boundary_once_per_direction(p in 1usize..=8, rows in 0usize..=5) {
        let mut g = world(p);
        let w = g.topology().world();
        let sends = (0..p).map(|i| HaloSend { to_prev: vec![i as i64; rows], to_next: vec![-(i as i64); rows] }).collect();
        let got = g.halo_exchange(&w, sends).unwrap();
        for (i, r) in got.iter().enumerate() {
            prop_assert_eq!(r.from_prev.clone(), (i > 0).then(|| vec![-(i as i64 - 1); rows]));
            prop_assert_eq!(r.from_next.clone(), (i + 1 < p).then(|| vec![i as i64 + 1; rows]));
        }
        let call = &g.ledger().calls()[0];
        let messages: u64 = call.per_rank.values().map(|t| t.messages).sum();
        prop_assert_eq!(messages as usize, if rows == 0 { 0 } else { 2 * (p - 1) });
        prop_assert_eq!(call.words_sent() as usize, 2 * (p - 1) * rows);
    }
}

#[test]
fn sixteen_row_image_on_four_ranks_has_six_transfers() {
    let mut g = world(4);
    let w = g.topology().world();
    let sends = (0..4).map(|_| HaloSend { to_prev: vec![0.0; 8], to_next: vec![0.0; 8] }).collect();
    g.halo_exchange(&w, sends).unwrap();
    let messages: u64 = g.ledger().calls()[0].per_rank.values().map(|t| t.messages).sum();
    assert_eq!(messages, 6);
}
