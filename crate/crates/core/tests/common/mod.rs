#![allow(dead_code)]

use ra_iot_sim::channel::{ChannelConfig, PduId, RaBlock, RcstId};

/// Reference decoder: repeatedly scan every undecoded burst and accept it
/// when one of its slots holds no other undecoded burst. Works from the
/// placement lists alone, never from the block's slot table.
pub fn brute_force_decode(placements: &[Vec<usize>]) -> Vec<bool> {
    let mut decoded = vec![false; placements.len()];
    loop {
        let mut changed = false;
        for i in 0..placements.len() {
            if decoded[i] {
                continue;
            }
            let clean = placements[i].iter().any(|&slot| {
                (0..placements.len())
                    .filter(|&j| j != i && !decoded[j])
                    .all(|j| !placements[j].contains(&slot))
            });
            if clean {
                decoded[i] = true;
                changed = true;
            }
        }
        if !changed {
            return decoded;
        }
    }
}

pub fn block(placements: &[Vec<usize>], slots: usize) -> RaBlock {
    let cfg = ChannelConfig {
        slots_per_block: slots,
        ..ChannelConfig::default()
    };
    let mut b = RaBlock::open(0, &cfg);
    for (i, p) in placements.iter().enumerate() {
        b.submit_replicas(RcstId(i as u32), PduId(i as u64), 182, p)
            .unwrap();
    }
    b
}

/// All k-subsets of 0..n in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}
