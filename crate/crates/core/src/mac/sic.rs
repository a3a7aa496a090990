//! Gateway-side CRDSA decoder.

use crate::channel::RaBlock;

/// Iterative successive interference cancellation over one closed block.
///
/// A slot holding exactly one live replica decodes that burst; every sister
/// replica of a decoded burst is then cancelled, which may leave further
/// slots clean. Runs to the fixpoint with perfect cancellation and no
/// capture effect. Returns one flag per submission, in submission order.
pub fn sic_decode(block: &RaBlock) -> Vec<bool> {
    let subs = block.submissions();
    let mut decoded = vec![false; subs.len()];
    let mut live: Vec<usize> = (0..block.slots_per_block())
        .map(|s| block.slot(s).len())
        .collect();
    let mut clean: Vec<usize> = (0..live.len()).filter(|&s| live[s] == 1).collect();

    while let Some(slot) = clean.pop() {
        if live[slot] != 1 {
            continue;
        }
        let Some(r) = block
            .slot(slot)
            .iter()
            .find(|r| !decoded[r.submission])
        else {
            continue;
        };
        decoded[r.submission] = true;
        for &s in &subs[r.submission].slots {
            live[s] -= 1;
            if live[s] == 1 {
                clean.push(s);
            }
        }
    }
    decoded
}
