//! CRDSA medium access: per-RCST transmit queue and replica placement,
//! gateway SIC decoding, decode feedback and retransmission backoff.

mod sic;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

pub use sic::sic_decode;

use crate::channel::{PduId, RcstId};
use crate::error::{Result, SimError};
use crate::sim::{RngStream, SimTime};

/// When an RCST learns the decode outcome of a block, measured from block close.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackDelay {
    /// One propagation delay after block close.
    OneWay,
    /// Gateway decode after one propagation delay, then forward-link return.
    RoundTrip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub replicas: usize,
    /// Lost PDUs wait `U{1..=backoff_max_blocks}` blocks before retrying.
    pub backoff_max_blocks: u64,
    pub feedback_delay: FeedbackDelay,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            replicas: 3,
            backoff_max_blocks: 8,
            feedback_delay: FeedbackDelay::OneWay,
        }
    }
}

impl MacConfig {
    pub fn validate(&self, slots_per_block: usize) -> Result<()> {
        if self.replicas == 0 || self.replicas > slots_per_block {
            return Err(SimError::config(
                "mac.replicas",
                format!("must be in 1..={slots_per_block}"),
            ));
        }
        if self.backoff_max_blocks == 0 {
            return Err(SimError::config("mac.backoff_max_blocks", "must be >= 1"));
        }
        Ok(())
    }
}

/// One net-slot-sized MAC payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacPdu {
    pub id: PduId,
    pub owner: RcstId,
    pub payload: Vec<u8>,
    pub replicas: usize,
    pub attempt: u32,
    pub enqueued_at: SimTime,
    /// Earliest block in which the PDU may be (re)transmitted.
    pub eligible_block: u64,
}

impl MacPdu {
    pub fn size(&self) -> usize {
        self.payload.len()
    }
}

/// Per-block decode outcome for one PDU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Decoded,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeFeedback {
    pub block: u64,
    pub pdu: PduId,
    pub outcome: Outcome,
    pub delivered_at: SimTime,
}

/// Uniformly random distinct slot indices for the replicas of one burst.
pub fn select_slots(
    rng: &mut RngStream,
    replicas: usize,
    slots_per_block: usize,
) -> Result<Vec<usize>> {
    if replicas == 0 || replicas > slots_per_block {
        return Err(SimError::config(
            "mac.replicas",
            format!("{replicas} replicas do not fit {slots_per_block} slots"),
        ));
    }
    Ok(rng.distinct_indices(slots_per_block, replicas))
}

/// A burst chosen for transmission in the current block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub pdu: PduId,
    pub size: usize,
    pub slots: Vec<usize>,
    /// True if this is the PDU's first transmission.
    pub first: bool,
}

/// Transmit side of one RCST's MAC.
///
/// Fresh PDUs wait in FIFO order; a PDU whose burst was lost goes to a
/// retransmission line that takes priority once its backoff has elapsed.
/// At most one PDU leaves per block.
#[derive(Debug)]
pub struct MacQueue {
    owner: RcstId,
    fresh: VecDeque<MacPdu>,
    retx: VecDeque<MacPdu>,
    awaiting: HashMap<PduId, MacPdu>,
    transmissions: u64,
    retransmissions: u64,
}

impl MacQueue {
    pub fn new(owner: RcstId) -> Self {
        MacQueue {
            owner,
            fresh: VecDeque::new(),
            retx: VecDeque::new(),
            awaiting: HashMap::new(),
            transmissions: 0,
            retransmissions: 0,
        }
    }

    pub fn owner(&self) -> RcstId {
        self.owner
    }

    pub fn enqueue(&mut self, pdu: MacPdu) -> Result<()> {
        if pdu.payload.is_empty() {
            return Err(SimError::contract("MAC PDU payload must be non-empty"));
        }
        if pdu.owner != self.owner {
            return Err(SimError::contract(format!(
                "PDU owned by RCST {} queued at RCST {}",
                pdu.owner.0, self.owner.0
            )));
        }
        self.fresh.push_back(pdu);
        Ok(())
    }

    /// PDUs still to be sent, including ones waiting out a backoff.
    pub fn backlog(&self) -> usize {
        self.fresh.len() + self.retx.len()
    }

    pub fn awaiting_feedback(&self) -> usize {
        self.awaiting.len()
    }

    pub fn is_idle(&self) -> bool {
        self.backlog() == 0 && self.awaiting.is_empty()
    }

    pub fn transmissions(&self) -> u64 {
        self.transmissions
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    /// The transmission this RCST makes in `block`, if any.
    pub fn on_block_start(
        &mut self,
        block: u64,
        rng: &mut RngStream,
        slots_per_block: usize,
    ) -> Result<Option<Transmission>> {
        let pdu = if let Some(head) = self.retx.front() {
            if head.eligible_block > block {
                return Ok(None);
            }
            self.retx.pop_front()
        } else {
            match self.fresh.front() {
                Some(head) if head.eligible_block <= block => self.fresh.pop_front(),
                _ => None,
            }
        };
        let Some(pdu) = pdu else {
            return Ok(None);
        };
        let slots = select_slots(rng, pdu.replicas, slots_per_block)?;
        let tx = Transmission {
            pdu: pdu.id,
            size: pdu.size(),
            slots,
            first: pdu.attempt == 0,
        };
        self.transmissions += 1;
        if pdu.attempt > 0 {
            self.retransmissions += 1;
        }
        self.awaiting.insert(pdu.id, pdu);
        Ok(Some(tx))
    }

    /// Payload of a transmitted PDU still awaiting feedback.
    pub fn in_flight(&self, id: PduId) -> Option<&MacPdu> {
        self.awaiting.get(&id)
    }

    /// Applies the gateway's verdict. `current_block` is the block in progress
    /// when the feedback arrives; a lost PDU becomes eligible `U{1..=B}`
    /// blocks after it.
    pub fn on_feedback(
        &mut self,
        feedback: &DecodeFeedback,
        current_block: u64,
        backoff_max_blocks: u64,
        rng: &mut RngStream,
    ) -> Result<Option<MacPdu>> {
        let Some(mut pdu) = self.awaiting.remove(&feedback.pdu) else {
            return Err(SimError::contract(format!(
                "feedback for unknown PDU {} at RCST {}",
                feedback.pdu.0, self.owner.0
            )));
        };
        match feedback.outcome {
            Outcome::Decoded => Ok(Some(pdu)),
            Outcome::Lost => {
                pdu.attempt += 1;
                pdu.eligible_block =
                    current_block + rng.uniform_inclusive(1, backoff_max_blocks);
                self.retx.push_back(pdu);
                Ok(None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::StreamId;

    fn rng() -> RngStream {
        RngStream::new(9, StreamId::new("mac-test", 0))
    }

    fn pdu(id: u64) -> MacPdu {
        MacPdu {
            id: PduId(id),
            owner: RcstId(0),
            payload: vec![0xAB; 100],
            replicas: 3,
            attempt: 0,
            enqueued_at: SimTime::ZERO,
            eligible_block: 0,
        }
    }

    fn fb(id: u64, outcome: Outcome) -> DecodeFeedback {
        DecodeFeedback {
            block: 0,
            pdu: PduId(id),
            outcome,
            delivered_at: SimTime::ZERO,
        }
    }

    #[test]
    fn three_of_sixty_four_distinct() {
        let mut r = rng();
        for _ in 0..1000 {
            let s = select_slots(&mut r, 3, 64).unwrap();
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&x| x < 64));
        }
        assert_eq!(select_slots(&mut r, 64, 64).unwrap(), (0..64).collect::<Vec<_>>());
        assert!(select_slots(&mut r, 65, 64).is_err());
    }

    #[test]
    fn slot_choice_is_uniform() {
        let mut r = rng();
        let n = 100_000;
        let mut hits = [0u32; 64];
        for _ in 0..n {
            for s in select_slots(&mut r, 3, 64).unwrap() {
                hits[s] += 1;
            }
        }
        for h in hits {
            let f = h as f64 / n as f64;
            assert!((f - 3.0 / 64.0).abs() < 0.01, "freq {f}");
        }
    }

    #[test]
    fn empty_queue_stays_silent() {
        let mut q = MacQueue::new(RcstId(0));
        assert_eq!(q.on_block_start(0, &mut rng(), 64).unwrap(), None);
    }

    #[test]
    fn one_pdu_per_block_on_ideal_channel() {
        let mut q = MacQueue::new(RcstId(0));
        let mut r = rng();
        for i in 0..5 {
            q.enqueue(pdu(i)).unwrap();
        }
        let mut used = Vec::new();
        for block in 0..10 {
            if let Some(tx) = q.on_block_start(block, &mut r, 64).unwrap() {
                used.push(block);
                q.on_feedback(&fb(tx.pdu.0, Outcome::Decoded), block, 8, &mut r)
                    .unwrap();
            }
        }
        assert_eq!(used, vec![0, 1, 2, 3, 4]);
        assert!(q.is_idle());
    }

    #[test]
    fn backoff_holds_until_eligible_block() {
        let mut q = MacQueue::new(RcstId(0));
        let mut r = rng();
        q.enqueue(MacPdu {
            eligible_block: 7,
            ..pdu(1)
        })
        .unwrap();
        for block in 0..7 {
            assert!(q.on_block_start(block, &mut r, 64).unwrap().is_none());
        }
        assert!(q.on_block_start(7, &mut r, 64).unwrap().is_some());
    }

    #[test]
    fn loss_with_unit_backoff_retries_next_block() {
        let mut q = MacQueue::new(RcstId(0));
        let mut r = rng();
        q.enqueue(pdu(1)).unwrap();
        let tx = q.on_block_start(0, &mut r, 64).unwrap().unwrap();
        assert!(tx.first);
        q.on_feedback(&fb(1, Outcome::Lost), 20, 1, &mut r).unwrap();
        assert!(q.on_block_start(20, &mut r, 64).unwrap().is_none());
        let again = q.on_block_start(21, &mut r, 64).unwrap().unwrap();
        assert_eq!(again.pdu, PduId(1));
        assert!(!again.first);
    }

    #[test]
    fn repeated_loss_never_drops() {
        let mut q = MacQueue::new(RcstId(0));
        let mut r = rng();
        q.enqueue(pdu(1)).unwrap();
        let mut block = 0;
        let mut last_attempt = 0;
        for _ in 0..200 {
            let tx = loop {
                if let Some(tx) = q.on_block_start(block, &mut r, 64).unwrap() {
                    break tx;
                }
                block += 1;
            };
            q.on_feedback(&fb(tx.pdu.0, Outcome::Lost), block, 8, &mut r)
                .unwrap();
            let attempt = q.retx.front().unwrap().attempt;
            assert!(attempt > last_attempt);
            last_attempt = attempt;
        }
        assert_eq!(q.backlog(), 1);
        assert_eq!(q.retransmissions(), 199);
    }

    #[test]
    fn feedback_for_unknown_pdu_is_rejected() {
        let mut q = MacQueue::new(RcstId(0));
        let err = q.on_feedback(&fb(3, Outcome::Decoded), 0, 8, &mut rng());
        assert!(matches!(err, Err(SimError::Contract(_))));
    }
}
