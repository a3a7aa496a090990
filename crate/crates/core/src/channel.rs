//! GEO satellite hop: slotted random-access return link organised in RA
//! blocks, and an ideal constant-delay forward link.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;

/// Return Channel Satellite Terminal identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RcstId(pub u32);

/// MAC PDU identifier, unique within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PduId(pub u64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub slots_per_block: usize,
    /// Seconds.
    pub block_duration: f64,
    /// Bytes.
    pub gross_slot: usize,
    /// Bytes available to the MAC payload after burst overhead.
    pub net_slot: usize,
    /// Seconds; half the nominal RTT.
    pub one_way_delay: f64,
    pub blocks_per_superframe: usize,
    // Waveform descriptors. Kept for provenance, they drive no behaviour.
    pub bandwidth_hz: f64,
    pub roll_off: f64,
    pub carrier_spacing: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            slots_per_block: 64,
            block_duration: 0.013,
            gross_slot: 188,
            net_slot: 182,
            one_way_delay: 0.26,
            blocks_per_superframe: 1,
            bandwidth_hz: 8_012_820.0,
            roll_off: 0.2,
            carrier_spacing: 0.3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots_per_block == 0 {
            return Err(SimError::config("channel.slots_per_block", "must be > 0"));
        }
        if !(self.block_duration > 0.0) || SimTime::from_secs_f64(self.block_duration) == SimTime::ZERO {
            return Err(SimError::config(
                "channel.block_duration",
                "must be at least 1 µs",
            ));
        }
        if self.net_slot == 0 || self.net_slot > self.gross_slot {
            return Err(SimError::config(
                "channel.net_slot",
                format!("must satisfy 0 < net_slot <= gross_slot ({})", self.gross_slot),
            ));
        }
        if !(self.one_way_delay >= 0.0) {
            return Err(SimError::config("channel.one_way_delay", "must be >= 0"));
        }
        if self.blocks_per_superframe == 0 {
            return Err(SimError::config(
                "channel.blocks_per_superframe",
                "must be > 0",
            ));
        }
        Ok(())
    }

    pub fn block_duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.block_duration)
    }

    pub fn one_way_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.one_way_delay)
    }

    pub fn rtt(&self) -> SimTime {
        self.one_way_delay() * 2
    }

    pub fn block_start(&self, index: u64) -> SimTime {
        self.block_duration() * index
    }

    /// Block `k` occupies `[k·D, (k+1)·D)` and closes at `(k+1)·D`.
    pub fn block_close(&self, index: u64) -> SimTime {
        self.block_duration() * (index + 1)
    }

    /// Index of the block in progress at `t`.
    pub fn block_at(&self, t: SimTime) -> u64 {
        t.div_floor(self.block_duration())
    }

    /// First block whose start is `>= t`.
    pub fn first_block_from(&self, t: SimTime) -> u64 {
        t.ceil_to(self.block_duration()).div_floor(self.block_duration())
    }

    /// Round-trip time divided by block duration: how many one-slot packets
    /// fill the pipe.
    pub fn bdp_packets(&self) -> u64 {
        self.rtt().div_floor(self.block_duration())
    }
}

/// One replica of a burst placed in a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplicaRef {
    /// Index into [`RaBlock::submissions`]; names the whole replica set.
    pub submission: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submission {
    pub rcst: RcstId,
    pub pdu: PduId,
    pub slots: Vec<usize>,
}

/// One return-channel frame holding every RCST's replicas for one block interval.
#[derive(Clone, Debug)]
pub struct RaBlock {
    index: u64,
    slots: Vec<Vec<ReplicaRef>>,
    submissions: Vec<Submission>,
    net_slot: usize,
}

impl RaBlock {
    pub fn open(index: u64, config: &ChannelConfig) -> Self {
        RaBlock {
            index,
            slots: vec![Vec::new(); config.slots_per_block],
            submissions: Vec::new(),
            net_slot: config.net_slot,
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn slots_per_block(&self) -> usize {
        self.slots.len()
    }

    /// Records the replicas of `pdu` sent by `rcst` in `slots`.
    pub fn submit_replicas(
        &mut self,
        rcst: RcstId,
        pdu: PduId,
        size: usize,
        slots: &[usize],
    ) -> Result<usize> {
        if self.submissions.iter().any(|s| s.rcst == rcst) {
            return Err(SimError::contract(format!(
                "RCST {} already transmitted in block {}",
                rcst.0, self.index
            )));
        }
        if size == 0 || size > self.net_slot {
            return Err(SimError::contract(format!(
                "PDU size {size} outside (0, {}]",
                self.net_slot
            )));
        }
        if slots.is_empty() {
            return Err(SimError::contract("empty replica set"));
        }
        for (i, &s) in slots.iter().enumerate() {
            if s >= self.slots.len() {
                return Err(SimError::contract(format!(
                    "slot {s} out of range 0..{}",
                    self.slots.len()
                )));
            }
            if slots[..i].contains(&s) {
                return Err(SimError::contract(format!("duplicate slot index {s}")));
            }
        }
        let submission = self.submissions.len();
        for &s in slots {
            self.slots[s].push(ReplicaRef { submission });
        }
        self.submissions.push(Submission {
            rcst,
            pdu,
            slots: slots.to_vec(),
        });
        Ok(submission)
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn slot(&self, s: usize) -> &[ReplicaRef] {
        &self.slots[s]
    }

    pub fn occupied_slots(&self) -> usize {
        self.slots.iter().filter(|s| !s.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.submissions.is_empty()
    }
}

/// Error-free gateway-to-RCST link: constant delay, unlimited capacity, FIFO.
#[derive(Clone, Copy, Debug)]
pub struct ForwardLink {
    delay: SimTime,
}

impl ForwardLink {
    pub fn new(delay: SimTime) -> Self {
        ForwardLink { delay }
    }

    pub fn from_config(config: &ChannelConfig) -> Self {
        ForwardLink::new(config.one_way_delay())
    }

    pub fn delay(&self) -> SimTime {
        self.delay
    }

    /// Arrival time of a frame of `size` bytes handed over at `now`.
    pub fn deliver_forward(&self, now: SimTime, size: usize) -> Result<SimTime> {
        if size == 0 {
            return Err(SimError::contract("forward frame must be non-empty"));
        }
        Ok(now + self.delay)
    }
}
