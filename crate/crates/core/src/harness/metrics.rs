//! Summary statistics: completion times, goodput, normalized MAC load.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workload::Protocol;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
    pub blocks: u64,
}

/// Nearest-rank percentile from a histogram whose bucket `i` counts samples
/// of value `i`.
pub fn hist_percentile(hist: &[u64], q: f64) -> usize {
    let n: u64 = hist.iter().sum();
    if n == 0 {
        return 0;
    }
    let rank = ((q * n as f64).ceil() as u64).clamp(1, n);
    let mut acc = 0;
    for (v, &c) in hist.iter().enumerate() {
        acc += c;
        if acc >= rank {
            return v;
        }
    }
    hist.len() - 1
}

/// Load statistics from a histogram of per-block PDU counts.
pub fn load_from_hist(hist: &[u64], slots_per_block: usize) -> LoadStats {
    let n: u64 = hist.iter().sum();
    if n == 0 || slots_per_block == 0 {
        return LoadStats::default();
    }
    let s = slots_per_block as f64;
    let total: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    LoadStats {
        mean: total / n as f64 / s,
        p25: hist_percentile(hist, 0.25) as f64 / s,
        p75: hist_percentile(hist, 0.75) as f64 / s,
        blocks: n,
    }
}

/// Per-block load = PDUs in the block / slots per block.
pub fn normalized_load(per_block: &[usize], slots_per_block: usize) -> LoadStats {
    let max = per_block.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0u64; max + 1];
    for &c in per_block {
        hist[c] += 1;
    }
    load_from_hist(&hist, slots_per_block)
}

/// One measured flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub flow_id: u64,
    pub source: u32,
    pub n_app_packets: u64,
    pub payload_bytes: u64,
    pub created_s: f64,
    pub completion_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub exchanges: u64,
    pub measured_flows: u64,
    pub incomplete_flows: u64,
    pub truncated_payloads: u64,
    pub flows_verified: u64,
    pub hash_mismatches: u64,
    pub generated_bytes: u64,
    pub delivered_bytes: u64,
    pub window_start_s: f64,
    pub window_s: f64,
    #[serde(rename = "goodput_Bps")]
    pub goodput_bps: f64,
    pub load_mean: f64,
    pub load_p25: f64,
    pub load_p75: f64,
    pub blocks_observed: u64,
    pub mac_bursts: u64,
    pub mac_lost_bursts: u64,
    pub mac_retransmissions: u64,
    pub return_wire_bytes: u64,
    pub arq_timeouts: u64,
    pub arq_out_of_order: u64,
    pub stream_timeouts: u64,
    pub stream_retransmissions: u64,
    pub peak_in_flight: u64,
    pub sim_end_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub nstart: Option<usize>,
    pub flows: Vec<FlowRow>,
    pub summary: Summary,
}

impl MetricsReport {
    /// Aggregated goodput, bytes per second.
    pub fn aggregated_goodput(&self) -> f64 {
        self.summary.goodput_bps
    }

    /// Mean completion time and flow count per exact packet count.
    pub fn completion_by_n(&self) -> BTreeMap<u64, (f64, usize)> {
        completion_by_n(self.flows.iter())
    }
}

pub fn completion_by_n<'a>(
    rows: impl IntoIterator<Item = &'a FlowRow>,
) -> BTreeMap<u64, (f64, usize)> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.n_app_packets).or_default();
        e.0 += r.completion_s;
        e.1 += 1;
    }
    for v in acc.values_mut() {
        v.0 /= v.1 as f64;
    }
    acc
}
