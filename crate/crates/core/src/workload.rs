//! Traffic generation: Poisson exchange arrivals, Pareto-mixture payload
//! sizes, deterministic payload content and per-flow bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::{RngStream, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoComponent {
    pub weight: f64,
    /// Scale (minimum) in bytes.
    pub xm: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Mean gap between exchanges over the whole network, seconds.
    pub lambda_inv: f64,
    pub mixture: Vec<ParetoComponent>,
    /// Independent producers; each gets `1 / (lambda_inv * n_sources)` of the rate.
    pub n_sources: usize,
    pub min_exchanges: usize,
    /// Leading fraction of exchanges excluded from the statistics.
    pub warmup_fraction: f64,
    /// Payload sizes above this many bytes are truncated and counted.
    pub payload_cap: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        let c = |xm| ParetoComponent {
            weight: 1.0 / 3.0,
            xm,
            alpha: 1.1,
        };
        TrafficConfig {
            lambda_inv: 1.0,
            mixture: vec![c(931.0), c(9532.0), c(47663.0)],
            n_sources: 10_000,
            min_exchanges: 1000,
            warmup_fraction: 0.05,
            payload_cap: 10_000_000,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_inv.is_finite() && self.lambda_inv > 0.0) {
            return Err(SimError::config("traffic.lambda_inv", "must be > 0"));
        }
        if self.mixture.is_empty() {
            return Err(SimError::config("traffic.mixture", "needs at least one component"));
        }
        for (i, c) in self.mixture.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(SimError::config(
                    "traffic.mixture.weight",
                    format!("component {i}: must be >= 0"),
                ));
            }
            if !(c.xm.is_finite() && c.xm >= 1.0) {
                return Err(SimError::config(
                    "traffic.mixture.xm",
                    format!("component {i}: must be >= 1 byte"),
                ));
            }
            if !(c.alpha.is_finite() && c.alpha > 0.0) {
                return Err(SimError::config(
                    "traffic.mixture.alpha",
                    format!("component {i}: must be > 0"),
                ));
            }
        }
        let sum: f64 = self.mixture.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::config(
                "traffic.mixture.weight",
                format!("weights sum to {sum}, expected 1"),
            ));
        }
        if self.n_sources == 0 {
            return Err(SimError::config("traffic.n_sources", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(SimError::config("traffic.warmup_fraction", "must be in [0, 1)"));
        }
        if self.payload_cap == 0 {
            return Err(SimError::config("traffic.payload_cap", "must be >= 1"));
        }
        Ok(())
    }

    /// Arrival rate of one source, exchanges per second.
    pub fn per_source_rate(&self) -> f64 {
        1.0 / (self.lambda_inv * self.n_sources as f64)
    }

    /// Exchanges to generate so that `min_exchanges` remain after warm-up.
    pub fn total_exchanges(&self) -> usize {
        (self.min_exchanges as f64 / (1.0 - self.warmup_fraction)).ceil() as usize
    }

    pub fn warmup_exchanges(&self) -> usize {
        self.total_exchanges() - self.min_exchanges
    }

    /// CDF of the untruncated mixture.
    pub fn mixture_cdf(&self, x: f64) -> f64 {
        self.mixture
            .iter()
            .map(|c| {
                if x < c.xm {
                    0.0
                } else {
                    c.weight * (1.0 - (c.xm / x).powf(c.alpha))
                }
            })
            .sum()
    }

    /// Continuous mixture draw: component by weight, then Pareto.
    pub fn sample_size(&self, rng: &mut RngStream) -> Result<f64> {
        let u = rng.unit_open_low();
        let mut acc = 0.0;
        let mut pick = &self.mixture[self.mixture.len() - 1];
        for c in &self.mixture {
            acc += c.weight;
            if u <= acc {
                pick = c;
                break;
            }
        }
        rng.draw_pareto(pick.xm, pick.alpha)
    }
}

/// Payload length in whole bytes and whether the cap was applied.
pub fn payload_len(size: f64, cap: u64) -> (u64, bool) {
    let n = size.ceil();
    if n > cap as f64 {
        (cap, true)
    } else {
        (n.max(1.0) as u64, false)
    }
}

/// Start time and payload length of a source's next exchange.
pub fn next_exchange(
    cfg: &TrafficConfig,
    now: SimTime,
    arrivals: &mut RngStream,
    sizes: &mut RngStream,
) -> Result<(SimTime, u64, bool)> {
    let gap = arrivals.draw_exponential(cfg.per_source_rate())?;
    let (len, truncated) = payload_len(cfg.sample_size(sizes)?, cfg.payload_cap);
    Ok((now + gap, len, truncated))
}

/// `ceil(payload / per_packet)`.
pub fn segment_count(payload: u64, per_packet: u64) -> Result<u64> {
    if per_packet == 0 {
        return Err(SimError::config("per_packet", "must be > 0"));
    }
    Ok(payload.div_ceil(per_packet))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bytes `[offset, offset + len)` of the deterministic payload of flow `key`.
pub fn payload_bytes(key: u64, offset: u64, len: usize) -> Vec<u8> {
    let seed = splitmix64(key);
    (offset..offset + len as u64)
        .map(|i| (splitmix64(seed ^ (i >> 3)) >> ((i & 7) * 8)) as u8)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Coap,
    Mqtt,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Coap => "coap",
            Protocol::Mqtt => "mqtt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub id: u64,
    pub source: u32,
    pub protocol: Protocol,
    pub created_at: SimTime,
    pub payload_bytes: u64,
    pub n_app_packets: u64,
    pub truncated: bool,
    /// First packet of the exchange handed to the MAC. Later than
    /// `created_at` only when the source is still busy with an earlier one.
    pub started_at: Option<SimTime>,
    pub first_tx_at: Option<SimTime>,
    /// Producer learns the final byte reached the consumer.
    pub completed_at: Option<SimTime>,
    /// Consumer received the final byte.
    pub delivered_at: Option<SimTime>,
    pub delivered_bytes: u64,
    pub warmup: bool,
}

impl FlowRecord {
    pub fn completion_time(&self) -> Option<f64> {
        let start = self.started_at.unwrap_or(self.created_at);
        self.completed_at.map(|c| (c - start).as_secs_f64())
    }
}
