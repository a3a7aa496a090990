//! Scenario files: one TOML document per experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::coap::{max_payload, ArqConfig};
use crate::error::{Result, SimError};
use crate::mac::MacConfig;
use crate::mqtt::{publish_capacity, QoS};
use crate::transport::{StreamConfig, NET_HEADER_LEN, SEGMENT_HEADER_LEN};
use crate::workload::{Protocol, TrafficConfig};

/// Sources behind one RCST get ports `BASE_PORT`, `BASE_PORT + 1`, ...
pub const BASE_PORT: u16 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MqttConfig {
    /// 0 or 1.
    pub qos: u8,
    pub topic: String,
}

impl Default for MqttConfig {
    fn default() -> Self {
        MqttConfig {
            qos: 0,
            topic: "t".into(),
        }
    }
}

impl MqttConfig {
    pub fn qos(&self) -> QoS {
        if self.qos == 0 {
            QoS::AtMostOnce
        } else {
            QoS::AtLeastOnce
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seconds; flows unfinished by then are reported as incomplete.
    pub max_sim_time: f64,
    /// Count replicas rather than unique PDUs in the offered load.
    pub count_replicas: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_sim_time: 1_000_000.0,
            count_replicas: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default = "default_rcsts")]
    pub n_rcsts: usize,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub transport: StreamConfig,
    #[serde(default)]
    pub coap: ArqConfig,
    #[serde(default)]
    pub mqtt: MqttConfig,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_name() -> String {
    "scenario".into()
}

fn one() -> usize {
    1
}

/// One terminal per source by default: each server sits behind its own
/// proxy and RCST, so bursts never queue behind another source's PDUs.
fn default_rcsts() -> usize {
    10_000
}

impl Scenario {
    pub fn new(protocol: Protocol) -> Self {
        Scenario {
            name: default_name(),
            protocol,
            seed: 0,
            replications: 1,
            n_rcsts: default_rcsts(),
            channel: ChannelConfig::default(),
            mac: MacConfig::default(),
            transport: StreamConfig::default(),
            coap: ArqConfig::default(),
            mqtt: MqttConfig::default(),
            traffic: TrafficConfig::default(),
            run: RunConfig::default(),
        }
    }

    pub fn coap(nstart: usize) -> Self {
        let mut s = Self::new(Protocol::Coap);
        s.coap.nstart = nstart;
        s.name = format!("coap-nstart-{nstart}");
        s
    }

    pub fn mqtt() -> Self {
        let mut s = Self::new(Protocol::Mqtt);
        s.name = "mqtt".into();
        s
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse {
            path: "<string>".into(),
            reason: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let s: Scenario = toml::from_str(&text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// NSTART of a CoAP scenario; None for MQTT.
    pub fn nstart(&self) -> Option<usize> {
        (self.protocol == Protocol::Coap).then_some(self.coap.nstart)
    }

    /// Application bytes carried per packet for this protocol.
    pub fn per_packet_payload(&self) -> usize {
        match self.protocol {
            Protocol::Coap => max_payload(self.channel.net_slot),
            Protocol::Mqtt => {
                publish_capacity(self.mqtt.topic.len(), self.mqtt.qos(), self.transport.mss)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(SimError::config("name", "must be non-empty"));
        }
        if self.replications == 0 {
            return Err(SimError::config("replications", "must be >= 1"));
        }
        if self.n_rcsts == 0 || self.n_rcsts > u32::MAX as usize / 2 {
            return Err(SimError::config("n_rcsts", "must be >= 1"));
        }
        self.channel.validate()?;
        self.mac.validate(self.channel.slots_per_block)?;
        self.transport.validate()?;
        self.coap.validate()?;
        self.traffic.validate()?;
        let per_rcst = self.traffic.n_sources.div_ceil(self.n_rcsts);
        if per_rcst > (u16::MAX - BASE_PORT) as usize + 1 {
            return Err(SimError::config(
                "traffic.n_sources",
                format!("{per_rcst} sources per RCST exceed the port space"),
            ));
        }
        if self.mqtt.qos > 1 {
            return Err(SimError::config("mqtt.qos", "must be 0 or 1"));
        }
        if self.mqtt.topic.is_empty() {
            return Err(SimError::config("mqtt.topic", "must be non-empty"));
        }
        if self.protocol == Protocol::Mqtt
            && self.transport.mss + SEGMENT_HEADER_LEN + NET_HEADER_LEN > self.channel.net_slot
        {
            return Err(SimError::config(
                "transport.mss",
                format!(
                    "{} B segments plus headers exceed the {} B net slot",
                    self.transport.mss, self.channel.net_slot
                ),
            ));
        }
        if self.per_packet_payload() == 0 {
            let field = match self.protocol {
                Protocol::Coap => "channel.net_slot",
                Protocol::Mqtt => "mqtt.topic",
            };
            return Err(SimError::config(field, "leaves no room for application payload"));
        }
        if !(self.run.max_sim_time.is_finite() && self.run.max_sim_time > 0.0) {
            return Err(SimError::config("run.max_sim_time", "must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Scenario::coap(1).validate().unwrap();
        Scenario::mqtt().validate().unwrap();
        assert_eq!(Scenario::coap(1).per_packet_payload(), 142);
        assert_eq!(Scenario::mqtt().per_packet_payload(), 136);
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::coap(10);
        let back = Scenario::from_toml_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn minimal_file() {
        let s = Scenario::from_toml_str("protocol = \"mqtt\"\n").unwrap();
        assert_eq!(s.protocol, Protocol::Mqtt);
        assert_eq!(s.n_rcsts, 10_000);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("protocol = \"coap\"\n[coap]\nnstart = 101\n", "coap.nstart"),
            ("protocol = \"coap\"\n[coap]\nnstart = 0\n", "coap.nstart"),
            ("protocol = \"coap\"\nn_rcsts = 0\n", "n_rcsts"),
            ("protocol = \"coap\"\n[channel]\nnet_slot = 20\n", "channel.net_slot"),
            ("protocol = \"mqtt\"\n[transport]\nmss = 200\n", "transport.mss"),
            ("protocol = \"mqtt\"\n[mqtt]\nqos = 2\n", "mqtt.qos"),
            ("protocol = \"coap\"\n[traffic]\nlambda_inv = -1.0\n", "traffic.lambda_inv"),
            ("protocol = \"coap\"\n[mac]\nreplicas = 65\n", "mac.replicas"),
        ];
        for (text, field) in cases {
            let e = Scenario::from_toml_str(text).unwrap_err().to_string();
            assert!(e.contains(field), "{text:?}: {e}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Scenario::from_toml_str("protocol = \"coap\"\nbogus = 1\n").is_err());
        assert!(Scenario::from_toml_str("protocol = \"coap\"\n[coap]\nnstrat = 3\n").is_err());
    }
}
