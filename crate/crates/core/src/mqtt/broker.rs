//! Broker topic table and publisher-side burst segmentation.

use std::collections::{BTreeMap, BTreeSet};

use super::packet::{varint_len, MqttPacket, QoS};
use crate::error::{Result, SimError};

/// What the broker did with incoming bytes on one connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BrokerEvent {
    /// Bytes to send back on the same connection.
    Reply(Vec<u8>),
    /// A PUBLISH fanned out to the topic's subscribers.
    Delivered {
        topic: String,
        payload: Vec<u8>,
        subscribers: Vec<u32>,
    },
}

#[derive(Debug, Default)]
struct Session {
    client_id: Option<String>,
    rx: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct Broker {
    topics: BTreeMap<String, BTreeSet<u32>>,
    sessions: BTreeMap<u32, Session>,
    published: BTreeMap<String, u64>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Active subscribers of `topic`.
    pub fn subscribers(&self, topic: &str) -> Vec<u32> {
        self.topics
            .get(topic)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    /// Payload bytes accepted for `topic` so far.
    pub fn published_bytes(&self, topic: &str) -> u64 {
        self.published.get(topic).copied().unwrap_or(0)
    }

    pub fn is_connected(&self, conn: u32) -> bool {
        self.sessions
            .get(&conn)
            .is_some_and(|s| s.client_id.is_some())
    }

    /// Bytes of an incomplete packet held for `conn`.
    pub fn buffered(&self, conn: u32) -> usize {
        self.sessions.get(&conn).map_or(0, |s| s.rx.len())
    }

    /// Feeds in-order stream bytes from connection `conn`.
    pub fn on_bytes(&mut self, conn: u32, bytes: &[u8]) -> Result<Vec<BrokerEvent>> {
        let mut rx = {
            let s = self.sessions.entry(conn).or_default();
            s.rx.extend_from_slice(bytes);
            std::mem::take(&mut s.rx)
        };
        let mut events = Vec::new();
        let mut used = 0;
        let result = loop {
            match MqttPacket::decode_prefix(&rx[used..]) {
                Ok(Some((p, n))) => {
                    used += n;
                    if let Err(e) = self.handle(conn, p, &mut events) {
                        break Err(e);
                    }
                }
                Ok(None) => break Ok(()),
                Err(e) => break Err(e),
            }
        };
        rx.drain(..used);
        self.sessions.entry(conn).or_default().rx = rx;
        result.map(|_| events)
    }

    fn handle(&mut self, conn: u32, p: MqttPacket, events: &mut Vec<BrokerEvent>) -> Result<()> {
        let session = self.sessions.entry(conn).or_default();
        if session.client_id.is_none() && !matches!(p, MqttPacket::Connect { .. }) {
            return Err(SimError::contract(format!(
                "connection {conn} sent a packet before CONNECT"
            )));
        }
        match p {
            MqttPacket::Connect { client_id, .. } => {
                let present = session.client_id.is_some();
                session.client_id = Some(client_id);
                events.push(BrokerEvent::Reply(
                    MqttPacket::ConnAck {
                        session_present: present,
                        return_code: 0,
                    }
                    .encode()?,
                ));
            }
            MqttPacket::Subscribe { packet_id, topics } => {
                let mut codes = Vec::with_capacity(topics.len());
                for (t, q) in topics {
                    self.topics.entry(t).or_default().insert(conn);
                    codes.push(q as u8);
                }
                events.push(BrokerEvent::Reply(
                    MqttPacket::SubAck {
                        packet_id,
                        return_codes: codes,
                    }
                    .encode()?,
                ));
            }
            MqttPacket::Publish {
                topic,
                qos,
                packet_id,
                payload,
                ..
            } => {
                *self.published.entry(topic.clone()).or_default() += payload.len() as u64;
                if let (QoS::AtLeastOnce, Some(id)) = (qos, packet_id) {
                    events.push(BrokerEvent::Reply(
                        MqttPacket::PubAck { packet_id: id }.encode()?,
                    ));
                }
                let subscribers = self.subscribers(&topic);
                events.push(BrokerEvent::Delivered {
                    topic,
                    payload,
                    subscribers,
                });
            }
            MqttPacket::PubAck { .. } => {}
            other => {
                return Err(SimError::contract(format!(
                    "broker does not accept {other:?}"
                )))
            }
        }
        Ok(())
    }
}

/// Publisher role: turns bursts into PUBLISH packets sized to the MSS.
#[derive(Clone, Debug)]
pub struct Publisher {
    client_id: String,
    topic: String,
    qos: QoS,
    next_packet_id: u16,
    chunk: usize,
}

impl Publisher {
    pub fn new(client_id: &str, topic: &str, qos: QoS, mss: usize) -> Result<Self> {
        if topic.is_empty() {
            return Err(SimError::config("mqtt.topic", "must be non-empty"));
        }
        let chunk = publish_capacity(topic.len(), qos, mss);
        if chunk == 0 {
            return Err(SimError::config(
                "mqtt.topic",
                format!("topic of {} B leaves no room in a {mss} B segment", topic.len()),
            ));
        }
        Ok(Publisher {
            client_id: client_id.to_string(),
            topic: topic.to_string(),
            qos,
            next_packet_id: 1,
            chunk,
        })
    }

    /// Application bytes carried by one full PUBLISH.
    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn connect_packet(&self) -> MqttPacket {
        MqttPacket::Connect {
            client_id: self.client_id.clone(),
            keep_alive: 0,
            clean_session: true,
        }
    }

    /// One PUBLISH per `chunk()` bytes of the burst.
    pub fn publish_burst(&mut self, burst: &[u8]) -> Vec<MqttPacket> {
        burst
            .chunks(self.chunk)
            .map(|c| {
                let packet_id = (self.qos == QoS::AtLeastOnce).then(|| {
                    let id = self.next_packet_id;
                    self.next_packet_id = self.next_packet_id.checked_add(1).unwrap_or(1);
                    id
                });
                MqttPacket::Publish {
                    topic: self.topic.clone(),
                    qos: self.qos,
                    retain: false,
                    dup: false,
                    packet_id,
                    payload: c.to_vec(),
                }
            })
            .collect()
    }
}

/// Largest payload whose PUBLISH fits in `mss` bytes.
pub fn publish_capacity(topic_len: usize, qos: QoS, mss: usize) -> usize {
    let var_header = 2 + topic_len + if qos == QoS::AtLeastOnce { 2 } else { 0 };
    (0..=mss)
        .rev()
        .find(|&p| {
            let rem = var_header + p;
            1 + varint_len(rem) + rem <= mss
        })
        .unwrap_or(0)
}
