//! MQTT 3.1.1 control packets used by the publish/subscribe scenario.

use crate::error::{Result, SimError};

pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

const CONNECT: u8 = 1;
const CONNACK: u8 = 2;
const PUBLISH: u8 = 3;
const PUBACK: u8 = 4;
const SUBSCRIBE: u8 = 8;
const SUBACK: u8 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    fn from_bits(b: u8) -> Result<QoS> {
        match b {
            0 => Ok(QoS::AtMostOnce),
            1 => Ok(QoS::AtLeastOnce),
            _ => Err(SimError::decode("MQTT packet", format!("unsupported QoS {b}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MqttPacket {
    Connect {
        client_id: String,
        keep_alive: u16,
        clean_session: bool,
    },
    ConnAck {
        session_present: bool,
        return_code: u8,
    },
    Publish {
        topic: String,
        qos: QoS,
        retain: bool,
        dup: bool,
        /// Present iff `qos` is AtLeastOnce.
        packet_id: Option<u16>,
        payload: Vec<u8>,
    },
    PubAck {
        packet_id: u16,
    },
    Subscribe {
        packet_id: u16,
        topics: Vec<(String, QoS)>,
    },
    SubAck {
        packet_id: u16,
        return_codes: Vec<u8>,
    },
}

/// Appends the remaining-length varint (7 bits per byte, MSB continues).
pub fn encode_varint(mut v: usize, out: &mut Vec<u8>) -> Result<()> {
    if v > MAX_REMAINING_LENGTH {
        return Err(SimError::contract(format!("remaining length {v} too large")));
    }
    loop {
        let mut b = (v % 128) as u8;
        v /= 128;
        if v > 0 {
            b |= 0x80;
        }
        out.push(b);
        if v == 0 {
            return Ok(());
        }
    }
}

pub fn varint_len(v: usize) -> usize {
    match v {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Decodes a varint, returning the value and the number of bytes consumed.
pub fn decode_varint(bytes: &[u8]) -> Result<(usize, usize)> {
    let mut value = 0usize;
    for (i, &b) in bytes.iter().enumerate().take(4) {
        value |= ((b & 0x7F) as usize) << (7 * i);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(SimError::decode(
        "MQTT remaining length",
        if bytes.len() < 4 {
            "truncated varint"
        } else {
            "varint longer than 4 bytes"
        },
    ))
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| SimError::contract("string over 65535 B"))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .b
            .get(self.pos..self.pos + n)
            .ok_or_else(|| SimError::decode("MQTT packet", "truncated body"))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| SimError::decode("MQTT packet", "string is not UTF-8"))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.b[self.pos..];
        self.pos = self.b.len();
        s
    }

    fn done(&self) -> bool {
        self.pos == self.b.len()
    }
}

impl MqttPacket {
    /// Bytes of the fixed header's first byte, variable header and payload.
    fn body(&self) -> Result<(u8, Vec<u8>)> {
        let mut v = Vec::new();
        let first = match self {
            MqttPacket::Connect {
                client_id,
                keep_alive,
                clean_session,
            } => {
                put_str(&mut v, "MQTT")?;
                v.push(4);
                v.push(if *clean_session { 0x02 } else { 0 });
                v.extend_from_slice(&keep_alive.to_be_bytes());
                put_str(&mut v, client_id)?;
                CONNECT << 4
            }
            MqttPacket::ConnAck {
                session_present,
                return_code,
            } => {
                v.push(*session_present as u8);
                v.push(*return_code);
                CONNACK << 4
            }
            MqttPacket::Publish {
                topic,
                qos,
                retain,
                dup,
                packet_id,
                payload,
            } => {
                if topic.is_empty() {
                    return Err(SimError::contract("PUBLISH topic must be non-empty"));
                }
                if packet_id.is_some() != (*qos == QoS::AtLeastOnce) {
                    return Err(SimError::contract("PUBLISH packet id presence must match QoS"));
                }
                put_str(&mut v, topic)?;
                if let Some(id) = packet_id {
                    v.extend_from_slice(&id.to_be_bytes());
                }
                v.extend_from_slice(payload);
                (PUBLISH << 4) | ((*dup as u8) << 3) | ((*qos as u8) << 1) | *retain as u8
            }
            MqttPacket::PubAck { packet_id } => {
                v.extend_from_slice(&packet_id.to_be_bytes());
                PUBACK << 4
            }
            MqttPacket::Subscribe { packet_id, topics } => {
                if topics.is_empty() {
                    return Err(SimError::contract("SUBSCRIBE needs at least one topic"));
                }
                v.extend_from_slice(&packet_id.to_be_bytes());
                for (t, q) in topics {
                    put_str(&mut v, t)?;
                    v.push(*q as u8);
                }
                (SUBSCRIBE << 4) | 0x02
            }
            MqttPacket::SubAck {
                packet_id,
                return_codes,
            } => {
                v.extend_from_slice(&packet_id.to_be_bytes());
                v.extend_from_slice(return_codes);
                SUBACK << 4
            }
        };
        Ok((first, v))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let (first, body) = self.body()?;
        let mut out = Vec::with_capacity(1 + varint_len(body.len()) + body.len());
        out.push(first);
        encode_varint(body.len(), &mut out)?;
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn encoded_len(&self) -> Result<usize> {
        let (_, body) = self.body()?;
        Ok(1 + varint_len(body.len()) + body.len())
    }

    /// Decodes one packet from the front of `bytes`. Returns `Ok(None)` if
    /// more bytes are needed, otherwise the packet and its length.
    pub fn decode_prefix(bytes: &[u8]) -> Result<Option<(MqttPacket, usize)>> {
        if bytes.len() < 2 {
            return Ok(None);
        }
        let (remaining, n) = match decode_varint(&bytes[1..]) {
            Ok(v) => v,
            Err(_) if bytes.len() < 5 && bytes[1..].iter().all(|b| b & 0x80 != 0) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        };
        let total = 1 + n + remaining;
        if bytes.len() < total {
            return Ok(None);
        }
        let p = Self::decode_body(bytes[0], &bytes[1 + n..total])?;
        Ok(Some((p, total)))
    }

    pub fn decode(bytes: &[u8]) -> Result<MqttPacket> {
        match Self::decode_prefix(bytes)? {
            Some((p, n)) if n == bytes.len() => Ok(p),
            Some(_) => Err(SimError::decode("MQTT packet", "trailing bytes")),
            None => Err(SimError::decode("MQTT packet", "truncated packet")),
        }
    }

    fn decode_body(first: u8, body: &[u8]) -> Result<MqttPacket> {
        let bad = |r: &str| SimError::decode("MQTT packet", r.to_string());
        let flags = first & 0x0F;
        let mut r = Reader { b: body, pos: 0 };
        let p = match first >> 4 {
            CONNECT => {
                if r.string()? != "MQTT" {
                    return Err(bad("bad protocol name"));
                }
                if r.u8()? != 4 {
                    return Err(bad("unsupported protocol level"));
                }
                let cf = r.u8()?;
                if cf & !0x02 != 0 {
                    return Err(bad("unsupported connect flags"));
                }
                let keep_alive = r.u16()?;
                let client_id = r.string()?;
                MqttPacket::Connect {
                    client_id,
                    keep_alive,
                    clean_session: cf & 0x02 != 0,
                }
            }
            CONNACK => {
                let sp = r.u8()?;
                if sp > 1 {
                    return Err(bad("bad CONNACK flags"));
                }
                MqttPacket::ConnAck {
                    session_present: sp == 1,
                    return_code: r.u8()?,
                }
            }
            PUBLISH => {
                let qos = QoS::from_bits((flags >> 1) & 0x3)?;
                let topic = r.string()?;
                if topic.is_empty() {
                    return Err(bad("empty topic"));
                }
                let packet_id = match qos {
                    QoS::AtMostOnce => None,
                    QoS::AtLeastOnce => Some(r.u16()?),
                };
                MqttPacket::Publish {
                    topic,
                    qos,
                    retain: flags & 1 != 0,
                    dup: flags & 0x08 != 0,
                    packet_id,
                    payload: r.rest().to_vec(),
                }
            }
            PUBACK => MqttPacket::PubAck {
                packet_id: r.u16()?,
            },
            SUBSCRIBE => {
                if flags != 0x02 {
                    return Err(bad("bad SUBSCRIBE flags"));
                }
                let packet_id = r.u16()?;
                let mut topics = Vec::new();
                while !r.done() {
                    let t = r.string()?;
                    let q = QoS::from_bits(r.u8()?)?;
                    topics.push((t, q));
                }
                if topics.is_empty() {
                    return Err(bad("SUBSCRIBE without topics"));
                }
                MqttPacket::Subscribe { packet_id, topics }
            }
            SUBACK => MqttPacket::SubAck {
                packet_id: r.u16()?,
                return_codes: r.rest().to_vec(),
            },
            t => return Err(bad(&format!("unsupported packet type {t}"))),
        };
        if !r.done() {
            return Err(bad("trailing bytes in body"));
        }
        Ok(p)
    }
}
