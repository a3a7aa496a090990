//! Observe registrations held by the proxy, and segmentation of producer
//! bursts into confirmable notifications.

use std::collections::{BTreeMap, BTreeSet};

use super::message::CoapMessage;
use crate::error::{Result, SimError};

/// Token bytes carried by every notification.
pub const TOKEN_LEN: usize = 3;
/// Observe option on the wire in the worst case: 1 B header + 3 B value.
pub const OBSERVE_OPTION_LEN: usize = 4;
/// 4 B fixed header + token + Observe option + payload marker.
pub const COAP_OVERHEAD: usize = 4 + TOKEN_LEN + OBSERVE_OPTION_LEN + 1;

/// Largest notification payload that keeps one message per net slot.
pub const fn max_payload(net_slot: usize) -> usize {
    net_slot
        .saturating_sub(crate::transport::NET_HEADER_LEN)
        .saturating_sub(crate::transport::DATAGRAM_HEADER_LEN)
        .saturating_sub(COAP_OVERHEAD)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ObserveRegistration {
    pub client: u32,
    pub uri: String,
    pub token: [u8; TOKEN_LEN],
    /// Observe value of the next notification (24-bit, wraps).
    pub seq: u32,
}

/// Proxy-side registration table. Clients register with the proxy; the proxy
/// in turn observes the origin server that owns the URI.
#[derive(Debug, Default)]
pub struct ObserveProxy {
    regs: BTreeMap<(u32, String), ObserveRegistration>,
    upstream: BTreeSet<String>,
    next_token: u32,
    refreshes: u64,
}

impl ObserveProxy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.regs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regs.is_empty()
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    /// True once the proxy has registered upstream for `uri`.
    pub fn observes_upstream(&self, uri: &str) -> bool {
        self.upstream.contains(uri)
    }

    /// Registers `client` for `uri`. A repeated registration refreshes the
    /// existing one and keeps its token and sequence counter.
    pub fn register_observe(&mut self, client: u32, uri: &str) -> Result<&ObserveRegistration> {
        if uri.is_empty() || !uri.starts_with('/') {
            return Err(SimError::config("coap.uri", format!("invalid URI {uri:?}")));
        }
        let key = (client, uri.to_string());
        if self.regs.contains_key(&key) {
            self.refreshes += 1;
        } else {
            if self.next_token >= 1 << (8 * TOKEN_LEN) {
                return Err(SimError::contract("observe token space exhausted"));
            }
            let t = self.next_token.to_be_bytes();
            self.next_token += 1;
            self.regs.insert(
                key.clone(),
                ObserveRegistration {
                    client,
                    uri: uri.to_string(),
                    token: [t[1], t[2], t[3]],
                    seq: 0,
                },
            );
            self.upstream.insert(uri.to_string());
        }
        Ok(&self.regs[&key])
    }

    pub fn registration(&self, client: u32, uri: &str) -> Option<&ObserveRegistration> {
        self.regs.get(&(client, uri.to_string()))
    }

    /// Splits a producer burst into confirmable 2.05 notifications of at most
    /// `max_payload` bytes each. Message ids are assigned by the sender window.
    pub fn notify(
        &mut self,
        client: u32,
        uri: &str,
        burst: &[u8],
        max_payload: usize,
    ) -> Result<Vec<CoapMessage>> {
        if max_payload == 0 {
            return Err(SimError::config("coap.max_payload", "must be > 0"));
        }
        let reg = self
            .regs
            .get_mut(&(client, uri.to_string()))
            .ok_or_else(|| {
                SimError::contract(format!("no registration for client {client} on {uri}"))
            })?;
        let mut out = Vec::with_capacity(burst.len().div_ceil(max_payload));
        for chunk in burst.chunks(max_payload) {
            out.push(CoapMessage::notification(
                &reg.token,
                reg.seq,
                chunk.to_vec(),
            ));
            reg.seq = (reg.seq + 1) & 0x00FF_FFFF;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coap::message::{Code, MessageType};

    #[test]
    fn max_payload_for_default_slot() {
        assert_eq!(COAP_OVERHEAD, 12);
        assert_eq!(max_payload(182), 142);
    }

    #[test]
    fn single_registration() {
        let mut p = ObserveProxy::new();
        p.register_observe(1, "/sensor1").unwrap();
        assert_eq!(p.len(), 1);
        assert!(p.observes_upstream("/sensor1"));
    }

    #[test]
    fn duplicate_registration_refreshes() {
        let mut p = ObserveProxy::new();
        let tok = p.register_observe(1, "/a").unwrap().token;
        p.notify(1, "/a", &[0; 10], 142).unwrap();
        let again = p.register_observe(1, "/a").unwrap();
        assert_eq!(again.token, tok);
        assert_eq!(again.seq, 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p.refreshes(), 1);
    }

    #[test]
    fn independent_sequence_counters() {
        let mut p = ObserveProxy::new();
        p.register_observe(1, "/a").unwrap();
        p.register_observe(1, "/b").unwrap();
        assert_eq!(p.len(), 2);
        p.notify(1, "/a", &[0; 300], 142).unwrap();
        assert_eq!(p.registration(1, "/a").unwrap().seq, 3);
        assert_eq!(p.registration(1, "/b").unwrap().seq, 0);
        assert_ne!(
            p.registration(1, "/a").unwrap().token,
            p.registration(1, "/b").unwrap().token
        );
    }

    #[test]
    fn burst_segmentation() {
        let mut p = ObserveProxy::new();
        p.register_observe(7, "/s").unwrap();
        let burst: Vec<u8> = (0..931u32).map(|i| i as u8).collect();
        let msgs = p.notify(7, "/s", &burst, 142).unwrap();
        assert_eq!(msgs.len(), 7);
        assert_eq!(msgs[6].payload.len(), 931 - 6 * 142);
        let joined: Vec<u8> = msgs.iter().flat_map(|m| m.payload.clone()).collect();
        assert_eq!(joined, burst);
        for (i, m) in msgs.iter().enumerate() {
            assert_eq!(m.mtype, MessageType::Confirmable);
            assert_eq!(m.code, Code::CONTENT);
            assert_eq!(m.observe(), Some(i as u32));
            assert!(m.encoded_len() <= 154);
        }
        assert_eq!(p.notify(7, "/s", &[1; 142], 142).unwrap().len(), 1);
    }

    #[test]
    fn notify_without_registration_fails() {
        let mut p = ObserveProxy::new();
        assert!(p.notify(1, "/x", &[0; 5], 142).is_err());
        assert!(p.register_observe(1, "nope").is_err());
    }
}
