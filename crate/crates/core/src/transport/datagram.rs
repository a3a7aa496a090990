use crate::error::{Result, SimError};

use super::net::{NetHeader, Protocol, NET_HEADER_LEN};

pub const DATAGRAM_HEADER_LEN: usize = 8;

/// UDP-shaped header: ports, length, checksum (always zero here).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatagramHeader {
    pub src_port: u16,
    pub dst_port: u16,
    /// Header plus payload, bytes.
    pub length: u16,
}

impl DatagramHeader {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.length.to_be_bytes());
        out.extend_from_slice(&[0, 0]);
    }

    pub fn decode(bytes: &[u8]) -> Result<(DatagramHeader, &[u8])> {
        if bytes.len() < DATAGRAM_HEADER_LEN {
            return Err(SimError::decode("datagram header", "truncated"));
        }
        let h = DatagramHeader {
            src_port: u16::from_be_bytes([bytes[0], bytes[1]]),
            dst_port: u16::from_be_bytes([bytes[2], bytes[3]]),
            length: u16::from_be_bytes([bytes[4], bytes[5]]),
        };
        if h.length as usize != bytes.len() {
            return Err(SimError::decode(
                "datagram header",
                format!("length field {} but {} bytes", h.length, bytes.len()),
            ));
        }
        Ok((h, &bytes[DATAGRAM_HEADER_LEN..]))
    }
}

/// Connectionless, unreliable service: one datagram per MAC PDU on the
/// return link, never retransmitted.
#[derive(Clone, Copy, Debug)]
pub struct DatagramService {
    max_packet: usize,
}

impl DatagramService {
    /// `max_packet` is the largest network packet the lower layer carries
    /// (the net slot on the return link).
    pub fn new(max_packet: usize) -> Self {
        DatagramService { max_packet }
    }

    /// Largest application payload that fits in one packet.
    pub fn max_payload(&self) -> usize {
        self.max_packet
            .saturating_sub(NET_HEADER_LEN + DATAGRAM_HEADER_LEN)
    }

    /// Wraps `payload` in datagram and network headers.
    pub fn dgram_send(
        &self,
        src: (u32, u16),
        dst: (u32, u16),
        payload: &[u8],
    ) -> Result<Vec<u8>> {
        let total = NET_HEADER_LEN + DATAGRAM_HEADER_LEN + payload.len();
        if total > self.max_packet {
            return Err(SimError::contract(format!(
                "datagram of {total} B exceeds {} B packet limit",
                self.max_packet
            )));
        }
        let mut out = Vec::with_capacity(total);
        NetHeader {
            protocol: Protocol::Udp,
            src: src.0,
            dst: dst.0,
            total_len: total as u16,
        }
        .encode_into(&mut out);
        DatagramHeader {
            src_port: src.1,
            dst_port: dst.1,
            length: (DATAGRAM_HEADER_LEN + payload.len()) as u16,
        }
        .encode_into(&mut out);
        out.extend_from_slice(payload);
        Ok(out)
    }

    /// Inverse of [`dgram_send`](Self::dgram_send).
    pub fn dgram_recv(packet: &[u8]) -> Result<(NetHeader, DatagramHeader, &[u8])> {
        let (net, rest) = NetHeader::decode(packet)?;
        if net.protocol != Protocol::Udp {
            return Err(SimError::decode("datagram", "not a UDP packet"));
        }
        let (h, payload) = DatagramHeader::decode(rest)?;
        Ok((net, h, payload))
    }
}
