//! Minimal IPv4-shaped network header: fixed 20 bytes, no options.

use crate::error::{Result, SimError};

pub const NET_HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }

    fn from_number(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Protocol::Tcp),
            17 => Ok(Protocol::Udp),
            other => Err(SimError::decode("network header", format!("protocol {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetHeader {
    pub protocol: Protocol,
    pub src: u32,
    pub dst: u32,
    /// Header plus payload, bytes.
    pub total_len: u16,
}

impl NetHeader {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&self.total_len.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
        out.push(64);
        out.push(self.protocol.number());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.src.to_be_bytes());
        out.extend_from_slice(&self.dst.to_be_bytes());
    }

    /// Parses the header and returns it with the payload slice.
    pub fn decode(bytes: &[u8]) -> Result<(NetHeader, &[u8])> {
        if bytes.len() < NET_HEADER_LEN {
            return Err(SimError::decode("network header", "truncated"));
        }
        if bytes[0] != 0x45 {
            return Err(SimError::decode(
                "network header",
                format!("version/ihl byte {:#04x}", bytes[0]),
            ));
        }
        let total_len = u16::from_be_bytes([bytes[2], bytes[3]]);
        if total_len as usize != bytes.len() {
            return Err(SimError::decode(
                "network header",
                format!("length field {total_len} but {} bytes", bytes.len()),
            ));
        }
        let protocol = Protocol::from_number(bytes[9])?;
        let src = u32::from_be_bytes(bytes[12..16].try_into().unwrap());
        let dst = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
        Ok((
            NetHeader {
                protocol,
                src,
                dst,
                total_len,
            },
            &bytes[NET_HEADER_LEN..],
        ))
    }
}
