//! CoAP message codec (RFC 7252 wire layout).
//!
//! Layout: 4-byte fixed header, 0..=8 token bytes, delta-encoded options,
//! then `0xFF` and the payload when the payload is non-empty.

use crate::error::{Result, SimError};

pub const FIXED_HEADER_LEN: usize = 4;
pub const MAX_TOKEN_LEN: usize = 8;
pub const PAYLOAD_MARKER: u8 = 0xFF;

pub const OPTION_OBSERVE: u16 = 6;
pub const OPTION_URI_PATH: u16 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageType {
    Confirmable,
    NonConfirmable,
    Ack,
    Reset,
}

impl MessageType {
    fn bits(self) -> u8 {
        match self {
            MessageType::Confirmable => 0,
            MessageType::NonConfirmable => 1,
            MessageType::Ack => 2,
            MessageType::Reset => 3,
        }
    }

    fn from_bits(b: u8) -> Self {
        match b & 0x3 {
            0 => MessageType::Confirmable,
            1 => MessageType::NonConfirmable,
            2 => MessageType::Ack,
            _ => MessageType::Reset,
        }
    }
}

/// Request/response code as `class.detail`, e.g. 2.05 Content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Code(pub u8);

impl Code {
    pub const EMPTY: Code = Code(0x00);
    pub const GET: Code = Code(0x01);
    pub const CONTENT: Code = Code(0x45);

    pub fn class(self) -> u8 {
        self.0 >> 5
    }

    pub fn detail(self) -> u8 {
        self.0 & 0x1f
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoapOption {
    pub number: u16,
    pub value: Vec<u8>,
}

impl CoapOption {
    /// Observe option carrying `seq` as a minimal-length unsigned integer.
    pub fn observe(seq: u32) -> Self {
        CoapOption {
            number: OPTION_OBSERVE,
            value: encode_uint(seq & 0x00FF_FFFF),
        }
    }

    pub fn uri_path(segment: &str) -> Self {
        CoapOption {
            number: OPTION_URI_PATH,
            value: segment.as_bytes().to_vec(),
        }
    }
}

fn encode_uint(v: u32) -> Vec<u8> {
    let bytes = v.to_be_bytes();
    let skip = bytes.iter().take_while(|&&b| b == 0).count();
    bytes[skip..].to_vec()
}

pub fn decode_uint(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0u32, |acc, &b| (acc << 8) | b as u32)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoapMessage {
    pub mtype: MessageType,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    /// Must be sorted by option number.
    pub options: Vec<CoapOption>,
    pub payload: Vec<u8>,
}

impl CoapMessage {
    /// Empty ACK echoing `message_id`.
    pub fn ack(message_id: u16) -> Self {
        CoapMessage {
            mtype: MessageType::Ack,
            code: Code::EMPTY,
            message_id,
            token: Vec::new(),
            options: Vec::new(),
            payload: Vec::new(),
        }
    }

    /// Confirmable 2.05 notification for an observe registration.
    pub fn notification(token: &[u8], observe_seq: u32, payload: Vec<u8>) -> Self {
        CoapMessage {
            mtype: MessageType::Confirmable,
            code: Code::CONTENT,
            message_id: 0,
            token: token.to_vec(),
            options: vec![CoapOption::observe(observe_seq)],
            payload,
        }
    }

    pub fn observe(&self) -> Option<u32> {
        self.options
            .iter()
            .find(|o| o.number == OPTION_OBSERVE)
            .map(|o| decode_uint(&o.value))
    }

    /// Encoded length of the option section.
    pub fn options_len(&self) -> usize {
        let mut prev = 0u16;
        self.options
            .iter()
            .map(|o| {
                let delta = o.number - prev;
                prev = o.number;
                1 + ext_len(delta as usize) + ext_len(o.value.len()) + o.value.len()
            })
            .sum()
    }

    pub fn encoded_len(&self) -> usize {
        let body = if self.payload.is_empty() {
            0
        } else {
            1 + self.payload.len()
        };
        FIXED_HEADER_LEN + self.token.len() + self.options_len() + body
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.token.len() > MAX_TOKEN_LEN {
            return Err(SimError::contract(format!(
                "token of {} bytes exceeds {MAX_TOKEN_LEN}",
                self.token.len()
            )));
        }
        if self.options.windows(2).any(|w| w[0].number > w[1].number) {
            return Err(SimError::contract("options must be sorted by number"));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push((1 << 6) | (self.mtype.bits() << 4) | self.token.len() as u8);
        out.push(self.code.0);
        out.extend_from_slice(&self.message_id.to_be_bytes());
        out.extend_from_slice(&self.token);
        let mut prev = 0u16;
        for o in &self.options {
            let delta = (o.number - prev) as usize;
            prev = o.number;
            let len = o.value.len();
            if len > 269 + 0xFFFF {
                return Err(SimError::contract("option value too long"));
            }
            out.push((nibble(delta) << 4) | nibble(len));
            push_ext(&mut out, delta);
            push_ext(&mut out, len);
            out.extend_from_slice(&o.value);
        }
        if !self.payload.is_empty() {
            out.push(PAYLOAD_MARKER);
            out.extend_from_slice(&self.payload);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<CoapMessage> {
        let err = |r: &str| SimError::decode("CoAP message", r.to_string());
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(err("shorter than fixed header"));
        }
        if bytes[0] >> 6 != 1 {
            return Err(err("unsupported version"));
        }
        let mtype = MessageType::from_bits(bytes[0] >> 4);
        let tkl = (bytes[0] & 0x0F) as usize;
        if tkl > MAX_TOKEN_LEN {
            return Err(err("token length > 8"));
        }
        let code = Code(bytes[1]);
        let message_id = u16::from_be_bytes([bytes[2], bytes[3]]);
        let mut pos = FIXED_HEADER_LEN;
        let token = bytes
            .get(pos..pos + tkl)
            .ok_or_else(|| err("truncated token"))?
            .to_vec();
        pos += tkl;
        let mut options = Vec::new();
        let mut number = 0u16;
        let mut payload = Vec::new();
        while pos < bytes.len() {
            let b = bytes[pos];
            pos += 1;
            if b == PAYLOAD_MARKER {
                if pos == bytes.len() {
                    return Err(err("payload marker with empty payload"));
                }
                payload = bytes[pos..].to_vec();
                break;
            }
            let delta = read_ext(bytes, &mut pos, b >> 4).ok_or_else(|| err("bad option delta"))?;
            let len = read_ext(bytes, &mut pos, b & 0x0F).ok_or_else(|| err("bad option length"))?;
            number = number
                .checked_add(delta as u16)
                .ok_or_else(|| err("option number overflow"))?;
            let value = bytes
                .get(pos..pos + len)
                .ok_or_else(|| err("truncated option value"))?
                .to_vec();
            pos += len;
            options.push(CoapOption { number, value });
        }
        Ok(CoapMessage {
            mtype,
            code,
            message_id,
            token,
            options,
            payload,
        })
    }
}

fn nibble(v: usize) -> u8 {
    match v {
        0..=12 => v as u8,
        13..=268 => 13,
        _ => 14,
    }
}

fn ext_len(v: usize) -> usize {
    match v {
        0..=12 => 0,
        13..=268 => 1,
        _ => 2,
    }
}

fn push_ext(out: &mut Vec<u8>, v: usize) {
    match v {
        0..=12 => {}
        13..=268 => out.push((v - 13) as u8),
        _ => out.extend_from_slice(&((v - 269) as u16).to_be_bytes()),
    }
}

fn read_ext(bytes: &[u8], pos: &mut usize, nib: u8) -> Option<usize> {
    match nib {
        0..=12 => Some(nib as usize),
        13 => {
            let v = *bytes.get(*pos)? as usize + 13;
            *pos += 1;
            Some(v)
        }
        14 => {
            let hi = *bytes.get(*pos)?;
            let lo = *bytes.get(*pos + 1)?;
            *pos += 2;
            Some(u16::from_be_bytes([hi, lo]) as usize + 269)
        }
        _ => None,
    }
}
