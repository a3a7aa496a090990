//! CoAP over the datagram transport: codec, observe proxy, sender window,
//! remote client.

mod client;
mod message;
mod observe;
mod window;

pub use client::{CoapReceiver, Delivery, ReceiveOutcome};
pub use message::{
    decode_uint, CoapMessage, CoapOption, Code, MessageType, FIXED_HEADER_LEN, MAX_TOKEN_LEN,
    OPTION_OBSERVE, OPTION_URI_PATH, PAYLOAD_MARKER,
};
pub use observe::{
    max_payload, ObserveProxy, ObserveRegistration, COAP_OVERHEAD, OBSERVE_OPTION_LEN, TOKEN_LEN,
};
pub use window::{AckOutcome, ArqConfig, ArqWindow, WindowEntry, NSTART_MAX};
