//! Transport services over the satellite hop: an unreliable datagram
//! service carrying CoAP and a reliable NewReno byte stream carrying MQTT.

mod datagram;
mod net;
mod stream;

pub use datagram::{DatagramHeader, DatagramService, DATAGRAM_HEADER_LEN};
pub use net::{NetHeader, Protocol, NET_HEADER_LEN};
pub use stream::{
    ConnState, Phase, Segment, SegmentHeader, StreamConfig, StreamOutput, TcpEndpoint, TimerCmd,
    SEGMENT_HEADER_LEN,
};
