//! MQTT over the stream transport: codec, broker, publisher.

mod broker;
mod packet;

pub use broker::{publish_capacity, Broker, BrokerEvent, Publisher};
pub use packet::{
    decode_varint, encode_varint, varint_len, MqttPacket, QoS, MAX_REMAINING_LENGTH,
};
