//! Discrete-event simulator of IoT application protocols over a
//! random-access GEO satellite return link.
//!
//! CoAP (observe + proxy, NSTART-bounded window) rides a datagram service;
//! MQTT rides a NewReno byte stream. Both share a CRDSA random-access return
//! channel organised in 64-slot RA blocks and an ideal forward link.

pub mod channel;
pub mod coap;
pub mod error;
pub mod harness;
pub mod mac;
pub mod mqtt;
pub mod sim;
pub mod transport;
pub mod workload;

pub use error::{Result, SimError};
