//! Deterministic SYN-flood mitigation engine.
//!
//! The engine is a pure segment-in/actions-out state machine: feed it a
//! parsed [`packet::Segment`] and the current time, get back an
//! [`engine::ActionList`] of segments to emit or a drop reason. It never
//! touches a socket or a clock itself.

pub mod conn_state;
pub mod cookie;
pub mod engine;
pub mod packet;
pub mod pcap;
pub mod siphash;
pub mod whitelist;
