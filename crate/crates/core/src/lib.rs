//! Flow-level network performance modeling.
//!
//! A packet-level discrete-event simulator produces per-flow, per-window
//! delay and jitter statistics; a message-passing network over the expanded
//! flow/link/queue/device graph learns to predict them window by window,
//! carrying queue and device state across windows.

pub mod dataset;
pub mod des;
pub mod graph;
pub mod model;
pub mod nn;
pub mod scenario;
pub mod train;
