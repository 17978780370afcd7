//! Streaming video question answering engine: hierarchical aggregation-token
//! compression for a toy decoder, and an evidence-timed decision controller
//! that decides when enough of the stream has been seen to answer.

pub mod atdm;
pub mod backend;
pub mod config;
pub mod eval;
pub mod hpsi;
pub mod stream;
