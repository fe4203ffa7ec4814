//! Deterministic simulation of a TEE-assisted DAG mempool (Rorqual), a
//! pull-based certified-DAG baseline, and Bullshark ordering on top.

pub mod codec;
pub mod enclave;
pub mod message;
pub mod types;
pub mod dag;
pub mod bullshark;
pub mod node;
pub mod rorqual;
pub mod pull;
pub mod simnet;
pub mod harness;
