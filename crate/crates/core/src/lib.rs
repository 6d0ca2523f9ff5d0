//! Atomic multi-writer multi-reader register emulation over message passing.
//!
//! Three register protocols share one quorum layer: full-replication
//! MW-ABD, erasure-coded CAS, and CASSS, the self-stabilizing coded variant
//! with bounded storage, recyclable client identities and a global reset
//! for counter overflow. Nodes are sans-I/O state machines ([`node::Node`])
//! driven either by the deterministic simulator in [`sim`] or by the
//! UDP/TCP runtime in [`transport::net`].

pub mod bench;
pub mod cas;
pub mod client;
pub mod config;
pub mod codec;
pub mod error;
pub mod gossip;
pub mod history;
pub mod linearizability;
pub mod mwabd;
pub mod node;
pub mod quorum;
pub mod reincarnation;
pub mod reset;
pub mod server;
pub mod sim;
pub mod store;
pub mod transport;
pub mod types;
pub mod value;
pub mod wire;

pub use client::{Client, ClientConfig, OpRequest};
pub use error::{Error, Result};
pub use history::{History, OpKind, OpRecord, Outcome};
pub use server::{Server, ServerConfig};
pub use types::{Bounds, HwAddr, Phase, QuorumConfig, Record, Tag, Uid, Variant};
