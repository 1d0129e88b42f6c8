//! Networked memory: the MEM1 wire protocol, memory server, name service,
//! client library and stream-processing pipeline.

pub mod acceptor;
pub mod capacity;
pub mod client;
pub mod config;
pub mod error;
pub mod frame;
pub mod mns;
pub mod pipeline;
pub mod protocol;
pub mod server;

pub use client::{Connection, MemoryClient, Subscription};
pub use config::ServerConfig;
pub use error::NetError;
pub use mns::{MnsRegistry, MnsServer};
pub use server::MemoryServer;
