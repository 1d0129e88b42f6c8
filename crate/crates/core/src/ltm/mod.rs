//! Long-term memory: admission filtering, lossless online compression, offline
//! latent encoding, sidecar-backed existence checks, recall and forgetting.

pub mod compress;
pub mod filter;
pub mod latent;
pub mod record;
pub mod store;

pub use filter::{filter, FilterPolicy};
pub use latent::{LatentConfig, LatentEncoder, LatentModel, LinearEncoder};
pub use record::{Blob, LtmRecord, LtmTier, SidecarMetadata};
pub use store::{EncodeReport, ForgetFilter, LtmOptions, LtmStats, LtmStore};
