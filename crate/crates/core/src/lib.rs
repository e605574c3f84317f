//! Fast fashion prototyping engine.
//!
//! * [`trends`] clusters timestamped image embeddings and labels clusters as
//!   core, increasing or anomalous.
//! * [`features`] wraps the convolutional feature network.
//! * [`transfer`] synthesizes designs by optimizing a content + style loss.
//! * [`superres`] upscales designs with a three-stage convolutional network.
//! * [`feedback`] stores ratings and computes opinion scores.

pub mod error;
pub mod features;
pub mod feedback;
pub mod image;
pub mod nn;
pub mod optim;
pub mod superres;
pub mod transfer;
pub mod trends;
pub mod weights;

pub use error::{Error, Result};
pub use feedback::{DesignRecord, FeedbackStore, Rating, SegregationTable, SqliteStore};
pub use features::{ActivationSet, EmbeddingVector, Embedder, FeatureNet, LayerId};
pub use image::ImageBuffer;
pub use superres::{SRConfig, SRModel};
pub use transfer::{GenerationResult, NoiseSpec, TraceEntry, TransferConfig, TransferParams};
