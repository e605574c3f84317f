//! Orchestration for the fastfashion pipeline: a FIFO job queue for style
//! transfer, a content-addressed artifact store, the `/v1` HTTP API and the
//! operations shared with the `fastfashion` command line.

pub mod api;
pub mod artifacts;
pub mod config;
pub mod error;
pub mod queue;
pub mod schemas;
pub mod service;

pub use config::Config;
pub use error::{FieldError, ServiceError, ServiceResult};
pub use queue::{JobQueue, JobSnapshot, JobState, Runner};
pub use service::Service;
