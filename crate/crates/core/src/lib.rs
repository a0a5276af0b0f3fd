//! Collaborative knowledge capitalization for economic-intelligence decision
//! problems: actors annotate documents, the annotations and decisions are kept
//! as versioned knowledge resources, and past cases are retrieved and
//! recommended. All state is rebuilt from an append-only log.

pub mod annotation;
pub mod awareness;
pub mod config;
pub mod domain;
pub mod error;
pub mod exploitation;
pub mod fixture;
pub mod ids;
pub mod log;
pub mod repository;
pub mod service;

pub use config::ServiceConfig;
pub use error::{Error, Result};
pub use service::KnowledgeService;
