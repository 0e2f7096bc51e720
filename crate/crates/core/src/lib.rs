//! An embedded property domain graph database.

pub mod algebra;
pub mod dgql;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod model;
pub mod path;
pub mod plan;
pub mod query;
pub mod storage;

pub use error::{Error, Result};
