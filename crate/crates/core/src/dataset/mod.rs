//! Task definitions, source ingestion, pool sampling and feature encoding.

mod encode;
mod pool;
mod profile;
mod schema;
pub mod synth;

use std::fmt;

pub use encode::{Column, EncodedProfile, Encoder};
pub use pool::{
    sample_pool, Partition, ProfilePool, StratumTargets, CYCLES, MINITEST_SIZE, POSTTEST_SIZE, PRETEST_SIZE,
    SESSION_PROFILES,
};
pub use profile::{load_csv, read_csv, write_csv, AttributeValue, Profile, ID_COLUMN, LABEL_COLUMN};
pub use schema::{AttributeKind, AttributeSchema, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub attribute: String,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: `{}`: {}", self.line, self.attribute, self.reason)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("csv header: {0}")]
    Header(String),
    #[error("{} invalid row(s); first: {}", .0.len(), .0[0])]
    InvalidRows(Vec<RowError>),
    #[error("profile `{profile_id}`: `{attribute}`: {reason}")]
    InvalidProfile {
        profile_id: String,
        attribute: String,
        reason: String,
    },
    #[error("duplicate profile id `{0}`")]
    DuplicateId(String),
    #[error("stratum z={z}, y={y} needs {needed} profiles, only {available} available")]
    InsufficientStratum {
        z: u8,
        y: u8,
        needed: usize,
        available: usize,
    },
    #[error("partition: {0}")]
    Partition(String),
    #[error("feature width {got}, expected {expected}")]
    Width { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
