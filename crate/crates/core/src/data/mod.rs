//! CSV ingestion, categorical encoding, standardization and the seeded
//! train/test split.

mod encode;
mod raw;
mod schema;
pub mod synthetic;

pub use encode::{
    encode_and_split, group_stats, Dataset, DatasetMeta, EncodedColumn, Encoder, GroupStats, Split, SplitSpec,
};
pub use raw::{load_csv, parse_csv, RawColumn, RawDataset};
pub use schema::{
    ColumnDecl, ColumnKind, ColumnSchema, SchemaConfig, SensitiveSpec, TargetSpec, LAW_SCHOOL_SCHEMA,
    STUDENT_MATH_SCHEMA,
};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("column `{0}` not found in the CSV header")]
    UnknownColumn(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { line: usize, column: String, value: String },
    #[error("column `{column}` is declared binary but holds {values:?}")]
    NotBinary { column: String, values: Vec<String> },
    #[error("empty data: {0}")]
    Empty(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
}

#[cfg(test)]
mod tests;
