//! Reading daily series and reading/writing model documents.

pub mod ingest;
pub mod model_io;

pub use ingest::{
    ingest, ingest_plain, ColumnRef, DailySeries, DateFormat, IngestConfig, Provenance,
};
pub use model_io::{fingerprint, load_model, save_model, ModelDocument, SCHEMA_VERSION};
