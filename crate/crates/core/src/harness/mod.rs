//! Evaluation, instance generation, data ingestion, experiments and the
//! remote oracle protocol.

pub mod evaluate;
pub mod experiment;
pub mod generate;
pub mod ingest;
pub mod remote;
