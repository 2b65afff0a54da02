//! Hidden-service mining for firmware images built from GSB executables.

pub mod config;
pub mod corpus;
pub mod dataflow;
pub mod endpoints;
pub mod engine;
pub mod graphs;
pub mod gsb;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod triage;
pub mod userview;
