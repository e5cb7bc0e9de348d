//! Plant-file ingestion, benchmark execution and reporting.

pub mod plantfile;
pub mod report;
pub mod runner;
