//! Corpus files, oracle gateway with persistent cache, remote oracle client,
//! HTTP service and command line built on `ctxplain-core`.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod demo;
pub mod gateway;
pub mod http_oracle;
pub mod registry;
pub mod report;
pub mod service;
pub mod store;

pub use ctxplain_core as core_api;
