pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error_analysis;
pub mod evaluator;
pub mod fsutil;
pub mod gateway;
pub mod kg;
pub mod report;
pub mod service;
pub mod store;
pub mod sync;
pub mod verbalizer;
