//! HTTP/JSON service and command-line front end for the recommendation engine.

pub mod api;
pub mod cli;
pub mod engine;

pub use engine::{Engine, EngineError};
