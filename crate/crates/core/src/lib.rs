//! Weak-supervision engine for human-in-the-loop document triage.

pub mod active;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod label_model;
pub mod lf;
pub mod pipeline;
pub mod service;
pub mod synthetic;

pub use error::{Error, Result};
