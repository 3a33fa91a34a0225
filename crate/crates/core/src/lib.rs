//! Bayesian CRB-driven symbol-level precoding for secure integrated sensing
//! and communication.

pub mod array_model;
pub mod bfim;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod precoder;
pub mod priors;

pub use error::{IsacError, Result};
