//! Open-world classification over a dynamic set of seen classes.
//!
//! A shared meta-classifier compares a query embedding with the nearest
//! stored examples of each seen class and either picks a class or rejects
//! the query as belonging to none of them. Classes are added to or removed
//! from the seen set at run time without touching the model parameters.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod meta_classifier;
pub mod numkernel;
pub mod ranker;
pub mod registry;
pub mod trainer;

pub use error::{Error, Result};
