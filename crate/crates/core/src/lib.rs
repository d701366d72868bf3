//! Corpus engineering and evaluation for food entity recognition and linking.

pub mod balance;
pub mod bioc;
pub mod cli;
pub mod entity;
pub mod error;
pub mod eval;
pub mod folds;
pub mod gateway;
pub mod io;
pub mod ir;
pub mod pools;
pub mod prompt;
pub mod seed;
pub mod text;

pub use entity::{EntityRef, Ontology, UriMode};
pub use error::{Error, Result};
