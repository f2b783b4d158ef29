pub mod data;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod metalearn;
pub mod numerics;
pub mod parser;
pub mod retriever;
pub mod rnn;
pub mod vmf;

pub use error::{Error, Result};
pub mod experiment;
