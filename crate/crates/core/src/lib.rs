pub mod cli;
pub mod error;
pub mod geometry;
pub mod initsplit;
pub mod mixmodel;
pub mod prism;
pub mod protocol;
pub mod selftest;
pub mod solver;
pub mod tensorops;

pub use error::{Error, Result};
