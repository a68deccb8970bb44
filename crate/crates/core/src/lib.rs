pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod error;
pub mod eval;
pub mod numcore;
pub mod supernet;
pub mod training;

pub use error::{Result, SanasError};
