//! Cascaded deep factorization of speech frames into linguistic, speaker and
//! emotion factors, with additive log-spectrum reconstruction.

pub mod cascade;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod models;
pub mod nncore;
pub mod reconstruct;
pub mod seeds;
pub mod synthdata;

pub use error::{Error, Result};
