//! Efficient layer attention: measure redundancy between the attention
//! distributions of adjacent layers, remap the divergences through a Beta
//! quantile mapping, and prune the retrievals that add nothing new.

pub mod attention;
pub mod divergence;
pub mod error;
pub mod io;
pub mod mapping;
pub mod pruning;
pub mod special;

pub use error::{ElaError, Result};
