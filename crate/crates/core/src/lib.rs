//! Late points of simple random walk on the discrete torus and the tools needed to
//! study them numerically: lattice potential theory, random interlacements, soft local
//! times, excursion decompositions and pattern statistics.

pub mod error;
pub mod excursions;
pub mod interlacements;
pub mod late_stats;
pub mod lattice;
pub mod potential;
pub mod real;
pub mod rng;
pub mod slt;
pub mod stats;
pub mod torus;

pub use error::{Error, Result};
