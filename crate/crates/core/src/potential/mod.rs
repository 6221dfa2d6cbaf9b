//! Discrete potential theory on `Z^d`.

pub mod bessel;
pub mod capacity;
pub mod classify;
pub mod dirichlet;
pub mod green;

pub use capacity::{alpha_star_neighbors, capacity, subadditivity_defect, CapacityResult};
pub use classify::{classify_admissible, Classification};
pub use dirichlet::{relative_capacity, RelativeCapacity};
pub use green::{GreenParams, GreenTable};
