pub mod cone;
pub mod convex;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod sphere;
pub mod body;
pub mod invariant;
pub mod covolume;
pub mod minkowski;

pub use error::{Error, Result};
