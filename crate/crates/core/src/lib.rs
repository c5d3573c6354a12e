//! Open-path adiabatic phases and Hannay angles.
//!
//! The crate computes the Berry phase of an eigenstate carried along an
//! arbitrary (not necessarily closed) curve in parameter space, validates it
//! against explicit time evolution, and extracts the corresponding classical
//! angle shift by several independent routes.

pub mod error;
pub mod linalg;
pub mod models;
pub mod spectral;
pub mod berry;
pub mod adiabatic;
pub mod hannay;
pub mod semiclassical;
pub mod wigner;
pub mod cli;

pub use error::{Error, Result};
