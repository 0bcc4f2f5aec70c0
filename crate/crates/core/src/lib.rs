//! Lindbladian quantum friction: a symbolic phase-space engine that checks
//! the model's Ehrenfest identities order by order in ℏ, and a dense
//! density-matrix propagator that reproduces the free-particle experiments
//! numerically.
//!
//! The symbolic layer (`expr`, `star`, `model`) works on exact expression
//! trees and verifies identities by seeded random evaluation. The numeric
//! layer (`grid`, `engine`) Weyl-quantizes the same symbols onto a periodic
//! lattice and integrates the Lindblad master equation with fixed-step RK4.

pub mod engine;
pub mod expr;
pub mod grid;
pub mod model;
pub mod scalar;
pub mod star;

pub use scalar::{DoubleDouble, Real};

/// Default real scalar for numeric work.
pub type R64 = f64;
/// Default complex scalar.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex operator matrix.
pub type CMat = ndarray::Array2<C64>;
