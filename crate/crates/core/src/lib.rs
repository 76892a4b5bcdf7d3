//! Single-loop variance-reduced smoothed gradient descent-ascent for
//! finite-sum nonconvex-concave minimax problems.

pub mod data;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod sets;
pub mod solvers;
pub mod theory;
