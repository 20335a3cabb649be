//! Multiclass softmax regression: parameters, local objectives, gradients
//! and the local SGD solver.

mod objective;
mod solver;
mod vector;

pub use objective::{evaluate, predict, LocalObjective};
pub use solver::{solve_sgd, Diverged, SolverSpec};
pub use vector::{ModelVector, Shape};
