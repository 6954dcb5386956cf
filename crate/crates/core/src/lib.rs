//! Continuation-in-parameter solver for `-d_i(a_ij d_j u) + q u = f` with zero
//! Dirichlet data on the unit box, together with numerical certification of
//! the constants the continuation argument depends on.

pub mod base_solver;
pub mod cli;
pub mod coefficients;
pub mod continuation;
pub mod error;
pub mod estimates;
pub mod fredholm;
pub mod grid;
pub mod linalg;
pub mod manufactured;
pub mod mollifier;
pub mod operators;
