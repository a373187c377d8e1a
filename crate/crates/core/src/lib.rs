//! Variational CVaR minimization.
//!
//! The objective `F(theta, alpha) = alpha + E[max(loss - alpha, 0)] / (1 - beta)`
//! is minimized jointly over model parameters and the quantile estimate by
//! the stochastic subgradient method (SGM), the stochastic prox-linear method
//! (SPL) and SPL+, which regularizes `theta` and `alpha` separately. The
//! [`bench`] module runs step-size sweeps against a [`reference`] optimum.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod objective;
pub mod optim;
pub mod prox;
pub mod reference;
pub mod rng;

pub use error::{Error, Result};
pub use model::{Dataset, Features, Iterate, LossKind, Sample, SparseVec};
pub use objective::{empirical_objective, exact_cvar, exact_var, CvarLevel};
pub use optim::{Method, RunRecord, SolverConfig};
pub use reference::{solve_reference, ReferenceSolution};
