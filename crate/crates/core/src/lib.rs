//! First-order equivalent Markov chains (1-EMC) for finite-state,
//! discrete-time processes that need not be Markov.
//!
//! Any such process has well-defined one-step transition matrices
//! `P_t[a][b] = Pr(x_{t+1} = b | x_t = a)`. The Markov chain that starts from
//! the same initial law and moves with those matrices has exactly the same
//! one-dimensional distributions as the original process, so marginal,
//! stationary and convergence questions about the process reduce to Markov
//! chain computations. This crate builds that chain and checks the reduction
//! against brute-force enumeration and Monte Carlo sampling.

pub mod analysis;
pub mod censor;
pub mod emc;
pub mod error;
pub mod oracle;
pub mod process;
pub mod scenarios;
pub mod state;
pub mod verify;

pub use error::{EmcError, Result};
