//! Simulation and verification toolkit for one-dimensional excited random
//! walks (cookie walks) with periodic and Markovian cookie stacks.
//!
//! * [`env`] builds cookie environments and evaluates the closed-form
//!   parameters `θ, θ̃, ρ, ρ̃, ν, a` and the recurrence class.
//! * [`walk`] simulates the walk with its drift/martingale decomposition,
//!   directed-edge local times and pathwise diagnostics.
//! * [`blp`] simulates the branching-like processes `U, Û, V, V̂` and checks
//!   their correspondence with the walk's edge local times.
//! * [`diffusion`] simulates the squared-Bessel-type diffusion limit and
//!   solves the perturbed-Brownian-motion functional equation pathwise.
//! * [`stats`] holds the estimators used by every experiment.
//! * [`cli`] wires it all into seeded, reproducible experiments with CSV and
//!   JSON output (the `erw` binary is a thin wrapper around it).

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod blp;
pub mod cli;
pub mod diffusion;
pub mod env;
pub mod seed;
pub mod stats;
pub mod walk;

pub use env::{classify, compute_params, theta_coupled, EnvSpec, Environment, ModelParams, Regime};
