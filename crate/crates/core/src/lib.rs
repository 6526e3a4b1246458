//! A laboratory for episodic continuous-time linear-convex reinforcement
//! learning with jump-diffusion dynamics.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: problem instances (drift parameters, noise, costs, policies)
//! - [`sde`]: Euler–Maruyama simulation of the controlled jump-diffusion and
//!   the sufficient statistics used for identification
//! - [`control`]: Riccati synthesis, the Hamiltonian minimiser and exact
//!   expected-cost evaluation of linear policies
//! - [`decouple`]: scalar decoupling-field solver for nonsmooth costs
//! - [`estimate`]: ridge-regularised least-squares identification
//! - [`learn`]: the greedy least-squares episodic loop and ensemble driver
//! - [`stats`]: Orlicz norms, moment growth, concentration curves and
//!   Monte-Carlo costs
//! - [`config`]: the TOML experiment configuration shared with the CLI
//!
//! Monte-Carlo loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise; results are bit-identical
//! either way.

pub mod config;
pub mod control;
pub mod decouple;
pub mod error;
pub mod estimate;
pub mod io;
pub mod learn;
pub mod model;
pub mod par;
pub mod presets;
pub mod rng;
pub mod sde;
pub mod serde_rows;
pub mod stats;

pub use error::{Error, Result};
pub use model::{CostSpec, Matrix, ModelTheta, NoiseSpec, Policy, ProblemInstance, Vector};
pub use par::Execution;
