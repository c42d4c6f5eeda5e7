//! Green-split optimization for signalized traffic networks.
//!
//! Roads are discretized into cells whose densities evolve as a switched
//! linear system driven by the signal phases. The crate assembles the
//! per-mode matrices, averages them over a cycle, and tunes the mode
//! durations to minimize a controllability-Gramian congestion cost. A
//! switching simulator and a distributed Lyapunov solver round it off.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision case.

pub mod distributed;
pub mod dynamics;
pub mod error;
pub mod io;
mod lapack;
pub mod lyapunov;
pub mod net_model;
pub mod optimizer;
pub mod scalar;
pub mod scenarios;
pub mod sim;
pub mod ssa;

pub use distributed::{partition_lambda, run_distributed, AgentState, CommGraph, DistributedRun};
pub use dynamics::{assemble_modes, average_system, output_map, AveragedSystem, ModeSet};
pub use error::{Error, Result};
pub use lyapunov::{
    congestion_cost, gramian, solve_lyapunov, spectral_abscissa, LyapunovSolution, RealSchur,
};
pub use net_model::{
    build_network, generate_grid, parse_network, uniform_schedule, GridParams, NetworkSpec,
    Schedule,
};
pub use optimizer::{inner_descent, optimize, optimize_from, project_tangent, OptOptions, OptReport};
pub use scalar::Scalar;
pub use sim::{averaging_error, simulate_average, simulate_switching, ErrorReport, Trajectory};
pub use ssa::{smoothed_abscissa, ssa_gradient, SsaOptions, SsaResult};

pub type ModeSet64 = ModeSet<f64>;
pub type ModeSet32 = ModeSet<f32>;
pub type AveragedSystem64 = AveragedSystem<f64>;
pub type AveragedSystem32 = AveragedSystem<f32>;
pub type LyapunovSolution64 = LyapunovSolution<f64>;
pub type SsaResult64 = SsaResult<f64>;
pub type Trajectory64 = Trajectory<f64>;
