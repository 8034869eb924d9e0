//! Numerical optimal control of delay differential equations with
//! input-dependent delays.
//!
//! Delayed states are linearized around the current time,
//! `x(t - tau) ~ x(t) - x'(t) tau`, which turns the delay system into implicit
//! differential equations without memory. Those are discretized with implicit
//! Euler and solved simultaneously as one nonlinear program. Optimized inputs
//! are checked by replaying them through a method-of-steps simulator of the
//! original delay equations.
//!
//! Modules:
//!
//! * [`model`]: the [`DdeModel`] trait, history functions, memory states
//! * [`ocp`]: optimal control problem data and stage costs
//! * [`msr`]: the circulating-fuel molten-salt reactor
//! * [`stability`]: characteristic roots of the delay system and of its linearization
//! * [`transcription`]: implicit-Euler transcription into an NLP with sparse derivatives
//! * [`solver`]: bound-constrained augmented Lagrangian NLP solver
//! * [`sim`]: simulators for the delay system and the linearized system
//!
//! A narrative guide lives in the `book/` directory of the repository.

pub mod error;
pub mod model;
pub mod msr;
pub mod ocp;
pub mod sim;
pub mod solver;
pub mod stability;
pub mod transcription;
pub mod trajectory;
pub mod validate;

pub use error::{Error, Result};
pub use model::{eval_memory_state, memory_at, tau_max, DdeModel, HistoryFunction, LinearDde, RhsJacobians};
pub use ocp::{OcpSpec, StageCost, ZeroCost};
pub use trajectory::{Schedule, Trajectory};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/delay-linearization.md")]
    mod delay_linearization {}
    #[doc = include_str!("../../../book/src/msr-model.md")]
    mod msr_model {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/transcription.md")]
    mod transcription {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
