//! Accelerated gradient (AG) methods for smooth nonconvex, convex and composite
//! minimization, together with their randomized stochastic counterparts (RSAG).
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation: problems and stochastic oracles ([`problem`], [`oracle`]),
//! exact prox mappings ([`prox`]), stepsize policies ([`schedules`]), the
//! optimizers themselves ([`algorithms`]) and the bound checkers used to verify
//! their convergence guarantees ([`verify`]). File formats, configuration and
//! the command line live in the companion `agopt` crate.
//!
//! ```
//! use agopt_core::algorithms::{run_ag, AlgorithmConfig};
//! use agopt_core::problem::{make_problem, ProblemSpec};
//! use agopt_core::schedules::{Policy, StepSchedule};
//!
//! let problem = make_problem(&ProblemSpec::identity_quadratic(1)).unwrap();
//! let schedule = StepSchedule::from_policy(Policy::DetConvex, problem.l_psi());
//! let trace = run_ag(&problem, &[2.0], &AlgorithmConfig::new(schedule, 50)).unwrap();
//! assert!(trace.last().unwrap().psi_ag < 1e-3);
//! ```
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod algorithms;
mod error;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod prox;
pub mod rng;
pub mod schedules;
pub mod verify;

pub use error::{Error, Result};
