//! Synthesis of affine disturbance-feedback policies for linear systems
//! with Gaussian noise under chance constraints.
//!
//! A problem stacks the dynamics over a finite horizon ([`horizon`]),
//! parameterizes causal policies `ū = Ḡ w̄ + d̄` ([`policy`]), evaluates
//! the expected quadratic cost in closed form ([`cost`]) and replaces
//! each chance constraint by a convex restriction ([`chance`],
//! [`ellipsoidal`], [`icc`]). The restricted program is solved by a
//! log-barrier method ([`solver`]) and the resulting policy is checked by
//! closed-loop Monte Carlo simulation ([`mc`]).
//!
//! [`problem`] reads the JSON problem format and runs the whole chain;
//! [`cli`] is the front end of the `ccmpc` binary.

mod error;
pub mod benchmark;
pub mod chance;
pub mod cli;
pub mod cost;
pub mod ellipsoidal;
pub mod horizon;
pub mod icc;
pub mod linalg;
pub mod mc;
pub mod policy;
pub mod problem;
pub mod solver;
pub mod specfun;

pub use error::{Error, Result};
pub use horizon::SystemModel;
pub use policy::PolicyParams;
pub use problem::{synthesize, Problem, ProblemSpec, Synthesis};
pub use solver::{SolveReport, SolveStatus, SolverOptions};
