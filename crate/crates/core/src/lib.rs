//! Exact convex calculus for piecewise linear-quadratic functions together
//! with the scenario-tree machinery it supports: optional projections,
//! total-variation dualities, expected integral functionals and a discrete
//! transcription of singular control with primal/dual solvers and a
//! maximum-principle checker.
//!
//! The crate is organised bottom-up:
//!
//! * [`plq`] — univariate piecewise linear-quadratic (PLQ) functions and the
//!   conjugate/recession/prox calculus, all exact up to round-off;
//! * [`separable`] — coordinatewise lifts of PLQ functions with box domains;
//! * [`tree`] — finite filtered probability spaces (scenario trees), adapted
//!   and raw processes, stopping times, Snell envelopes;
//! * [`measure`] — optional random measures split into a density part and
//!   singular atoms, pairings and dual norms;
//! * [`functional`] — the expected integral functional, its conjugate, the
//!   Fenchel-gap decomposition and brute-force oracles;
//! * [`control`] — the singular control problem, its dual, exact adjoint
//!   transposition, solvers and optimality-condition checks;
//! * [`gen`] — seeded random generators for fuzz and verification suites;
//! * [`suites`] — the batch verification suites used by the CLI and the
//!   acceptance tests.

pub mod control;
pub mod error;
pub mod exec;
pub mod functional;
pub mod gen;
pub mod measure;
pub mod plq;
pub mod separable;
pub mod suites;
pub mod textio;
pub mod tree;

pub use error::{Error, Result};
pub use plq::{PlqFunction, SubdiffInterval};
pub use separable::SeparableIntegrand;
pub use tree::{AdaptedProcess, RawProcess, ScenarioTree, StoppingTime, TimeGrid};
