//! Fully implicit simulator for immiscible two-phase flow in porous media,
//! built as a laboratory for comparing GMRES preconditioning strategies on
//! the coupled pressure/saturation Jacobian.
//!
//! The crate covers the whole pipeline: structured-grid TPFA finite volumes
//! ([`grid`], [`discretize`]), constitutive models with capillary pressure
//! ([`rockfluid`]), exact analytic Jacobians in 2x2 block form, restarted
//! GMRES ([`gmres`]), Ruge-Stueben algebraic multigrid and ILU(0) behind
//! the four coupled preconditioning strategies ([`precond`]), a dense
//! eigenvalue probe for preconditioned spectra ([`spectrum`]), scenario
//! files and SPE10-layout data ingestion ([`scenario`], [`spe10`]), and
//! benchmark orchestration ([`mod@bench`]).
//!
//! Start with the runnable programs under `examples/` — each demonstrates
//! one capability end to end — or with the `twophase` binary
//! (`run`, `bench`, `spectrum`, `validate`) for scenario files.

pub mod bench;
pub mod dense;
pub mod discretize;
pub mod error;
pub mod gmres;
pub mod grid;
pub mod precond;
pub mod rockfluid;
pub mod scenario;
pub mod sim;
pub mod sparse;
pub mod spe10;
pub mod spectrum;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod test_fixtures;
