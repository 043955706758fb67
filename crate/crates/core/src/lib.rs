//! Closed-timelike-curve simulation: fixed-point solver for the
//! self-consistency condition, unrolled equivalent circuits, ready-made
//! experiments and a small experiment description language.

pub mod circuit;
pub mod dsl;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod quantum;
pub mod report;
pub mod run;
pub mod solver;

pub use error::{CtcError, Result};
pub use numerics::{ComplexMatrix, Seed, C64};
pub use quantum::{ControlArm, DensityMatrix, GateName, UnitaryGate};
pub use solver::{CtcProblem, EnsembleSpec, FixedPointResult, SolverOptions};
