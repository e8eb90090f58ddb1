//! Particle-in-cell solver for the two-dimensional Vlasov–Poisson system
//! with an instantaneous feedback control acting through a piecewise
//! constant external magnetic field.
//!
//! The crate is organized along the simulation pipeline:
//!
//! * [`phase_space`]: particles, domain, boundary handling, control cells;
//! * [`init`]: initial distributions and particle sampling;
//! * [`field`]: deposition, Poisson solve, field interpolation;
//! * [`pusher`]: semi-implicit time integrators;
//! * [`control`]: feedback laws;
//! * [`diagnostics`]: wall metrics and error norms;
//! * [`scenarios`]: experiment presets;
//! * [`driver`]: the time loop, convergence studies and sweeps;
//! * [`io`]: run artifacts on disk.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod field;
pub mod init;
pub mod io;
pub mod phase_space;
pub mod pusher;
pub mod scenarios;

pub use control::{ControlOutput, ControlParams, ControlVariant};
pub use diagnostics::{BoundaryRegion, PhaseSpaceGrid};
pub use driver::{run, RunOutput, Simulation};
pub use error::{Error, Result};
pub use field::{FieldGrid, Kernel, PoissonSolver};
pub use init::{InitialCondition, Profile};
pub use phase_space::{Boundary, ControlGrid, DomainSpec, ParticleEnsemble, Weights};
pub use pusher::{Order, StageField};
pub use scenarios::{InitMode, ScenarioConfig};
