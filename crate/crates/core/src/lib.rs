//! Energy-stable time stepping for phase-field gradient flows built on
//! discrete variational derivatives.

pub mod dvd_stepper;
pub mod grid;
pub mod harness;
pub mod model;
pub mod relaxed_stepper;
pub mod solver;
pub mod tableau;

pub use dvd_stepper::{dvd_step, DvdSolverConfig, Preconditioning, StepError, StepReport};
pub use grid::{BoundaryCondition, Field, GridError, UniformGrid};
pub use harness::{ExperimentConfig, HarnessError, SchemeSpec, Simulation, TimeSeriesRow};
pub use model::{DissipationKind, FreeEnergy, ModelError};
pub use relaxed_stepper::{LinearSolver, RelaxedScheme, RelaxedState};
pub use solver::{KrylovConfig, NewtonConfig, SolverError};
pub use tableau::{builtin_tableau, DvdTableau, Rational, TableauError};
