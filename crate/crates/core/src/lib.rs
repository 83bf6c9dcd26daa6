//! Numerical laboratory for measure-preserving dynamics.
//!
//! The crate checks, by sampling and integration, the chain of facts that
//! links Lebesgue measure to Poincaré recurrence in Hamiltonian systems:
//!
//! * [`measure`]: boxes, simple-function integrals, Monte Carlo volumes and
//!   two tests of measure invariance (integrals of observables, and grid
//!   measure of preimages);
//! * [`dynamics`]: vector fields, point maps, fixed-step integrators (RK4,
//!   symplectic Euler, leapfrog) and the flow Jacobian determinant by the
//!   variational equation and by the Liouville formula;
//! * [`hamiltonian`]: separable Hamiltonians, the harmonic oscillator and
//!   the pendulum, energy audits and phase portraits;
//! * [`recurrence`]: return statistics for maps and flows;
//! * [`cli`]: JSON-configured experiments writing CSV, SVG and a run
//!   manifest, driven by the `ergolab` binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`:
//!
//! ```bash
//! cargo run -p ergolab --example harmonic_portrait
//! cargo run -p ergolab --example poincare_recurrence
//! ```

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod measure;
pub mod recurrence;
pub mod rng;

pub use dynamics::{DetComparison, Flow, PointMap, Scheme, Trajectory, VectorField};
pub use error::{Error, Result};
pub use hamiltonian::{OrbitClass, PhasePoint, SeparableHamiltonian};
pub use measure::{Interval, InvarianceReport, Rect, RectUnion, SimpleFunction, TestFunction, Verdict, VolumeEstimate};
pub use recurrence::{DyadicDoubling, IteratedMap, RecurrenceReport, ReturnRecord, ReturnTime};
