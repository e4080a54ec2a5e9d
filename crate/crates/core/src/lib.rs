//! Sparsity–undersampling thresholds for l1 recovery with bi-orthogonal
//! dictionaries `D = [O1 O2]`, and a Monte Carlo harness that checks them by
//! solving basis pursuit on planted instances.
//!
//! - [`specfun`]: Gaussian tail, its inverse, `r(h)`, Gaussian quadrature.
//! - [`replica`]: the coupled threshold equations and their solvers.
//! - [`haarint`]: large-`M` Haar sphere integrals and a 1-D quadrature oracle.
//! - [`randmat`]: seeded Haar/Gaussian dictionaries and planted signals.
//! - [`lp`]: two-phase revised simplex and basis-pursuit reconstruction.
//! - [`experiment`]: success curves, critical densities, finite-size fits, persistence.
//! - [`oracle`] and [`verify`]: independent reference computations and the
//!   cross-check suites built on them.

pub mod error;
pub mod experiment;
pub mod haarint;
pub mod lp;
pub mod oracle;
pub mod randmat;
pub mod replica;
pub mod specfun;
pub mod verify;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExtrapolationFit, SuccessCurve};
pub use haarint::OverlapPair;
pub use lp::{LpSolution, LpStatus, StandardFormLp};
pub use randmat::{DictionaryKind, OrthogonalMatrix, ProblemInstance, SignalVector};
pub use replica::{OrderParameters, ReplicaSolution, SolverConfig, SparsityProfile};
pub use specfun::QuadratureRule;
