//! BOIN12 utility-based phase I/II dose finding with adaptive cohort-size
//! expansion (AD-BOIN12).
//!
//! * [`quasibeta`]: Beta-posterior numerics (generic over the float type).
//! * [`rules`]: design constants, interval boundaries, admissibility and the
//!   cohort expansion check.
//! * [`tables`]: protocol-ready decision tables.
//! * [`engine`]: stateful conduct of a single trial.
//! * [`simulator`]: Monte Carlo operating characteristics.
//!
//! The numerics are written against [`quasibeta::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the engine and simulator use.

pub mod engine;
pub mod error;
pub mod format;
pub mod quasibeta;
pub mod rules;
pub mod scenario;
pub mod simulator;
pub mod tables;

pub use engine::{Action, Decision, DoseRecord, TrialState, TrialStatus};
pub use error::{Error, Result, StateCode};
pub use quasibeta::OutcomeCounts2x2;
pub use rules::DesignParams;
pub use scenario::{Scenario, ScenarioBank};
pub use simulator::{OperatingChars, TrialResult};

pub type UtilityWeights = quasibeta::UtilityWeights<f64>;
pub type Benchmark = quasibeta::Benchmark<f64>;
pub type BoundaryPair = rules::BoundaryPair<f64>;
