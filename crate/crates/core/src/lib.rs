//! Tracking time-varying saddle points with primal-dual flows.
//!
//! A saddle problem `min_lambda max_x L(x, lambda; h)` whose parameter `h`
//! follows an Ornstein-Uhlenbeck process is tracked by the plain primal-dual
//! flow or by flows that add a sensitivity-based compensation term. The crate
//! provides the problem abstraction ([`problem`]), the parameter dynamics
//! ([`channel`]), the integrators ([`flow`]), an equilibrium and sensitivity
//! oracle with the stability constants of the tracking analysis
//! ([`oracle`]), the shipped instances ([`apps`]) and trajectory metrics
//! ([`metrics`]).

pub mod apps;
pub mod channel;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod problem;
pub mod psd;

pub use error::{Error, Result};
pub use problem::{JointState, SaddleProblem};
