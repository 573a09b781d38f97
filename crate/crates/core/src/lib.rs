//! Downlink per-link power consumption model for cellular CDMA networks.
//!
//! The library computes the mean and standard deviation of the transmit-power
//! fraction `beta` allocated to a single downlink connection, under hard
//! handoff and 2-way / 3-way soft handoff, for a mobile placed anywhere in
//! the center cell of a 19-cell hexagonal layout with log-normal shadowing.
//!
//! Two independent evaluation paths are provided:
//!
//! * [`moments`] — the semi-analytic engine: subset probabilities and
//!   conditional moments via nested tilted-Gaussian quadrature, with a
//!   second-order Taylor (delta-method) assembly for the soft-handoff
//!   harmonic means.
//! * [`montecarlo`] — a direct sampling oracle that classifies shadowing
//!   draws with the same handoff inequalities and evaluates the power
//!   fractions exactly.

pub mod error;
pub mod geometry;
pub mod moments;
pub mod montecarlo;
pub mod quadrature;
pub mod radio;
pub mod regions;
pub mod scenario;

pub use error::ModelError;
pub use geometry::{MsView, NetworkGeometry};
pub use moments::{compute_report, MomentReport, SubsetMoments};
pub use montecarlo::{McConfig, McEstimate};
pub use quadrature::QuadratureSpec;
pub use radio::{HandoffPolicy, PropagationEnv, ServiceProfile, ShadowVector};
pub use scenario::ScenarioParams;
