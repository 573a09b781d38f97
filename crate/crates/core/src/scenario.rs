//! Bundled scenario: propagation, service, handoff policy and MS position.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{self, MsView, NetworkGeometry};
use crate::radio::{load_constant, HandoffPolicy, PropagationEnv, ServiceProfile};

/// Everything needed to evaluate one MS position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub env: PropagationEnv,
    pub service: ServiceProfile,
    pub policy: HandoffPolicy,
    /// Cell circumradius R.
    pub cell_radius: f64,
    /// MS angular coordinate, degrees.
    pub theta_deg: f64,
    /// MS radial coordinate (same unit as `cell_radius`).
    pub r1: f64,
}

impl ScenarioParams {
    /// Place the MS at a fraction of the border distance along `theta`.
    pub fn with_normalized_r(
        env: PropagationEnv,
        service: ServiceProfile,
        policy: HandoffPolicy,
        cell_radius: f64,
        theta_deg: f64,
        r_over_rmax: f64,
    ) -> Self {
        let r1 = r_over_rmax * geometry::r_max(theta_deg, cell_radius);
        Self {
            env,
            service,
            policy,
            cell_radius,
            theta_deg,
            r1,
        }
    }

    pub fn r_over_rmax(&self) -> f64 {
        self.r1 / geometry::r_max(self.theta_deg, self.cell_radius)
    }

    pub fn load_constant(&self) -> f64 {
        load_constant(&self.service)
    }

    pub fn orthogonality_u(&self) -> f64 {
        self.service.orthogonality_u
    }

    pub fn build_view(&self) -> Result<(NetworkGeometry, MsView)> {
        let geom = geometry::build_layout(self.cell_radius)?;
        let view = geometry::ms_view(&geom, self.r1, self.theta_deg);
        Ok((geom, view))
    }

    pub fn validate(&self) -> Result<()> {
        self.service.validate()?;
        PropagationEnv::with_split(
            self.env.alpha,
            self.env.sigma_db,
            self.env.a_corr,
            self.env.b_corr,
        )?;
        HandoffPolicy::new(self.policy.as_size, self.policy.cst_db, self.policy.sht_db)?;
        geometry::build_layout(self.cell_radius)?;
        if !(self.r1 >= 0.0) || !self.r1.is_finite() {
            return Err(crate::error::ModelError::InvalidParameter(format!(
                "r1 must be nonnegative and finite, got {}",
                self.r1
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn voice_scenario(theta: f64, frac: f64) -> ScenarioParams {
        ScenarioParams::with_normalized_r(
            PropagationEnv::new(3.0, 8.0).unwrap(),
            ServiceProfile::wcdma_voice(),
            HandoffPolicy::new(1, 1.0, 3.0).unwrap(),
            1.0,
            theta,
            frac,
        )
    }

    #[test]
    fn normalized_radius_round_trip() {
        let s = voice_scenario(15.0, 0.8);
        assert!((s.r_over_rmax() - 0.8).abs() < 1e-12);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn invalid_position_rejected() {
        let mut s = voice_scenario(15.0, 0.8);
        s.r1 = f64::NAN;
        assert!(s.validate().is_err());
    }
}
