//! Scenario parameters and per-link power fractions.
//!
//! The received power from site `i` is `r_i^-alpha * 10^(zeta_i/10) * P_T`
//! with shadowing `zeta_i = a*xi + b*xi_i`; the common component cancels in
//! every cell comparison and interference ratio, so only `b` enters the
//! computations. Interference sums are
//! `X = (1-u) + sum_{i != s} C_{s,i} 10^(b(xi_i - xi_s)/10)` for serving
//! site `s`, and the per-link power fractions are `C_t X` (hard handoff) or
//! the harmonic composition over the active-set legs (soft handoff).

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::geometry::{MsView, NUM_SITES};

/// Propagation environment: path-loss exponent and shadowing split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PropagationEnv {
    /// Path-loss exponent `alpha`.
    pub alpha: f64,
    /// Standard deviation of each independent shadowing component, in dB.
    pub sigma_db: f64,
    /// Common-component weight `a` (never enters any computation).
    pub a_corr: f64,
    /// Per-site component weight `b`.
    pub b_corr: f64,
}

impl PropagationEnv {
    /// Standard split `a = b = 1/sqrt(2)`.
    pub fn new(alpha: f64, sigma_db: f64) -> Result<Self> {
        let s = 1.0 / 2.0f64.sqrt();
        Self::with_split(alpha, sigma_db, s, s)
    }

    pub fn with_split(alpha: f64, sigma_db: f64, a_corr: f64, b_corr: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(sigma_db > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "sigma_db must be positive, got {sigma_db}"
            )));
        }
        if !(b_corr > 0.0 && b_corr <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "b_corr must be in (0, 1], got {b_corr}"
            )));
        }
        if (a_corr * a_corr + b_corr * b_corr - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidParameter(format!(
                "a^2 + b^2 must equal 1, got a={a_corr} b={b_corr}"
            )));
        }
        Ok(Self {
            alpha,
            sigma_db,
            a_corr,
            b_corr,
        })
    }
}

/// Service profile of the carried connection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ServiceProfile {
    /// Activity factor `nu`, in (0, 1].
    pub activity: f64,
    /// Service bit rate `R` in bit/s.
    pub bit_rate: f64,
    /// Chip rate `W` in chip/s.
    pub chip_rate: f64,
    /// Target Eb/Io in dB.
    pub ebio_target_db: f64,
    /// Downlink code orthogonality `u` in [0, 1].
    pub orthogonality_u: f64,
}

impl ServiceProfile {
    /// WCDMA voice: nu=0.5, R=12.2 kb/s, W=3.84 Mchip/s, 4.4 dB, u=0.9.
    pub fn wcdma_voice() -> Self {
        Self {
            activity: 0.5,
            bit_rate: 12_200.0,
            chip_rate: 3.84e6,
            ebio_target_db: 4.4,
            orthogonality_u: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.activity > 0.0 && self.activity <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "activity must be in (0,1], got {}",
                self.activity
            )));
        }
        if !(self.orthogonality_u >= 0.0 && self.orthogonality_u <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "orthogonality u must be in [0,1], got {}",
                self.orthogonality_u
            )));
        }
        let ct = load_constant(self);
        if !(ct.is_finite() && ct > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "derived load constant is not positive/finite: {ct}"
            )));
        }
        Ok(())
    }
}

/// Handoff policy: active-set size and thresholds (stored in dB).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HandoffPolicy {
    /// Maximum active-set size, 1..=3.
    pub as_size: u8,
    /// Cell-selection hysteresis CST in dB.
    pub cst_db: f64,
    /// Soft-handoff add threshold SHT in dB.
    pub sht_db: f64,
}

impl HandoffPolicy {
    pub fn new(as_size: u8, cst_db: f64, sht_db: f64) -> Result<Self> {
        if !(1..=3).contains(&as_size) {
            return Err(ModelError::InvalidParameter(format!(
                "active-set size must be 1, 2 or 3, got {as_size}"
            )));
        }
        if cst_db < 0.0 || sht_db < 0.0 {
            return Err(ModelError::InvalidParameter(
                "cst_db and sht_db must be nonnegative".into(),
            ));
        }
        Ok(Self {
            as_size,
            cst_db,
            sht_db,
        })
    }

    /// Cell-selection hysteresis in the xi domain (`cst / b`).
    pub fn cst_xi(&self, b_corr: f64) -> f64 {
        self.cst_db / b_corr
    }

    /// Add threshold in the xi domain (`sht / b`).
    pub fn sht_xi(&self, b_corr: f64) -> f64 {
        self.sht_db / b_corr
    }
}

/// One draw of the 19 independent shadowing components, in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowVector(pub [f64; NUM_SITES]);

/// Load constant `C_t = nu * R * 10^(EbIo_dB/10) / W`.
pub fn load_constant(s: &ServiceProfile) -> f64 {
    s.activity * s.bit_rate * 10f64.powf(s.ebio_target_db / 10.0) / s.chip_rate
}

/// Interference sum for the leg served by `serving` (1-based cell index):
/// `(1-u) + sum_{i != serving} C_{serving,i} 10^(b(xi_i - xi_s)/10)`.
pub fn interference_sum(
    view: &MsView,
    env: &PropagationEnv,
    u: f64,
    serving: usize,
    xi: &ShadowVector,
) -> Result<f64> {
    let b = env.b_corr;
    let xs = xi.0[serving - 1];
    let mut sum = 1.0 - u;
    for i in 1..=NUM_SITES {
        if i == serving {
            continue;
        }
        let c = view.gain_ratio(serving, i, env.alpha)?;
        if c > 0.0 {
            sum += c * 10f64.powf(b * (xi.0[i - 1] - xs) / 10.0);
        }
    }
    Ok(sum)
}

/// Hard-handoff power fraction `beta_1 = C_t X`.
pub fn beta_hho(ct: f64, x: f64) -> Result<f64> {
    check_positive(&[x])?;
    Ok(ct * x)
}

/// 2-way soft-handoff power fraction `beta_1k = C_t XY/(X+Y)`.
pub fn beta_sho2(ct: f64, x: f64, y: f64) -> Result<f64> {
    check_positive(&[x, y])?;
    Ok(ct * x * y / (x + y))
}

/// 3-way soft-handoff power fraction `beta_1kl = C_t XYZ/(XY+XZ+YZ)`.
pub fn beta_sho3(ct: f64, x: f64, y: f64, z: f64) -> Result<f64> {
    check_positive(&[x, y, z])?;
    Ok(ct * x * y * z / (x * y + x * z + y * z))
}

fn check_positive(vals: &[f64]) -> Result<()> {
    for &v in vals {
        if !(v > 0.0) || !v.is_finite() {
            return Err(ModelError::InvalidState(format!(
                "interference sum must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layout, ms_view};

    #[test]
    fn load_constant_identity_config() {
        let s = ServiceProfile {
            activity: 1.0,
            bit_rate: 1.0e6,
            chip_rate: 1.0e6,
            ebio_target_db: 0.0,
            orthogonality_u: 0.9,
        };
        assert!((load_constant(&s) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn load_constant_voice() {
        let ct = load_constant(&ServiceProfile::wcdma_voice());
        assert!((ct - 0.004375).abs() / 0.004375 < 2e-3, "Ct = {ct}");
    }

    #[test]
    fn load_constant_linear_in_rate() {
        let mut s = ServiceProfile::wcdma_voice();
        let c1 = load_constant(&s);
        s.bit_rate *= 2.0;
        assert!((load_constant(&s) - 2.0 * c1).abs() < 1e-15);
    }

    #[test]
    fn split_validation() {
        assert!(PropagationEnv::with_split(3.0, 8.0, 0.6, 0.8).is_ok());
        assert!(PropagationEnv::with_split(3.0, 8.0, 0.5, 0.5).is_err());
        assert!(PropagationEnv::new(0.0, 8.0).is_err());
        assert!(PropagationEnv::new(3.0, -1.0).is_err());
    }

    #[test]
    fn interference_sum_equal_shadowing() {
        // exponent cancels: sum reduces to (1-u) + sum of gain ratios
        let g = build_layout(1.0).unwrap();
        let v = ms_view(&g, 0.5, 10.0);
        let env = PropagationEnv::new(3.0, 8.0).unwrap();
        let xi = ShadowVector([2.5; NUM_SITES]);
        let got = interference_sum(&v, &env, 0.9, 1, &xi).unwrap();
        let mut want = 0.1;
        for i in 2..=NUM_SITES {
            want += v.gain_ratio(1, i, 3.0).unwrap();
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn interference_sum_co_sited_orthogonal() {
        let g = build_layout(1.0).unwrap();
        let v = ms_view(&g, 0.0, 0.0);
        let env = PropagationEnv::new(3.0, 8.0).unwrap();
        let xi = ShadowVector([0.0; NUM_SITES]);
        let got = interference_sum(&v, &env, 1.0, 1, &xi).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn interference_sum_shift_invariant() {
        // only differences of xi enter; the common component cancels
        let g = build_layout(1.0).unwrap();
        let v = ms_view(&g, 0.7, 22.0);
        let env = PropagationEnv::new(3.5, 8.0).unwrap();
        let mut xi = [0.0; NUM_SITES];
        for (i, x) in xi.iter_mut().enumerate() {
            *x = (i as f64) * 0.37 - 3.0;
        }
        let a = interference_sum(&v, &env, 0.9, 1, &ShadowVector(xi)).unwrap();
        let mut shifted = xi;
        for x in shifted.iter_mut() {
            *x += 13.7;
        }
        let b = interference_sum(&v, &env, 0.9, 1, &ShadowVector(shifted)).unwrap();
        assert!((a - b).abs() / a < 1e-12);
    }

    #[test]
    fn single_interferer_decade() {
        // two nonzero-gain cells, C=0.5, xi_i - xi_j = 10/b -> (1-u) + 5
        let g = build_layout(1.0).unwrap();
        let mut v = ms_view(&g, 0.5, 0.0);
        for i in 2..NUM_SITES {
            v.r[i] = f64::INFINITY;
        }
        v.r[0] = 1.0;
        v.r[1] = 2.0f64.powf(1.0 / 3.0); // C_{1,2} = 0.5 at alpha=3
        let env = PropagationEnv::new(3.0, 8.0).unwrap();
        let mut xi = [0.0; NUM_SITES];
        xi[1] = 10.0 / env.b_corr;
        let got = interference_sum(&v, &env, 0.9, 1, &ShadowVector(xi)).unwrap();
        assert!((got - (0.1 + 5.0)).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn beta_symmetry_and_bounds() {
        let ct = 0.004375;
        assert!((beta_sho2(ct, 2.0, 2.0).unwrap() - ct).abs() < 1e-15);
        assert!((beta_sho3(ct, 3.0, 3.0, 3.0).unwrap() - ct).abs() < 1e-15);
        let (x, y, z) = (1.3, 2.1, 0.7);
        let b2 = beta_sho2(ct, x, y).unwrap();
        assert!((b2 - beta_sho2(ct, y, x).unwrap()).abs() < 1e-18);
        assert!(b2 <= ct * x.min(y));
        let b3 = beta_sho3(ct, x, y, z).unwrap();
        assert!((b3 - beta_sho3(ct, z, x, y).unwrap()).abs() < 1e-18);
        assert!(b3 <= beta_sho2(ct, x, y).unwrap());
    }

    #[test]
    fn beta_rejects_nonpositive() {
        assert!(beta_hho(0.1, 0.0).is_err());
        assert!(beta_sho2(0.1, 1.0, -2.0).is_err());
        assert!(beta_sho3(0.1, 1.0, 1.0, f64::NAN).is_err());
    }
}
