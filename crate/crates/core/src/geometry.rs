//! 19-cell hexagonal layout and per-MS distance views.
//!
//! Site 1 sits at the origin; sites 2-7 form the first tier at distance
//! `sqrt(3)*R`, sites 8-19 the second tier (six at `2*sqrt(3)*R`, six at
//! `3*R`). Cells are hexagons with circumradius `R`; the center cell has a
//! flat edge facing `theta = 0` and a corner at `theta = 30` degrees, so the
//! first-tier neighbors sit along `theta = 0 + 60k` degrees and the border
//! distance grows from the apothem `sqrt(3)R/2` at the edge normal to `R` at
//! the corner.

use crate::error::{ModelError, Result};

/// Number of base stations in the layout (center cell plus two tiers).
pub const NUM_SITES: usize = 19;

/// The 19-site hexagonal layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGeometry {
    cell_radius: f64,
    sites: [[f64; 2]; NUM_SITES],
}

/// Distances from one MS position to every site, plus the polar position.
#[derive(Debug, Clone)]
pub struct MsView {
    /// `r[i]` is the distance from the MS to site `i+1` (0-based storage).
    pub r: [f64; NUM_SITES],
    /// Radial coordinate of the MS (distance to site 1).
    pub r1: f64,
    /// Angular coordinate of the MS in degrees.
    pub theta1_deg: f64,
}

/// Build the two-tier layout.
///
/// Ordering: site 1 at the origin; tier-1 sites at angles `0 + 60k` degrees
/// in increasing-angle order; tier-2 first the six at `2*sqrt(3)*R`
/// (angles `0 + 60k`), then the six at `3*R` (angles `30 + 60k`).
pub fn build_layout(cell_radius: f64) -> Result<NetworkGeometry> {
    if !(cell_radius > 0.0) || !cell_radius.is_finite() {
        return Err(ModelError::InvalidParameter(format!(
            "cell radius must be positive and finite, got {cell_radius}"
        )));
    }
    let mut sites = [[0.0f64; 2]; NUM_SITES];
    let d1 = 3.0f64.sqrt() * cell_radius;
    for k in 0..6 {
        let a = (60.0 * k as f64).to_radians();
        sites[1 + k] = [d1 * a.cos(), d1 * a.sin()];
        sites[7 + k] = [2.0 * d1 * a.cos(), 2.0 * d1 * a.sin()];
        let a2 = (30.0 + 60.0 * k as f64).to_radians();
        sites[13 + k] = [3.0 * cell_radius * a2.cos(), 3.0 * cell_radius * a2.sin()];
    }
    Ok(NetworkGeometry {
        cell_radius,
        sites,
    })
}

impl NetworkGeometry {
    pub fn cell_radius(&self) -> f64 {
        self.cell_radius
    }

    /// Site coordinates, 0-based (`site(0)` is BS 1 at the origin).
    pub fn site(&self, idx: usize) -> [f64; 2] {
        self.sites[idx]
    }

    pub fn sites(&self) -> &[[f64; 2]; NUM_SITES] {
        &self.sites
    }
}

/// Fold an arbitrary angle into the fundamental sector `[0, 30]` degrees
/// using the layout's 60-degree rotation and reflection symmetry.
pub fn fold_theta(theta_deg: f64) -> f64 {
    let t = theta_deg.abs() % 60.0;
    if t > 30.0 {
        60.0 - t
    } else {
        t
    }
}

/// Distance from the cell center to the cell border along `theta`.
///
/// The border of the center hexagon: `sqrt(3) R / (2 cos(theta_f))` with
/// `theta_f` folded into `[0, 30]` degrees; apothem `sqrt(3)R/2` at the edge
/// normal, circumradius `R` at the corner.
pub fn r_max(theta_deg: f64, cell_radius: f64) -> f64 {
    let tf = fold_theta(theta_deg).to_radians();
    3.0f64.sqrt() * cell_radius / (2.0 * tf.cos())
}

/// Distances from the MS at polar position `(r1, theta1)` to all 19 sites.
pub fn ms_view(geom: &NetworkGeometry, r1: f64, theta1_deg: f64) -> MsView {
    let (s, c) = theta1_deg.to_radians().sin_cos();
    let ms = [r1 * c, r1 * s];
    let mut r = [0.0f64; NUM_SITES];
    for (i, site) in geom.sites.iter().enumerate() {
        r[i] = ((site[0] - ms[0]).powi(2) + (site[1] - ms[1]).powi(2)).sqrt();
    }
    // the radial coordinate is exact by construction
    r[0] = r1;
    MsView {
        r,
        r1,
        theta1_deg,
    }
}

impl MsView {
    /// Path-gain ratio `C_{j,i} = (r_j / r_i)^alpha` (1-based cell indices).
    ///
    /// Returns exactly 0 when `r_j = 0`; errors when the MS is co-located
    /// with the interfering site `i` (and `j != i`).
    pub fn gain_ratio(&self, j: usize, i: usize, alpha: f64) -> Result<f64> {
        let rj = self.r[j - 1];
        let ri = self.r[i - 1];
        if j == i {
            return Ok(if rj > 0.0 { 1.0 } else { 0.0 });
        }
        if rj == 0.0 {
            return Ok(0.0);
        }
        if ri == 0.0 {
            return Err(ModelError::DegeneratePosition { site: i });
        }
        Ok((rj / ri).powf(alpha))
    }

    /// dB-domain offset `R_{j,i} = 10 log10(C_{j,i}) / b`.
    ///
    /// A zero gain ratio maps to negative infinity; consumers treat a bound
    /// built from `-inf` as always satisfied and the matching interference
    /// term as zero.
    pub fn db_offset(&self, j: usize, i: usize, alpha: f64, b_corr: f64) -> Result<f64> {
        let c = self.gain_ratio(j, i, alpha)?;
        if c == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(10.0 * c.log10() / b_corr)
    }

    /// Full gain-ratio and dB-offset matrices (0-based), for the evaluation
    /// engines.
    ///
    /// Co-location with an interfering site (`r_i = 0`, `i >= 2`) is
    /// rejected. When the MS sits exactly on the serving site, entries
    /// toward cell 1 are infinite; they describe legs that carry zero
    /// probability there and every consumer guards them behind the
    /// corresponding `-inf` window offsets.
    pub fn gain_matrices(
        &self,
        alpha: f64,
        b_corr: f64,
    ) -> Result<([[f64; NUM_SITES]; NUM_SITES], [[f64; NUM_SITES]; NUM_SITES])> {
        for i in 2..=NUM_SITES {
            if self.r[i - 1] == 0.0 {
                return Err(ModelError::DegeneratePosition { site: i });
            }
        }
        let mut c = [[0.0; NUM_SITES]; NUM_SITES];
        let mut rdb = [[0.0; NUM_SITES]; NUM_SITES];
        for j in 1..=NUM_SITES {
            for i in 1..=NUM_SITES {
                let (cv, rv) = if i == 1 && self.r[0] == 0.0 && j != 1 {
                    (f64::INFINITY, f64::INFINITY)
                } else {
                    let cv = self.gain_ratio(j, i, alpha)?;
                    let rv = if cv == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        10.0 * cv.log10() / b_corr
                    };
                    (cv, rv)
                };
                c[j - 1][i - 1] = cv;
                rdb[j - 1][i - 1] = rv;
            }
        }
        Ok((c, rdb))
    }
}
