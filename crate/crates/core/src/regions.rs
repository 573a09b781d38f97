//! Shadowing-space regions for the connection modes.
//!
//! Every cell-selection and handoff condition is an affine inequality in the
//! independent shadowing components: `xi_i <= xi_anchor + offset` (or `>=`
//! for window lower bounds). Comparisons are most conveniently done on the
//! signal scores `g_i = xi_i - (10 alpha / b) log10(r_i)`: "cell i received
//! at least as strongly as cell j" is exactly `g_i >= g_j`, and the
//! cell-selection / add-threshold conditions become score offsets by
//! `cst/b` and `sht/b`.
//!
//! Mode partition for active-set size `m`:
//!
//! * `m = 1`: camped (HHO) iff every neighbor score is at most `g_1 + cst`.
//! * `m = 2`: HHO iff every neighbor is below the add window (`g_1 - sht`);
//!   2-way SHO with the strongest neighbor `k` iff `g_k` lies in the window
//!   `[g_1 - sht, g_1 + cst]` (all others are below `g_k` by construction).
//! * `m = 3`: HHO as above; 2-way SHO iff exactly one neighbor is in the
//!   window; 3-way SHO with the two strongest `k, l` iff both are in the
//!   window and no further neighbor qualifies for the (full) active set,
//!   i.e. every other score is below both `g_l` and the window floor.
//!
//! Samples with more window qualifiers than the active set can absorb do
//! not match any mode and are not camped on cell 1.

use crate::error::{ModelError, Result};
use crate::geometry::{MsView, NUM_SITES};
use crate::radio::{HandoffPolicy, PropagationEnv, ShadowVector};

/// One affine inequality `xi_target (<=|>=) xi_ref + offset`.
///
/// `offset` may be infinite: an upper bound of `+inf` (or a lower bound of
/// `-inf`) is always satisfied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineBound {
    /// 1-based cell index whose shadowing anchors the bound.
    pub ref_index: usize,
    /// Offset in the xi domain (dB).
    pub offset: f64,
    pub kind: BoundKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Upper,
    Lower,
}

impl AffineBound {
    pub fn upper(ref_index: usize, offset: f64) -> Self {
        Self {
            ref_index,
            offset,
            kind: BoundKind::Upper,
        }
    }

    pub fn lower(ref_index: usize, offset: f64) -> Self {
        Self {
            ref_index,
            offset,
            kind: BoundKind::Lower,
        }
    }

    pub fn holds(&self, xi: &ShadowVector, target: usize) -> bool {
        let bound = xi.0[self.ref_index - 1] + self.offset;
        match self.kind {
            BoundKind::Upper => xi.0[target - 1] <= bound,
            BoundKind::Lower => xi.0[target - 1] >= bound,
        }
    }
}

/// Connection mode of a camped mobile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Hho,
    /// 2-way SHO with partner `k` (1-based cell index in 2..=19).
    Sho2 { k: usize },
    /// 3-way SHO with ordered partners (`k` stronger per the region
    /// orientation).
    Sho3 { k: usize, l: usize },
}

/// Classification outcome for one shadowing draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classified {
    Camped(Mode),
    NotCamped,
}

/// The inequality system of one mode subset.
#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub mode: Mode,
    /// For every constrained cell (1-based), the bounds that must all hold.
    pub bounds: Vec<(usize, AffineBound)>,
}

impl RegionSpec {
    /// True when every bound holds for `xi`.
    pub fn contains(&self, xi: &ShadowVector) -> bool {
        self.bounds.iter().all(|(cell, b)| b.holds(xi, *cell))
    }
}

/// Hard-handoff region for active-set size `m`.
///
/// `m = 1`: `xi_i <= xi_1 - R_{1,i} + cst/b` for all i in 2..=19;
/// `m > 1`: `xi_i <= xi_1 - R_{1,i} - sht/b`.
pub fn hho_region(
    m: u8,
    view: &MsView,
    env: &PropagationEnv,
    policy: &HandoffPolicy,
) -> Result<RegionSpec> {
    let off = if m == 1 {
        policy.cst_xi(env.b_corr)
    } else {
        -policy.sht_xi(env.b_corr)
    };
    let mut bounds = Vec::with_capacity(NUM_SITES - 1);
    for i in 2..=NUM_SITES {
        let r1i = view.db_offset(1, i, env.alpha, env.b_corr)?;
        bounds.push((i, AffineBound::upper(1, -r1i + off)));
    }
    Ok(RegionSpec {
        mode: Mode::Hho,
        bounds,
    })
}

/// 2-way SHO region for partner `k` under active-set size `m`.
///
/// `xi_k` is windowed by `[xi_1 - R_{1,k} - sht/b, xi_1 - R_{1,k} + cst/b]`.
/// For `m = 2` the other cells are bounded by `xi_k - R_{k,i}`; for `m = 3`
/// they are bounded by the add-window floor `xi_1 - R_{1,i} - sht/b`.
pub fn sho2_region(
    m: u8,
    k: usize,
    view: &MsView,
    env: &PropagationEnv,
    policy: &HandoffPolicy,
) -> Result<RegionSpec> {
    if !(2..=NUM_SITES).contains(&k) {
        return Err(ModelError::InvalidParameter(format!(
            "partner index k must be in 2..=19, got {k}"
        )));
    }
    let cst = policy.cst_xi(env.b_corr);
    let sht = policy.sht_xi(env.b_corr);
    let r1k = view.db_offset(1, k, env.alpha, env.b_corr)?;
    let mut bounds = vec![
        (k, AffineBound::lower(1, -r1k - sht)),
        (k, AffineBound::upper(1, -r1k + cst)),
    ];
    for i in 2..=NUM_SITES {
        if i == k {
            continue;
        }
        if m == 2 {
            let rki = view.db_offset(k, i, env.alpha, env.b_corr)?;
            bounds.push((i, AffineBound::upper(k, -rki)));
        } else {
            let r1i = view.db_offset(1, i, env.alpha, env.b_corr)?;
            bounds.push((i, AffineBound::upper(1, -r1i - sht)));
        }
    }
    Ok(RegionSpec {
        mode: Mode::Sho2 { k },
        bounds,
    })
}

/// 3-way SHO region for the ordered pair `(k, l)` (`l` the weaker partner).
///
/// Both partners are windowed as in the 2-way case; `xi_l <= xi_k - R_{k,l}`
/// orders the pair. Every other cell must fall below the weaker partner
/// (`xi_i <= xi_l - R_{l,i}`) and below the add-window floor
/// (`xi_i <= xi_1 - R_{1,i} - sht/b`): a third qualifier would have no room
/// in the active set and the sample belongs to no mode of cell 1.
pub fn sho3_region(
    k: usize,
    l: usize,
    view: &MsView,
    env: &PropagationEnv,
    policy: &HandoffPolicy,
) -> Result<RegionSpec> {
    if k == l {
        return Err(ModelError::InvalidParameter(
            "3-way SHO partners must be distinct".into(),
        ));
    }
    for idx in [k, l] {
        if !(2..=NUM_SITES).contains(&idx) {
            return Err(ModelError::InvalidParameter(format!(
                "partner index must be in 2..=19, got {idx}"
            )));
        }
    }
    let cst = policy.cst_xi(env.b_corr);
    let sht = policy.sht_xi(env.b_corr);
    let r1k = view.db_offset(1, k, env.alpha, env.b_corr)?;
    let r1l = view.db_offset(1, l, env.alpha, env.b_corr)?;
    let rkl = view.db_offset(k, l, env.alpha, env.b_corr)?;
    let mut bounds = vec![
        (k, AffineBound::lower(1, -r1k - sht)),
        (k, AffineBound::upper(1, -r1k + cst)),
        (l, AffineBound::lower(1, -r1l - sht)),
        // inside the k window this is never looser than the l window's own
        // upper bound (chain identity R_{1,k} + R_{k,l} = R_{1,l})
        (l, AffineBound::upper(k, -rkl)),
    ];
    for i in 2..=NUM_SITES {
        if i == k || i == l {
            continue;
        }
        let rli = view.db_offset(l, i, env.alpha, env.b_corr)?;
        let r1i = view.db_offset(1, i, env.alpha, env.b_corr)?;
        bounds.push((i, AffineBound::upper(l, -rli)));
        bounds.push((i, AffineBound::upper(1, -r1i - sht)));
    }
    Ok(RegionSpec {
        mode: Mode::Sho3 { k, l },
        bounds,
    })
}

/// Signal scores `g_i = xi_i - (10 alpha / b) log10(r_i)`.
///
/// `g_i - g_j >= c` is equivalent to `xi_i >= xi_j + R_{j,i}underlying + c`;
/// in particular `g_i >= g_j` says cell i is received at least as strongly
/// as cell j. A zero distance yields `+inf` (the MS sits on the site).
pub fn scores(view: &MsView, env: &PropagationEnv, xi: &ShadowVector) -> [f64; NUM_SITES] {
    let mut g = [0.0; NUM_SITES];
    let scale = 10.0 * env.alpha / env.b_corr;
    for i in 0..NUM_SITES {
        g[i] = if view.r[i] == 0.0 {
            f64::INFINITY
        } else {
            xi.0[i] + scale * (1.0 / view.r[i]).log10()
        };
    }
    g
}

/// Classify one shadowing draw into its unique connection mode.
///
/// Ties are broken toward the lower-multiplicity mode and toward the
/// smaller cell index.
pub fn classify(
    xi: &ShadowVector,
    m: u8,
    view: &MsView,
    env: &PropagationEnv,
    policy: &HandoffPolicy,
) -> Classified {
    let g = scores(view, env, xi);
    let cst = policy.cst_xi(env.b_corr);
    let sht = policy.sht_xi(env.b_corr);
    // top three neighbor scores (strict ordering so equal scores keep the
    // smaller index first)
    let mut top = [(f64::NEG_INFINITY, 0usize); 3];
    for (i, &gi) in g.iter().enumerate().skip(1) {
        if gi > top[0].0 {
            top = [(gi, i + 1), top[0], top[1]];
        } else if gi > top[1].0 {
            top = [top[0], (gi, i + 1), top[1]];
        } else if gi > top[2].0 {
            top[2] = (gi, i + 1);
        }
    }
    let g1 = g[0];
    let (m1, k1) = top[0];
    let (m2, k2) = top[1];
    let (m3, _) = top[2];
    if m == 1 {
        return if m1 <= g1 + cst {
            Classified::Camped(Mode::Hho)
        } else {
            Classified::NotCamped
        };
    }
    if m1 <= g1 - sht {
        return Classified::Camped(Mode::Hho);
    }
    if m1 > g1 + cst {
        return Classified::NotCamped;
    }
    // strongest neighbor is inside the add window
    if m == 2 {
        return Classified::Camped(Mode::Sho2 { k: k1 });
    }
    if m2 <= g1 - sht {
        return Classified::Camped(Mode::Sho2 { k: k1 });
    }
    if m3 <= g1 - sht {
        return Classified::Camped(Mode::Sho3 { k: k1, l: k2 });
    }
    Classified::NotCamped
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layout, ms_view};

    fn setup() -> (crate::geometry::MsView, PropagationEnv, HandoffPolicy) {
        let g = build_layout(1.0).unwrap();
        let v = ms_view(&g, 0.7, 20.0);
        let env = PropagationEnv::new(3.0, 8.0).unwrap();
        let policy = HandoffPolicy::new(3, 1.0, 3.0).unwrap();
        (v, env, policy)
    }

    #[test]
    fn hho_bound_offsets() {
        let (v, env, policy) = setup();
        let p1 = HandoffPolicy::new(1, 1.0, 3.0).unwrap();
        let spec1 = hho_region(1, &v, &env, &p1).unwrap();
        let spec3 = hho_region(3, &v, &env, &policy).unwrap();
        let r12 = v.db_offset(1, 2, env.alpha, env.b_corr).unwrap();
        let b1 = spec1.bounds.iter().find(|(c, _)| *c == 2).unwrap().1;
        let b3 = spec3.bounds.iter().find(|(c, _)| *c == 2).unwrap().1;
        assert!((b1.offset - (-r12 + 1.0 / env.b_corr)).abs() < 1e-12);
        assert!((b3.offset - (-r12 - 3.0 / env.b_corr)).abs() < 1e-12);
        assert_eq!(b1.ref_index, 1);
    }

    #[test]
    fn equidistant_tie_bound() {
        // cst=0 and R_{1,k}=0 -> bound xi_k <= xi_1
        let g = build_layout(1.0).unwrap();
        let mut v = ms_view(&g, 0.5, 0.0);
        v.r[1] = 0.5;
        let env = PropagationEnv::new(3.0, 8.0).unwrap();
        let p = HandoffPolicy::new(1, 0.0, 0.0).unwrap();
        let spec = hho_region(1, &v, &env, &p).unwrap();
        let b = spec.bounds.iter().find(|(c, _)| *c == 2).unwrap().1;
        assert!(b.offset.abs() < 1e-12);
    }

    #[test]
    fn co_sited_ms_always_camps() {
        let g = build_layout(1.0).unwrap();
        let v = ms_view(&g, 0.0, 0.0);
        let env = PropagationEnv::new(3.0, 8.0).unwrap();
        let policy = HandoffPolicy::new(1, 0.0, 0.0).unwrap();
        let spec = hho_region(1, &v, &env, &policy).unwrap();
        // all offsets are +inf: every draw satisfies the region
        let xi = ShadowVector([50.0; NUM_SITES]);
        assert!(spec.contains(&xi));
        assert_eq!(
            classify(&xi, 1, &v, &env, &policy),
            Classified::Camped(Mode::Hho)
        );
    }

    #[test]
    fn sho2_window_and_slack() {
        let (v, env, policy) = setup();
        let spec = sho2_region(2, 2, &v, &env, &policy).unwrap();
        let r12 = v.db_offset(1, 2, env.alpha, env.b_corr).unwrap();
        let mut xi = [-1e6; NUM_SITES];
        xi[0] = 0.0;
        // window center
        xi[1] = -r12 + (policy.cst_xi(env.b_corr) - policy.sht_xi(env.b_corr)) / 2.0;
        assert!(spec.contains(&ShadowVector(xi)));
        assert_eq!(
            classify(&ShadowVector(xi), 2, &v, &env, &policy),
            Classified::Camped(Mode::Sho2 { k: 2 })
        );
    }

    #[test]
    fn sho2_m3_bound_anchored_at_serving() {
        let (v, env, policy) = setup();
        let spec = sho2_region(3, 2, &v, &env, &policy).unwrap();
        let b = spec
            .bounds
            .iter()
            .find(|(c, bd)| *c == 5 && bd.kind == BoundKind::Upper)
            .unwrap()
            .1;
        assert_eq!(b.ref_index, 1);
        let r15 = v.db_offset(1, 5, env.alpha, env.b_corr).unwrap();
        assert!((b.offset - (-r15 - policy.sht_xi(env.b_corr))).abs() < 1e-12);
    }

    #[test]
    fn degenerate_window_rejects_everything_on_boundary() {
        let (v, env, _) = setup();
        let p0 = HandoffPolicy::new(2, 0.0, 0.0).unwrap();
        let spec = sho2_region(2, 2, &v, &env, &p0).unwrap();
        let r12 = v.db_offset(1, 2, env.alpha, env.b_corr).unwrap();
        let mut xi = [-1e6; NUM_SITES];
        xi[0] = 0.0;
        xi[1] = -r12; // exactly on the zero-width window
        assert!(spec.contains(&ShadowVector(xi)));
        xi[1] = -r12 + 1e-9;
        assert!(!spec.contains(&ShadowVector(xi)));
    }

    #[test]
    fn sho3_rejects_equal_pair() {
        let (v, env, policy) = setup();
        assert!(sho3_region(2, 2, &v, &env, &policy).is_err());
    }

    #[test]
    fn sho3_chain_identity_tightness() {
        // at the k window top, the pair-order bound for l equals l's own
        // window top
        let (v, env, _policy) = setup();
        let policy = HandoffPolicy::new(3, 1.0, 3.0).unwrap();
        let cst = policy.cst_xi(env.b_corr);
        let r1k = v.db_offset(1, 2, env.alpha, env.b_corr).unwrap();
        let r1l = v.db_offset(1, 3, env.alpha, env.b_corr).unwrap();
        let rkl = v.db_offset(2, 3, env.alpha, env.b_corr).unwrap();
        let xi_k = 0.0 - r1k + cst;
        let bound_via_k = xi_k - rkl;
        let own_top = 0.0 - r1l + cst;
        assert!((bound_via_k - own_top).abs() < 1e-12);
    }

    #[test]
    fn sho3_mirror_pairs() {
        let (_, env, policy) = setup();
        let g = build_layout(1.0).unwrap();
        // theta=30 lies on a mirror axis: partners 2 (at 0 deg) and 3
        // (at 60 deg) are reflections of each other
        let v = ms_view(&g, 0.8, 30.0);
        let s_kl = sho3_region(2, 3, &v, &env, &policy).unwrap();
        let s_lk = sho3_region(3, 2, &v, &env, &policy).unwrap();
        let off = |s: &RegionSpec, cell: usize, kind: BoundKind| {
            s.bounds
                .iter()
                .filter(|(c, b)| *c == cell && b.kind == kind)
                .map(|(_, b)| b.offset)
                .collect::<Vec<_>>()
        };
        // mirror image: k-window offsets of one match the k-window offsets
        // of the other (up to distance rounding)
        let close = |a: Vec<f64>, b: Vec<f64>| {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        };
        close(off(&s_kl, 2, BoundKind::Lower), off(&s_lk, 3, BoundKind::Lower));
        close(off(&s_kl, 3, BoundKind::Upper), off(&s_lk, 2, BoundKind::Upper));
    }

    #[test]
    fn classify_obvious_cases() {
        let (v, env, policy) = setup();
        let mut xi = [-1e6; NUM_SITES];
        xi[0] = 0.0;
        for m in [1, 2, 3] {
            assert_eq!(
                classify(&ShadowVector(xi), m, &v, &env, &policy),
                Classified::Camped(Mode::Hho)
            );
        }
        // cell-selection failure for m=1
        let mut xi2 = xi;
        xi2[4] = 1e6;
        assert_eq!(
            classify(&ShadowVector(xi2), 1, &v, &env, &policy),
            Classified::NotCamped
        );
    }

    #[test]
    fn classify_matches_region_membership() {
        // classification agrees with direct evaluation of the region
        // inequality systems, and the accepted region is unique
        use rand::prelude::*;
        let (v, env, policy) = setup();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut specs: Vec<RegionSpec> = Vec::new();
        for m in [1u8, 2, 3] {
            specs.clear();
            let pol = HandoffPolicy::new(m, 1.0, 3.0).unwrap();
            specs.push(hho_region(m, &v, &env, &pol).unwrap());
            if m >= 2 {
                for k in 2..=NUM_SITES {
                    specs.push(sho2_region(m, k, &v, &env, &pol).unwrap());
                }
            }
            if m == 3 {
                for k in 2..=NUM_SITES {
                    for l in 2..=NUM_SITES {
                        if l != k {
                            specs.push(sho3_region(k, l, &v, &env, &pol).unwrap());
                        }
                    }
                }
            }
            for _ in 0..2000 {
                let mut xi = [0.0; NUM_SITES];
                for x in xi.iter_mut() {
                    *x = rng.sample::<f64, _>(rand_distr::StandardNormal) * 8.0;
                }
                let sv = ShadowVector(xi);
                let hits: Vec<&RegionSpec> =
                    specs.iter().filter(|s| s.contains(&sv)).collect();
                assert!(hits.len() <= 1, "regions overlap for m={m}");
                match classify(&sv, m, &v, &env, &pol) {
                    Classified::Camped(mode) => {
                        assert_eq!(hits.len(), 1, "classified {mode:?} but no region hit");
                        assert_eq!(hits[0].mode, mode);
                    }
                    Classified::NotCamped => assert!(hits.is_empty()),
                }
            }
        }
    }

    #[test]
    fn enlarging_sht_never_moves_samples_into_hho() {
        use rand::prelude::*;
        let (v, env, _) = setup();
        let p_small = HandoffPolicy::new(2, 1.0, 1.0).unwrap();
        let p_big = HandoffPolicy::new(2, 1.0, 6.0).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        for _ in 0..3000 {
            let mut xi = [0.0; NUM_SITES];
            for x in xi.iter_mut() {
                *x = rng.sample::<f64, _>(rand_distr::StandardNormal) * 8.0;
            }
            let sv = ShadowVector(xi);
            let a = classify(&sv, 2, &v, &env, &p_small);
            let b = classify(&sv, 2, &v, &env, &p_big);
            if b == Classified::Camped(Mode::Hho) {
                assert_eq!(a, Classified::Camped(Mode::Hho));
            }
        }
    }
}
