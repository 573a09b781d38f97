//! Semi-analytic subset probabilities and conditional power moments.
//!
//! For each connection-mode subset the engine evaluates the unnormalized
//! region mass and the conditional aggregate moments of the interference
//! sums (E[X], E[X^2], E[XY], ...) with nested tilted-Gaussian quadrature,
//! then assembles the per-subset power moments: exactly for hard handoff,
//! via the second-order Taylor (delta-method) expansion of the harmonic
//! means for 2-way and 3-way soft handoff.
//!
//! Evaluation strategy per subset, with `xi_1` always the outer numeric
//! level:
//!
//! * HHO: the 17-or-18 free cells enter as products of `A(a_n(xi_1), y)`,
//!   so one numeric level suffices.
//! * 2-way SHO, AS=2: the free-cell bounds anchor at the partner, so the
//!   partner window is a second numeric level.
//! * 2-way SHO, AS=3: free bounds anchor at `xi_1`; the partner window
//!   integrates in closed form as differences `A(upper,y) - A(lower,y)`.
//! * 3-way SHO: free bounds anchor at the weak partner `xi_l` (numeric
//!   level); for each `(xi_1, xi_l)` the strong-partner window
//!   `[max(lower_k, xi_l + R_{k,l}), upper_k]` integrates in closed form.
//!
//! At every node all aggregate moments are assembled in one pass from the
//! per-free-cell tilted masses, exploiting the independence of the
//! shadowing components.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::geometry::{MsView, NUM_SITES};
use crate::quadrature::{a_fn, gauss_pdf, gl_rule, kappa, QuadratureSpec};
use crate::radio::{HandoffPolicy, PropagationEnv};
use crate::regions::Mode;
use crate::scenario::ScenarioParams;

/// Interference-sum leg of a soft-handoff connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    X,
    Y,
    Z,
}

/// Conditional aggregate moments of the interference sums over one subset.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TermSet {
    pub mean_x: f64,
    pub mean_y: f64,
    pub mean_z: f64,
    pub raw_xx: f64,
    pub raw_yy: f64,
    pub raw_zz: f64,
    pub raw_xy: f64,
    pub raw_xz: f64,
    pub raw_yz: f64,
}

/// Probability and conditional power moments of one mode subset.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetMoments {
    #[serde(skip)]
    pub mode: Mode,
    /// Unconditional subset probability P(subset).
    pub probability: f64,
    /// E[beta | subset]; meaningless when `defined` is false.
    pub beta_mean: f64,
    /// E[beta^2 | subset].
    pub beta_sq_mean: f64,
    /// False for zero-probability subsets (excluded from aggregation).
    pub defined: bool,
    /// Aggregate interference moments behind the Taylor assembly.
    pub terms: TermSet,
    /// |delta-method correction| / leading harmonic term.
    pub taylor_ratio: f64,
}

/// Aggregated conditional moments for one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    /// E[beta | camped].
    pub beta_mean: f64,
    /// Total conditional standard deviation sqrt(E[beta^2] - mean^2).
    pub beta_std_total: f64,
    /// Probability-weighted within-subset standard deviation
    /// sqrt(sum_s P_s Var[beta|s] / P); this is the quantity the reference
    /// tables report.
    pub beta_std_within: f64,
    /// Camping probability P(Omega^m).
    pub p_omega: f64,
    pub p_hho: f64,
    pub p_sho2: f64,
    pub p_sho3: f64,
    pub subsets: Vec<SubsetMoments>,
    /// A subset variance came out slightly negative and was clamped.
    pub negative_variance_clamped: bool,
    /// Some delta-method correction exceeded 30% of its leading term.
    pub taylor_warning: bool,
}

/// Knobs for a full-report computation.
#[derive(Debug, Clone, Copy)]
pub struct ComputeOptions {
    /// Partners with `C_{1,k}` below this floor are skipped (0 disables).
    pub partner_floor: f64,
}

impl Default for ComputeOptions {
    fn default() -> Self {
        Self {
            partner_floor: 0.0,
        }
    }
}

const N: usize = NUM_SITES;

/// Precomputed per-scenario tables shared by all subset evaluations.
pub struct SubsetEngine {
    pub m: u8,
    ct: f64,
    u: f64,
    sigma: f64,
    b: f64,
    cst: f64,
    sht: f64,
    /// gain ratios c[j][i] = (r_j / r_i)^alpha, 0-based
    c: [[f64; N]; N],
    /// dB-domain offsets (may be -inf)
    rdb: [[f64; N]; N],
    nodes: usize,
    trunc: f64,
}

/// Per-node statistics of the free (unpinned) cells.
struct FreeStats {
    idx: [usize; N],
    n: usize,
    /// product of the plain masses m0
    mass: f64,
    /// tilted-to-plain ratios m1/m0 and m2/m0
    q: [f64; N],
    w: [f64; N],
}

impl FreeStats {
    /// E[sum c_n T_n] over the truncated free cells.
    fn sum_cq(&self, c_by_site: &[f64; N]) -> f64 {
        let mut s = 0.0;
        for t in 0..self.n {
            s += c_by_site[self.idx[t]] * self.q[t];
        }
        s
    }

    /// E[(sum cA_n T_n)(sum cB_n T_n)] using independence across cells.
    fn sum_pair(&self, ca: &[f64; N], cb: &[f64; N]) -> f64 {
        let mut ea = 0.0;
        let mut eb = 0.0;
        let mut diag_w = 0.0;
        let mut diag_qq = 0.0;
        for t in 0..self.n {
            let i = self.idx[t];
            let (a, b) = (ca[i], cb[i]);
            ea += a * self.q[t];
            eb += b * self.q[t];
            diag_w += a * b * self.w[t];
            diag_qq += a * b * self.q[t] * self.q[t];
        }
        diag_w + ea * eb - diag_qq
    }
}

impl SubsetEngine {
    pub fn new(
        view: &MsView,
        env: &PropagationEnv,
        policy: &HandoffPolicy,
        ct: f64,
        u: f64,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        quad.validate()?;
        let (c, rdb) = view.gain_matrices(env.alpha, env.b_corr)?;
        Ok(Self {
            m: policy.as_size,
            ct,
            u,
            sigma: env.sigma_db,
            b: env.b_corr,
            cst: policy.cst_xi(env.b_corr),
            sht: policy.sht_xi(env.b_corr),
            c,
            rdb,
            nodes: quad.nodes_per_dim,
            trunc: quad.truncation_mult,
        })
    }

    pub fn load_constant(&self) -> f64 {
        self.ct
    }

    /// `C_{1,k}` for a 1-based partner index (pruning predicate).
    pub fn partner_gain(&self, k: usize) -> f64 {
        self.c[0][k - 1]
    }

    /// Outer integration window: tilt orders up to |2| act on `xi_1`.
    fn outer_window(&self) -> (f64, f64) {
        let shift = 2.0 * kappa(self.sigma, self.b) * self.sigma;
        (
            -shift - self.trunc * self.sigma,
            shift + self.trunc * self.sigma,
        )
    }

    fn free_stats(&self, free: &[usize], anchor: impl Fn(usize) -> f64) -> FreeStats {
        let mut st = FreeStats {
            idx: [0; N],
            n: free.len(),
            mass: 1.0,
            q: [0.0; N],
            w: [0.0; N],
        };
        for (t, &i) in free.iter().enumerate() {
            let a = anchor(i);
            let m0 = a_fn(a, 0, self.sigma, self.b);
            st.idx[t] = i;
            st.mass *= m0;
            if m0 > 0.0 {
                st.q[t] = a_fn(a, 1, self.sigma, self.b) / m0;
                st.w[t] = a_fn(a, 2, self.sigma, self.b) / m0;
            }
        }
        st
    }

    /// Tilted window masses `A(hi, y) - A(lo, y)` for y in -2..=2
    /// (index map y + 2).
    fn window_masses(&self, lo: f64, hi: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        if hi <= lo {
            return out;
        }
        for (iy, slot) in out.iter_mut().enumerate() {
            let y = iy as i32 - 2;
            *slot = (a_fn(hi, y, self.sigma, self.b) - a_fn(lo, y, self.sigma, self.b)).max(0.0);
        }
        out
    }

    /// Unnormalized mass and aggregate-moment integrals over the HHO region:
    /// (P, E[X 1], E[X^2 1]).
    pub fn hho_accumulate(&self) -> (f64, f64, f64) {
        let x0 = 1.0 - self.u;
        let off = if self.m == 1 { self.cst } else { -self.sht };
        let free: Vec<usize> = (1..N).collect();
        let rule = gl_rule(self.nodes);
        let (lo, hi) = self.outer_window();
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let cx = &self.c[0];
        let mut acc = [0.0; 3];
        for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
            let x1 = mid + half * xn;
            let st = self.free_stats(&free, |i| x1 - self.rdb[0][i] + off);
            if st.mass == 0.0 {
                continue;
            }
            let ux = 10f64.powf(-self.b * x1 / 10.0);
            let es = st.sum_cq(cx);
            let ess = st.sum_pair(cx, cx);
            let base = wn * half * gauss_pdf(x1, self.sigma) * st.mass;
            acc[0] += base;
            acc[1] += base * (x0 + ux * es);
            acc[2] += base * (x0 * x0 + 2.0 * x0 * ux * es + ux * ux * ess);
        }
        (acc[0], acc[1], acc[2])
    }

    /// Unnormalized integrals over the 2-way subset for partner `k`
    /// (1-based): [P, X, Y, XX, YY, XY].
    pub fn sho2_accumulate(&self, k: usize) -> [f64; 6] {
        let ki = k - 1;
        let x0 = 1.0 - self.u;
        let r1k = self.rdb[0][ki];
        let free: Vec<usize> = (1..N).filter(|&i| i != ki).collect();
        let rule = gl_rule(self.nodes);
        let (olo, ohi) = self.outer_window();
        let omid = 0.5 * (olo + ohi);
        let ohalf = 0.5 * (ohi - olo);
        let mut acc = [0.0; 6];
        // cells with zero gain toward the MS never anchor a window
        if r1k == f64::NEG_INFINITY {
            return acc;
        }
        let cx = &self.c[0];
        let cy = &self.c[ki];
        for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
            let x1 = omid + ohalf * xn;
            let wlo = x1 - r1k - self.sht;
            let whi = x1 - r1k + self.cst;
            let f1 = wn * ohalf * gauss_pdf(x1, self.sigma);
            let t1 = 10f64.powf(self.b * x1 / 10.0);
            if self.m == 2 {
                // free bounds anchor at the partner: numeric inner level
                let kmid = 0.5 * (wlo + whi);
                let khalf = 0.5 * (whi - wlo);
                if khalf <= 0.0 {
                    continue;
                }
                for (&kn, &kw) in rule.0.iter().zip(rule.1.iter()) {
                    let xk = kmid + khalf * kn;
                    let st = self.free_stats(&free, |i| xk - self.rdb[ki][i]);
                    if st.mass == 0.0 {
                        continue;
                    }
                    let tk = 10f64.powf(self.b * xk / 10.0);
                    let dx = x0 + self.c[0][ki] * tk / t1;
                    let ux = 1.0 / t1;
                    let dy = x0 + self.c[ki][0] * t1 / tk;
                    let uy = 1.0 / tk;
                    let esx = st.sum_cq(cx);
                    let esy = st.sum_cq(cy);
                    let esxx = st.sum_pair(cx, cx);
                    let esyy = st.sum_pair(cy, cy);
                    let esxy = st.sum_pair(cx, cy);
                    let base = f1 * kw * khalf * gauss_pdf(xk, self.sigma) * st.mass;
                    acc[0] += base;
                    acc[1] += base * (dx + ux * esx);
                    acc[2] += base * (dy + uy * esy);
                    acc[3] += base * (dx * dx + 2.0 * dx * ux * esx + ux * ux * esxx);
                    acc[4] += base * (dy * dy + 2.0 * dy * uy * esy + uy * uy * esyy);
                    acc[5] += base * (dx * dy + dx * uy * esy + dy * ux * esx + ux * uy * esxy);
                }
            } else {
                // AS=3: free bounds anchor at xi_1, partner window analytic
                let wm = self.window_masses(wlo, whi);
                if wm[2] == 0.0 {
                    continue;
                }
                let st = self.free_stats(&free, |i| x1 - self.rdb[0][i] - self.sht);
                if st.mass == 0.0 {
                    continue;
                }
                let ux = 1.0 / t1;
                let a = self.c[0][ki] * ux; // X: a * T_k
                let cc = self.c[ki][0] * t1; // Y: cc / T_k
                let esx = st.sum_cq(cx);
                let esy = st.sum_cq(cy);
                let esxx = st.sum_pair(cx, cx);
                let esyy = st.sum_pair(cy, cy);
                let esxy = st.sum_pair(cx, cy);
                let base = f1 * st.mass;
                let (w0, w1, w2, wm1, wm2) = (wm[2], wm[3], wm[4], wm[1], wm[0]);
                acc[0] += base * w0;
                acc[1] += base * ((x0 + ux * esx) * w0 + a * w1);
                acc[2] += base * (x0 * w0 + (cc + esy) * wm1);
                acc[3] += base
                    * ((x0 * x0 + 2.0 * x0 * ux * esx + ux * ux * esxx) * w0
                        + 2.0 * a * (x0 + ux * esx) * w1
                        + a * a * w2);
                acc[4] += base
                    * (x0 * x0 * w0
                        + 2.0 * x0 * (cc + esy) * wm1
                        + (cc * cc + 2.0 * cc * esy + esyy) * wm2);
                acc[5] += base
                    * (x0 * x0 * w0
                        + x0 * (cc + esy) * wm1
                        + a * x0 * w1
                        + a * (cc + esy) * w0
                        + ux * x0 * esx * w0
                        + ux * (esx * cc + esxy) * wm1);
            }
        }
        acc
    }

    /// Unnormalized integrals over the 3-way subset for the ordered pair
    /// `(k, l)`: [P, X, Y, Z, XX, YY, ZZ, XY, XZ, YZ].
    pub fn sho3_accumulate(&self, k: usize, l: usize) -> [f64; 10] {
        let (ki, li) = (k - 1, l - 1);
        let x0 = 1.0 - self.u;
        let r1k = self.rdb[0][ki];
        let r1l = self.rdb[0][li];
        let rkl = self.rdb[ki][li];
        let mut acc = [0.0; 10];
        if r1k == f64::NEG_INFINITY || r1l == f64::NEG_INFINITY {
            return acc;
        }
        let free: Vec<usize> = (1..N).filter(|&i| i != ki && i != li).collect();
        let rule = gl_rule(self.nodes);
        let (olo, ohi) = self.outer_window();
        let omid = 0.5 * (olo + ohi);
        let ohalf = 0.5 * (ohi - olo);
        let cx = &self.c[0];
        let cy = &self.c[ki];
        let cz = &self.c[li];
        for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
            let x1 = omid + ohalf * xn;
            let f1 = wn * ohalf * gauss_pdf(x1, self.sigma);
            let t1 = 10f64.powf(self.b * x1 / 10.0);
            // weak-partner window; its upper limit comes from the pair
            // ordering at the strong partner's window top (chain identity)
            let llo = x1 - r1l - self.sht;
            let lhi = x1 - r1k + self.cst - rkl;
            debug_assert!(lhi <= x1 - r1l + self.cst + 1e-9);
            if lhi <= llo {
                continue;
            }
            let lmid = 0.5 * (llo + lhi);
            let lhalf = 0.5 * (lhi - llo);
            for (&ln, &lw) in rule.0.iter().zip(rule.1.iter()) {
                let xl = lmid + lhalf * ln;
                let wm = self.window_masses((x1 - r1k - self.sht).max(xl + rkl), x1 - r1k + self.cst);
                if wm[2] == 0.0 {
                    continue;
                }
                // non-active cells sit below the weak partner and below the
                // add window
                let st = self.free_stats(&free, |i| {
                    (xl - self.rdb[li][i]).min(x1 - self.rdb[0][i] - self.sht)
                });
                if st.mass == 0.0 {
                    continue;
                }
                let tl = 10f64.powf(self.b * xl / 10.0);
                let ax0 = x0 + self.c[0][li] * tl / t1;
                let ax1 = self.c[0][ki] / t1;
                let ux = 1.0 / t1;
                let bym = self.c[ki][0] * t1 + self.c[ki][li] * tl;
                let cz0 = x0 + self.c[li][0] * t1 / tl;
                let cz1 = self.c[li][ki] / tl;
                let uz = 1.0 / tl;
                let esx = st.sum_cq(cx);
                let esy = st.sum_cq(cy);
                let esz = st.sum_cq(cz);
                let esxx = st.sum_pair(cx, cx);
                let esyy = st.sum_pair(cy, cy);
                let eszz = st.sum_pair(cz, cz);
                let esxy = st.sum_pair(cx, cy);
                let esxz = st.sum_pair(cx, cz);
                let esyz = st.sum_pair(cy, cz);
                let ex0 = ax0 + ux * esx;
                let ez0 = cz0 + uz * esz;
                let eym = bym + esy;
                let ex0x0 = ax0 * ax0 + 2.0 * ax0 * ux * esx + ux * ux * esxx;
                let ez0z0 = cz0 * cz0 + 2.0 * cz0 * uz * esz + uz * uz * eszz;
                let eymym = bym * bym + 2.0 * bym * esy + esyy;
                let ex0z0 = ax0 * cz0 + ax0 * uz * esz + cz0 * ux * esx + ux * uz * esxz;
                let ex0ym = ax0 * bym + ax0 * esy + bym * ux * esx + ux * esxy;
                let ez0ym = cz0 * bym + cz0 * esy + bym * uz * esz + uz * esyz;
                let (w0, w1, w2, wm1, wm2) = (wm[2], wm[3], wm[4], wm[1], wm[0]);
                let base = f1 * lw * lhalf * gauss_pdf(xl, self.sigma) * st.mass;
                acc[0] += base * w0;
                acc[1] += base * (ex0 * w0 + ax1 * w1);
                acc[2] += base * (x0 * w0 + eym * wm1);
                acc[3] += base * (ez0 * w0 + cz1 * w1);
                acc[4] += base * (ex0x0 * w0 + 2.0 * ax1 * ex0 * w1 + ax1 * ax1 * w2);
                acc[5] += base * (x0 * x0 * w0 + 2.0 * x0 * eym * wm1 + eymym * wm2);
                acc[6] += base * (ez0z0 * w0 + 2.0 * cz1 * ez0 * w1 + cz1 * cz1 * w2);
                acc[7] += base * (x0 * ex0 * w0 + ex0ym * wm1 + ax1 * x0 * w1 + ax1 * eym * w0);
                acc[8] += base * (ex0z0 * w0 + (cz1 * ex0 + ax1 * ez0) * w1 + ax1 * cz1 * w2);
                acc[9] += base * (x0 * ez0 * w0 + x0 * cz1 * w1 + ez0ym * wm1 + cz1 * eym * w0);
            }
        }
        acc
    }
}

/// P(Omega_1^m): the hard-handoff subset probability.
pub fn prob_hho(engine: &SubsetEngine) -> f64 {
    engine.hho_accumulate().0
}

/// P(Omega_1k^m): a 2-way subset probability.
pub fn prob_sho2(engine: &SubsetEngine, k: usize) -> f64 {
    engine.sho2_accumulate(k)[0]
}

/// P(Omega_1kl^m): a 3-way subset probability for an ordered pair.
pub fn prob_sho3(engine: &SubsetEngine, k: usize, l: usize) -> f64 {
    engine.sho3_accumulate(k, l)[0]
}

/// Exact HHO conditional moments (no Taylor step).
pub fn hho_moments(engine: &SubsetEngine) -> SubsetMoments {
    let (p, ex, exx) = engine.hho_accumulate();
    let ct = engine.ct;
    if p <= 0.0 {
        return undefined_subset(Mode::Hho, p.max(0.0));
    }
    let mean_x = ex / p;
    let raw_xx = exx / p;
    SubsetMoments {
        mode: Mode::Hho,
        probability: p,
        beta_mean: ct * mean_x,
        beta_sq_mean: ct * ct * raw_xx,
        defined: true,
        terms: TermSet {
            mean_x,
            raw_xx,
            ..TermSet::default()
        },
        taylor_ratio: 0.0,
    }
}

/// Conditional aggregate interference moments over a 2-way subset.
pub fn sho2_terms(engine: &SubsetEngine, k: usize) -> Option<(f64, TermSet)> {
    let acc = engine.sho2_accumulate(k);
    let p = acc[0];
    if p <= 0.0 {
        return None;
    }
    Some((
        p,
        TermSet {
            mean_x: acc[1] / p,
            mean_y: acc[2] / p,
            raw_xx: acc[3] / p,
            raw_yy: acc[4] / p,
            raw_xy: acc[5] / p,
            ..TermSet::default()
        },
    ))
}

/// Delta-method assembly of the 2-way conditional power moments.
///
/// Mean: the harmonic term plus half-Hessian variance/covariance
/// corrections with denominator `(X+Y)^3`. Second moment: first-order
/// variance propagation plus the `2 beta (E[beta] - beta)` adjustment.
pub fn sho2_moments(p: f64, t: &TermSet, ct: f64) -> SubsetMoments {
    let (mx, my) = (t.mean_x, t.mean_y);
    let vx = t.raw_xx - mx * mx;
    let vy = t.raw_yy - my * my;
    let cxy = t.raw_xy - mx * my;
    let s = mx + my;
    let b0 = mx * my / s;
    let corr = (vx * my * my + vy * mx * mx - 2.0 * cxy * mx * my) / (s * s * s);
    let mean = ct * (b0 - corr);
    let second = ct
        * ct
        * ((my.powi(4) * t.raw_xx + mx.powi(4) * t.raw_yy + 2.0 * (mx * my).powi(2) * t.raw_xy)
            / s.powi(4)
            + 2.0 * b0 * (mean / ct - b0));
    SubsetMoments {
        mode: Mode::Sho2 { k: 0 },
        probability: p,
        beta_mean: mean,
        beta_sq_mean: second,
        defined: true,
        terms: *t,
        taylor_ratio: if b0 > 0.0 { (corr / b0).abs() } else { 0.0 },
    }
}

/// Conditional aggregate interference moments over a 3-way subset.
pub fn sho3_terms(engine: &SubsetEngine, k: usize, l: usize) -> Option<(f64, TermSet)> {
    let acc = engine.sho3_accumulate(k, l);
    let p = acc[0];
    if p <= 0.0 {
        return None;
    }
    Some((
        p,
        TermSet {
            mean_x: acc[1] / p,
            mean_y: acc[2] / p,
            mean_z: acc[3] / p,
            raw_xx: acc[4] / p,
            raw_yy: acc[5] / p,
            raw_zz: acc[6] / p,
            raw_xy: acc[7] / p,
            raw_xz: acc[8] / p,
            raw_yz: acc[9] / p,
        },
    ))
}

/// Delta-method assembly of the 3-way conditional power moments.
///
/// The mean carries coefficient 2 on the pure-variance corrections and the
/// cross-covariance corrections alike; the second moment uses squared first
/// derivatives with the same `2 beta (E[beta] - beta)` adjustment.
pub fn sho3_moments(p: f64, t: &TermSet, ct: f64) -> SubsetMoments {
    let (mx, my, mz) = (t.mean_x, t.mean_y, t.mean_z);
    let vx = t.raw_xx - mx * mx;
    let vy = t.raw_yy - my * my;
    let vz = t.raw_zz - mz * mz;
    let cxy = t.raw_xy - mx * my;
    let cxz = t.raw_xz - mx * mz;
    let cyz = t.raw_yz - my * mz;
    let d = mx * my + mx * mz + my * mz;
    let d3 = d * d * d;
    let b0 = mx * my * mz / d;
    let corr = -2.0 * vx * (my + mz) * (my * mz).powi(2) / d3
        - 2.0 * vy * (mx + mz) * (mx * mz).powi(2) / d3
        - 2.0 * vz * (mx + my) * (mx * my).powi(2) / d3
        + 2.0 * cxy * mx * my * mz.powi(3) / d3
        + 2.0 * cxz * mx * mz * my.powi(3) / d3
        + 2.0 * cyz * my * mz * mx.powi(3) / d3;
    let mean = ct * (b0 + corr);
    let d4 = d * d * d * d;
    let second = ct
        * ct
        * (b0 * b0
            + vx * (my * mz).powi(4) / d4
            + vy * (mx * mz).powi(4) / d4
            + vz * (mx * my).powi(4) / d4
            + 2.0 * cxy * (mx * my).powi(2) * mz.powi(4) / d4
            + 2.0 * cxz * (mx * mz).powi(2) * my.powi(4) / d4
            + 2.0 * cyz * (my * mz).powi(2) * mx.powi(4) / d4
            + 2.0 * b0 * (mean / ct - b0));
    SubsetMoments {
        mode: Mode::Sho3 { k: 0, l: 0 },
        probability: p,
        beta_mean: mean,
        beta_sq_mean: second,
        defined: true,
        terms: *t,
        taylor_ratio: if b0 > 0.0 { (corr / b0).abs() } else { 0.0 },
    }
}

fn undefined_subset(mode: Mode, p: f64) -> SubsetMoments {
    SubsetMoments {
        mode,
        probability: p,
        beta_mean: 0.0,
        beta_sq_mean: 0.0,
        defined: false,
        terms: TermSet::default(),
        taylor_ratio: 0.0,
    }
}

/// Probability-weighted aggregation of the subset moments.
pub fn aggregate(subsets: Vec<SubsetMoments>) -> Result<MomentReport> {
    let mut p_omega = 0.0;
    let (mut p_hho, mut p_sho2, mut p_sho3) = (0.0, 0.0, 0.0);
    let mut num_mean = 0.0;
    let mut num_second = 0.0;
    let mut num_within = 0.0;
    let mut clamped = false;
    let mut taylor_warning = false;
    for s in subsets.iter().filter(|s| s.defined && s.probability > 0.0) {
        p_omega += s.probability;
        match s.mode {
            Mode::Hho => p_hho += s.probability,
            Mode::Sho2 { .. } => p_sho2 += s.probability,
            Mode::Sho3 { .. } => p_sho3 += s.probability,
        }
        num_mean += s.probability * s.beta_mean;
        num_second += s.probability * s.beta_sq_mean;
        let var = s.beta_sq_mean - s.beta_mean * s.beta_mean;
        if var < 0.0 {
            clamped = true;
        }
        num_within += s.probability * var.max(0.0);
        if s.taylor_ratio > 0.30 {
            taylor_warning = true;
        }
    }
    if p_omega <= 0.0 {
        return Err(ModelError::NoCoverage);
    }
    let beta_mean = num_mean / p_omega;
    let second = num_second / p_omega;
    let total_var = second - beta_mean * beta_mean;
    if total_var < 0.0 {
        clamped = true;
    }
    Ok(MomentReport {
        beta_mean,
        beta_std_total: total_var.max(0.0).sqrt(),
        beta_std_within: (num_within / p_omega).max(0.0).sqrt(),
        p_omega,
        p_hho,
        p_sho2,
        p_sho3,
        subsets,
        negative_variance_clamped: clamped,
        taylor_warning,
    })
}

/// Full semi-analytic report for one scenario.
///
/// Subsets are independent and evaluated in parallel; aggregation runs in a
/// fixed order (HHO, then partners ascending, then ordered pairs
/// lexicographic) so results are bit-stable for a fixed quadrature spec.
pub fn compute_report(
    scenario: &ScenarioParams,
    quad: &QuadratureSpec,
    opts: &ComputeOptions,
) -> Result<MomentReport> {
    scenario.validate()?;
    let (_geom, view) = scenario.build_view()?;
    let engine = SubsetEngine::new(
        &view,
        &scenario.env,
        &scenario.policy,
        scenario.load_constant(),
        scenario.orthogonality_u(),
        quad,
    )?;
    let m = scenario.policy.as_size;
    let keep = |k: usize| opts.partner_floor <= 0.0 || engine.partner_gain(k) >= opts.partner_floor;

    let mut jobs: Vec<Mode> = vec![Mode::Hho];
    if m >= 2 {
        jobs.extend((2..=N).filter(|&k| keep(k)).map(|k| Mode::Sho2 { k }));
    }
    if m >= 3 {
        for k in (2..=N).filter(|&k| keep(k)) {
            for l in (2..=N).filter(|&l| keep(l)) {
                if l != k {
                    jobs.push(Mode::Sho3 { k, l });
                }
            }
        }
    }
    let mut subsets: Vec<SubsetMoments> = jobs
        .into_par_iter()
        .map(|mode| match mode {
            Mode::Hho => hho_moments(&engine),
            Mode::Sho2 { k } => match sho2_terms(&engine, k) {
                Some((p, t)) => {
                    let mut s = sho2_moments(p, &t, engine.ct);
                    s.mode = mode;
                    s
                }
                None => undefined_subset(mode, 0.0),
            },
            Mode::Sho3 { k, l } => match sho3_terms(&engine, k, l) {
                Some((p, t)) => {
                    let mut s = sho3_moments(p, &t, engine.ct);
                    s.mode = mode;
                    s
                }
                None => undefined_subset(mode, 0.0),
            },
        })
        .collect();
    subsets.sort_by_key(|s| s.mode);
    aggregate(subsets)
}

/// Conditional expectation of a product of one or two interference factors
/// over one subset: the per-term diagnostic behind the aggregate moments.
///
/// A factor `(leg, i)` is `X_i`, `Y_i` or `Z_i` with 1-based cell index `i`
/// (0 denotes the intra-cell constant `1 - u`). Used by tests to check each
/// term against conditional Monte-Carlo estimation.
pub fn subset_term(
    engine: &SubsetEngine,
    mode: Mode,
    factors: &[(Leg, usize)],
) -> Result<f64> {
    assert!(!factors.is_empty() && factors.len() <= 2);
    let (unnorm, p) = term_unnormalized(engine, mode, factors)?;
    if p <= 0.0 {
        return Err(ModelError::InvalidState(
            "zero-probability subset has no conditional moments".into(),
        ));
    }
    Ok(unnorm / p)
}

fn serving_site(mode: Mode, leg: Leg) -> Result<usize> {
    match (mode, leg) {
        (_, Leg::X) => Ok(1),
        (Mode::Sho2 { k }, Leg::Y) | (Mode::Sho3 { k, .. }, Leg::Y) => Ok(k),
        (Mode::Sho3 { l, .. }, Leg::Z) => Ok(l),
        _ => Err(ModelError::InvalidParameter(format!(
            "leg {leg:?} does not exist in mode {mode:?}"
        ))),
    }
}

/// Evaluates E[prod factors * 1_subset] and P(subset) in one pass, walking
/// the same nodes as the aggregate accumulators.
fn term_unnormalized(
    engine: &SubsetEngine,
    mode: Mode,
    factors: &[(Leg, usize)],
) -> Result<(f64, f64)> {
    // decompose factors into: constant coefficient, exponent per pinned
    // variable and per free cell
    #[derive(Default, Clone, Copy)]
    struct Expo {
        on_1: i32,
        on_k: i32,
        on_l: i32,
    }
    let (k, l) = match mode {
        Mode::Hho => (0usize, 0usize),
        Mode::Sho2 { k } => (k, 0),
        Mode::Sho3 { k, l } => (k, l),
    };
    let mut coeff = 1.0;
    let mut expo = Expo::default();
    let mut free_expo = [0i32; N]; // by 0-based site index
    for &(leg, i) in factors {
        let s = serving_site(mode, leg)?;
        if i == 0 {
            coeff *= 1.0 - engine.u;
            continue;
        }
        if i == s {
            return Err(ModelError::InvalidParameter(format!(
                "factor index {i} equals the serving site of leg {leg:?}"
            )));
        }
        coeff *= engine.c[s - 1][i - 1];
        let bump = |e: &mut Expo, site: usize, d: i32| {
            if site == 1 {
                e.on_1 += d;
            } else if site == k {
                e.on_k += d;
            } else if site == l {
                e.on_l += d;
            }
        };
        if i == 1 || i == k || i == l {
            bump(&mut expo, i, 1);
        } else {
            free_expo[i - 1] += 1;
        }
        bump(&mut expo, s, -1);
    }
    if coeff == 0.0 {
        // a zero gain ratio kills the whole product
        let p = match mode {
            Mode::Hho => engine.hho_accumulate().0,
            Mode::Sho2 { k } => engine.sho2_accumulate(k)[0],
            Mode::Sho3 { k, l } => engine.sho3_accumulate(k, l)[0],
        };
        return Ok((0.0, p));
    }

    let pow10 = |x: f64, e: i32| 10f64.powf(e as f64 * engine.b * x / 10.0);
    // free-cell contribution at a node given its stats
    let free_factor = |st: &FreeStats| -> f64 {
        let mut f = 1.0;
        for t in 0..st.n {
            match free_expo[st.idx[t]] {
                0 => {}
                1 => f *= st.q[t],
                2 => f *= st.w[t],
                _ => unreachable!("at most two factors"),
            }
        }
        f
    };

    let rule = gl_rule(engine.nodes);
    let (olo, ohi) = engine.outer_window();
    let omid = 0.5 * (olo + ohi);
    let ohalf = 0.5 * (ohi - olo);
    let mut term = 0.0;
    let mut prob = 0.0;
    match mode {
        Mode::Hho => {
            let off = if engine.m == 1 {
                engine.cst
            } else {
                -engine.sht
            };
            let freelist: Vec<usize> = (1..N).collect();
            for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
                let x1 = omid + ohalf * xn;
                let st = engine.free_stats(&freelist, |i| x1 - engine.rdb[0][i] + off);
                if st.mass == 0.0 {
                    continue;
                }
                let base = wn * ohalf * gauss_pdf(x1, engine.sigma) * st.mass;
                prob += base;
                term += base * pow10(x1, expo.on_1) * free_factor(&st);
            }
        }
        Mode::Sho2 { k } => {
            let ki = k - 1;
            let r1k = engine.rdb[0][ki];
            let freelist: Vec<usize> = (1..N).filter(|&i| i != ki).collect();
            for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
                let x1 = omid + ohalf * xn;
                let wlo = x1 - r1k - engine.sht;
                let whi = x1 - r1k + engine.cst;
                let f1 = wn * ohalf * gauss_pdf(x1, engine.sigma);
                if engine.m == 2 {
                    let kmid = 0.5 * (wlo + whi);
                    let khalf = 0.5 * (whi - wlo);
                    if khalf <= 0.0 {
                        continue;
                    }
                    for (&kn, &kw) in rule.0.iter().zip(rule.1.iter()) {
                        let xk = kmid + khalf * kn;
                        let st = engine.free_stats(&freelist, |i| xk - engine.rdb[ki][i]);
                        if st.mass == 0.0 {
                            continue;
                        }
                        let base = f1 * kw * khalf * gauss_pdf(xk, engine.sigma) * st.mass;
                        prob += base;
                        term += base
                            * pow10(x1, expo.on_1)
                            * pow10(xk, expo.on_k)
                            * free_factor(&st);
                    }
                } else {
                    let wm = engine.window_masses(wlo, whi);
                    let st =
                        engine.free_stats(&freelist, |i| x1 - engine.rdb[0][i] - engine.sht);
                    if st.mass == 0.0 {
                        continue;
                    }
                    let base = f1 * st.mass;
                    prob += base * wm[2];
                    term += base
                        * pow10(x1, expo.on_1)
                        * wm[(expo.on_k + 2) as usize]
                        * free_factor(&st);
                }
            }
        }
        Mode::Sho3 { k, l } => {
            let (ki, li) = (k - 1, l - 1);
            let r1k = engine.rdb[0][ki];
            let r1l = engine.rdb[0][li];
            let rkl = engine.rdb[ki][li];
            let freelist: Vec<usize> = (1..N).filter(|&i| i != ki && i != li).collect();
            for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
                let x1 = omid + ohalf * xn;
                let f1 = wn * ohalf * gauss_pdf(x1, engine.sigma);
                let llo = x1 - r1l - engine.sht;
                let lhi = x1 - r1k + engine.cst - rkl;
                if lhi <= llo {
                    continue;
                }
                let lmid = 0.5 * (llo + lhi);
                let lhalf = 0.5 * (lhi - llo);
                for (&ln, &lw) in rule.0.iter().zip(rule.1.iter()) {
                    let xl = lmid + lhalf * ln;
                    let wm = engine
                        .window_masses((x1 - r1k - engine.sht).max(xl + rkl), x1 - r1k + engine.cst);
                    if wm[2] == 0.0 {
                        continue;
                    }
                    let st = engine.free_stats(&freelist, |i| {
                        (xl - engine.rdb[li][i]).min(x1 - engine.rdb[0][i] - engine.sht)
                    });
                    if st.mass == 0.0 {
                        continue;
                    }
                    let base = f1 * lw * lhalf * gauss_pdf(xl, engine.sigma) * st.mass;
                    prob += base * wm[2];
                    term += base
                        * pow10(x1, expo.on_1)
                        * pow10(xl, expo.on_l)
                        * wm[(expo.on_k + 2) as usize]
                        * free_factor(&st);
                }
            }
        }
    }
    Ok((coeff * term, prob))
}
