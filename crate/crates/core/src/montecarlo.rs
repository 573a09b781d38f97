//! Monte-Carlo verification oracle.
//!
//! Draws i.i.d. zero-mean Gaussian shadowing vectors, classifies each draw
//! with the same handoff inequalities the semi-analytic engine integrates
//! over, evaluates the power fraction directly, and pools conditional
//! statistics over rounds. Rounds use independent, documented substreams of
//! one master seed (ChaCha stream = round index), so runs are reproducible
//! bit for bit and rounds can execute in parallel.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::geometry::NUM_SITES;
use crate::moments::Leg;
use crate::quadrature::LN10;
use crate::regions::{Classified, Mode};
use crate::scenario::ScenarioParams;

const N: usize = NUM_SITES;

/// Monte-Carlo run configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McConfig {
    pub samples_per_round: usize,
    pub rounds: usize,
    pub master_seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples_per_round: 100_000,
            rounds: 5,
            master_seed: 0x5eed_cd_a1,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_round < 1000 {
            return Err(ModelError::InvalidParameter(format!(
                "samples_per_round must be >= 1000, got {}",
                self.samples_per_round
            )));
        }
        if self.rounds == 0 {
            return Err(ModelError::InvalidParameter("rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pooled Monte-Carlo estimates and diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    /// Conditional mean of beta over camped samples.
    pub beta_mean: f64,
    /// Total conditional standard deviation.
    pub beta_std_total: f64,
    /// Probability-weighted within-subset standard deviation (the quantity
    /// the reference tables report).
    pub beta_std_within: f64,
    /// Standard error of `beta_mean` from the pooled sample variance.
    pub se_mean: f64,
    /// Standard error of `beta_mean` from the spread of round means.
    pub se_mean_between: f64,
    /// Standard error of `beta_std_within` from the spread of round values.
    pub se_std_between: f64,
    /// Camping frequency P(Omega^m).
    pub p_omega: f64,
    pub n_total: u64,
    pub n_camped: u64,
    pub round_means: Vec<f64>,
    pub round_stds: Vec<f64>,
    /// Camped-sample counts per subset.
    #[serde(skip)]
    pub counts: BTreeMap<Mode, u64>,
    pub n_not_camped: u64,
}

impl McEstimate {
    /// Standard error of a subset frequency estimate.
    pub fn freq_se(&self, count: u64) -> f64 {
        let n = self.n_total as f64;
        let p = count as f64 / n;
        (p * (1.0 - p) / n).sqrt()
    }

    pub fn mode_count(&self, pred: impl Fn(&Mode) -> bool) -> u64 {
        self.counts
            .iter()
            .filter(|(m, _)| pred(m))
            .map(|(_, c)| c)
            .sum()
    }
}

/// Precomputed tables for fast per-sample evaluation.
struct Tables {
    m: u8,
    u: f64,
    ct: f64,
    b: f64,
    sigma: f64,
    cst: f64,
    sht: f64,
    /// score offsets g_i = xi_i + off_i
    off: [f64; N],
    /// gain ratios c[j][i]
    c: [[f64; N]; N],
}

impl Tables {
    fn new(scenario: &ScenarioParams) -> Result<Self> {
        scenario.validate()?;
        let (_g, view) = scenario.build_view()?;
        let env = &scenario.env;
        let (c, _rdb) = view.gain_matrices(env.alpha, env.b_corr)?;
        let scale = 10.0 * env.alpha / env.b_corr;
        let mut off = [0.0; N];
        for i in 0..N {
            off[i] = if view.r[i] == 0.0 {
                f64::INFINITY
            } else {
                scale * (1.0 / view.r[i]).log10()
            };
        }
        Ok(Self {
            m: scenario.policy.as_size,
            u: scenario.orthogonality_u(),
            ct: scenario.load_constant(),
            b: env.b_corr,
            sigma: env.sigma_db,
            cst: scenario.policy.cst_xi(env.b_corr),
            sht: scenario.policy.sht_xi(env.b_corr),
            off,
            c,
        })
    }

    /// Interference sum for 1-based serving site, from precomputed ratios.
    fn isum(&self, serving: usize, t: &[f64; N]) -> f64 {
        let row = &self.c[serving - 1];
        let mut s = 0.0;
        for i in 0..N {
            if i != serving - 1 {
                s += row[i] * t[i];
            }
        }
        (1.0 - self.u) + s / t[serving - 1]
    }

    /// Classify on precomputed score offsets; mirrors `regions::classify`.
    fn classify(&self, xi: &[f64; N]) -> Classified {
        let mut top = [(f64::NEG_INFINITY, 0usize); 3];
        for i in 1..N {
            let gi = xi[i] + self.off[i];
            if gi > top[0].0 {
                top = [(gi, i + 1), top[0], top[1]];
            } else if gi > top[1].0 {
                top = [top[0], (gi, i + 1), top[1]];
            } else if gi > top[2].0 {
                top[2] = (gi, i + 1);
            }
        }
        let g1 = xi[0] + self.off[0];
        let (m1, k1) = top[0];
        let (m2, k2) = top[1];
        let (m3, _) = top[2];
        if self.m == 1 {
            return if m1 <= g1 + self.cst {
                Classified::Camped(Mode::Hho)
            } else {
                Classified::NotCamped
            };
        }
        if m1 <= g1 - self.sht {
            return Classified::Camped(Mode::Hho);
        }
        if m1 > g1 + self.cst {
            return Classified::NotCamped;
        }
        if self.m == 2 {
            return Classified::Camped(Mode::Sho2 { k: k1 });
        }
        if m2 <= g1 - self.sht {
            return Classified::Camped(Mode::Sho2 { k: k1 });
        }
        if m3 <= g1 - self.sht {
            return Classified::Camped(Mode::Sho3 { k: k1, l: k2 });
        }
        Classified::NotCamped
    }

    fn beta(&self, mode: Mode, t: &[f64; N]) -> f64 {
        match mode {
            Mode::Hho => self.ct * self.isum(1, t),
            Mode::Sho2 { k } => {
                let x = self.isum(1, t);
                let y = self.isum(k, t);
                let beta = self.ct * x * y / (x + y);
                debug_assert!(beta <= self.ct * x.min(y) * (1.0 + 1e-12));
                beta
            }
            Mode::Sho3 { k, l } => {
                let x = self.isum(1, t);
                let y = self.isum(k, t);
                let z = self.isum(l, t);
                let beta = self.ct * x * y * z / (x * y + x * z + y * z);
                debug_assert!(beta <= self.ct * x.min(y).min(z) * (1.0 + 1e-12));
                beta
            }
        }
    }
}

fn round_rng(master_seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(round as u64);
    rng
}

#[derive(Default, Clone)]
struct RoundAcc {
    n: u64,
    sum: f64,
    sum2: f64,
    per_mode: BTreeMap<Mode, (u64, f64, f64)>,
    not_camped: u64,
}

fn run_round(tables: &Tables, cfg: &McConfig, round: usize) -> RoundAcc {
    let mut rng = round_rng(cfg.master_seed, round);
    let mut acc = RoundAcc::default();
    let tilt = tables.b * LN10 / 10.0;
    for _ in 0..cfg.samples_per_round {
        let mut xi = [0.0f64; N];
        let mut t = [0.0f64; N];
        for i in 0..N {
            let z: f64 = rng.sample(StandardNormal);
            xi[i] = z * tables.sigma;
            t[i] = (tilt * xi[i]).exp();
        }
        match tables.classify(&xi) {
            Classified::NotCamped => acc.not_camped += 1,
            Classified::Camped(mode) => {
                let beta = tables.beta(mode, &t);
                acc.n += 1;
                acc.sum += beta;
                acc.sum2 += beta * beta;
                let e = acc.per_mode.entry(mode).or_insert((0, 0.0, 0.0));
                e.0 += 1;
                e.1 += beta;
                e.2 += beta * beta;
            }
        }
    }
    acc
}

/// Run the full Monte-Carlo estimate for one scenario.
pub fn run(cfg: &McConfig, scenario: &ScenarioParams) -> Result<McEstimate> {
    cfg.validate()?;
    let tables = Tables::new(scenario)?;
    let rounds: Vec<RoundAcc> = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| run_round(&tables, cfg, r))
        .collect();

    let mut n = 0u64;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut not_camped = 0u64;
    let mut per_mode: BTreeMap<Mode, (u64, f64, f64)> = BTreeMap::new();
    let mut round_means = Vec::with_capacity(cfg.rounds);
    let mut round_stds = Vec::with_capacity(cfg.rounds);
    for r in &rounds {
        n += r.n;
        sum += r.sum;
        sum2 += r.sum2;
        not_camped += r.not_camped;
        for (mode, (c, s, s2)) in &r.per_mode {
            let e = per_mode.entry(*mode).or_insert((0, 0.0, 0.0));
            e.0 += c;
            e.1 += s;
            e.2 += s2;
        }
        if r.n > 0 {
            let rm = r.sum / r.n as f64;
            round_means.push(rm);
            // round-level within-subset std
            let mut wv = 0.0;
            for (_, (c, s, s2)) in &r.per_mode {
                let mc = *c as f64;
                let mm = s / mc;
                wv += mc / r.n as f64 * (s2 / mc - mm * mm).max(0.0);
            }
            round_stds.push(wv.sqrt());
        }
    }
    let n_total = (cfg.rounds * cfg.samples_per_round) as u64;
    if n == 0 {
        return Err(ModelError::NoCoverage);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var_total = (sum2 / nf - mean * mean).max(0.0);
    let mut within_var = 0.0;
    for (_, (c, s, s2)) in &per_mode {
        let mc = *c as f64;
        let mm = s / mc;
        within_var += mc / nf * (s2 / mc - mm * mm).max(0.0);
    }
    let spread = |vals: &[f64]| -> f64 {
        if vals.len() < 2 {
            return f64::NAN;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            / (vals.len() - 1) as f64;
        (v / vals.len() as f64).sqrt()
    };
    let counts: BTreeMap<Mode, u64> = per_mode.iter().map(|(m, (c, _, _))| (*m, *c)).collect();
    Ok(McEstimate {
        beta_mean: mean,
        beta_std_total: var_total.sqrt(),
        beta_std_within: within_var.sqrt(),
        se_mean: (var_total / nf).sqrt(),
        se_mean_between: spread(&round_means),
        se_std_between: spread(&round_stds),
        p_omega: nf / n_total as f64,
        n_total,
        n_camped: n,
        round_means,
        round_stds,
        counts,
        n_not_camped: not_camped,
    })
}

/// Monte-Carlo estimate of one conditional interference term over a subset.
///
/// Oracle for the quadrature term integrals: estimates
/// `E[prod factors | subset]` with its standard error by direct sampling.
pub fn conditional_term_estimate(
    cfg: &McConfig,
    scenario: &ScenarioParams,
    mode: Mode,
    factors: &[(Leg, usize)],
) -> Result<(f64, f64, u64)> {
    cfg.validate()?;
    let tables = Tables::new(scenario)?;
    let tilt = tables.b * LN10 / 10.0;
    let factor_value = |leg: Leg, i: usize, t: &[f64; N]| -> Result<f64> {
        let s = match (mode, leg) {
            (_, Leg::X) => 1,
            (Mode::Sho2 { k }, Leg::Y) | (Mode::Sho3 { k, .. }, Leg::Y) => k,
            (Mode::Sho3 { l, .. }, Leg::Z) => l,
            _ => {
                return Err(ModelError::InvalidParameter(format!(
                    "leg {leg:?} does not exist in mode {mode:?}"
                )))
            }
        };
        if i == 0 {
            return Ok(1.0 - tables.u);
        }
        Ok(tables.c[s - 1][i - 1] * t[i - 1] / t[s - 1])
    };
    let mut count = 0u64;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for round in 0..cfg.rounds {
        let mut rng = round_rng(cfg.master_seed, round);
        for _ in 0..cfg.samples_per_round {
            let mut xi = [0.0f64; N];
            let mut t = [0.0f64; N];
            for i in 0..N {
                let z: f64 = rng.sample(StandardNormal);
                xi[i] = z * tables.sigma;
                t[i] = (tilt * xi[i]).exp();
            }
            if tables.classify(&xi) != Classified::Camped(mode) {
                continue;
            }
            let mut v = 1.0;
            for &(leg, i) in factors {
                v *= factor_value(leg, i, &t)?;
            }
            count += 1;
            sum += v;
            sum2 += v * v;
        }
    }
    if count < 500 {
        return Err(ModelError::InsufficientSamples {
            got: count as usize,
            need: 500,
        });
    }
    let nf = count as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0);
    Ok((mean, (var / nf).sqrt(), count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{HandoffPolicy, PropagationEnv, ServiceProfile};

    fn scenario(m: u8, theta: f64, frac: f64, alpha: f64, sigma: f64) -> ScenarioParams {
        ScenarioParams::with_normalized_r(
            PropagationEnv::new(alpha, sigma).unwrap(),
            ServiceProfile::wcdma_voice(),
            HandoffPolicy::new(m, 1.0, 3.0).unwrap(),
            1.0,
            theta,
            frac,
        )
    }

    fn small_cfg() -> McConfig {
        McConfig {
            samples_per_round: 20_000,
            rounds: 2,
            master_seed: 42,
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let s = scenario(2, 30.0, 0.8, 3.0, 8.0);
        let a = run(&small_cfg(), &s).unwrap();
        let b = run(&small_cfg(), &s).unwrap();
        assert_eq!(a.beta_mean.to_bits(), b.beta_mean.to_bits());
        assert_eq!(a.beta_std_within.to_bits(), b.beta_std_within.to_bits());
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn counts_sum_to_total() {
        let s = scenario(3, 0.0, 0.9, 4.0, 10.0);
        let cfg = small_cfg();
        let e = run(&cfg, &s).unwrap();
        let camped: u64 = e.counts.values().sum();
        assert_eq!(camped, e.n_camped);
        assert_eq!(camped + e.n_not_camped, e.n_total);
    }

    #[test]
    fn near_deterministic_limit() {
        let mut s = scenario(1, 15.0, 0.7, 3.0, 8.0);
        s.env = PropagationEnv::new(3.0, 1e-3).unwrap();
        let e = run(&small_cfg(), &s).unwrap();
        let (_g, view) = s.build_view().unwrap();
        let mut want = 0.1;
        for i in 2..=N {
            want += view.gain_ratio(1, i, 3.0).unwrap();
        }
        want *= s.load_constant();
        assert!((e.beta_mean - want).abs() < 1e-6);
        assert!(e.beta_std_total < 1e-5);
        assert!((e.p_omega - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampled_sigma_matches_configured() {
        // marginal sanity: per-component std within 1% at 1e5 draws
        let mut rng = round_rng(7, 0);
        let sigma = 8.0;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let x = z * sigma;
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        assert!((std - sigma).abs() / sigma < 0.01, "std {std}");
    }

    #[test]
    fn different_seeds_agree_statistically() {
        let s = scenario(2, 30.0, 0.7, 3.0, 8.0);
        let mut c1 = small_cfg();
        let mut c2 = small_cfg();
        c1.master_seed = 1;
        c2.master_seed = 2;
        let a = run(&c1, &s).unwrap();
        let b = run(&c2, &s).unwrap();
        let se = (a.se_mean * a.se_mean + b.se_mean * b.se_mean).sqrt();
        assert!((a.beta_mean - b.beta_mean).abs() < 6.0 * se);
    }

    #[test]
    fn x0_term_is_exact_constant() {
        let s = scenario(1, 15.0, 0.7, 3.0, 8.0);
        let cfg = McConfig {
            samples_per_round: 10_000,
            rounds: 1,
            master_seed: 3,
        };
        let (mean, se, _) =
            conditional_term_estimate(&cfg, &s, Mode::Hho, &[(Leg::X, 0)]).unwrap();
        assert_eq!(se, 0.0);
        assert!((mean - 0.1).abs() < 1e-12);
    }

    #[test]
    fn insufficient_samples_surface_as_error() {
        // a far-second-tier 3-way pair at an interior position is rare
        let s = scenario(3, 0.0, 0.2, 4.0, 10.0);
        let cfg = McConfig {
            samples_per_round: 1000,
            rounds: 1,
            master_seed: 3,
        };
        let got = conditional_term_estimate(
            &cfg,
            &s,
            Mode::Sho3 { k: 12, l: 13 },
            &[(Leg::X, 2)],
        );
        assert!(matches!(got, Err(ModelError::InsufficientSamples { .. })));
    }

    #[test]
    fn degenerate_position_rejected() {
        let mut s = scenario(1, 0.0, 0.5, 3.0, 8.0);
        // place the MS on the first-tier site at theta=0, distance sqrt(3)
        s.r1 = 3.0f64.sqrt();
        let got = run(&small_cfg(), &s);
        assert!(matches!(got, Err(ModelError::DegeneratePosition { .. })));
    }

    #[test]
    fn beta_matches_radio_module_on_samples() {
        // the fast path agrees with the public interference_sum / beta ops
        use crate::radio::{beta_sho2, interference_sum, ShadowVector as SV};
        let s = scenario(2, 30.0, 0.8, 3.0, 8.0);
        let tables = Tables::new(&s).unwrap();
        let (_g, view) = s.build_view().unwrap();
        let mut rng = round_rng(11, 0);
        let tilt = tables.b * LN10 / 10.0;
        for _ in 0..200 {
            let mut xi = [0.0f64; N];
            let mut t = [0.0f64; N];
            for i in 0..N {
                let z: f64 = rng.sample(StandardNormal);
                xi[i] = z * 8.0;
                t[i] = (tilt * xi[i]).exp();
            }
            if let Classified::Camped(Mode::Sho2 { k }) = tables.classify(&xi) {
                let x = interference_sum(&view, &s.env, 0.9, 1, &SV(xi)).unwrap();
                let y = interference_sum(&view, &s.env, 0.9, k, &SV(xi)).unwrap();
                let want = beta_sho2(tables.ct, x, y).unwrap();
                let got = tables.beta(Mode::Sho2 { k }, &t);
                assert!((got - want).abs() / want < 1e-12);
            }
        }
    }

    #[test]
    fn classify_matches_regions_module() {
        use crate::radio::ShadowVector;
        use crate::regions::classify;
        let s = scenario(3, 10.0, 0.85, 3.0, 8.0);
        let tables = Tables::new(&s).unwrap();
        let (_g, view) = s.build_view().unwrap();
        let mut rng = round_rng(13, 0);
        for _ in 0..2000 {
            let mut xi = [0.0f64; N];
            for x in xi.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = z * 8.0;
            }
            let a = tables.classify(&xi);
            let b = classify(&ShadowVector(xi), 3, &view, &s.env, &s.policy);
            assert_eq!(a, b);
        }
    }
}
