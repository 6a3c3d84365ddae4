//! Sampled difference-quotient estimates of the meta-objective's block
//! smoothness constants, and their dependence on `N`.
//!
//! Estimates are lower bounds on the true Lipschitz constants; checks compare
//! them against closed-form upper bounds and trend directions, never equality.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_loop::{InnerLoopConfig, InnerStepRule};
use crate::optimizer::population_meta_gradient;
use crate::params::SplitParameters;
use crate::task_model::{sample_eval_pool, FamilyConstants, Geometry, TaskFamilySpec, TaskInstance};

/// Column order of [`ScalingReport::to_csv`].
pub const SCALING_CSV_HEADER: &str = "block,N,estimate,theory_bound,pass";

/// Relative slack for the monotonicity checks.
pub const MONOTONE_TOLERANCE: f64 = 0.05;

/// Which partial meta-gradient is differenced, and which block is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeBlock {
    /// `∂/∂w`, perturbing `w`.
    #[serde(rename = "w_w")]
    WW,
    /// `∂/∂w`, perturbing `φ`.
    #[serde(rename = "w_phi")]
    WPhi,
    /// `∂/∂φ`, perturbing `w`.
    #[serde(rename = "phi_w")]
    PhiW,
    /// `∂/∂φ`, perturbing `φ`.
    #[serde(rename = "phi_phi")]
    PhiPhi,
}

impl ProbeBlock {
    pub const ALL: [ProbeBlock; 4] = [ProbeBlock::WW, ProbeBlock::WPhi, ProbeBlock::PhiW, ProbeBlock::PhiPhi];

    pub fn name(self) -> &'static str {
        match self {
            ProbeBlock::WW => "w_w",
            ProbeBlock::WPhi => "w_phi",
            ProbeBlock::PhiW => "phi_w",
            ProbeBlock::PhiPhi => "phi_phi",
        }
    }

    fn perturbs_w(self) -> bool {
        matches!(self, ProbeBlock::WW | ProbeBlock::PhiW)
    }

    fn reads_w(self) -> bool {
        matches!(self, ProbeBlock::WW | ProbeBlock::WPhi)
    }
}

impl std::fmt::Display for ProbeBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    pub block: ProbeBlock,
    pub n_steps: usize,
    pub estimate: f64,
    pub num_pairs: usize,
    pub pair_scale: f64,
}

/// Max over `num_pairs` symmetric pairs `center ± δ` (δ uniform on the sphere
/// of radius `pair_scale` in the perturbed block) of
/// `‖g(center + δ) − g(center − δ)‖ / ‖2δ‖`, with `g` the pool-averaged
/// partial meta-gradient selected by `block`.
pub fn estimate_block_smoothness(
    pool: &[TaskInstance],
    center: &SplitParameters,
    cfg: &InnerLoopConfig,
    block: ProbeBlock,
    num_pairs: usize,
    pair_scale: f64,
    seed: u64,
) -> Result<SmoothnessEstimate> {
    if num_pairs == 0 {
        return Err(Error::Config("num_pairs must be at least 1".into()));
    }
    if !(pair_scale.is_finite() && pair_scale > 0.0) {
        return Err(Error::Config(format!("pair_scale must be positive, got {pair_scale}")));
    }
    let dim = if block.perturbs_w() {
        center.n_w()
    } else {
        center.n_phi()
    };
    if dim == 0 {
        return Err(Error::Config(format!(
            "block {block} perturbs an empty parameter block"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<DVector<f64>> = (0..num_pairs)
        .map(|_| loop {
            let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let norm: f64 = v.norm();
            if norm > 0.0 {
                break v * (pair_scale / norm);
            }
        })
        .collect();

    let quotients: Vec<Result<f64>> = directions
        .par_iter()
        .map(|delta| {
            let shifted = |sign: f64| {
                let mut p = center.clone();
                if block.perturbs_w() {
                    p.w += delta * sign;
                } else {
                    p.phi += delta * sign;
                }
                p
            };
            let (gw1, gphi1, _) = population_meta_gradient(pool, &shifted(1.0), cfg)?;
            let (gw2, gphi2, _) = population_meta_gradient(pool, &shifted(-1.0), cfg)?;
            let diff = if block.reads_w() { gw1 - gw2 } else { gphi1 - gphi2 };
            Ok(diff.norm() / (2.0 * pair_scale))
        })
        .collect();
    let mut estimate: f64 = 0.0;
    for q in quotients {
        let q = q?;
        if !q.is_finite() {
            return Err(Error::NonFinite("smoothness difference quotient"));
        }
        estimate = estimate.max(q);
    }
    Ok(SmoothnessEstimate {
        block,
        n_steps: cfg.num_steps,
        estimate,
        num_pairs,
        pair_scale,
    })
}

/// Closed-form block smoothness bounds for a strongly convex inner loss,
/// valid at `alpha = μ/L²`. Returns `None` outside that regime or without a
/// certified `M`.
pub fn strongly_convex_bound(constants: &FamilyConstants, alpha: f64, n: usize, block: ProbeBlock) -> Option<f64> {
    let FamilyConstants {
        mu,
        smoothness_l: l,
        lipschitz_m,
        rho,
        tau,
    } = *constants;
    let m = lipschitz_m?;
    if !(mu > 0.0) || ((alpha - mu / (l * l)).abs() > 1e-12 * alpha) {
        return None;
    }
    let c = 1.0 - alpha * mu;
    let n_f = n as f64;
    let kappa_term = 2.0 * l / mu + 1.0;
    let bound = match block {
        ProbeBlock::WW => c.powf(1.5 * n_f) * l + (2.0 * rho * m / mu) * c.powf(n_f - 1.0),
        ProbeBlock::WPhi => (l + alpha * rho * m * n_f) * c.powf(n_f - 1.0) * kappa_term,
        ProbeBlock::PhiW => {
            (l + 2.0 * tau * m / mu + (2.0 * l * m / mu) * (alpha * rho / c + 2.0 * rho / mu) + l * l / mu)
                * c.powf((n_f - 1.0) / 2.0)
        }
        ProbeBlock::PhiPhi => (l + tau * m / mu + l * m * rho / (mu * mu) + l * l / mu) * kappa_term,
    };
    Some(bound)
}

/// Settings shared by every `N` in a scaling report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub inner_rule: InnerStepRule,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_pairs")]
    pub num_pairs: usize,
    #[serde(default = "default_pair_scale")]
    pub pair_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Probe center; zeros when absent.
    #[serde(default)]
    pub center: Option<SplitParameters>,
    #[serde(default = "default_blocks")]
    pub blocks: Vec<ProbeBlock>,
}

fn default_pool_size() -> usize {
    64
}

fn default_pairs() -> usize {
    16
}

fn default_pair_scale() -> f64 {
    1e-2
}

fn default_blocks() -> Vec<ProbeBlock> {
    ProbeBlock::ALL.to_vec()
}

impl ProbeConfig {
    pub fn new(inner_rule: InnerStepRule) -> Self {
        ProbeConfig {
            inner_rule,
            pool_size: default_pool_size(),
            num_pairs: default_pairs(),
            pair_scale: default_pair_scale(),
            seed: 0,
            center: None,
            blocks: default_blocks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub block: ProbeBlock,
    pub n_steps: usize,
    pub estimate: f64,
    pub theory_bound: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub block: ProbeBlock,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub geometry: Geometry,
    pub rows: Vec<ScalingRow>,
    pub trends: Vec<TrendCheck>,
}

impl ScalingReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.trends.iter().all(|t| t.pass)
    }

    pub fn estimates(&self, block: ProbeBlock) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.block == block)
            .map(|r| (r.n_steps, r.estimate))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCALING_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let bound = r.theory_bound.map(|b| b.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.block, r.n_steps, r.estimate, bound, r.pass);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "smoothness scaling ({:?})", self.geometry);
        for r in &self.rows {
            let bound = r.theory_bound.map(|b| format!("{b:.6e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "  {:<8} N={:<3} estimate={:.6e} bound={} {}",
                r.block,
                r.n_steps,
                r.estimate,
                bound,
                if r.pass { "ok" } else { "EXCEEDS BOUND" }
            );
        }
        for t in &self.trends {
            let _ = writeln!(
                out,
                "  trend {:<8} {:<14} measured={:.6} threshold={:.6} {}",
                t.block,
                t.name,
                t.measured,
                t.threshold,
                if t.pass { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Estimates every configured block at each `N` and checks the trend the
/// geometry predicts: geometric decay of `w_w` and an `N`-flat `phi_phi` for
/// strongly convex families, growth by at least 3x for nonconvex ones.
pub fn smoothness_scaling_report(
    family: &TaskFamilySpec,
    cfg: &ProbeConfig,
    n_values: &[usize],
) -> Result<ScalingReport> {
    family.validate()?;
    if n_values.is_empty() {
        return Err(Error::Config("n_values must not be empty".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n_values must be strictly increasing".into()));
    }
    if cfg.blocks.is_empty() {
        return Err(Error::Config("at least one probe block is required".into()));
    }
    let pool = sample_eval_pool(family, cfg.pool_size)?;
    let center = cfg
        .center
        .clone()
        .unwrap_or_else(|| SplitParameters::zeros(family.n_w, family.n_phi));
    center.check_dims(family.n_w, family.n_phi)?;
    let constants = family.certified_constants(Some(&center));

    let mut rows = Vec::new();
    let mut alphas = Vec::new();
    for &n in n_values {
        let inner = cfg.inner_rule.config(family.mu, family.smoothness_l, n)?;
        alphas.push(inner.alpha);
        for &block in &cfg.blocks {
            let est =
                estimate_block_smoothness(&pool, &center, &inner, block, cfg.num_pairs, cfg.pair_scale, cfg.seed)?;
            let theory_bound = match family.geometry {
                Geometry::StronglyConvex => strongly_convex_bound(&constants, inner.alpha, n, block),
                Geometry::Nonconvex => None,
            };
            let pass = theory_bound.is_none_or(|b| est.estimate <= b);
            rows.push(ScalingRow {
                block,
                n_steps: n,
                estimate: est.estimate,
                theory_bound,
                pass,
            });
        }
    }

    let mut report = ScalingReport {
        geometry: family.geometry,
        rows,
        trends: Vec::new(),
    };
    let constant_alpha = alphas.windows(2).all(|w| w[0] == w[1]);
    for &block in &cfg.blocks {
        let series = report.estimates(block);
        report.trends.extend(block_trends(
            family,
            block,
            &series,
            constant_alpha.then_some(alphas[0]),
        ));
    }
    Ok(report)
}

fn block_trends(
    family: &TaskFamilySpec,
    block: ProbeBlock,
    series: &[(usize, f64)],
    alpha: Option<f64>,
) -> Vec<TrendCheck> {
    let mut checks = Vec::new();
    let check = |name: &str, measured: f64, threshold: f64, pass: bool| TrendCheck {
        block,
        name: name.into(),
        measured,
        threshold,
        pass,
    };
    if series.len() < 2 {
        return checks;
    }
    match (family.geometry, block) {
        (Geometry::StronglyConvex, ProbeBlock::WW) => {
            if let Some(alpha) = alpha {
                let factor = decay_factor(series);
                let threshold = (1.0 - alpha * family.mu).powi(2) + 0.05;
                checks.push(check("decay_factor", factor, threshold, factor <= threshold));
            }
            let worst = worst_step(series, |prev, next| next / prev);
            checks.push(check(
                "non_increasing",
                worst,
                1.0 + MONOTONE_TOLERANCE,
                worst <= 1.0 + MONOTONE_TOLERANCE,
            ));
        }
        (Geometry::StronglyConvex, ProbeBlock::PhiPhi) => {
            let tail: Vec<f64> = series.iter().filter(|(n, _)| *n >= 2).map(|&(_, e)| e).collect();
            if tail.len() >= 2 {
                let max = tail.iter().copied().fold(f64::MIN, f64::max);
                let min = tail.iter().copied().fold(f64::MAX, f64::min);
                let spread = if min > 0.0 { max / min } else { f64::INFINITY };
                checks.push(check("spread", spread, 1.2, spread <= 1.2));
            }
        }
        (Geometry::StronglyConvex, _) => {}
        (Geometry::Nonconvex, _) => {
            let (first, last) = (series[0].1, series[series.len() - 1].1);
            let ratio = if first > 0.0 { last / first } else { f64::INFINITY };
            checks.push(check("growth_ratio", ratio, 3.0, ratio >= 3.0));
            let worst = worst_step(series, |prev, next| prev / next);
            checks.push(check(
                "non_decreasing",
                worst,
                1.0 + MONOTONE_TOLERANCE,
                worst <= 1.0 + MONOTONE_TOLERANCE,
            ));
            let slope = linear_slope(series);
            checks.push(check("linear_slope", slope, 0.0, slope > 0.0));
        }
    }
    checks
}

fn worst_step(series: &[(usize, f64)], ratio: impl Fn(f64, f64) -> f64) -> f64 {
    series
        .windows(2)
        .map(|w| ratio(w[0].1, w[1].1))
        .fold(f64::MIN, f64::max)
}

/// `exp` of the least-squares slope of `ln(estimate)` against `N`.
pub fn decay_factor(series: &[(usize, f64)]) -> f64 {
    let logs: Vec<(usize, f64)> = series.iter().map(|&(n, e)| (n, e.ln())).collect();
    linear_slope(&logs).exp()
}

/// Least-squares slope of `estimate` against `N`.
pub fn linear_slope(series: &[(usize, f64)]) -> f64 {
    let k = series.len() as f64;
    let mean_n = series.iter().map(|&(n, _)| n as f64).sum::<f64>() / k;
    let mean_e = series.iter().map(|&(_, e)| e).sum::<f64>() / k;
    let (mut num, mut den) = (0.0, 0.0);
    for &(n, e) in series {
        let dn = n as f64 - mean_n;
        num += dn * (e - mean_e);
        den += dn * dn;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::QuadraticLoss;

    fn decoupled() -> Vec<TaskInstance> {
        vec![TaskInstance::new(
            0,
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0),
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 1.0, 0.0),
        )
        .unwrap()]
    }

    #[test]
    fn decoupled_scalar_w_block() {
        let pool = decoupled();
        let center = SplitParameters::from_slices(&[0.3], &[0.1]).unwrap();
        let mut prev: Option<f64> = None;
        for n in 1..=5 {
            let cfg = InnerLoopConfig::new(0.5, n).unwrap();
            let est = estimate_block_smoothness(&pool, &center, &cfg, ProbeBlock::WW, 4, 1e-2, 1).unwrap();
            let expected = 0.25f64.powi(n as i32);
            assert!((est.estimate - expected).abs() <= 1e-9, "N={n}: {}", est.estimate);
            if let Some(p) = prev {
                assert!((est.estimate / p - 0.25f64).abs() <= 1e-6);
            }
            prev = Some(est.estimate);
        }
    }

    #[test]
    fn linear_outer_loss_has_zero_w_smoothness() {
        let pool = vec![TaskInstance::new(
            0,
            QuadraticLoss::scalar(1.0, 0.0, 0.3, 0.0, 0.0),
            QuadraticLoss::scalar(0.0, 0.0, 1.0, 0.0, 0.5),
        )
        .unwrap()];
        let cfg = InnerLoopConfig::new(0.5, 3).unwrap();
        let est =
            estimate_block_smoothness(&pool, &SplitParameters::zeros(1, 1), &cfg, ProbeBlock::WW, 3, 1e-2, 0).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn rejects_empty_block_and_bad_settings() {
        let pool = vec![TaskInstance::new(0, QuadraticLoss::zero(1, 0), QuadraticLoss::zero(1, 0)).unwrap()];
        let cfg = InnerLoopConfig::new(0.5, 1).unwrap();
        let c = SplitParameters::zeros(1, 0);
        assert!(estimate_block_smoothness(&pool, &c, &cfg, ProbeBlock::PhiPhi, 1, 1e-2, 0).is_err());
        assert!(estimate_block_smoothness(&pool, &c, &cfg, ProbeBlock::WW, 0, 1e-2, 0).is_err());
        assert!(estimate_block_smoothness(&pool, &c, &cfg, ProbeBlock::WW, 1, 0.0, 0).is_err());
    }

    #[test]
    fn bound_requires_theorem_stepsize() {
        let k = FamilyConstants {
            mu: 1.0,
            smoothness_l: 2.0,
            lipschitz_m: Some(5.0),
            rho: 0.0,
            tau: 0.0,
        };
        assert!(strongly_convex_bound(&k, 0.1, 3, ProbeBlock::WW).is_none());
        let b = strongly_convex_bound(&k, 0.25, 2, ProbeBlock::WW).unwrap();
        assert!((b - 0.75f64.powi(3) * 2.0).abs() < 1e-15);
        let pp = strongly_convex_bound(&k, 0.25, 2, ProbeBlock::PhiPhi).unwrap();
        assert!((pp - (2.0 + 4.0) * 5.0).abs() < 1e-12);
    }

    #[test]
    fn fits() {
        let s: Vec<(usize, f64)> = (1..=5).map(|n| (n, 3.0 * 0.5f64.powi(n as i32))).collect();
        assert!((decay_factor(&s) - 0.5).abs() < 1e-12);
        let lin = [(1, 2.0), (2, 4.0), (3, 6.0)];
        assert!((linear_slope(&lin) - 2.0).abs() < 1e-12);
    }
}
