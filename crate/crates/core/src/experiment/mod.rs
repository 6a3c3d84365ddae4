//! Experiment suite: one JSON config in, CSVs + manifest + summary out.

mod config;
mod output;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    default_inner_rule, parse_config, ContractionConfig, ExperimentConfig, ExperimentKind, GradCheckConfig, InitSpec,
    SweepCheck, CONFIG_FORMAT_VERSION,
};
pub use output::{replay, write_outcome, Manifest, ReplayReport, MANIFEST_FILE, RESULTS_FILE, SUMMARY_FILE};

use crate::error::{Error, Result};
use crate::inner_loop::{contraction_check, run_inner_loop};
use crate::meta_gradient::{fd_meta_grad, meta_gradient, relative_error};
use crate::ops::OpCount;
use crate::optimizer::{anil_run, maml_run, training_seed, RunRecord, Stepsizes, TaskSource, Termination};
use crate::params::SplitParameters;
use crate::probes::smoothness_scaling_report;
use crate::task_model::{content_hash, sample_eval_pool, sample_task_family, Geometry, TaskFamilySpec};

/// Gradient-check tolerance for a geometry.
pub fn gradcheck_tolerance(geometry: Geometry) -> f64 {
    match geometry {
        Geometry::StronglyConvex => 1e-6,
        Geometry::Nonconvex => 1e-5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Pass,
    TrendFailure,
    Divergence,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Pass => 0,
            ExitStatus::TrendFailure => 1,
            ExitStatus::Divergence => 3,
        }
    }
}

/// Process exit code for an error that stopped an experiment.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFinite(_) | Error::Oracle(_) => 3,
        _ => 2,
    }
}

/// Everything an experiment produced, before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub status: ExitStatus,
    pub results_csv: String,
    pub summary: String,
    /// Additional files, relative to the output directory.
    pub extra_files: Vec<(String, String)>,
    pub pool_hash: Option<String>,
    pub training_seed: Option<u64>,
    pub sweep: Option<Vec<SweepPoint>>,
}

/// Runs the configured experiment and writes its artifacts to
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let cfg = cfg.clone().with_defaults();
    cfg.validate()?;
    let outcome = evaluate(&cfg)?;
    write_outcome(&cfg, &outcome)?;
    Ok(outcome)
}

/// Runs the configured experiment without touching the filesystem.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let cfg = cfg.clone().with_defaults();
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::GradCheck => gradcheck(&cfg),
        ExperimentKind::Contraction => contraction(&cfg),
        ExperimentKind::SmoothnessScaling => smoothness(&cfg),
        ExperimentKind::ConvergenceSweep => sweep(&cfg),
        ExperimentKind::ComplexityCompare => compare(&cfg),
    }
}

fn random_point(rng: &mut ChaCha8Rng, n_w: usize, n_phi: usize, scale: f64) -> Result<SplitParameters> {
    let normal = Normal::new(0.0, scale).map_err(|e| Error::Config(format!("point_scale: {e}")))?;
    let w: Vec<f64> = (0..n_w).map(|_| normal.sample(rng)).collect();
    let phi: Vec<f64> = (0..n_phi).map(|_| normal.sample(rng)).collect();
    SplitParameters::from_slices(&w, &phi)
}

fn geometry_name(g: Geometry) -> &'static str {
    match g {
        Geometry::StronglyConvex => "strongly_convex",
        Geometry::Nonconvex => "nonconvex",
    }
}

fn gradcheck(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let g = cfg.gradcheck.clone().unwrap_or_default();
    let mut csv = String::from("geometry,N,alpha,tasks,max_rel_err_w,max_rel_err_phi,tolerance,pass\n");
    let mut summary = String::from("meta-gradient check against finite differences\n");
    let mut all_pass = true;
    let families: Vec<(&TaskFamilySpec, _)> = std::iter::once((&cfg.family, cfg.inner_rule()))
        .chain(
            cfg.additional_families
                .iter()
                .map(|f| (f, default_inner_rule(f.geometry))),
        )
        .collect();
    let mut hashes = Vec::new();
    for (spec, rule) in families {
        let tasks = sample_task_family(spec, g.num_tasks)?;
        hashes.push(content_hash(&tasks)?);
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let points = tasks
            .iter()
            .map(|_| random_point(&mut rng, spec.n_w, spec.n_phi, g.point_scale))
            .collect::<Result<Vec<_>>>()?;
        let tol = g.tolerance.unwrap_or_else(|| gradcheck_tolerance(spec.geometry));
        for &n in &g.n_values {
            let inner = rule.config(spec.mu, spec.smoothness_l, n)?;
            let errs: Vec<Result<(f64, f64)>> = tasks
                .par_iter()
                .zip(points.par_iter())
                .map(|(task, p)| {
                    let trace = run_inner_loop(task, p, &inner)?;
                    let exact = meta_gradient(task, &trace)?;
                    let fd = fd_meta_grad(task, p, &inner, g.fd_step)?;
                    Ok((
                        relative_error(&exact.grad_w, &fd.grad_w),
                        relative_error(&exact.grad_phi, &fd.grad_phi),
                    ))
                })
                .collect();
            let (mut ew, mut ephi) = (0.0f64, 0.0f64);
            for e in errs {
                let (a, b) = e?;
                ew = ew.max(a);
                ephi = ephi.max(b);
            }
            let pass = ew <= tol && ephi <= tol;
            all_pass &= pass;
            let geo = geometry_name(spec.geometry);
            let _ = writeln!(
                csv,
                "{geo},{n},{},{},{ew},{ephi},{tol},{pass}",
                inner.alpha,
                tasks.len()
            );
            let _ = writeln!(
                summary,
                "  {geo:<15} N={n:<3} max rel err w={ew:.3e} phi={ephi:.3e} tol={tol:.0e} {}",
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(ExperimentOutcome {
        status: if all_pass {
            ExitStatus::Pass
        } else {
            ExitStatus::TrendFailure
        },
        results_csv: csv,
        summary,
        extra_files: Vec::new(),
        pool_hash: Some(hashes.join(",")),
        training_seed: None,
        sweep: None,
    })
}

fn contraction(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let c = cfg.contraction.clone().unwrap_or_default();
    let spec = &cfg.family;
    let tasks = sample_task_family(spec, c.num_tasks)?;
    let inner = cfg.inner_rule().config(spec.mu, spec.smoothness_l, c.num_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut csv = String::from("task_id,t,measured,bound,violated\n");
    let (mut violations, mut worst) = (0usize, 0.0f64);
    for task in &tasks {
        let p1 = random_point(&mut rng, spec.n_w, spec.n_phi, c.point_scale)?;
        let p2 = random_point(&mut rng, spec.n_w, spec.n_phi, c.point_scale)?;
        let report = contraction_check(task, &p1, &p2, &inner, spec.mu, spec.smoothness_l)?;
        violations += report.violations();
        for s in &report.steps {
            if s.bound > 0.0 {
                worst = worst.max(s.measured / s.bound);
            }
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                task.task_id, s.t, s.measured, s.bound, s.violated
            );
        }
    }
    let summary = format!(
        "contraction bound over {} tasks, {} steps, alpha={}\n  violations={violations} max measured/bound={worst:.6}\n",
        tasks.len(),
        c.num_steps,
        inner.alpha
    );
    Ok(ExperimentOutcome {
        status: if violations == 0 {
            ExitStatus::Pass
        } else {
            ExitStatus::TrendFailure
        },
        results_csv: csv,
        summary,
        extra_files: Vec::new(),
        pool_hash: Some(content_hash(&tasks)?),
        training_seed: None,
        sweep: None,
    })
}

fn smoothness(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let probe = cfg.probe.clone().expect("filled by with_defaults");
    let report = smoothness_scaling_report(&cfg.family, &probe, &cfg.n_sweep)?;
    let pool = sample_eval_pool(&cfg.family, probe.pool_size)?;
    Ok(ExperimentOutcome {
        status: if report.passed() {
            ExitStatus::Pass
        } else {
            ExitStatus::TrendFailure
        },
        results_csv: report.to_csv(),
        summary: report.summary(),
        extra_files: Vec::new(),
        pool_hash: Some(content_hash(&pool)?),
        training_seed: None,
        sweep: None,
    })
}

/// How a run ended relative to the ε target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpsilonStatus {
    Reached { iter: usize },
    NotReached,
    Diverged { iter: usize },
}

impl EpsilonStatus {
    fn name(self) -> &'static str {
        match self {
            EpsilonStatus::Reached { .. } => "reached",
            EpsilonStatus::NotReached => "not_reached",
            EpsilonStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_steps: usize,
    pub alpha: f64,
    pub stepsizes: Stepsizes,
    pub status: EpsilonStatus,
    /// Cost of the updates applied before ε was first met.
    pub ops_to_epsilon: Option<OpCount>,
    pub final_population: Option<(f64, f64)>,
}

impl SweepPoint {
    /// Iterations to ε, `+∞` when not reached.
    pub fn iterations(&self) -> f64 {
        match self.status {
            EpsilonStatus::Reached { iter } => iter as f64,
            _ => f64::INFINITY,
        }
    }

    /// Second-order entries to ε, `+∞` when not reached.
    pub fn second_order_ops(&self) -> f64 {
        self.ops_to_epsilon
            .map(|o| o.second_order_entries() as f64)
            .unwrap_or(f64::INFINITY)
    }
}

fn summarize_run(rec: &RunRecord, epsilon: f64) -> (EpsilonStatus, Option<OpCount>) {
    if let Some(row) = rec.first_below(epsilon) {
        let ops = if row.iter == 0 {
            OpCount::ZERO
        } else {
            rec.rows[row.iter - 1].ops
        };
        return (EpsilonStatus::Reached { iter: row.iter }, Some(ops));
    }
    match rec.termination {
        Termination::Diverged { iter, .. } | Termination::LeftOperatingRegion { iter, .. } => {
            (EpsilonStatus::Diverged { iter }, None)
        }
        _ => (EpsilonStatus::NotReached, None),
    }
}

fn status_cells(status: EpsilonStatus, ops: Option<OpCount>) -> (String, String, String) {
    match (status, ops) {
        (EpsilonStatus::Reached { iter }, Some(o)) => (
            iter.to_string(),
            o.gradient_entries().to_string(),
            o.second_order_entries().to_string(),
        ),
        _ => Default::default(),
    }
}

fn sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let spec = &cfg.family;
    let outer_base = cfg.outer.clone().expect("validated");
    let epsilon = cfg.epsilon_target.expect("validated");
    let rule = cfg.inner_rule();
    let pool = sample_eval_pool(spec, cfg.eval_pool_size)?;
    let init = cfg.init.resolve(spec.n_w, spec.n_phi)?;

    let mut points = Vec::new();
    let mut extra = Vec::new();
    for &n in &cfg.n_sweep {
        let mut outer = outer_base.clone();
        outer.inner = rule.config(spec.mu, spec.smoothness_l, n)?;
        outer.epsilon = Some(epsilon);
        let rec = anil_run(TaskSource::Family(spec), &outer, &init, &pool)?;
        let (status, ops) = summarize_run(&rec, epsilon);
        extra.push((format!("runs/N{n}.csv"), rec.to_csv(cfg.record_wall_time)));
        points.push(SweepPoint {
            n_steps: n,
            alpha: outer.inner.alpha,
            stepsizes: rec.stepsizes,
            status,
            ops_to_epsilon: ops,
            final_population: rec.last_population(),
        });
    }

    let mut csv = String::from(
        "N,alpha,beta_w,beta_phi,status,iters_to_epsilon,grad_entries_to_epsilon,\
         second_order_entries_to_epsilon,final_pop_grad_w_sq,final_pop_grad_phi_sq\n",
    );
    let mut summary = format!(
        "convergence sweep ({}), epsilon={epsilon}\n",
        geometry_name(spec.geometry)
    );
    for p in &points {
        let (iters, grads, second) = status_cells(p.status, p.ops_to_epsilon);
        let (fw, fphi) = p
            .final_population
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{iters},{grads},{second},{fw},{fphi}",
            p.n_steps,
            p.alpha,
            p.stepsizes.beta_w,
            p.stepsizes.beta_phi,
            p.status.name()
        );
        let _ = writeln!(
            summary,
            "  N={:<3} {:<11} iters={:<6} second_order_entries={}",
            p.n_steps,
            p.status.name(),
            if iters.is_empty() { "-" } else { &iters },
            if second.is_empty() { "-" } else { &second }
        );
    }
    let mut all_pass = true;
    for check in cfg.sweep_checks() {
        let (pass, detail) = sweep_check(check, &points);
        all_pass &= pass;
        let _ = writeln!(
            summary,
            "  check {:<26} {} ({detail})",
            check.name(),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(ExperimentOutcome {
        status: if all_pass {
            ExitStatus::Pass
        } else {
            ExitStatus::TrendFailure
        },
        results_csv: csv,
        summary,
        extra_files: extra,
        pool_hash: Some(content_hash(&pool)?),
        training_seed: Some(training_seed(spec.seed, outer_base.seed)),
        sweep: Some(points),
    })
}

/// Evaluates one declared sweep trend; returns the verdict and a short
/// description of what was compared.
pub fn sweep_check(check: SweepCheck, points: &[SweepPoint]) -> (bool, String) {
    let iters: Vec<f64> = points.iter().map(SweepPoint::iterations).collect();
    let ops: Vec<f64> = points.iter().map(SweepPoint::second_order_ops).collect();
    match check {
        SweepCheck::IterationsNonIncreasing => {
            let pairs_ok = iters.windows(2).all(|w| w[1] <= w[0] * 1.05);
            let last_reached = iters.last().is_some_and(|x| x.is_finite());
            (pairs_ok && last_reached, format!("iterations {iters:?}"))
        }
        SweepCheck::Saturation => {
            if iters.len() < 3 {
                return (false, "needs at least three N values".into());
            }
            let k = iters.len();
            let first = iters[0] - iters[1];
            let last = iters[k - 2] - iters[k - 1];
            (last < first, format!("first gain {first}, last gain {last}"))
        }
        SweepCheck::InteriorOpsMinimum => {
            let (idx, min) =
                ops.iter().copied().enumerate().fold(
                    (0, f64::INFINITY),
                    |best, (i, v)| if v < best.1 { (i, v) } else { best },
                );
            let n = points.get(idx).map(|p| p.n_steps).unwrap_or_default();
            let pass = min.is_finite() && idx > 0 && idx + 1 < ops.len();
            (pass, format!("minimum at N={n}, entries {ops:?}"))
        }
        SweepCheck::OpsNonDecreasing => {
            let pairs_ok = ops.windows(2).all(|w| w[1] >= w[0]);
            let first_reached = ops.first().is_some_and(|x| x.is_finite());
            (pairs_ok && first_reached, format!("entries {ops:?}"))
        }
        SweepCheck::DivergesAtLargestN => {
            let first = points.first().map(|p| p.status);
            let last = points.last().map(|p| p.status);
            let pass = matches!(first, Some(EpsilonStatus::Reached { .. }))
                && matches!(last, Some(EpsilonStatus::Diverged { .. }));
            (pass, format!("smallest N {first:?}, largest N {last:?}"))
        }
    }
}

/// Expected second-order entries for one outer iteration.
pub fn expected_second_order_per_iter(
    method: crate::optimizer::MetaMethod,
    b: usize,
    n: usize,
    n_w: usize,
    n_phi: usize,
) -> u64 {
    let (b, n, n_w, n_phi) = (b as u64, n as u64, n_w as u64, n_phi as u64);
    match method {
        crate::optimizer::MetaMethod::Anil => b * n * (n_w * n_w + n_w * n_phi),
        crate::optimizer::MetaMethod::Maml => b * n * (n_w + n_phi) * (n_w + n_phi),
    }
}

fn compare(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    use crate::optimizer::MetaMethod;
    let spec = &cfg.family;
    let mut outer = cfg.outer.clone().expect("validated");
    let epsilon = cfg.epsilon_target.expect("validated");
    outer.epsilon = Some(epsilon);
    let pool = sample_eval_pool(spec, cfg.eval_pool_size)?;
    let init = cfg.init.resolve(spec.n_w, spec.n_phi)?;
    let runs = [
        (
            MetaMethod::Anil,
            anil_run(TaskSource::Family(spec), &outer, &init, &pool)?,
        ),
        (
            MetaMethod::Maml,
            maml_run(TaskSource::Family(spec), &outer, &init, &pool)?,
        ),
    ];

    let mut csv = String::from(
        "method,status,iters_to_epsilon,grad_entries_to_epsilon,second_order_entries_to_epsilon,\
         second_order_per_iter,expected_per_iter\n",
    );
    let mut summary = format!(
        "ANIL vs MAML, N={}, B={}, n_w={}, n_phi={}, epsilon={epsilon}\n",
        outer.inner.num_steps, outer.batch_size, spec.n_w, spec.n_phi
    );
    let mut extra = Vec::new();
    let mut counts_ok = true;
    let mut diverged = false;
    let mut to_eps = Vec::new();
    for (method, rec) in &runs {
        let name = match method {
            MetaMethod::Anil => "anil",
            MetaMethod::Maml => "maml",
        };
        let (status, ops) = summarize_run(rec, epsilon);
        diverged |= matches!(rec.termination, Termination::Diverged { .. });
        let per_iter = rec
            .rows
            .first()
            .map(|r| r.ops.second_order_entries())
            .unwrap_or_default();
        let expected =
            expected_second_order_per_iter(*method, outer.batch_size, outer.inner.num_steps, spec.n_w, spec.n_phi);
        counts_ok &= per_iter == expected;
        let (iters, grads, second) = status_cells(status, ops);
        let _ = writeln!(
            csv,
            "{name},{},{iters},{grads},{second},{per_iter},{expected}",
            status.name()
        );
        let _ = writeln!(
            summary,
            "  {name}: {} iters={} second_order_entries_to_epsilon={} per_iter={per_iter} (expected {expected})",
            status.name(),
            if iters.is_empty() { "-" } else { &iters },
            if second.is_empty() { "-" } else { &second }
        );
        extra.push((format!("runs/{name}.csv"), rec.to_csv(cfg.record_wall_time)));
        to_eps.push(ops.map(|o| o.second_order_entries()));
    }
    let cheaper = matches!((to_eps[0], to_eps[1]), (Some(a), Some(m)) if a < m);
    let _ = writeln!(
        summary,
        "  check per_iteration_counts {}\n  check anil_cheaper_to_epsilon {}",
        if counts_ok { "PASS" } else { "FAIL" },
        if cheaper { "PASS" } else { "FAIL" }
    );
    let status = if diverged {
        ExitStatus::Divergence
    } else if counts_ok && cheaper {
        ExitStatus::Pass
    } else {
        ExitStatus::TrendFailure
    };
    Ok(ExperimentOutcome {
        status,
        results_csv: csv,
        summary,
        extra_files: extra,
        pool_hash: Some(content_hash(&pool)?),
        training_seed: Some(training_seed(spec.seed, outer.seed)),
        sweep: None,
    })
}
