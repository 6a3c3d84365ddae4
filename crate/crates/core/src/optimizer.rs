//! Outer loop: mini-batch SGD on `(w, φ)` through exact meta-gradients, and
//! the MAML baseline where every parameter passes through the inner loop.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_loop::{run_inner_loop, InnerLoopConfig};
use crate::meta_gradient::meta_gradient;
use crate::ops::OpCount;
use crate::params::{OperatingRegion, SplitParameters};
use crate::task_model::{JointView, SplitObjective, TaskFamilySpec, TaskInstance, TaskSampler, TRAIN_STREAM};

/// Column order of [`RunRecord::to_csv`].
pub const RUN_CSV_HEADER: &str =
    "iter,grad_w_sq,grad_phi_sq,pop_grad_w_sq,pop_grad_phi_sq,grad_entries,second_order_entries,elapsed_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeRule {
    /// `beta_w` and `beta_phi` as given.
    #[default]
    Manual,
    /// `beta_w = rule_scale · (1 − μ²/L²)^(−N/2)`, `beta_phi = rule_scale_phi`.
    TheoremStronglyConvex,
    /// `beta_w = beta_phi = rule_scale / N`.
    TheoremNonconvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    #[serde(default)]
    pub beta_w: f64,
    #[serde(default)]
    pub beta_phi: f64,
    pub batch_size: usize,
    pub max_outer_iters: usize,
    pub inner: InnerLoopConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stepsize_rule: StepsizeRule,
    #[serde(default = "default_scale")]
    pub rule_scale: f64,
    /// `beta_phi` under [`StepsizeRule::TheoremStronglyConvex`]; defaults to
    /// `rule_scale`.
    #[serde(default)]
    pub rule_scale_phi: Option<f64>,
    /// Population norms are evaluated every `eval_interval` iterations.
    #[serde(default = "default_interval")]
    pub eval_interval: usize,
    /// Stop once both population squared norms fall below this.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_scale() -> f64 {
    1.0
}

fn default_interval() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stepsizes {
    pub beta_w: f64,
    pub beta_phi: f64,
}

impl OuterConfig {
    pub fn manual(
        beta_w: f64,
        beta_phi: f64,
        batch_size: usize,
        max_outer_iters: usize,
        inner: InnerLoopConfig,
    ) -> Self {
        OuterConfig {
            beta_w,
            beta_phi,
            batch_size,
            max_outer_iters,
            inner,
            seed: 0,
            stepsize_rule: StepsizeRule::Manual,
            rule_scale: 1.0,
            rule_scale_phi: None,
            eval_interval: 1,
            epsilon: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.inner.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1".into());
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return bad(format!("epsilon must be positive, got {eps}"));
            }
        }
        match self.stepsize_rule {
            StepsizeRule::Manual => {
                for (name, b) in [("beta_w", self.beta_w), ("beta_phi", self.beta_phi)] {
                    if !(b.is_finite() && b > 0.0) {
                        return bad(format!("{name} must be positive, got {b}"));
                    }
                }
            }
            StepsizeRule::TheoremStronglyConvex | StepsizeRule::TheoremNonconvex => {
                let scales = [Some(self.rule_scale), self.rule_scale_phi];
                for s in scales.into_iter().flatten() {
                    if !(s.is_finite() && s > 0.0) {
                        return bad(format!("rule_scale must be positive, got {s}"));
                    }
                }
                if self.stepsize_rule == StepsizeRule::TheoremNonconvex && self.inner.num_steps == 0 {
                    return bad("the nonconvex stepsize rule needs num_steps >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Outer stepsizes after applying the rule; `spec` supplies `μ` and `L`.
    pub fn stepsizes(&self, spec: Option<&TaskFamilySpec>) -> Result<Stepsizes> {
        self.validate()?;
        let n = self.inner.num_steps as f64;
        match self.stepsize_rule {
            StepsizeRule::Manual => Ok(Stepsizes {
                beta_w: self.beta_w,
                beta_phi: self.beta_phi,
            }),
            StepsizeRule::TheoremNonconvex => Ok(Stepsizes {
                beta_w: self.rule_scale / n,
                beta_phi: self.rule_scale / n,
            }),
            StepsizeRule::TheoremStronglyConvex => {
                let spec = spec.ok_or_else(|| {
                    Error::Config("the strongly convex stepsize rule needs the family's mu and smoothness_L".into())
                })?;
                let (mu, l) = (spec.mu, spec.smoothness_l);
                if !(mu > 0.0) {
                    return Err(Error::Config("the strongly convex stepsize rule needs mu > 0".into()));
                }
                let kappa = 1.0 - (mu * mu) / (l * l);
                Ok(Stepsizes {
                    beta_w: self.rule_scale * kappa.powf(-n / 2.0),
                    beta_phi: self.rule_scale_phi.unwrap_or(self.rule_scale),
                })
            }
        }
    }
}

/// Where training tasks come from.
#[derive(Debug, Clone, Copy)]
pub enum TaskSource<'a> {
    /// Fresh i.i.d. draws from the family's training stream.
    Family(&'a TaskFamilySpec),
    /// A frozen pool. A batch at least as large as the pool uses every task
    /// in order; smaller batches are drawn with replacement.
    Pool {
        tasks: &'a [TaskInstance],
        spec: Option<&'a TaskFamilySpec>,
    },
}

impl<'a> TaskSource<'a> {
    pub fn spec(&self) -> Option<&'a TaskFamilySpec> {
        match *self {
            TaskSource::Family(spec) => Some(spec),
            TaskSource::Pool { spec, .. } => spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMethod {
    Anil,
    Maml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub iter: usize,
    pub grad_w_sq: f64,
    pub grad_phi_sq: f64,
    pub pop_grad_w_sq: Option<f64>,
    pub pop_grad_phi_sq: Option<f64>,
    /// Cumulative through this iteration's batch.
    pub ops: OpCount,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Converged { iter: usize },
    Diverged { iter: usize, detail: String },
    LeftOperatingRegion { iter: usize, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: MetaMethod,
    pub rows: Vec<RunRow>,
    pub final_params: SplitParameters,
    pub termination: Termination,
    pub stepsizes: Stepsizes,
}

impl RunRecord {
    pub fn total_ops(&self) -> OpCount {
        self.rows.last().map(|r| r.ops).unwrap_or_default()
    }

    /// First row whose population norms are both below `epsilon`.
    pub fn first_below(&self, epsilon: f64) -> Option<&RunRow> {
        self.rows.iter().find(|r| match (r.pop_grad_w_sq, r.pop_grad_phi_sq) {
            (Some(w), Some(phi)) => w < epsilon && phi < epsilon,
            _ => false,
        })
    }

    pub fn last_population(&self) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| Some((r.pop_grad_w_sq?, r.pop_grad_phi_sq?)))
    }

    /// CSV under [`RUN_CSV_HEADER`]. Wall time is left empty unless
    /// `wall_time` is set, so that the file is reproducible byte for byte.
    pub fn to_csv(&self, wall_time: bool) -> String {
        let mut out = String::from(RUN_CSV_HEADER);
        out.push('\n');
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let elapsed = if wall_time {
                r.elapsed_ms.to_string()
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                r.grad_w_sq,
                r.grad_phi_sq,
                opt(r.pop_grad_w_sq),
                opt(r.pop_grad_phi_sq),
                r.ops.gradient_entries(),
                r.ops.second_order_entries(),
                elapsed
            );
        }
        out
    }
}

/// Training seed derived from the family seed and the run seed.
pub fn training_seed(family_seed: u64, run_seed: u64) -> u64 {
    splitmix64(family_seed ^ splitmix64(run_seed))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

enum Batches<'a> {
    Fresh(TaskSampler),
    Pool { tasks: &'a [TaskInstance], rng: ChaCha8Rng },
}

impl Batches<'_> {
    fn next_batch(&mut self, size: usize) -> Result<Vec<std::borrow::Cow<'_, TaskInstance>>> {
        use std::borrow::Cow;
        match self {
            Batches::Fresh(sampler) => (0..size).map(|_| sampler.next_task().map(Cow::Owned)).collect(),
            Batches::Pool { tasks, rng } => {
                if size >= tasks.len() {
                    Ok(tasks.iter().map(Cow::Borrowed).collect())
                } else {
                    Ok((0..size)
                        .map(|_| Cow::Borrowed(&tasks[rng.random_range(0..tasks.len())]))
                        .collect())
                }
            }
        }
    }
}

/// Mean meta-gradient over `tasks`, split back into `(w, φ)` blocks for
/// either method, plus the summed inner-loop and meta-gradient cost.
fn mean_meta_gradient<'t, I>(
    tasks: I,
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
    method: MetaMethod,
) -> Result<(DVector<f64>, DVector<f64>, OpCount)>
where
    I: IndexedParallelIterator<Item = &'t TaskInstance>,
{
    let per_task: Vec<Result<(DVector<f64>, DVector<f64>, OpCount)>> = tasks
        .map(|task| match method {
            MetaMethod::Anil => one_task(task, p, cfg),
            MetaMethod::Maml => {
                let view = JointView { task };
                let z = SplitParameters {
                    w: p.joint(),
                    phi: DVector::zeros(0),
                };
                let (gz, _, ops) = one_task(&view, &z, cfg)?;
                let split = SplitParameters::from_joint(&gz, p.n_w());
                Ok((split.w, split.phi, ops))
            }
        })
        .collect();
    let count = per_task.len();
    let mut gw = DVector::zeros(p.n_w());
    let mut gphi = DVector::zeros(p.n_phi());
    let mut ops = OpCount::ZERO;
    for r in per_task {
        let (a, b, c) = r?;
        gw += a;
        gphi += b;
        ops += c;
    }
    let scale = 1.0 / count as f64;
    Ok((gw * scale, gphi * scale, ops))
}

fn one_task<T: SplitObjective + ?Sized>(
    task: &T,
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
) -> Result<(DVector<f64>, DVector<f64>, OpCount)> {
    let trace = run_inner_loop(task, p, cfg)?;
    let g = meta_gradient(task, &trace)?;
    if !g.is_finite() {
        return Err(Error::Diverged {
            task_id: task.task_id(),
            step: cfg.num_steps,
        });
    }
    Ok((g.grad_w, g.grad_phi, trace.ops + g.ops))
}

/// Pool-averaged meta-gradient blocks and their total cost.
pub fn population_meta_gradient(
    pool: &[TaskInstance],
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
) -> Result<(DVector<f64>, DVector<f64>, OpCount)> {
    population_gradient(pool, p, cfg, MetaMethod::Anil)
}

fn population_gradient(
    pool: &[TaskInstance],
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
    method: MetaMethod,
) -> Result<(DVector<f64>, DVector<f64>, OpCount)> {
    if pool.is_empty() {
        return Err(Error::Config("evaluation pool is empty".into()));
    }
    for t in pool {
        p.check_dims(t.n_w(), t.n_phi())?;
    }
    mean_meta_gradient(pool.par_iter(), p, cfg, method)
}

/// Squared norms of the pool-averaged `(∂/∂w, ∂/∂φ)` meta-gradient.
pub fn population_meta_grad_norms(
    pool: &[TaskInstance],
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
) -> Result<(f64, f64)> {
    let (gw, gphi, _) = population_meta_gradient(pool, p, cfg)?;
    Ok((gw.norm_squared(), gphi.norm_squared()))
}

/// ANIL: only `w` is adapted in the inner loop.
pub fn anil_run(
    source: TaskSource<'_>,
    cfg: &OuterConfig,
    init: &SplitParameters,
    eval_pool: &[TaskInstance],
) -> Result<RunRecord> {
    outer_loop(source, cfg, init, eval_pool, MetaMethod::Anil)
}

/// MAML baseline: the inner loop adapts `z = (w, φ)`. `init_z` is given in
/// split form; the run reports the `z`-gradient in the same two blocks and
/// steps all of `z` with `beta_w`.
pub fn maml_run(
    source: TaskSource<'_>,
    cfg: &OuterConfig,
    init_z: &SplitParameters,
    eval_pool: &[TaskInstance],
) -> Result<RunRecord> {
    outer_loop(source, cfg, init_z, eval_pool, MetaMethod::Maml)
}

fn outer_loop(
    source: TaskSource<'_>,
    cfg: &OuterConfig,
    init: &SplitParameters,
    eval_pool: &[TaskInstance],
    method: MetaMethod,
) -> Result<RunRecord> {
    let stepsizes = cfg.stepsizes(source.spec())?;
    init.check_finite()?;
    let mut batches = match source {
        TaskSource::Family(spec) => {
            init.check_dims(spec.n_w, spec.n_phi)?;
            Batches::Fresh(TaskSampler::with_seed(
                spec,
                training_seed(spec.seed, cfg.seed),
                TRAIN_STREAM,
            )?)
        }
        TaskSource::Pool { tasks, .. } => {
            if tasks.is_empty() {
                return Err(Error::Config("training pool is empty".into()));
            }
            for t in tasks {
                init.check_dims(t.n_w(), t.n_phi())?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(TRAIN_STREAM);
            Batches::Pool { tasks, rng }
        }
    };
    if eval_pool.is_empty() {
        return Err(Error::Config("evaluation pool is empty".into()));
    }
    for t in eval_pool {
        init.check_dims(t.n_w(), t.n_phi())?;
    }
    let region: Option<OperatingRegion> = source.spec().and_then(|s| s.operating_region(init));
    let beta_phi = match method {
        MetaMethod::Anil => stepsizes.beta_phi,
        MetaMethod::Maml => stepsizes.beta_w,
    };

    let start = Instant::now();
    let mut p = init.clone();
    let mut cumulative = OpCount::ZERO;
    let mut rows = Vec::with_capacity(cfg.max_outer_iters);
    let mut termination = Termination::Completed;

    for k in 0..cfg.max_outer_iters {
        let batch = batches.next_batch(cfg.batch_size)?;
        let step = mean_meta_gradient(batch.par_iter().map(|c| c.as_ref()), &p, &cfg.inner, method);
        let (gw, gphi, ops) = match step {
            Ok(v) => v,
            Err(e @ Error::Diverged { .. }) => {
                termination = Termination::Diverged {
                    iter: k,
                    detail: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        cumulative += ops;
        let (grad_w_sq, grad_phi_sq) = (gw.norm_squared(), gphi.norm_squared());
        if !(grad_w_sq.is_finite() && grad_phi_sq.is_finite()) {
            termination = Termination::Diverged {
                iter: k,
                detail: "batch meta-gradient overflowed".into(),
            };
            break;
        }

        let (pop_w, pop_phi) = if k % cfg.eval_interval == 0 {
            match population_gradient(eval_pool, &p, &cfg.inner, method) {
                Ok((a, b, _)) if a.norm_squared().is_finite() && b.norm_squared().is_finite() => {
                    (Some(a.norm_squared()), Some(b.norm_squared()))
                }
                Ok(_) => {
                    termination = Termination::Diverged {
                        iter: k,
                        detail: "population meta-gradient overflowed".into(),
                    };
                    break;
                }
                Err(e @ Error::Diverged { .. }) => {
                    termination = Termination::Diverged {
                        iter: k,
                        detail: e.to_string(),
                    };
                    break;
                }
                Err(e) => return Err(e),
            }
        } else {
            (None, None)
        };
        rows.push(RunRow {
            iter: k,
            grad_w_sq,
            grad_phi_sq,
            pop_grad_w_sq: pop_w,
            pop_grad_phi_sq: pop_phi,
            ops: cumulative,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        if let (Some(eps), Some(a), Some(b)) = (cfg.epsilon, pop_w, pop_phi) {
            if a < eps && b < eps {
                termination = Termination::Converged { iter: k };
                break;
            }
        }

        p.w -= gw * stepsizes.beta_w;
        p.phi -= gphi * beta_phi;
        if p.check_finite().is_err() {
            termination = Termination::Diverged {
                iter: k,
                detail: "outer update produced a non-finite parameter".into(),
            };
            break;
        }
        if let Some(region) = &region {
            if !region.contains(&p) {
                termination = Termination::LeftOperatingRegion {
                    iter: k,
                    distance: p.distance(&region.center),
                };
                break;
            }
        }
    }

    Ok(RunRecord {
        method,
        rows,
        final_params: p,
        termination,
        stepsizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::QuadraticLoss;

    fn inner(alpha: f64, n: usize) -> InnerLoopConfig {
        InnerLoopConfig::new(alpha, n).unwrap()
    }

    fn task(id: u64, inner: QuadraticLoss, outer: QuadraticLoss) -> TaskInstance {
        TaskInstance::new(id, inner, outer).unwrap()
    }

    #[test]
    fn zero_outer_gradient_leaves_parameters() {
        let pool = vec![task(
            0,
            QuadraticLoss::scalar(1.0, 0.5, 0.2, 1.0, 0.0),
            QuadraticLoss::zero(1, 1),
        )];
        let cfg = OuterConfig::manual(0.1, 0.1, 1, 7, inner(0.3, 2));
        let init = SplitParameters::from_slices(&[0.4], &[-0.3]).unwrap();
        let rec = anil_run(
            TaskSource::Pool {
                tasks: &pool,
                spec: None,
            },
            &cfg,
            &init,
            &pool,
        )
        .unwrap();
        assert_eq!(rec.final_params, init);
        assert_eq!(rec.rows.len(), 7);
        assert_eq!(rec.termination, Termination::Completed);
    }

    #[test]
    fn decoupled_scalar_population_norm_decreases() {
        let pool = vec![task(
            0,
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0),
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 1.0, 0.0),
        )];
        let cfg = OuterConfig::manual(0.5, 0.5, 1, 20, inner(0.5, 1));
        let init = SplitParameters::from_slices(&[2.0], &[1.0]).unwrap();
        let rec = anil_run(
            TaskSource::Pool {
                tasks: &pool,
                spec: None,
            },
            &cfg,
            &init,
            &pool,
        )
        .unwrap();
        let norms: Vec<f64> = rec.rows.iter().map(|r| r.pop_grad_w_sq.unwrap()).collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn minimizer_has_vanishing_population_gradient() {
        let pool = vec![task(
            0,
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0),
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 1.0, 0.0),
        )];
        let (gw, gphi) = population_meta_grad_norms(&pool, &SplitParameters::zeros(1, 1), &inner(0.5, 3)).unwrap();
        assert!(gw <= 1e-20 && gphi <= 1e-20);
    }

    #[test]
    fn opposite_offsets_cancel() {
        let a = task(
            0,
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0),
            QuadraticLoss::scalar(1.0, 0.0, 0.7, 0.0, 0.0),
        );
        let b = task(
            1,
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0),
            QuadraticLoss::scalar(1.0, 0.0, -0.7, 0.0, 0.0),
        );
        let (gw, _, _) = population_meta_gradient(&[a, b], &SplitParameters::zeros(1, 1), &inner(0.5, 2)).unwrap();
        assert_eq!(gw[0], 0.0);
    }

    #[test]
    fn single_task_pool_matches_task_gradient() {
        let t = task(
            3,
            QuadraticLoss::scalar(2.0, 0.3, 0.1, 1.0, 0.0),
            QuadraticLoss::scalar(1.0, -0.4, 0.5, 2.0, 0.2),
        );
        let p = SplitParameters::from_slices(&[0.3], &[0.8]).unwrap();
        let cfg = inner(0.2, 3);
        let trace = run_inner_loop(&t, &p, &cfg).unwrap();
        let g = meta_gradient(&t, &trace).unwrap();
        let (nw, nphi) = population_meta_grad_norms(std::slice::from_ref(&t), &p, &cfg).unwrap();
        assert_eq!(nw, g.grad_w.norm_squared());
        assert_eq!(nphi, g.grad_phi.norm_squared());
    }

    #[test]
    fn rules_and_validation() {
        let mut cfg = OuterConfig::manual(0.1, 0.2, 4, 10, inner(0.1, 4));
        assert_eq!(
            cfg.stepsizes(None).unwrap(),
            Stepsizes {
                beta_w: 0.1,
                beta_phi: 0.2
            }
        );
        cfg.stepsize_rule = StepsizeRule::TheoremNonconvex;
        cfg.rule_scale = 0.8;
        assert_eq!(
            cfg.stepsizes(None).unwrap(),
            Stepsizes {
                beta_w: 0.2,
                beta_phi: 0.2
            }
        );
        cfg.stepsize_rule = StepsizeRule::TheoremStronglyConvex;
        assert!(cfg.stepsizes(None).is_err());
        let spec = TaskFamilySpec::strongly_convex(1.0, 2.0, 2, 1, 0);
        let s = cfg.stepsizes(Some(&spec)).unwrap();
        assert!((s.beta_w - 0.8 / 0.75f64.powi(2)).abs() < 1e-15);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_omits_wall_time_by_default() {
        let pool = vec![task(
            0,
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0),
            QuadraticLoss::scalar(1.0, 0.0, 0.0, 1.0, 0.0),
        )];
        let cfg = OuterConfig::manual(0.5, 0.5, 1, 2, inner(0.5, 1));
        let init = SplitParameters::from_slices(&[1.0], &[0.0]).unwrap();
        let rec = anil_run(
            TaskSource::Pool {
                tasks: &pool,
                spec: None,
            },
            &cfg,
            &init,
            &pool,
        )
        .unwrap();
        let csv = rec.to_csv(false);
        assert!(csv.starts_with(RUN_CSV_HEADER));
        assert!(csv.lines().skip(1).all(|l| l.ends_with(',')));
    }
}
