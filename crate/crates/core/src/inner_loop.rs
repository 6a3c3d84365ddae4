//! N-step gradient descent on the inner loss, with the full iterate trace.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::OpCount;
use crate::params::SplitParameters;
use crate::task_model::SplitObjective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerLoopConfig {
    pub alpha: f64,
    pub num_steps: usize,
}

impl InnerLoopConfig {
    pub fn new(alpha: f64, num_steps: usize) -> Result<Self> {
        let cfg = InnerLoopConfig { alpha, num_steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_finite() && self.alpha > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "inner stepsize alpha must be positive, got {}",
                self.alpha
            )))
        }
    }
}

/// How the inner stepsize is chosen as `N` varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerStepRule {
    /// Same `alpha` for every `N`.
    Fixed { alpha: f64 },
    /// `alpha = mu / L²`.
    StronglyConvex,
    /// `alpha = c_alpha / N`; `c_alpha` defaults to `1 / (2L)`.
    InverseN { c_alpha: Option<f64> },
}

impl InnerStepRule {
    pub fn alpha(&self, mu: f64, smoothness_l: f64, num_steps: usize) -> f64 {
        match *self {
            InnerStepRule::Fixed { alpha } => alpha,
            InnerStepRule::StronglyConvex => mu / (smoothness_l * smoothness_l),
            InnerStepRule::InverseN { c_alpha } => {
                let c = c_alpha.unwrap_or(1.0 / (2.0 * smoothness_l));
                c / num_steps.max(1) as f64
            }
        }
    }

    pub fn config(&self, mu: f64, smoothness_l: f64, num_steps: usize) -> Result<InnerLoopConfig> {
        InnerLoopConfig::new(self.alpha(mu, smoothness_l, num_steps), num_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopTrace {
    /// `[w_0, ..., w_N]`.
    #[serde(with = "iterates")]
    pub iterates: Vec<DVector<f64>>,
    pub config: InnerLoopConfig,
    pub task_id: u64,
    #[serde(with = "crate::params::vector")]
    pub phi_snapshot: DVector<f64>,
    pub ops: OpCount,
}

impl InnerLoopTrace {
    pub fn final_iterate(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace holds at least w_0")
    }

    /// Confirms the trace was produced for `task` (id and dimensions).
    pub fn check_against<T: SplitObjective + ?Sized>(&self, task: &T) -> Result<()> {
        if self.task_id != task.task_id() {
            return Err(Error::TraceMismatch(format!(
                "trace task id {} != task id {}",
                self.task_id,
                task.task_id()
            )));
        }
        if self.iterates.len() != self.config.num_steps + 1 {
            return Err(Error::TraceMismatch(format!(
                "trace holds {} iterates for N = {}",
                self.iterates.len(),
                self.config.num_steps
            )));
        }
        if self.iterates.iter().any(|w| w.len() != task.n_w()) || self.phi_snapshot.len() != task.n_phi() {
            return Err(Error::TraceMismatch("parameter dimensions differ from the task".into()));
        }
        Ok(())
    }

    /// Largest deviation from the recurrence `w_{m+1} = w_m − α∇_w L_S(w_m, φ)`.
    /// Exactly zero for a trace produced by [`run_inner_loop`].
    pub fn replay_residual<T: SplitObjective + ?Sized>(&self, task: &T) -> f64 {
        self.iterates
            .windows(2)
            .map(|pair| {
                let g = task.inner_grad_w(&pair[0], &self.phi_snapshot);
                (&pair[0] - g * self.config.alpha - &pair[1]).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Runs `N` steps of gradient descent in `w` at fixed `phi`.
pub fn run_inner_loop<T: SplitObjective + ?Sized>(
    task: &T,
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
) -> Result<InnerLoopTrace> {
    cfg.validate()?;
    p.check_dims(task.n_w(), task.n_phi())?;
    p.check_finite()?;

    let mut iterates = Vec::with_capacity(cfg.num_steps + 1);
    iterates.push(p.w.clone());
    for step in 0..cfg.num_steps {
        let w = &iterates[step];
        let g = task.inner_grad_w(w, &p.phi);
        let next = w - g * cfg.alpha;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                task_id: task.task_id(),
                step: step + 1,
            });
        }
        iterates.push(next);
    }
    Ok(InnerLoopTrace {
        iterates,
        config: *cfg,
        task_id: task.task_id(),
        phi_snapshot: p.phi.clone(),
        ops: OpCount::grad_w(task.n_w()) * cfg.num_steps as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionStep {
    pub t: usize,
    pub measured: f64,
    pub bound: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub task_id: u64,
    /// `1 − 2αμ + α²L²`.
    pub rate_sq: f64,
    pub steps: Vec<ContractionStep>,
}

impl ContractionReport {
    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| s.violated).count()
    }
}

/// Relative slack on the bound comparison, covering round-off only.
const CONTRACTION_RTOL: f64 = 1e-12;

/// Distance between two inner trajectories against the iterate-contraction
/// bound
/// `‖w_t(w₁,φ₁) − w_t(w₂,φ₂)‖ ≤ q^{t/2}‖w₁ − w₂‖ + αL‖φ₁ − φ₂‖ / (1 − √q)`,
/// `q = 1 − 2αμ + α²L²`. Valid for a `mu`-strongly convex inner loss.
pub fn contraction_check<T: SplitObjective + ?Sized>(
    task: &T,
    p1: &SplitParameters,
    p2: &SplitParameters,
    cfg: &InnerLoopConfig,
    mu: f64,
    smoothness_l: f64,
) -> Result<ContractionReport> {
    if !(mu > 0.0 && mu <= smoothness_l) {
        return Err(Error::Config(format!(
            "contraction check needs a strongly convex family (0 < mu <= L), got mu = {mu}, L = {smoothness_l}"
        )));
    }
    let alpha = cfg.alpha;
    let rate_sq = 1.0 - 2.0 * alpha * mu + alpha * alpha * smoothness_l * smoothness_l;
    if !(rate_sq > 0.0) {
        return Err(Error::Config(format!(
            "stepsize violates 1 - 2*alpha*mu + alpha^2*L^2 > 0 (value {rate_sq})"
        )));
    }
    let a = run_inner_loop(task, p1, cfg)?;
    let b = run_inner_loop(task, p2, cfg)?;
    let dw = (&p1.w - &p2.w).norm();
    let dphi = (&p1.phi - &p2.phi).norm();
    let drift = if dphi == 0.0 {
        0.0
    } else if rate_sq < 1.0 {
        alpha * smoothness_l * dphi / (1.0 - rate_sq.sqrt())
    } else {
        f64::INFINITY
    };

    let steps = a
        .iterates
        .iter()
        .zip(&b.iterates)
        .enumerate()
        .map(|(t, (wa, wb))| {
            let measured = (wa - wb).norm();
            let bound = rate_sq.powf(t as f64 / 2.0) * dw + drift;
            ContractionStep {
                t,
                measured,
                bound,
                violated: measured > bound * (1.0 + CONTRACTION_RTOL),
            }
        })
        .collect();
    Ok(ContractionReport {
        task_id: task.task_id(),
        rate_sq,
        steps,
    })
}

mod iterates {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|w| w.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows.into_iter().map(DVector::from_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::{QuadraticLoss, TaskInstance};

    fn scalar_task(inner: QuadraticLoss) -> TaskInstance {
        TaskInstance::new(0, inner, QuadraticLoss::zero(1, 1)).unwrap()
    }

    fn trace_values(t: &InnerLoopTrace) -> Vec<f64> {
        t.iterates.iter().map(|w| w[0]).collect()
    }

    #[test]
    fn exact_minimization_in_one_step() {
        let task = scalar_task(QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0));
        let p = SplitParameters::from_slices(&[2.0], &[0.0]).unwrap();
        let t = run_inner_loop(&task, &p, &InnerLoopConfig::new(1.0, 1).unwrap()).unwrap();
        assert_eq!(trace_values(&t), vec![2.0, 0.0]);
    }

    #[test]
    fn hand_iterated_recurrence() {
        // L_S = ½(w − φ)², w ← w − 0.5(w − 1).
        let task = scalar_task(QuadraticLoss::scalar(1.0, -1.0, 0.0, 1.0, 0.0));
        let p = SplitParameters::from_slices(&[0.0], &[1.0]).unwrap();
        let t = run_inner_loop(&task, &p, &InnerLoopConfig::new(0.5, 2).unwrap()).unwrap();
        assert_eq!(trace_values(&t), vec![0.0, 0.5, 0.75]);
        assert_eq!(t.replay_residual(&task), 0.0);
        assert_eq!(t.phi_snapshot, p.phi);
        assert_eq!(t.ops.grad_w_entries, 2);
    }

    #[test]
    fn zero_steps() {
        let task = scalar_task(QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0));
        let p = SplitParameters::from_slices(&[3.0], &[0.0]).unwrap();
        let t = run_inner_loop(&task, &p, &InnerLoopConfig::new(0.1, 0).unwrap()).unwrap();
        assert_eq!(trace_values(&t), vec![3.0]);
        assert_eq!(t.ops, OpCount::ZERO);
    }

    #[test]
    fn divergence_carries_step_index() {
        // |1 − αa| = 1e200 per step: overflows on the second step.
        let task = scalar_task(QuadraticLoss::scalar(1e200, 0.0, 0.0, 0.0, 0.0));
        let p = SplitParameters::from_slices(&[1e200], &[0.0]).unwrap();
        let err = run_inner_loop(&task, &p, &InnerLoopConfig::new(1.0, 5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let task = scalar_task(QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0));
        let p = SplitParameters::zeros(1, 1);
        assert!(InnerLoopConfig::new(0.0, 1).is_err());
        assert!(run_inner_loop(
            &task,
            &SplitParameters::zeros(2, 1),
            &InnerLoopConfig::new(0.1, 1).unwrap()
        )
        .is_err());
        let bad = SplitParameters {
            w: DVector::from_element(1, f64::NAN),
            phi: DVector::zeros(1),
        };
        assert!(run_inner_loop(&task, &bad, &InnerLoopConfig::new(0.1, 1).unwrap()).is_err());
        let t = run_inner_loop(&task, &p, &InnerLoopConfig::new(0.1, 1).unwrap()).unwrap();
        let other = TaskInstance::new(9, QuadraticLoss::zero(1, 1), QuadraticLoss::zero(1, 1)).unwrap();
        assert!(t.check_against(&other).is_err());
    }

    #[test]
    fn contraction_identical_points() {
        let task = scalar_task(QuadraticLoss::scalar(1.0, 0.3, 0.1, 1.0, 0.0));
        let p = SplitParameters::from_slices(&[0.4], &[0.2]).unwrap();
        let r = contraction_check(&task, &p, &p, &InnerLoopConfig::new(0.5, 6).unwrap(), 1.0, 1.0).unwrap();
        assert!(r.steps.iter().all(|s| s.measured == 0.0 && !s.violated));
    }

    #[test]
    fn contraction_scalar_equality_case() {
        let task = scalar_task(QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0));
        let p1 = SplitParameters::from_slices(&[1.0], &[0.0]).unwrap();
        let p2 = SplitParameters::from_slices(&[0.0], &[0.0]).unwrap();
        let r = contraction_check(&task, &p1, &p2, &InnerLoopConfig::new(0.5, 10).unwrap(), 1.0, 1.0).unwrap();
        assert_eq!(r.rate_sq, 0.25);
        for s in &r.steps {
            let expected = 0.5f64.powi(s.t as i32);
            assert!((s.measured - expected).abs() <= 1e-12);
            assert!((s.bound - expected).abs() <= 1e-12);
            assert!(!s.violated);
        }
    }

    #[test]
    fn contraction_rejects_bad_stepsize() {
        let task = scalar_task(QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0));
        let p = SplitParameters::zeros(1, 1);
        // 1 − 2·1·1 + 1·1 = 0.
        let err = contraction_check(&task, &p, &p, &InnerLoopConfig::new(1.0, 2).unwrap(), 1.0, 1.0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn step_rules() {
        assert_eq!(InnerStepRule::StronglyConvex.alpha(1.0, 2.0, 3), 0.25);
        assert_eq!(InnerStepRule::InverseN { c_alpha: None }.alpha(0.0, 2.0, 5), 0.05);
        assert_eq!(InnerStepRule::InverseN { c_alpha: Some(1.0) }.alpha(0.0, 2.0, 4), 0.25);
        assert_eq!(InnerStepRule::Fixed { alpha: 0.3 }.alpha(0.0, 2.0, 40), 0.3);
    }
}
