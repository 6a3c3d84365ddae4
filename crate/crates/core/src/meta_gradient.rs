//! Exact partial meta-gradients through the unrolled inner loop.
//!
//! With `J_m = I − α∇²_w L_S(w_m, φ)` and `v_N = ∇_w L_D(w_N, φ)`:
//!
//! ```text
//! ∂L_D/∂w = J_0 J_1 ⋯ J_{N−1} v_N
//! ∂L_D/∂φ = −α Σ_m ∇_φ∇_w L_S(w_m, φ) · J_{m+1} ⋯ J_{N−1} v_N + ∇_φ L_D(w_N, φ)
//! ```
//!
//! Both are evaluated by one right-to-left sweep over the trace carrying the
//! running vector `v ← J_m v`; the `N`-fold matrix product is never formed.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_loop::{run_inner_loop, InnerLoopConfig, InnerLoopTrace};
use crate::ops::OpCount;
use crate::params::SplitParameters;
use crate::task_model::SplitObjective;

/// Default central-difference step for [`fd_meta_grad`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaGradient {
    #[serde(with = "crate::params::vector")]
    pub grad_w: DVector<f64>,
    #[serde(with = "crate::params::vector")]
    pub grad_phi: DVector<f64>,
    pub ops: OpCount,
}

impl MetaGradient {
    pub fn is_finite(&self) -> bool {
        self.grad_w.iter().chain(self.grad_phi.iter()).all(|x| x.is_finite())
    }
}

/// Both partial meta-gradients in one reverse sweep: `N` Hessians, `N` mixed
/// partials, one outer gradient per block.
pub fn meta_gradient<T: SplitObjective + ?Sized>(task: &T, trace: &InnerLoopTrace) -> Result<MetaGradient> {
    trace.check_against(task)?;
    let (n_w, n_phi) = (task.n_w(), task.n_phi());
    let alpha = trace.config.alpha;
    let phi = &trace.phi_snapshot;
    let w_n = trace.final_iterate();

    let mut v = task.outer_grad_w(w_n, phi);
    let mut grad_phi = DVector::zeros(n_phi);
    for w_m in trace.iterates[..trace.config.num_steps].iter().rev() {
        let mixed = task.inner_mixed(w_m, phi);
        grad_phi -= (&mixed * &v) * alpha;
        let h = task.inner_hessian_w(w_m, phi);
        v = &v - (&h * &v) * alpha;
    }
    grad_phi += task.outer_grad_phi(w_n, phi);

    let n = trace.config.num_steps as u64;
    let ops =
        (OpCount::hessian(n_w) + OpCount::mixed(n_w, n_phi)) * n + OpCount::grad_w(n_w) + OpCount::grad_phi(n_phi);
    Ok(MetaGradient {
        grad_w: v,
        grad_phi,
        ops,
    })
}

/// `∂L_D(w_N, φ)/∂w` alone, applying the product in its written order.
pub fn meta_grad_w<T: SplitObjective + ?Sized>(task: &T, trace: &InnerLoopTrace) -> Result<(DVector<f64>, OpCount)> {
    trace.check_against(task)?;
    let alpha = trace.config.alpha;
    let phi = &trace.phi_snapshot;
    let mut v = task.outer_grad_w(trace.final_iterate(), phi);
    for w_m in trace.iterates[..trace.config.num_steps].iter().rev() {
        let h = task.inner_hessian_w(w_m, phi);
        v = &v - (&h * &v) * alpha;
    }
    let ops = OpCount::hessian(task.n_w()) * trace.config.num_steps as u64 + OpCount::grad_w(task.n_w());
    Ok((v, ops))
}

/// `∂L_D(w_N, φ)/∂φ` alone.
pub fn meta_grad_phi<T: SplitObjective + ?Sized>(task: &T, trace: &InnerLoopTrace) -> Result<(DVector<f64>, OpCount)> {
    let full = meta_gradient(task, trace)?;
    Ok((full.grad_phi, full.ops))
}

/// Composed objective `L_D(w_N(w, φ), φ)`.
pub fn composed_outer_loss<T: SplitObjective + ?Sized>(
    task: &T,
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
) -> Result<f64> {
    let trace = run_inner_loop(task, p, cfg)?;
    Ok(task.outer_value(trace.final_iterate(), &p.phi))
}

/// Central-difference meta-gradient: perturbs each coordinate, reruns the
/// whole inner loop and evaluates the outer loss. Uses first-order oracles
/// only.
pub fn fd_meta_grad<T: SplitObjective + ?Sized>(
    task: &T,
    p: &SplitParameters,
    cfg: &InnerLoopConfig,
    h: f64,
) -> Result<MetaGradient> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    p.check_dims(task.n_w(), task.n_phi())?;
    let eval = |q: &SplitParameters| composed_outer_loss(task, q, cfg).map_err(|e| Error::Oracle(Box::new(e)));

    let mut grad_w = DVector::zeros(p.n_w());
    for i in 0..p.n_w() {
        let (mut plus, mut minus) = (p.clone(), p.clone());
        plus.w[i] += h;
        minus.w[i] -= h;
        grad_w[i] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
    }
    let mut grad_phi = DVector::zeros(p.n_phi());
    for i in 0..p.n_phi() {
        let (mut plus, mut minus) = (p.clone(), p.clone());
        plus.phi[i] += h;
        minus.phi[i] -= h;
        grad_phi[i] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
    }
    let runs = 2 * (p.n_w() + p.n_phi()) as u64;
    let ops = OpCount::grad_w(task.n_w()) * (runs * cfg.num_steps as u64);
    Ok(MetaGradient { grad_w, grad_phi, ops })
}

/// `‖analytic − reference‖ / max(1, ‖analytic‖)`.
pub fn relative_error(analytic: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (analytic - reference).norm() / analytic.norm().max(1.0)
}
