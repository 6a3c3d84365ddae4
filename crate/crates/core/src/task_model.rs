//! Synthetic task families with exact derivative oracles.
//!
//! Every task carries two losses over the split parameters `(w, phi)`:
//!
//! ```text
//! L(w, phi) = ½ wᵀA w + wᵀB phi + cᵀw + ½ phiᵀD phi + eᵀphi + a · Σ_j s_j sin(w_j)
//! ```
//!
//! The inner loss `L_S` drives adaptation of `w`; the outer loss `L_D` scores
//! the adapted parameters. The sinusoid is present only for the nonconvex
//! geometry. The joint quadratic block `[[A, B], [Bᵀ, D]]` is sampled as
//! `Q diag(λ) Qᵀ` with a Haar-random rotation `Q`, so its spectrum (and, by
//! interlacing, the spectrum of `A`) lies inside the family's declared range
//! and `‖B‖` never exceeds the smoothness constant.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{self, OperatingRegion, SplitParameters};

/// Current version of the task-family JSON document.
pub const FORMAT_VERSION: u32 = 1;

/// Sinusoid weights are drawn uniformly from `[SINUSOID_WEIGHT_MIN, 1]`.
pub const SINUSOID_WEIGHT_MIN: f64 = 0.75;

/// Relative slack used when certifying spectral bounds against round-off.
const CERT_RTOL: f64 = 1e-10;

/// RNG stream reserved for [`sample_task_family`].
pub const FAMILY_STREAM: u64 = 0;
/// RNG stream reserved for evaluation pools.
pub const EVAL_STREAM: u64 = 1;
/// RNG stream reserved for training-time task draws.
pub const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    StronglyConvex,
    Nonconvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFamilySpec {
    pub geometry: Geometry,
    /// Strong-convexity modulus in `w`; zero for the nonconvex geometry.
    #[serde(default)]
    pub mu: f64,
    pub smoothness_l: f64,
    pub n_w: usize,
    pub n_phi: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nonconvexity_amplitude: f64,
    /// Lower end of the quadratic spectrum for the nonconvex geometry.
    /// Defaults to half of `smoothness_l - nonconvexity_amplitude`.
    #[serde(default)]
    pub base_min_eigenvalue: Option<f64>,
    /// Scale in `[0, 1]` applied to the sampled `B` block.
    #[serde(default = "default_one")]
    pub coupling: f64,
    /// Radius of the ball the linear terms `(c, e)` are drawn from.
    #[serde(default = "default_one")]
    pub offset_scale: f64,
    /// Radius of the operating region around the initialization; `None`
    /// disables the region check (and the `M` certificate).
    #[serde(default = "default_radius")]
    pub operating_radius: Option<f64>,
}

fn default_one() -> f64 {
    1.0
}

fn default_radius() -> Option<f64> {
    Some(10.0)
}

/// Constants of the standing assumptions, certified for a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub mu: f64,
    pub smoothness_l: f64,
    /// Outer-loss Lipschitz constant on the operating region.
    pub lipschitz_m: Option<f64>,
    pub rho: f64,
    pub tau: f64,
}

impl TaskFamilySpec {
    pub fn strongly_convex(mu: f64, smoothness_l: f64, n_w: usize, n_phi: usize, seed: u64) -> Self {
        TaskFamilySpec {
            geometry: Geometry::StronglyConvex,
            mu,
            smoothness_l,
            n_w,
            n_phi,
            seed,
            nonconvexity_amplitude: 0.0,
            base_min_eigenvalue: None,
            coupling: 1.0,
            offset_scale: 1.0,
            operating_radius: default_radius(),
        }
    }

    pub fn nonconvex(
        smoothness_l: f64,
        amplitude: f64,
        base_min_eigenvalue: f64,
        n_w: usize,
        n_phi: usize,
        seed: u64,
    ) -> Self {
        TaskFamilySpec {
            geometry: Geometry::Nonconvex,
            mu: 0.0,
            smoothness_l,
            n_w,
            n_phi,
            seed,
            nonconvexity_amplitude: amplitude,
            base_min_eigenvalue: Some(base_min_eigenvalue),
            coupling: 1.0,
            offset_scale: 1.0,
            operating_radius: default_radius(),
        }
    }

    /// Checks every constructive inequality, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleFamily(msg));
        let l = self.smoothness_l;
        if !(l.is_finite() && l > 0.0) {
            return bad(format!("smoothness_L must be positive, got {l}"));
        }
        if self.n_w == 0 {
            return bad("n_w must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad(format!("coupling must lie in [0, 1], got {}", self.coupling));
        }
        if !(self.offset_scale.is_finite() && self.offset_scale >= 0.0) {
            return bad(format!("offset_scale must be non-negative, got {}", self.offset_scale));
        }
        if let Some(r) = self.operating_radius {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("operating_radius must be positive, got {r}"));
            }
        }
        let amp = self.nonconvexity_amplitude;
        match self.geometry {
            Geometry::StronglyConvex => {
                if !(self.mu > 0.0) {
                    return bad(format!("strongly convex family needs mu > 0, got {}", self.mu));
                }
                if self.mu > l {
                    return bad(format!("mu exceeds smoothness_L ({} > {l})", self.mu));
                }
                if amp != 0.0 {
                    return bad("nonconvexity_amplitude must be 0 for a strongly convex family".into());
                }
            }
            Geometry::Nonconvex => {
                if self.mu != 0.0 {
                    return bad(format!("nonconvex family needs mu = 0, got {}", self.mu));
                }
                if !(amp > 0.0) {
                    return bad("nonconvex family needs nonconvexity_amplitude > 0".into());
                }
                if amp >= l {
                    return bad(format!(
                        "nonconvexity_amplitude plus the quadratic spectrum exceeds smoothness_L ({amp} >= {l})"
                    ));
                }
                let floor = self.spectrum().0;
                if !(floor > 0.0 && floor <= l - amp) {
                    return bad(format!(
                        "base_min_eigenvalue must lie in (0, smoothness_L - amplitude], got {floor}"
                    ));
                }
                if SINUSOID_WEIGHT_MIN * amp <= floor {
                    return bad(format!(
                        "nonconvexity_amplitude too small to make the Hessian indefinite \
                         ({SINUSOID_WEIGHT_MIN} * {amp} <= base_min_eigenvalue {floor})"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Spectral range `[lo, hi]` of the joint quadratic block.
    pub fn spectrum(&self) -> (f64, f64) {
        match self.geometry {
            Geometry::StronglyConvex => (self.mu, self.smoothness_l),
            Geometry::Nonconvex => {
                let hi = self.smoothness_l - self.nonconvexity_amplitude;
                (self.base_min_eigenvalue.unwrap_or(0.5 * hi), hi)
            }
        }
    }

    /// Certified constants. `M` is bounded on the ball of radius
    /// `operating_radius` around `center` as
    /// `hi·(‖center‖ + R) + offset_scale + a·√n_w`.
    pub fn certified_constants(&self, center: Option<&SplitParameters>) -> FamilyConstants {
        let (_, hi) = self.spectrum();
        let amp = self.nonconvexity_amplitude;
        let lipschitz_m = match (self.operating_radius, center) {
            (Some(r), Some(c)) => {
                let reach = c.joint().norm() + r;
                Some(hi * reach + self.offset_scale + amp * (self.n_w as f64).sqrt())
            }
            _ => None,
        };
        FamilyConstants {
            mu: self.mu,
            smoothness_l: self.smoothness_l,
            lipschitz_m,
            rho: amp,
            tau: 0.0,
        }
    }

    pub fn operating_region(&self, center: &SplitParameters) -> Option<OperatingRegion> {
        self.operating_radius.map(|radius| OperatingRegion {
            center: center.clone(),
            radius,
        })
    }
}

/// `a · Σ_j s_j sin(w_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    #[serde(with = "params::vector")]
    pub weights: DVector<f64>,
}

/// One loss of the family (see module docs for the functional form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    /// `A`, symmetric `n_w × n_w`.
    #[serde(with = "params::matrix")]
    pub curvature_w: DMatrix<f64>,
    /// `B`, `n_w × n_phi`.
    #[serde(with = "params::matrix")]
    pub coupling: DMatrix<f64>,
    /// `c`.
    #[serde(with = "params::vector")]
    pub offset_w: DVector<f64>,
    /// `D`, symmetric `n_phi × n_phi`.
    #[serde(with = "params::matrix")]
    pub curvature_phi: DMatrix<f64>,
    /// `e`.
    #[serde(with = "params::vector")]
    pub offset_phi: DVector<f64>,
    #[serde(default)]
    pub sinusoid: Option<Sinusoid>,
}

impl QuadraticLoss {
    /// Builds a loss from its blocks, checking shapes and symmetry.
    pub fn new(
        curvature_w: DMatrix<f64>,
        coupling: DMatrix<f64>,
        offset_w: DVector<f64>,
        curvature_phi: DMatrix<f64>,
        offset_phi: DVector<f64>,
        sinusoid: Option<Sinusoid>,
    ) -> Result<Self> {
        let loss = QuadraticLoss {
            curvature_w,
            coupling,
            offset_w,
            curvature_phi,
            offset_phi,
            sinusoid,
        };
        loss.validate_shape()?;
        Ok(loss)
    }

    /// Scalar loss `½a w² + b w φ + c w + ½d φ² + e φ` (one `w`, one `phi`).
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, e: f64) -> Self {
        QuadraticLoss {
            curvature_w: DMatrix::from_element(1, 1, a),
            coupling: DMatrix::from_element(1, 1, b),
            offset_w: DVector::from_element(1, c),
            curvature_phi: DMatrix::from_element(1, 1, d),
            offset_phi: DVector::from_element(1, e),
            sinusoid: None,
        }
    }

    pub fn zero(n_w: usize, n_phi: usize) -> Self {
        QuadraticLoss {
            curvature_w: DMatrix::zeros(n_w, n_w),
            coupling: DMatrix::zeros(n_w, n_phi),
            offset_w: DVector::zeros(n_w),
            curvature_phi: DMatrix::zeros(n_phi, n_phi),
            offset_phi: DVector::zeros(n_phi),
            sinusoid: None,
        }
    }

    pub fn n_w(&self) -> usize {
        self.curvature_w.nrows()
    }

    pub fn n_phi(&self) -> usize {
        self.curvature_phi.nrows()
    }

    fn validate_shape(&self) -> Result<()> {
        let (n_w, n_phi) = (self.n_w(), self.n_phi());
        Error::check_dim("A columns", n_w, self.curvature_w.ncols())?;
        Error::check_dim("B rows", n_w, self.coupling.nrows())?;
        if n_phi > 0 || self.coupling.ncols() > 0 {
            Error::check_dim("B columns", n_phi, self.coupling.ncols())?;
        }
        Error::check_dim("c", n_w, self.offset_w.len())?;
        Error::check_dim("D columns", n_phi, self.curvature_phi.ncols())?;
        Error::check_dim("e", n_phi, self.offset_phi.len())?;
        if let Some(s) = &self.sinusoid {
            Error::check_dim("sinusoid weights", n_w, s.weights.len())?;
        }
        let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax();
        if asym(&self.curvature_w) > 0.0 || asym(&self.curvature_phi) > 0.0 {
            return Err(Error::Format("curvature blocks must be exactly symmetric".into()));
        }
        let finite = self.curvature_w.iter().all(|x| x.is_finite())
            && self.coupling.iter().all(|x| x.is_finite())
            && self.offset_w.iter().all(|x| x.is_finite())
            && self.curvature_phi.iter().all(|x| x.is_finite())
            && self.offset_phi.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("loss parameters"));
        }
        Ok(())
    }

    pub fn value(&self, w: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        let aw = &self.curvature_w * w;
        let dphi = &self.curvature_phi * phi;
        let mut v = 0.5 * w.dot(&aw)
            + w.dot(&(&self.coupling * phi))
            + self.offset_w.dot(w)
            + 0.5 * phi.dot(&dphi)
            + self.offset_phi.dot(phi);
        if let Some(s) = &self.sinusoid {
            v += s.amplitude
                * s.weights
                    .iter()
                    .zip(w.iter())
                    .map(|(sj, wj)| sj * wj.sin())
                    .sum::<f64>();
        }
        v
    }

    /// `∇_w L = A w + B phi + c + a·s⊙cos(w)`.
    pub fn grad_w(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.curvature_w * w + &self.coupling * phi + &self.offset_w;
        if let Some(s) = &self.sinusoid {
            for j in 0..g.len() {
                g[j] += s.amplitude * s.weights[j] * w[j].cos();
            }
        }
        g
    }

    /// `∇_phi L = Bᵀ w + D phi + e`.
    pub fn grad_phi(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        self.coupling.tr_mul(w) + &self.curvature_phi * phi + &self.offset_phi
    }

    /// `∇²_w L = A − a·diag(s⊙sin(w))`.
    pub fn hessian_w(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.curvature_w.clone();
        if let Some(s) = &self.sinusoid {
            for j in 0..h.nrows() {
                h[(j, j)] -= s.amplitude * s.weights[j] * w[j].sin();
            }
        }
        h
    }

    /// `∇_phi ∇_w L = Bᵀ`, arranged `n_phi × n_w`.
    pub fn mixed(&self) -> DMatrix<f64> {
        self.coupling.transpose()
    }

    /// Full Hessian in `z = (w, phi)`.
    pub fn joint_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (n_w, n_phi) = (self.n_w(), self.n_phi());
        let mut h = DMatrix::zeros(n_w + n_phi, n_w + n_phi);
        h.view_mut((0, 0), (n_w, n_w)).copy_from(&self.hessian_w(w));
        h.view_mut((0, n_w), (n_w, n_phi)).copy_from(&self.coupling);
        h.view_mut((n_w, 0), (n_phi, n_w)).copy_from(&self.coupling.transpose());
        h.view_mut((n_w, n_w), (n_phi, n_phi)).copy_from(&self.curvature_phi);
        h
    }

    /// Quadratic block `[[A, B], [Bᵀ, D]]` without the sinusoid.
    pub fn quadratic_block(&self) -> DMatrix<f64> {
        let zero = DVector::zeros(self.n_w());
        let mut h = self.joint_hessian(&zero);
        if self.sinusoid.is_some() {
            h.view_mut((0, 0), (self.n_w(), self.n_w()))
                .copy_from(&self.curvature_w);
        }
        h
    }
}

/// Spectral facts recorded when a task is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCertificate {
    pub inner_min_eig_w: f64,
    pub inner_max_eig_w: f64,
    pub inner_coupling_norm: f64,
    pub inner_joint_norm: f64,
    pub outer_joint_norm: f64,
    pub outer_coupling_norm: f64,
    /// Smallest eigenvalue of `∇²_w L_S` at `w_j = π/2` (nonconvex only).
    pub witness_min_eig: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: u64,
    pub inner: QuadraticLoss,
    pub outer: QuadraticLoss,
    #[serde(default)]
    pub certificate: Option<TaskCertificate>,
}

impl TaskInstance {
    pub fn new(task_id: u64, inner: QuadraticLoss, outer: QuadraticLoss) -> Result<Self> {
        inner.validate_shape()?;
        outer.validate_shape()?;
        Error::check_dim("outer loss n_w", inner.n_w(), outer.n_w())?;
        Error::check_dim("outer loss n_phi", inner.n_phi(), outer.n_phi())?;
        Ok(TaskInstance {
            task_id,
            inner,
            outer,
            certificate: None,
        })
    }

    pub fn n_w(&self) -> usize {
        self.inner.n_w()
    }

    pub fn n_phi(&self) -> usize {
        self.inner.n_phi()
    }

    fn check(&self, p: &SplitParameters) -> Result<()> {
        p.check_dims(self.n_w(), self.n_phi())
    }
}

/// Derivative oracles consumed by the inner loop and the meta-gradient.
///
/// `TaskInstance` implements it directly (ANIL: only `w` adapts);
/// [`JointView`] re-exposes a task with every parameter in the inner loop
/// (MAML). Implementations may assume dimensions were checked by the caller.
pub trait SplitObjective: Sync {
    fn task_id(&self) -> u64;
    fn n_w(&self) -> usize;
    fn n_phi(&self) -> usize;
    fn inner_value(&self, w: &DVector<f64>, phi: &DVector<f64>) -> f64;
    fn inner_grad_w(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64>;
    fn inner_hessian_w(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DMatrix<f64>;
    /// `∇_phi ∇_w L_S`, arranged `n_phi × n_w`.
    fn inner_mixed(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DMatrix<f64>;
    fn outer_value(&self, w: &DVector<f64>, phi: &DVector<f64>) -> f64;
    fn outer_grad_w(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64>;
    fn outer_grad_phi(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64>;
}

impl SplitObjective for TaskInstance {
    fn task_id(&self) -> u64 {
        self.task_id
    }
    fn n_w(&self) -> usize {
        self.inner.n_w()
    }
    fn n_phi(&self) -> usize {
        self.inner.n_phi()
    }
    fn inner_value(&self, w: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        self.inner.value(w, phi)
    }
    fn inner_grad_w(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        self.inner.grad_w(w, phi)
    }
    fn inner_hessian_w(&self, w: &DVector<f64>, _phi: &DVector<f64>) -> DMatrix<f64> {
        self.inner.hessian_w(w)
    }
    fn inner_mixed(&self, _w: &DVector<f64>, _phi: &DVector<f64>) -> DMatrix<f64> {
        self.inner.mixed()
    }
    fn outer_value(&self, w: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        self.outer.value(w, phi)
    }
    fn outer_grad_w(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        self.outer.grad_w(w, phi)
    }
    fn outer_grad_phi(&self, w: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        self.outer.grad_phi(w, phi)
    }
}

/// A task seen with all parameters `z = (w, phi)` in the adapted block and an
/// empty shared block.
#[derive(Debug, Clone, Copy)]
pub struct JointView<'a> {
    pub task: &'a TaskInstance,
}

impl JointView<'_> {
    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n_w = self.task.n_w();
        (z.rows(0, n_w).into_owned(), z.rows(n_w, z.len() - n_w).into_owned())
    }
}

impl SplitObjective for JointView<'_> {
    fn task_id(&self) -> u64 {
        self.task.task_id
    }
    fn n_w(&self) -> usize {
        self.task.n_w() + self.task.n_phi()
    }
    fn n_phi(&self) -> usize {
        0
    }
    fn inner_value(&self, z: &DVector<f64>, _: &DVector<f64>) -> f64 {
        let (w, phi) = self.split(z);
        self.task.inner.value(&w, &phi)
    }
    fn inner_grad_w(&self, z: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        let (w, phi) = self.split(z);
        params::concat(&self.task.inner.grad_w(&w, &phi), &self.task.inner.grad_phi(&w, &phi))
    }
    fn inner_hessian_w(&self, z: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        let (w, _) = self.split(z);
        self.task.inner.joint_hessian(&w)
    }
    fn inner_mixed(&self, z: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, z.len())
    }
    fn outer_value(&self, z: &DVector<f64>, _: &DVector<f64>) -> f64 {
        let (w, phi) = self.split(z);
        self.task.outer.value(&w, &phi)
    }
    fn outer_grad_w(&self, z: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        let (w, phi) = self.split(z);
        params::concat(&self.task.outer.grad_w(&w, &phi), &self.task.outer.grad_phi(&w, &phi))
    }
    fn outer_grad_phi(&self, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
}

pub fn inner_loss_value(task: &TaskInstance, p: &SplitParameters) -> Result<f64> {
    task.check(p)?;
    Ok(task.inner.value(&p.w, &p.phi))
}

pub fn inner_loss_grad_w(task: &TaskInstance, p: &SplitParameters) -> Result<DVector<f64>> {
    task.check(p)?;
    Ok(task.inner.grad_w(&p.w, &p.phi))
}

pub fn inner_loss_hessian_w(task: &TaskInstance, p: &SplitParameters) -> Result<DMatrix<f64>> {
    task.check(p)?;
    Ok(task.inner.hessian_w(&p.w))
}

pub fn inner_loss_mixed(task: &TaskInstance, p: &SplitParameters) -> Result<DMatrix<f64>> {
    task.check(p)?;
    Ok(task.inner.mixed())
}

pub fn outer_loss_value(task: &TaskInstance, p: &SplitParameters) -> Result<f64> {
    task.check(p)?;
    Ok(task.outer.value(&p.w, &p.phi))
}

pub fn outer_loss_grad_w(task: &TaskInstance, p: &SplitParameters) -> Result<DVector<f64>> {
    task.check(p)?;
    Ok(task.outer.grad_w(&p.w, &p.phi))
}

pub fn outer_loss_grad_phi(task: &TaskInstance, p: &SplitParameters) -> Result<DVector<f64>> {
    task.check(p)?;
    Ok(task.outer.grad_phi(&p.w, &p.phi))
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn eigenvalue_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    (eig.min(), eig.max())
}

/// Deterministic stream of tasks from a family.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    spec: TaskFamilySpec,
    rng: ChaCha8Rng,
    next_id: u64,
}

impl TaskSampler {
    pub fn new(spec: &TaskFamilySpec, stream: u64) -> Result<Self> {
        Self::with_seed(spec, spec.seed, stream)
    }

    pub fn with_seed(spec: &TaskFamilySpec, seed: u64, stream: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(TaskSampler {
            spec: spec.clone(),
            rng,
            next_id: 0,
        })
    }

    pub fn spec(&self) -> &TaskFamilySpec {
        &self.spec
    }

    pub fn next_task(&mut self) -> Result<TaskInstance> {
        let spec = &self.spec;
        let (lo, hi) = spec.spectrum();
        let sinusoid_amp = match spec.geometry {
            Geometry::Nonconvex => Some(spec.nonconvexity_amplitude),
            Geometry::StronglyConvex => None,
        };
        let inner = sample_loss(&mut self.rng, spec, lo, hi, sinusoid_amp);
        let outer = sample_loss(&mut self.rng, spec, lo, hi, sinusoid_amp);
        let mut task = TaskInstance::new(self.next_id, inner, outer)?;
        self.next_id += 1;
        let cert = certify(&task, spec)?;
        task.certificate = Some(cert);
        Ok(task)
    }
}

/// Draws `count` tasks from the family's dedicated stream.
pub fn sample_task_family(spec: &TaskFamilySpec, count: usize) -> Result<Vec<TaskInstance>> {
    if count == 0 {
        return Err(Error::Config("task count must be at least 1".into()));
    }
    let mut sampler = TaskSampler::new(spec, FAMILY_STREAM)?;
    let tasks = (0..count).map(|_| sampler.next_task()).collect::<Result<Vec<_>>>()?;
    if spec.geometry == Geometry::Nonconvex
        && !tasks.iter().any(|t| {
            t.certificate
                .as_ref()
                .and_then(|c| c.witness_min_eig)
                .is_some_and(|e| e < 0.0)
        })
    {
        return Err(Error::InfeasibleFamily(
            "no sampled task has an indefinite inner Hessian at the witness point".into(),
        ));
    }
    Ok(tasks)
}

/// Evaluation pool drawn from a stream disjoint from training draws.
pub fn sample_eval_pool(spec: &TaskFamilySpec, count: usize) -> Result<Vec<TaskInstance>> {
    let mut sampler = TaskSampler::new(spec, EVAL_STREAM)?;
    (0..count).map(|_| sampler.next_task()).collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix via sign-corrected QR.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn sample_loss(
    rng: &mut ChaCha8Rng,
    spec: &TaskFamilySpec,
    lo: f64,
    hi: f64,
    sinusoid_amp: Option<f64>,
) -> QuadraticLoss {
    let (n_w, n_phi) = (spec.n_w, spec.n_phi);
    let n = n_w + n_phi;

    let h = if lo == hi {
        DMatrix::identity(n, n) * lo
    } else {
        let mut eig: Vec<f64> = (0..n).map(|_| uniform(rng, lo, hi)).collect();
        // Pin the extremes so every task realizes the family's condition number.
        eig[0] = lo;
        if n > 1 {
            eig[n - 1] = hi;
        }
        let q = random_orthogonal(rng, n);
        let h = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
        (&h + h.transpose()) * 0.5
    };

    // Random direction, radius offset_scale·U^(1/n): uniform in the ball.
    let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let radius = spec.offset_scale * uniform(rng, 0.0, 1.0).powf(1.0 / n as f64);
    let offsets = if dir.norm() > 0.0 {
        dir.normalize() * radius
    } else {
        DVector::zeros(n)
    };

    let sinusoid = sinusoid_amp.map(|amplitude| Sinusoid {
        amplitude,
        weights: DVector::from_fn(n_w, |_, _| uniform(rng, SINUSOID_WEIGHT_MIN, 1.0)),
    });

    QuadraticLoss {
        curvature_w: h.view((0, 0), (n_w, n_w)).into_owned(),
        coupling: h.view((0, n_w), (n_w, n_phi)).into_owned() * spec.coupling,
        offset_w: offsets.rows(0, n_w).into_owned(),
        curvature_phi: h.view((n_w, n_w), (n_phi, n_phi)).into_owned(),
        offset_phi: offsets.rows(n_w, n_phi).into_owned(),
        sinusoid,
    }
}

fn certify(task: &TaskInstance, spec: &TaskFamilySpec) -> Result<TaskCertificate> {
    let l = spec.smoothness_l;
    let slack = CERT_RTOL * l;
    let (min_eig, max_eig) = eigenvalue_range(&task.inner.curvature_w);
    let inner_coupling_norm = spectral_norm(&task.inner.coupling);
    let outer_coupling_norm = spectral_norm(&task.outer.coupling);
    let inner_joint_norm = spectral_norm(&task.inner.quadratic_block());
    let outer_joint_norm = spectral_norm(&task.outer.quadratic_block());

    let fail = |what: String| Err(Error::InfeasibleFamily(format!("task {}: {what}", task.task_id)));
    if inner_coupling_norm > l + slack || outer_coupling_norm > l + slack {
        return fail(format!("coupling norm exceeds smoothness_L ({inner_coupling_norm})"));
    }
    let witness_min_eig = match spec.geometry {
        Geometry::StronglyConvex => {
            if min_eig < spec.mu - slack {
                return fail(format!("min eigenvalue {min_eig} below mu {}", spec.mu));
            }
            if max_eig > l + slack {
                return fail(format!("max eigenvalue {max_eig} above smoothness_L {l}"));
            }
            None
        }
        Geometry::Nonconvex => {
            let amp = spec.nonconvexity_amplitude;
            let norm_a = spectral_norm(&task.inner.curvature_w);
            if norm_a + amp > l + slack {
                return fail(format!("‖A‖ + amplitude = {} exceeds smoothness_L {l}", norm_a + amp));
            }
            let peak = DVector::from_element(task.n_w(), FRAC_PI_2);
            Some(eigenvalue_range(&task.inner.hessian_w(&peak)).0)
        }
    };
    Ok(TaskCertificate {
        inner_min_eig_w: min_eig,
        inner_max_eig_w: max_eig,
        inner_coupling_norm,
        inner_joint_norm,
        outer_joint_norm,
        outer_coupling_norm,
        witness_min_eig,
    })
}

/// Serialized task family: the spec plus every drawn task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFamilyDocument {
    pub format_version: u32,
    pub spec: TaskFamilySpec,
    pub tasks: Vec<TaskInstance>,
}

impl TaskFamilyDocument {
    pub fn new(spec: TaskFamilySpec, tasks: Vec<TaskInstance>) -> Self {
        TaskFamilyDocument {
            format_version: FORMAT_VERSION,
            spec,
            tasks,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TaskFamilyDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        doc.spec.validate()?;
        for t in &doc.tasks {
            for loss in [&t.inner, &t.outer] {
                loss.validate_shape()?;
                Error::check_dim("task n_w", doc.spec.n_w, loss.n_w())?;
                Error::check_dim("task n_phi", doc.spec.n_phi, loss.n_phi())?;
            }
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Git-style object hash (`"blob <len>\0" + content`, SHA-256) of the
/// canonical JSON encoding of a task pool.
pub fn content_hash(tasks: &[TaskInstance]) -> Result<String> {
    let body = serde_json::to_vec(tasks)?;
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", body.len()).as_bytes());
    hasher.update(&body);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
