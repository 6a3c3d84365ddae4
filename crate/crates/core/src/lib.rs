//! ANIL-style meta-learning with exact, unrolled meta-gradients on
//! synthetic task families, plus the probes and experiment harness used to
//! check its convergence behavior.
//!
//! Parameters split into task-specific `w` (adapted for `N` inner gradient
//! steps) and shared `φ` (held fixed inside the loop). The meta-gradient of
//! `L_D(w_N(w, φ), φ)` is computed by one reverse sweep over the inner-loop
//! trace:
//!
//! ```
//! use anil_lab::{meta_gradient, run_inner_loop, InnerLoopConfig, QuadraticLoss, SplitParameters, TaskInstance};
//!
//! // L_S = ½w², L_D = ½w² on scalars; two steps of size ½ shrink w by ¼.
//! let loss = QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0);
//! let task = TaskInstance::new(0, loss.clone(), loss)?;
//! let p = SplitParameters::from_slices(&[1.0], &[0.0])?;
//! let trace = run_inner_loop(&task, &p, &InnerLoopConfig::new(0.5, 2)?)?;
//! let g = meta_gradient(&task, &trace)?;
//! assert_eq!(g.grad_w[0], 0.0625);
//! # Ok::<(), anil_lab::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod inner_loop;
pub mod meta_gradient;
pub mod ops;
pub mod optimizer;
pub mod params;
pub mod probes;
pub mod task_model;

pub use error::{Error, Result};
pub use experiment::{
    evaluate, replay, run_experiment, ExitStatus, ExperimentConfig, ExperimentKind, ExperimentOutcome,
};
pub use inner_loop::{contraction_check, run_inner_loop, InnerLoopConfig, InnerLoopTrace, InnerStepRule};
pub use meta_gradient::{fd_meta_grad, meta_gradient, relative_error, MetaGradient};
pub use ops::OpCount;
pub use optimizer::{anil_run, maml_run, OuterConfig, RunRecord, StepsizeRule, TaskSource, Termination};
pub use params::SplitParameters;
pub use probes::{estimate_block_smoothness, smoothness_scaling_report, ProbeBlock, ProbeConfig, ScalingReport};
pub use task_model::{
    sample_eval_pool, sample_task_family, Geometry, JointView, QuadraticLoss, SplitObjective, TaskFamilySpec,
    TaskInstance,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/task-families.md")]
    mod task_families {}
    #[doc = include_str!("../../../book/src/meta-gradients.md")]
    mod meta_gradients {}
    #[doc = include_str!("../../../book/src/outer-training.md")]
    mod outer_training {}
    #[doc = include_str!("../../../book/src/probes.md")]
    mod probes {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
