use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_loop::InnerStepRule;
use crate::optimizer::OuterConfig;
use crate::params::SplitParameters;
use crate::probes::ProbeConfig;
use crate::task_model::{Geometry, TaskFamilySpec};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[serde(rename = "gradcheck")]
    GradCheck,
    Contraction,
    #[serde(rename = "smoothness")]
    SmoothnessScaling,
    #[serde(rename = "sweep")]
    ConvergenceSweep,
    #[serde(rename = "compare_maml")]
    ComplexityCompare,
}

impl ExperimentKind {
    /// Name used by the CLI subcommand and in the config file.
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GradCheck => "gradcheck",
            ExperimentKind::Contraction => "contraction",
            ExperimentKind::SmoothnessScaling => "smoothness",
            ExperimentKind::ConvergenceSweep => "sweep",
            ExperimentKind::ComplexityCompare => "compare_maml",
        }
    }
}

/// Starting point of outer training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Zeros,
    /// Every entry of `w` set to `w`, every entry of `φ` to `phi`.
    Constant {
        w: f64,
        phi: f64,
    },
    Explicit(SplitParameters),
}

impl InitSpec {
    pub fn resolve(&self, n_w: usize, n_phi: usize) -> Result<SplitParameters> {
        let p = match self {
            InitSpec::Zeros => SplitParameters::zeros(n_w, n_phi),
            InitSpec::Constant { w, phi } => SplitParameters::from_slices(&vec![*w; n_w], &vec![*phi; n_phi])?,
            InitSpec::Explicit(p) => p.clone(),
        };
        p.check_finite()?;
        p.check_dims(n_w, n_phi)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    #[serde(default = "default_tasks")]
    pub num_tasks: usize,
    #[serde(default = "default_gradcheck_n")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Overrides the per-geometry tolerance (1e-6 strongly convex, 1e-5
    /// nonconvex).
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Standard deviation of the random evaluation points.
    #[serde(default = "default_one")]
    pub point_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            num_tasks: default_tasks(),
            n_values: default_gradcheck_n(),
            fd_step: default_fd_step(),
            tolerance: None,
            point_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    #[serde(default = "default_tasks")]
    pub num_tasks: usize,
    #[serde(default = "default_contraction_steps")]
    pub num_steps: usize,
    #[serde(default = "default_one")]
    pub point_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            num_tasks: default_tasks(),
            num_steps: default_contraction_steps(),
            point_scale: 1.0,
            seed: 0,
        }
    }
}

/// Trend checks a convergence sweep can declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepCheck {
    /// Iterations to ε never grow by more than 5% from one `N` to the next.
    IterationsNonIncreasing,
    /// The gain over the last pair of `N` values is smaller than over the first.
    Saturation,
    /// Second-order entries to ε are minimized at neither end of the sweep.
    InteriorOpsMinimum,
    /// Second-order entries to ε never shrink as `N` grows.
    OpsNonDecreasing,
    /// The smallest `N` reaches ε and the largest diverges.
    DivergesAtLargestN,
}

impl SweepCheck {
    pub fn defaults(geometry: Geometry) -> Vec<SweepCheck> {
        match geometry {
            Geometry::StronglyConvex => vec![
                SweepCheck::IterationsNonIncreasing,
                SweepCheck::Saturation,
                SweepCheck::InteriorOpsMinimum,
            ],
            Geometry::Nonconvex => vec![SweepCheck::OpsNonDecreasing],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepCheck::IterationsNonIncreasing => "iterations_non_increasing",
            SweepCheck::Saturation => "saturation",
            SweepCheck::InteriorOpsMinimum => "interior_ops_minimum",
            SweepCheck::OpsNonDecreasing => "ops_non_decreasing",
            SweepCheck::DivergesAtLargestN => "diverges_at_largest_n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub experiment: ExperimentKind,
    pub family: TaskFamilySpec,
    /// Extra families checked by `gradcheck`, e.g. the other geometry.
    #[serde(default)]
    pub additional_families: Vec<TaskFamilySpec>,
    #[serde(default)]
    pub outer: Option<OuterConfig>,
    /// How the inner stepsize follows `N`; defaults to `mu/L²` for strongly
    /// convex families and `1/(2LN)` for nonconvex ones.
    #[serde(default)]
    pub inner_rule: Option<InnerStepRule>,
    #[serde(default)]
    pub n_sweep: Vec<usize>,
    #[serde(default)]
    pub epsilon_target: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_pool")]
    pub eval_pool_size: usize,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub gradcheck: Option<GradCheckConfig>,
    #[serde(default)]
    pub contraction: Option<ContractionConfig>,
    /// Sweep trend checks; defaults depend on the family's geometry.
    #[serde(default)]
    pub sweep_checks: Option<Vec<SweepCheck>>,
    /// Fill the `elapsed_ms` column of per-run CSVs. Off by default so that
    /// every output file is reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_version() -> u32 {
    CONFIG_FORMAT_VERSION
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_eval_pool() -> usize {
    256
}

fn default_tasks() -> usize {
    100
}

fn default_gradcheck_n() -> Vec<usize> {
    vec![0, 1, 2, 5, 10]
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_one() -> f64 {
    1.0
}

fn default_contraction_steps() -> usize {
    10
}

/// Default inner stepsize rule for a geometry.
pub fn default_inner_rule(geometry: Geometry) -> InnerStepRule {
    match geometry {
        Geometry::StronglyConvex => InnerStepRule::StronglyConvex,
        Geometry::Nonconvex => InnerStepRule::InverseN { c_alpha: None },
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn inner_rule(&self) -> InnerStepRule {
        self.inner_rule
            .unwrap_or_else(|| default_inner_rule(self.family.geometry))
    }

    pub fn sweep_checks(&self) -> Vec<SweepCheck> {
        self.sweep_checks
            .clone()
            .unwrap_or_else(|| SweepCheck::defaults(self.family.geometry))
    }

    /// Every seed in the document set to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.family.seed = seed;
        for f in &mut self.additional_families {
            f.seed = seed;
        }
        if let Some(o) = &mut self.outer {
            o.seed = seed;
        }
        if let Some(p) = &mut self.probe {
            p.seed = seed;
        }
        if let Some(g) = &mut self.gradcheck {
            g.seed = seed;
        }
        if let Some(c) = &mut self.contraction {
            c.seed = seed;
        }
    }

    /// Fills optional sections the chosen experiment needs with defaults, so
    /// the manifest echoes every value that was used.
    pub fn with_defaults(mut self) -> Self {
        match self.experiment {
            ExperimentKind::GradCheck => {
                self.gradcheck.get_or_insert_with(GradCheckConfig::default);
            }
            ExperimentKind::Contraction => {
                self.contraction.get_or_insert_with(ContractionConfig::default);
            }
            ExperimentKind::SmoothnessScaling => {
                let rule = self.inner_rule();
                self.probe.get_or_insert_with(|| ProbeConfig::new(rule));
            }
            ExperimentKind::ConvergenceSweep => {
                self.sweep_checks = Some(self.sweep_checks());
            }
            ExperimentKind::ComplexityCompare => {}
        }
        self.inner_rule = Some(self.inner_rule());
        self
    }

    /// Checks every field before any work starts, naming the offending path.
    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, e: Error| match e {
            Error::InfeasibleFamily(m) | Error::Config(m) => Error::Config(format!("{path}: {m}")),
            other => Error::Config(format!("{path}: {other}")),
        };
        let bad = |msg: String| Err(Error::Config(msg));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return bad(format!(
                "format_version: unsupported version {} (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.family.validate().map_err(|e| field("family", e))?;
        for (i, f) in self.additional_families.iter().enumerate() {
            f.validate()
                .map_err(|e| field(&format!("additional_families[{i}]"), e))?;
        }
        if !self.additional_families.is_empty() && self.experiment != ExperimentKind::GradCheck {
            return bad("additional_families: only used by the gradcheck experiment".into());
        }
        if self.eval_pool_size == 0 {
            return bad("eval_pool_size: must be at least 1".into());
        }
        if let Some(eps) = self.epsilon_target {
            if !(eps.is_finite() && eps > 0.0) {
                return bad(format!("epsilon_target: must be positive, got {eps}"));
            }
        }
        if let Some(rule) = self.inner_rule {
            validate_rule(&rule).map_err(|e| field("inner_rule", e))?;
        }
        self.init
            .resolve(self.family.n_w, self.family.n_phi)
            .map_err(|e| field("init", e))?;
        if let Some(o) = &self.outer {
            o.validate().map_err(|e| field("outer", e))?;
        }
        if let Some(p) = &self.probe {
            validate_rule(&p.inner_rule).map_err(|e| field("probe.inner_rule", e))?;
            if p.pool_size == 0 || p.num_pairs == 0 {
                return bad("probe: pool_size and num_pairs must be at least 1".into());
            }
            if !(p.pair_scale.is_finite() && p.pair_scale > 0.0) {
                return bad(format!("probe.pair_scale: must be positive, got {}", p.pair_scale));
            }
            if let Some(c) = &p.center {
                c.check_dims(self.family.n_w, self.family.n_phi)
                    .map_err(|e| field("probe.center", e))?;
            }
        }
        if let Some(g) = &self.gradcheck {
            if g.num_tasks == 0 || g.n_values.is_empty() {
                return bad("gradcheck: num_tasks and n_values must be non-empty".into());
            }
            if !(g.fd_step.is_finite() && g.fd_step > 0.0) {
                return bad(format!("gradcheck.fd_step: must be positive, got {}", g.fd_step));
            }
            if let Some(t) = g.tolerance {
                if !(t.is_finite() && t > 0.0) {
                    return bad(format!("gradcheck.tolerance: must be positive, got {t}"));
                }
            }
        }
        if let Some(c) = &self.contraction {
            if c.num_tasks == 0 {
                return bad("contraction.num_tasks: must be at least 1".into());
            }
        }

        let sorted = |ns: &[usize]| ns.windows(2).all(|w| w[0] < w[1]);
        match self.experiment {
            ExperimentKind::GradCheck | ExperimentKind::Contraction => {}
            ExperimentKind::SmoothnessScaling => {
                if self.n_sweep.is_empty() || !sorted(&self.n_sweep) {
                    return bad("n_sweep: must be a non-empty, strictly increasing list".into());
                }
            }
            ExperimentKind::ConvergenceSweep => {
                if self.n_sweep.is_empty() || !sorted(&self.n_sweep) {
                    return bad("n_sweep: must be a non-empty, strictly increasing list".into());
                }
                self.require_outer_and_epsilon()?;
                let rule = self.inner_rule();
                for &n in &self.n_sweep {
                    rule.config(self.family.mu, self.family.smoothness_l, n)
                        .map_err(|e| field("inner_rule", e))?;
                }
                let outer = self.outer.as_ref().expect("checked above");
                for &n in &self.n_sweep {
                    let mut o = outer.clone();
                    o.inner.num_steps = n;
                    o.stepsizes(Some(&self.family)).map_err(|e| field("outer", e))?;
                }
            }
            ExperimentKind::ComplexityCompare => {
                self.require_outer_and_epsilon()?;
                let outer = self.outer.as_ref().expect("checked above");
                outer.stepsizes(Some(&self.family)).map_err(|e| field("outer", e))?;
            }
        }
        if self.experiment == ExperimentKind::Contraction && self.family.geometry != Geometry::StronglyConvex {
            return bad("family: the contraction experiment needs a strongly convex family".into());
        }
        Ok(())
    }

    fn require_outer_and_epsilon(&self) -> Result<()> {
        if self.outer.is_none() {
            return Err(Error::Config(format!(
                "outer: required by the {} experiment",
                self.experiment.name()
            )));
        }
        if self.epsilon_target.is_none() {
            return Err(Error::Config(format!(
                "epsilon_target: required by the {} experiment",
                self.experiment.name()
            )));
        }
        Ok(())
    }
}

fn validate_rule(rule: &InnerStepRule) -> Result<()> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    match *rule {
        InnerStepRule::Fixed { alpha } if !positive(alpha) => {
            Err(Error::Config(format!("fixed alpha must be positive, got {alpha}")))
        }
        InnerStepRule::InverseN { c_alpha: Some(c) } if !positive(c) => {
            Err(Error::Config(format!("c_alpha must be positive, got {c}")))
        }
        _ => Ok(()),
    }
}

/// Reads and fully validates an experiment config.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text)
}
