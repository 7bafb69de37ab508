//! TOML experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mlmarket_core::datagen::SyntheticSpec;
use mlmarket_core::dynamics::{ProbeConfig, Schedule};
use mlmarket_core::probing::ProbeRule;

use crate::dataset::{DatasetSchema, LabelKind};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSection,
    #[serde(default)]
    pub market: MarketSection,
    pub dynamics: DynamicsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probing: Option<ProbingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSection {
    /// Either `epsilon` and `gamma`, or `alpha` and `c`.
    BadOutcome {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
    },
    MixtureRegression {
        slopes: Vec<Vec<f64>>,
        noise: f64,
        weights: Vec<f64>,
        radius: f64,
    },
    MixtureClassification {
        means: Vec<Vec<Vec<f64>>>,
        spread: f64,
        weights: Vec<f64>,
    },
    Csv {
        path: PathBuf,
        features: usize,
        #[serde(default)]
        classes: Option<usize>,
        #[serde(default)]
        pref_column: bool,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

fn default_test_fraction() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl InstanceSection {
    pub fn synthetic_spec(&self) -> Result<Option<SyntheticSpec>> {
        Ok(Some(match self {
            InstanceSection::BadOutcome { epsilon, gamma, alpha, c } => match (epsilon, gamma, alpha, c) {
                (Some(e), Some(g), None, None) => SyntheticSpec::bad_outcome_from_gap(*e, *g)?,
                (None, None, Some(a), Some(c)) => SyntheticSpec::BadOutcome { alpha: *a, c: *c },
                _ => {
                    return Err(CliError::Config(
                        "instance: bad_outcome needs exactly one of (epsilon, gamma) or (alpha, c)".into(),
                    ))
                }
            },
            InstanceSection::MixtureRegression { slopes, noise, weights, radius } => SyntheticSpec::MixtureRegression {
                slopes: slopes.clone(),
                noise: *noise,
                weights: weights.clone(),
                radius: *radius,
            },
            InstanceSection::MixtureClassification { means, spread, weights } => {
                SyntheticSpec::MixtureClassification { means: means.clone(), spread: *spread, weights: weights.clone() }
            }
            InstanceSection::Csv { .. } => return Ok(None),
        }))
    }

    pub fn csv_schema(&self) -> Option<DatasetSchema> {
        match self {
            InstanceSection::Csv { features, classes, pref_column, .. } => Some(DatasetSchema {
                features: *features,
                label: classes.map_or(LabelKind::Real, |k| LabelKind::Class { classes: k }),
                pref_column: *pref_column,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    /// Number of learners. Synthetic instances fix it to the number of
    /// subpopulations; CSV instances require it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learners: Option<usize>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Induce preferences by k-means on (standardized) features.
    #[serde(default)]
    pub kmeans: bool,
}

fn default_tau() -> f64 {
    0.5
}

impl Default for MarketSection {
    fn default() -> Self {
        MarketSection { learners: None, tau: default_tau(), kmeans: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSection {
    Polynomial { eta0: f64, t0: f64, gamma: f64 },
    Constant { eta: f64 },
}

impl Default for ScheduleSection {
    fn default() -> Self {
        match Schedule::default() {
            Schedule::Polynomial { eta0, t0, gamma } => ScheduleSection::Polynomial { eta0, t0, gamma },
            Schedule::Constant { eta } => ScheduleSection::Constant { eta },
        }
    }
}

impl From<ScheduleSection> for Schedule {
    fn from(s: ScheduleSection) -> Self {
        match s {
            ScheduleSection::Polynomial { eta0, t0, gamma } => Schedule::Polynomial { eta0, t0, gamma },
            ScheduleSection::Constant { eta } => Schedule::Constant { eta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    Uniform {
        low: f64,
        high: f64,
    },
    /// Per-subpopulation least-squares fits; regression specs only.
    Specialists,
    /// One row-major parameter vector per learner.
    Explicit {
        values: Vec<Vec<f64>>,
    },
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection::Uniform { low: -1.0, high: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `steps / 100`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_cadence: Option<u64>,
    #[serde(default = "default_eval_draws")]
    pub eval_draws: usize,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub init: InitSection,
}

fn default_eval_draws() -> usize {
    10_000
}

impl DynamicsSection {
    pub fn cadence(&self) -> u64 {
        self.metric_cadence.unwrap_or((self.steps / 100).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    MajorityGood,
    MarketLeader,
    PartialKnowledge,
    PreferenceAware,
    PreferenceAwareNoisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbingSection {
    pub learners: Vec<usize>,
    pub p: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_probe_n")]
    pub n: usize,
    pub rule: RuleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_noise: Option<f64>,
    /// Bound inputs. Missing values make the corresponding bound unavailable
    /// (bad-outcome instances supply epsilon and the minimizer norm).
    #[serde(default = "default_kappa_conf")]
    pub kappa_conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_theta_star: Option<f64>,
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_probe_n() -> usize {
    100
}

fn default_kappa_conf() -> f64 {
    0.05
}

impl ProbingSection {
    pub fn rule(&self) -> Result<ProbeRule> {
        let missing = |f: &str| CliError::Config(format!("probing.{f} is required by rule {:?}", self.rule));
        Ok(match self.rule {
            RuleName::MajorityGood => ProbeRule::MajorityGood,
            RuleName::MarketLeader => ProbeRule::MarketLeader { leader: self.leader.ok_or_else(|| missing("leader"))? },
            RuleName::PartialKnowledge => {
                ProbeRule::PartialKnowledge { subset: self.subset.clone().ok_or_else(|| missing("subset"))? }
            }
            RuleName::PreferenceAware => ProbeRule::PreferenceAware,
            RuleName::PreferenceAwareNoisy => {
                ProbeRule::PreferenceAwareNoisy { kappa_noise: self.kappa_noise.ok_or_else(|| missing("kappa_noise"))? }
            }
        })
    }

    pub fn probe_config(&self) -> Result<ProbeConfig> {
        Ok(ProbeConfig {
            learners: self.learners.clone(),
            p: self.p,
            lambda: self.lambda,
            n: self.n,
            rule: self.rule()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    P,
    N,
    KappaNoise,
    Tau,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::P => "p",
            SweepParameter::N => "n",
            SweepParameter::KappaNoise => "kappa_noise",
            SweepParameter::Tau => "tau",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Seeds per grid point: `dynamics.seed, dynamics.seed + 1, ...`.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
}

fn default_seeds() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_true")]
    pub probe_datasets: bool,
    #[serde(default)]
    pub checkpoints: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir(), probe_datasets: true, checkpoints: false }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()).with_span(text, e.span()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative CSV paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let InstanceSection::Csv { path: data, .. } = &mut cfg.instance {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    /// Structural checks that do not need the instance.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(CliError::Config(m));
        self.instance.synthetic_spec()?;
        if let Some(schema) = self.instance.csv_schema() {
            if self.market.learners.is_none() {
                return cfg_err("market.learners is required for csv instances".into());
            }
            if matches!(schema.label, LabelKind::Class { classes } if classes < 2) {
                return cfg_err("instance.classes must be at least 2".into());
            }
        }
        if !(0.0..=1.0).contains(&self.market.tau) {
            return cfg_err(format!("market.tau must lie in [0, 1], got {}", self.market.tau));
        }
        if self.dynamics.steps == 0 {
            return cfg_err("dynamics.steps must be positive".into());
        }
        if self.dynamics.metric_cadence == Some(0) {
            return cfg_err("dynamics.metric_cadence must be positive".into());
        }
        if self.dynamics.eval_draws == 0 {
            return cfg_err("dynamics.eval_draws must be positive".into());
        }
        Schedule::from(self.dynamics.schedule)
            .validate()
            .map_err(|e| CliError::Config(format!("dynamics.schedule: {e}")))?;
        if let InitSection::Uniform { low, high } = self.dynamics.init {
            if !(low <= high && low.is_finite() && high.is_finite()) {
                return cfg_err("dynamics.init needs finite low <= high".into());
            }
        }
        if let Some(p) = &self.probing {
            p.rule()?;
            if !(p.kappa_conf > 0.0 && p.kappa_conf < 1.0) {
                return cfg_err("probing.kappa_conf must lie in (0, 1)".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return cfg_err("sweep.values must not be empty".into());
            }
            if s.seeds == 0 {
                return cfg_err("sweep.seeds must be positive".into());
            }
            let needs_probing = !matches!(s.parameter, SweepParameter::Tau);
            if needs_probing && self.probing.is_none() {
                return cfg_err(format!("sweep over {} needs a probing section", s.parameter.name()));
            }
            for v in &s.values {
                let ok = match s.parameter {
                    SweepParameter::P => *v >= 0.0 && v.is_finite(),
                    SweepParameter::N => *v >= 1.0 && v.fract() == 0.0 && *v <= u32::MAX as f64,
                    SweepParameter::KappaNoise | SweepParameter::Tau => (0.0..=1.0).contains(v),
                };
                if !ok {
                    return cfg_err(format!("sweep.values: {v} is not a valid {}", s.parameter.name()));
                }
            }
            if s.parameter == SweepParameter::KappaNoise
                && self.probing.as_ref().is_some_and(|p| p.rule != RuleName::PreferenceAwareNoisy)
            {
                return cfg_err("sweep over kappa_noise needs probing.rule = \"preference_aware_noisy\"".into());
            }
        }
        Ok(())
    }

    /// The config of one grid point: the swept value applied, the sweep removed
    /// and the seed fixed. A probing weight of zero means plain MSGD.
    pub fn at_grid_point(&self, parameter: SweepParameter, value: f64, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.sweep = None;
        cfg.dynamics.seed = seed;
        match parameter {
            SweepParameter::Tau => cfg.market.tau = value,
            SweepParameter::P if value == 0.0 => cfg.probing = None,
            SweepParameter::P => cfg.probing.as_mut().expect("validated").p = value,
            SweepParameter::N => cfg.probing.as_mut().expect("validated").n = value as usize,
            SweepParameter::KappaNoise => cfg.probing.as_mut().expect("validated").kappa_noise = Some(value),
        }
        cfg
    }
}

impl CliError {
    fn with_span(self, text: &str, span: Option<std::ops::Range<usize>>) -> Self {
        match (self, span) {
            (CliError::Config(msg), Some(span)) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                CliError::Config(format!("line {line}: {}", msg.trim_end()))
            }
            (e, _) => e,
        }
    }
}
