//! Probing-accuracy parameters per scenario and the explicit finite-sample risk
//! bounds for a probing learner under squared and cross-entropy loss.

use alloc::format;

use crate::error::{invalid, Result};
use crate::math::{exp, ln, sqrt};
use crate::model::LossKind;
use crate::probing::ProbeRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    MajorityGood,
    MarketLeader,
    PartialKnowledge,
    PreferenceAware,
}

impl Scenario {
    /// Scenario whose accuracy parameter covers a probing rule. The noisy
    /// preference-aware rule has none.
    pub fn of_rule(rule: &ProbeRule) -> Option<Self> {
        match rule {
            ProbeRule::MajorityGood => Some(Scenario::MajorityGood),
            ProbeRule::MarketLeader { .. } => Some(Scenario::MarketLeader),
            ProbeRule::PartialKnowledge { .. } => Some(Scenario::PartialKnowledge),
            ProbeRule::PreferenceAware => Some(Scenario::PreferenceAware),
            ProbeRule::PreferenceAwareNoisy { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScenarioParams {
    pub radius: Option<f64>,
    /// Distance of the good peers from the risk minimizer.
    pub r: Option<f64>,
    pub epsilon: Option<f64>,
    pub xi: Option<f64>,
}

/// The regression majority-good value has two candidate forms; both are kept.
/// They coincide for every other scenario and loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioBound {
    pub table_value: f64,
    pub proof_value: f64,
}

impl ScenarioBound {
    fn single(v: f64) -> Self {
        ScenarioBound { table_value: v, proof_value: v }
    }

    pub fn conservative(&self) -> f64 {
        self.table_value.max(self.proof_value)
    }
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
        Some(x) => Err(invalid(format!("{name} must be finite and nonnegative, got {x}"))),
        None => Err(invalid(format!("missing parameter {name}"))),
    }
}

pub fn scenario_bound_b(kind: LossKind, scenario: Scenario, params: &ScenarioParams) -> Result<ScenarioBound> {
    match scenario {
        Scenario::MarketLeader => Ok(ScenarioBound::single(need(params.xi, "xi")?)),
        Scenario::PreferenceAware => Ok(ScenarioBound::single(need(params.epsilon, "epsilon")?)),
        Scenario::MajorityGood | Scenario::PartialKnowledge => {
            let radius = need(params.radius, "R")?;
            let r = need(params.r, "r")?;
            let eps = need(params.epsilon, "epsilon")?;
            if kind.is_classification() {
                Ok(ScenarioBound::single(eps + 2.0 * radius * r))
            } else {
                let rr = radius * radius * r * r;
                Ok(ScenarioBound { table_value: rr + 2.0 * eps, proof_value: 2.0 * rr + 2.0 * eps })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqBoundInputs {
    pub p: f64,
    pub lambda: f64,
    /// Probe dataset size; `f64::INFINITY` gives the large-sample limit.
    pub n: f64,
    pub kappa_conf: f64,
    pub b: f64,
    pub epsilon: f64,
    pub radius: f64,
    pub y_max: f64,
    /// Largest initial parameter norm among the probe sources.
    pub m0: f64,
    pub norm_theta_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqBoundReport {
    pub inputs: SqBoundInputs,
    pub y_max_probe: f64,
    pub b_theta: f64,
    pub c0: f64,
    pub b_star: f64,
    pub b_u: f64,
    pub value: f64,
    /// The value is at least the worst-case loss `b_u` over the norm ball.
    pub vacuous: bool,
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn nonneg(v: f64, name: &str) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

fn confidence(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("kappa_conf must lie in (0, 1), got {kappa}")))
    }
}

pub fn sq_risk_bound(inp: &SqBoundInputs) -> Result<SqBoundReport> {
    for (v, name) in [(inp.p, "p"), (inp.lambda, "lambda"), (inp.n, "n"), (inp.radius, "R"), (inp.y_max, "Y_max")] {
        positive(v, name)?;
    }
    for (v, name) in [(inp.b, "B"), (inp.epsilon, "epsilon"), (inp.m0, "M0"), (inp.norm_theta_star, "norm_theta_star")]
    {
        nonneg(v, name)?;
    }
    confidence(inp.kappa_conf)?;
    let SqBoundInputs { p, lambda, n, kappa_conf, b, epsilon, radius, y_max, m0, norm_theta_star } = *inp;

    let y_max_probe = radius * m0;
    let b_theta = sqrt(2.0 * (y_max * y_max + p * y_max_probe * y_max_probe) / (lambda * p));
    let c0 = y_max + y_max_probe;
    let star_level = y_max + radius * norm_theta_star;
    let b_star = star_level * star_level;
    let b_u = (y_max + b_theta * radius) * (y_max + b_theta * radius);
    let log_term = 2.0 * ln(2.0 / kappa_conf);
    let root_n = sqrt(n);

    let value = 6.0 * b
        + (4.0 + 2.0 / p) * epsilon
        + lambda * norm_theta_star * norm_theta_star
        + (4.0 * b_star + 6.0 * c0 * c0) * sqrt(log_term) / root_n
        + 4.0 * (y_max + b_theta * radius) * b_theta * radius / root_n
        + b_u * sqrt(log_term / n);

    Ok(SqBoundReport { inputs: *inp, y_max_probe, b_theta, c0, b_star, b_u, value, vacuous: value >= b_u })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeBoundInputs {
    pub p: f64,
    pub lambda: f64,
    pub n: f64,
    pub kappa_conf: f64,
    pub b_ce: f64,
    pub epsilon: f64,
    pub radius: f64,
    pub classes: usize,
    /// Frobenius norm of the risk minimizer.
    pub norm_theta_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeBoundReport {
    pub inputs: CeBoundInputs,
    pub gamma_star: f64,
    pub big_gamma_star: f64,
    pub b_theta: f64,
    pub gamma_b: f64,
    pub big_gamma_b: f64,
    pub value: f64,
    /// The value is at least `Gamma_B`, the largest loss over the norm ball.
    pub vacuous: bool,
}

pub fn ce_risk_bound(inp: &CeBoundInputs) -> Result<CeBoundReport> {
    for (v, name) in [(inp.p, "p"), (inp.lambda, "lambda"), (inp.n, "n"), (inp.radius, "R")] {
        positive(v, name)?;
    }
    for (v, name) in [(inp.b_ce, "B_CE"), (inp.epsilon, "epsilon"), (inp.norm_theta_star, "norm_theta_star")] {
        nonneg(v, name)?;
    }
    confidence(inp.kappa_conf)?;
    if inp.classes < 2 {
        return Err(invalid("K must be at least 2"));
    }
    let CeBoundInputs { p, lambda, n, kappa_conf, b_ce, epsilon, radius, classes, norm_theta_star } = *inp;
    let k = classes as f64;
    let log_k = ln(k);

    let big_gamma_star = log_k + 2.0 * radius * norm_theta_star;
    let b_theta = sqrt(2.0 * (1.0 + p) * log_k / (lambda * p));
    let big_gamma_b = log_k + 2.0 * radius * b_theta;
    let span = radius * (norm_theta_star + b_theta);

    let value = (1.0 + 1.0 / p) * epsilon
        + 0.5 * lambda * norm_theta_star * norm_theta_star
        + span * sqrt(2.0 * b_ce)
        + 4.0 * radius * sqrt((1.0 + p) * k * log_k / (lambda * p * n))
        + (big_gamma_star + big_gamma_b + span) * sqrt(ln(3.0 / kappa_conf) / (2.0 * n));

    Ok(CeBoundReport {
        inputs: *inp,
        gamma_star: exp(-big_gamma_star),
        big_gamma_star,
        b_theta,
        gamma_b: exp(-big_gamma_b),
        big_gamma_b,
        value,
        vacuous: value >= big_gamma_b,
    })
}
