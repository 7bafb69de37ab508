//! Closed-form quantities of the two-subpopulation bad-outcome instance
//! (`y = C x` with weight alpha, `y = -x` otherwise, `x ~ U[-sqrt 3, sqrt 3]`).

use alloc::format;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRegime {
    /// `tau >= 1/2`: the specialists configuration is the only equilibrium.
    UniqueSpecialists,
    MultipleEquilibriaPossible,
}

impl TauRegime {
    pub fn of(tau: f64) -> Self {
        if tau >= 0.5 {
            TauRegime::UniqueSpecialists
        } else {
            TauRegime::MultipleEquilibriaPossible
        }
    }

    pub fn note(self) -> &'static str {
        match self {
            TauRegime::UniqueSpecialists => "unique specialists equilibrium",
            TauRegime::MultipleEquilibriaPossible => "tau < 1/2: multiple equilibria may exist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub alpha: f64,
    pub c: f64,
    pub tau: f64,
    /// Global risk minimizer and its risk.
    pub theta_star: f64,
    pub risk_star: f64,
    /// Specialist equilibrium `(C, -1)` and the global risk of each specialist.
    pub theta_bar: [f64; 2],
    pub risk_bar: [f64; 2],
    /// Candidate equilibrium where learner 0 wins every quality-driven user.
    pub case1: [f64; 2],
    /// Candidate equilibrium where quality-driven users pick the learner they do not prefer.
    pub case3: [f64; 2],
    pub regime: TauRegime,
}

/// Global risk of a scalar parameter: `alpha (C - theta)^2 + (1 - alpha)(1 + theta)^2`
/// (the factor `E[x^2] = 1` is implicit).
pub fn bad_instance_risk(theta: f64, alpha: f64, c: f64) -> f64 {
    alpha * (c - theta) * (c - theta) + (1.0 - alpha) * (1.0 + theta) * (1.0 + theta)
}

pub fn bad_instance_oracle(alpha: f64, c: f64, tau: f64) -> Result<OracleReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(c >= 1.0 && c.is_finite()) {
        return Err(invalid("C must be finite and >= 1"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid("tau must lie in [0, 1]"));
    }
    let beta = 1.0 - alpha;
    let cp1 = (c + 1.0) * (c + 1.0);
    let theta_star = alpha * c - beta;

    let m1 = alpha + (1.0 - tau) * beta;
    let case1 = [(alpha * c - (1.0 - tau) * beta) / m1, -1.0];

    let d1 = tau * alpha + (1.0 - tau) * beta;
    let d2 = (1.0 - tau) * alpha + tau * beta;
    let case3 = [(tau * alpha * c - (1.0 - tau) * beta) / d1, ((1.0 - tau) * alpha * c - tau * beta) / d2];

    Ok(OracleReport {
        alpha,
        c,
        tau,
        theta_star,
        risk_star: alpha * beta * cp1,
        theta_bar: [c, -1.0],
        risk_bar: [beta * cp1, alpha * cp1],
        case1,
        case3,
        regime: TauRegime::of(tau),
    })
}
