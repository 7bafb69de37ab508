//! Text, CSV and JSON renderings of the oracle and bound reports.

use serde_json::{json, Value};

use mlmarket_core::analytics::{CeBoundReport, OracleReport, ScenarioBound, SqBoundReport};

use crate::float;

/// Named scalar fields of a report, in print order.
pub type Fields = Vec<(&'static str, String)>;

pub fn oracle_fields(r: &OracleReport) -> Fields {
    vec![
        ("alpha", float(r.alpha)),
        ("c", float(r.c)),
        ("tau", float(r.tau)),
        ("theta_star", float(r.theta_star)),
        ("risk_star", float(r.risk_star)),
        ("theta_bar_0", float(r.theta_bar[0])),
        ("theta_bar_1", float(r.theta_bar[1])),
        ("risk_bar_0", float(r.risk_bar[0])),
        ("risk_bar_1", float(r.risk_bar[1])),
        ("case1_0", float(r.case1[0])),
        ("case1_1", float(r.case1[1])),
        ("case3_0", float(r.case3[0])),
        ("case3_1", float(r.case3[1])),
        ("regime", r.regime.note().to_string()),
    ]
}

pub fn sq_fields(r: &SqBoundReport) -> Fields {
    let i = &r.inputs;
    vec![
        ("p", float(i.p)),
        ("lambda", float(i.lambda)),
        ("n", float(i.n)),
        ("kappa_conf", float(i.kappa_conf)),
        ("b", float(i.b)),
        ("epsilon", float(i.epsilon)),
        ("radius", float(i.radius)),
        ("y_max", float(i.y_max)),
        ("m0", float(i.m0)),
        ("norm_theta_star", float(i.norm_theta_star)),
        ("y_max_probe", float(r.y_max_probe)),
        ("b_theta", float(r.b_theta)),
        ("c0", float(r.c0)),
        ("b_star", float(r.b_star)),
        ("b_u", float(r.b_u)),
        ("value", float(r.value)),
        ("vacuous", r.vacuous.to_string()),
    ]
}

pub fn ce_fields(r: &CeBoundReport) -> Fields {
    let i = &r.inputs;
    vec![
        ("p", float(i.p)),
        ("lambda", float(i.lambda)),
        ("n", float(i.n)),
        ("kappa_conf", float(i.kappa_conf)),
        ("b_ce", float(i.b_ce)),
        ("epsilon", float(i.epsilon)),
        ("radius", float(i.radius)),
        ("classes", i.classes.to_string()),
        ("norm_theta_star", float(i.norm_theta_star)),
        ("gamma_star", float(r.gamma_star)),
        ("big_gamma_star", float(r.big_gamma_star)),
        ("b_theta", float(r.b_theta)),
        ("gamma_b", float(r.gamma_b)),
        ("big_gamma_b", float(r.big_gamma_b)),
        ("value", float(r.value)),
        ("vacuous", r.vacuous.to_string()),
    ]
}

/// Aligned `name  value` lines followed by a CSV header and row.
pub fn render(fields: &Fields) -> String {
    let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in fields {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    out.push('\n');
    out.push_str(&fields.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(","));
    out.push('\n');
    out.push_str(&fields.iter().map(|(_, v)| csv_cell(v)).collect::<Vec<_>>().join(","));
    out.push('\n');
    out
}

fn csv_cell(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

pub fn oracle_json(r: &OracleReport) -> Value {
    json!({
        "alpha": r.alpha,
        "c": r.c,
        "tau": r.tau,
        "theta_star": r.theta_star,
        "risk_star": r.risk_star,
        "theta_bar": r.theta_bar,
        "risk_bar": r.risk_bar,
        "case1": r.case1,
        "case3": r.case3,
        "regime": r.regime.note(),
    })
}

pub fn scenario_json(b: &ScenarioBound) -> Value {
    json!({ "table_value": b.table_value, "proof_value": b.proof_value, "conservative": b.conservative() })
}

pub fn sq_json(r: &SqBoundReport) -> Value {
    let i = &r.inputs;
    json!({
        "loss": "squared",
        "p": i.p, "lambda": i.lambda, "n": i.n, "kappa_conf": i.kappa_conf, "b": i.b, "epsilon": i.epsilon,
        "radius": i.radius, "y_max": i.y_max, "m0": i.m0, "norm_theta_star": i.norm_theta_star,
        "y_max_probe": r.y_max_probe, "b_theta": r.b_theta, "c0": r.c0, "b_star": r.b_star, "b_u": r.b_u,
        "value": r.value, "vacuous": r.vacuous,
    })
}

pub fn ce_json(r: &CeBoundReport) -> Value {
    let i = &r.inputs;
    json!({
        "loss": "cross_entropy",
        "p": i.p, "lambda": i.lambda, "n": i.n, "kappa_conf": i.kappa_conf, "b_ce": i.b_ce, "epsilon": i.epsilon,
        "radius": i.radius, "classes": i.classes, "norm_theta_star": i.norm_theta_star,
        "gamma_star": r.gamma_star, "big_gamma_star": r.big_gamma_star, "b_theta": r.b_theta,
        "gamma_b": r.gamma_b, "big_gamma_b": r.big_gamma_b, "value": r.value, "vacuous": r.vacuous,
    })
}
