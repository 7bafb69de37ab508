//! Executes configured experiments and writes their artifacts.
//!
//! A single run writes `metrics.csv`, `summary.json`, `manifest.json` and,
//! optionally, probe datasets and checkpoints. A sweep writes one such run
//! directory per grid point and seed plus an aggregate summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use mlmarket_core::analytics::{
    bad_instance_oracle, ce_risk_bound, scenario_bound_b, sq_risk_bound, CeBoundInputs, MetricsRow, Scenario,
    ScenarioParams, SqBoundInputs,
};
use mlmarket_core::datagen::{gen_mixture_instance, specialist_params, SyntheticSpec};
use mlmarket_core::dynamics::{
    eval_set, init_params, msgd_run, msgdp_run, ProbeConfig, RunOptions, Schedule, Trajectory,
};
use mlmarket_core::math;
use mlmarket_core::model::{Instance, JointParams, LossKind, Params};
use mlmarket_core::probing::{probe_discrepancy, ProbeDiagnostics};

use crate::config::{ExperimentConfig, InitSection, ProbingSection};
use crate::dataset::{load_dataset_csv, LoadOptions};
use crate::error::{CliError, Result};
use crate::probe_csv::write_probe_csv;
use crate::{float, hex};

pub const METRICS_HEADER: &str =
    "t,learner,global_risk,global_accuracy,local_loss,mass_a,mass_alpha,potential_f,potential_f_tilde,stationarity_residual";

#[derive(Debug, Clone, Default)]
pub struct RunnerOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Concurrent sweep points; 0 means one per core.
    pub jobs: usize,
    pub quiet: bool,
}

/// Final per-learner numbers of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub dir: PathBuf,
    pub seed: u64,
    pub final_risk: Vec<f64>,
    pub final_accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Single(RunResult),
    Sweep(Vec<SweepPoint>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: Vec<RunResult>,
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<(Instance, Option<SyntheticSpec>)> {
    match cfg.instance.synthetic_spec()? {
        Some(spec) => {
            let inst = gen_mixture_instance(&spec, cfg.market.tau)?;
            if let Some(m) = cfg.market.learners {
                if m != inst.num_learners {
                    return Err(CliError::Config(format!(
                        "market.learners = {m} but the synthetic instance has {} subpopulations",
                        inst.num_learners
                    )));
                }
            }
            if cfg.market.kmeans {
                return Err(CliError::Config("market.kmeans applies to csv instances only".into()));
            }
            Ok((inst, Some(spec)))
        }
        None => {
            let crate::config::InstanceSection::Csv { path, test_fraction, standardize, .. } = &cfg.instance else {
                unreachable!("non-synthetic instances are csv")
            };
            let schema = cfg.instance.csv_schema().expect("csv instance");
            let opts = LoadOptions {
                num_learners: cfg.market.learners.expect("validated"),
                tau: cfg.market.tau,
                test_fraction: *test_fraction,
                standardize: *standardize,
                kmeans: cfg.market.kmeans,
                seed: cfg.dynamics.seed,
            };
            Ok((load_dataset_csv(path, &schema, &opts)?, None))
        }
    }
}

pub fn initial_params(cfg: &ExperimentConfig, inst: &Instance, spec: Option<&SyntheticSpec>) -> Result<JointParams> {
    let joint = match &cfg.dynamics.init {
        InitSection::Uniform { low, high } => init_params(inst, *low, *high, cfg.dynamics.seed)?,
        InitSection::Specialists => match spec {
            Some(spec) => specialist_params(spec).map_err(|e| CliError::Config(format!("dynamics.init: {e}")))?,
            None => return Err(CliError::Config("dynamics.init: specialists need a synthetic instance".into())),
        },
        InitSection::Explicit { values } => {
            let rows = inst.loss.param_rows();
            let learners = values
                .iter()
                .map(|v| Params::from_values(rows, inst.dim, v.clone()))
                .collect::<mlmarket_core::Result<Vec<_>>>()
                .map_err(|e| CliError::Config(format!("dynamics.init: {e}")))?;
            JointParams::new(learners).map_err(|e| CliError::Config(format!("dynamics.init: {e}")))?
        }
    };
    joint.check_for(inst).map_err(|e| CliError::Config(format!("dynamics.init: {e}")))?;
    Ok(joint)
}

/// The config as actually executed: overrides applied and derived defaults
/// written out.
fn resolve(cfg: &ExperimentConfig, opts: &RunnerOptions) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.dynamics.seed = seed;
    }
    if let Some(dir) = &opts.out_dir {
        cfg.output.dir = dir.clone();
    }
    cfg.dynamics.metric_cadence = Some(cfg.dynamics.cadence());
    cfg
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunnerOptions) -> Result<Outcome> {
    cfg.validate()?;
    let cfg = resolve(cfg, opts);
    match &cfg.sweep {
        None => run_single(&cfg, &cfg.output.dir, opts.quiet).map(Outcome::Single),
        Some(_) => run_sweep(&cfg, opts).map(Outcome::Sweep),
    }
}

/// Re-executes the resolved config stored in a manifest.
pub fn rerun_manifest(manifest: &Path, opts: &RunnerOptions) -> Result<Outcome> {
    let text = fs::read_to_string(manifest).map_err(|e| CliError::io(manifest, e))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    let cfg: ExperimentConfig = serde_json::from_value(doc.get("config").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::Config(format!("{}: config: {e}", manifest.display())))?;
    run_experiment(&cfg, opts)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    write_file(path, &s)
}

fn status_of(err: Option<&CliError>) -> (&'static str, u8) {
    match err {
        None => ("ok", 0),
        Some(e @ (CliError::Config(_) | CliError::Parse { .. })) => ("config_error", e.exit_code()),
        Some(e @ CliError::Numerical { .. }) => ("numeric_failure", e.exit_code()),
        Some(e @ CliError::Io { .. }) => ("io_error", e.exit_code()),
    }
}

fn manifest_json(cfg: &ExperimentConfig, fingerprint: Option<u64>, err: Option<&CliError>, files: &[String]) -> Value {
    let (status, code) = status_of(err);
    json!({
        "tool": "mlmarket",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.dynamics.seed,
        "status": status,
        "exit_code": code,
        "error": err.map(|e| e.to_string()),
        "instance_fingerprint": fingerprint.map(hex),
        "files": files,
        "config": serde_json::to_value(cfg).expect("config serializes"),
    })
}

fn run_single(cfg: &ExperimentConfig, dir: &Path, quiet: bool) -> Result<RunResult> {
    create_dir(dir)?;
    let mut fingerprint = None;
    let result = execute(cfg, dir, &mut fingerprint);
    let manifest = dir.join("manifest.json");
    match result {
        Ok((res, files)) => {
            write_json(&manifest, &manifest_json(cfg, fingerprint, None, &files))?;
            if !quiet {
                for (i, r) in res.final_risk.iter().enumerate() {
                    println!("{}: learner {i} final risk {}", dir.display(), float(*r));
                }
            }
            Ok(res)
        }
        Err(e) => {
            // the manifest records the failure; an I/O error writing it wins
            write_json(&manifest, &manifest_json(cfg, fingerprint, Some(&e), &[]))?;
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig, dir: &Path, fingerprint: &mut Option<u64>) -> Result<(RunResult, Vec<String>)> {
    let (inst, spec) = build_instance(cfg)?;
    *fingerprint = Some(inst.fingerprint());
    let theta0 = initial_params(cfg, &inst, spec.as_ref())?;
    let seed = cfg.dynamics.seed;
    let eval = eval_set(&inst, cfg.dynamics.eval_draws, seed);
    let opts = RunOptions {
        schedule: Schedule::from(cfg.dynamics.schedule),
        metric_cadence: cfg.dynamics.cadence(),
        eval: Some(&eval),
        ..RunOptions::new(cfg.dynamics.steps, seed)
    };
    let probe = cfg.probing.as_ref().map(ProbingSection::probe_config).transpose()?;
    if let Some(p) = &probe {
        p.validate(inst.num_learners).map_err(|e| CliError::Config(format!("probing: {e}")))?;
    }
    let traj = match &probe {
        Some(p) => msgdp_run(&inst, &theta0, &opts, p)?,
        None => msgd_run(&inst, &theta0, &opts)?,
    };

    let mut files = vec!["metrics.csv".to_string(), "summary.json".to_string()];
    write_file(&dir.join("metrics.csv"), &metrics_csv(&traj.metrics))?;
    let summary = summary_json(cfg, &inst, spec.as_ref(), &theta0, &traj, probe.as_ref())?;
    write_json(&dir.join("summary.json"), &summary)?;
    if cfg.output.probe_datasets {
        for ds in &traj.probe_datasets {
            let name = format!("probe_learner_{}.csv", ds.owner);
            write_probe_csv(&dir.join(&name), ds, inst.loss)?;
            files.push(name);
        }
    }
    if cfg.output.checkpoints {
        write_file(&dir.join("checkpoints.csv"), &checkpoints_csv(&traj))?;
        files.push("checkpoints.csv".into());
    }

    let last = traj.metrics.last().expect("the final step is always evaluated");
    let res = RunResult {
        dir: dir.to_path_buf(),
        seed,
        final_risk: last.learners.iter().map(|l| l.global_risk).collect(),
        final_accuracy: last.learners.iter().map(|l| l.global_accuracy).collect(),
    };
    Ok((res, files))
}

fn opt_float(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        for (i, l) in row.learners.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                row.t,
                i,
                float(l.global_risk),
                opt_float(l.global_accuracy),
                opt_float(l.local_loss),
                float(l.mass_a),
                float(l.mass_alpha),
                float(row.potential_f),
                opt_float(row.potential_f_tilde),
                float(l.stationarity_residual),
            )
            .expect("writing to a String");
        }
    }
    out
}

fn checkpoints_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,learner,params\n");
    for cp in &traj.checkpoints {
        for (i, p) in cp.params.iter().enumerate() {
            let vals: Vec<String> = p.values().iter().map(|v| float(*v)).collect();
            writeln!(out, "{},{},{}", cp.t, i, vals.join(";")).expect("writing to a String");
        }
    }
    out
}

fn loss_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::SquaredRegression => "squared",
        LossKind::CrossEntropy { .. } => "cross_entropy",
    }
}

/// Bound inputs that the instance itself can supply, as `(epsilon, |theta*|)`.
fn instance_defaults(spec: Option<&SyntheticSpec>, tau: f64) -> (Option<f64>, Option<f64>) {
    match spec {
        Some(SyntheticSpec::BadOutcome { alpha, c }) => match bad_instance_oracle(*alpha, *c, tau) {
            Ok(r) => (Some(r.risk_star), Some(r.theta_star.abs())),
            Err(_) => (None, None),
        },
        _ => (None, None),
    }
}

fn bounds_json(
    cfg: &ProbingSection,
    probe: &ProbeConfig,
    inst: &Instance,
    spec: Option<&SyntheticSpec>,
    theta0: &JointParams,
) -> Value {
    let (eps_default, star_default) = instance_defaults(spec, inst.tau);
    let epsilon = cfg.epsilon.or(eps_default);
    let norm_theta_star = cfg.norm_theta_star.or(star_default);
    let scenario = Scenario::of_rule(&probe.rule);
    let params = ScenarioParams { radius: Some(inst.radius), r: cfg.r, epsilon, xi: cfg.xi };
    let b = match scenario {
        None => Err("the noisy preference-aware rule has no accuracy parameter".to_string()),
        Some(s) => scenario_bound_b(inst.loss, s, &params).map_err(|e| e.to_string()),
    };
    let scenario_v = match &b {
        Ok(b) => {
            json!({ "name": format!("{:?}", scenario.expect("bound exists")), "bound": crate::report::scenario_json(b) })
        }
        Err(e) => json!({ "name": scenario.map(|s| format!("{s:?}")), "unavailable": e }),
    };
    let risk = (|| -> std::result::Result<Value, String> {
        let b = b.as_ref().map_err(Clone::clone)?.conservative();
        let epsilon = epsilon.ok_or("probing.epsilon is not set")?;
        let norm_theta_star = norm_theta_star.ok_or("probing.norm_theta_star is not set")?;
        let n = probe.n as f64;
        match inst.loss {
            LossKind::SquaredRegression => {
                let m0 = theta0.iter().map(Params::norm).fold(0.0, f64::max);
                let r = sq_risk_bound(&SqBoundInputs {
                    p: probe.p,
                    lambda: probe.lambda,
                    n,
                    kappa_conf: cfg.kappa_conf,
                    b,
                    epsilon,
                    radius: inst.radius,
                    y_max: inst.y_max.expect("regression instances carry Y_max"),
                    m0,
                    norm_theta_star,
                })
                .map_err(|e| e.to_string())?;
                Ok(crate::report::sq_json(&r))
            }
            LossKind::CrossEntropy { classes } => {
                let r = ce_risk_bound(&CeBoundInputs {
                    p: probe.p,
                    lambda: probe.lambda,
                    n,
                    kappa_conf: cfg.kappa_conf,
                    b_ce: b,
                    epsilon,
                    radius: inst.radius,
                    classes,
                    norm_theta_star,
                })
                .map_err(|e| e.to_string())?;
                Ok(crate::report::ce_json(&r))
            }
        }
    })();
    json!({
        "scenario": scenario_v,
        "risk_bound": match risk { Ok(v) => v, Err(e) => json!({ "unavailable": e }) },
    })
}

fn summary_json(
    cfg: &ExperimentConfig,
    inst: &Instance,
    spec: Option<&SyntheticSpec>,
    theta0: &JointParams,
    traj: &Trajectory,
    probe: Option<&ProbeConfig>,
) -> Result<Value> {
    let last = traj.metrics.last().expect("the final step is always evaluated");
    let params = traj.final_params();
    let probing: Vec<usize> = probe.map(|p| p.learners.clone()).unwrap_or_default();
    let learners: Vec<Value> = last
        .learners
        .iter()
        .enumerate()
        .map(|(i, l)| {
            json!({
                "learner": i,
                "final_risk": l.global_risk,
                "final_risk_se": l.global_risk_se,
                "final_accuracy": l.global_accuracy,
                "local_loss": l.local_loss,
                "mass_a": l.mass_a,
                "mass_alpha": l.mass_alpha,
                "stationarity_residual": l.stationarity_residual,
                "probing": probing.contains(&i),
                "params": params.get(i).values(),
            })
        })
        .collect();

    let mut doc = json!({
        "status": "ok",
        "seed": traj.meta.seed,
        "steps": traj.meta.steps,
        "step_size_conditions_violated": traj.meta.step_size_conditions_violated,
        "instance": {
            "loss": loss_name(inst.loss),
            "dim": inst.dim,
            "learners": inst.num_learners,
            "tau": inst.tau,
            "radius": inst.radius,
            "y_max": inst.y_max,
            "fingerprint": hex(traj.meta.instance_fingerprint),
        },
        "potential_f": last.potential_f,
        "potential_f_tilde": last.potential_f_tilde,
        "stationarity_residual_max": last.stationarity_residual_max,
        "learners": learners,
    });
    if let Some(SyntheticSpec::BadOutcome { alpha, c }) = spec {
        doc["oracle"] = crate::report::oracle_json(&bad_instance_oracle(*alpha, *c, inst.tau)?);
    }
    if let (Some(pc), Some(probe)) = (&cfg.probing, probe) {
        let mut p = bounds_json(pc, probe, inst, spec, theta0);
        p["learners"] = json!(probe.learners);
        p["p"] = json!(probe.p);
        p["lambda"] = json!(probe.lambda);
        p["n"] = json!(probe.n);
        p["rule"] = json!(format!("{:?}", probe.rule));
        let diagnostics: Vec<Value> = traj
            .probe_datasets
            .iter()
            .map(|ds| {
                let d = match probe_discrepancy(ds, inst.loss)? {
                    ProbeDiagnostics::Regression { delta_sq } => json!({ "delta_sq": delta_sq }),
                    ProbeDiagnostics::Classification { delta_l1, mean_ce } => {
                        json!({ "delta_l1": delta_l1, "mean_ce": mean_ce })
                    }
                };
                Ok(json!({ "owner": ds.owner, "snapshot": hex(ds.snapshot), "size": ds.len(), "discrepancy": d }))
            })
            .collect::<Result<_>>()?;
        p["datasets"] = json!(diagnostics);
        doc["probing"] = p;
    }
    Ok(doc)
}

fn point_dir(root: &Path, name: &str, value: f64) -> PathBuf {
    root.join(format!("{name}_{value}"))
}

fn run_sweep(cfg: &ExperimentConfig, opts: &RunnerOptions) -> Result<Vec<SweepPoint>> {
    let sweep = cfg.sweep.clone().expect("sweep config");
    let root = cfg.output.dir.clone();
    create_dir(&root)?;
    let base_seed = cfg.dynamics.seed;
    let grid: Vec<(usize, f64, u64)> = sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, v)| (0..sweep.seeds).map(move |k| (i, *v, base_seed + k)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        grid.par_iter()
            .map(|(_, value, seed)| {
                let point = cfg.at_grid_point(sweep.parameter, *value, *seed);
                let dir = point_dir(&root, sweep.parameter.name(), *value).join(format!("seed_{seed}"));
                let mut point = point;
                point.output.dir = dir.clone();
                run_single(&point, &dir, opts.quiet)
            })
            .collect()
    });

    let mut points: Vec<SweepPoint> = sweep.values.iter().map(|v| SweepPoint { value: *v, runs: Vec::new() }).collect();
    let mut first_err = None;
    for ((i, _, _), r) in grid.iter().zip(results) {
        match r {
            Ok(run) => points[*i].runs.push(run),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }

    let mut csv = format!("{},seed,learner,final_risk,final_accuracy\n", sweep.parameter.name());
    let mut agg = Vec::new();
    for pt in &points {
        for run in &pt.runs {
            for (l, r) in run.final_risk.iter().enumerate() {
                writeln!(csv, "{},{},{},{},{}", pt.value, run.seed, l, float(*r), opt_float(run.final_accuracy[l]))
                    .expect("writing to a String");
            }
        }
        agg.push(json!({
            "value": pt.value,
            "completed_seeds": pt.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "median_final_risk": pt.median_risk(),
            "median_final_accuracy": pt.median_accuracy(),
        }));
    }
    write_file(&root.join("sweep_summary.csv"), &csv)?;
    write_json(
        &root.join("sweep_summary.json"),
        &json!({ "parameter": sweep.parameter.name(), "seeds": sweep.seeds, "points": agg }),
    )?;
    write_json(
        &root.join("manifest.json"),
        &manifest_json(
            cfg,
            None,
            first_err.as_ref(),
            &["sweep_summary.csv".to_string(), "sweep_summary.json".to_string()],
        ),
    )?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(points),
    }
}

impl SweepPoint {
    /// Per-learner median of the final risk over the completed seeds.
    pub fn median_risk(&self) -> Vec<f64> {
        let m = self.runs.first().map_or(0, |r| r.final_risk.len());
        (0..m)
            .map(|l| {
                let mut v: Vec<f64> = self.runs.iter().map(|r| r.final_risk[l]).collect();
                math::median(&mut v)
            })
            .collect()
    }

    pub fn median_accuracy(&self) -> Vec<Option<f64>> {
        let m = self.runs.first().map_or(0, |r| r.final_accuracy.len());
        (0..m)
            .map(|l| {
                let mut v: Vec<f64> = self.runs.iter().filter_map(|r| r.final_accuracy[l]).collect();
                (!v.is_empty()).then(|| math::median(&mut v))
            })
            .collect()
    }
}
