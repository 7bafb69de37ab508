use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BAD_OUTCOME: &str = r#"
[instance]
kind = "bad_outcome"
epsilon = 0.1
gamma = 4.0

[market]
tau = 0.5

[dynamics]
steps = 200000
seed = 0
metric_cadence = 20000
eval_draws = 100000
"#;

const PROBE_SWEEP: &str = r#"
[instance]
kind = "bad_outcome"
epsilon = 0.1
gamma = 4.0

[market]
tau = 0.5

[dynamics]
steps = 200000
seed = 0
eval_draws = 20000
init = { kind = "specialists" }

[probing]
learners = [0]
p = 0.5
rule = "preference_aware"

[sweep]
parameter = "p"
values = [0.0, 0.2, 0.5, 0.8]
seeds = 5
"#;

fn mlmarket(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlmarket")).args(args).output().unwrap()
}

fn run_config(dir: &Path, name: &str, text: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, text).unwrap();
    let out = dir.join(name);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    (mlmarket(&args), out)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// The value printed for `name` in the aligned block.
fn field(text: &str, name: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            l.strip_prefix(name).filter(|rest| rest.starts_with(' ')).map(|rest| rest.trim().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no field {name} in\n{text}"))
}

#[test]
fn bad_outcome_run_reaches_the_specialist_split() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_config(tmp.path(), "bad", BAD_OUTCOME, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("summary.json"));
    let risk = |i: usize| s["learners"][i]["final_risk"].as_f64().unwrap();
    assert!(risk(0) >= 3.5, "learner 0 risk {}", risk(0));
    assert!(risk(1) <= 0.15, "learner 1 risk {}", risk(1));
    assert!((s["oracle"]["risk_bar"][0].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert_eq!(s["probing"], Value::Null);

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,learner,global_risk,global_accuracy,local_loss,mass_a,mass_alpha,potential_f,potential_f_tilde,stationarity_residual"
    );
    // 11 checkpoints, two learners each
    assert_eq!(lines.clone().count(), 22);
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 10);
        assert_eq!(cells[3], "");
        assert_eq!(cells[8], "");
        let v: f64 = cells[2].parse().unwrap();
        assert_eq!(format!("{v:.16e}"), cells[2]);
    }
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["exit_code"], 0);
}

#[test]
fn runs_are_byte_identical_and_rerunnable() {
    let tmp = tempfile::tempdir().unwrap();
    let text =
        BAD_OUTCOME.replace("steps = 200000", "steps = 30000").replace("eval_draws = 100000", "eval_draws = 5000")
            + "\n[probing]\nlearners = [1]\np = 0.4\nn = 50\nrule = \"majority_good\"\n";
    let (a, out_a) = run_config(tmp.path(), "a", &text, &["--seed", "17"]);
    let (b, out_b) = run_config(tmp.path(), "b", &text, &["--seed", "17"]);
    assert!(a.status.success() && b.status.success());
    let metrics_a = fs::read(out_a.join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, fs::read(out_b.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(out_a.join("probe_learner_1.csv")).unwrap(),
        fs::read(out_b.join("probe_learner_1.csv")).unwrap()
    );

    let manifest = json(&out_a.join("manifest.json"));
    assert_eq!(manifest["seed"], 17);
    assert_eq!(manifest["config"]["dynamics"]["seed"], 17);

    let rerun_dir = tmp.path().join("rerun");
    let r = mlmarket(&[
        "rerun",
        "--manifest",
        out_a.join("manifest.json").to_str().unwrap(),
        "--out-dir",
        rerun_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(metrics_a, fs::read(rerun_dir.join("metrics.csv")).unwrap());

    let (c, out_c) = run_config(tmp.path(), "c", &text, &["--seed", "18"]);
    assert!(c.status.success());
    assert_ne!(metrics_a, fs::read(out_c.join("metrics.csv")).unwrap());
}

#[test]
fn probing_sweep_is_nonincreasing_in_p() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_config(tmp.path(), "sweep", PROBE_SWEEP, &["--jobs", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("sweep_summary.json"));
    let medians: Vec<f64> =
        s["points"].as_array().unwrap().iter().map(|p| p["median_final_risk"][0].as_f64().unwrap()).collect();
    assert_eq!(medians.len(), 4);
    assert!(medians[0] >= 3.5, "{medians:?}");
    // seed noise allowance between neighbouring grid points
    for w in medians.windows(2) {
        assert!(w[1] <= w[0] + 0.01, "{medians:?}");
    }
    for seed in 0..5 {
        assert!(out.join(format!("p_0.5/seed_{seed}/metrics.csv")).is_file());
    }
    // p = 0 runs plain SGD: no probe datasets
    assert!(!out.join("p_0/seed_0/probe_learner_0.csv").exists());
    let point = json(&out.join("p_0.5/seed_0/summary.json"));
    assert_eq!(point["probing"]["scenario"]["name"], "PreferenceAware");
    assert!(point["probing"]["risk_bound"]["value"].as_f64().is_some());
    let rows = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 5 * 2);
}

#[test]
fn numeric_failure_exits_3_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BAD_OUTCOME.replace("steps = 200000", "steps = 1000").replace("eval_draws = 100000", "eval_draws = 100")
        + "schedule = { kind = \"constant\", eta = 5.0 }\n";
    let (o, out) = run_config(tmp.path(), "div", &text, &[]);
    assert_eq!(o.status.code(), Some(3));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "numeric_failure");
    assert_eq!(manifest["exit_code"], 3);
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn exit_codes_for_config_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run_config(tmp.path(), "typo", &BAD_OUTCOME.replace("steps", "stepz"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));
    let o = mlmarket(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(mlmarket(&["run"]).status.code(), Some(2));
}

#[test]
fn csv_dataset_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut data = String::from("feature_0,feature_1,label\n");
    for i in 0..200 {
        let shift = if i % 2 == 0 { 1.5 } else { -1.5 };
        let (x0, x1) = ((i as f64 * 0.7).sin() + shift, (i as f64 * 1.3).cos());
        data.push_str(&format!("{x0},{x1},{}\n", usize::from(x0 > 0.0)));
    }
    fs::write(tmp.path().join("data.csv"), data).unwrap();
    let text = "[instance]\nkind = \"csv\"\npath = \"data.csv\"\nfeatures = 2\nclasses = 2\n\n[market]\nlearners = 2\ntau = 0.7\nkmeans = true\n\n[dynamics]\nsteps = 5000\n";
    let (o, out) = run_config(tmp.path(), "csvrun", text, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["instance"]["loss"], "cross_entropy");
    let acc = s["learners"][0]["final_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().split(',').nth(3).unwrap() != "");
}

#[test]
fn oracle_command() {
    let o = mlmarket(&["oracle", "--epsilon", "0.1", "--gamma", "4", "--tau", "0.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!((field(&text, "risk_bar_0") - 4.0).abs() < 1e-12);
    assert!((field(&text, "risk_bar_1") - 0.1).abs() < 1e-12);
    assert!((field(&text, "risk_star") - 0.1 / 1.025).abs() < 1e-12);
    assert!(text.contains("unique specialists equilibrium"));
    let csv: Vec<&str> = text.lines().rev().take(2).collect();
    assert!(csv[1].starts_with("alpha,c,tau,theta_star,risk_star"));
    assert_eq!(csv[0].split(',').count(), csv[1].split(',').count());

    let sym = stdout(&mlmarket(&["oracle", "--alpha", "0.5", "--c", "1", "--tau", "0.7"]));
    assert_eq!(field(&sym, "theta_star"), 0.0);
    assert_eq!(field(&sym, "risk_bar_0"), field(&sym, "risk_bar_1"));

    let low = stdout(&mlmarket(&["oracle", "--alpha", "0.2", "--c", "3", "--tau", "0.4"]));
    assert!(low.contains("multiple equilibria may exist"));

    assert_eq!(mlmarket(&["oracle", "--alpha", "1.5", "--c", "3"]).status.code(), Some(2));
}

const SQ_DESK: &[&str] = &[
    "--p",
    "1",
    "--lambda",
    "0.01",
    "--kappa-conf",
    "0.05",
    "--b",
    "0.1",
    "--epsilon",
    "0.1",
    "--radius",
    "1.7320508075688772",
    "--y-max",
    "2.1",
    "--m0",
    "1.1",
    "--norm-theta-star",
    "1",
    "--n",
    "100",
];
const CE_DESK: &[&str] = &[
    "--p",
    "1",
    "--lambda",
    "0.01",
    "--kappa-conf",
    "0.05",
    "--b-ce",
    "0.1",
    "--epsilon",
    "0.3",
    "--radius",
    "1",
    "--classes",
    "2",
    "--norm-theta-star",
    "1",
    "--n",
    "100",
];

fn bounds(kind: &str, args: &[&str], n: &str) -> String {
    let mut full = vec!["bounds", kind];
    full.extend_from_slice(args);
    let pos = full.iter().position(|a| *a == "--n").unwrap();
    full[pos + 1] = n;
    let o = mlmarket(&full);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
#[allow(clippy::excessive_precision)]
fn bounds_command_matches_desk_values() {
    let sq = bounds("sq", SQ_DESK, "100");
    assert!((field(&sq, "value") - 3421.9797363711354).abs() / 3421.9797363711354 < 1e-12);
    assert!((field(&sq, "b_theta") - 40.099875311526843).abs() < 1e-10);
    assert!((field(&sq, "b_u") - 5120.1210899503137).abs() < 1e-8);
    for name in ["c0", "b_star", "y_max_probe"] {
        field(&sq, name);
    }
    assert!(sq.contains("vacuous          false"));

    let ce = bounds("ce", CE_DESK, "100");
    assert!((field(&ce, "value") - 22.934120065608159).abs() / 22.934120065608159 < 1e-12);
    assert!((field(&ce, "b_theta") - 16.651092223153955).abs() < 1e-10);
    assert!((field(&ce, "big_gamma_b") - 33.995331626867856).abs() < 1e-10);
    field(&ce, "gamma_star");
}

#[test]
fn doubling_n_shrinks_the_printed_bound() {
    for (kind, args) in [("sq", SQ_DESK), ("ce", CE_DESK)] {
        let mut prev = f64::INFINITY;
        for n in ["50", "100", "200", "400", "inf"] {
            let v = field(&bounds(kind, args, n), "value");
            assert!(v < prev, "{kind} n={n}: {v} !< {prev}");
            prev = v;
        }
    }
}
