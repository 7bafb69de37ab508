use mlmarket::config::{ExperimentConfig, InitSection, SweepParameter};
use mlmarket::CliError;

const BASE: &str = r#"
[instance]
kind = "bad_outcome"
epsilon = 0.1
gamma = 4.0

[dynamics]
steps = 1000
"#;

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_toml(text) {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn defaults() {
    let cfg =
        ExperimentConfig::from_toml(&format!("{BASE}\n[probing]\nlearners = [0]\np = 0.5\nrule = \"majority_good\"\n"))
            .unwrap();
    let p = cfg.probing.unwrap();
    assert_eq!(p.lambda, 1e-3);
    assert_eq!(p.n, 100);
    assert_eq!(p.kappa_conf, 0.05);
    assert_eq!(cfg.market.tau, 0.5);
    assert_eq!(cfg.dynamics.seed, 0);
    assert_eq!(cfg.dynamics.cadence(), 10);
    assert_eq!(cfg.dynamics.init, InitSection::Uniform { low: -1.0, high: 1.0 });
}

#[test]
fn unknown_keys_are_rejected_with_their_name() {
    let msg = config_error(&format!("{BASE}stesp = 5\n"));
    assert!(msg.contains("stesp"), "{msg}");
    let msg = config_error(&BASE.replace("gamma = 4.0", "gamma = 4.0\nepsilom = 1"));
    assert!(msg.contains("epsilom"), "{msg}");
    let msg = config_error(&format!("{BASE}\n[outptu]\ndir = \"x\"\n"));
    assert!(msg.contains("outptu"), "{msg}");
}

#[test]
fn bad_outcome_needs_exactly_one_parameterization() {
    let msg = config_error(&BASE.replace("gamma = 4.0", "gamma = 4.0\nalpha = 0.1\nc = 2.0"));
    assert!(msg.contains("bad_outcome"), "{msg}");
    assert!(ExperimentConfig::from_toml(&BASE.replace("epsilon = 0.1\ngamma = 4.0", "alpha = 0.1\nc = 2.0")).is_ok());
}

#[test]
fn field_checks_name_the_field() {
    assert!(config_error(&BASE.replace("steps = 1000", "steps = 0")).contains("dynamics.steps"));
    assert!(config_error(&format!("{BASE}\n[market]\ntau = 1.5\n")).contains("market.tau"));
    let rule = format!("{BASE}\n[probing]\nlearners = [0]\np = 0.5\nrule = \"market_leader\"\n");
    assert!(config_error(&rule).contains("probing.leader"));
    let sweep = format!("{BASE}\n[sweep]\nparameter = \"p\"\nvalues = [0.1]\n");
    assert!(config_error(&sweep).contains("probing"));
    let sweep = format!("{BASE}\n[sweep]\nparameter = \"alpha\"\nvalues = [0.1]\n");
    config_error(&sweep);
    let csv = "[instance]\nkind = \"csv\"\npath = \"d.csv\"\nfeatures = 2\n[dynamics]\nsteps = 5\n";
    assert!(config_error(csv).contains("market.learners"));
}

#[test]
fn grid_points() {
    let text = format!(
        "{BASE}\n[probing]\nlearners = [0]\np = 0.5\nrule = \"preference_aware_noisy\"\nkappa_noise = 0.1\n[sweep]\nparameter = \"kappa_noise\"\nvalues = [0.0, 0.5]\nseeds = 3\n"
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let pt = cfg.at_grid_point(SweepParameter::KappaNoise, 0.5, 12);
    assert_eq!(pt.probing.as_ref().unwrap().kappa_noise, Some(0.5));
    assert_eq!(pt.dynamics.seed, 12);
    assert!(pt.sweep.is_none());
    assert!(cfg.at_grid_point(SweepParameter::P, 0.0, 0).probing.is_none());
    assert_eq!(cfg.at_grid_point(SweepParameter::N, 7.0, 0).probing.unwrap().n, 7);
    assert_eq!(cfg.at_grid_point(SweepParameter::Tau, 0.2, 0).market.tau, 0.2);
}

#[test]
fn serde_round_trip_is_lossless() {
    let text = format!(
        "{BASE}\n[probing]\nlearners = [1]\np = 0.3\nrule = \"partial_knowledge\"\nsubset = [0, 1]\nr = 0.25\n"
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let back: ExperimentConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
