//! Streaming market dynamics: plain multi-learner SGD and its probing variant.
//!
//! Every run derives independent ChaCha streams from one seed (see [`Stream`]),
//! so enabling probing never perturbs the organic sample or selection sequence.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::{evaluate_metrics, MetricsRow, ProbeTerms};
use crate::error::{invalid, Error, Result};
use crate::losses;
use crate::market::select_platform;
use crate::math;
use crate::model::{Instance, JointParams, Params, Sample};
use crate::probing::{collect_probe_dataset, ProbeDataset, ProbeRule};

/// Parameters beyond this magnitude abort the run.
pub const OVERFLOW_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `eta0 / (1 + t + t0)^gamma`.
    Polynomial {
        eta0: f64,
        t0: f64,
        gamma: f64,
    },
    Constant {
        eta: f64,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Polynomial { eta0: 0.5, t0: 10.0, gamma: 0.7 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Polynomial { eta0, t0, gamma } => {
                if !(eta0 > 0.0 && eta0.is_finite()) {
                    return Err(invalid(format!("eta0 must be positive, got {eta0}")));
                }
                if !(t0 >= 0.0 && t0.is_finite()) {
                    return Err(invalid(format!("t0 must be nonnegative, got {t0}")));
                }
                if !(gamma > 0.5 && gamma <= 1.0) {
                    return Err(invalid(format!("gamma must lie in (0.5, 1], got {gamma}")));
                }
                Ok(())
            }
            Schedule::Constant { eta } if eta > 0.0 && eta.is_finite() => Ok(()),
            Schedule::Constant { eta } => Err(invalid(format!("eta must be positive, got {eta}"))),
        }
    }

    pub fn eta(&self, t: u64) -> f64 {
        match *self {
            Schedule::Polynomial { eta0, t0, gamma } => eta0 / math::powf(1.0 + t as f64 + t0, gamma),
            Schedule::Constant { eta } => eta,
        }
    }

    /// A constant rate is not square-summable, so the convergence guarantees
    /// do not cover it.
    pub fn violates_step_size_conditions(&self) -> bool {
        matches!(self, Schedule::Constant { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Probing learners, strictly increasing.
    pub learners: Vec<usize>,
    pub p: f64,
    pub lambda: f64,
    pub n: usize,
    pub rule: ProbeRule,
}

impl ProbeConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.learners.windows(2).any(|w| w[0] >= w[1]) || self.learners.iter().any(|j| *j >= m) {
            return Err(invalid(format!(
                "probing learners {:?} must be distinct, sorted and below {m}",
                self.learners
            )));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(invalid(format!("p must be positive, got {}", self.p)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.n == 0 {
            return Err(invalid("probe dataset size must be at least 1"));
        }
        self.rule.validate(m)
    }
}

/// Independent random streams derived from a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Population = 0,
    Selection = 1,
    ProbeCovariates = 2,
    ProbeSampling = 3,
    Init = 4,
    Eval = 5,
    /// Dataset split and k-means seeding.
    Dataset = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// `Theta^0` with every coordinate uniform on `[low, high]`, drawn from the
/// seed's init stream.
pub fn init_params(instance: &Instance, low: f64, high: f64, seed: u64) -> Result<JointParams> {
    let mut rng = stream_rng(seed, Stream::Init);
    JointParams::uniform(instance.num_learners, instance.loss.param_rows(), instance.dim, low, high, &mut rng)
}

/// A fixed evaluation set drawn from the seed's eval stream.
pub fn eval_set(instance: &Instance, n: usize, seed: u64) -> Vec<Sample> {
    instance.eval_set(n, &mut stream_rng(seed, Stream::Eval))
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    pub steps: u64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Checkpoint (and evaluate) every this many steps, and always at `t = T`.
    pub metric_cadence: u64,
    /// Metrics are computed at each checkpoint when present.
    pub eval: Option<&'a [Sample]>,
    /// Keep one [`StepRecord`] per step.
    pub record_steps: bool,
}

impl<'a> RunOptions<'a> {
    pub fn new(steps: u64, seed: u64) -> Self {
        RunOptions {
            steps,
            schedule: Schedule::default(),
            seed,
            metric_cadence: steps.max(1),
            eval: None,
            record_steps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub t: u64,
    pub group: Option<usize>,
    pub preferred: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: u64,
    pub params: JointParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub schedule: Schedule,
    pub steps: u64,
    pub probe: Option<ProbeConfig>,
    pub instance_fingerprint: u64,
    pub step_size_conditions_violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Includes `t = 0` and `t = T`.
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Vec<MetricsRow>,
    pub meta: RunMeta,
    pub probe_datasets: Vec<ProbeDataset>,
    pub steps: Option<Vec<StepRecord>>,
}

impl Trajectory {
    pub fn final_params(&self) -> &JointParams {
        &self.checkpoints.last().expect("a trajectory always has a final checkpoint").params
    }
}

pub fn msgd_run(instance: &Instance, theta0: &JointParams, opts: &RunOptions<'_>) -> Result<Trajectory> {
    run(instance, theta0, opts, None)
}

pub fn msgdp_run(
    instance: &Instance,
    theta0: &JointParams,
    opts: &RunOptions<'_>,
    probe: &ProbeConfig,
) -> Result<Trajectory> {
    probe.validate(instance.num_learners)?;
    run(instance, theta0, opts, Some(probe))
}

fn guard(theta: &Params, learner: usize, t: u64) -> Result<()> {
    if theta.values().iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_LIMIT) {
        return Err(Error::Numerical {
            step: t,
            detail: format!(
                "learner {learner} parameters left [-{OVERFLOW_LIMIT:e}, {OVERFLOW_LIMIT:e}]: {:?}",
                theta.values()
            ),
        });
    }
    Ok(())
}

fn run(
    instance: &Instance,
    theta0: &JointParams,
    opts: &RunOptions<'_>,
    probe: Option<&ProbeConfig>,
) -> Result<Trajectory> {
    if opts.steps == 0 {
        return Err(invalid("a run needs at least one step"));
    }
    if opts.metric_cadence == 0 {
        return Err(invalid("metric cadence must be at least 1"));
    }
    opts.schedule.validate()?;
    theta0.check_for(instance)?;
    for (i, theta) in theta0.iter().enumerate() {
        guard(theta, i, 0)?;
    }

    let mut pop_rng = stream_rng(opts.seed, Stream::Population);
    let mut sel_rng = stream_rng(opts.seed, Stream::Selection);
    let mut probe_rng = stream_rng(opts.seed, Stream::ProbeSampling);

    let datasets = match probe {
        Some(cfg) => {
            let mut cov_rng = stream_rng(opts.seed, Stream::ProbeCovariates);
            cfg.learners
                .iter()
                .map(|&j| collect_probe_dataset(j, theta0, instance, &cfg.rule, cfg.n, &mut cov_rng))
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    let terms = probe.map(|cfg| ProbeTerms { datasets: &datasets, p: cfg.p, lambda: cfg.lambda });

    let mut joint = theta0.clone();
    let mut checkpoints = Vec::new();
    let mut metrics = Vec::new();
    let mut record = |t: u64, joint: &JointParams| -> Result<()> {
        if let Some(eval) = opts.eval {
            metrics.push(evaluate_metrics(t, joint, instance, eval, terms.as_ref())?);
        }
        checkpoints.push(Checkpoint { t, params: joint.clone() });
        Ok(())
    };
    record(0, &joint)?;

    let mut steps = opts.record_steps.then(|| Vec::with_capacity(opts.steps.min(1 << 24) as usize));
    let first = joint.get(0);
    let mut grad = Params::zeros(first.rows(), first.dim());

    for t in 0..opts.steps {
        let z = instance.draw(&mut pop_rng);
        let i = select_platform(&z, &joint, instance, &mut sel_rng).map_err(|e| at_step(e, t + 1))?;
        let eta = opts.schedule.eta(t);

        grad.values_mut().fill(0.0);
        losses::add_scaled_grad(instance.loss, joint.get(i), &z, 1.0, &mut grad)?;
        joint.get_mut(i).axpy(-eta, &grad);
        guard(joint.get(i), i, t + 1)?;

        if let Some(cfg) = probe {
            for ds in &datasets {
                let j = ds.owner;
                let q = probe_rng.random_range(0..ds.len());
                let theta = joint.get(j);
                grad.values_mut().fill(0.0);
                losses::add_scaled_grad(instance.loss, theta, &ds.sample(q), 1.0, &mut grad)?;
                grad.axpy(cfg.lambda, theta);
                joint.get_mut(j).axpy(-eta * cfg.p, &grad);
                guard(joint.get(j), j, t + 1)?;
            }
        }

        if let Some(log) = steps.as_mut() {
            log.push(StepRecord { t: t + 1, group: z.group, preferred: instance.preferred_learner(&z)?, selected: i });
        }
        let done = t + 1;
        if done % opts.metric_cadence == 0 || done == opts.steps {
            record(done, &joint)?;
        }
    }

    Ok(Trajectory {
        checkpoints,
        metrics,
        meta: RunMeta {
            seed: opts.seed,
            schedule: opts.schedule,
            steps: opts.steps,
            probe: probe.cloned(),
            instance_fingerprint: instance.fingerprint(),
            step_size_conditions_violated: opts.schedule.violates_step_size_conditions(),
        },
        probe_datasets: datasets,
        steps,
    })
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Numerical { detail, .. } => Error::Numerical { step, detail },
        other => other,
    }
}
