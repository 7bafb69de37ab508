//! Monte-Carlo evaluation of a joint parameter: population risk, accuracy,
//! the potentials `f` and `f_tilde`, per-learner stationarity residuals and
//! the per-checkpoint metrics row.
//!
//! All estimates average over a fixed evaluation sample. The selection branch
//! is marginalized analytically: a sample contributes with weight `tau` to its
//! preferred learner and `1 - tau` to its loss-minimizing learner.

pub mod bounds;
pub mod oracle;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::losses;
use crate::market::quality_argmin;
use crate::math;
use crate::model::{Instance, JointParams, LossKind, Params, Sample};
use crate::probing::ProbeDataset;

pub use bounds::{
    ce_risk_bound, scenario_bound_b, sq_risk_bound, CeBoundInputs, CeBoundReport, Scenario, ScenarioBound,
    ScenarioParams, SqBoundInputs, SqBoundReport,
};
pub use oracle::{bad_instance_oracle, OracleReport, TauRegime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Probing datasets with their weight `p` and ridge weight `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct ProbeTerms<'a> {
    pub datasets: &'a [ProbeDataset],
    pub p: f64,
    pub lambda: f64,
}

impl ProbeTerms<'_> {
    fn check(&self, m: usize) -> Result<()> {
        let mut seen = vec![false; m];
        for ds in self.datasets {
            if ds.owner >= m || seen[ds.owner] {
                return Err(invalid(format!("probe dataset owner {} is out of range or duplicated", ds.owner)));
            }
            if ds.is_empty() {
                return Err(invalid(format!("probe dataset of learner {} is empty", ds.owner)));
            }
            seen[ds.owner] = true;
        }
        Ok(())
    }

    fn for_learner(&self, i: usize) -> Option<&ProbeDataset> {
        self.datasets.iter().find(|d| d.owner == i)
    }
}

fn nonempty(eval: &[Sample]) -> Result<()> {
    if eval.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    Ok(())
}

/// Mean loss of `theta` over the evaluation set, with its standard error.
pub fn population_risk(theta: &Params, instance: &Instance, eval: &[Sample]) -> Result<Estimate> {
    nonempty(eval)?;
    let (mut s, mut s2) = (0.0, 0.0);
    for z in eval {
        let l = losses::loss(instance.loss, theta, z)?;
        s += l;
        s2 += l * l;
    }
    let (mean, std_err) = math::mean_se(s, s2, eval.len());
    Ok(Estimate { mean, std_err })
}

fn is_correct(theta: &Params, z: &Sample) -> Result<bool> {
    let logits = losses::logits(theta, &z.x)?;
    Ok(Some(math::argmax(&logits)) == z.label.hard_class())
}

/// Fraction of argmax predictions matching the (hard) label. With two classes
/// this is the threshold rule `1[(w_1 - w_0) . x > 0]`.
pub fn accuracy(theta: &Params, instance: &Instance, eval: &[Sample]) -> Result<f64> {
    if !instance.loss.is_classification() {
        return Err(invalid("accuracy is only defined for classification instances"));
    }
    nonempty(eval)?;
    let mut correct = 0usize;
    for z in eval {
        correct += usize::from(is_correct(theta, z)?);
    }
    Ok(correct as f64 / eval.len() as f64)
}

/// Potential `f(Theta) = E[tau * l(z; theta_pi(z)) + (1 - tau) * min_i l(z; theta_i)]`.
pub fn potential_f(joint: &JointParams, instance: &Instance, eval: &[Sample]) -> Result<f64> {
    nonempty(eval)?;
    joint.check_for(instance)?;
    let tau = instance.tau;
    let mut total = 0.0;
    for z in eval {
        let pref = instance.preferred_learner(z)?;
        let best = quality_argmin(z, joint, instance.loss)?;
        total += tau * losses::loss(instance.loss, joint.get(pref), z)?
            + (1.0 - tau) * losses::loss(instance.loss, joint.get(best), z)?;
    }
    Ok(total / eval.len() as f64)
}

/// The same potential in mixture form,
/// `sum_i [tau * alpha_i * mean_{S_i} l(theta_i) + (1 - tau) * a_i * mean_{Z_i} l(theta_i)]`.
pub fn potential_f_mixture(joint: &JointParams, instance: &Instance, eval: &[Sample]) -> Result<f64> {
    nonempty(eval)?;
    joint.check_for(instance)?;
    let m = instance.num_learners;
    let (mut pref_sum, mut pref_n) = (vec![0.0; m], vec![0usize; m]);
    let (mut qual_sum, mut qual_n) = (vec![0.0; m], vec![0usize; m]);
    for z in eval {
        let pi = instance.preferred_learner(z)?;
        pref_sum[pi] += losses::loss(instance.loss, joint.get(pi), z)?;
        pref_n[pi] += 1;
        let a = quality_argmin(z, joint, instance.loss)?;
        qual_sum[a] += losses::loss(instance.loss, joint.get(a), z)?;
        qual_n[a] += 1;
    }
    let n = eval.len() as f64;
    let tau = instance.tau;
    let mut f = 0.0;
    for i in 0..m {
        if pref_n[i] > 0 {
            f += tau * (pref_n[i] as f64 / n) * (pref_sum[i] / pref_n[i] as f64);
        }
        if qual_n[i] > 0 {
            f += (1.0 - tau) * (qual_n[i] as f64 / n) * (qual_sum[i] / qual_n[i] as f64);
        }
    }
    Ok(f)
}

/// Mean loss over a probe dataset's pseudo-labels.
pub fn probe_loss(theta: &Params, dataset: &ProbeDataset, kind: LossKind) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("empty probe dataset"));
    }
    let mut total = 0.0;
    for q in 0..dataset.len() {
        total += losses::loss(kind, theta, &dataset.sample(q))?;
    }
    Ok(total / dataset.len() as f64)
}

fn probing_penalty(joint: &JointParams, kind: LossKind, probe: &ProbeTerms<'_>) -> Result<f64> {
    let mut total = 0.0;
    for ds in probe.datasets {
        let theta = joint.get(ds.owner);
        total += probe_loss(theta, ds, kind)? + 0.5 * probe.lambda * theta.norm_sq();
    }
    Ok(probe.p * total)
}

/// `f_tilde = f + p * sum_{i in U} [probe_loss_i(theta_i) + lambda / 2 * ||theta_i||^2]`.
pub fn potential_f_tilde(
    joint: &JointParams,
    instance: &Instance,
    eval: &[Sample],
    probe: &ProbeTerms<'_>,
) -> Result<f64> {
    probe.check(instance.num_learners)?;
    Ok(potential_f(joint, instance, eval)? + probing_penalty(joint, instance.loss, probe)?)
}

/// Norm of learner i's gradient of `f` (or `f_tilde`), with a Monte-Carlo
/// standard error for the organic part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub norm: f64,
    pub std_err: f64,
}

struct GradAccumulator {
    sum: Vec<Params>,
    sum_sq: Vec<Vec<f64>>,
    scratch: Params,
}

impl GradAccumulator {
    fn new(joint: &JointParams) -> Self {
        let shape = joint.get(0);
        let zero = Params::zeros(shape.rows(), shape.dim());
        GradAccumulator {
            sum: vec![zero.clone(); joint.len()],
            sum_sq: vec![vec![0.0; shape.values().len()]; joint.len()],
            scratch: zero,
        }
    }

    fn add(&mut self, kind: LossKind, joint: &JointParams, z: &Sample, learner: usize, weight: f64) -> Result<()> {
        self.scratch.values_mut().iter_mut().for_each(|v| *v = 0.0);
        losses::add_scaled_grad(kind, joint.get(learner), z, weight, &mut self.scratch)?;
        self.sum[learner].axpy(1.0, &self.scratch);
        for (s2, g) in self.sum_sq[learner].iter_mut().zip(self.scratch.values()) {
            *s2 += g * g;
        }
        Ok(())
    }

    fn finish(
        self,
        n: usize,
        joint: &JointParams,
        kind: LossKind,
        probe: Option<&ProbeTerms<'_>>,
    ) -> Result<Vec<Residual>> {
        let nf = n as f64;
        let mut out = Vec::with_capacity(self.sum.len());
        for (i, (mut g, s2)) in self.sum.into_iter().zip(self.sum_sq).enumerate() {
            g.values_mut().iter_mut().for_each(|v| *v /= nf);
            let var: f64 = g
                .values()
                .iter()
                .zip(&s2)
                .map(|(mean, sq)| ((sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0))
                .sum();
            if let Some(ds) = probe.and_then(|p| p.for_learner(i)) {
                let p = probe.map_or(0.0, |p| p.p);
                let lambda = probe.map_or(0.0, |p| p.lambda);
                let theta = joint.get(i);
                let mut pg = Params::zeros(theta.rows(), theta.dim());
                let inv = 1.0 / ds.len() as f64;
                for q in 0..ds.len() {
                    losses::add_scaled_grad(kind, theta, &ds.sample(q), inv, &mut pg)?;
                }
                pg.axpy(lambda, theta);
                g.axpy(p, &pg);
            }
            out.push(Residual { norm: g.norm(), std_err: math::sqrt(var / nf) });
        }
        Ok(out)
    }
}

/// Per-learner gradient norm of the (probe-augmented) potential.
pub fn stationarity_residual(
    joint: &JointParams,
    instance: &Instance,
    eval: &[Sample],
    probe: Option<&ProbeTerms<'_>>,
) -> Result<Vec<Residual>> {
    nonempty(eval)?;
    joint.check_for(instance)?;
    if let Some(p) = probe {
        p.check(instance.num_learners)?;
    }
    let tau = instance.tau;
    let mut acc = GradAccumulator::new(joint);
    for z in eval {
        let pi = instance.preferred_learner(z)?;
        let a = quality_argmin(z, joint, instance.loss)?;
        if pi == a {
            acc.add(instance.loss, joint, z, pi, 1.0)?;
        } else {
            if tau > 0.0 {
                acc.add(instance.loss, joint, z, pi, tau)?;
            }
            if tau < 1.0 {
                acc.add(instance.loss, joint, z, a, 1.0 - tau)?;
            }
        }
    }
    acc.finish(eval.len(), joint, instance.loss, probe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerMetrics {
    pub global_risk: f64,
    pub global_risk_se: f64,
    pub global_accuracy: Option<f64>,
    /// Mean loss on the learner's observed mixture; `None` when it has no mass.
    pub local_loss: Option<f64>,
    pub mass_a: f64,
    pub mass_alpha: f64,
    pub stationarity_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub learners: Vec<LearnerMetrics>,
    pub potential_f: f64,
    pub potential_f_tilde: Option<f64>,
    pub stationarity_residual_max: f64,
}

/// All checkpoint metrics in a single pass over the evaluation set.
pub fn evaluate_metrics(
    t: u64,
    joint: &JointParams,
    instance: &Instance,
    eval: &[Sample],
    probe: Option<&ProbeTerms<'_>>,
) -> Result<MetricsRow> {
    nonempty(eval)?;
    joint.check_for(instance)?;
    if let Some(p) = probe {
        p.check(instance.num_learners)?;
    }
    let m = instance.num_learners;
    let tau = instance.tau;
    let kind = instance.loss;
    let mut risk = vec![0.0; m];
    let mut risk_sq = vec![0.0; m];
    let mut correct = vec![0usize; m];
    let mut local_num = vec![0.0; m];
    let mut local_den = vec![0.0; m];
    let mut count_a = vec![0usize; m];
    let mut count_alpha = vec![0usize; m];
    let mut f_total = 0.0;
    let mut acc = GradAccumulator::new(joint);
    let mut ls = vec![0.0; m];

    for z in eval {
        let mut best = 0;
        for i in 0..m {
            let l = losses::loss(kind, joint.get(i), z)?;
            if !l.is_finite() {
                return Err(crate::Error::Numerical { step: t, detail: format!("non-finite loss for learner {i}") });
            }
            ls[i] = l;
            risk[i] += l;
            risk_sq[i] += l * l;
            if l < ls[best] {
                best = i;
            }
            if kind.is_classification() {
                correct[i] += usize::from(is_correct(joint.get(i), z)?);
            }
        }
        let pi = instance.preferred_learner(z)?;
        count_a[best] += 1;
        count_alpha[pi] += 1;
        f_total += tau * ls[pi] + (1.0 - tau) * ls[best];
        local_num[pi] += tau * ls[pi];
        local_den[pi] += tau;
        local_num[best] += (1.0 - tau) * ls[best];
        local_den[best] += 1.0 - tau;
        if pi == best {
            acc.add(kind, joint, z, pi, 1.0)?;
        } else {
            if tau > 0.0 {
                acc.add(kind, joint, z, pi, tau)?;
            }
            if tau < 1.0 {
                acc.add(kind, joint, z, best, 1.0 - tau)?;
            }
        }
    }

    let n = eval.len();
    let nf = n as f64;
    let residuals = acc.finish(n, joint, kind, probe)?;
    let potential_f = f_total / nf;
    let potential_f_tilde = match probe {
        Some(p) => Some(potential_f + probing_penalty(joint, kind, p)?),
        None => None,
    };
    let learners: Vec<LearnerMetrics> = (0..m)
        .map(|i| {
            let (mean, se) = math::mean_se(risk[i], risk_sq[i], n);
            LearnerMetrics {
                global_risk: mean,
                global_risk_se: se,
                global_accuracy: kind.is_classification().then(|| correct[i] as f64 / nf),
                local_loss: (local_den[i] > 0.0).then(|| local_num[i] / local_den[i]),
                mass_a: count_a[i] as f64 / nf,
                mass_alpha: count_alpha[i] as f64 / nf,
                stationarity_residual: residuals[i].norm,
            }
        })
        .collect();
    let stationarity_residual_max = residuals.iter().map(|r| r.norm).fold(0.0, f64::max);
    Ok(MetricsRow { t, learners, potential_f, potential_f_tilde, stationarity_residual_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_bad_instance, gen_mixture_instance, SyntheticSpec};
    use crate::model::{EmpiricalData, Label, Population, PreferenceFn};
    use crate::probing::{collect_probe_dataset, ProbeEntry, ProbeRule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gap_instance(tau: f64) -> (Instance, f64, f64) {
        let alpha = 0.1 / 4.1;
        let c = math::sqrt(4.1) - 1.0;
        (gen_bad_instance(alpha, c).unwrap().with_tau(tau).unwrap(), alpha, c)
    }

    #[test]
    fn bad_instance_risks_match_closed_forms() {
        let (inst, alpha, c) = gap_instance(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eval = inst.eval_set(1_000_000, &mut rng);
        let cp1 = (c + 1.0) * (c + 1.0);
        let r1 = population_risk(&Params::scalar(c), &inst, &eval).unwrap();
        assert!((r1.mean - (1.0 - alpha) * cp1).abs() <= 3.0 * r1.std_err, "{r1:?}");
        let star = alpha * c - (1.0 - alpha);
        let rs = population_risk(&Params::scalar(star), &inst, &eval).unwrap();
        assert!((rs.mean - alpha * (1.0 - alpha) * cp1).abs() <= 3.0 * rs.std_err, "{rs:?}");
        assert!(population_risk(&Params::scalar(c), &inst, &[]).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_risk() {
        let spec =
            SyntheticSpec::MixtureRegression { slopes: vec![vec![0.7]], noise: 0.0, weights: vec![1.0], radius: 1.0 };
        let inst = gen_mixture_instance(&spec, 0.5).unwrap();
        let eval = inst.eval_set(1000, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(population_risk(&Params::scalar(0.7), &inst, &eval).unwrap().mean < 1e-28);
    }

    fn binary_instance(rows: Vec<Sample>) -> Instance {
        Instance::new(
            Population::Empirical(EmpiricalData { train: rows, test: vec![] }),
            LossKind::CrossEntropy { classes: 2 },
            PreferenceFn::ExplicitColumn,
            2,
            0.5,
            10.0,
            None,
            2,
        )
        .unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Sample> = (0..2000)
            .map(|i| {
                let c = i % 2;
                let sign = if c == 0 { 1.0 } else { -1.0 };
                Sample::new(vec![sign * rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)], Label::Class(c))
                    .with_group(c)
            })
            .collect();
        let inst = binary_instance(rows.clone());
        // W = 0: every prediction is class 0, labels balanced
        let acc0 = accuracy(&Params::zeros(2, 2), &inst, &rows).unwrap();
        assert_eq!(acc0, 0.5);
        let sep = Params::from_values(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(accuracy(&sep, &inst, &rows).unwrap(), 1.0);

        let random: Vec<Sample> = (0..20_000)
            .map(|_| {
                Sample::new(
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    Label::Class(rng.random_range(0..2)),
                )
                .with_group(0)
            })
            .collect();
        let a = accuracy(&sep, &inst, &random).unwrap();
        assert!((a - 0.5).abs() < 3.0 * math::sqrt(0.25 / 20_000.0), "{a}");

        let (reg, _, _) = gap_instance(0.5);
        assert!(accuracy(&Params::scalar(0.0), &reg, &[Sample::new(vec![0.0], Label::Real(0.0))]).is_err());
    }

    #[test]
    fn single_learner_potential_is_risk() {
        let spec = SyntheticSpec::MixtureRegression {
            slopes: vec![vec![0.7, -0.2]],
            noise: 0.3,
            weights: vec![1.0],
            radius: 2.0,
        };
        let inst = gen_mixture_instance(&spec, 0.5).unwrap();
        let eval = inst.eval_set(5000, &mut ChaCha8Rng::seed_from_u64(1));
        let theta = Params::vector(vec![0.1, 0.4]).unwrap();
        let joint = JointParams::new(vec![theta.clone()]).unwrap();
        let f = potential_f(&joint, &inst, &eval).unwrap();
        let r = population_risk(&theta, &inst, &eval).unwrap().mean;
        assert!((f - r).abs() < 1e-12);

        let (bad, _, _) = gap_instance(0.0);
        let eval = bad.eval_set(5000, &mut ChaCha8Rng::seed_from_u64(2));
        let same = JointParams::scalars(&[0.3, 0.3]).unwrap();
        let f = potential_f(&same, &bad, &eval).unwrap();
        let r = population_risk(&Params::scalar(0.3), &bad, &eval).unwrap().mean;
        assert!((f - r).abs() < 1e-12);
    }

    #[test]
    fn specialists_are_a_zero_potential_stationary_point() {
        let (inst, _, c) = gap_instance(0.5);
        let eval = inst.eval_set(100_000, &mut ChaCha8Rng::seed_from_u64(4));
        let joint = JointParams::scalars(&[c, -1.0]).unwrap();
        assert_eq!(potential_f(&joint, &inst, &eval).unwrap(), 0.0);
        for r in stationarity_residual(&joint, &inst, &eval, None).unwrap() {
            assert!(r.norm <= 2.0 * r.std_err + 1e-15, "{r:?}");
            assert_eq!(r.norm, 0.0);
        }
    }

    #[test]
    fn potential_identity_holds_exactly_on_empirical_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = SyntheticSpec::MixtureRegression {
            slopes: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]],
            noise: 0.2,
            weights: vec![0.3, 0.3, 0.4],
            radius: 2.0,
        };
        let proc = gen_mixture_instance(&spec, 0.37).unwrap();
        let rows = proc.eval_set(3000, &mut rng);
        for _ in 0..10 {
            let joint = JointParams::uniform(3, 1, 2, -2.0, 2.0, &mut rng).unwrap();
            let a = potential_f(&joint, &proc, &rows).unwrap();
            let b = potential_f_mixture(&joint, &proc, &rows).unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn least_squares_solution_is_stationary_for_one_learner() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Sample> = (0..200)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let y = 0.5 * x[0] - 1.5 * x[1] + rng.random_range(-0.3..0.3);
                Sample::new(x, Label::Real(y)).with_group(0)
            })
            .collect();
        // normal equations (2x2) solved by Cramer's rule
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in &rows {
            let y = s.label.as_real().unwrap();
            a11 += s.x[0] * s.x[0];
            a12 += s.x[0] * s.x[1];
            a22 += s.x[1] * s.x[1];
            b1 += s.x[0] * y;
            b2 += s.x[1] * y;
        }
        let det = a11 * a22 - a12 * a12;
        let theta = vec![(b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det];
        let inst = Instance::new(
            Population::Empirical(EmpiricalData { train: rows.clone(), test: vec![] }),
            LossKind::SquaredRegression,
            PreferenceFn::ExplicitColumn,
            1,
            0.5,
            2.0,
            Some(5.0),
            2,
        )
        .unwrap();
        let joint = JointParams::new(vec![Params::vector(theta).unwrap()]).unwrap();
        let r = stationarity_residual(&joint, &inst, &rows, None).unwrap();
        assert!(r[0].norm <= 1e-8, "{r:?}");

        let far = JointParams::new(vec![Params::vector(vec![3.0, 3.0]).unwrap()]).unwrap();
        assert!(stationarity_residual(&far, &inst, &rows, None).unwrap()[0].norm > 0.1);
    }

    #[test]
    fn residual_ci_at_specialists_contains_zero() {
        // Bootstrap over evaluation samples of the organic gradient mean.
        let (inst, _, c) = gap_instance(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let eval = inst.eval_set(2000, &mut rng);
        let joint = JointParams::scalars(&[c, -1.0]).unwrap();
        let mut stats = Vec::new();
        for _ in 0..200 {
            let resample: Vec<Sample> =
                (0..eval.len()).map(|_| eval[rng.random_range(0..eval.len())].clone()).collect();
            stats.push(stationarity_residual(&joint, &inst, &resample, None).unwrap()[0].norm);
        }
        stats.sort_by(f64::total_cmp);
        assert!(stats[4] <= 0.0 && stats[194] >= 0.0);
    }

    fn probe_set(owner: usize, xs: &[f64], ys: &[f64]) -> ProbeDataset {
        ProbeDataset {
            owner,
            entries: xs
                .iter()
                .zip(ys)
                .map(|(x, y)| ProbeEntry { x: vec![*x], pseudo: Label::Real(*y), truth: None, sources: vec![0] })
                .collect(),
            snapshot: 0,
        }
    }

    #[test]
    fn tilde_potential_terms() {
        let (inst, _, _) = gap_instance(0.5);
        let eval = inst.eval_set(2000, &mut ChaCha8Rng::seed_from_u64(12));
        let joint = JointParams::scalars(&[0.5, -0.3]).unwrap();
        let f = potential_f(&joint, &inst, &eval).unwrap();
        let none = ProbeTerms { datasets: &[], p: 1.0, lambda: 0.1 };
        assert_eq!(potential_f_tilde(&joint, &inst, &eval, &none).unwrap(), f);

        // learner 0 fits its pseudo-labels exactly
        let fitted = [probe_set(0, &[1.0, -0.5, 0.2], &[0.5, -0.25, 0.1])];
        let exact = ProbeTerms { datasets: &fitted, p: 1.0, lambda: 0.0 };
        assert!((potential_f_tilde(&joint, &inst, &eval, &exact).unwrap() - f).abs() < 1e-15);

        let off = [probe_set(0, &[1.0, 1.0], &[1.0, 2.0])];
        let t1 = potential_f_tilde(&joint, &inst, &eval, &ProbeTerms { datasets: &off, p: 1.0, lambda: 0.3 }).unwrap();
        let t2 = potential_f_tilde(&joint, &inst, &eval, &ProbeTerms { datasets: &off, p: 2.0, lambda: 0.3 }).unwrap();
        assert!(((t2 - f) - 2.0 * (t1 - f)).abs() < 1e-12);

        let dup = [probe_set(0, &[1.0], &[1.0]), probe_set(0, &[1.0], &[1.0])];
        assert!(potential_f_tilde(&joint, &inst, &eval, &ProbeTerms { datasets: &dup, p: 1.0, lambda: 0.0 }).is_err());
        let stray = [probe_set(5, &[1.0], &[1.0])];
        assert!(potential_f_tilde(&joint, &inst, &eval, &ProbeTerms { datasets: &stray, p: 1.0, lambda: 0.0 }).is_err());
    }

    #[test]
    fn metrics_row_agrees_with_standalone_operations() {
        let (inst, _, c) = gap_instance(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let eval = inst.eval_set(20_000, &mut rng);
        let joint = JointParams::scalars(&[0.2, -0.7]).unwrap();
        let ds = [collect_probe_dataset(
            0,
            &JointParams::scalars(&[c, -1.0]).unwrap(),
            &inst,
            &ProbeRule::PreferenceAware,
            50,
            &mut rng,
        )
        .unwrap()];
        let probe = ProbeTerms { datasets: &ds, p: 0.7, lambda: 0.01 };
        let row = evaluate_metrics(17, &joint, &inst, &eval, Some(&probe)).unwrap();
        assert_eq!(row.t, 17);
        let res = stationarity_residual(&joint, &inst, &eval, Some(&probe)).unwrap();
        let masses = crate::market::estimate_masses(&joint, &inst, &eval).unwrap();
        for (i, l) in row.learners.iter().enumerate() {
            let r = population_risk(joint.get(i), &inst, &eval).unwrap();
            assert!((l.global_risk - r.mean).abs() < 1e-12);
            assert!((l.stationarity_residual - res[i].norm).abs() < 1e-12);
            assert_eq!(l.mass_a, masses.a[i]);
            assert_eq!(l.mass_alpha, masses.alpha[i]);
            assert!(l.global_accuracy.is_none());
        }
        assert!((row.potential_f - potential_f(&joint, &inst, &eval).unwrap()).abs() < 1e-12);
        let ft = potential_f_tilde(&joint, &inst, &eval, &probe).unwrap();
        assert!((row.potential_f_tilde.unwrap() - ft).abs() < 1e-12);
        // local losses recombine into f: sum_i w_i * local_i = f
        let f_from_local: f64 = (0..2).map(|i| masses.w[i] * row.learners[i].local_loss.unwrap()).sum();
        assert!((f_from_local - row.potential_f).abs() < 1e-12);
    }
}
