//! Offline probing: a learner queries peers on fresh covariates and stores the
//! median-aggregated answers as pseudo-labels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::losses;
use crate::math;
use crate::model::{Instance, JointParams, Label, LossKind, Sample};

/// Which peers a probing learner consults for a covariate.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeRule {
    /// Every learner, the prober included.
    MajorityGood,
    MarketLeader {
        leader: usize,
    },
    PartialKnowledge {
        subset: Vec<usize>,
    },
    /// The learner the user inherently prefers.
    PreferenceAware,
    /// Like `PreferenceAware`, but with probability `kappa_noise` a uniformly
    /// random learner other than the preferred one is queried instead.
    PreferenceAwareNoisy {
        kappa_noise: f64,
    },
}

impl ProbeRule {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ProbeRule::MarketLeader { leader } if *leader >= m => {
                Err(invalid(format!("market leader {leader} outside [0, {m})")))
            }
            ProbeRule::PartialKnowledge { subset } if subset.is_empty() || subset.iter().any(|j| *j >= m) => {
                Err(invalid(format!("partial-knowledge subset {subset:?} must be a nonempty subset of [0, {m})")))
            }
            ProbeRule::PreferenceAwareNoisy { kappa_noise } if !(0.0..=1.0).contains(kappa_noise) => {
                Err(invalid(format!("kappa_noise must lie in [0, 1], got {kappa_noise}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEntry {
    pub x: Vec<f64>,
    pub pseudo: Label,
    /// The drawn sample's real label. Diagnostics only; training never reads it.
    pub truth: Option<Label>,
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub owner: usize,
    pub entries: Vec<ProbeEntry>,
    /// Fingerprint of the parameter snapshot that produced the pseudo-labels.
    pub snapshot: u64,
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry as a training sample (pseudo-label, no preference metadata).
    pub fn sample(&self, q: usize) -> Sample {
        let e = &self.entries[q];
        Sample::new(e.x.clone(), e.pseudo.clone())
    }
}

pub fn snapshot_fingerprint(joint: &JointParams) -> u64 {
    let mut h = math::Fnv::default();
    for p in joint.iter() {
        h.u64(p.rows() as u64);
        h.u64(p.dim() as u64);
        p.values().iter().for_each(|v| h.f64(*v));
    }
    h.finish()
}

/// The peers learner `i` queries for the covariate of `probe`.
///
/// `probe` carries the covariate and, for the preference-aware rules, the
/// metadata pi needs. Its label is ignored.
pub fn choose_sources<R: Rng + ?Sized>(
    rule: &ProbeRule,
    i: usize,
    probe: &Sample,
    instance: &Instance,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let m = instance.num_learners;
    if i >= m {
        return Err(invalid(format!("learner {i} outside [0, {m})")));
    }
    rule.validate(m)?;
    Ok(match rule {
        ProbeRule::MajorityGood => (0..m).collect(),
        ProbeRule::MarketLeader { leader } => vec![*leader],
        ProbeRule::PartialKnowledge { subset } => subset.clone(),
        ProbeRule::PreferenceAware => vec![instance.preferred_learner(probe)?],
        ProbeRule::PreferenceAwareNoisy { kappa_noise } => {
            let pref = instance.preferred_learner(probe)?;
            let u: f64 = rng.random();
            if u < *kappa_noise && m > 1 {
                let mut other = rng.random_range(0..m - 1);
                if other >= pref {
                    other += 1;
                }
                vec![other]
            } else {
                vec![pref]
            }
        }
    })
}

/// Median-aggregated pseudo-label at `x` from the snapshot `joint`.
///
/// Regression: the median of the sources' predictions. Classification: the
/// softmax of the coordinatewise median of the sources' logits.
pub fn aggregate_label(x: &[f64], joint: &JointParams, sources: &[usize], kind: LossKind) -> Result<Label> {
    if sources.is_empty() {
        return Err(invalid("no probing sources"));
    }
    if let Some(j) = sources.iter().find(|j| **j >= joint.len()) {
        return Err(invalid(format!("source {j} outside [0, {})", joint.len())));
    }
    match kind {
        LossKind::SquaredRegression => {
            let mut preds = sources
                .iter()
                .map(|j| {
                    let p = joint.get(*j);
                    if p.dim() != x.len() {
                        return Err(invalid("feature dimension mismatch"));
                    }
                    Ok(math::dot(p.values(), x))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Label::Real(math::median(&mut preds)))
        }
        LossKind::CrossEntropy { classes } => {
            let z = median_logits(x, joint, sources, classes)?;
            Ok(Label::Soft(math::softmax(&z)))
        }
    }
}

/// Coordinatewise median of the sources' logits at `x`.
pub fn median_logits(x: &[f64], joint: &JointParams, sources: &[usize], classes: usize) -> Result<Vec<f64>> {
    if sources.is_empty() {
        return Err(invalid("no probing sources"));
    }
    let all = sources
        .iter()
        .map(|j| match joint.iter().nth(*j) {
            Some(p) if p.rows() == classes => losses::logits(p, x),
            Some(_) => Err(invalid("parameter rows do not match the class count")),
            None => Err(invalid(format!("source {j} outside [0, {})", joint.len()))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut column = Vec::with_capacity(all.len());
    Ok((0..classes)
        .map(|c| {
            column.clear();
            column.extend(all.iter().map(|z| z[c]));
            math::median(&mut column)
        })
        .collect())
}

/// Draws `n` covariates from the population and labels them at the frozen
/// snapshot `joint`.
pub fn collect_probe_dataset<R: Rng + ?Sized>(
    owner: usize,
    joint: &JointParams,
    instance: &Instance,
    rule: &ProbeRule,
    n: usize,
    rng: &mut R,
) -> Result<ProbeDataset> {
    if n == 0 {
        return Err(invalid("probe dataset size must be at least 1"));
    }
    joint.check_for(instance)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let drawn = instance.draw(rng);
        let sources = choose_sources(rule, owner, &drawn, instance, rng)?;
        let pseudo = aggregate_label(&drawn.x, joint, &sources, instance.loss)?;
        entries.push(ProbeEntry { x: drawn.x, pseudo, truth: Some(drawn.label), sources });
    }
    Ok(ProbeDataset { owner, entries, snapshot: snapshot_fingerprint(joint) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeDiagnostics {
    /// Mean squared pseudo-label error.
    Regression { delta_sq: f64 },
    /// Mean L1 distance between pseudo and true label vectors, and the mean
    /// cross-entropy of the true label under the pseudo-label.
    Classification { delta_l1: f64, mean_ce: f64 },
}

pub fn probe_discrepancy(dataset: &ProbeDataset, kind: LossKind) -> Result<ProbeDiagnostics> {
    if dataset.is_empty() {
        return Err(invalid("empty probe dataset"));
    }
    let n = dataset.len() as f64;
    match kind {
        LossKind::SquaredRegression => {
            let mut total = 0.0;
            for e in &dataset.entries {
                let (Label::Real(p), Some(Label::Real(y))) = (&e.pseudo, &e.truth) else {
                    return Err(invalid("regression probe entry without real pseudo and true labels"));
                };
                total += (p - y) * (p - y);
            }
            Ok(ProbeDiagnostics::Regression { delta_sq: total / n })
        }
        LossKind::CrossEntropy { classes } => {
            let (mut l1, mut ce) = (0.0, 0.0);
            for e in &dataset.entries {
                let truth = e.truth.as_ref().ok_or_else(|| invalid("probe entry without a true label"))?;
                let y = truth.class_weights(classes)?;
                let q = e.pseudo.class_weights(classes)?;
                l1 += y.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
                ce -= y.iter().zip(&q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * math::ln(*b)).sum::<f64>();
            }
            Ok(ProbeDiagnostics::Classification { delta_l1: l1 / n, mean_ce: ce / n })
        }
    }
}
