//! Instance construction: the one-dimensional bad-outcome family, Gaussian
//! mixture populations, empirical datasets and k-means preferences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::math;
use crate::model::{EmpiricalData, Instance, Label, LossKind, Params, Population, PreferenceFn, Sample};

/// Half-width of the unit-variance uniform covariate distribution.
pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Gaussian noise in the regression mixture is truncated at this many sigmas.
pub const NOISE_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticSpec {
    /// Two subpopulations with `x ~ Unif[-sqrt 3, sqrt 3]`, labels `y = C x`
    /// (weight alpha) and `y = -x` (weight 1 - alpha).
    BadOutcome { alpha: f64, c: f64 },
    /// `slopes[i]` is the true regression vector of subpopulation i. Covariates
    /// are standard normal truncated to `||x|| <= radius`.
    MixtureRegression { slopes: Vec<Vec<f64>>, noise: f64, weights: Vec<f64>, radius: f64 },
    /// `means[i][c]` is the mean of class c within subpopulation i; classes are
    /// equally likely and `x = mean + spread * g`, `||g|| <= sqrt(d) + 3`.
    MixtureClassification { means: Vec<Vec<Vec<f64>>>, spread: f64, weights: Vec<f64> },
}

impl SyntheticSpec {
    /// The bad-outcome instance with Bayes risk `epsilon` and specialist gap
    /// `gamma`: `C = sqrt(gamma + epsilon) - 1`, `alpha = epsilon / (C + 1)^2`.
    pub fn bad_outcome_from_gap(epsilon: f64, gamma: f64) -> Result<Self> {
        if !(epsilon > 0.0 && gamma > 0.0) {
            return Err(invalid("epsilon and gamma must be positive"));
        }
        let c = math::sqrt(gamma + epsilon) - 1.0;
        Ok(SyntheticSpec::BadOutcome { alpha: epsilon / (gamma + epsilon), c })
    }

    pub fn num_groups(&self) -> usize {
        match self {
            SyntheticSpec::BadOutcome { .. } => 2,
            SyntheticSpec::MixtureRegression { weights, .. } | SyntheticSpec::MixtureClassification { weights, .. } => {
                weights.len()
            }
        }
    }
}

/// A validated procedural population.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    spec: SyntheticSpec,
    groups: WeightedIndex<f64>,
    dim: usize,
}

fn check_weights(weights: &[f64]) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("subpopulation weights {weights:?} are not a probability vector")));
    }
    Ok(())
}

fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl Sampler {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        let (weights, dim) = match &spec {
            SyntheticSpec::BadOutcome { alpha, c } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
                }
                if !(*c > 1.0 && c.is_finite()) {
                    return Err(invalid(format!("C must exceed 1, got {c}")));
                }
                (vec![*alpha, 1.0 - *alpha], 1)
            }
            SyntheticSpec::MixtureRegression { slopes, noise, weights, radius } => {
                check_weights(weights)?;
                let d = slopes.first().map_or(0, Vec::len);
                if slopes.len() != weights.len() || d == 0 || slopes.iter().any(|s| s.len() != d) {
                    return Err(invalid("need one slope vector of a common positive length per subpopulation"));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(invalid("noise must be a finite non-negative number"));
                }
                // the rejection sampler needs a reasonable acceptance rate
                if !radius.is_finite() || *radius < math::sqrt(d as f64) {
                    return Err(invalid(format!(
                        "radius must be finite and at least sqrt(d) = {}",
                        math::sqrt(d as f64)
                    )));
                }
                (weights.clone(), d)
            }
            SyntheticSpec::MixtureClassification { means, spread, weights } => {
                check_weights(weights)?;
                let k = means.first().map_or(0, Vec::len);
                let d = means.first().and_then(|m| m.first()).map_or(0, Vec::len);
                if means.len() != weights.len()
                    || k < 2
                    || d == 0
                    || means.iter().any(|m| m.len() != k || m.iter().any(|v| v.len() != d))
                {
                    return Err(invalid("need K >= 2 class means of a common positive length per subpopulation"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(invalid("spread must be a finite non-negative number"));
                }
                (weights.clone(), d)
            }
        };
        let groups = WeightedIndex::new(&weights).map_err(|e| invalid(format!("bad weights: {e}")))?;
        Ok(Sampler { spec, groups, dim })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loss_kind(&self) -> LossKind {
        match &self.spec {
            SyntheticSpec::MixtureClassification { means, .. } => LossKind::CrossEntropy { classes: means[0].len() },
            _ => LossKind::SquaredRegression,
        }
    }

    /// Covariate bound R implied by the spec.
    pub fn radius(&self) -> f64 {
        match &self.spec {
            SyntheticSpec::BadOutcome { .. } => SQRT3,
            SyntheticSpec::MixtureRegression { radius, .. } => *radius,
            SyntheticSpec::MixtureClassification { means, spread, .. } => {
                let max_mean = means.iter().flatten().map(|v| math::norm2(v)).fold(0.0, f64::max);
                max_mean + spread * (math::sqrt(self.dim as f64) + 3.0)
            }
        }
    }

    /// Label bound Y_max for regression specs.
    pub fn y_max(&self) -> Option<f64> {
        match &self.spec {
            SyntheticSpec::BadOutcome { c, .. } => Some(c * SQRT3),
            SyntheticSpec::MixtureRegression { slopes, noise, radius, .. } => {
                let max_slope = slopes.iter().map(|s| math::norm2(s)).fold(0.0, f64::max);
                let y = radius * max_slope + NOISE_TRUNCATION * noise;
                // a fully noiseless zero-slope mixture still needs a positive bound
                Some(if y > 0.0 { y } else { 1.0 })
            }
            SyntheticSpec::MixtureClassification { .. } => None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let g = self.groups.sample(rng);
        match &self.spec {
            SyntheticSpec::BadOutcome { c, .. } => {
                let x = rng.random_range(-SQRT3..=SQRT3);
                let y = if g == 0 { c * x } else { -x };
                Sample::new(vec![x], Label::Real(y)).with_group(g)
            }
            SyntheticSpec::MixtureRegression { slopes, noise, radius, .. } => {
                let x = loop {
                    let x = standard_normal_vec(self.dim, rng);
                    if math::norm2(&x) <= *radius {
                        break x;
                    }
                };
                let e = loop {
                    let e: f64 = rng.sample(StandardNormal);
                    if e.abs() <= NOISE_TRUNCATION {
                        break e;
                    }
                };
                let y = math::dot(&slopes[g], &x) + noise * e;
                Sample::new(x, Label::Real(y)).with_group(g)
            }
            SyntheticSpec::MixtureClassification { means, spread, .. } => {
                let k = means[g].len();
                let class = rng.random_range(0..k);
                let limit = math::sqrt(self.dim as f64) + 3.0;
                let noise = loop {
                    let v = standard_normal_vec(self.dim, rng);
                    if math::norm2(&v) <= limit {
                        break v;
                    }
                };
                let x = means[g][class].iter().zip(&noise).map(|(m, e)| m + spread * e).collect();
                Sample::new(x, Label::Class(class)).with_group(g)
            }
        }
    }

    pub(crate) fn hash_into(&self, h: &mut math::Fnv) {
        match &self.spec {
            SyntheticSpec::BadOutcome { alpha, c } => {
                h.u64(1);
                h.f64(*alpha);
                h.f64(*c);
            }
            SyntheticSpec::MixtureRegression { slopes, noise, weights, radius } => {
                h.u64(2);
                slopes.iter().flatten().chain(weights).for_each(|v| h.f64(*v));
                h.f64(*noise);
                h.f64(*radius);
            }
            SyntheticSpec::MixtureClassification { means, spread, weights } => {
                h.u64(3);
                means.iter().flatten().flatten().chain(weights).for_each(|v| h.f64(*v));
                h.f64(*spread);
            }
        }
    }
}

/// The bad-outcome market: two learners, squared loss, pi = subpopulation.
/// The returned instance has tau = 0.5; use [`Instance::with_tau`] to change it.
pub fn gen_bad_instance(alpha: f64, c: f64) -> Result<Instance> {
    gen_mixture_instance(&SyntheticSpec::BadOutcome { alpha, c }, 0.5)
}

/// A procedural instance with one learner per subpopulation and pi equal to
/// the subpopulation index.
pub fn gen_mixture_instance(spec: &SyntheticSpec, tau: f64) -> Result<Instance> {
    let sampler = Sampler::new(spec.clone())?;
    let (loss, radius, y_max, dim) = (sampler.loss_kind(), sampler.radius(), sampler.y_max(), sampler.dim());
    Instance::new(
        Population::Sampler(sampler),
        loss,
        PreferenceFn::SubpopulationIndex,
        spec.num_groups(),
        tau,
        radius,
        y_max,
        dim,
    )
}

/// Parameters that are exact per-subpopulation least-squares fits for
/// regression specs (`(C, -1)` for the bad-outcome family).
pub fn specialist_params(spec: &SyntheticSpec) -> Result<crate::model::JointParams> {
    match spec {
        SyntheticSpec::BadOutcome { c, .. } => crate::model::JointParams::scalars(&[*c, -1.0]),
        SyntheticSpec::MixtureRegression { slopes, .. } => {
            crate::model::JointParams::new(slopes.iter().map(|s| Params::vector(s.clone())).collect::<Result<_>>()?)
        }
        SyntheticSpec::MixtureClassification { .. } => {
            Err(invalid("specialists have no closed form for classification mixtures"))
        }
    }
}

/// Per-feature affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero variance are centred but not rescaled.
    pub fn fit(rows: &[Sample]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(invalid("cannot standardize an empty split"));
        };
        let d = first.x.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for s in rows {
            mean.iter_mut().zip(&s.x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for s in rows {
            var.iter_mut().zip(s.x.iter().zip(&mean)).for_each(|(a, (v, m))| *a += (v - m) * (v - m) / n);
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { math::sqrt(v) } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, s: &mut Sample) {
        for ((v, m), sc) in s.x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / sc;
        }
    }
}

/// Where an empirical instance takes its preferences from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreferenceSource {
    /// `Sample::group` holds a dataset column.
    Column,
    /// Induced by k-means with one cluster per learner.
    KMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub loss: LossKind,
    pub num_learners: usize,
    pub tau: f64,
    pub test_fraction: f64,
    pub standardize: bool,
    pub preferences: PreferenceSource,
}

/// Splits, standardizes and wraps raw rows into an empirical instance.
///
/// The split is a seeded permutation, standardization statistics come from
/// the training split only, R is the largest training-split feature norm and
/// Y_max (regression) the largest training-split label magnitude.
pub fn build_empirical_instance<R: Rng + ?Sized>(
    rows: Vec<Sample>,
    opts: &DatasetOptions,
    rng: &mut R,
) -> Result<Instance> {
    if rows.is_empty() {
        return Err(invalid("dataset has no rows"));
    }
    if !(0.0..1.0).contains(&opts.test_fraction) {
        return Err(invalid(format!("test fraction must lie in [0, 1), got {}", opts.test_fraction)));
    }
    let d = rows[0].x.len();
    if d == 0 || rows.iter().any(|s| s.x.len() != d) {
        return Err(invalid("rows have inconsistent feature counts"));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let n_test = libm::round(rows.len() as f64 * opts.test_fraction) as usize;
    let n_test = n_test.min(rows.len() - 1);
    let mut slots: Vec<Option<Sample>> = rows.into_iter().map(Some).collect();
    let mut test: Vec<Sample> = order[..n_test].iter().map(|i| slots[*i].take().unwrap()).collect();
    let mut train: Vec<Sample> = order[n_test..].iter().map(|i| slots[*i].take().unwrap()).collect();

    if opts.standardize {
        let st = Standardizer::fit(&train)?;
        train.iter_mut().chain(test.iter_mut()).for_each(|s| st.apply(s));
    }
    let radius = train.iter().map(|s| math::norm2(&s.x)).fold(0.0, f64::max);
    let radius = if radius > 0.0 { radius } else { 1.0 };
    let y_max = match opts.loss {
        LossKind::SquaredRegression => {
            let y = train.iter().filter_map(|s| s.label.as_real()).map(f64::abs).fold(0.0, f64::max);
            Some(if y > 0.0 { y } else { 1.0 })
        }
        LossKind::CrossEntropy { .. } => None,
    };
    let pref = match opts.preferences {
        PreferenceSource::Column => PreferenceFn::ExplicitColumn,
        PreferenceSource::KMeans => {
            let features: Vec<Vec<f64>> = train.iter().map(|s| s.x.clone()).collect();
            kmeans_preferences(&features, opts.num_learners, rng)?
        }
    };
    Instance::new(
        Population::Empirical(EmpiricalData { train, test }),
        opts.loss,
        pref,
        opts.num_learners,
        opts.tau,
        radius,
        y_max,
        d,
    )
}

pub const KMEANS_MAX_ITERS: usize = 50;
pub const KMEANS_TOL: f64 = 1e-6;

fn distinct_points(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    });
    sorted.dedup();
    sorted.len()
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Returns centroids relabeled by descending cluster size (ties keep the
/// seeding order), so the largest cluster prefers learner 0.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(invalid("k-means needs k >= 1"));
    }
    let distinct = distinct_points(points);
    if k > distinct {
        return Err(invalid(format!("k = {k} exceeds the {distinct} distinct points")));
    }
    let d = points[0].len();

    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest_sq: Vec<f64> = points.iter().map(|p| math::dist2_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let pick = WeightedIndex::new(&nearest_sq).map_err(|e| invalid(format!("k-means++ seeding: {e}")))?.sample(rng);
        let c = points[pick].clone();
        nearest_sq.iter_mut().zip(points).for_each(|(dsq, p)| *dsq = dsq.min(math::dist2_sq(p, &c)));
        centroids.push(c);
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = PreferenceFn::nearest(&centroids, p);
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assign.iter().zip(points) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut moved: f64 = 0.0;
        for ((c, s), n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // an empty cluster keeps its previous centroid
            if *n > 0 {
                let next: Vec<f64> = s.into_iter().map(|v| v / *n as f64).collect();
                moved = moved.max(math::sqrt(math::dist2_sq(c, &next)));
                *c = next;
            }
        }
        if moved < KMEANS_TOL {
            break;
        }
    }

    let mut counts = vec![0usize; k];
    for p in points {
        counts[PreferenceFn::nearest(&centroids, p)] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    Ok(order.into_iter().map(|i| centroids[i].clone()).collect())
}

pub fn kmeans_preferences<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<PreferenceFn> {
    Ok(PreferenceFn::NearestCentroid { centroids: kmeans(points, k, rng)? })
}
