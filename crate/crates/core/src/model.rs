//! Shared domain types: labels, samples, parameters, preferences and the
//! market instance `(population, loss, preference, tau)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::datagen::Sampler;
use crate::error::{invalid, Result};
use crate::math;

/// Tolerance used when checking that soft labels lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SquaredRegression,
    CrossEntropy { classes: usize },
}

impl LossKind {
    pub fn cross_entropy(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid(format!("cross-entropy needs at least 2 classes, got {classes}")));
        }
        Ok(LossKind::CrossEntropy { classes })
    }

    /// Rows of the parameter matrix: 1 for regression, K for classification.
    pub fn param_rows(self) -> usize {
        match self {
            LossKind::SquaredRegression => 1,
            LossKind::CrossEntropy { classes } => classes,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::CrossEntropy { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Real(f64),
    Class(usize),
    /// A probability vector over the K classes (pseudo-labels).
    Soft(Vec<f64>),
}

impl Label {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Label::Real(y) => Some(*y),
            _ => None,
        }
    }

    /// Class weight vector for cross-entropy; one-hot for hard labels.
    pub fn class_weights(&self, classes: usize) -> Result<Vec<f64>> {
        match self {
            Label::Class(c) if *c < classes => {
                let mut w = vec![0.0; classes];
                w[*c] = 1.0;
                Ok(w)
            }
            Label::Soft(q) if q.len() == classes => Ok(q.clone()),
            other => Err(invalid(format!("label {other:?} is not a {classes}-class label"))),
        }
    }

    /// Hard class used for accuracy: the class itself or the argmax of a soft label.
    pub fn hard_class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Soft(q) => Some(math::argmax(q)),
            Label::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: Label,
    /// Generator subpopulation or dataset preference column, when known.
    pub group: Option<usize>,
}

impl Sample {
    pub fn new(x: Vec<f64>, label: Label) -> Self {
        Sample { x, label, group: None }
    }

    pub fn with_group(mut self, group: usize) -> Self {
        self.group = Some(group);
        self
    }
}

/// Parameters of one linear learner, stored row-major as `rows x dim`.
///
/// Regression uses a single row (`theta`), classification one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Params {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Params { rows, dim, values: vec![0.0; rows * dim] }
    }

    pub fn from_values(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 || values.len() != rows * dim {
            return Err(invalid(format!("parameter shape {rows}x{dim} does not match {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Params { rows, dim, values })
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let dim = values.len();
        Self::from_values(1, dim, values)
    }

    pub fn scalar(theta: f64) -> Self {
        Params { rows: 1, dim: 1, values: vec![theta] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.rows == other.rows && self.dim == other.dim
    }

    /// Euclidean norm (Frobenius for matrices).
    pub fn norm(&self) -> f64 {
        math::norm2(&self.values)
    }

    pub fn norm_sq(&self) -> f64 {
        math::dot(&self.values, &self.values)
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Params) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn check_shape(&self, loss: LossKind, dim: usize) -> Result<()> {
        if self.rows != loss.param_rows() || self.dim != dim {
            return Err(invalid(format!(
                "parameters are {}x{}, expected {}x{dim}",
                self.rows,
                self.dim,
                loss.param_rows()
            )));
        }
        Ok(())
    }
}

/// The stacked parameters of all learners.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    learners: Vec<Params>,
}

impl JointParams {
    pub fn new(learners: Vec<Params>) -> Result<Self> {
        let Some(first) = learners.first() else {
            return Err(invalid("joint parameters need at least one learner"));
        };
        if learners.iter().any(|p| !p.same_shape(first)) {
            return Err(invalid("all learners must share one parameter shape"));
        }
        Ok(JointParams { learners })
    }

    /// One-dimensional regression learners, e.g. `(C, -1)` for the specialists.
    pub fn scalars(thetas: &[f64]) -> Result<Self> {
        Self::new(thetas.iter().map(|t| Params::scalar(*t)).collect())
    }

    /// Every coordinate drawn uniformly from `[low, high]`.
    pub fn uniform<R: Rng + ?Sized>(
        m: usize,
        rows: usize,
        dim: usize,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if low > high || !low.is_finite() || !high.is_finite() {
            return Err(invalid(format!("bad uniform init range [{low}, {high}]")));
        }
        let learners = (0..m)
            .map(|_| {
                let values = (0..rows * dim).map(|_| low + (high - low) * rng.random::<f64>()).collect();
                Params { rows, dim, values }
            })
            .collect();
        Self::new(learners)
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn get(&self, i: usize) -> &Params {
        &self.learners[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Params {
        &mut self.learners[i]
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Params> {
        self.learners.iter()
    }

    pub fn check_for(&self, instance: &Instance) -> Result<()> {
        if self.len() != instance.num_learners {
            return Err(invalid(format!(
                "{} learners in parameters, instance has {}",
                self.len(),
                instance.num_learners
            )));
        }
        self.learners[0].check_shape(instance.loss, instance.dim)
    }
}

/// The inherent preference map pi.
#[derive(Debug, Clone, PartialEq)]
pub enum PreferenceFn {
    /// The generator's subpopulation index stored in `Sample::group`.
    SubpopulationIndex,
    /// Nearest centroid in feature space, lowest index on ties.
    NearestCentroid { centroids: Vec<Vec<f64>> },
    /// A per-sample preference column stored in `Sample::group`.
    ExplicitColumn,
}

impl PreferenceFn {
    pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centroids.iter().enumerate() {
            let d = math::dist2_sq(c, x);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    Sampler(Sampler),
    Empirical(EmpiricalData),
}

impl Population {
    /// One i.i.d. draw; empirical populations are resampled with replacement.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        match self {
            Population::Sampler(s) => s.draw(rng),
            Population::Empirical(data) => data.train[rng.random_range(0..data.train.len())].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub population: Population,
    pub loss: LossKind,
    pub pref: PreferenceFn,
    pub num_learners: usize,
    pub tau: f64,
    /// Covariate norm bound R.
    pub radius: f64,
    /// Label bound for regression; `None` for classification.
    pub y_max: Option<f64>,
    pub dim: usize,
}

impl Instance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        population: Population,
        loss: LossKind,
        pref: PreferenceFn,
        num_learners: usize,
        tau: f64,
        radius: f64,
        y_max: Option<f64>,
        dim: usize,
    ) -> Result<Self> {
        if num_learners == 0 {
            return Err(invalid("at least one learner is required"));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("covariate bound R must be positive, got {radius}")));
        }
        if let LossKind::CrossEntropy { classes } = loss {
            if classes < 2 {
                return Err(invalid("cross-entropy needs at least 2 classes"));
            }
        }
        let y_max = match loss {
            LossKind::SquaredRegression => match y_max {
                Some(y) if y > 0.0 && y.is_finite() => Some(y),
                other => return Err(invalid(format!("regression needs a positive Y_max, got {other:?}"))),
            },
            LossKind::CrossEntropy { .. } => None,
        };
        if dim == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        if let PreferenceFn::NearestCentroid { centroids } = &pref {
            if centroids.len() != num_learners || centroids.iter().any(|c| c.len() != dim) {
                return Err(invalid("need one centroid of length d per learner"));
            }
        }
        let instance = Instance { population, loss, pref, num_learners, tau, radius, y_max, dim };
        if let Population::Empirical(data) = &instance.population {
            if data.train.is_empty() {
                return Err(invalid("empirical population has no training samples"));
            }
            for s in &data.train {
                instance.check_sample(s)?;
            }
            // R and Y_max describe the training population; held-out rows may exceed them.
            for s in &data.test {
                instance.check_sample_format(s)?;
            }
        }
        Ok(instance)
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        let mut out = self.clone();
        out.tau = tau;
        Ok(out)
    }

    /// Checks the covariate and label bounds and the preference metadata.
    pub fn check_sample(&self, s: &Sample) -> Result<()> {
        self.check_sample_format(s)?;
        let norm = math::norm2(&s.x);
        if norm > self.radius * (1.0 + 1e-12) {
            return Err(invalid(format!("feature norm {norm} exceeds R = {}", self.radius)));
        }
        if let (Some(bound), Label::Real(y)) = (self.y_max, &s.label) {
            if y.abs() > bound * (1.0 + 1e-12) {
                return Err(invalid(format!("label {y} exceeds Y_max = {bound}")));
            }
        }
        Ok(())
    }

    /// Dimension, label kind and preference metadata, without the R / Y_max bounds.
    pub fn check_sample_format(&self, s: &Sample) -> Result<()> {
        if s.x.len() != self.dim {
            return Err(invalid(format!("sample has {} features, expected {}", s.x.len(), self.dim)));
        }
        if s.x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite feature"));
        }
        match (self.loss, &s.label) {
            (LossKind::SquaredRegression, Label::Real(y)) if y.is_finite() => {}
            (LossKind::CrossEntropy { classes }, Label::Class(c)) if *c < classes => {}
            (LossKind::CrossEntropy { classes }, Label::Soft(q)) if q.len() == classes => {
                let total: f64 = q.iter().sum();
                if q.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > SIMPLEX_TOL {
                    return Err(invalid("soft label is not a probability vector"));
                }
            }
            (kind, label) => return Err(invalid(format!("label {label:?} does not match {kind:?}"))),
        }
        if matches!(self.pref, PreferenceFn::SubpopulationIndex | PreferenceFn::ExplicitColumn) {
            match s.group {
                Some(g) if g < self.num_learners => {}
                other => return Err(invalid(format!("preference index {other:?} outside [0, {})", self.num_learners))),
            }
        }
        Ok(())
    }

    /// The inherent preference pi of a sample.
    pub fn preferred_learner(&self, s: &Sample) -> Result<usize> {
        if s.x.len() != self.dim {
            return Err(invalid(format!("sample has {} features, expected {}", s.x.len(), self.dim)));
        }
        match &self.pref {
            PreferenceFn::NearestCentroid { centroids } => Ok(PreferenceFn::nearest(centroids, &s.x)),
            PreferenceFn::SubpopulationIndex | PreferenceFn::ExplicitColumn => match s.group {
                Some(g) if g < self.num_learners => Ok(g),
                other => Err(invalid(format!("preference index {other:?} outside [0, {})", self.num_learners))),
            },
        }
    }

    /// Preference masses alpha over the empirical training population.
    pub fn preference_masses(&self) -> Result<Vec<f64>> {
        match &self.population {
            Population::Empirical(data) => self.preference_masses_of(&data.train),
            Population::Sampler(_) => {
                Err(invalid("procedural population: supply an evaluation sample to preference_masses_of"))
            }
        }
    }

    /// Preference masses alpha by counting over `samples`.
    pub fn preference_masses_of(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(invalid("cannot compute preference masses of an empty population"));
        }
        let mut counts = vec![0usize; self.num_learners];
        for s in samples {
            counts[self.preferred_learner(s)?] += 1;
        }
        let n = samples.len() as f64;
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        self.population.draw(rng)
    }

    /// A fixed evaluation set: the test split (or the whole training set when
    /// there is no test split) for empirical data, otherwise `n` fresh draws.
    pub fn eval_set<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Sample> {
        match &self.population {
            Population::Empirical(data) if !data.test.is_empty() => data.test.clone(),
            Population::Empirical(data) => data.train.clone(),
            Population::Sampler(s) => (0..n).map(|_| s.draw(rng)).collect(),
        }
    }

    /// Stable fingerprint of the instance definition (not of its samples).
    pub fn fingerprint(&self) -> u64 {
        let mut h = math::Fnv::default();
        match &self.population {
            Population::Sampler(s) => s.hash_into(&mut h),
            Population::Empirical(data) => {
                h.u64(data.train.len() as u64);
                h.u64(data.test.len() as u64);
                for s in data.train.iter().chain(&data.test) {
                    s.x.iter().for_each(|v| h.f64(*v));
                    match &s.label {
                        Label::Real(y) => h.f64(*y),
                        Label::Class(c) => h.u64(*c as u64),
                        Label::Soft(q) => q.iter().for_each(|v| h.f64(*v)),
                    }
                    h.u64(s.group.map_or(u64::MAX, |g| g as u64));
                }
            }
        }
        h.u64(self.loss.param_rows() as u64);
        h.u64(self.num_learners as u64);
        h.f64(self.tau);
        h.f64(self.radius);
        h.f64(self.y_max.unwrap_or(0.0));
        if let PreferenceFn::NearestCentroid { centroids } = &self.pref {
            centroids.iter().flatten().for_each(|v| h.f64(*v));
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_bad_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn centroid_instance() -> Instance {
        let train = vec![Sample::new(vec![0.5], Label::Real(0.0))];
        Instance::new(
            Population::Empirical(EmpiricalData { train, test: vec![] }),
            LossKind::SquaredRegression,
            PreferenceFn::NearestCentroid { centroids: vec![vec![-1.0], vec![1.0]] },
            2,
            0.5,
            1.0,
            Some(1.0),
            1,
        )
        .unwrap()
    }

    #[test]
    fn nearest_centroid_preference() {
        let inst = centroid_instance();
        let s = |x: f64| Sample::new(vec![x], Label::Real(0.0));
        assert_eq!(inst.preferred_learner(&s(-0.3)).unwrap(), 0);
        assert_eq!(inst.preferred_learner(&s(0.3)).unwrap(), 1);
        // equidistant: lowest index
        assert_eq!(inst.preferred_learner(&s(0.0)).unwrap(), 0);
        assert!(inst.preferred_learner(&Sample::new(vec![0.0, 1.0], Label::Real(0.0))).is_err());
    }

    #[test]
    fn explicit_column_passes_through() {
        let train: Vec<Sample> = (0..4).map(|g| Sample::new(vec![0.0], Label::Real(0.0)).with_group(g)).collect();
        let inst = Instance::new(
            Population::Empirical(EmpiricalData { train, test: vec![] }),
            LossKind::SquaredRegression,
            PreferenceFn::ExplicitColumn,
            4,
            0.5,
            1.0,
            Some(1.0),
            1,
        )
        .unwrap();
        let s = Sample::new(vec![0.2], Label::Real(0.0)).with_group(3);
        assert_eq!(inst.preferred_learner(&s).unwrap(), 3);
        assert_eq!(inst.preference_masses().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn masses_by_counting() {
        let mk = |g: usize| Sample::new(vec![0.0], Label::Real(0.0)).with_group(g);
        let inst = gen_bad_instance(0.25, 2.0).unwrap();
        let masses = inst.preference_masses_of(&[mk(0), mk(0), mk(1), mk(1)]).unwrap();
        assert_eq!(masses, vec![0.5, 0.5]);
        assert!(inst.preference_masses_of(&[]).is_err());
        assert!(inst.preference_masses().is_err());

        let train: Vec<Sample> = (0..5).map(|_| mk(2)).collect();
        let inst3 = Instance::new(
            Population::Empirical(EmpiricalData { train, test: vec![] }),
            LossKind::SquaredRegression,
            PreferenceFn::ExplicitColumn,
            3,
            0.5,
            1.0,
            Some(1.0),
            1,
        )
        .unwrap();
        assert_eq!(inst3.preference_masses().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn bad_instance_masses_concentrate() {
        // Binomial oracle: alpha_hat ~ N(alpha, alpha(1-alpha)/N).
        let alpha = 0.25;
        let inst = gen_bad_instance(alpha, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let eval = inst.eval_set(n, &mut rng);
        let masses = inst.preference_masses_of(&eval).unwrap();
        let sigma = math::sqrt(alpha * (1.0 - alpha) / n as f64);
        assert!((masses[0] - alpha).abs() <= 3.0 * sigma, "{masses:?}");
        assert!((masses[0] + masses[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instance_rejects_bad_configuration() {
        let data = || {
            Population::Empirical(EmpiricalData { train: vec![Sample::new(vec![0.0], Label::Real(0.0))], test: vec![] })
        };
        let sq = LossKind::SquaredRegression;
        let pref = || PreferenceFn::NearestCentroid { centroids: vec![vec![0.0], vec![1.0]] };
        assert!(Instance::new(data(), sq, pref(), 2, 1.5, 1.0, Some(1.0), 1).is_err());
        assert!(Instance::new(data(), sq, pref(), 2, 0.5, 0.0, Some(1.0), 1).is_err());
        assert!(Instance::new(data(), sq, pref(), 2, 0.5, 1.0, None, 1).is_err());
        assert!(LossKind::cross_entropy(1).is_err());
        let far = Population::Empirical(EmpiricalData {
            train: vec![Sample::new(vec![2.0], Label::Real(0.0))],
            test: vec![],
        });
        assert!(Instance::new(far, sq, pref(), 2, 0.5, 1.0, Some(1.0), 1).is_err());
    }

    #[test]
    fn joint_params_shapes() {
        assert!(JointParams::new(vec![]).is_err());
        assert!(JointParams::new(vec![Params::scalar(1.0), Params::zeros(2, 1)]).is_err());
        assert!(Params::from_values(1, 2, vec![f64::NAN, 0.0]).is_err());
        let j = JointParams::scalars(&[1.0, -1.0]).unwrap();
        assert_eq!(j.len(), 2);
        assert_eq!(j.get(1).values(), &[-1.0]);
    }
}
