//! The user selection rule: with probability tau a user follows its inherent
//! preference, otherwise it picks the learner with the smallest loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::losses;
use crate::model::{Instance, JointParams, LossKind, Sample};

/// Partition masses under a joint parameter.
///
/// `a` are the quality-partition masses, `alpha` the preference masses and
/// `w = tau * alpha + (1 - tau) * a` the total mass each learner observes.
#[derive(Debug, Clone, PartialEq)]
pub struct MassEstimate {
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    pub n_eval: usize,
}

/// Index of the learner with minimal loss on `z`, lowest index on exact ties.
pub fn quality_argmin(z: &Sample, joint: &JointParams, kind: LossKind) -> Result<usize> {
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for (i, theta) in joint.iter().enumerate() {
        let l = losses::loss(kind, theta, z)?;
        if !l.is_finite() {
            return Err(Error::Numerical { step: 0, detail: format!("non-finite loss for learner {i}") });
        }
        if l < best_loss {
            best = i;
            best_loss = l;
        }
    }
    Ok(best)
}

/// Samples the learner `z` selects. Consumes exactly one uniform draw.
pub fn select_platform<R: Rng + ?Sized>(
    z: &Sample,
    joint: &JointParams,
    instance: &Instance,
    rng: &mut R,
) -> Result<usize> {
    let u: f64 = rng.random();
    if u < instance.tau {
        instance.preferred_learner(z)
    } else {
        quality_argmin(z, joint, instance.loss)
    }
}

pub fn estimate_masses(joint: &JointParams, instance: &Instance, eval: &[Sample]) -> Result<MassEstimate> {
    if eval.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    joint.check_for(instance)?;
    let m = instance.num_learners;
    let mut quality = vec![0usize; m];
    let mut pref = vec![0usize; m];
    for z in eval {
        quality[quality_argmin(z, joint, instance.loss)?] += 1;
        pref[instance.preferred_learner(z)?] += 1;
    }
    let n = eval.len() as f64;
    let a: Vec<f64> = quality.iter().map(|c| *c as f64 / n).collect();
    let alpha: Vec<f64> = pref.iter().map(|c| *c as f64 / n).collect();
    let tau = instance.tau;
    let w = a.iter().zip(&alpha).map(|(ai, al)| tau * al + (1.0 - tau) * ai).collect();
    Ok(MassEstimate { a, alpha, w, n_eval: eval.len() })
}
