//! Expected Improvement over a finite pool and the random-search baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FittedSurrogate, PosteriorGaussian};
use crate::linalg::Matrix;
use crate::scalar::{normal_cdf, normal_pdf, Real};

/// EI scores within this absolute distance of the maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Ei,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    /// Row index into the pool.
    pub index: usize,
    pub score: f64,
    pub mean: f64,
    pub std: f64,
}

/// Closed-form EI for maximization at one point.
pub fn expected_improvement_point<T: Real>(mean: T, std: T, f_best: T) -> T {
    let diff = mean - f_best;
    if !(std > T::zero()) {
        return diff.max(T::zero());
    }
    let z = diff / std;
    let ei = diff * normal_cdf(z) + std * normal_pdf(z);
    ei.max(T::zero())
}

/// `EI = (μ − f*)Φ(z) + s φ(z)`, `z = (μ − f*)/s`; `max(μ − f*, 0)` where `s = 0`.
pub fn expected_improvement<T: Real>(post: &PosteriorGaussian<T>, f_best: T) -> Vec<T> {
    post.mean
        .iter()
        .zip(&post.variance)
        .map(|(&m, &v)| expected_improvement_point(m, v.max(T::zero()).sqrt(), f_best))
        .collect()
}

/// Scores pool rows `candidates` with EI. `f_best_raw` is on the raw objective
/// scale and is mapped through the surrogate's standardizer.
pub fn score_candidates<T: Real>(
    fit: &FittedSurrogate<T>,
    x: &Matrix<T>,
    candidates: &[usize],
    f_best_raw: f64,
) -> Result<Vec<AcquisitionScore>> {
    let xq = x.select_rows(candidates);
    let post = fit.posterior(&xq, false)?;
    let f_best = fit.standardizer.transform(T::lit(f_best_raw));
    let ei = expected_improvement(&post, f_best);
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(k, &index)| AcquisitionScore {
            index,
            score: ei[k].to_f64_lossy(),
            mean: post.mean[k].to_f64_lossy(),
            std: post.variance[k].sqrt().to_f64_lossy(),
        })
        .collect())
}

/// Argmax with ties (within [`TIE_TOLERANCE`]) broken uniformly under `rng`.
/// Returns the position within `scores`.
pub fn argmax_with_ties<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Exhausted);
    }
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= best - TIE_TOLERANCE).collect();
    Ok(if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] })
}

/// Picks the remaining candidate with the highest EI.
pub fn select_next<T: Real, R: Rng + ?Sized>(
    fit: &FittedSurrogate<T>,
    x: &Matrix<T>,
    remaining: &[usize],
    observed_best: f64,
    rng: &mut R,
) -> Result<AcquisitionScore> {
    if remaining.is_empty() {
        return Err(Error::Exhausted);
    }
    let scores = score_candidates(fit, x, remaining, observed_best)?;
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let k = argmax_with_ties(&raw, rng)?;
    Ok(scores[k].clone())
}

/// Uniform choice among `remaining`.
pub fn random_select<R: Rng + ?Sized>(remaining: &[usize], rng: &mut R) -> Result<usize> {
    if remaining.is_empty() {
        return Err(Error::Exhausted);
    }
    Ok(remaining[rng.random_range(0..remaining.len())])
}
