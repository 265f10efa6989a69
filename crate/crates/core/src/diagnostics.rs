//! Evaluation metrics and representation analyses.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FittedSurrogate, PosteriorGaussian};
use crate::linalg::{dist, Matrix};
use crate::scalar::Real;
use crate::store::CandidatePool;

/// Exact pairwise means up to this many points; sampled beyond.
pub const EXACT_PAIR_LIMIT: usize = 2000;
pub const SAMPLED_PAIRS: usize = 2_000_000;
pub const NLPD_VARIANCE_FLOOR: f64 = 1e-12;

/// Reference set of the pool's global top-quantile candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageSpec {
    pub quantile: f64,
    pub reference_set: HashSet<usize>,
}

impl CoverageSpec {
    /// Top `ceil(quantile · n)` rows by label; equal labels are ordered by row index.
    pub fn new(pool: &CandidatePool, quantile: f64) -> Result<Self> {
        let y = pool.labels()?;
        if !(quantile > 0.0 && quantile <= 1.0) {
            return Err(Error::Invalid(format!("coverage quantile must be in (0, 1], got {quantile}")));
        }
        let k = top_count(y.len(), quantile);
        Ok(Self { quantile, reference_set: top_indices(y, k).into_iter().collect() })
    }

    pub fn size(&self) -> usize {
        self.reference_set.len()
    }
}

/// `ceil(q · n)`, guarded against floating-point noise just above an integer.
pub fn top_count(n: usize, q: f64) -> usize {
    let raw = q * n as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    (k as usize).clamp(1, n)
}

fn top_indices(y: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Fraction of the reference set among `evaluated` rows.
pub fn topk_coverage(evaluated: impl IntoIterator<Item = usize>, spec: &CoverageSpec) -> f64 {
    let found: HashSet<usize> = evaluated.into_iter().filter(|i| spec.reference_set.contains(i)).collect();
    found.len() as f64 / spec.size() as f64
}

/// Coefficient of determination; `None` when `y_true` has zero variance.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<Option<f64>> {
    let w = vec![1.0; y_true.len()];
    weighted_r2_with(y_true, y_pred, &w)
}

/// R² with weight `w_hi` on the top `ceil(top_quantile · n)` points of `y_true`
/// and `w_lo` elsewhere, in both sums, around the weighted mean.
pub fn weighted_r2(y_true: &[f64], y_pred: &[f64], top_quantile: f64, w_hi: f64, w_lo: f64) -> Result<Option<f64>> {
    if y_true.is_empty() {
        return Err(Error::InsufficientData("empty input".into()));
    }
    let top: HashSet<usize> = top_indices(y_true, top_count(y_true.len(), top_quantile)).into_iter().collect();
    let w: Vec<f64> = (0..y_true.len()).map(|i| if top.contains(&i) { w_hi } else { w_lo }).collect();
    weighted_r2_with(y_true, y_pred, &w)
}

fn weighted_r2_with(y_true: &[f64], y_pred: &[f64], w: &[f64]) -> Result<Option<f64>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), found: y_pred.len() });
    }
    if y_true.len() < 2 {
        return Err(Error::InsufficientData("R² needs at least 2 points".into()));
    }
    let sw: f64 = w.iter().sum();
    let mean = y_true.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let ss_tot: f64 = y_true.iter().zip(w).map(|(y, w)| w * (y - mean).powi(2)).sum();
    let ss_res: f64 = y_true.iter().zip(y_pred).zip(w).map(|((y, p), w)| w * (y - p).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - ss_res / ss_tot))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nlpd {
    pub value: f64,
    /// Some variance was raised to [`NLPD_VARIANCE_FLOOR`].
    pub floored: bool,
}

/// Mean of `½(log 2πv + (y − μ)²/v)`. Pass a noise-inclusive, raw-scale posterior.
pub fn nlpd<T: Real>(y_true: &[f64], post: &PosteriorGaussian<T>) -> Result<Nlpd> {
    if y_true.len() != post.len() {
        return Err(Error::DimensionMismatch { expected: post.len(), found: y_true.len() });
    }
    if y_true.is_empty() {
        return Err(Error::InsufficientData("empty input".into()));
    }
    let mut floored = false;
    let mut total = 0.0;
    for (i, &y) in y_true.iter().enumerate() {
        let mut v = post.variance[i].to_f64_lossy();
        if !(v > NLPD_VARIANCE_FLOOR) {
            v = NLPD_VARIANCE_FLOOR;
            floored = true;
        }
        let mu = post.mean[i].to_f64_lossy();
        total += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y - mu).powi(2) / v);
    }
    Ok(Nlpd { value: total / y_true.len() as f64, floored })
}

/// Mean over unordered pairs with nonzero distance, exact up to
/// [`EXACT_PAIR_LIMIT`] rows and over [`SAMPLED_PAIRS`] seeded draws beyond.
pub fn mean_pairwise_distance<T: Real>(z: &Matrix<T>, seed: u64) -> Result<f64> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::InsufficientData("pairwise distances need at least 2 points".into()));
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    let mut add = |d: f64| {
        if d > 0.0 {
            sum += d;
            count += 1;
        }
    };
    if n <= EXACT_PAIR_LIMIT {
        for i in 0..n {
            for j in 0..i {
                add(dist(z.row(i), z.row(j)).to_f64_lossy());
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            add(dist(z.row(i), z.row(j)).to_f64_lossy());
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData("all points coincide".into()));
    }
    Ok(sum / count as f64)
}

/// `ℓ / mean pairwise distance` of the given representation.
pub fn smoothness_ratio_of<T: Real>(lengthscale: f64, z: &Matrix<T>, seed: u64) -> Result<f64> {
    Ok(lengthscale / mean_pairwise_distance(z, seed)?)
}

/// Smoothness ratio of a fitted surrogate over a pool, measured in the space
/// the kernel sees (raw embeddings for fixed fits, `g_φ(X)` for deep fits).
pub fn smoothness_ratio<T: Real>(fit: &FittedSurrogate<T>, pool: &CandidatePool, seed: u64) -> Result<f64> {
    let z = fit.transform(&pool.features::<T>())?;
    smoothness_ratio_of(fit.hypers.lengthscale().to_f64_lossy(), &z, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl FamilyStats {
    fn of(d: &[f64]) -> Option<Self> {
        if d.is_empty() {
            return None;
        }
        Some(Self { count: d.len(), mean: d.iter().sum::<f64>() / d.len() as f64, median: median(d) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPairSummary {
    pub n_high: usize,
    pub n_low: usize,
    pub high_high: Option<FamilyStats>,
    pub high_low: Option<FamilyStats>,
    pub low_low: Option<FamilyStats>,
    /// Mean high-low distance over mean within-class distance. `+∞` when the
    /// within-class mean is zero; `None` when a required family is absent.
    pub separation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPairDistances {
    pub high_high: Option<Vec<f64>>,
    pub high_low: Option<Vec<f64>>,
    pub low_low: Option<Vec<f64>>,
    pub summary: ClassPairSummary,
}

/// Distance multisets between high-output, low-output and mixed pairs.
///
/// High points have `y` at or above the `ceil(hi_q·n)`-th largest value, low
/// points at or below the `ceil(lo_q·n)`-th smallest; where the two overlap
/// (e.g. constant `y`) everything is one high class.
pub fn class_pair_distances<T: Real>(z: &Matrix<T>, y: &[T], hi_q: f64, lo_q: f64) -> Result<ClassPairDistances> {
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: z.nrows(), found: y.len() });
    }
    if !(hi_q > 0.0 && lo_q > 0.0 && hi_q + lo_q <= 1.0) {
        return Err(Error::Invalid(format!("class quantiles must be positive with sum ≤ 1, got {hi_q} + {lo_q}")));
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::InsufficientData("no points".into()));
    }
    let yf: Vec<f64> = y.iter().map(|v| v.to_f64_lossy()).collect();
    let mut sorted = yf.clone();
    sorted.sort_by(f64::total_cmp);
    let t_hi = sorted[n - top_count(n, hi_q)];
    let t_lo = sorted[top_count(n, lo_q) - 1];
    let high: Vec<usize> = (0..n).filter(|&i| yf[i] >= t_hi).collect();
    let low: Vec<usize> = (0..n).filter(|&i| yf[i] <= t_lo && yf[i] < t_hi).collect();

    let within = |idx: &[usize]| -> Option<Vec<f64>> {
        (idx.len() >= 2).then(|| {
            let mut d = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
            for a in 0..idx.len() {
                for b in 0..a {
                    d.push(dist(z.row(idx[a]), z.row(idx[b])).to_f64_lossy());
                }
            }
            d
        })
    };
    let high_high = within(&high);
    let low_low = within(&low);
    let high_low = (!high.is_empty() && !low.is_empty()).then(|| {
        let mut d = Vec::with_capacity(high.len() * low.len());
        for &a in &high {
            for &b in &low {
                d.push(dist(z.row(a), z.row(b)).to_f64_lossy());
            }
        }
        d
    });

    let separation = high_low.as_ref().and_then(|hl| {
        let within_all: Vec<f64> = high_high.iter().chain(low_low.iter()).flatten().copied().collect();
        if within_all.is_empty() {
            return None;
        }
        let cross = hl.iter().sum::<f64>() / hl.len() as f64;
        let inner = within_all.iter().sum::<f64>() / within_all.len() as f64;
        Some(if inner > 0.0 { cross / inner } else { f64::INFINITY })
    });
    let summary = ClassPairSummary {
        n_high: high.len(),
        n_low: low.len(),
        high_high: high_high.as_deref().and_then(FamilyStats::of),
        high_low: high_low.as_deref().and_then(FamilyStats::of),
        low_low: low_low.as_deref().and_then(FamilyStats::of),
        separation,
    };
    Ok(ClassPairDistances { high_high, high_low, low_low, summary })
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); 0 for a single seed.
    pub std: f64,
    pub single_seed: bool,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("aggregation needs at least one seed".into()));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Ok(Self { n, mean, std, single_seed: n == 1 })
    }

    /// `42.602 ± 13.111` style.
    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Per-seed metric values plus their aggregates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// metric name → (seed, value), in insertion order per metric.
    pub per_seed: BTreeMap<String, Vec<(u64, f64)>>,
    pub aggregate: BTreeMap<String, MetricStats>,
}

/// Aggregates per-seed metric maps.
pub fn aggregate(per_seed: &[(u64, BTreeMap<String, f64>)]) -> Result<MetricReport> {
    if per_seed.is_empty() {
        return Err(Error::InsufficientData("aggregation needs at least one seed".into()));
    }
    let mut report = MetricReport::default();
    for (seed, metrics) in per_seed {
        for (name, &v) in metrics {
            report.per_seed.entry(name.clone()).or_default().push((*seed, v));
        }
    }
    for (name, vals) in &report.per_seed {
        // Summation order fixed by seed so permuted inputs aggregate identically.
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let v: Vec<f64> = sorted.iter().map(|p| p.1).collect();
        report.aggregate.insert(name.clone(), MetricStats::of(&v)?);
    }
    Ok(report)
}

/// Average ranks (1-based), ties share their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 1e-3 {
        return (d, 1.0);
    }
    // Kolmogorov survival function.
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Equal-width histogram for external plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }

    /// Rows `family,bin_lo,bin_hi,count`.
    pub fn write_csv<W: Write>(&self, family: &str, w: &mut W) -> std::io::Result<()> {
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{family},{},{},{c}", self.edges[k], self.edges[k + 1])?;
        }
        Ok(())
    }
}
