//! Exact GP regression with a Matérn-5/2 kernel, constant mean and Gaussian
//! noise: marginal log-likelihood, its analytic gradients and the posterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deep::{ProjectionMap, ProjectionRecord};
use crate::error::{Error, Result};
use crate::linalg::{dist, Cholesky, Matrix};
use crate::optim::{maximize, AscentOptions};
use crate::scalar::Real;
use crate::store::{standardize_targets, Standardizer};

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter ladder, multiplied by the signal variance.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// `θ = {ℓ, σ², σ_n², c}`. Positive parameters are held as natural logs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams<T> {
    log_lengthscale: T,
    log_signal_variance: T,
    log_noise_variance: T,
    mean: T,
}

impl<T: Real> Default for GpHyperparams<T> {
    /// `ℓ = 1`, `σ² = 1`, `σ_n² = 1e-4`, `c = 0`.
    fn default() -> Self {
        Self::new(T::one(), T::one(), T::lit(1e-4), T::zero()).unwrap()
    }
}

impl<T: Real> GpHyperparams<T> {
    pub fn new(lengthscale: T, signal_variance: T, noise_variance: T, mean: T) -> Result<Self> {
        for (name, v) in
            [("lengthscale", lengthscale), ("signal_variance", signal_variance), ("noise_variance", noise_variance)]
        {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !mean.is_finite() {
            return Err(Error::Invalid("mean must be finite".into()));
        }
        Ok(Self {
            log_lengthscale: lengthscale.ln(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
            mean,
        })
    }

    /// Order: `[log ℓ, log σ², log σ_n², c]`.
    pub fn from_unconstrained(p: [T; 4]) -> Self {
        Self { log_lengthscale: p[0], log_signal_variance: p[1], log_noise_variance: p[2], mean: p[3] }
    }

    pub fn to_unconstrained(&self) -> [T; 4] {
        [self.log_lengthscale, self.log_signal_variance, self.log_noise_variance, self.mean]
    }

    pub fn lengthscale(&self) -> T {
        self.log_lengthscale.exp()
    }

    pub fn signal_variance(&self) -> T {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> T {
        self.log_noise_variance.exp()
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn cast<U: Real>(&self) -> GpHyperparams<U> {
        GpHyperparams::from_unconstrained(self.to_unconstrained().map(|v| U::lit(v.to_f64_lossy())))
    }
}

/// Matérn-5/2 as a function of the Euclidean distance.
#[inline]
pub fn matern52_dist<T: Real>(d: T, lengthscale: T, signal_variance: T) -> T {
    let r = T::lit(SQRT5) * d / lengthscale;
    signal_variance * (T::one() + r + r * r / T::lit(3.0)) * (-r).exp()
}

/// `σ²(1 + √5 d/ℓ + 5d²/(3ℓ²)) exp(−√5 d/ℓ)` with `d = ‖a − b‖₂`.
pub fn matern52<T: Real>(a: &[T], b: &[T], lengthscale: T, signal_variance: T) -> T {
    assert_eq!(a.len(), b.len(), "matern52 inputs differ in length");
    matern52_dist(dist(a, b), lengthscale, signal_variance)
}

/// Noise-free cross-covariance between the rows of `a` and `b`.
pub fn cross_covariance<T: Real>(a: &Matrix<T>, b: &Matrix<T>, theta: &GpHyperparams<T>) -> Matrix<T> {
    let (ls, sv) = (theta.lengthscale(), theta.signal_variance());
    Matrix::from_fn(a.nrows(), b.nrows(), |i, j| matern52(a.row(i), b.row(j), ls, sv))
}

/// Kernel matrix of the training inputs with its noisy Cholesky factor.
#[derive(Clone, Debug)]
pub struct KernelMatrix<T> {
    /// Noise-free kernel; exactly symmetric with `σ²` on the diagonal.
    pub k: Matrix<T>,
    /// Absolute jitter added on top of the noise variance.
    pub jitter: T,
    /// `K + (σ_n² + jitter) I = L Lᵀ`.
    pub chol: Cholesky<T>,
}

pub fn kernel_matrix<T: Real>(x: &Matrix<T>, theta: &GpHyperparams<T>) -> Result<KernelMatrix<T>> {
    kernel_matrix_with_floor(x, theta, 0.0)
}

/// As [`kernel_matrix`], skipping ladder rungs below `min_rel_jitter`.
pub fn kernel_matrix_with_floor<T: Real>(
    x: &Matrix<T>,
    theta: &GpHyperparams<T>,
    min_rel_jitter: f64,
) -> Result<KernelMatrix<T>> {
    let n = x.nrows();
    let (ls, sv, nv) = (theta.lengthscale(), theta.signal_variance(), theta.noise_variance());
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sv;
        for j in 0..i {
            let v = matern52(x.row(i), x.row(j), ls, sv);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if !k.is_finite() {
        return Err(Error::SingularKernel { condition_estimate: f64::INFINITY });
    }
    let mut ladder: Vec<f64> = JITTER_LADDER.iter().copied().filter(|&j| j >= min_rel_jitter).collect();
    if ladder.is_empty() {
        ladder.push(min_rel_jitter);
    }
    for rel in ladder.iter().copied() {
        let jitter = T::lit(rel) * sv;
        let mut noisy = k.clone();
        for i in 0..n {
            noisy[(i, i)] += nv + jitter;
        }
        if let Some(chol) = noisy.cholesky() {
            return Ok(KernelMatrix { k, jitter, chol });
        }
    }
    // Gershgorin bound on the largest eigenvalue over the smallest diagonal shift tried.
    let lmax = (0..n).map(|i| k.row(i).iter().map(|v| v.abs()).sum::<T>()).fold(T::zero(), T::max).to_f64_lossy();
    let shift = nv.to_f64_lossy() + ladder.last().copied().unwrap_or(0.0) * sv.to_f64_lossy();
    Err(Error::SingularKernel { condition_estimate: (lmax + shift) / shift })
}

/// Marginal log-likelihood `−½(ỹᵀK⁻¹ỹ + log|K| + n log 2π)`, `ỹ = y − c1`.
pub fn mll<T: Real>(x: &Matrix<T>, y: &[T], theta: &GpHyperparams<T>) -> Result<T> {
    check_xy(x, y)?;
    let km = kernel_matrix(x, theta)?;
    let resid: Vec<T> = y.iter().map(|&v| v - theta.mean()).collect();
    let alpha = km.chol.solve(&resid);
    Ok(mll_from_parts(&resid, &alpha, &km.chol))
}

fn mll_from_parts<T: Real>(resid: &[T], alpha: &[T], chol: &Cholesky<T>) -> T {
    let n = T::lit(resid.len() as f64);
    let fit: T = resid.iter().zip(alpha).map(|(&r, &a)| r * a).sum();
    -T::lit(0.5) * (fit + chol.log_det() + n * T::lit(LN_2PI))
}

fn check_xy<T: Real>(x: &Matrix<T>, y: &[T]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("no training points".into()));
    }
    Ok(())
}

/// MLL and its gradients.
#[derive(Clone, Debug)]
pub struct MllEval<T> {
    pub value: T,
    /// `∂/∂[log ℓ, log σ², log σ_n², c]`.
    pub hyper_grad: [T; 4],
    /// `∂/∂Z` for every input coordinate, when requested.
    pub input_grad: Option<Matrix<T>>,
    pub jitter: T,
}

/// Gradient of the MLL with respect to the unconstrained hyperparameters.
pub fn mll_grad<T: Real>(x: &Matrix<T>, y: &[T], theta: &GpHyperparams<T>) -> Result<MllEval<T>> {
    mll_eval(x, y, theta, false, 0.0)
}

/// Value plus gradients with respect to `θ` and optionally the inputs.
///
/// With `W = ααᵀ − K⁻¹`, `α = K⁻¹ỹ`, each kernel parameter `p` gets
/// `½ tr(W ∂K/∂p)`; the mean gets `1ᵀα`. Input gradients follow from
/// `∂k/∂z_i = g(d)(z_i − z_j)` with `g = −σ²(5/3ℓ²)(1 + r)e^{−r}`.
pub fn mll_eval<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    theta: &GpHyperparams<T>,
    input_grad: bool,
    min_rel_jitter: f64,
) -> Result<MllEval<T>> {
    check_xy(x, y)?;
    let n = x.nrows();
    let km = kernel_matrix_with_floor(x, theta, min_rel_jitter)?;
    let resid: Vec<T> = y.iter().map(|&v| v - theta.mean()).collect();
    let alpha = km.chol.solve(&resid);
    let value = mll_from_parts(&resid, &alpha, &km.chol);
    let kinv = km.chol.inverse();

    let (ls, sv, nv) = (theta.lengthscale(), theta.signal_variance(), theta.noise_variance());
    let half = T::lit(0.5);
    let third = T::lit(1.0 / 3.0);
    let sqrt5 = T::lit(SQRT5);
    let five_thirds = T::lit(5.0 / 3.0);

    let mut d_log_ls = T::zero();
    let mut d_log_sv = T::zero();
    let mut trace_w = T::zero();
    let mut zgrad = input_grad.then(|| Matrix::zeros(n, x.ncols()));

    for i in 0..n {
        let wii = alpha[i] * alpha[i] - kinv[(i, i)];
        trace_w += wii;
        // Diagonal: K_ii = σ² (+ jitter, which also scales with σ²).
        d_log_sv += wii * (sv + km.jitter);
        for j in 0..i {
            let wij = alpha[i] * alpha[j] - kinv[(i, j)];
            let d = dist(x.row(i), x.row(j));
            let r = sqrt5 * d / ls;
            let e = (-r).exp();
            let kij = km.k[(i, j)];
            // Off-diagonal pairs appear twice in the symmetric trace.
            d_log_sv += T::lit(2.0) * wij * kij;
            d_log_ls += T::lit(2.0) * wij * sv * r * r * third * (T::one() + r) * e;
            if let Some(zg) = zgrad.as_mut() {
                let g = -sv * five_thirds / (ls * ls) * (T::one() + r) * e;
                // ∂L/∂z_i += 2 · ½ W_ij g (z_i − z_j), and the mirror for z_j.
                let coef = wij * g;
                for c in 0..x.ncols() {
                    let delta = x[(i, c)] - x[(j, c)];
                    zg[(i, c)] += coef * delta;
                    zg[(j, c)] -= coef * delta;
                }
            }
        }
    }
    let hyper_grad = [half * d_log_ls, half * d_log_sv, half * nv * trace_w, alpha.iter().copied().sum()];
    Ok(MllEval { value, hyper_grad, input_grad: zgrad, jitter: km.jitter })
}

/// Posterior marginals at query points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGaussian<T> {
    pub mean: Vec<T>,
    /// Predictive variance: latent, plus noise when requested.
    pub variance: Vec<T>,
    pub latent_variance: Vec<T>,
    pub noise_variance: T,
}

impl<T: Real> PosteriorGaussian<T> {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std(&self) -> Vec<T> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    /// Maps mean and variances back to the raw objective scale.
    pub fn unstandardize(&self, s: &Standardizer) -> Self {
        Self {
            mean: self.mean.iter().map(|&m| s.inverse(m)).collect(),
            variance: self.variance.iter().map(|&v| s.inverse_variance(v)).collect(),
            latent_variance: self.latent_variance.iter().map(|&v| s.inverse_variance(v)).collect(),
            noise_variance: s.inverse_variance(self.noise_variance),
        }
    }
}

/// Which surrogate produced a fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Fixed,
    #[serde(alias = "deep-projection", alias = "deep_projection")]
    Deep,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Fixed => "fixed",
            SurrogateKind::Deep => "deep",
        }
    }
}

/// Trained surrogate. Immutable; serves posterior queries from a cached factor.
#[derive(Clone, Debug)]
pub struct FittedSurrogate<T> {
    pub hypers: GpHyperparams<T>,
    pub standardizer: Standardizer,
    pub train_ids: Vec<String>,
    pub projection: Option<ProjectionMap<T>>,
    /// MLL of the standardized targets at `hypers`.
    pub mll: T,
    features: Matrix<T>,
    km: KernelMatrix<T>,
    alpha: Vec<T>,
}

impl<T: Real> FittedSurrogate<T> {
    /// Conditions a GP on already-transformed features and standardized targets.
    pub fn condition(
        features: Matrix<T>,
        y_standardized: &[T],
        hypers: GpHyperparams<T>,
        standardizer: Standardizer,
        projection: Option<ProjectionMap<T>>,
    ) -> Result<Self> {
        check_xy(&features, y_standardized)?;
        let km = kernel_matrix(&features, &hypers)?;
        let resid: Vec<T> = y_standardized.iter().map(|&v| v - hypers.mean()).collect();
        let alpha = km.chol.solve(&resid);
        let mll = mll_from_parts(&resid, &alpha, &km.chol);
        Ok(Self { hypers, standardizer, train_ids: Vec::new(), projection, mll, features, km, alpha })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Self {
        self.train_ids = ids;
        self
    }

    pub fn kind(&self) -> SurrogateKind {
        if self.projection.is_some() {
            SurrogateKind::Deep
        } else {
            SurrogateKind::Fixed
        }
    }

    /// Training inputs in the space the kernel sees (post-projection for deep fits).
    pub fn train_features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn kernel(&self) -> &KernelMatrix<T> {
        &self.km
    }

    /// Applies the feature map, if any, in evaluation mode.
    pub fn transform(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        match &self.projection {
            Some(p) => p.project_eval(x),
            None => Ok(x.clone()),
        }
    }

    /// Posterior on the standardized scale the GP was fitted on.
    pub fn posterior(&self, xq: &Matrix<T>, include_noise: bool) -> Result<PosteriorGaussian<T>> {
        let zq = self.transform(xq)?;
        if zq.ncols() != self.features.ncols() {
            return Err(Error::DimensionMismatch { expected: self.features.ncols(), found: zq.ncols() });
        }
        let (ls, sv, nv) = (self.hypers.lengthscale(), self.hypers.signal_variance(), self.hypers.noise_variance());
        let n = self.features.nrows();
        let mut mean = Vec::with_capacity(zq.nrows());
        let mut latent = Vec::with_capacity(zq.nrows());
        let mut kq = vec![T::zero(); n];
        for q in zq.rows() {
            for (i, slot) in kq.iter_mut().enumerate() {
                *slot = matern52(q, self.features.row(i), ls, sv);
            }
            let mu: T = self.hypers.mean() + kq.iter().zip(&self.alpha).map(|(&a, &b)| a * b).sum::<T>();
            let v = self.km.chol.solve_lower(&kq);
            let var = sv - v.iter().map(|&a| a * a).sum::<T>();
            mean.push(mu);
            latent.push(var.max(T::zero()));
        }
        let variance = if include_noise { latent.iter().map(|&v| v + nv).collect() } else { latent.clone() };
        Ok(PosteriorGaussian { mean, variance, latent_variance: latent, noise_variance: nv })
    }

    /// Posterior on the raw objective scale.
    pub fn posterior_raw(&self, xq: &Matrix<T>, include_noise: bool) -> Result<PosteriorGaussian<T>> {
        Ok(self.posterior(xq, include_noise)?.unstandardize(&self.standardizer))
    }

    pub fn record(&self) -> SurrogateRecord {
        SurrogateRecord {
            kind: self.kind(),
            lengthscale: self.hypers.lengthscale().to_f64_lossy(),
            signal_variance: self.hypers.signal_variance().to_f64_lossy(),
            noise_variance: self.hypers.noise_variance().to_f64_lossy(),
            mean_const: self.hypers.mean().to_f64_lossy(),
            mll: self.mll.to_f64_lossy(),
            standardizer: self.standardizer,
            train_ids: self.train_ids.clone(),
            projection: self.projection.as_ref().map(ProjectionMap::record),
        }
    }
}

/// JSON form of a fitted surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRecord {
    pub kind: SurrogateKind,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub mean_const: f64,
    pub mll: f64,
    pub standardizer: Standardizer,
    pub train_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionRecord>,
}

impl SurrogateRecord {
    pub fn hypers<T: Real>(&self) -> Result<GpHyperparams<T>> {
        GpHyperparams::new(
            T::lit(self.lengthscale),
            T::lit(self.signal_variance),
            T::lit(self.noise_variance),
            T::lit(self.mean_const),
        )
    }

    /// Rebuilds the surrogate from its record and the raw training rows/targets.
    pub fn restore<T: Real>(&self, x_raw: &Matrix<T>, y_raw: &[T]) -> Result<FittedSurrogate<T>> {
        let projection = self.projection.as_ref().map(ProjectionMap::from_record).transpose()?;
        let features = match &projection {
            Some(p) => p.project_eval(x_raw)?,
            None => x_raw.clone(),
        };
        let ys: Vec<T> = y_raw.iter().map(|&v| self.standardizer.transform(v)).collect();
        Ok(FittedSurrogate::condition(features, &ys, self.hypers()?, self.standardizer, projection)?
            .with_ids(self.train_ids.clone()))
    }
}

/// Settings for the multi-restart hyperparameter search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Total restarts, the first of which starts from `θ₀`.
    pub restarts: usize,
    /// Objective evaluations per restart.
    pub max_evals: usize,
    /// Half-width of the uniform log-space perturbation used for restarts.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 4, max_evals: 200, perturbation: 1.0, seed: 0 }
    }
}

/// Box constraints in unconstrained space: `[log ℓ, log σ², log σ_n², c]`.
pub fn hyper_bounds<T: Real>() -> ([T; 4], [T; 4]) {
    (
        [T::lit(1e-4f64.ln()), T::lit(1e-4f64.ln()), T::lit(1e-6f64.ln()), T::lit(-10.0)],
        [T::lit(1e4f64.ln()), T::lit(1e3f64.ln()), T::lit(10f64.ln()), T::lit(10.0)],
    )
}

/// Maximizes the MLL over `θ` for fixed inputs. The result is never worse than `θ₀`.
pub fn optimize_hypers<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    theta0: &GpHyperparams<T>,
    opts: &FitOptions,
) -> Result<(GpHyperparams<T>, T)> {
    check_xy(x, y)?;
    let (lo, hi) = hyper_bounds::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ascent = AscentOptions { max_evals: opts.max_evals.max(1), ..AscentOptions::default() };
    let mut best: Option<(GpHyperparams<T>, T)> = None;
    let mut last_err = None;
    for restart in 0..opts.restarts.max(1) {
        let mut start = theta0.to_unconstrained();
        if restart > 0 {
            for v in start.iter_mut().take(3) {
                *v += T::lit(rng.random_range(-opts.perturbation..=opts.perturbation));
            }
            for k in 0..4 {
                start[k] = start[k].max(lo[k]).min(hi[k]);
            }
        }
        let objective = |p: &[T]| {
            let theta = GpHyperparams::from_unconstrained([p[0], p[1], p[2], p[3]]);
            match mll_grad(x, y, &theta) {
                Ok(ev) if ev.value.is_finite() => Some((ev.value, ev.hyper_grad.to_vec())),
                Ok(_) => None,
                Err(e) => {
                    last_err = Some(e);
                    None
                }
            }
        };
        if let Some(res) = maximize(objective, &start, &lo, &hi, ascent) {
            let theta = GpHyperparams::from_unconstrained([res.x[0], res.x[1], res.x[2], res.x[3]]);
            if best.as_ref().is_none_or(|(_, v)| res.value > *v) {
                best = Some((theta, res.value));
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::SingularKernel { condition_estimate: f64::INFINITY }))
}

/// Standardizes `y`, optimizes `θ` from `θ₀` with restarts and conditions the GP.
pub fn fit_fixed<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    theta0: &GpHyperparams<T>,
    opts: &FitOptions,
) -> Result<FittedSurrogate<T>> {
    if y.len() < 2 {
        return Err(Error::InsufficientData(format!("fit needs at least 2 points, got {}", y.len())));
    }
    let (ys, standardizer) = standardize_targets(y)?;
    let (theta, _) = optimize_hypers(x, &ys, theta0, opts)?;
    FittedSurrogate::condition(x.clone(), &ys, theta, standardizer, None)
}
