//! Deep-kernel surrogate: a projection layer `z = ELU(Dropout(W x + b))`
//! trained jointly with the GP hyperparameters by maximizing the MLL.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{class_pair_distances, ClassPairSummary};
use crate::error::{Error, Result};
use crate::gp::{mll_eval, FittedSurrogate, GpHyperparams, MllEval, JITTER_LADDER};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::store::standardize_targets;

pub const DEFAULT_PROJECTION_DIM: usize = 64;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[inline]
fn elu<T: Real>(u: T) -> T {
    if u > T::zero() {
        u
    } else {
        u.exp() - T::one()
    }
}

/// Feature map `g_φ`. `w` is `m × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMap<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
    /// Only applied in training mode.
    pub dropout_rate: f64,
}

struct Forward<T> {
    /// Post-dropout pre-activations, `n × m`.
    pre: Matrix<T>,
    /// Per-entry dropout scale (0 or 1/(1-p)); `None` in evaluation mode.
    scale: Option<Matrix<T>>,
    out: Matrix<T>,
}

impl<T: Real> ProjectionMap<T> {
    /// Xavier-uniform weights on `±√(6/(d+m))`, zero bias.
    pub fn xavier(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::Invalid(format!("projection dims must be positive (d={d}, m={m})")));
        }
        let bound = (6.0 / (d + m) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(m, d, |_, _| T::lit(rng.random_range(-bound..=bound)));
        Ok(Self { w, b: vec![T::zero(); m], dropout_rate: DEFAULT_DROPOUT })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w.as_slice().len() + self.b.len()
    }

    fn forward(&self, x: &Matrix<T>, dropout: Option<&mut ChaCha8Rng>) -> Result<Forward<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.ncols() });
        }
        let (n, m) = (x.nrows(), self.output_dim());
        let mut pre = Matrix::zeros(n, m);
        for i in 0..n {
            let xi = x.row(i);
            for k in 0..m {
                pre[(i, k)] = self.b[k] + crate::linalg::dot(self.w.row(k), xi);
            }
        }
        let scale = match dropout {
            Some(rng) if self.dropout_rate > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - self.dropout_rate));
                let s = Matrix::from_fn(
                    n,
                    m,
                    |_, _| {
                        if rng.random::<f64>() < self.dropout_rate {
                            T::zero()
                        } else {
                            keep
                        }
                    },
                );
                for (p, &sv) in pre.as_mut_slice().iter_mut().zip(s.as_slice()) {
                    *p *= sv;
                }
                Some(s)
            }
            _ => None,
        };
        let out = pre.map(elu);
        Ok(Forward { pre, scale, out })
    }

    /// Applies the map. Training mode draws an inverted-dropout mask from `rng`.
    pub fn project(&self, x: &Matrix<T>, training: bool, rng: &mut ChaCha8Rng) -> Result<Matrix<T>> {
        Ok(self.forward(x, training.then_some(rng))?.out)
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn project_eval(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(x, None)?.out)
    }

    /// Chains `∂L/∂Z` back to `(∂L/∂W, ∂L/∂b)`.
    fn backward(&self, x: &Matrix<T>, fw: &Forward<T>, dz: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
        let (n, m, d) = (x.nrows(), self.output_dim(), self.input_dim());
        let mut gw = Matrix::zeros(m, d);
        let mut gb = vec![T::zero(); m];
        for i in 0..n {
            let xi = x.row(i);
            for k in 0..m {
                let u = fw.pre[(i, k)];
                let mut da = dz[(i, k)] * if u > T::zero() { T::one() } else { u.exp() };
                if let Some(s) = &fw.scale {
                    da *= s[(i, k)];
                }
                if da == T::zero() {
                    continue;
                }
                gb[k] += da;
                for (g, &xv) in gw.row_mut(k).iter_mut().zip(xi) {
                    *g += da * xv;
                }
            }
        }
        (gw, gb)
    }

    pub fn record(&self) -> ProjectionRecord {
        ProjectionRecord {
            m: self.output_dim(),
            d: self.input_dim(),
            dropout_rate: self.dropout_rate,
            w: self.w.as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
            b: self.b.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn from_record(r: &ProjectionRecord) -> Result<Self> {
        if r.w.len() != r.m * r.d || r.b.len() != r.m {
            return Err(Error::Invalid("projection record has inconsistent shapes".into()));
        }
        Ok(Self {
            w: Matrix::from_vec(r.m, r.d, r.w.iter().map(|&v| T::lit(v)).collect()),
            b: r.b.iter().map(|&v| T::lit(v)).collect(),
            dropout_rate: r.dropout_rate,
        })
    }

    fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.iter().all(|v| v.is_finite())
    }
}

/// Serialized projection parameters (row-major `w`, `m × d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub m: usize,
    pub d: usize,
    pub dropout_rate: f64,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Initialises a projection map; see [`ProjectionMap::xavier`].
pub fn init_projection<T: Real>(d: usize, m: usize, seed: u64) -> Result<ProjectionMap<T>> {
    ProjectionMap::xavier(d, m, seed)
}

/// Optimizer settings for joint training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_gp: f64,
    pub lr_feat: f64,
    /// Decoupled decay, applied to `W` and `b` only.
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Keep a copy of `φ` every this many epochs for [`contrastive_trace`]; 0 keeps none.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_gp: 2e-1,
            lr_feat: 2e-3,
            weight_decay: 1e-3,
            clip_norm: 1.0,
            lr_decay: 0.95,
            decay_every: 10,
            epochs: 100,
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_gp", self.lr_gp), ("clip_norm", self.clip_norm), ("lr_decay", self.lr_decay)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr_feat >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid("lr_feat and weight_decay must be non-negative".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Invalid("decay_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Evaluation-mode MLL of the parameters at the start of the epoch.
    pub mll: f64,
    /// Global gradient norm after clipping; absent for the final evaluation.
    pub grad_norm: Option<f64>,
    pub lr_gp: f64,
    pub lr_feat: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

/// Outcome of [`joint_fit`].
#[derive(Clone, Debug)]
pub struct JointFit<T> {
    pub hypers: GpHyperparams<T>,
    /// `None` when training fixed features only.
    pub projection: Option<ProjectionMap<T>>,
    pub mll: T,
    pub best_epoch: usize,
    pub trace: Vec<TrainRecord>,
    /// `(epoch, φ)` pairs kept per `snapshot_every`, always including epoch 0.
    pub snapshots: Vec<(usize, ProjectionMap<T>)>,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Real> Adam<T> {
    fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    /// Descends along `grad` (a loss gradient) with decoupled weight decay.
    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, weight_decay: f64, t: i32) {
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr_t = T::lit(lr);
        let decay = T::one() - T::lit(lr * weight_decay);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] * decay - lr_t * mhat / (vhat.sqrt() + T::lit(ADAM_EPS));
        }
    }
}

/// Gradients of the MLL with respect to `θ`, `W` and `b`, in evaluation mode.
#[derive(Clone, Debug)]
pub struct JointGrad<T> {
    pub value: T,
    pub hyper_grad: [T; 4],
    pub w_grad: Matrix<T>,
    pub b_grad: Vec<T>,
}

/// MLL of `y` under the deep kernel `k(g_φ(x), g_φ(x'))`, with all gradients.
pub fn joint_mll_grad<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    phi: &ProjectionMap<T>,
    theta: &GpHyperparams<T>,
) -> Result<JointGrad<T>> {
    let fw = phi.forward(x, None)?;
    let ev = mll_eval(&fw.out, y, theta, true, 0.0)?;
    let (w_grad, b_grad) = phi.backward(x, &fw, ev.input_grad.as_ref().expect("input grad requested"));
    Ok(JointGrad { value: ev.value, hyper_grad: ev.hyper_grad, w_grad, b_grad })
}

/// Jointly maximizes the MLL over `(θ, φ)` on standardized targets.
///
/// Full-batch AdamW with two parameter groups (`θ` at `lr_gp`, `φ` at
/// `lr_feat`, weight decay on `φ` only), global gradient-norm clipping and a
/// step decay of both rates. A group with learning rate 0 is frozen and
/// excluded from clipping; frozen features are also trained without dropout.
/// Returns the best evaluation-mode iterate.
pub fn joint_fit<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    phi0: &ProjectionMap<T>,
    theta0: &GpHyperparams<T>,
    cfg: &TrainConfig,
) -> Result<JointFit<T>> {
    train(x, y, Some(phi0), theta0, cfg)
}

/// Same trainer with the feature map removed: Adam on `θ` over fixed inputs.
pub fn fit_hypers_adam<T: Real>(
    z: &Matrix<T>,
    y: &[T],
    theta0: &GpHyperparams<T>,
    cfg: &TrainConfig,
) -> Result<JointFit<T>> {
    train(z, y, None, theta0, cfg)
}

const MAX_CONSECUTIVE_FAILURES: usize = 5;

fn train<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    phi0: Option<&ProjectionMap<T>>,
    theta0: &GpHyperparams<T>,
    cfg: &TrainConfig,
) -> Result<JointFit<T>> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData(format!("joint fit needs at least 2 points, got {}", y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut phi = phi0.cloned();
    let mut theta = theta0.to_unconstrained();
    let feat_frozen = cfg.lr_feat == 0.0;
    let n_feat = phi.as_ref().map_or(0, ProjectionMap::num_params);
    let mut adam_gp = Adam::new(4);
    let mut adam_feat = Adam::new(n_feat);
    let (mut lr_gp, mut lr_feat) = (cfg.lr_gp, cfg.lr_feat);
    let mut jitter_floor = 0.0;
    let mut failures = 0;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut snapshots = Vec::new();
    if let Some(p) = &phi {
        snapshots.push((0, p.clone()));
    }
    let mut best: Option<(T, usize, [T; 4], Option<ProjectionMap<T>>)> = None;
    let mut step_count = 0i32;

    let features = |phi: &Option<ProjectionMap<T>>| -> Result<Matrix<T>> {
        match phi {
            Some(p) => p.project_eval(x),
            None => Ok(x.clone()),
        }
    };

    for epoch in 0..=cfg.epochs {
        let th = GpHyperparams::from_unconstrained(theta);
        let is_final = epoch == cfg.epochs;
        let uses_dropout = !feat_frozen && phi.as_ref().is_some_and(|p| p.dropout_rate > 0.0);
        let want_grad = !is_final;

        // Evaluation-mode pass: scores the current iterate, and doubles as the
        // training pass when dropout is off.
        let z_eval = features(&phi)?;
        let eval = mll_eval(&z_eval, y, &th, want_grad && !uses_dropout && phi.is_some(), jitter_floor)
            .and_then(|ev| if ev.value.is_finite() { Ok(ev) } else { Err(Error::Training("non-finite MLL".into())) });
        let eval = match eval {
            Ok(ev) => {
                failures = 0;
                ev
            }
            Err(e) => {
                failures += 1;
                if failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::Training(format!("{failures} consecutive factorization failures: {e}")));
                }
                jitter_floor = next_jitter(jitter_floor);
                trace.push(TrainRecord { epoch, mll: f64::NAN, grad_norm: None, lr_gp, lr_feat, skipped: true });
                continue;
            }
        };
        let value = eval.value;
        if best.as_ref().is_none_or(|(v, ..)| value > *v) {
            best = Some((value, epoch, theta, phi.clone()));
        }
        if is_final {
            trace.push(TrainRecord {
                epoch,
                mll: value.to_f64_lossy(),
                grad_norm: None,
                lr_gp,
                lr_feat,
                skipped: false,
            });
            break;
        }

        // Gradient pass.
        let (hyper_grad, feat_grad) = match &phi {
            None => (eval.hyper_grad, Vec::new()),
            Some(p) if !uses_dropout => {
                let fw = p.forward(x, None)?;
                let dz = eval.input_grad.as_ref().expect("input grad requested");
                let (gw, gb) = p.backward(x, &fw, dz);
                (eval.hyper_grad, flatten(&gw, &gb))
            }
            Some(p) => {
                let fw = p.forward(x, Some(&mut rng))?;
                match mll_eval(&fw.out, y, &th, true, jitter_floor) {
                    Ok(MllEval { hyper_grad, input_grad: Some(dz), value, .. }) if value.is_finite() => {
                        let (gw, gb) = p.backward(x, &fw, &dz);
                        (hyper_grad, flatten(&gw, &gb))
                    }
                    _ => {
                        failures += 1;
                        if failures >= MAX_CONSECUTIVE_FAILURES {
                            return Err(Error::Training(format!("{failures} consecutive factorization failures")));
                        }
                        jitter_floor = next_jitter(jitter_floor);
                        trace.push(TrainRecord {
                            epoch,
                            mll: value.to_f64_lossy(),
                            grad_norm: None,
                            lr_gp,
                            lr_feat,
                            skipped: true,
                        });
                        continue;
                    }
                }
            }
        };

        // Loss = −MLL.
        let mut g_gp: Vec<T> = hyper_grad.iter().map(|&g| -g).collect();
        let mut g_feat: Vec<T> = feat_grad.iter().map(|&g| -g).collect();
        let mut sq: T = g_gp.iter().map(|&g| g * g).sum();
        if !feat_frozen {
            sq += g_feat.iter().map(|&g| g * g).sum::<T>();
        }
        let norm = sq.sqrt();
        let clip = T::lit(cfg.clip_norm);
        let mut post_norm = norm;
        if norm > clip {
            let s = clip / (norm + T::lit(1e-6));
            g_gp.iter_mut().for_each(|g| *g *= s);
            g_feat.iter_mut().for_each(|g| *g *= s);
            post_norm = norm * s;
        }
        trace.push(TrainRecord {
            epoch,
            mll: value.to_f64_lossy(),
            grad_norm: Some(post_norm.to_f64_lossy()),
            lr_gp,
            lr_feat,
            skipped: false,
        });

        step_count += 1;
        adam_gp.step(&mut theta, &g_gp, lr_gp, 0.0, step_count);
        if let (Some(p), false) = (phi.as_mut(), feat_frozen) {
            let mut flat = flatten(&p.w, &p.b);
            adam_feat.step(&mut flat, &g_feat, lr_feat, cfg.weight_decay, step_count);
            unflatten(p, &flat);
            if !p.is_finite() {
                return Err(Error::Training("projection parameters became non-finite".into()));
            }
        }
        if (step_count as usize).is_multiple_of(cfg.decay_every) {
            lr_gp *= cfg.lr_decay;
            lr_feat *= cfg.lr_decay;
        }
        if let Some(p) = &phi {
            if cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0 {
                snapshots.push((epoch + 1, p.clone()));
            }
        }
    }

    let (mll, best_epoch, theta, projection) =
        best.ok_or_else(|| Error::Training("no successful evaluation".into()))?;
    Ok(JointFit { hypers: GpHyperparams::from_unconstrained(theta), projection, mll, best_epoch, trace, snapshots })
}

fn next_jitter(current: f64) -> f64 {
    let top = *JITTER_LADDER.last().unwrap();
    if current < top {
        top
    } else {
        current * 10.0
    }
}

fn flatten<T: Real>(w: &Matrix<T>, b: &[T]) -> Vec<T> {
    let mut v = w.as_slice().to_vec();
    v.extend_from_slice(b);
    v
}

fn unflatten<T: Real>(p: &mut ProjectionMap<T>, flat: &[T]) {
    let nw = p.w.as_slice().len();
    p.w.as_mut_slice().copy_from_slice(&flat[..nw]);
    p.b.copy_from_slice(&flat[nw..]);
}

/// Standardizes `y`, trains `(θ, φ)` and conditions a deep surrogate on the best iterate.
pub fn fit_deep<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    phi0: &ProjectionMap<T>,
    theta0: &GpHyperparams<T>,
    cfg: &TrainConfig,
) -> Result<(FittedSurrogate<T>, JointFit<T>)> {
    let (ys, standardizer) = standardize_targets(y)?;
    let fit = joint_fit(x, &ys, phi0, theta0, cfg)?;
    let phi = fit.projection.clone().expect("deep fit keeps its projection");
    let z = phi.project_eval(x)?;
    let surrogate = FittedSurrogate::condition(z, &ys, fit.hypers, standardizer, Some(phi))?;
    Ok((surrogate, fit))
}

/// Class-separation statistics of `g_φ(X)` at one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSeparation {
    pub epoch: usize,
    pub summary: ClassPairSummary,
}

/// Pairwise class-separation of the projected features at every retained snapshot.
pub fn contrastive_trace<T: Real>(
    fit: &JointFit<T>,
    x: &Matrix<T>,
    y: &[T],
    hi_q: f64,
    lo_q: f64,
) -> Result<Vec<EpochSeparation>> {
    fit.snapshots
        .iter()
        .map(|(epoch, phi)| {
            let z = phi.project_eval(x)?;
            Ok(EpochSeparation { epoch: *epoch, summary: class_pair_distances(&z, y, hi_q, lo_q)?.summary })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, n: usize, d: usize) -> (Matrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Matrix<f64> = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0f64..1.0));
        let y = (0..n).map(|i| x[(i, 0)].sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = ProjectionMap::<f64> { w: Matrix::zeros(3, 2), b: vec![0.0; 3], dropout_rate: 0.0 };
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, -3.0, 4.0]);
        assert!(p.project_eval(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elu_lower_asymptote() {
        let p = ProjectionMap::<f64> { w: Matrix::from_vec(1, 1, vec![1.0]), b: vec![0.0], dropout_rate: 0.0 };
        let x = Matrix::from_vec(1, 1, vec![-800.0]);
        assert_eq!(p.project_eval(&x).unwrap()[(0, 0)], -1.0);
    }

    #[test]
    fn dropout_off_training_matches_eval() {
        let p = ProjectionMap::<f64>::xavier(4, 3, 1).unwrap().with_dropout(0.0).unwrap();
        let (x, _) = toy(2, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.project(&x, true, &mut rng).unwrap(), p.project_eval(&x).unwrap());
    }

    #[test]
    fn dropout_training_differs_but_eval_is_deterministic() {
        let p = ProjectionMap::<f64>::xavier(4, 8, 1).unwrap().with_dropout(0.5).unwrap();
        let (x, _) = toy(2, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_ne!(p.project(&x, true, &mut rng).unwrap(), p.project_eval(&x).unwrap());
        assert_eq!(p.project_eval(&x).unwrap(), p.project_eval(&x).unwrap());
    }

    #[test]
    fn projection_rejects_wrong_width() {
        let p = ProjectionMap::<f64>::xavier(4, 3, 1).unwrap();
        let x = Matrix::zeros(2, 5);
        assert!(matches!(p.project_eval(&x), Err(Error::DimensionMismatch { expected: 4, found: 5 })));
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let a = init_projection::<f64>(768, 64, 7).unwrap();
        let bound = (6.0f64 / 832.0).sqrt();
        assert!((bound - 0.0849).abs() < 1e-4);
        assert!(a.w.as_slice().iter().all(|v| v.abs() <= bound));
        assert!(a.b.iter().all(|&v| v == 0.0));
        assert_eq!(a.w.nrows(), DEFAULT_PROJECTION_DIM);
        let b = init_projection::<f64>(768, 64, 7).unwrap();
        assert_eq!(a, b);
        assert!(init_projection::<f64>(0, 4, 1).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let (x, y) = toy(3, 8, 4);
        let phi = ProjectionMap::xavier(4, 3, 5).unwrap();
        let theta = GpHyperparams::default();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let fit = joint_fit(&x, &y, &phi, &theta, &cfg).unwrap();
        assert_eq!(fit.projection.as_ref(), Some(&phi));
        assert_eq!(fit.hypers, theta);
        assert_eq!(fit.trace.len(), 1);
    }

    #[test]
    fn frozen_features_reduce_to_fixed_feature_training() {
        let (x, y) = toy(4, 10, 4);
        let phi = ProjectionMap::xavier(4, 3, 9).unwrap().with_dropout(0.0).unwrap();
        let theta = GpHyperparams::default();
        let cfg = TrainConfig { lr_feat: 0.0, epochs: 30, ..TrainConfig::default() };
        let joint = joint_fit(&x, &y, &phi, &theta, &cfg).unwrap();
        assert_eq!(joint.projection.as_ref(), Some(&phi));
        let z = phi.project_eval(&x).unwrap();
        let fixed = fit_hypers_adam(&z, &y, &theta, &cfg).unwrap();
        assert_eq!(joint.hypers, fixed.hypers);
        assert_eq!(joint.mll, fixed.mll);
    }

    #[test]
    fn clipping_bounds_recorded_norms_and_best_is_monotone() {
        let (x, y) = toy(5, 12, 4);
        let phi = ProjectionMap::xavier(4, 6, 2).unwrap();
        let cfg = TrainConfig { epochs: 40, ..TrainConfig::default() };
        let fit = joint_fit(&x, &y, &phi, &GpHyperparams::default(), &cfg).unwrap();
        for r in &fit.trace {
            if let Some(g) = r.grad_norm {
                assert!(g <= cfg.clip_norm + 1e-9);
            }
        }
        let best_trace = fit.trace.iter().map(|r| r.mll).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(fit.mll, best_trace);
        assert!(fit.mll >= fit.trace[0].mll);
        // Learning rates decay every 10 steps.
        assert!((fit.trace[10].lr_gp - 0.2 * 0.95).abs() < 1e-15);
        assert_eq!(fit.trace[9].lr_gp, 0.2);
    }

    #[test]
    fn snapshots_follow_schedule() {
        let (x, y) = toy(6, 8, 3);
        let phi = ProjectionMap::xavier(3, 2, 2).unwrap();
        let cfg = TrainConfig { epochs: 10, snapshot_every: 5, ..TrainConfig::default() };
        let fit = joint_fit(&x, &y, &phi, &GpHyperparams::default(), &cfg).unwrap();
        let epochs: Vec<usize> = fit.snapshots.iter().map(|(e, _)| *e).collect();
        assert_eq!(epochs, vec![0, 5, 10]);
        let trace = contrastive_trace(&fit, &x, &y, 0.25, 0.25).unwrap();
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn projection_record_round_trip() {
        let p = ProjectionMap::<f64>::xavier(3, 2, 4).unwrap();
        assert_eq!(ProjectionMap::from_record(&p.record()).unwrap(), p);
    }
}
