//! Bounded monotone ascent: limited-memory quasi-Newton directions with a
//! backtracking (Armijo) line search under a fixed evaluation budget.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct AscentOptions {
    /// Maximum number of objective evaluations, including the initial one.
    pub max_evals: usize,
    /// Number of curvature pairs kept for the quasi-Newton direction.
    pub memory: usize,
    /// Stop once the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { max_evals: 200, memory: 6, grad_tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct AscentResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evals: usize,
}

/// Maximizes `f` over the box `[lo, hi]`. `f` returns `None` where the
/// objective is undefined; such points are treated as rejected steps.
///
/// The returned value never falls below `f(x0)` and `x0` itself is not
/// projected, so a start outside the box is accepted as-is.
pub fn maximize<T: Real>(
    mut f: impl FnMut(&[T]) -> Option<(T, Vec<T>)>,
    x0: &[T],
    lo: &[T],
    hi: &[T],
    opts: AscentOptions,
) -> Option<AscentResult<T>> {
    let (mut fx, mut g) = f(x0)?;
    let mut evals = 1;
    let mut x = x0.to_vec();
    let n = x.len();
    let mut s_hist: Vec<Vec<T>> = Vec::new();
    let mut y_hist: Vec<Vec<T>> = Vec::new();
    let mut step = T::one();
    let c1 = T::lit(1e-4);

    let project = |v: &mut [T]| {
        for i in 0..n {
            v[i] = v[i].max(lo[i]).min(hi[i]);
        }
    };

    while evals < opts.max_evals {
        let pg_norm = (0..n)
            .map(|i| {
                let blocked = (x[i] >= hi[i] && g[i] > T::zero()) || (x[i] <= lo[i] && g[i] < T::zero());
                if blocked {
                    T::zero()
                } else {
                    g[i].abs()
                }
            })
            .fold(T::zero(), T::max);
        if pg_norm.to_f64_lossy() < opts.grad_tol {
            break;
        }

        // Two-loop recursion on the negated objective, so `dir` is an ascent direction.
        let mut q: Vec<T> = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![T::zero(); k];
        for j in (0..k).rev() {
            let rho = T::one() / dotp(&y_hist[j], &s_hist[j]);
            alphas[j] = rho * dotp(&s_hist[j], &q);
            axpy(&mut q, -alphas[j], &y_hist[j]);
        }
        if let (Some(s), Some(yv)) = (s_hist.last(), y_hist.last()) {
            let gamma = dotp(s, yv) / dotp(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for j in 0..k {
            let rho = T::one() / dotp(&y_hist[j], &s_hist[j]);
            let beta = rho * dotp(&y_hist[j], &q);
            axpy(&mut q, alphas[j] - beta, &s_hist[j]);
        }
        let mut dir = q;
        if dotp(&dir, &g) <= T::zero() {
            dir = g.clone();
            s_hist.clear();
            y_hist.clear();
        }
        if k == 0 {
            // First step, or right after a reset: scale the raw gradient to unit length.
            let norm = dotp(&dir, &dir).sqrt();
            if norm > T::zero() {
                dir.iter_mut().for_each(|v| *v /= norm);
            }
        }

        let mut t = if k == 0 { step } else { T::one() };
        let mut accepted = None;
        while evals < opts.max_evals {
            let mut cand: Vec<T> = x.iter().zip(&dir).map(|(&a, &b)| a + t * b).collect();
            project(&mut cand);
            let moved: Vec<T> = cand.iter().zip(&x).map(|(&a, &b)| a - b).collect();
            if dotp(&moved, &moved) == T::zero() {
                break;
            }
            evals += 1;
            if let Some((fc, gc)) = f(&cand) {
                if fc.is_finite() && fc >= fx + c1 * dotp(&g, &moved) {
                    accepted = Some((cand, fc, gc, moved));
                    break;
                }
            }
            t *= T::lit(0.5);
            if t.to_f64_lossy() < 1e-12 {
                break;
            }
        }
        let Some((cand, fc, gc, moved)) = accepted else { break };
        if k == 0 {
            step = t * T::lit(2.0);
        }
        // Curvature pair for the negated objective: s = Δx, y = -(Δg).
        let yv: Vec<T> = gc.iter().zip(&g).map(|(&a, &b)| b - a).collect();
        if dotp(&yv, &moved) > T::lit(1e-12) {
            s_hist.push(moved);
            y_hist.push(yv);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = cand;
        fx = fc;
        g = gc;
    }
    Some(AscentResult { x, value: fx, evals })
}

fn dotp<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
