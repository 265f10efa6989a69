//! Analytic MLL gradients against central finite differences.

use dkbo::deep::{joint_mll_grad, ProjectionMap};
use dkbo::gp::{mll, mll_grad, GpHyperparams};
use dkbo::linalg::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;

fn close(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= ABS_FLOOR || err <= REL_TOL * analytic.abs().max(numeric.abs())
}

struct Instance {
    x: Matrix<f64>,
    y: Vec<f64>,
    phi: ProjectionMap<f64>,
    theta: GpHyperparams<f64>,
}

fn instance(seed: u64, n: usize, d: usize, m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w = Matrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
    let b = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
    let phi = ProjectionMap { w, b, dropout_rate: 0.0 };
    let theta = GpHyperparams::new(
        rng.random_range(0.3..3.0),
        rng.random_range(0.3..3.0),
        rng.random_range(1e-2..1.0),
        rng.random_range(-1.0..1.0),
    )
    .unwrap();
    Instance { x, y, phi, theta }
}

fn joint_value(inst: &Instance, phi: &ProjectionMap<f64>, theta: &GpHyperparams<f64>) -> f64 {
    let z = phi.project_eval(&inst.x).unwrap();
    mll(&z, &inst.y, theta).unwrap()
}

fn check_joint(inst: &Instance) -> Result<(), String> {
    let g = joint_mll_grad(&inst.x, &inst.y, &inst.phi, &inst.theta).map_err(|e| e.to_string())?;
    let u = inst.theta.to_unconstrained();
    for k in 0..4 {
        let mut up = u;
        let mut dn = u;
        up[k] += H;
        dn[k] -= H;
        let fp = joint_value(inst, &inst.phi, &GpHyperparams::from_unconstrained(up));
        let fm = joint_value(inst, &inst.phi, &GpHyperparams::from_unconstrained(dn));
        let num = (fp - fm) / (2.0 * H);
        if !close(g.hyper_grad[k], num) {
            return Err(format!("theta[{k}]: analytic {} vs numeric {num}", g.hyper_grad[k]));
        }
    }
    let (m, d) = (inst.phi.w.nrows(), inst.phi.w.ncols());
    for r in 0..m {
        for c in 0..d {
            let mut p = inst.phi.clone();
            p.w[(r, c)] += H;
            let fp = joint_value(inst, &p, &inst.theta);
            p.w[(r, c)] -= 2.0 * H;
            let fm = joint_value(inst, &p, &inst.theta);
            let num = (fp - fm) / (2.0 * H);
            if !close(g.w_grad[(r, c)], num) {
                return Err(format!("W[{r},{c}]: analytic {} vs numeric {num}", g.w_grad[(r, c)]));
            }
        }
        let mut p = inst.phi.clone();
        p.b[r] += H;
        let fp = joint_value(inst, &p, &inst.theta);
        p.b[r] -= 2.0 * H;
        let fm = joint_value(inst, &p, &inst.theta);
        let num = (fp - fm) / (2.0 * H);
        if !close(g.b_grad[r], num) {
            return Err(format!("b[{r}]: analytic {} vs numeric {num}", g.b_grad[r]));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn joint_gradient_matches_finite_differences(
        seed in any::<u64>(),
        n in 2usize..=20,
        d in 1usize..=8,
        m in 1usize..=4,
    ) {
        let inst = instance(seed, n, d, m);
        prop_assert!(check_joint(&inst).is_ok(), "{}", check_joint(&inst).unwrap_err());
    }

    #[test]
    fn hyper_gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..=20, d in 1usize..=8) {
        let inst = instance(seed, n, d, 1);
        let g = mll_grad(&inst.x, &inst.y, &inst.theta).unwrap();
        let u = inst.theta.to_unconstrained();
        for k in 0..4 {
            let mut up = u;
            let mut dn = u;
            up[k] += H;
            dn[k] -= H;
            let num = (mll(&inst.x, &inst.y, &GpHyperparams::from_unconstrained(up)).unwrap()
                - mll(&inst.x, &inst.y, &GpHyperparams::from_unconstrained(dn)).unwrap())
                / (2.0 * H);
            prop_assert!(close(g.hyper_grad[k], num), "theta[{}]: {} vs {}", k, g.hyper_grad[k], num);
        }
    }
}

#[test]
fn small_fixed_instances() {
    // n = 10 hyperparameter problem and n = 8, d = 4, m = 3 feature problem.
    check_joint(&instance(11, 10, 3, 2)).unwrap();
    check_joint(&instance(12, 8, 4, 3)).unwrap();
}

#[test]
fn mean_gradient_is_sum_of_alpha() {
    let inst = instance(5, 9, 3, 1);
    let g = mll_grad(&inst.x, &inst.y, &inst.theta).unwrap();
    let km = dkbo::gp::kernel_matrix(&inst.x, &inst.theta).unwrap();
    let resid: Vec<f64> = inst.y.iter().map(|v| v - inst.theta.mean()).collect();
    let alpha = km.chol.solve(&resid);
    assert!((g.hyper_grad[3] - alpha.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn zero_residual_leaves_only_trace_term() {
    let mut inst = instance(8, 6, 2, 1);
    inst.y = vec![inst.theta.mean(); 6];
    let g = mll_grad(&inst.x, &inst.y, &inst.theta).unwrap();
    assert_eq!(g.hyper_grad[3], 0.0);
    // ∂/∂log σ_n² reduces to −½ σ_n² tr(K⁻¹).
    let km = dkbo::gp::kernel_matrix(&inst.x, &inst.theta).unwrap();
    let kinv = km.chol.inverse();
    let tr: f64 = (0..6).map(|i| kinv[(i, i)]).sum();
    assert!((g.hyper_grad[2] + 0.5 * inst.theta.noise_variance() * tr).abs() < 1e-12);
}

#[test]
fn finite_difference_suite_is_fast() {
    let t = std::time::Instant::now();
    for seed in 0..100 {
        check_joint(&instance(seed, 20, 8, 4)).unwrap();
    }
    assert!(t.elapsed().as_secs() < 60);
}
