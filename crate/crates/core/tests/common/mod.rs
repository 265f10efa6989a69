//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dkbo::gp::GpHyperparams;
use dkbo::linalg::Matrix;

pub fn matern(a: &[f64], b: &[f64], ls: f64, sv: f64) -> f64 {
    let d = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    sv * (1.0 + 5f64.sqrt() * d / ls + 5.0 * d * d / (3.0 * ls * ls)) * (-(5f64.sqrt()) * d / ls).exp()
}

/// Gauss-Jordan inverse with partial pivoting, plus log|det|.
pub fn naive_inverse(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let p = m[col][col];
        logdet += p.abs().ln();
        for j in 0..n {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                for j in 0..n {
                    m[i][j] -= f * m[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    (inv, logdet)
}

pub fn noisy_kernel(x: &Matrix<f64>, t: &GpHyperparams<f64>) -> Vec<Vec<f64>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    matern(x.row(i), x.row(j), t.lengthscale(), t.signal_variance())
                        + if i == j { t.noise_variance() } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Posterior mean and latent variance by explicit inversion.
pub fn naive_posterior(x: &Matrix<f64>, y: &[f64], t: &GpHyperparams<f64>, xq: &Matrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows();
    let (kinv, _) = naive_inverse(&noisy_kernel(x, t));
    let r: Vec<f64> = y.iter().map(|v| v - t.mean()).collect();
    (0..xq.nrows())
        .map(|a| {
            let k: Vec<f64> =
                (0..n).map(|i| matern(xq.row(a), x.row(i), t.lengthscale(), t.signal_variance())).collect();
            let kinv_k: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * k[j]).sum()).collect();
            let mu = t.mean() + (0..n).map(|i| kinv_k[i] * r[i]).sum::<f64>();
            let v = (t.signal_variance() - (0..n).map(|i| k[i] * kinv_k[i]).sum::<f64>()).max(0.0);
            (mu, v)
        })
        .unzip()
}
