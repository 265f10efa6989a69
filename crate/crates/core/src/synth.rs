//! Synthetic candidate pools with known structure, used as ground truth by
//! the test and acceptance suites.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{kernel_matrix, GpHyperparams};
use crate::linalg::Matrix;
use crate::store::CandidatePool;

/// Largest fixture the generators accept.
pub const MAX_N: usize = 500;
pub const MAX_D: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Inputs uniform on `[-extent, extent]^d`; `y` one draw from a zero-mean
    /// Matérn-5/2 GP plus Gaussian noise.
    GpDraw { lengthscale: f64, signal_variance: f64, noise: f64, extent: f64 },
    /// `k` Gaussian clusters (per-coordinate std `noise`) whose centers lie
    /// `gap` apart along a random direction. Cluster `j` has objective
    /// `gap · (j + 0.4 tanh(u / noise))`, where `u` is the offset from the
    /// center along a second, orthogonal direction.
    PlantedClusters { k: usize, gap: f64, noise: f64 },
    /// Standard-normal inputs; `y = Σ_{a < active_dims} (x_a + sin 2x_a)`
    /// plus Gaussian noise, so only the leading coordinates matter.
    LinearSubspace { active_dims: usize, noise: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub generator: Generator,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn gp_draw(n: usize, d: usize, lengthscale: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            generator: Generator::GpDraw { lengthscale, signal_variance: 1.0, noise: 1e-2, extent: 3.0 },
            seed,
        }
    }

    pub fn planted_clusters(n: usize, d: usize, k: usize, gap: f64, noise: f64, seed: u64) -> Self {
        Self { n, d, generator: Generator::PlantedClusters { k, gap, noise }, seed }
    }

    pub fn linear_subspace(n: usize, d: usize, active_dims: usize, noise: f64, seed: u64) -> Self {
        Self { n, d, generator: Generator::LinearSubspace { active_dims, noise }, seed }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n < 2 || self.n > MAX_N {
            return bad(format!("n must be in [2, {MAX_N}], got {}", self.n));
        }
        if self.d == 0 || self.d > MAX_D {
            return bad(format!("d must be in [1, {MAX_D}], got {}", self.d));
        }
        match self.generator {
            Generator::GpDraw { lengthscale, signal_variance, noise, extent } => {
                if !(lengthscale > 0.0 && signal_variance > 0.0 && noise >= 0.0 && extent > 0.0) {
                    return bad("gp_draw parameters must be positive".into());
                }
            }
            Generator::PlantedClusters { k, gap, noise } => {
                if k == 0 || k > self.n || !(gap > 0.0) || !(noise > 0.0) {
                    return bad("planted_clusters needs 1 ≤ k ≤ n and positive gap, noise".into());
                }
                if k > 1 && self.d < 2 {
                    return bad("planted_clusters needs d ≥ 2".into());
                }
            }
            Generator::LinearSubspace { active_dims, noise } => {
                if active_dims == 0 || active_dims > self.d || !(noise >= 0.0) {
                    return bad("linear_subspace needs 1 ≤ active_dims ≤ d and noise ≥ 0".into());
                }
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize, orthogonal_to: Option<&[f64]>) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        if let Some(u) = orthogonal_to {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Cluster index of row `i` in a planted-clusters pool.
pub fn planted_cluster_of(i: usize, k: usize) -> usize {
    i % k
}

/// Builds the pool described by `spec`. Embeddings are rounded to `f32` so
/// the pool round-trips bit-exactly through the binary format.
pub fn generate(spec: &SyntheticSpec) -> Result<CandidatePool> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (x, y) = match spec.generator {
        Generator::GpDraw { lengthscale, signal_variance, noise, extent } => {
            let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-extent..=extent) as f32 as f64);
            let theta = GpHyperparams::new(lengthscale, signal_variance, noise.max(1e-10) * noise.max(1e-10), 0.0)?;
            let km = kernel_matrix(&x, &theta)?;
            let e: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let l = km.chol.l();
            let y = (0..n).map(|i| (0..=i).map(|k| l[(i, k)] * e[k]).sum()).collect();
            (x, y)
        }
        Generator::PlantedClusters { k, gap, noise } => {
            let axis = unit_vector(&mut rng, d, None);
            let trend = if d > 1 { unit_vector(&mut rng, d, Some(&axis)) } else { axis.clone() };
            let mut x = Matrix::zeros(n, d);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let j = planted_cluster_of(i, k);
                let offset: Vec<f64> = (0..d).map(|_| noise * normal(&mut rng)).collect();
                let along: f64 = offset.iter().zip(&trend).map(|(a, b)| a * b).sum();
                for c in 0..d {
                    x[(i, c)] = (j as f64 * gap * axis[c] + offset[c]) as f32 as f64;
                }
                y.push(gap * (j as f64 + 0.4 * (along / noise).tanh()));
            }
            (x, y)
        }
        Generator::LinearSubspace { active_dims, noise } => {
            let x = Matrix::from_fn(n, d, |_, _| normal(&mut rng) as f32 as f64);
            let y = (0..n)
                .map(|i| {
                    let s: f64 = (0..active_dims).map(|a| x[(i, a)] + (2.0 * x[(i, a)]).sin()).sum();
                    s + noise * normal(&mut rng)
                })
                .collect();
            (x, y)
        }
    };
    let ids = (0..n).map(|i| format!("s{i:04}")).collect();
    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), serde_json::to_string(spec)?);
    meta.insert("source".to_string(), "synthetic".to_string());
    CandidatePool::new(ids, x, Some(y), meta)
}

/// Applies a seeded random rotation (orthonormal via Gram-Schmidt) to every row.
pub fn rotate(pool: &CandidatePool, seed: u64) -> Result<CandidatePool> {
    let d = pool.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= p * c);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let x = pool.x();
    let rotated = Matrix::from_fn(pool.len(), d, |i, r| {
        basis[r].iter().zip(x.row(i)).map(|(a, b)| a * b).sum::<f64>() as f32 as f64
    });
    Ok(pool.with_features(rotated)?.with_meta("transform", format!("rotate:{seed}")))
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every embedding entry.
pub fn corrupt(pool: &CandidatePool, sigma: f64, seed: u64) -> Result<CandidatePool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = pool.x();
    let noisy = Matrix::from_fn(pool.len(), pool.dim(), |i, j| (x[(i, j)] + sigma * normal(&mut rng)) as f32 as f64);
    Ok(pool.with_features(noisy)?.with_meta("transform", format!("corrupt:{sigma}:{seed}")))
}

/// Permutes labels across rows, destroying any embedding-objective relation.
pub fn shuffle_labels(pool: &CandidatePool, seed: u64) -> Result<CandidatePool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = pool.labels()?.to_vec();
    for i in (1..y.len()).rev() {
        let j = rng.random_range(0..=i);
        y.swap(i, j);
    }
    Ok(pool.with_labels(y)?.with_meta("transform", format!("shuffle:{seed}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for spec in [
            SyntheticSpec::gp_draw(40, 3, 1.5, 7),
            SyntheticSpec::planted_clusters(30, 4, 3, 10.0, 1.0, 7),
            SyntheticSpec::linear_subspace(25, 6, 2, 0.1, 7),
        ] {
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
            let other = SyntheticSpec { seed: 8, ..spec.clone() };
            assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
        }
    }

    #[test]
    fn two_clusters_separable_by_threshold() {
        let spec = SyntheticSpec::planted_clusters(200, 8, 2, 10.0, 1.0, 3);
        let pool = generate(&spec).unwrap();
        let y = pool.labels().unwrap();
        for (i, &v) in y.iter().enumerate() {
            let predicted = usize::from(v > 5.0);
            assert_eq!(predicted, planted_cluster_of(i, 2));
        }
    }

    #[test]
    fn meta_records_generator() {
        let spec = SyntheticSpec::linear_subspace(10, 3, 1, 0.0, 1);
        let pool = generate(&spec).unwrap();
        let back: SyntheticSpec = serde_json::from_str(&pool.meta()["generator"]).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&SyntheticSpec::gp_draw(1, 3, 1.0, 0)).is_err());
        assert!(generate(&SyntheticSpec::gp_draw(10, 65, 1.0, 0)).is_err());
        assert!(generate(&SyntheticSpec::linear_subspace(10, 3, 4, 0.0, 0)).is_err());
        assert!(generate(&SyntheticSpec::planted_clusters(10, 3, 0, 1.0, 1.0, 0)).is_err());
    }

    #[test]
    fn rotation_preserves_distances() {
        let pool = generate(&SyntheticSpec::gp_draw(6, 3, 1.0, 2)).unwrap();
        let rot = rotate(&pool, 5).unwrap();
        let d0 = crate::linalg::dist(pool.x().row(0), pool.x().row(4));
        let d1 = crate::linalg::dist(rot.x().row(0), rot.x().row(4));
        assert!((d0 - d1).abs() < 1e-5);
    }

    #[test]
    fn shuffle_keeps_label_multiset() {
        let pool = generate(&SyntheticSpec::gp_draw(20, 2, 1.0, 2)).unwrap();
        let sh = shuffle_labels(&pool, 1).unwrap();
        let mut a = pool.labels().unwrap().to_vec();
        let mut b = sh.labels().unwrap().to_vec();
        assert_ne!(a, b);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }
}
