//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dkbo::bo::{init_design, InitPolicy, InitRule};
use dkbo::deep::{fit_deep, joint_mll_grad, ProjectionMap, TrainConfig};
use dkbo::diagnostics::{class_pair_distances, median, smoothness_ratio, spearman, CoverageSpec};
use dkbo::gp::{fit_fixed, mll, FitOptions, FittedSurrogate, GpHyperparams, SurrogateKind};
use dkbo::linalg::Matrix;
use dkbo::store::Standardizer;
use dkbo::synth::{corrupt, generate, rotate, shuffle_labels, SyntheticSpec};
use dkbo::{acquisition::expected_improvement_point, load_pool, BoConfig, CandidatePool, PoolFormat, Session};
use dkbo_cli::{cmd_diagnose, cmd_run};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn matern(a: &[f64], b: &[f64], ls: f64, sv: f64) -> f64 {
    let d = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let r = 5f64.sqrt() * d / ls;
    sv * (1.0 + r + r * r / 3.0) * (-r).exp()
}

/// Gauss-Jordan inverse with partial pivoting and log|det|.
fn gauss_jordan(a: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m = a;
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        inv.swap(c, p);
        let piv = m[c][c];
        logdet += piv.abs().ln();
        for j in 0..n {
            m[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for i in (0..n).filter(|&i| i != c) {
            let f = m[i][c];
            for j in 0..n {
                m[i][j] -= f * m[c][j];
                inv[i][j] -= f * inv[c][j];
            }
        }
    }
    (inv, logdet)
}

fn random_hypers(rng: &mut ChaCha8Rng) -> GpHyperparams<f64> {
    GpHyperparams::new(
        rng.random_range(0.3..3.0),
        rng.random_range(0.3..3.0),
        rng.random_range(1e-2..1.0),
        rng.random_range(-1.0..1.0),
    )
    .unwrap()
}

fn gradients() -> Verdict {
    const H: f64 = 1e-5;
    let close = |a: f64, n: f64| (a - n).abs() <= 1e-7 || (a - n).abs() <= 1e-4 * a.abs().max(n.abs());
    let start = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    for seed in 0..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, m) = (rng.random_range(2..=20), rng.random_range(1..=8), rng.random_range(1..=4));
        let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = Matrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        let b = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let phi = ProjectionMap { w, b, dropout_rate: 0.0 };
        let theta = random_hypers(&mut rng);
        let f = |p: &ProjectionMap<f64>, t: &GpHyperparams<f64>| mll(&p.project_eval(&x).unwrap(), &y, t).unwrap();
        let g = joint_mll_grad(&x, &y, &phi, &theta).unwrap();
        let u = theta.to_unconstrained();
        for k in 0..4 {
            let (mut up, mut dn) = (u, u);
            up[k] += H;
            dn[k] -= H;
            let num = (f(&phi, &GpHyperparams::from_unconstrained(up))
                - f(&phi, &GpHyperparams::from_unconstrained(dn)))
                / (2.0 * H);
            if !close(g.hyper_grad[k], num) {
                failures.push(format!("seed {seed} theta[{k}]"));
            }
        }
        for r in 0..m {
            for c in 0..=d {
                let mut p = phi.clone();
                let (analytic, slot): (f64, &mut f64) =
                    if c < d { (g.w_grad[(r, c)], &mut p.w[(r, c)]) } else { (g.b_grad[r], &mut p.b[r]) };
                *slot += H;
                let fp = f(&p, &theta);
                let mut p = phi.clone();
                if c < d {
                    p.w[(r, c)] -= H;
                } else {
                    p.b[r] -= H;
                }
                let num = (fp - f(&p, &theta)) / (2.0 * H);
                if !close(analytic, num) {
                    failures.push(format!("seed {seed} phi[{r},{c}]"));
                }
            }
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{checked} instances, {} mismatches {:?}, {:.1}s",
            failures.len(),
            failures.first(),
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases: Vec<(Matrix<f64>, Vec<f64>, GpHyperparams<f64>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for n in 1..=20 {
        for _ in 0..5 {
            let d = rng.random_range(1..=6);
            let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
            let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            cases.push((x, y, random_hypers(&mut rng)));
        }
    }
    for name in ["gp_draw_60.bin", "gp_draw_80.bin", "planted_clusters_300.bin", "linear_subspace_60.bin"] {
        let pool = load_pool(fixture(name), PoolFormat::Binary).unwrap();
        for n in [1, 7, 20] {
            let idx: Vec<usize> = (0..n).collect();
            let y = idx.iter().map(|&i| pool.labels().unwrap()[i]).collect();
            cases.push((pool.x().select_rows(&idx), y, random_hypers(&mut rng)));
        }
    }
    for (x, y, t) in &cases {
        let n = x.nrows();
        let kmat: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        matern(x.row(i), x.row(j), t.lengthscale(), t.signal_variance())
                            + if i == j { t.noise_variance() } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let (kinv, logdet) = gauss_jordan(kmat);
        let r: Vec<f64> = y.iter().map(|v| v - t.mean()).collect();
        let quad: f64 = (0..n).map(|i| (0..n).map(|j| r[i] * kinv[i][j] * r[j]).sum::<f64>()).sum();
        let naive = -0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());
        worst = worst.max((mll(x, y, t).unwrap() - naive).abs());

        let xq = Matrix::from_fn(6, x.ncols(), |_, _| rng.random_range(-3.0..3.0));
        let post = FittedSurrogate::condition(x.clone(), y, *t, Standardizer::identity(), None)
            .unwrap()
            .posterior(&xq, false)
            .unwrap();
        for a in 0..xq.nrows() {
            let k: Vec<f64> =
                (0..n).map(|i| matern(xq.row(a), x.row(i), t.lengthscale(), t.signal_variance())).collect();
            let kk: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * k[j]).sum()).collect();
            let mu = t.mean() + (0..n).map(|i| kk[i] * r[i]).sum::<f64>();
            let var = (t.signal_variance() - (0..n).map(|i| k[i] * kk[i]).sum::<f64>()).max(0.0);
            worst = worst.max((post.mean[a] - mu).abs()).max((post.variance[a] - var).abs());
        }
    }
    verdict(worst < 1e-8, format!("{} problems, max deviation {worst:.2e}", cases.len()))
}

fn ei_monte_carlo() -> Verdict {
    const SAMPLES: usize = 1_000_000;
    let normal = Normal::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut points = 0;
    for &diff in &[-2.0, -0.5, 0.0, 0.3, 1.5] {
        for &s in &[0.0, 0.1, 0.5, 1.0, 2.0] {
            let mut acc = 0.0;
            for i in 0..SAMPLES {
                let u = (i as f64 + rng.random::<f64>()) / SAMPLES as f64;
                acc += (diff + s * normal.inverse_cdf(u)).max(0.0);
            }
            let mc = acc / SAMPLES as f64;
            worst = worst.max((expected_improvement_point(diff, s, 0.0) - mc).abs());
            points += 1;
        }
    }
    verdict(worst < 1e-3, format!("{points} grid points incl. s = 0, max |EI − MC| {worst:.2e}"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn read_metrics(path: &Path) -> BTreeMap<(String, u64), f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.deserialize::<BTreeMap<String, String>>()
        .map(|r| {
            let r = r.unwrap();
            assert_eq!(r["status"], "ok", "{r:?}");
            ((r["arm"].clone(), r["seed"].parse().unwrap()), r["coverage"].parse().unwrap())
        })
        .collect()
}

fn bo_efficacy(tmp: &Path) -> Verdict {
    let start = Instant::now();
    let data = fixture("planted_clusters_300.bin");
    let seeds: Vec<String> = (1..=20).map(|s| s.to_string()).collect();
    let common = format!(
        "[dataset]\npath = {data:?}\n[experiment]\niterations = 50\nseeds = [{}]\ncoverage_quantile = 0.05\n",
        seeds.join(", ")
    );
    let ei = write_config(tmp, "ei.toml", &format!("{common}surrogates = [\"deep\", \"fixed\"]\n"));
    let random = write_config(tmp, "random.toml", &format!("{common}acquisition = \"random\"\n"));
    cmd_run(&ei, None, Some(1), Some(&tmp.join("ei")), &mut std::io::sink()).unwrap();
    cmd_run(&random, None, Some(1), Some(&tmp.join("random")), &mut std::io::sink()).unwrap();
    let mut cov = read_metrics(&tmp.join("ei/metrics.csv"));
    cov.extend(read_metrics(&tmp.join("random/metrics.csv")));
    let arm = |a: &str| -> Vec<f64> { (1..=20).map(|s| cov[&(a.to_string(), s)]).collect() };
    let (deep, fixed, rand) = (arm("deep"), arm("fixed"), arm("random"));
    let (md, mf, mr) = (median(&deep), median(&fixed), median(&rand));
    let wins = deep.iter().zip(&fixed).filter(|(d, f)| d >= f).count();
    let elapsed = start.elapsed();
    verdict(
        md >= 2.0 * mr && wins >= 12 && elapsed < Duration::from_secs(600),
        format!(
            "median coverage deep {md:.3} fixed {mf:.3} random {mr:.3}; deep ≥ fixed in {wins}/20; {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn split(pool: &CandidatePool, size: usize, seed: u64) -> (Matrix<f64>, Vec<f64>) {
    let idx = init_design(pool, &InitPolicy { n_init: size, rule: InitRule::Uniform }, seed).unwrap();
    let y = idx.iter().map(|&i| pool.labels().unwrap()[i]).collect();
    (pool.x().select_rows(&idx), y)
}

fn contrastive() -> Verdict {
    let mut wins = 0;
    for seed in 1..=20u64 {
        let pool = generate(&SyntheticSpec::planted_clusters(300, 16, 3, 10.0, 1.0, seed)).unwrap();
        let (x, y) = split(&pool, 60, seed);
        let phi0 = ProjectionMap::<f64>::xavier(16, 64, seed).unwrap();
        let (_, fit) =
            fit_deep(&x, &y, &phi0, &GpHyperparams::default(), &TrainConfig { seed, ..TrainConfig::default() })
                .unwrap();
        let sep = |p: &ProjectionMap<f64>| {
            class_pair_distances(&p.project_eval(pool.x()).unwrap(), pool.labels().unwrap(), 0.1, 0.1)
                .unwrap()
                .summary
                .separation
                .unwrap()
        };
        if sep(fit.projection.as_ref().unwrap()) > sep(&phi0) {
            wins += 1;
        }
    }
    verdict(wins >= 15, format!("separation increased in {wins}/20 seeds"))
}

fn smoothness() -> Verdict {
    let names = ["base", "rotated", "noise σ=2", "noise σ=5", "noise σ=15", "shuffled", "shuffled+rotated"];
    let mut ratios = vec![Vec::new(); names.len()];
    let mut coverage = vec![Vec::new(); names.len()];
    for seed in 1..=20u64 {
        let base = generate(&SyntheticSpec::planted_clusters(300, 16, 3, 10.0, 1.0, seed)).unwrap();
        let shuffled = shuffle_labels(&base, seed).unwrap();
        let reps = [
            rotate(&base, seed).unwrap(),
            corrupt(&base, 2.0, seed).unwrap(),
            corrupt(&base, 5.0, seed).unwrap(),
            corrupt(&base, 15.0, seed).unwrap(),
            rotate(&shuffled, seed).unwrap(),
        ];
        let all = [&base, &reps[0], &reps[1], &reps[2], &reps[3], &shuffled, &reps[4]];
        for (r, pool) in all.into_iter().enumerate() {
            let (x, y) = split(pool, 60, seed);
            let fit = fit_fixed(&x, &y, &GpHyperparams::default(), &FitOptions::default()).unwrap();
            ratios[r].push(smoothness_ratio(&fit, pool, seed).unwrap());
            let cfg = BoConfig { surrogate: SurrogateKind::Fixed, ..BoConfig::default() };
            let session: Session = dkbo::run_bo(pool, cfg, seed).unwrap();
            coverage[r].push(session.coverage(&CoverageSpec::new(pool, 0.05).unwrap()));
        }
    }
    let mr: Vec<f64> = ratios.iter().map(|v| median(v)).collect();
    let mc: Vec<f64> = coverage.iter().map(|v| median(v)).collect();
    for (i, name) in names.iter().enumerate() {
        println!("    {name:<18} ratio {:.4}  coverage {:.3}", mr[i], mc[i]);
    }
    let rho = spearman(&mr, &mc);
    verdict(rho > 0.5, format!("{} representations, Spearman {rho:.3}", names.len()))
}

fn determinism(tmp: &Path) -> Verdict {
    let data = fixture("gp_draw_80.bin");
    let cfg = write_config(
        tmp,
        "det.toml",
        &format!(
            "[dataset]\npath = {data:?}\n[experiment]\nsurrogates = [\"fixed\", \"deep\"]\niterations = 8\nseeds = [1, 2, 3, 4]\n[train]\nepochs = 30\n"
        ),
    );
    let a = tmp.join("det-a");
    let b = tmp.join("det-b");
    cmd_run(&cfg, None, Some(1), Some(&a), &mut std::io::sink()).unwrap();
    cmd_run(&cfg, None, Some(3), Some(&b), &mut std::io::sink()).unwrap();
    let mut files = vec![PathBuf::from("metrics.csv"), PathBuf::from("aggregate.csv"), PathBuf::from("aggregate.json")];
    for arm in ["fixed", "deep"] {
        for s in 1..=4 {
            files.push(PathBuf::from(format!("runs/{arm}/seed-{s}/trace.csv")));
            files.push(PathBuf::from(format!("runs/{arm}/seed-{s}/events.jsonl")));
        }
    }
    let differing: Vec<_> =
        files.iter().filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap()).collect();
    verdict(
        differing.is_empty(),
        format!("{} files compared across 1 and 3 workers, differing {differing:?}", files.len()),
    )
}

fn diagnose_protocol(tmp: &Path) -> Verdict {
    let data = fixture("gp_draw_80.bin");
    let cfg = write_config(
        tmp,
        "diag.toml",
        &format!("[dataset]\npath = {data:?}\n[experiment]\nsurrogates = [\"fixed\", \"deep\"]\n"),
    );
    let out = tmp.join("diag");
    cmd_diagnose(&cfg, None, Some(&out), dkbo_cli::OutputFormat::Text, &mut std::io::sink()).unwrap();
    let mut rdr = csv::Reader::from_path(out.join("diagnostics.csv")).unwrap();
    let rows: Vec<BTreeMap<String, String>> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let mut bad = Vec::new();
    for r in &rows {
        let nlpd: f64 = r["nlpd"].parse().unwrap();
        let r2: Option<f64> = r["r2"].parse().ok();
        let ok = r["n_train"] == "60"
            && r["n_eval"] == "20"
            && nlpd.is_finite()
            && r2.is_some_and(|v| (-1.0..=1.0).contains(&v));
        if !ok {
            bad.push(format!("{} seed {}", r["arm"], r["seed"]));
        }
    }
    verdict(rows.len() == 40 && bad.is_empty(), format!("{} fits on a 60/20 split, violations {bad:?}", rows.len()))
}

type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient correctness", Box::new(gradients)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("EI correctness", Box::new(ei_monte_carlo)),
        ("BO efficacy", Box::new(|| bo_efficacy(tmp.path()))),
        ("implicit contrastive effect", Box::new(contrastive)),
        ("smoothness diagnostic", Box::new(smoothness)),
        ("determinism", Box::new(|| determinism(tmp.path()))),
        ("60-train protocol", Box::new(|| diagnose_protocol(tmp.path()))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = check();
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
