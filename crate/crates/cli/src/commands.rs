//! The six commands: run, suggest, tell, diagnose, report, validate.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use dkbo::bo::{init_design, InitPolicy, InitRule};
use dkbo::deep::{fit_deep, ProjectionMap, TrainConfig};
use dkbo::diagnostics::{
    aggregate, class_pair_distances, nlpd, r2, smoothness_ratio, weighted_r2, CoverageSpec, Histogram, MetricReport,
};
use dkbo::gp::{fit_fixed, FitOptions, GpHyperparams, SurrogateKind};
use dkbo::{CandidatePool, Session, Standardizer, Surrogate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Arm, DatasetConfig, ExperimentConfig};
use crate::output::{csv_bytes, json_bytes, num, opt, write_atomic};
use crate::{CliError, Outcome, OUTPUT_SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

/// Per-arm `(seed, metric → value)` rows awaiting aggregation.
type PerArm<K> = BTreeMap<K, Vec<(u64, BTreeMap<String, f64>)>>;

const METRICS_HEADER: [&str; 10] = [
    "schema_version",
    "arm",
    "seed",
    "status",
    "coverage",
    "best_y",
    "n_observed",
    "iterations",
    "exhausted_early",
    "error",
];

fn out_dir(cfg: &ExperimentConfig, config_path: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    match (out, &cfg.output.dir) {
        (Some(o), _) => Ok(o.to_path_buf()),
        (None, Some(d)) if d.is_relative() => Ok(config_path.parent().unwrap_or(Path::new(".")).join(d)),
        (None, Some(d)) => Ok(d.clone()),
        (None, None) => Err(CliError::Config("no output directory: pass --out or set output.dir".into())),
    }
}

fn seeds(cfg: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| cfg.experiment.seeds.clone(), |s| vec![s])
}

fn labeled_pool(cfg: &ExperimentConfig) -> Result<CandidatePool, CliError> {
    let pool = cfg.load_pool()?;
    if pool.y().is_none() {
        return Err(CliError::Input(format!("{} has no labels", cfg.dataset.path.display())));
    }
    Ok(pool)
}

struct RunResult {
    arm: Arm,
    seed: u64,
    outcome: Result<RunMetrics, String>,
}

struct RunMetrics {
    coverage: f64,
    best_y: f64,
    n_observed: usize,
    iterations: usize,
    exhausted_early: bool,
}

fn run_one(
    pool: &CandidatePool,
    cfg: &ExperimentConfig,
    spec: &CoverageSpec,
    arm: Arm,
    seed: u64,
    dir: &Path,
) -> Result<RunMetrics, String> {
    let session: Session = dkbo::run_bo(pool, cfg.bo_config(arm), seed).map_err(|e| e.to_string())?;
    let mut log = Vec::new();
    session.write_log(&mut log).map_err(|e| e.to_string())?;
    write_atomic(&dir.join("events.jsonl"), &log).map_err(|e| e.to_string())?;
    let initial = session.initial_ids.len();
    let trace = session.best_trace();
    let rows: Vec<Vec<String>> = session
        .observed
        .iter()
        .enumerate()
        .map(|(k, o)| {
            vec![
                OUTPUT_SCHEMA_VERSION.to_string(),
                k.to_string(),
                if k < initial { "init".into() } else { "bo".into() },
                o.id.clone(),
                num(o.y),
                num(trace[k]),
            ]
        })
        .collect();
    let bytes =
        csv_bytes(&["schema_version", "step", "phase", "id", "y", "best_y"], &rows).map_err(|e| e.to_string())?;
    write_atomic(&dir.join("trace.csv"), &bytes).map_err(|e| e.to_string())?;
    Ok(RunMetrics {
        coverage: session.coverage(spec),
        best_y: session.best_observed().map_or(f64::NAN, |o| o.y),
        n_observed: session.observed.len(),
        iterations: session.iteration,
        exhausted_early: session.exhausted_early,
    })
}

/// Executes every (arm × seed) run of a config and writes per-run event logs
/// and traces, `metrics.csv`, `aggregate.csv` and `aggregate.json`.
pub fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<&Path>,
    w: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let out = out_dir(&cfg, config_path, out)?;
    let pool = labeled_pool(&cfg)?;
    let spec = CoverageSpec::new(&pool, cfg.experiment.coverage_quantile)?;
    // Fails early if the initial design is infeasible for this pool.
    init_design(&pool, &cfg.init, 0)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }

    let jobs: Vec<(Arm, u64)> =
        cfg.arms().into_iter().flat_map(|a| seeds(&cfg, seed).into_iter().map(move |s| (a, s))).collect();
    std::fs::create_dir_all(&out)?;
    write_atomic(&out.join("config.json"), &json_bytes(&cfg)?)?;
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<RunResult> = threads.install(|| {
        jobs.par_iter()
            .map(|&(arm, s)| {
                let dir = out.join("runs").join(arm.label()).join(format!("seed-{s}"));
                RunResult { arm, seed: s, outcome: run_one(&pool, &cfg, &spec, arm, s, &dir) }
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut per_arm: PerArm<&str> = BTreeMap::new();
    let mut failed = 0;
    for r in &results {
        let v = OUTPUT_SCHEMA_VERSION.to_string();
        match &r.outcome {
            Ok(m) => {
                rows.push(vec![
                    v,
                    r.arm.label().into(),
                    r.seed.to_string(),
                    "ok".into(),
                    num(m.coverage),
                    num(m.best_y),
                    m.n_observed.to_string(),
                    m.iterations.to_string(),
                    m.exhausted_early.to_string(),
                    String::new(),
                ]);
                per_arm.entry(r.arm.label()).or_default().push((
                    r.seed,
                    BTreeMap::from([
                        ("coverage_pct".to_string(), 100.0 * m.coverage),
                        ("best_y".to_string(), m.best_y),
                    ]),
                ));
            }
            Err(e) => {
                failed += 1;
                rows.push(vec![
                    v,
                    r.arm.label().into(),
                    r.seed.to_string(),
                    "failed".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    e.clone(),
                ]);
            }
        }
    }
    write_atomic(&out.join("metrics.csv"), &csv_bytes(&METRICS_HEADER, &rows)?)?;
    let reports = write_aggregates(&out, &per_arm, "aggregate")?;
    print_reports(w, &reports)?;
    if failed > 0 {
        writeln!(w, "{failed} of {} runs failed; see metrics.csv", results.len())?;
        return Ok(Outcome::Partial { failed, total: results.len() });
    }
    Ok(Outcome::Success)
}

#[derive(Serialize, Deserialize)]
struct AggregateDoc {
    schema_version: u32,
    arms: BTreeMap<String, MetricReport>,
}

fn write_aggregates(
    out: &Path,
    per_arm: &PerArm<&str>,
    stem: &str,
) -> Result<BTreeMap<String, MetricReport>, CliError> {
    let mut reports = BTreeMap::new();
    let mut rows = Vec::new();
    for (arm, vals) in per_arm {
        let report = aggregate(vals)?;
        for (metric, st) in &report.aggregate {
            rows.push(vec![
                OUTPUT_SCHEMA_VERSION.to_string(),
                arm.to_string(),
                metric.clone(),
                st.n.to_string(),
                num(st.mean),
                num(st.std),
                st.display(),
            ]);
        }
        reports.insert(arm.to_string(), report);
    }
    let header = ["schema_version", "arm", "metric", "n", "mean", "std", "summary"];
    write_atomic(&out.join(format!("{stem}.csv")), &csv_bytes(&header, &rows)?)?;
    let doc = AggregateDoc { schema_version: OUTPUT_SCHEMA_VERSION, arms: reports.clone() };
    write_atomic(&out.join(format!("{stem}.json")), &json_bytes(&doc)?)?;
    Ok(reports)
}

fn print_reports(w: &mut dyn Write, reports: &BTreeMap<String, MetricReport>) -> Result<(), CliError> {
    for (arm, r) in reports {
        for (metric, st) in &r.aggregate {
            let flag = if st.single_seed { " (n=1)" } else { "" };
            writeln!(w, "{arm:<8} {metric:<20} {}{flag}", st.display())?;
        }
    }
    Ok(())
}

/// Pointer from a session directory to its pool.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionMeta {
    schema_version: u32,
    dataset: DatasetConfig,
    pool_sha256: String,
}

const SESSION_META: &str = "session.json";
const SESSION_LOG: &str = "events.jsonl";

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn open_session(dir: &Path) -> Result<(Session, CandidatePool), CliError> {
    let meta_path = dir.join(SESSION_META);
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| CliError::Input(format!("{} is not a session directory: {e}", dir.display())))?;
    let meta: SessionMeta = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{SESSION_META}: {e}")))?;
    if meta.schema_version != OUTPUT_SCHEMA_VERSION {
        return Err(CliError::Input(format!("unsupported session schema {}", meta.schema_version)));
    }
    if sha256_file(&meta.dataset.path)? != meta.pool_sha256 {
        return Err(CliError::Input(format!("{} changed since the session started", meta.dataset.path.display())));
    }
    let pool = meta.dataset.load_pool()?;
    let session = Session::load(&pool, dir.join(SESSION_LOG))?;
    Ok((session, pool))
}

fn init_session(dir: &Path, config_path: &Path, seed: Option<u64>) -> Result<(Session, CandidatePool), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let arms = cfg.arms();
    if arms.len() != 1 {
        return Err(CliError::Config("an interactive session needs exactly one surrogate".into()));
    }
    let pool = cfg.load_pool()?;
    let seed = seed.unwrap_or(cfg.experiment.seeds[0]);
    let session = Session::start(&pool, cfg.bo_config(arms[0]), seed)?;
    let dataset = DatasetConfig { path: std::fs::canonicalize(&cfg.dataset.path)?, ..cfg.dataset.clone() };
    let meta = SessionMeta { schema_version: OUTPUT_SCHEMA_VERSION, pool_sha256: sha256_file(&dataset.path)?, dataset };
    let mut log = Vec::new();
    session.write_log(&mut log)?;
    write_atomic(&dir.join(SESSION_LOG), &log)?;
    write_atomic(&dir.join(SESSION_META), &json_bytes(&meta)?)?;
    Ok((session, pool))
}

/// Prints the next candidate of the session in `dir`, creating the session
/// from `config` when the directory holds none yet. Never changes an
/// existing session.
pub fn cmd_suggest(
    dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    format: OutputFormat,
    w: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let (session, pool) = if dir.join(SESSION_META).exists() {
        open_session(dir)?
    } else {
        let config = config.ok_or_else(|| {
            CliError::Input(format!("{} holds no session; pass --config to start one", dir.display()))
        })?;
        init_session(dir, config, seed)?
    };
    let s = session.suggest(&pool)?;
    match format {
        OutputFormat::Text => {
            let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), num);
            writeln!(w, "{}\t{}\t{}", s.id, f(s.mean), f(s.std))?;
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "schema_version": OUTPUT_SCHEMA_VERSION,
                "id": s.id,
                "iteration": session.iteration,
                "initial": s.initial,
                "mean": s.mean,
                "std": s.std,
                "ei": s.score,
            });
            writeln!(w, "{doc}")?;
        }
    }
    Ok(Outcome::Success)
}

/// Records an observation and appends it to the session log.
pub fn cmd_tell(dir: &Path, id: &str, y: &str, w: &mut dyn Write) -> Result<Outcome, CliError> {
    let value: f64 = y.trim().parse().map_err(|_| CliError::Input(format!("not a number: {y:?}")))?;
    if !value.is_finite() {
        return Err(CliError::Input(format!("observation must be finite, got {y}")));
    }
    let (mut session, pool) = open_session(dir)?;
    let before = session.events().len();
    session.tell(&pool, id, value)?;
    session.append_log(dir.join(SESSION_LOG), before)?;
    if let Some(dkbo::Event::Observation { out_of_band: true, .. }) = session.events().last() {
        writeln!(w, "recorded {id} = {value} (out of band)")?;
    } else {
        writeln!(w, "recorded {id} = {value}")?;
    }
    Ok(Outcome::Success)
}

struct DiagRow {
    arm: &'static str,
    seed: u64,
    n_train: usize,
    n_eval: usize,
    hypers: GpHyperparams<f64>,
    mll: f64,
    smoothness: f64,
    r2: Option<f64>,
    weighted_r2: Option<f64>,
    nlpd: f64,
    nlpd_floored: bool,
    separation: Option<f64>,
    standardizer: Standardizer,
}

fn fit_split(
    cfg: &ExperimentConfig,
    kind: SurrogateKind,
    x: &dkbo::Mat,
    y: &[f64],
    seed: u64,
) -> Result<(Surrogate, Option<Vec<dkbo::deep::TrainRecord>>), CliError> {
    Ok(match kind {
        SurrogateKind::Fixed => (fit_fixed(x, y, &GpHyperparams::default(), &FitOptions { seed, ..cfg.fit })?, None),
        SurrogateKind::Deep => {
            let phi0 =
                ProjectionMap::xavier(x.ncols(), cfg.projection.m, seed)?.with_dropout(cfg.projection.dropout)?;
            let train = TrainConfig { seed, ..cfg.train.clone() };
            let (fit, joint) = fit_deep(x, y, &phi0, &GpHyperparams::default(), &train)?;
            (fit, Some(joint.trace))
        }
    })
}

/// Train/eval split diagnostics: smoothness ratio, R², weighted R², NLPD and
/// class-pair distance histograms for each surrogate and seed.
pub fn cmd_diagnose(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    format: OutputFormat,
    w: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let out = out_dir(&cfg, config_path, out)?;
    let pool = labeled_pool(&cfg)?;
    let d = cfg.diagnose;
    if pool.len() < d.train_size + 2 {
        return Err(CliError::Input(format!(
            "pool of {} is too small for a {}-point training split (need at least {})",
            pool.len(),
            d.train_size,
            d.train_size + 2
        )));
    }
    let mut kinds: Vec<SurrogateKind> = cfg.arms().into_iter().map(Arm::surrogate).collect();
    kinds.dedup();
    let y_all = pool.labels()?;
    let x_all = pool.x();

    let mut rows = Vec::new();
    let mut hist_rows = Vec::new();
    for &kind in &kinds {
        for s in seeds(&cfg, seed) {
            let train = init_design(&pool, &InitPolicy { n_init: d.train_size, rule: InitRule::Uniform }, s)?;
            let mut in_train = vec![false; pool.len()];
            train.iter().for_each(|&i| in_train[i] = true);
            let eval: Vec<usize> = (0..pool.len()).filter(|&i| !in_train[i]).collect();
            let xt = x_all.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y_all[i]).collect();
            let ye: Vec<f64> = eval.iter().map(|&i| y_all[i]).collect();
            let (fit, trace) = fit_split(&cfg, kind, &xt, &yt, s)?;
            let run_dir = out.join("diagnose").join(kind.name()).join(format!("seed-{s}"));
            if let Some(trace) = trace {
                let mut buf = Vec::new();
                for rec in &trace {
                    serde_json::to_writer(&mut buf, rec).map_err(|e| CliError::Input(e.to_string()))?;
                    buf.push(b'\n');
                }
                write_atomic(&run_dir.join("train.jsonl"), &buf)?;
            }
            let post = fit.posterior_raw(&x_all.select_rows(&eval), true)?;
            let loss = nlpd(&ye, &post)?;
            let z = fit.transform(x_all)?;
            let classes = class_pair_distances(&z, y_all, d.class_hi_q, d.class_lo_q)?;
            let families =
                [("high_high", &classes.high_high), ("high_low", &classes.high_low), ("low_low", &classes.low_low)];
            let top =
                families.iter().filter_map(|(_, f)| f.as_ref()).flat_map(|v| v.iter().copied()).fold(0.0f64, f64::max);
            let hi = if top > 0.0 { top } else { 1.0 };
            for (name, fam) in families {
                if let Some(values) = fam {
                    let h = Histogram::new(values, 0.0, hi, d.histogram_bins);
                    for b in 0..h.counts.len() {
                        hist_rows.push(vec![
                            OUTPUT_SCHEMA_VERSION.to_string(),
                            kind.name().into(),
                            s.to_string(),
                            name.into(),
                            num(h.edges[b]),
                            num(h.edges[b + 1]),
                            h.counts[b].to_string(),
                        ]);
                    }
                }
            }
            rows.push(DiagRow {
                arm: kind.name(),
                seed: s,
                n_train: train.len(),
                n_eval: eval.len(),
                hypers: fit.hypers,
                mll: fit.mll,
                smoothness: smoothness_ratio(&fit, &pool, s)?,
                r2: r2(&ye, &post.mean)?,
                weighted_r2: weighted_r2(&ye, &post.mean, d.top_quantile, d.weight_hi, d.weight_lo)?,
                nlpd: loss.value,
                nlpd_floored: loss.floored,
                separation: classes.summary.separation,
                standardizer: fit.standardizer,
            });
        }
    }

    let header = [
        "schema_version",
        "arm",
        "seed",
        "n_train",
        "n_eval",
        "lengthscale",
        "signal_variance",
        "noise_variance",
        "mean_const",
        "mll",
        "smoothness_ratio",
        "r2",
        "weighted_r2",
        "nlpd",
        "nlpd_floored",
        "separation",
        "y_mean",
        "y_std",
        "y_degenerate",
    ];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                OUTPUT_SCHEMA_VERSION.to_string(),
                r.arm.into(),
                r.seed.to_string(),
                r.n_train.to_string(),
                r.n_eval.to_string(),
                num(r.hypers.lengthscale()),
                num(r.hypers.signal_variance()),
                num(r.hypers.noise_variance()),
                num(r.hypers.mean()),
                num(r.mll),
                num(r.smoothness),
                opt(r.r2),
                opt(r.weighted_r2),
                num(r.nlpd),
                r.nlpd_floored.to_string(),
                opt(r.separation.filter(|v| v.is_finite())),
                num(r.standardizer.y_mean),
                num(r.standardizer.y_std),
                r.standardizer.degenerate.to_string(),
            ]
        })
        .collect();
    write_atomic(&out.join("diagnostics.csv"), &csv_bytes(&header, &table)?)?;
    let hist_header = ["schema_version", "arm", "seed", "family", "bin_lo", "bin_hi", "count"];
    write_atomic(&out.join("class_pairs.csv"), &csv_bytes(&hist_header, &hist_rows)?)?;

    let mut per_arm: PerArm<&str> = BTreeMap::new();
    for r in &rows {
        let mut m = BTreeMap::from([
            ("smoothness_ratio".to_string(), r.smoothness),
            ("nlpd".to_string(), r.nlpd),
            ("lengthscale".to_string(), r.hypers.lengthscale()),
        ]);
        if let Some(v) = r.r2 {
            m.insert("r2".into(), v);
        }
        if let Some(v) = r.weighted_r2 {
            m.insert("weighted_r2".into(), v);
        }
        if let Some(v) = r.separation.filter(|v| v.is_finite()) {
            m.insert("separation".into(), v);
        }
        per_arm.entry(r.arm).or_default().push((r.seed, m));
    }
    let reports = write_aggregates(&out, &per_arm, "diagnostics_aggregate")?;
    match format {
        OutputFormat::Text => {
            for r in &rows {
                writeln!(
                    w,
                    "{} seed {}: smoothness {:.4}  R² {}  weighted R² {}  NLPD {:.4}",
                    r.arm,
                    r.seed,
                    r.smoothness,
                    r.r2.map_or("NA".into(), |v| format!("{v:.4}")),
                    r.weighted_r2.map_or("NA".into(), |v| format!("{v:.4}")),
                    r.nlpd
                )?;
            }
            print_reports(w, &reports)?;
        }
        OutputFormat::Json => {
            let doc = AggregateDoc { schema_version: OUTPUT_SCHEMA_VERSION, arms: reports };
            writeln!(w, "{}", serde_json::to_string(&doc).map_err(|e| CliError::Input(e.to_string()))?)?;
        }
    }
    Ok(Outcome::Success)
}

/// Re-aggregates `metrics.csv` and/or `diagnostics.csv` found in `dir` and
/// writes `report.json`.
pub fn cmd_report(dir: &Path, format: OutputFormat, w: &mut dyn Write) -> Result<Outcome, CliError> {
    let mut sections: BTreeMap<String, BTreeMap<String, MetricReport>> = BTreeMap::new();
    let sources = [
        ("metrics.csv", &["coverage", "best_y"][..]),
        ("diagnostics.csv", &["smoothness_ratio", "r2", "weighted_r2", "nlpd", "separation", "lengthscale"][..]),
    ];
    for (file, metrics) in sources {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| CliError::Input(format!("{file}: {e}")))?;
        let header = rdr.headers().map_err(|e| CliError::Input(format!("{file}: {e}")))?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (arm_c, seed_c) = match (col("arm"), col("seed")) {
            (Some(a), Some(s)) => (a, s),
            _ => return Err(CliError::Input(format!("{file}: missing arm/seed columns"))),
        };
        let mut per_arm: PerArm<String> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Input(format!("{file}: {e}")))?;
            if col("schema_version").and_then(|c| rec.get(c)) != Some(&OUTPUT_SCHEMA_VERSION.to_string()[..]) {
                return Err(CliError::Input(format!("{file}: unsupported schema version")));
            }
            let seed: u64 = rec[seed_c].parse().map_err(|_| CliError::Input(format!("{file}: bad seed")))?;
            let mut m = BTreeMap::new();
            for &name in metrics {
                if let Some(v) = col(name).and_then(|c| rec.get(c)).and_then(|s| s.parse::<f64>().ok()) {
                    if !v.is_finite() {
                        continue;
                    }
                    if name == "coverage" {
                        m.insert("coverage_pct".to_string(), 100.0 * v);
                    } else {
                        m.insert(name.to_string(), v);
                    }
                }
            }
            if !m.is_empty() {
                per_arm.entry(rec[arm_c].to_string()).or_default().push((seed, m));
            }
        }
        let mut reports = BTreeMap::new();
        for (arm, vals) in per_arm {
            reports.insert(arm, aggregate(&vals)?);
        }
        sections.insert(file.trim_end_matches(".csv").to_string(), reports);
    }
    if sections.is_empty() {
        return Err(CliError::Input(format!("no metrics.csv or diagnostics.csv in {}", dir.display())));
    }
    #[derive(Serialize)]
    struct ReportDoc<'a> {
        schema_version: u32,
        sections: &'a BTreeMap<String, BTreeMap<String, MetricReport>>,
    }
    let doc = ReportDoc { schema_version: OUTPUT_SCHEMA_VERSION, sections: &sections };
    write_atomic(&dir.join("report.json"), &json_bytes(&doc)?)?;
    match format {
        OutputFormat::Text => {
            for (section, reports) in &sections {
                writeln!(w, "[{section}]")?;
                print_reports(w, reports)?;
            }
        }
        OutputFormat::Json => {
            writeln!(w, "{}", serde_json::to_string(&doc).map_err(|e| CliError::Input(e.to_string()))?)?;
        }
    }
    Ok(Outcome::Success)
}

/// Checks the config and its pool without writing anything.
pub fn cmd_validate(config_path: &Path, format: OutputFormat, w: &mut dyn Write) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let pool = cfg.load_pool()?;
    if pool.y().is_some() {
        init_design(&pool, &cfg.init, 0)?;
    }
    let arms: Vec<&str> = cfg.arms().into_iter().map(Arm::label).collect();
    match format {
        OutputFormat::Text => {
            writeln!(
                w,
                "config ok: arms {arms:?}, {} seeds, T = {}",
                cfg.experiment.seeds.len(),
                cfg.experiment.iterations
            )?;
            writeln!(
                w,
                "pool ok: n = {}, d = {}, labels {}",
                pool.len(),
                pool.dim(),
                if pool.y().is_some() { "present" } else { "absent" }
            )?;
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "schema_version": OUTPUT_SCHEMA_VERSION,
                "arms": arms,
                "seeds": cfg.experiment.seeds,
                "iterations": cfg.experiment.iterations,
                "n": pool.len(),
                "d": pool.dim(),
                "labeled": pool.y().is_some(),
            });
            writeln!(w, "{doc}")?;
        }
    }
    Ok(Outcome::Success)
}
