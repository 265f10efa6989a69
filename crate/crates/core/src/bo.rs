//! Pool-based Bayesian optimization loop with a replayable event log.
//!
//! Every iteration refits the surrogate on the observed set, scores the
//! remaining candidates, selects one and records its label. Sessions are
//! deterministic functions of (pool, config, seed): all randomness is drawn
//! from generators derived from the session seed and the iteration index.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{argmax_with_ties, random_select, score_candidates, Acquisition};
use crate::deep::{fit_deep, ProjectionMap, TrainConfig, DEFAULT_DROPOUT, DEFAULT_PROJECTION_DIM};
use crate::diagnostics::{median, topk_coverage, CoverageSpec};
use crate::error::{Error, Result};
use crate::gp::{fit_fixed, FitOptions, FittedSurrogate, GpHyperparams, SurrogateKind, SurrogateRecord};
use crate::scalar::Real;
use crate::store::CandidatePool;

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ITERATIONS: usize = 50;
pub const DEFAULT_N_INIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Uniform among candidates whose label is at or below the pool median.
    LowerMedian,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitPolicy {
    pub n_init: usize,
    pub rule: InitRule,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self { n_init: DEFAULT_N_INIT, rule: InitRule::LowerMedian }
    }
}

/// Everything that determines a session besides the pool and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub surrogate: SurrogateKind,
    pub acquisition: Acquisition,
    pub init: InitPolicy,
    pub iterations: usize,
    pub fit: FitOptions,
    pub train: TrainConfig,
    pub projection_dim: usize,
    pub dropout: f64,
    /// Reuse the previous iteration's `(θ, φ)` instead of re-initializing.
    pub warm_start: bool,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateKind::Deep,
            acquisition: Acquisition::Ei,
            init: InitPolicy::default(),
            iterations: DEFAULT_ITERATIONS,
            fit: FitOptions::default(),
            train: TrainConfig::default(),
            projection_dim: DEFAULT_PROJECTION_DIM,
            dropout: DEFAULT_DROPOUT,
            warm_start: false,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init.n_init == 0 {
            return Err(Error::Invalid("n_init must be at least 1".into()));
        }
        if self.projection_dim == 0 {
            return Err(Error::Invalid("projection_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.fit.restarts == 0 || self.fit.max_evals == 0 {
            return Err(Error::Invalid("fit restarts and max_evals must be positive".into()));
        }
        self.train.validate()
    }
}

/// Seeded initial design; returns pool row indices.
pub fn init_design(pool: &CandidatePool, policy: &InitPolicy, seed: u64) -> Result<Vec<usize>> {
    let n = pool.len();
    if policy.n_init == 0 {
        return Err(Error::Invalid("n_init must be at least 1".into()));
    }
    let candidates: Vec<usize> = match policy.rule {
        InitRule::LowerMedian => {
            let y = pool.labels()?;
            if n < 2 * policy.n_init {
                return Err(Error::InsufficientData(format!(
                    "lower-median init of {} points needs a pool of at least {}, got {n}",
                    policy.n_init,
                    2 * policy.n_init
                )));
            }
            let med = median(y);
            (0..n).filter(|&i| y[i] <= med).collect()
        }
        InitRule::Uniform => (0..n).collect(),
    };
    if candidates.len() < policy.n_init {
        return Err(Error::InsufficientData(format!(
            "only {} eligible initial candidates for n_init = {}",
            candidates.len(),
            policy.n_init
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, Purpose::Init));
    let mut pick = candidates;
    // Partial Fisher-Yates.
    for i in 0..policy.n_init {
        let j = rng.random_range(i..pick.len());
        pick.swap(i, j);
    }
    pick.truncate(policy.n_init);
    Ok(pick)
}

#[derive(Clone, Copy)]
enum Purpose {
    Init = 1,
    Select = 2,
    Projection = 3,
    Training = 4,
    Restarts = 5,
}

/// SplitMix64 finalizer over (seed, iteration, purpose).
fn derive_seed(seed: u64, iteration: usize, purpose: Purpose) -> u64 {
    let mut z = seed
        .wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((purpose as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub y: f64,
}

/// One event-log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Init {
        seed: u64,
        config: BoConfig,
        pool_size: usize,
        pool_dim: usize,
        initial: Vec<Observation>,
    },
    Fit {
        iteration: usize,
        surrogate: SurrogateRecord,
    },
    Scores {
        iteration: usize,
        n_scored: usize,
        max_score: f64,
        /// FNV-1a over the score bit patterns, in pool order.
        digest: String,
    },
    Selection {
        iteration: usize,
        id: String,
        score: Option<f64>,
        mean: Option<f64>,
        std: Option<f64>,
    },
    Observation {
        iteration: usize,
        id: String,
        y: f64,
        /// Told without being the current suggestion.
        out_of_band: bool,
        /// Counted towards the initial design.
        initial: bool,
    },
    Ended {
        iteration: usize,
        reason: String,
    },
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    v: u32,
    #[serde(flatten)]
    event: Event,
}

/// Proposed next candidate together with the records that produced it.
#[derive(Clone, Debug)]
pub struct Suggestion {
    pub index: usize,
    pub id: String,
    pub score: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Still collecting the initial design (unlabeled pools only).
    pub initial: bool,
    events: Vec<Event>,
}

/// Resumable optimization state.
#[derive(Clone, Debug, PartialEq)]
pub struct BoSession<T = f64> {
    pub seed: u64,
    pub config: BoConfig,
    pub iteration: usize,
    pub observed: Vec<Observation>,
    pub initial_ids: Vec<String>,
    remaining: BTreeSet<usize>,
    index: HashMap<String, usize>,
    events: Vec<Event>,
    pub exhausted_early: bool,
    _scalar: PhantomData<T>,
}

impl<T: Real> BoSession<T> {
    /// Creates a session. On labeled pools the initial design is drawn with
    /// `config.init` and its labels revealed; unlabeled pools start empty and
    /// collect the first `n_init` observations through [`BoSession::tell`].
    pub fn start(pool: &CandidatePool, config: BoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let initial = match pool.y() {
            Some(y) => init_design(pool, &config.init, seed)?
                .into_iter()
                .map(|i| Observation { id: pool.ids()[i].clone(), y: y[i] })
                .collect(),
            None => {
                if config.init.rule == InitRule::LowerMedian {
                    return Err(Error::Unlabeled);
                }
                Vec::new()
            }
        };
        let init = Event::Init { seed, config, pool_size: pool.len(), pool_dim: pool.dim(), initial };
        Self::from_init(pool, init)
    }

    fn from_init(pool: &CandidatePool, init: Event) -> Result<Self> {
        let Event::Init { seed, config, pool_size, pool_dim, initial } = &init else {
            return Err(Error::Log("log must begin with an init event".into()));
        };
        if *pool_size != pool.len() || *pool_dim != pool.dim() {
            return Err(Error::Log(format!(
                "pool shape {}x{} does not match logged {}x{}",
                pool.len(),
                pool.dim(),
                pool_size,
                pool_dim
            )));
        }
        let index: HashMap<String, usize> = pool.ids().iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut session = Self {
            seed: *seed,
            config: config.clone(),
            iteration: 0,
            observed: Vec::new(),
            initial_ids: Vec::new(),
            remaining: (0..pool.len()).collect(),
            index,
            events: Vec::new(),
            exhausted_early: false,
            _scalar: PhantomData,
        };
        for obs in initial {
            let i = session.lookup(&obs.id)?;
            if !session.remaining.remove(&i) {
                return Err(Error::Log(format!("initial id {:?} listed twice", obs.id)));
            }
            session.observed.push(obs.clone());
            session.initial_ids.push(obs.id.clone());
        }
        session.events.push(init);
        Ok(session)
    }

    fn lookup(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn remaining(&self) -> impl Iterator<Item = usize> + '_ {
        self.remaining.iter().copied()
    }

    pub fn remaining_len(&self) -> usize {
        self.remaining.len()
    }

    /// Pool rows of every observation, in acquisition order.
    pub fn evaluated_indices(&self) -> Vec<usize> {
        self.observed.iter().map(|o| self.index[&o.id]).collect()
    }

    pub fn best_observed(&self) -> Option<&Observation> {
        self.observed.iter().fold(None, |best: Option<&Observation>, o| match best {
            Some(b) if b.y >= o.y => Some(b),
            _ => Some(o),
        })
    }

    /// Best objective after each observation.
    pub fn best_trace(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.observed
            .iter()
            .map(|o| {
                best = best.max(o.y);
                best
            })
            .collect()
    }

    pub fn coverage(&self, spec: &CoverageSpec) -> f64 {
        topk_coverage(self.evaluated_indices(), spec)
    }

    fn in_initial_phase(&self) -> bool {
        let revealed = matches!(self.events.first(), Some(Event::Init { initial, .. }) if !initial.is_empty());
        !revealed && self.initial_ids.len() < self.config.init.n_init
    }

    fn last_fit(&self) -> Option<&SurrogateRecord> {
        self.events.iter().rev().find_map(|e| match e {
            Event::Fit { surrogate, .. } => Some(surrogate),
            _ => None,
        })
    }

    /// Fits the configured surrogate on the current observations.
    pub fn fit_surrogate(&self, pool: &CandidatePool) -> Result<FittedSurrogate<T>> {
        let rows = self.evaluated_indices();
        let x = pool.features::<T>().select_rows(&rows);
        let y: Vec<T> = self.observed.iter().map(|o| T::lit(o.y)).collect();
        let ids: Vec<String> = self.observed.iter().map(|o| o.id.clone()).collect();
        let it = self.iteration;
        let warm = if self.config.warm_start { self.last_fit() } else { None };
        let fit = match self.config.surrogate {
            SurrogateKind::Fixed => {
                let theta0 = match warm {
                    Some(r) => r.hypers()?,
                    None => GpHyperparams::default(),
                };
                let opts = FitOptions { seed: derive_seed(self.seed, it, Purpose::Restarts), ..self.config.fit };
                fit_fixed(&x, &y, &theta0, &opts)?
            }
            SurrogateKind::Deep => {
                let warm_phi = warm.and_then(|r| r.projection.as_ref());
                let (phi0, theta0) = match (warm, warm_phi) {
                    (Some(r), Some(p)) => (ProjectionMap::from_record(p)?, r.hypers()?),
                    _ => (
                        ProjectionMap::xavier(
                            pool.dim(),
                            self.config.projection_dim,
                            derive_seed(self.seed, it, Purpose::Projection),
                        )?,
                        GpHyperparams::default(),
                    ),
                };
                let phi0 = phi0.with_dropout(self.config.dropout)?;
                let cfg =
                    TrainConfig { seed: derive_seed(self.seed, it, Purpose::Training), ..self.config.train.clone() };
                fit_deep(&x, &y, &phi0, &theta0, &cfg)?.0
            }
        };
        Ok(fit.with_ids(ids))
    }

    /// Proposes the next candidate without changing the session.
    pub fn suggest(&self, pool: &CandidatePool) -> Result<Suggestion> {
        if self.remaining.is_empty() {
            return Err(Error::Exhausted);
        }
        let remaining: Vec<usize> = self.remaining.iter().copied().collect();
        let it = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, it, Purpose::Select));
        let random_pick = |rng: &mut ChaCha8Rng, initial: bool| -> Result<Suggestion> {
            let index = random_select(&remaining, rng)?;
            let id = pool.ids()[index].clone();
            let events = if initial {
                Vec::new()
            } else {
                vec![Event::Selection { iteration: it, id: id.clone(), score: None, mean: None, std: None }]
            };
            Ok(Suggestion { index, id, score: None, mean: None, std: None, initial, events })
        };
        if self.in_initial_phase() {
            // Distinct stream per initial observation.
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.observed.len(), Purpose::Init));
            return random_pick(&mut rng, true);
        }
        if self.config.acquisition == Acquisition::Random || self.observed.len() < 2 {
            return random_pick(&mut rng, false);
        }
        let fit = self.fit_surrogate(pool)?;
        let f_best = self.best_observed().map(|o| o.y).ok_or(Error::InsufficientData("no observations".into()))?;
        let scores = score_candidates(&fit, &pool.features::<T>(), &remaining, f_best)?;
        let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let k = argmax_with_ties(&raw, &mut rng)?;
        let chosen = &scores[k];
        let id = pool.ids()[chosen.index].clone();
        let max_score = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let events = vec![
            Event::Fit { iteration: it, surrogate: fit_record(&fit, self.config.warm_start) },
            Event::Scores { iteration: it, n_scored: raw.len(), max_score, digest: digest(&raw) },
            Event::Selection {
                iteration: it,
                id: id.clone(),
                score: Some(chosen.score),
                mean: Some(fit.standardizer.inverse(chosen.mean)),
                std: Some(chosen.std * fit.standardizer.y_std),
            },
        ];
        Ok(Suggestion {
            index: chosen.index,
            id,
            score: Some(chosen.score),
            mean: Some(fit.standardizer.inverse(chosen.mean)),
            std: Some(chosen.std * fit.standardizer.y_std),
            initial: false,
            events,
        })
    }

    /// Records `y` for `id`. Recomputes the current suggestion so the log is
    /// identical to a batch run; ids other than the suggestion are accepted
    /// and flagged out-of-band. On error the session is unchanged.
    pub fn tell(&mut self, pool: &CandidatePool, id: &str, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::Invalid(format!("observation for {id:?} is not finite")));
        }
        let i = self.lookup(id)?;
        if !self.remaining.contains(&i) {
            return Err(Error::Invalid(format!("{id:?} has already been observed")));
        }
        let suggestion = self.suggest(pool)?;
        self.commit(suggestion, i, id.to_string(), y);
        Ok(())
    }

    fn commit(&mut self, suggestion: Suggestion, index: usize, id: String, y: f64) {
        let out_of_band = suggestion.index != index;
        let initial = suggestion.initial;
        self.events.extend(suggestion.events);
        self.events.push(Event::Observation { iteration: self.iteration, id: id.clone(), y, out_of_band, initial });
        self.apply_observation(index, id, y, initial);
    }

    fn apply_observation(&mut self, index: usize, id: String, y: f64, initial: bool) {
        self.remaining.remove(&index);
        if initial {
            self.initial_ids.push(id.clone());
        } else {
            self.iteration += 1;
        }
        self.observed.push(Observation { id, y });
    }

    /// Runs one fit → score → select → observe step on a labeled pool.
    pub fn step(&mut self, pool: &CandidatePool) -> Result<()> {
        let y = pool.labels()?;
        let s = self.suggest(pool)?;
        let (index, id, value) = (s.index, s.id.clone(), y[s.index]);
        self.commit(s, index, id, value);
        Ok(())
    }

    /// Runs until `config.iterations` steps are done or the pool runs out.
    pub fn run(&mut self, pool: &CandidatePool) -> Result<()> {
        while self.iteration < self.config.iterations {
            if self.remaining.is_empty() {
                self.exhausted_early = true;
                self.events.push(Event::Ended { iteration: self.iteration, reason: "pool exhausted".into() });
                break;
            }
            self.step(pool)?;
        }
        Ok(())
    }

    /// Rebuilds a session from its event log.
    pub fn replay(pool: &CandidatePool, events: &[Event]) -> Result<Self> {
        let (first, rest) = events.split_first().ok_or_else(|| Error::Log("empty log".into()))?;
        let mut s = Self::from_init(pool, first.clone())?;
        for ev in rest {
            match ev {
                Event::Init { .. } => return Err(Error::Log("duplicate init event".into())),
                Event::Observation { iteration, id, y, initial, .. } => {
                    if *iteration != s.iteration {
                        return Err(Error::Log(format!(
                            "observation at iteration {iteration}, expected {}",
                            s.iteration
                        )));
                    }
                    let i = s.lookup(id)?;
                    if !s.remaining.contains(&i) {
                        return Err(Error::Log(format!("{id:?} observed twice")));
                    }
                    s.events.push(ev.clone());
                    s.apply_observation(i, id.clone(), *y, *initial);
                }
                Event::Ended { .. } => {
                    s.exhausted_early = true;
                    s.events.push(ev.clone());
                }
                _ => s.events.push(ev.clone()),
            }
        }
        Ok(s)
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        write_events(&mut w, &self.events)
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_log(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Appends the events past the first `already_written` to `path`.
    pub fn append_log(&self, path: impl AsRef<Path>, already_written: usize) -> Result<()> {
        let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        write_events(&mut w, &self.events[already_written.min(self.events.len())..])?;
        w.flush()?;
        Ok(())
    }

    pub fn load(pool: &CandidatePool, path: impl AsRef<Path>) -> Result<Self> {
        Self::replay(pool, &read_events(BufReader::new(File::open(path)?))?)
    }
}

fn fit_record<T: Real>(fit: &FittedSurrogate<T>, keep_projection: bool) -> SurrogateRecord {
    let mut r = fit.record();
    if !keep_projection {
        r.projection = None;
    }
    r
}

fn digest(scores: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in scores {
        for b in s.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

pub fn write_events<W: Write>(w: &mut W, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, &LogLine { v: LOG_SCHEMA_VERSION, event: e.clone() })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", k + 1)))?;
        if parsed.v != LOG_SCHEMA_VERSION {
            return Err(Error::Log(format!("line {}: unsupported schema version {}", k + 1, parsed.v)));
        }
        out.push(parsed.event);
    }
    Ok(out)
}

/// Simulated optimization on a labeled pool.
pub fn run_bo<T: Real>(pool: &CandidatePool, config: BoConfig, seed: u64) -> Result<BoSession<T>> {
    let mut s = BoSession::start(pool, config, seed)?;
    s.run(pool)?;
    Ok(s)
}
