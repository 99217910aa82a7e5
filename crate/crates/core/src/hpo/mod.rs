//! Sequential Bayesian search over the discrete design grid.
//!
//! The first trials are the six seed designs; every later trial is the
//! untried grid point with the highest expected improvement under a
//! Gaussian-process surrogate fit to the validation metric. Test metrics are
//! stored on each [`Trial`] but the surrogate only ever sees
//! [`Observation`]s, which have no field for them.

mod gp;
mod objective;
mod space;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gp::{ei, Gp, GpHyper};
pub use objective::TrainingObjective;
pub use space::{seed_trials, SearchSpace};

use crate::metrics;
use crate::model::HyperParams;
use crate::seed;
use crate::{Error, Result};

/// Grids up to this size are scored exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 1_000_000;
/// Random candidates drawn when the grid is larger.
pub const RANDOM_CANDIDATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Maps an objective to the minimized scale the surrogate works on.
    pub fn to_loss(self, v: f64) -> f64 {
        match self {
            Direction::Maximize => -v,
            Direction::Minimize => v,
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        self.to_loss(a) < self.to_loss(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialOrigin {
    Seed,
    Suggested,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub params: HyperParams,
    pub origin: TrialOrigin,
    pub status: TrialStatus,
    /// Validation metric.
    pub objective: Option<f64>,
    /// Held-out test metric, recorded for diagnostics only.
    pub test_metric: Option<f64>,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// What the surrogate is fit on: a normalized grid point and the objective
/// on the minimized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Completed trials inside `space` as surrogate observations.
pub fn observations(trials: &[Trial], space: &SearchSpace, direction: Direction) -> Vec<Observation> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .filter_map(|t| {
            let y = t.objective.filter(|v| v.is_finite())?;
            let p = space.point_of(&t.params)?;
            Some(Observation {
                x: space.normalize(&p),
                y: direction.to_loss(y),
            })
        })
        .collect()
}

fn tried_points(trials: &[Trial], space: &SearchSpace) -> BTreeSet<usize> {
    trials
        .iter()
        .filter_map(|t| space.point_of(&t.params))
        .map(|p| space.flat_of(&p))
        .collect()
}

/// A uniformly random grid point not in `tried`.
fn random_untried<R: Rng + ?Sized>(space: &SearchSpace, tried: &BTreeSet<usize>, rng: &mut R) -> Result<usize> {
    let total = space.cardinality();
    if tried.len() >= total {
        return Err(Error::GridExhausted(total));
    }
    for _ in 0..256 {
        let f = space.flat_of(&space.random_point(rng));
        if !tried.contains(&f) {
            return Ok(f);
        }
    }
    // dense history: pick among the remaining points directly
    let free = total - tried.len();
    let mut k = rng.gen_range(0..free);
    for f in 0..total {
        if !tried.contains(&f) {
            if k == 0 {
                return Ok(f);
            }
            k -= 1;
        }
    }
    Err(Error::GridExhausted(total))
}

/// Next design to try. Falls back to a random untried point when fewer than
/// two trials have completed.
pub fn suggest<R: Rng + ?Sized>(
    history: &[Trial],
    space: &SearchSpace,
    direction: Direction,
    rng: &mut R,
) -> Result<(HyperParams, TrialOrigin)> {
    let tried = tried_points(history, space);
    let obs = observations(history, space, direction);
    if obs.len() < 2 {
        let f = random_untried(space, &tried, rng)?;
        return Ok((space.params_of(&space.point_at(f)), TrialOrigin::Random));
    }
    if tried.len() >= space.cardinality() {
        return Err(Error::GridExhausted(space.cardinality()));
    }
    let d = space.dims().len();
    let x: Vec<f64> = obs.iter().flat_map(|o| o.x.iter().copied()).collect();
    let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
    let gp = Gp::fit(&x, &y, d)?;
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);

    let total = space.cardinality();
    let candidates: Vec<usize> = if total <= EXHAUSTIVE_LIMIT {
        (0..total).filter(|f| !tried.contains(f)).collect()
    } else {
        let incumbent = obs
            .iter()
            .zip(history.iter().filter(|t| {
                t.status == TrialStatus::Completed
                    && t.objective.is_some_and(f64::is_finite)
                    && space.contains(&t.params)
            }))
            .min_by(|a, b| a.0.y.total_cmp(&b.0.y))
            .and_then(|(_, t)| space.point_of(&t.params));
        let mut set = BTreeSet::new();
        for _ in 0..RANDOM_CANDIDATES {
            set.insert(space.flat_of(&space.random_point(rng)));
        }
        if let Some(p) = incumbent {
            set.extend(space.neighbors(&p).iter().map(|q| space.flat_of(q)));
        }
        set.into_iter().filter(|f| !tried.contains(f)).collect()
    };
    if candidates.is_empty() {
        let f = random_untried(space, &tried, rng)?;
        return Ok((space.params_of(&space.point_at(f)), TrialOrigin::Random));
    }
    let xs = space.normalize_flat(&candidates);
    let scores = gp.expected_improvement(&xs, best);
    let mut pick = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[pick] {
            pick = i;
        }
    }
    Ok((space.params_of(&space.point_at(candidates[pick])), TrialOrigin::Suggested))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub direction: Direction,
}

/// Result of evaluating one design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub validation: f64,
    pub test: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<Trial>,
    /// Index into `trials` of the best completed trial.
    pub best: Option<usize>,
}

impl SearchReport {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.trials[i])
    }
}

fn best_index(trials: &[Trial], direction: Direction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        let Some(v) = t.objective.filter(|v| v.is_finite()) else { continue };
        if t.status != TrialStatus::Completed {
            continue;
        }
        if best.is_none_or(|b| direction.better(v, trials[b].objective.unwrap())) {
            best = Some(i);
        }
    }
    best
}

/// Runs (or resumes) a search of `cfg.n_trials` trials.
///
/// `prior` holds trials from an interrupted run; the search continues from
/// their count. Suggestion `i` draws from an RNG derived from `cfg.seed` and
/// `i`, so a resumed run proposes what the uninterrupted one would have.
/// Failed evaluations are recorded and excluded from the surrogate.
pub fn run_search(
    space: &SearchSpace,
    cfg: &SearchConfig,
    prior: Vec<Trial>,
    mut objective: impl FnMut(&HyperParams, usize) -> Result<TrialOutcome>,
    mut on_trial: impl FnMut(&Trial),
) -> Result<SearchReport> {
    let seeds: Vec<HyperParams> = seed_trials(space.arch)
        .into_iter()
        .filter(|hp| space.contains(hp))
        .collect();
    let mut trials = prior;
    while trials.len() < cfg.n_trials {
        let id = trials.len();
        let tried = tried_points(&trials, space);
        let seed_pick = seeds
            .get(id)
            .filter(|hp| !tried.contains(&space.flat_of(&space.point_of(hp).unwrap())));
        let (params, origin) = match seed_pick {
            Some(hp) => (*hp, TrialOrigin::Seed),
            None => {
                let mut rng = seed::derived_rng(cfg.seed, seed::SEARCH, id as u64);
                match suggest(&trials, space, cfg.direction, &mut rng) {
                    Ok(s) => s,
                    Err(Error::GridExhausted(_)) => break,
                    Err(e) => return Err(e),
                }
            }
        };
        let trial = match objective(&params, id) {
            Ok(out) if out.validation.is_finite() => Trial {
                id,
                params,
                origin,
                status: TrialStatus::Completed,
                objective: Some(out.validation),
                test_metric: out.test,
                wall_seconds: out.wall_seconds,
                error: None,
            },
            Ok(out) => Trial {
                id,
                params,
                origin,
                status: TrialStatus::Failed,
                objective: None,
                test_metric: None,
                wall_seconds: out.wall_seconds,
                error: Some("non-finite validation metric".into()),
            },
            Err(e) => Trial {
                id,
                params,
                origin,
                status: TrialStatus::Failed,
                objective: None,
                test_metric: None,
                wall_seconds: 0.0,
                error: Some(alloc::format!("{}", e)),
            },
        };
        log::info!("trial {} {:?}: {:?} ({:?})", id, trial.params, trial.objective, trial.status);
        on_trial(&trial);
        trials.push(trial);
    }
    let best = best_index(&trials, cfg.direction);
    Ok(SearchReport { trials, best })
}

/// `(validation, test)` pairs of completed trials that have both.
pub fn scatter(trials: &[Trial]) -> Vec<(f64, f64)> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .filter_map(|t| Some((t.objective?, t.test_metric?)))
        .collect()
}

/// Pearson correlation between validation and test metrics across trials.
pub fn val_test_correlation(trials: &[Trial]) -> Result<f64> {
    let pairs = scatter(trials);
    if pairs.len() < 3 {
        return Err(Error::NoData("need at least 3 completed trials with both metrics"));
    }
    let (v, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    metrics::pearson(&v, &t)
}
