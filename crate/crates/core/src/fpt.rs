//! First-passage-time ensembles with path purging, plus population diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dist2, ModelConfig, ModelError, Particle, Stepper, Vector};
use crate::rng::RngStream;
use crate::stats::{histogram, Histogram, Moments};

#[derive(Debug, Error, PartialEq)]
pub enum FptError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid fpt config: {0}")]
    InvalidConfig(String),
    #[error("degenerate ensemble: only {hits} of {replicas} replicas hit the target (need >= {MIN_HITS})")]
    DegenerateEnsemble { hits: usize, replicas: usize },
}

pub const MIN_HITS: usize = 10;
pub const DEFAULT_PURGE_CAP: usize = 9000;
pub const DEFAULT_BIN_WIDTH: f64 = 5.0;

/// Dispatches a const-generic call on a runtime dimension.
macro_rules! with_dimension {
    ($d:expr, $D:ident => $body:expr) => {
        match $d {
            1 => {
                const $D: usize = 1;
                $body
            }
            2 => {
                const $D: usize = 2;
                $body
            }
            3 => {
                const $D: usize = 3;
                $body
            }
            other => Err(ModelError::UnsupportedDimension(other).into()),
        }
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FptConfig {
    /// Offset of the target center along the first axis.
    pub q_x: f64,
    pub target_radius: f64,
    pub purge_cap: usize,
    /// Step cutoff (substeps for BBM); `None` means `ceil(20 q_x / dt)`.
    pub max_steps: Option<u64>,
    pub n_replicas: usize,
    pub seed: u64,
    pub bin_width: f64,
}

impl FptConfig {
    pub fn new(q_x: f64, n_replicas: usize, seed: u64) -> Self {
        Self {
            q_x,
            target_radius: 1.0,
            purge_cap: DEFAULT_PURGE_CAP,
            max_steps: None,
            n_replicas,
            seed,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<(), FptError> {
        let bad = |m: String| Err(FptError::InvalidConfig(m));
        if !(self.target_radius > 0.0) {
            return bad(format!("target radius must be > 0, got {}", self.target_radius));
        }
        if !(self.q_x > self.target_radius) || !self.q_x.is_finite() {
            return bad(format!(
                "q_x ({}) must exceed the target radius ({})",
                self.q_x, self.target_radius
            ));
        }
        if self.purge_cap < 3 {
            return bad(format!("purge cap must be >= 3, got {}", self.purge_cap));
        }
        if self.n_replicas == 0 {
            return bad("need at least one replica".into());
        }
        if !(self.bin_width > 0.0) {
            return bad(format!("bin width must be > 0, got {}", self.bin_width));
        }
        Ok(())
    }

    pub fn resolved_max_steps(&self, model: &ModelConfig) -> u64 {
        self.max_steps
            .unwrap_or_else(|| (20.0 * self.q_x / model.step_duration()).ceil() as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FptSample {
    Hit(f64),
    Extinct,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FptDistribution {
    /// Hit times in replica order.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
    pub n_replicas: usize,
    pub n_extinct: usize,
    pub n_timeout: usize,
}

impl FptDistribution {
    pub fn from_outcomes(outcomes: &[FptSample], bin_width: f64) -> Result<Self, FptError> {
        let mut samples = Vec::with_capacity(outcomes.len());
        let (mut n_extinct, mut n_timeout) = (0, 0);
        for o in outcomes {
            match o {
                FptSample::Hit(t) => samples.push(*t),
                FptSample::Extinct => n_extinct += 1,
                FptSample::Timeout => n_timeout += 1,
            }
        }
        if samples.len() < MIN_HITS {
            return Err(FptError::DegenerateEnsemble {
                hits: samples.len(),
                replicas: outcomes.len(),
            });
        }
        let m = Moments::of(&samples);
        let histogram = histogram(&samples, bin_width)
            .map_err(|e| FptError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            samples,
            mean: m.mean,
            std: m.std,
            histogram,
            n_replicas: outcomes.len(),
            n_extinct,
            n_timeout,
        })
    }

    /// More than 1% of replicas ran out of steps.
    pub fn timeout_warning(&self) -> bool {
        self.n_timeout * 100 > self.n_replicas
    }
}

/// Keeps the `keep` particles with the smallest `key`, preserving order.
/// Ties at the cutoff are resolved by position in the vector.
fn purge_by<const D: usize, K: Fn(&Particle<D>) -> f64>(
    particles: &mut Vec<Particle<D>>,
    keep: usize,
    key: K,
    scratch: &mut Vec<f64>,
) {
    if particles.len() <= keep || keep == 0 {
        particles.truncate(keep);
        return;
    }
    scratch.clear();
    scratch.extend(particles.iter().map(&key));
    let keys_len = scratch.len();
    scratch.extend_from_within(..);
    let (_, thr, _) = scratch[keys_len..].select_nth_unstable_by(keep - 1, f64::total_cmp);
    let thr = *thr;
    let below = scratch[..keys_len].iter().filter(|&&k| k < thr).count();
    let mut ties_left = keep - below;
    let mut i = 0;
    particles.retain(|_| {
        let k = scratch[i];
        i += 1;
        if k < thr {
            true
        } else if k == thr && ties_left > 0 {
            ties_left -= 1;
            true
        } else {
            false
        }
    });
}

fn replica_in<const D: usize>(
    stepper: &Stepper,
    model: &ModelConfig,
    fpt: &FptConfig,
    stream_index: u64,
) -> FptSample {
    let mut rng = RngStream::new(fpt.seed, stream_index);
    let mut target: Vector<D> = [0.0; D];
    target[0] = fpt.q_x;
    let r2 = fpt.target_radius * fpt.target_radius;
    let dt = model.step_duration();
    let keep = fpt.purge_cap / 3;
    let max_steps = fpt.resolved_max_steps(model);

    let mut pop = vec![Particle::<D>::origin()];
    let mut next = Vec::with_capacity(2 * fpt.purge_cap);
    let mut scratch = Vec::new();
    for step in 1..=max_steps {
        next.clear();
        let hit = stepper.advance(&pop, &mut next, &mut rng, |p| dist2(&p.position, &target) <= r2);
        if hit {
            return FptSample::Hit(step as f64 * dt);
        }
        if next.is_empty() {
            return FptSample::Extinct;
        }
        if next.len() > fpt.purge_cap {
            purge_by(&mut next, keep, |p| dist2(&p.position, &target), &mut scratch);
        }
        std::mem::swap(&mut pop, &mut next);
    }
    FptSample::Timeout
}

/// One replica: a single particle at the origin evolved until some particle
/// enters the ball of radius `target_radius` around `(q_x, 0, ..)`.
pub fn run_replica(model: &ModelConfig, fpt: &FptConfig, stream_index: u64) -> Result<FptSample, FptError> {
    fpt.validate()?;
    let stepper = Stepper::new(model)?;
    with_dimension!(model.dimension, D => Ok(replica_in::<D>(&stepper, model, fpt, stream_index)))
}

/// Outcomes of replicas `0..n_replicas`, in replica order.
pub fn run_outcomes(model: &ModelConfig, fpt: &FptConfig) -> Result<Vec<FptSample>, FptError> {
    fpt.validate()?;
    let stepper = Stepper::new(model)?;
    with_dimension!(model.dimension, D => Ok((0..fpt.n_replicas as u64)
        .into_par_iter()
        .map(|i| replica_in::<D>(&stepper, model, fpt, i))
        .collect()))
}

pub fn run_ensemble(model: &ModelConfig, fpt: &FptConfig) -> Result<FptDistribution, FptError> {
    let outcomes = run_outcomes(model, fpt)?;
    FptDistribution::from_outcomes(&outcomes, fpt.bin_width)
}

fn max_curve_in<const D: usize>(
    stepper: &Stepper,
    n_steps: usize,
    purge_cap: usize,
    seed: u64,
    stream_index: u64,
) -> Vec<Option<f64>> {
    let mut rng = RngStream::new(seed, stream_index);
    let keep = purge_cap / 3;
    let mut pop = vec![Particle::<D>::origin()];
    let mut next = Vec::new();
    let mut scratch = Vec::new();
    let mut curve = Vec::with_capacity(n_steps + 1);
    curve.push(Some(0.0));
    for _ in 0..n_steps {
        next.clear();
        stepper.advance(&pop, &mut next, &mut rng, |_| false);
        if next.is_empty() {
            curve.resize(n_steps + 1, None);
            return curve;
        }
        let m = next.iter().map(|p| p.position[0]).fold(f64::NEG_INFINITY, f64::max);
        curve.push(Some(m));
        if next.len() > purge_cap {
            purge_by(&mut next, keep, |p| -p.position[0], &mut scratch);
        }
        std::mem::swap(&mut pop, &mut next);
    }
    curve
}

/// Ensemble mean of the maximal first coordinate at steps `0..=n_steps`,
/// averaged over the replicas still alive at each step. Purging keeps the
/// particles with the largest first coordinate.
pub fn max_displacement(
    model: &ModelConfig,
    n_steps: usize,
    n_replicas: usize,
    seed: u64,
    purge_cap: usize,
) -> Result<Vec<f64>, FptError> {
    if !model.kind.is_discrete() {
        return Err(FptError::InvalidConfig("max_displacement needs a discrete model".into()));
    }
    if purge_cap < 3 {
        return Err(FptError::InvalidConfig(format!("purge cap must be >= 3, got {purge_cap}")));
    }
    let stepper = Stepper::new(model)?;
    let curves: Vec<Vec<Option<f64>>> = with_dimension!(model.dimension, D => Ok::<_, FptError>((0..n_replicas as u64)
        .into_par_iter()
        .map(|i| max_curve_in::<D>(&stepper, n_steps, purge_cap, seed, i))
        .collect()))?;
    Ok((0..=n_steps)
        .map(|n| {
            let alive: Vec<f64> = curves.iter().filter_map(|c| c[n]).collect();
            alive.iter().sum::<f64>() / alive.len() as f64
        })
        .collect())
}

fn counts_in<const D: usize>(
    stepper: &Stepper,
    n_steps: usize,
    stop_at: usize,
    seed: u64,
    stream_index: u64,
) -> Vec<usize> {
    let mut rng = RngStream::new(seed, stream_index);
    let mut pop = vec![Particle::<D>::origin()];
    let mut next = Vec::new();
    let mut counts = Vec::with_capacity(n_steps + 1);
    counts.push(1);
    for _ in 0..n_steps {
        next.clear();
        stepper.advance(&pop, &mut next, &mut rng, |_| false);
        counts.push(next.len());
        if next.is_empty() || next.len() >= stop_at {
            break;
        }
        std::mem::swap(&mut pop, &mut next);
    }
    counts
}

/// Mean population size (pending particles included) at steps `0..=n_steps`,
/// without purging.
pub fn mean_population(
    model: &ModelConfig,
    n_steps: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<Vec<f64>, FptError> {
    let stepper = Stepper::new(model)?;
    let runs: Vec<Vec<usize>> = with_dimension!(model.dimension, D => Ok::<_, FptError>((0..n_replicas as u64)
        .into_par_iter()
        .map(|i| counts_in::<D>(&stepper, n_steps, usize::MAX, seed, i))
        .collect()))?;
    Ok((0..=n_steps)
        .map(|n| runs.iter().map(|r| r.get(n).copied().unwrap_or(0) as f64).sum::<f64>() / n_replicas as f64)
        .collect())
}

/// Fraction of replicas extinct within `n_steps`. A replica whose population
/// reaches `survival_cap` is counted as surviving; its later extinction
/// probability is at most `q^survival_cap` for extinction probability `q`.
pub fn extinction_frequency(
    model: &ModelConfig,
    n_steps: usize,
    n_replicas: usize,
    seed: u64,
    survival_cap: usize,
) -> Result<f64, FptError> {
    if survival_cap == 0 {
        return Err(FptError::InvalidConfig("survival cap must be positive".into()));
    }
    let stepper = Stepper::new(model)?;
    let extinct: usize = with_dimension!(model.dimension, D => Ok::<_, FptError>((0..n_replicas as u64)
        .into_par_iter()
        .map(|i| {
            let c = counts_in::<D>(&stepper, n_steps, survival_cap, seed, i);
            usize::from(*c.last().unwrap() == 0)
        })
        .sum()))?;
    Ok(extinct as f64 / n_replicas as f64)
}
