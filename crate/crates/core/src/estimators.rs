//! Model parameters from polymer-chain data: branching rate from
//! inter-cross-link distances, mean-squared internal distance (MSID), the
//! bond correlation `alpha(beta)` of the correlated walk, and scaled jumps.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::linear_fit;
use crate::model::{sample_correlated_jump, sample_uniform_sphere, Vector};
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("survival curve slope is not negative (fitted rate {0}); data are not exponential-tailed")]
    NonPositiveSlope(f64),
    #[error("window of {n} links exceeds the longest chain ({longest} links)")]
    WindowTooLong { n: usize, longest: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, EstimatorError>;

pub const MIN_BRANCH_SAMPLES: usize = 100;
pub const DEFAULT_FIT_RANGE: (f64, f64) = (0.05, 0.95);
pub const BURN_IN: usize = 1_000;
const SEGMENT: usize = 1 << 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainEnsemble {
    pub chains: Vec<Vec<Vector<3>>>,
    /// Sorted bead indices of cross-linked beads, one list per chain.
    pub crosslinks: Option<Vec<Vec<usize>>>,
}

#[derive(Deserialize)]
struct ChainRow {
    chain_id: String,
    bead_index: usize,
    x: f64,
    y: f64,
    z: f64,
    #[serde(default)]
    crosslink: Option<u8>,
}

impl ChainEnsemble {
    pub fn new(chains: Vec<Vec<Vector<3>>>) -> Result<Self> {
        if chains.is_empty() {
            return Err(EstimatorError::InvalidInput("no chains".into()));
        }
        if let Some(i) = chains.iter().position(|c| c.len() < 2) {
            return Err(EstimatorError::InvalidInput(format!("chain {i} has fewer than 2 beads")));
        }
        Ok(Self {
            chains,
            crosslinks: None,
        })
    }

    pub fn with_crosslinks(mut self, marks: Vec<Vec<usize>>) -> Result<Self> {
        if marks.len() != self.chains.len() {
            return Err(EstimatorError::InvalidInput(format!(
                "{} cross-link lists for {} chains",
                marks.len(),
                self.chains.len()
            )));
        }
        for (c, (m, chain)) in marks.iter().zip(&self.chains).enumerate() {
            if m.windows(2).any(|w| w[0] >= w[1]) || m.last().is_some_and(|&i| i >= chain.len()) {
                return Err(EstimatorError::InvalidInput(format!(
                    "cross-link marks of chain {c} must be strictly increasing bead indices"
                )));
            }
        }
        self.crosslinks = Some(marks);
        Ok(self)
    }

    /// Reads `chain_id,bead_index,x,y,z[,crosslink]` rows with a header.
    /// Chains keep their order of first appearance; beads are sorted by index.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut rows: Vec<Vec<(usize, Vector<3>, bool)>> = Vec::new();
        let mut any_marks = false;
        for rec in rdr.deserialize::<ChainRow>() {
            let r = rec.map_err(|e| EstimatorError::InvalidInput(csv_error(&e)))?;
            let slot = *index.entry(r.chain_id).or_insert_with(|| {
                rows.push(Vec::new());
                rows.len() - 1
            });
            any_marks |= r.crosslink.is_some();
            rows[slot].push((r.bead_index, [r.x, r.y, r.z], r.crosslink.unwrap_or(0) != 0));
        }
        let mut chains = Vec::with_capacity(rows.len());
        let mut marks = Vec::with_capacity(rows.len());
        for (c, mut beads) in rows.into_iter().enumerate() {
            beads.sort_by_key(|b| b.0);
            if beads.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(EstimatorError::InvalidInput(format!("duplicate bead index in chain #{c}")));
            }
            marks.push(beads.iter().enumerate().filter(|(_, b)| b.2).map(|(i, _)| i).collect());
            chains.push(beads.into_iter().map(|b| b.1).collect());
        }
        let ens = Self::new(chains)?;
        if any_marks {
            ens.with_crosslinks(marks)
        } else {
            Ok(ens)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| EstimatorError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    /// Bond counts between consecutive cross-links along every chain.
    pub fn crosslink_distances(&self) -> Vec<f64> {
        self.crosslinks
            .iter()
            .flatten()
            .flat_map(|m| m.windows(2).map(|w| (w[1] - w[0]) as f64))
            .collect()
    }

    /// Number of links in the longest chain.
    pub fn longest(&self) -> usize {
        self.chains.iter().map(|c| c.len() - 1).max().unwrap_or(0)
    }
}

fn csv_error(e: &csv::Error) -> String {
    match e.position() {
        Some(p) => format!("line {}: {e}", p.line()),
        None => e.to_string(),
    }
}

/// One value per row; a non-numeric first row is taken as a header.
pub fn distances_from_reader<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| EstimatorError::InvalidInput(csv_error(&e)))?;
        let field = rec.get(0).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => continue,
            _ => {
                return Err(EstimatorError::InvalidInput(format!(
                    "line {}: '{field}' is not a number",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn load_distances(path: &Path) -> Result<Vec<f64>> {
    let f = std::fs::File::open(path).map_err(|e| EstimatorError::Io(format!("{}: {e}", path.display())))?;
    distances_from_reader(f)
}

/// Empirical `S(x) = P(X > x)` at the distinct sample values where it is positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub x: Vec<f64>,
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let (mut x, mut survival) = (Vec::new(), Vec::new());
        let mut i = 0;
        while i < s.len() {
            let mut j = i;
            while j < s.len() && s[j] == s[i] {
                j += 1;
            }
            let above = s.len() - j;
            if above > 0 {
                x.push(s[i]);
                survival.push(above as f64 / n);
            }
            i = j;
        }
        Self { x, survival }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchRateEstimate {
    pub kappa: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Spread of the estimate over disjoint subsamples; NaN when too few.
    pub stderr: f64,
    pub n_samples: usize,
    pub n_fit_points: usize,
}

fn survival_slope(samples: &[f64], fit_range: (f64, f64)) -> Result<(f64, f64, f64, usize)> {
    let curve = SurvivalCurve::from_samples(samples);
    let pts: Vec<(f64, f64)> = curve
        .x
        .iter()
        .zip(&curve.survival)
        .filter(|(_, s)| **s >= fit_range.0 && **s <= fit_range.1)
        .map(|(x, s)| (*x, s.ln()))
        .collect();
    let distinct = pts.windows(2).filter(|w| w[0].0 != w[1].0).count() + usize::from(!pts.is_empty());
    if distinct < 2 {
        return Err(EstimatorError::NonPositiveSlope(0.0));
    }
    let fit = linear_fit(&pts).map_err(|_| EstimatorError::NonPositiveSlope(0.0))?;
    let kappa = -fit.coefficient("slope");
    if !(kappa > 0.0) {
        return Err(EstimatorError::NonPositiveSlope(kappa));
    }
    Ok((kappa, fit.coefficient("intercept"), fit.r_squared, pts.len()))
}

/// Rate of the exponential tail of `distances`, from a least-squares line
/// through `log S(x)` over the points with `S` inside `fit_range`.
pub fn estimate_branch_rate(distances: &[f64], fit_range: (f64, f64)) -> Result<BranchRateEstimate> {
    if distances.len() < MIN_BRANCH_SAMPLES {
        return Err(EstimatorError::TooFewSamples {
            needed: MIN_BRANCH_SAMPLES,
            got: distances.len(),
        });
    }
    let (lo, hi) = fit_range;
    if !(lo > 0.0 && hi < 1.0 && lo < hi) {
        return Err(EstimatorError::InvalidInput(format!(
            "fit range ({lo}, {hi}) must satisfy 0 < lo < hi < 1"
        )));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(EstimatorError::InvalidInput("non-finite distance".into()));
    }
    let (kappa, intercept, r_squared, n_fit_points) = survival_slope(distances, fit_range)?;

    let groups = (distances.len() / MIN_BRANCH_SAMPLES).min(10);
    let stderr = if groups >= 2 {
        // random split of the canonically ordered samples, so the result
        // does not depend on input order
        let mut shuffled = distances.to_vec();
        shuffled.sort_by(f64::total_cmp);
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        let size = shuffled.len() / groups;
        let sub: Vec<f64> = shuffled
            .chunks_exact(size)
            .take(groups)
            .filter_map(|c| survival_slope(c, fit_range).ok().map(|r| r.0))
            .collect();
        if sub.len() >= 2 {
            let m = sub.iter().sum::<f64>() / sub.len() as f64;
            let var = sub.iter().map(|k| (k - m).powi(2)).sum::<f64>() / (sub.len() - 1) as f64;
            // each subsample holds 1/groups of the data
            (var / groups as f64).sqrt()
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };
    Ok(BranchRateEstimate {
        kappa,
        intercept,
        r_squared,
        stderr,
        n_samples: distances.len(),
        n_fit_points,
    })
}

/// `E|R_{i+n} - R_i|^2 / n` averaged over all chains and start beads.
pub fn msid(ensemble: &ChainEnsemble, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(EstimatorError::InvalidInput("MSID window must be >= 1".into()));
    }
    let longest = ensemble.longest();
    if n > longest {
        return Err(EstimatorError::WindowTooLong { n, longest });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for c in &ensemble.chains {
        for w in 0..c.len().saturating_sub(n) {
            let (a, b) = (&c[w], &c[w + n]);
            sum += (0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    Ok(sum / (count as f64 * n as f64))
}

/// MSID at a non-integer window by linear interpolation between neighbors.
pub fn msid_interpolated<F: Fn(usize) -> Result<f64>>(msid_at: F, x: f64) -> Result<f64> {
    if !(x >= 1.0) {
        return Err(EstimatorError::InvalidInput(format!("MSID window must be >= 1, got {x}")));
    }
    let (lo, hi) = (x.floor(), x.ceil());
    let a = msid_at(lo as usize)?;
    if lo == hi {
        return Ok(a);
    }
    let b = msid_at(hi as usize)?;
    Ok(a + (x - lo) * (b - a))
}

/// `1 + (2/n) sum_{j=1}^{n-1} (n-j) alpha^j`, for unit bond length.
pub fn msid_closed_form(alpha: f64, n: usize) -> f64 {
    let mut sum = 0.0;
    let mut p = 1.0;
    for j in 1..n {
        p *= alpha;
        if p == 0.0 {
            break;
        }
        sum += (n - j) as f64 * p;
    }
    1.0 + 2.0 * sum / n as f64
}

/// Limit of the MSID as the window grows.
pub fn characteristic_ratio(alpha: f64) -> f64 {
    (1.0 + alpha) / (1.0 - alpha)
}

/// Bead positions of one correlated chain with unit bonds, starting at the
/// origin with a uniformly oriented first bond.
pub fn correlated_chain(beta: f64, n_links: usize, seed: u64) -> Vec<Vector<3>> {
    let mut rng = RngStream::new(seed, 0);
    let mut out = Vec::with_capacity(n_links + 1);
    let mut pos = [0.0; 3];
    out.push(pos);
    let mut dir: Vector<3> = sample_uniform_sphere(&mut rng);
    for i in 0..n_links {
        if i > 0 {
            dir = sample_correlated_jump(&dir, beta, &mut rng);
        }
        for k in 0..3 {
            pos[k] += dir[k];
        }
        out.push(pos);
    }
    out
}

fn alpha_segment(beta: f64, len: usize, seed: u64, segment: u64) -> f64 {
    let mut rng = RngStream::new(seed, segment);
    let mut dir: Vector<3> = sample_uniform_sphere(&mut rng);
    for _ in 0..BURN_IN {
        dir = sample_correlated_jump(&dir, beta, &mut rng);
    }
    let mut sum = 0.0;
    for _ in 0..len {
        let next = sample_correlated_jump(&dir, beta, &mut rng);
        sum += dir[0] * next[0] + dir[1] * next[1] + dir[2] * next[2];
        dir = next;
    }
    sum
}

/// Monte Carlo estimate of the stationary bond correlation `E[r_i . r_{i+1}]`
/// of the correlated walk, over `n_steps` pairs split into independent
/// segments with their own burn-in.
pub fn alpha_of_beta(beta: f64, n_steps: usize, seed: u64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(EstimatorError::InvalidInput(format!("beta must be in [0, 1), got {beta}")));
    }
    if n_steps == 0 {
        return Err(EstimatorError::InvalidInput("need at least one step".into()));
    }
    let n_seg = n_steps.div_ceil(SEGMENT);
    let sum: f64 = (0..n_seg)
        .into_par_iter()
        .map(|s| {
            let len = if s + 1 == n_seg { n_steps - s * SEGMENT } else { SEGMENT };
            alpha_segment(beta, len, seed, s as u64)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(sum / n_steps as f64)
}

/// Correlation parameter `beta` whose chain has characteristic ratio
/// `target_cinf`, by bisection on `alpha_of_beta` with common random numbers.
pub fn invert_beta(target_cinf: f64, n_steps: usize, seed: u64) -> Result<f64> {
    if !(target_cinf >= 1.0) {
        return Err(EstimatorError::InvalidInput(format!(
            "characteristic ratio must be >= 1, got {target_cinf}"
        )));
    }
    let target = (target_cinf - 1.0) / (target_cinf + 1.0);
    let (mut lo, mut hi) = (0.0, 0.999);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if alpha_of_beta(mid, n_steps, seed)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-4 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub enum MsidSource<'a> {
    Measured(&'a ChainEnsemble),
    ClosedForm(f64),
}

impl MsidSource<'_> {
    pub fn at(&self, n: usize) -> Result<f64> {
        match self {
            MsidSource::Measured(e) => msid(e, n),
            MsidSource::ClosedForm(alpha) => Ok(msid_closed_form(*alpha, n)),
        }
    }
}

/// `sigma * sqrt(MSID(round(1/kappa)))`.
pub fn scaled_jump(kappa: f64, source: &MsidSource, sigma: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(EstimatorError::InvalidInput(format!("kappa must be in (0, 1], got {kappa}")));
    }
    let n = (1.0 / kappa).round().max(1.0) as usize;
    Ok(sigma * source.at(n)?.sqrt())
}

/// Per-coordinate standard deviation of a scaled Gaussian jump,
/// `sigma * sqrt(MSID(round(1/kappa)) / 3)`, so that its mean squared length
/// equals that of the scaled fixed-length jump.
pub fn scaled_gaussian_std(kappa: f64, source: &MsidSource, sigma: f64) -> Result<f64> {
    Ok(scaled_jump(kappa, source, sigma)? / 3f64.sqrt())
}

/// As [`scaled_jump`], interpolating the MSID at `1/kappa` instead of rounding.
pub fn scaled_jump_interpolated(kappa: f64, source: &MsidSource, sigma: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(EstimatorError::InvalidInput(format!("kappa must be in (0, 1], got {kappa}")));
    }
    Ok(sigma * msid_interpolated(|n| source.at(n), 1.0 / kappa)?.sqrt())
}
