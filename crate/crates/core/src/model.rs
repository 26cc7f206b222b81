//! Branching-process models and the synchronized population step.
//!
//! Four models share one population type:
//!
//! * `Brw`  - jumps of fixed length, direction uniform on the sphere.
//! * `Bcrw` - like `Brw`, but each direction is mixed with the previous one.
//! * `Gbrw` - i.i.d. Gaussian jumps.
//! * `Bbm`  - time-discretized branching Brownian motion with binary branching.
//!
//! The three discrete models use delayed branching: a branching particle first
//! splits into a backbone child and a cross-link child; the cross-link child
//! sits in [`Stage::PendingTypeII`] for exactly one step and then splits into
//! two chain children, each of which is independently stillborn with
//! probability equal to the termination rate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

pub type Vector<const D: usize> = [f64; D];

/// Largest spatial dimension the simulator is instantiated for.
pub const MAX_DIMENSION: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unsupported dimension {0} (supported: 1..={MAX_DIMENSION})")]
    UnsupportedDimension(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Brw,
    Bcrw,
    Gbrw,
    Bbm,
}

impl ModelKind {
    pub fn is_discrete(self) -> bool {
        !matches!(self, ModelKind::Bbm)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Brw => "brw",
            ModelKind::Bcrw => "bcrw",
            ModelKind::Gbrw => "gbrw",
            ModelKind::Bbm => "bbm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "brw" => Ok(ModelKind::Brw),
            "bcrw" => Ok(ModelKind::Bcrw),
            "gbrw" => Ok(ModelKind::Gbrw),
            "bbm" => Ok(ModelKind::Bbm),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

/// Parameters of a branching model.
///
/// `jump_scale` is the jump length for `Brw`/`Bcrw`, the per-coordinate
/// standard deviation of one jump for `Gbrw`, and the diffusivity `s` for
/// `Bbm` (per-coordinate variance `s^2` per unit time). For the discrete models
/// `branch_rate` and `term_rate` are per-step probabilities; for `Bbm` they are
/// rates per unit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub branch_rate: f64,
    pub term_rate: f64,
    pub jump_scale: f64,
    pub correlation: Option<f64>,
    pub time_step: Option<f64>,
    pub dimension: usize,
}

pub const DEFAULT_BBM_TIME_STEP: f64 = 0.1;

impl ModelConfig {
    pub fn brw(branch_rate: f64, term_rate: f64) -> Self {
        Self {
            kind: ModelKind::Brw,
            branch_rate,
            term_rate,
            jump_scale: 1.0,
            correlation: None,
            time_step: None,
            dimension: 3,
        }
    }

    pub fn bcrw(branch_rate: f64, term_rate: f64, beta: f64) -> Self {
        Self {
            kind: ModelKind::Bcrw,
            correlation: Some(beta),
            ..Self::brw(branch_rate, term_rate)
        }
    }

    pub fn gbrw(branch_rate: f64, term_rate: f64) -> Self {
        Self {
            kind: ModelKind::Gbrw,
            ..Self::brw(branch_rate, term_rate)
        }
    }

    /// Standard BBM (binary branching, no termination) with diffusivity 1.
    pub fn bbm(branch_rate: f64) -> Self {
        Self {
            kind: ModelKind::Bbm,
            time_step: Some(DEFAULT_BBM_TIME_STEP),
            ..Self::brw(branch_rate, 0.0)
        }
    }

    pub fn with_jump_scale(mut self, jump_scale: f64) -> Self {
        self.jump_scale = jump_scale;
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn with_time_step(mut self, dt: f64) -> Self {
        self.time_step = Some(dt);
        self
    }

    /// Model time elapsed per population step.
    pub fn step_duration(&self) -> f64 {
        match self.kind {
            ModelKind::Bbm => self.time_step.unwrap_or(DEFAULT_BBM_TIME_STEP),
            _ => 1.0,
        }
    }

    /// Per-step (termination, branching) probabilities.
    pub fn step_probabilities(&self) -> (f64, f64) {
        let dt = self.step_duration();
        (self.term_rate * dt, self.branch_rate * dt)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !(self.branch_rate >= 0.0 && self.branch_rate.is_finite()) {
            return bad(format!("branch rate must be >= 0, got {}", self.branch_rate));
        }
        if !(self.term_rate >= 0.0 && self.term_rate.is_finite()) {
            return bad(format!("termination rate must be >= 0, got {}", self.term_rate));
        }
        if !(self.jump_scale > 0.0 && self.jump_scale.is_finite()) {
            return bad(format!("jump scale must be > 0, got {}", self.jump_scale));
        }
        if self.dimension == 0 || self.dimension > MAX_DIMENSION {
            return Err(ModelError::UnsupportedDimension(self.dimension));
        }
        match (self.kind, self.correlation) {
            (ModelKind::Bcrw, Some(b)) if b > 0.0 && b < 1.0 => {}
            (ModelKind::Bcrw, Some(b)) => return bad(format!("beta must lie in (0,1), got {b}")),
            (ModelKind::Bcrw, None) => return bad("bcrw requires a correlation beta".into()),
            (_, Some(_)) => return bad("correlation beta is only valid for bcrw".into()),
            _ => {}
        }
        match (self.kind, self.time_step) {
            (ModelKind::Bbm, Some(dt)) if dt > 0.0 && dt.is_finite() => {}
            (ModelKind::Bbm, Some(dt)) => return bad(format!("time step must be > 0, got {dt}")),
            (ModelKind::Bbm, None) => return bad("bbm requires a time step".into()),
            (_, Some(_)) => return bad("time step is only valid for bbm".into()),
            _ => {}
        }
        let (p_term, p_branch) = self.step_probabilities();
        if p_term + p_branch > 1.0 + 1e-12 {
            return bad(format!(
                "branching and termination probabilities per step sum to {} > 1",
                p_term + p_branch
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Normal,
    PendingTypeII,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle<const D: usize> {
    pub position: Vector<D>,
    /// Unit direction of the last jump; only tracked for sphere-jump models.
    pub prev_jump: Option<Vector<D>>,
    pub stage: Stage,
}

impl<const D: usize> Particle<D> {
    pub fn origin() -> Self {
        Self {
            position: [0.0; D],
            prev_jump: None,
            stage: Stage::Normal,
        }
    }
}

#[inline]
pub(crate) fn norm2<const D: usize>(v: &Vector<D>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[inline]
pub(crate) fn dist2<const D: usize>(a: &Vector<D>, b: &Vector<D>) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Uniform direction on the unit sphere in `D` dimensions.
#[inline]
pub fn sample_uniform_sphere<const D: usize, R: Rng + ?Sized>(rng: &mut R) -> Vector<D> {
    if D == 3 {
        // Marsaglia (1972): uniform point in the unit disk lifted to S^2.
        // Both disk coordinates come from one 64-bit draw (32 bits each).
        const SCALE: f64 = 1.0 / (1u64 << 31) as f64;
        loop {
            let bits = rng.next_u64();
            let u = ((bits >> 32) as f64 + 0.5) * SCALE - 1.0;
            let v = ((bits & 0xffff_ffff) as f64 + 0.5) * SCALE - 1.0;
            let s = u * u + v * v;
            if s < 1.0 {
                let f = 2.0 * (1.0 - s).sqrt();
                let mut out = [0.0; D];
                out[0] = u * f;
                out[1] = v * f;
                out[2] = 1.0 - 2.0 * s;
                return out;
            }
        }
    }
    loop {
        let mut out = [0.0; D];
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = norm2(&out).sqrt();
        if n > 1e-300 {
            out.iter_mut().for_each(|x| *x /= n);
            return out;
        }
    }
}

/// Next jump direction of a correlated walk: `normalize(beta*prev + sqrt(1-beta^2)*delta)`.
pub fn sample_correlated_jump<const D: usize, R: Rng + ?Sized>(
    prev: &Vector<D>,
    beta: f64,
    rng: &mut R,
) -> Vector<D> {
    let mix = (1.0 - beta * beta).sqrt();
    loop {
        let delta = sample_uniform_sphere::<D, R>(rng);
        let mut j = [0.0; D];
        for i in 0..D {
            j[i] = beta * prev[i] + mix * delta[i];
        }
        let n = norm2(&j).sqrt();
        if n > 1e-300 {
            j.iter_mut().for_each(|x| *x /= n);
            return j;
        }
    }
}

/// Gaussian jump with i.i.d. `Normal(0, std^2)` coordinates.
#[inline]
pub fn sample_gaussian_jump<const D: usize, R: Rng + ?Sized>(std: f64, rng: &mut R) -> Vector<D> {
    let mut out = [0.0; D];
    for x in out.iter_mut() {
        *x = std * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

#[derive(Clone, Copy, Debug)]
enum Kernel {
    Sphere { length: f64 },
    Correlated { length: f64, beta: f64 },
    Gaussian { std: f64 },
}

/// Precomputed per-step rules of one model; shared by every replica.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stepper {
    p_term: f64,
    p_branch: f64,
    /// Per-child stillbirth probability at type-II resolution.
    p_stillborn: f64,
    delayed: bool,
    kernel: Kernel,
}

impl Stepper {
    pub(crate) fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (p_term, p_branch) = cfg.step_probabilities();
        let kernel = match cfg.kind {
            ModelKind::Brw => Kernel::Sphere {
                length: cfg.jump_scale,
            },
            ModelKind::Bcrw => Kernel::Correlated {
                length: cfg.jump_scale,
                beta: cfg.correlation.expect("validated"),
            },
            ModelKind::Gbrw => Kernel::Gaussian {
                std: cfg.jump_scale,
            },
            ModelKind::Bbm => Kernel::Gaussian {
                std: cfg.jump_scale * cfg.step_duration().sqrt(),
            },
        };
        Ok(Self {
            p_term,
            p_branch,
            p_stillborn: cfg.term_rate,
            delayed: cfg.kind.is_discrete(),
            kernel,
        })
    }

    #[inline]
    fn jump<const D: usize, R: Rng + ?Sized>(
        &self,
        from: &Vector<D>,
        anchor: Option<&Vector<D>>,
        stage: Stage,
        rng: &mut R,
    ) -> Particle<D> {
        let (disp, dir) = match self.kernel {
            Kernel::Sphere { length } => {
                let d = sample_uniform_sphere::<D, R>(rng);
                (scaled(&d, length), Some(d))
            }
            Kernel::Correlated { length, beta } => {
                let d = match anchor {
                    Some(prev) => sample_correlated_jump(prev, beta, rng),
                    None => sample_uniform_sphere::<D, R>(rng),
                };
                (scaled(&d, length), Some(d))
            }
            Kernel::Gaussian { std } => (sample_gaussian_jump::<D, R>(std, rng), None),
        };
        let mut position = *from;
        for i in 0..D {
            position[i] += disp[i];
        }
        Particle {
            position,
            prev_jump: dir,
            stage,
        }
    }

    /// Advances `src` by one step into `dst` (which is not cleared).
    ///
    /// `on_move` sees every particle that completes a move; returning `true`
    /// stops the step immediately and makes `advance` return `true`.
    #[inline]
    pub(crate) fn advance<const D: usize, R, F>(
        &self,
        src: &[Particle<D>],
        dst: &mut Vec<Particle<D>>,
        rng: &mut R,
        mut on_move: F,
    ) -> bool
    where
        R: Rng + ?Sized,
        F: FnMut(&Particle<D>) -> bool,
    {
        let mut emit = |p: Particle<D>, dst: &mut Vec<Particle<D>>| -> bool {
            let stop = on_move(&p);
            dst.push(p);
            stop
        };
        for p in src {
            let anchor = p.prev_jump.as_ref();
            match p.stage {
                Stage::Normal => {
                    let u: f64 = rng.random();
                    if u < self.p_term {
                        continue;
                    }
                    if u < self.p_term + self.p_branch {
                        let second = if self.delayed {
                            Stage::PendingTypeII
                        } else {
                            Stage::Normal
                        };
                        let a = self.jump(&p.position, anchor, Stage::Normal, rng);
                        if emit(a, dst) {
                            return true;
                        }
                        let b = self.jump(&p.position, anchor, second, rng);
                        if emit(b, dst) {
                            return true;
                        }
                    } else {
                        let a = self.jump(&p.position, anchor, Stage::Normal, rng);
                        if emit(a, dst) {
                            return true;
                        }
                    }
                }
                Stage::PendingTypeII => {
                    for _ in 0..2 {
                        if self.p_stillborn > 0.0 && rng.random::<f64>() < self.p_stillborn {
                            continue;
                        }
                        let c = self.jump(&p.position, anchor, Stage::Normal, rng);
                        if emit(c, dst) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

#[inline]
fn scaled<const D: usize>(v: &Vector<D>, s: f64) -> Vector<D> {
    let mut out = *v;
    out.iter_mut().for_each(|x| *x *= s);
    out
}

/// Advances a population by one step (one substep of length `dt` for BBM).
pub fn step_population<const D: usize>(
    particles: &[Particle<D>],
    cfg: &ModelConfig,
    rng: &mut RngStream,
) -> Result<Vec<Particle<D>>, ModelError> {
    if cfg.dimension != D {
        return Err(ModelError::InvalidConfig(format!(
            "config dimension {} does not match particle dimension {D}",
            cfg.dimension
        )));
    }
    let stepper = Stepper::new(cfg)?;
    let mut out = Vec::with_capacity(particles.len() + particles.len() / 4 + 2);
    stepper.advance(particles, &mut out, rng, |_| false);
    Ok(out)
}
