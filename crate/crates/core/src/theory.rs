//! Closed-form and implicitly defined predictions for branching processes:
//! growth rate, large-deviation rate functions, frontier speed constants,
//! first-passage asymptotics, extinction, and critical stretch.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("parameters outside the valid domain: {0}")]
    Domain(String),
    #[error("growth rate rho = {rho} <= 1: no positive frontier speed")]
    NoPositiveSpeed { rho: f64 },
    #[error("log rho = {target} exceeds the largest rate-function value {max} reachable inside the domain")]
    DomainSaturation { target: f64, max: f64 },
    #[error("x = {x} outside the rate-function domain (0, {sup})")]
    OutsideDomain { x: f64, sup: f64 },
}

type Result<T> = std::result::Result<T, TheoryError>;

fn check_rates(kappa: f64, nu: f64) -> Result<()> {
    if !(kappa >= 0.0 && nu >= 0.0) || !(kappa + nu <= 1.0 + 1e-12) {
        return Err(TheoryError::Domain(format!(
            "need kappa, nu >= 0 and kappa + nu <= 1 (kappa = {kappa}, nu = {nu})"
        )));
    }
    Ok(())
}

/// Per-step growth factor of the expected population under delayed branching,
/// the Perron eigenvalue of the (population, pending) mean matrix.
pub fn rho(kappa: f64, nu: f64) -> Result<f64> {
    check_rates(kappa, nu)?;
    let a = 1.0 - nu;
    Ok(a / 2.0 + (a * a / 4.0 + 2.0 * kappa * a).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateKind {
    /// Gaussian jumps with the given per-coordinate standard deviation.
    Gaussian { std: f64 },
    /// Jumps of fixed length uniformly oriented in 3D; the first coordinate is
    /// then uniform on `[-len, len]`.
    UniformSphere { jump_length: f64 },
}

/// Large-deviation rate function of the first coordinate of one jump,
/// `I(x) = sup_{l>0} (l x - log E[exp(l xi)])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    pub kind: RateKind,
}

pub fn rate_function(kind: RateKind) -> Result<RateFunction> {
    let scale = match kind {
        RateKind::Gaussian { std } => std,
        RateKind::UniformSphere { jump_length } => jump_length,
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(TheoryError::Domain(format!("jump scale must be > 0, got {scale}")));
    }
    Ok(RateFunction { kind })
}

// Langevin-type helpers for the uniform law on [-1, 1]: its log-MGF is
// log(sinh y / y), with derivative coth y - 1/y.

const Y_MIN: f64 = 1e-8;
const Y_MAX: f64 = 700.0;

fn langevin(y: f64) -> f64 {
    if y < 0.05 {
        let y2 = y * y;
        y * (1.0 / 3.0 + y2 * (-1.0 / 45.0 + y2 * (2.0 / 945.0 + y2 * (-1.0 / 4725.0 + y2 * 2.0 / 93555.0))))
    } else {
        1.0 / y.tanh() - 1.0 / y
    }
}

fn langevin_prime(y: f64) -> f64 {
    if y < 0.05 {
        let y2 = y * y;
        1.0 / 3.0 + y2 * (-1.0 / 15.0 + y2 * (2.0 / 189.0 + y2 * (-1.0 / 675.0)))
    } else {
        let s = y.sinh();
        1.0 / (y * y) - 1.0 / (s * s)
    }
}

fn log_sinhc(y: f64) -> f64 {
    if y < 0.05 {
        let y2 = y * y;
        y2 * (1.0 / 6.0 + y2 * (-1.0 / 180.0 + y2 / 2835.0))
    } else if y > 20.0 {
        y - std::f64::consts::LN_2 - y.ln() + (-(-2.0 * y).exp()).ln_1p()
    } else {
        (y.sinh() / y).ln()
    }
}

/// Solves `langevin(y) = t` for `t` in `(0, langevin(Y_MAX)]` by safeguarded Newton.
fn invert_langevin(t: f64) -> f64 {
    let (mut lo, mut hi) = (Y_MIN, Y_MAX);
    let mut y = if t < 0.3 { 3.0 * t } else { 1.0 / (1.0 - t) };
    y = y.clamp(lo, hi);
    for _ in 0..200 {
        let f = langevin(y) - t;
        if f == 0.0 {
            return y;
        }
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let step = f / langevin_prime(y);
        let mut next = y - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-15 * y {
            return next;
        }
        y = next;
    }
    y
}

impl RateFunction {
    pub fn gaussian(std: f64) -> Result<Self> {
        rate_function(RateKind::Gaussian { std })
    }

    pub fn uniform_sphere(jump_length: f64) -> Result<Self> {
        rate_function(RateKind::UniformSphere { jump_length })
    }

    /// Supremum of the domain (`inf` for Gaussian jumps).
    pub fn domain_sup(&self) -> f64 {
        match self.kind {
            RateKind::Gaussian { .. } => f64::INFINITY,
            RateKind::UniformSphere { jump_length } => jump_length,
        }
    }

    /// `log E[exp(l xi)]`.
    pub fn log_mgf(&self, lambda: f64) -> f64 {
        match self.kind {
            RateKind::Gaussian { std } => 0.5 * std * std * lambda * lambda,
            RateKind::UniformSphere { jump_length } => log_sinhc((jump_length * lambda).abs()),
        }
    }

    /// The optimal tilt `l*(x)`, which is also `I'(x)`.
    fn tilt(&self, x: f64) -> Result<f64> {
        let sup = self.domain_sup();
        if !(x >= 0.0 && x < sup) {
            return Err(TheoryError::OutsideDomain { x, sup });
        }
        match self.kind {
            RateKind::Gaussian { std } => Ok(x / (std * std)),
            RateKind::UniformSphere { jump_length } => {
                let t = x / jump_length;
                if t == 0.0 {
                    return Ok(0.0);
                }
                if t > langevin(Y_MAX) {
                    return Err(TheoryError::OutsideDomain { x, sup });
                }
                if t < langevin(Y_MIN) {
                    return Ok(3.0 * t / jump_length);
                }
                Ok(invert_langevin(t) / jump_length)
            }
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let lambda = self.tilt(x)?;
        match self.kind {
            RateKind::Gaussian { std } => Ok(x * x / (2.0 * std * std)),
            RateKind::UniformSphere { .. } => Ok(lambda * x - self.log_mgf(lambda)),
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.tilt(x)
    }

    /// Largest argument at which the rate function is evaluated numerically.
    fn reachable_sup(&self) -> f64 {
        match self.kind {
            RateKind::Gaussian { .. } => f64::INFINITY,
            RateKind::UniformSphere { jump_length } => jump_length * langevin(Y_MAX),
        }
    }
}

/// Frontier speed `c1` solving `I(c1) = log rho`, and `c2 = I'(c1)`.
pub fn solve_c1_c2(rate: &RateFunction, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 1.0) {
        return Err(TheoryError::NoPositiveSpeed { rho });
    }
    let target = rho.ln();
    let mut lo = 0.0;
    let mut hi = match rate.kind {
        RateKind::Gaussian { std } => {
            let mut h = std;
            while rate.evaluate(h)? < target {
                h *= 2.0;
            }
            h
        }
        RateKind::UniformSphere { .. } => {
            let h = rate.reachable_sup();
            let max = rate.evaluate(h)?;
            if max < target {
                return Err(TheoryError::DomainSaturation { target, max });
            }
            h
        }
    };
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if rate.evaluate(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let c1 = 0.5 * (lo + hi);
    Ok((c1, rate.derivative(c1)?))
}

/// Mean FPT of a branching random walk to the unit ball at distance `x`:
/// `x/c1 + (d+2)/(2 c1 c2) log x`.
pub fn brw_fpt_mean(x: f64, c1: f64, c2: f64, d: usize) -> f64 {
    x / c1 + (d as f64 + 2.0) / (2.0 * c2 * c1) * x.ln()
}

/// Mean FPT of a BBM with branching rate `kappa` and diffusivity `s`:
/// `x/(s sqrt(2 kappa)) + (d+2)/(4 kappa) log(x/s)`.
pub fn bbm_fpt_mean(x: f64, kappa: f64, s: f64, d: usize) -> f64 {
    x / (s * (2.0 * kappa).sqrt()) + (d as f64 + 2.0) / (4.0 * kappa) * (x / s).ln()
}

/// Branching rate of a standard BBM whose expected population grows like the
/// delayed-branching BBM with termination: the root of `exp(k) (k + nu) = 2 kappa`.
pub fn implied_bbm_rate(kappa: f64, nu: f64) -> Result<f64> {
    if !(kappa >= 0.0 && nu >= 0.0) {
        return Err(TheoryError::Domain(format!("need kappa, nu >= 0 (got {kappa}, {nu})")));
    }
    if 2.0 * kappa < nu {
        return Err(TheoryError::Domain(format!(
            "2 kappa ({}) < nu ({nu}): no positive growth",
            2.0 * kappa
        )));
    }
    let f = |k: f64| k.exp() * (k + nu) - 2.0 * kappa;
    // f is increasing and convex, so Newton from the right stays to the right
    let (mut lo, mut hi) = (0.0, 2.0 * kappa);
    let mut k = hi;
    for _ in 0..200 {
        let fk = f(k);
        if fk.abs() < 1e-15 {
            break;
        }
        if fk > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        let mut next = k - fk / (k.exp() * (k + nu + 1.0));
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        if next == k {
            break;
        }
        k = next;
    }
    Ok(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum C1barVariant {
    Brw { c1: f64, c2: f64 },
    Bbm { kappa: f64, s: f64 },
}

/// Apparent speed of a linear fit through mean FPTs centered near `qhat`.
pub fn c1bar_estimate(variant: C1barVariant, d: usize, qhat: f64) -> f64 {
    let dd = d as f64 + 2.0;
    match variant {
        C1barVariant::Brw { c1, c2 } => 1.0 / (1.0 / c1 + dd / (2.0 * c1 * c2 * qhat)),
        C1barVariant::Bbm { kappa, s } => {
            1.0 / (1.0 / (s * (2.0 * kappa).sqrt()) + dd / (4.0 * kappa * qhat))
        }
    }
}

/// Ultimate extinction probability of the delayed-branching process started
/// from one Normal particle: the smallest root of `q = h(q)` in `[0, 1]`.
pub fn extinction_probability(kappa: f64, nu: f64) -> Result<f64> {
    check_rates(kappa, nu)?;
    if nu == 0.0 {
        return Ok(0.0);
    }
    if 2.0 * kappa * (1.0 - nu) <= nu {
        return Ok(1.0);
    }
    // h(q) - q = (q - 1) (a q^2 + b q - nu); the quadratic is -nu at 0 and
    // positive at 1 in the supercritical case
    let a = kappa * (1.0 - nu) * (1.0 - nu);
    let b = kappa * (1.0 - nu * nu);
    let quad = |q: f64| (a * q + b) * q - nu;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if quad(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The generating map `h` of the extinction recursion.
pub fn extinction_map(kappa: f64, nu: f64, q: f64) -> f64 {
    nu + (1.0 - kappa - nu) * q
        + kappa * (1.0 - nu).powi(2) * q.powi(3)
        + kappa * nu * nu * q
        + 2.0 * kappa * nu * (1.0 - nu) * q * q
}

/// Mean matrix of (expected population, expected pending particles).
pub fn mean_matrix(kappa: f64, nu: f64) -> [[f64; 2]; 2] {
    [[1.0 + kappa - nu, 1.0 - kappa - nu], [kappa, -kappa]]
}

/// Expected total population (pending particles included) and expected
/// pending count after `n` steps from a single Normal particle.
pub fn expected_population(kappa: f64, nu: f64, n: usize) -> (f64, f64) {
    let m = mean_matrix(kappa, nu);
    let (mut pop, mut pending) = (1.0, 0.0);
    for _ in 0..n {
        let next = (m[0][0] * pop + m[0][1] * pending, m[1][0] * pop + m[1][1] * pending);
        pop = next.0;
        pending = next.1;
    }
    (pop, pending)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EightChain {
    pub c1: f64,
    pub lambda_c_approx: f64,
    /// Larger positive root of `l^2 + 2/l = 3/kappa`; absent when `kappa > 1`.
    pub lambda_c_exact: Option<f64>,
}

/// Shortest-path speed and critical stretch of the periodic 8-chain network.
pub fn eight_chain(kappa: f64) -> Result<EightChain> {
    if !(kappa > 0.0) {
        return Err(TheoryError::Domain(format!("kappa must be > 0, got {kappa}")));
    }
    let rhs = 3.0 / kappa;
    let f = |l: f64| l * l + 2.0 / l - rhs;
    let exact = if rhs < 3.0 {
        None
    } else {
        // convex on l > 0 with minimum 3 at l = 1; Newton from sqrt(rhs)
        // descends monotonically onto the larger root
        let mut l = rhs.sqrt().max(1.0);
        for _ in 0..200 {
            let fl = f(l);
            let d = 2.0 * l - 2.0 / (l * l);
            if fl.abs() < 1e-14 * rhs || d <= 0.0 {
                break;
            }
            let next = (l - fl / d).max(1.0);
            if next == l {
                break;
            }
            l = next;
        }
        Some(l)
    };
    Ok(EightChain {
        c1: (kappa / 3.0).sqrt(),
        lambda_c_approx: rhs.sqrt(),
        lambda_c_exact: exact,
    })
}

/// Critical stretch of a BBM with unit jump length in the small-rate limit.
pub fn bbm_critical_stretch(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(TheoryError::Domain(format!("kappa must be > 0, got {kappa}")));
    }
    Ok((3.0 / (4.0 * kappa)).sqrt())
}

/// Median position of the maximum of a standard one-dimensional BBM.
pub fn bbm_max_mean(t: f64) -> f64 {
    std::f64::consts::SQRT_2 * t - 3.0 / (2.0 * std::f64::consts::SQRT_2) * t.ln()
}

/// Bundle of predictions for one discrete model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub dimension: usize,
    pub qhat: f64,
    pub c1bar: f64,
}

impl TheoryPrediction {
    pub fn mean_fpt(&self, q_x: f64) -> f64 {
        brw_fpt_mean(q_x, self.c1, self.c2, self.dimension)
    }
}

pub fn predict_brw(rate: &RateFunction, kappa: f64, nu: f64, d: usize, qhat: f64) -> Result<TheoryPrediction> {
    let rho = rho(kappa, nu)?;
    let (c1, c2) = solve_c1_c2(rate, rho)?;
    Ok(TheoryPrediction {
        rho,
        c1,
        c2,
        dimension: d,
        qhat,
        c1bar: c1bar_estimate(C1barVariant::Brw { c1, c2 }, d, qhat),
    })
}
