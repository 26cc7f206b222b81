//! Linear least squares for mean first-passage and shortest-path curves:
//! `mu = slope q + intercept` and `tau = A q + B log q + C`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("rank-deficient design: need at least {needed} distinct abscissas, got {distinct}")]
    RankDeficient { needed: usize, distinct: usize },
    #[error("fitted slope is zero; speed undefined")]
    ZeroSlope,
    #[error("leading coefficient A = {0} <= 0")]
    NonPositiveLeading(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitForm {
    Linear,
    Loglinear,
}

impl std::str::FromStr for FitForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "loglinear" => Ok(Self::Loglinear),
            other => Err(format!("unknown fit form '{other}' (expected linear or loglinear)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub form: FitForm,
    pub coefficients: BTreeMap<String, f64>,
    pub r_squared: f64,
    pub residual_norm: f64,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> f64 {
        self.coefficients[name]
    }

    /// Speed implied by the leading coefficient: `1/slope` or `1/A`.
    pub fn speed(&self) -> f64 {
        match self.form {
            FitForm::Linear => 1.0 / self.coefficient("slope"),
            FitForm::Loglinear => 1.0 / self.coefficient("A"),
        }
    }
}

/// `{0.25, 0.5, 0.75, 1} * l_x`.
pub fn default_linear_abscissas(l_x: f64) -> Vec<f64> {
    [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * l_x).collect()
}

/// `k` evenly spaced points on `[20, 60]`.
pub fn default_loglinear_abscissas(k: usize) -> Vec<f64> {
    linspace(20.0, 60.0, k)
}

pub fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![a],
        _ => (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect(),
    }
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Weighted least squares through an SVD of the column-scaled design.
fn solve(
    columns: &[Vec<f64>],
    y: &[f64],
    weights: Option<&[f64]>,
    needed: usize,
    distinct: usize,
) -> Result<(Vec<f64>, f64, f64), FitError> {
    let n = y.len();
    let p = columns.len();
    if distinct < needed {
        return Err(FitError::RankDeficient { needed, distinct });
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n || w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(FitError::InvalidInput("weights must be positive, one per point".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let a = DMatrix::from_fn(n, p, |i, j| w[i].sqrt() * columns[j][i] / scales[j]);
    let b = DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(FitError::RankDeficient { needed, distinct });
    }
    let sol = svd
        .solve(&b, 1e-14 * smax)
        .map_err(|e| FitError::InvalidInput(e.to_string()))?;
    let coef: Vec<f64> = (0..p).map(|j| sol[j] / scales[j]).collect();

    let fitted: Vec<f64> = (0..n).map(|i| (0..p).map(|j| coef[j] * columns[j][i]).sum()).collect();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let ssr: f64 = (0..n).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
    let sst: f64 = (0..n).map(|i| w[i] * (y[i] - ybar).powi(2)).sum();
    let r2 = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };
    let resid = (0..n).map(|i| (y[i] - fitted[i]).powi(2)).sum::<f64>().sqrt();
    Ok((coef, r2, resid))
}

fn check_points(points: &[(f64, f64)]) -> Result<(), FitError> {
    if let Some((q, m)) = points.iter().find(|(q, m)| !q.is_finite() || !m.is_finite()) {
        return Err(FitError::InvalidInput(format!("non-finite point ({q}, {m})")));
    }
    Ok(())
}

/// Ordinary least squares `mu = slope q + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<FitResult, FitError> {
    weighted_linear_fit(points, None)
}

pub fn weighted_linear_fit(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<FitResult, FitError> {
    check_points(points)?;
    let q: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let cols = vec![q.clone(), vec![1.0; q.len()]];
    let (c, r_squared, residual_norm) = solve(&cols, &y, weights, 2, distinct_count(&q))?;
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if c[0] == 0.0 || c[0].abs() * q.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-14 * scale {
        return Err(FitError::ZeroSlope);
    }
    Ok(FitResult {
        form: FitForm::Linear,
        coefficients: BTreeMap::from([("slope".to_string(), c[0]), ("intercept".to_string(), c[1])]),
        r_squared,
        residual_norm,
    })
}

/// Least squares in the basis `{q, log q, 1}`.
pub fn log_linear_fit(points: &[(f64, f64)]) -> Result<FitResult, FitError> {
    weighted_log_linear_fit(points, None)
}

pub fn weighted_log_linear_fit(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<FitResult, FitError> {
    check_points(points)?;
    if let Some((q, _)) = points.iter().find(|(q, _)| !(*q > 1.0)) {
        return Err(FitError::InvalidInput(format!("log-linear fit needs q > 1, got {q}")));
    }
    let q: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let cols = vec![q.clone(), q.iter().map(|x| x.ln()).collect(), vec![1.0; q.len()]];
    let (c, r_squared, residual_norm) = solve(&cols, &y, weights, 3, distinct_count(&q))?;
    if !(c[0] > 0.0) {
        return Err(FitError::NonPositiveLeading(c[0]));
    }
    Ok(FitResult {
        form: FitForm::Loglinear,
        coefficients: BTreeMap::from([
            ("A".to_string(), c[0]),
            ("B".to_string(), c[1]),
            ("C".to_string(), c[2]),
        ]),
        r_squared,
        residual_norm,
    })
}

pub fn fit(form: FitForm, points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<FitResult, FitError> {
    match form {
        FitForm::Linear => weighted_linear_fit(points, weights),
        FitForm::Loglinear => weighted_log_linear_fit(points, weights),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{brw_fpt_mean, c1bar_estimate, C1barVariant};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_line() {
        let pts: Vec<_> = [1.0, 2.0, 5.0, 7.0].iter().map(|&q| (q, 2.0 * q + 1.0)).collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.coefficient("slope") - 2.0).abs() < 1e-12);
        assert!((f.coefficient("intercept") - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.speed() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            linear_fit(&[(3.0, 1.0), (3.0, 2.0), (3.0, 4.0)]),
            Err(FitError::RankDeficient { needed: 2, distinct: 1 })
        );
        assert_eq!(linear_fit(&[(1.0, 4.0), (2.0, 4.0)]), Err(FitError::ZeroSlope));
        assert!(matches!(
            log_linear_fit(&[(5.0, 1.0), (5.0, 2.0), (5.0, 3.0), (5.0, 9.0)]),
            Err(FitError::RankDeficient { .. })
        ));
        assert!(matches!(
            log_linear_fit(&[(5.0, 1.0), (6.0, 2.0)]),
            Err(FitError::RankDeficient { .. })
        ));
        assert!(matches!(
            log_linear_fit(&[(20.0, 9.0), (30.0, 8.0), (40.0, 7.0)]),
            Err(FitError::NonPositiveLeading(_))
        ));
        assert!(matches!(log_linear_fit(&[(0.5, 1.0), (2.0, 2.0), (3.0, 3.0)]), Err(FitError::InvalidInput(_))));
    }

    #[test]
    fn exact_log_linear() {
        let pts: Vec<_> = linspace(20.0, 60.0, 9)
            .into_iter()
            .map(|q| (q, 2.0 * q + 0.5 * q.ln() - 1.0))
            .collect();
        let f = log_linear_fit(&pts).unwrap();
        assert!((f.coefficient("A") - 2.0).abs() < 1e-10);
        assert!((f.coefficient("B") - 0.5).abs() < 1e-10);
        assert!((f.coefficient("C") + 1.0).abs() < 1e-10);
    }

    #[test]
    fn recovers_theory_generator() {
        for &(c1, c2) in &[(0.52, 0.52), (0.3, 1.7), (1.1, 0.8)] {
            let pts: Vec<_> = default_loglinear_abscissas(9)
                .into_iter()
                .map(|q| (q, brw_fpt_mean(q, c1, c2, 3)))
                .collect();
            let f = log_linear_fit(&pts).unwrap();
            assert!((f.coefficient("A") - 1.0 / c1).abs() < 1e-8);
            assert!((f.coefficient("B") - 5.0 / (2.0 * c2 * c1)).abs() < 1e-8);
        }
    }

    #[test]
    fn noisy_line_slope() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<_> = linspace(10.0, 70.0, 200)
            .into_iter()
            .map(|q| {
                let mu = 3.0 * q + 5.0;
                (q, mu + Normal::new(0.0, 0.01 * mu).unwrap().sample(&mut rng))
            })
            .collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.coefficient("slope") / 3.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn residuals_orthogonal_to_basis() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let qs = linspace(20.0, 60.0, 13);
        let pts: Vec<_> = qs.iter().map(|&q| (q, 1.7 * q + noise.sample(&mut rng))).collect();
        let f = log_linear_fit(&pts).unwrap();
        let ynorm = pts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
        let r: Vec<f64> = pts
            .iter()
            .map(|&(q, y)| y - f.coefficient("A") * q - f.coefficient("B") * q.ln() - f.coefficient("C"))
            .collect();
        for basis in [&|q: f64| q, &|q: f64| q.ln(), &|_q: f64| 1.0] as [&dyn Fn(f64) -> f64; 3] {
            let dot: f64 = qs.iter().zip(&r).map(|(&q, r)| basis(q) * r).sum();
            assert!(dot.abs() < 1e-8 * ynorm, "{dot}");
        }
        assert!((0.0..=1.0).contains(&f.r_squared));
        assert!((f.residual_norm - r.iter().map(|x| x * x).sum::<f64>().sqrt()).abs() < 1e-9);
    }

    #[test]
    fn homogeneity() {
        let pts = [(10.0, 31.0), (20.0, 52.5), (30.0, 80.0), (40.0, 101.0)];
        let f = linear_fit(&pts).unwrap();
        let scaled: Vec<_> = pts.iter().map(|&(q, m)| (q, 7.0 * m)).collect();
        let g = linear_fit(&scaled).unwrap();
        assert!((g.coefficient("slope") - 7.0 * f.coefficient("slope")).abs() < 1e-10);
        assert!((g.coefficient("intercept") - 7.0 * f.coefficient("intercept")).abs() < 1e-9);
    }

    #[test]
    fn linear_speed_between_true_and_estimates() {
        let (c1, c2) = (0.52, 0.52);
        let qs = default_linear_abscissas(65.5);
        let pts: Vec<_> = qs.iter().map(|&q| (q, brw_fpt_mean(q, c1, c2, 3))).collect();
        let cbar = linear_fit(&pts).unwrap().speed();
        let v = C1barVariant::Brw { c1, c2 };
        let lo = c1bar_estimate(v, 3, qs[0]);
        assert!(cbar < c1 && cbar > lo, "{lo} < {cbar} < {c1}");
    }

    #[test]
    fn weights_matter_only_with_noise() {
        let pts: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&q| (q, 4.0 * q - 2.0)).collect();
        let f = weighted_linear_fit(&pts, Some(&[1.0, 10.0, 100.0])).unwrap();
        assert!((f.coefficient("slope") - 4.0).abs() < 1e-12);
        let bent = [(1.0, 0.0), (2.0, 1.0), (3.0, 4.0)];
        let a = weighted_linear_fit(&bent, Some(&[1.0, 1.0, 1.0])).unwrap();
        let b = weighted_linear_fit(&bent, Some(&[100.0, 100.0, 1.0])).unwrap();
        assert!((a.coefficient("slope") - 2.0).abs() < 1e-12);
        assert!(b.coefficient("slope") < 1.5);
        assert!(weighted_linear_fit(&bent, Some(&[1.0, 0.0, 1.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn random_lines_recovered(a in -5.0f64..5.0, b in -100.0f64..100.0) {
            proptest::prop_assume!(a.abs() > 1e-3);
            let pts: Vec<_> = [0.0, 1.5, 3.0, 10.0].iter().map(|&q| (q, a * q + b)).collect();
            let f = linear_fit(&pts).unwrap();
            proptest::prop_assert!((f.coefficient("slope") - a).abs() < 1e-9);
            proptest::prop_assert!((f.coefficient("intercept") - b).abs() < 1e-8);
        }
    }
}
