//! Degree-2 polynomial law from (A, C) to benchmark performance, plus the
//! single-factor and random-score baselines it is compared against.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::table::{AcTable, BenchmarkTable, Category};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// `[1, a, c]`
    Linear,
    /// `[1, a, c, a², a·c, c²]`
    #[default]
    Quadratic,
}

impl Basis {
    pub fn n_features(self) -> usize {
        match self {
            Basis::Linear => 3,
            Basis::Quadratic => 6,
        }
    }

    pub fn expand(self, a: f64, c: f64) -> Vec<f64> {
        match self {
            Basis::Linear => vec![1.0, a, c],
            Basis::Quadratic => vec![1.0, a, c, a * a, a * c, c * c],
        }
    }

    /// Basis in a single variable: `[1, x]` or `[1, x, x²]`.
    fn expand_single(self, x: f64) -> Vec<f64> {
        match self {
            Basis::Linear => vec![1.0, x],
            Basis::Quadratic => vec![1.0, x, x * x],
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Linear => "linear",
            Basis::Quadratic => "quadratic",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Basis::Linear),
            "quadratic" => Ok(Basis::Quadratic),
            other => Err(Error::domain(format!("unknown basis '{other}'"))),
        }
    }
}

/// `[1, a, c, a², a·c, c²]`
pub fn poly_features(a: f64, c: f64) -> Result<[f64; 6]> {
    if !a.is_finite() || !c.is_finite() {
        return Err(Error::domain(format!("non-finite scores ({a}, {c})")));
    }
    Ok([1.0, a, c, a * a, a * c, c * c])
}

/// Fitted weights over a [`Basis`] in (A, C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub weights: Vec<f64>,
    pub basis: Basis,
}

impl QuadraticModel {
    pub fn new(weights: Vec<f64>, basis: Basis) -> Result<Self> {
        if weights.len() != basis.n_features() {
            return Err(Error::domain(format!(
                "{} basis needs {} weights, got {}",
                basis,
                basis.n_features(),
                weights.len()
            )));
        }
        Ok(QuadraticModel { weights, basis })
    }

    pub fn predict(&self, a: f64, c: f64) -> f64 {
        dot(&self.weights, &self.basis.expand(a, c))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares weights for `xs · w ≈ y`. Minimum-norm when the design is
/// rank deficient (e.g. fewer samples than features).
pub fn fit_least_squares<R: AsRef<[f64]>>(xs: &[R], y: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != y.len() {
        return Err(Error::domain(format!(
            "{} feature rows for {} targets",
            xs.len(),
            y.len()
        )));
    }
    let width = xs[0].as_ref().len();
    if xs.iter().any(|r| r.as_ref().len() != width) {
        return Err(Error::domain("feature rows differ in length"));
    }
    if xs
        .iter()
        .flat_map(|r| r.as_ref())
        .chain(y)
        .any(|v| !v.is_finite())
    {
        return Err(Error::domain("non-finite value in regression inputs"));
    }
    Ok(lstsq(&Matrix::from_rows(xs), y).x)
}

/// Fits a model over `basis` to `(a, c) → y`.
pub fn fit_model(points: &[(f64, f64)], y: &[f64], basis: Basis) -> Result<QuadraticModel> {
    let xs: Vec<Vec<f64>> = points.iter().map(|&(a, c)| basis.expand(a, c)).collect();
    QuadraticModel::new(fit_least_squares(&xs, y)?, basis)
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() || y.len() < 2 {
        return Err(Error::domain(format!(
            "r_squared needs two equal-length series of length >= 2, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::domain("R² is undefined for constant targets"));
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Which scores feed the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Ac,
    AOnly,
    COnly,
    /// Two standard-normal scores per setting stand in for (A, C).
    Random {
        seed: u64,
    },
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Ac => f.write_str("ac"),
            FeatureMode::AOnly => f.write_str("a_only"),
            FeatureMode::COnly => f.write_str("c_only"),
            FeatureMode::Random { .. } => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Fit and score on all settings.
    #[default]
    InSample,
    /// Predicted R² from leave-one-out residuals.
    LeaveOneOut,
}

/// Design matrix rows for every setting of `ac`, in table order.
pub fn design_rows(ac: &AcTable, mode: FeatureMode, basis: Basis) -> Vec<Vec<f64>> {
    match mode {
        FeatureMode::Ac => ac
            .entries()
            .iter()
            .map(|e| basis.expand(e.a, e.c))
            .collect(),
        FeatureMode::AOnly => ac
            .entries()
            .iter()
            .map(|e| basis.expand_single(e.a))
            .collect(),
        FeatureMode::COnly => ac
            .entries()
            .iter()
            .map(|e| basis.expand_single(e.c))
            .collect(),
        FeatureMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..ac.len())
                .map(|_| {
                    let ra: f64 = StandardNormal.sample(&mut rng);
                    let rc: f64 = StandardNormal.sample(&mut rng);
                    basis.expand(ra, rc)
                })
                .collect()
        }
    }
}

fn fitted_r_squared(xs: &[Vec<f64>], y: &[f64], eval: Evaluation) -> Result<f64> {
    match eval {
        Evaluation::InSample => {
            let w = fit_least_squares(xs, y)?;
            let y_hat: Vec<f64> = xs.iter().map(|r| dot(r, &w)).collect();
            r_squared(y, &y_hat)
        }
        Evaluation::LeaveOneOut => {
            let y_hat = (0..xs.len())
                .map(|i| {
                    let train_x: Vec<&Vec<f64>> = xs
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, r)| r)
                        .collect();
                    let train_y: Vec<f64> = y
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| *v)
                        .collect();
                    let w = fit_least_squares(&train_x, &train_y)?;
                    Ok(dot(&xs[i], &w))
                })
                .collect::<Result<Vec<_>>>()?;
            r_squared(y, &y_hat)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkFit {
    pub benchmark: String,
    pub category: Category,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub mode: FeatureMode,
    pub basis: Basis,
    pub evaluation: Evaluation,
    pub benchmarks: Vec<BenchmarkFit>,
    /// Mean R² per benchmark category.
    pub category_means: BTreeMap<Category, f64>,
}

impl FitReport {
    pub fn category_mean(&self, cat: Category) -> Option<f64> {
        self.category_means.get(&cat).copied()
    }

    pub fn get(&self, benchmark: &str) -> Option<f64> {
        self.benchmarks
            .iter()
            .find(|b| b.benchmark == benchmark)
            .map(|b| b.r_squared)
    }
}

/// R² of the chosen regression on every benchmark of `bench`.
pub fn fit_report(
    ac: &AcTable,
    bench: &BenchmarkTable,
    mode: FeatureMode,
    basis: Basis,
    eval: Evaluation,
) -> Result<FitReport> {
    let xs = design_rows(ac, mode, basis);
    let mut benchmarks = Vec::with_capacity(bench.benchmarks().len());
    for (name, category) in bench.benchmarks() {
        let y = bench.column(ac, name)?;
        benchmarks.push(BenchmarkFit {
            benchmark: name.clone(),
            category: *category,
            r_squared: fitted_r_squared(&xs, &y, eval)?,
        });
    }
    let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for b in &benchmarks {
        let e = sums.entry(b.category).or_default();
        e.0 += b.r_squared;
        e.1 += 1;
    }
    let category_means = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    Ok(FitReport {
        mode,
        basis,
        evaluation: eval,
        benchmarks,
        category_means,
    })
}
