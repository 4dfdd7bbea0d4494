//! Almost-sure interval for populations in `[0, 1]` from the coupled cumulant
//! generating function `Λ(λ) = ∫ ln(βe^{λβ̄x} + β̄e^{−λβx}) dν(x)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ci_banach::{coupling_factor, ConstantMode};
use crate::ci_finite::Interval;
use crate::error::{invalid, Error, Result};
use crate::population::{compensated_sum, Population, SamplingDesign};
use crate::roots::brent;

pub const DEFAULT_SLACK_EXPONENT: f64 = 1.1;
const MAX_ITER: usize = 300;

/// Shift applied to the base measure before building `Λ`.
///
/// Given the sample size the centered and raw deviation events coincide, so
/// both give valid Chernoff bounds; centering removes the drift of the raw
/// cumulant and gives much tighter radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    Raw,
    #[default]
    Mean,
}

impl FromStr for Centering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Centering::Raw),
            "mean" => Ok(Centering::Mean),
            _ => Err(invalid(format!("unknown centering {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgfModel {
    points: Vec<f64>,
    weights: Vec<f64>,
    beta: f64,
    shift: f64,
    m2: f64,
    saturation: f64,
    pub tol: f64,
}

impl CgfModel {
    /// Equal-weight base measure on `values`, using the design constants `β`.
    pub fn from_values(values: &[f64], design: &SamplingDesign, centering: Centering) -> Result<Self> {
        let w = vec![1.0 / values.len() as f64; values.len()];
        Self::new(values, &w, design, centering)
    }

    pub fn new(points: &[f64], weights: &[f64], design: &SamplingDesign, centering: Centering) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(invalid("points and weights must be nonempty and of equal length"));
        }
        design.require_proper()?;
        let total = compensated_sum(weights.iter().copied());
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let shift = match centering {
            Centering::Raw => 0.0,
            Centering::Mean => compensated_sum(points.iter().zip(&weights).map(|(x, w)| x * w)),
        };
        let points: Vec<f64> = points.iter().map(|x| x - shift).collect();
        let m2 = compensated_sum(points.iter().zip(&weights).map(|(x, w)| x * x * w));
        let (beta, bb) = (design.beta, design.beta_bar);
        let saturation = compensated_sum(
            points.iter().zip(&weights).map(|(&x, &w)| w * if x > 0.0 { bb * x } else { -beta * x }),
        );
        Ok(Self { points, weights, beta, shift, m2, saturation, tol: 1e-12 })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Second moment of the (shifted) base measure.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Supremal slope `lim Λ'(λ)`; reduces to `β̄·mean` for a nonnegative base.
    pub fn saturation(&self) -> f64 {
        self.saturation
    }

    /// `Λ''(0) = ββ̄m₂`.
    pub fn curvature_at_zero(&self) -> f64 {
        self.beta * (1.0 - self.beta) * self.m2
    }

    fn f(&self, x: f64, lambda: f64) -> f64 {
        let (beta, bb) = (self.beta, 1.0 - self.beta);
        let a = lambda * bb * x;
        let b = -lambda * beta * x;
        let m = a.max(b);
        m + (beta * (a - m).exp() + bb * (b - m).exp()).ln()
    }

    fn df(&self, x: f64, lambda: f64) -> f64 {
        let (beta, bb) = (self.beta, 1.0 - self.beta);
        let a = lambda * bb * x;
        let b = -lambda * beta * x;
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        beta * bb * x * (ea - eb) / (beta * ea + bb * eb)
    }

    pub fn cgf(&self, lambda: f64) -> f64 {
        compensated_sum(self.points.iter().zip(&self.weights).map(|(&x, &w)| w * self.f(x, lambda)))
    }

    pub fn cgf_prime(&self, lambda: f64) -> f64 {
        compensated_sum(self.points.iter().zip(&self.weights).map(|(&x, &w)| w * self.df(x, lambda)))
    }

    /// `λΛ'(λ) − Λ(λ)`, the conjugate evaluated along the slope curve.
    fn legendre_along(&self, lambda: f64) -> f64 {
        (lambda * self.cgf_prime(lambda) - self.cgf(lambda)).max(0.0)
    }

    /// `λ ≥ 0` with `Λ'(λ) = y`, for `0 ≤ y < saturation`.
    pub fn slope_inverse(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        if y >= self.saturation {
            return Ok(f64::INFINITY);
        }
        let mut hi = 1.0;
        while self.cgf_prime(hi) < y {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Solver { msg: "slope inverse: cannot bracket".into(), best: None });
            }
        }
        let r = brent(|l| self.cgf_prime(l) - y, 0.0, hi, self.tol * hi.max(1.0), MAX_ITER)?;
        Ok(r.x)
    }

    /// `Λ*(y) = sup_{λ≥0} λy − Λ(λ)`; `+∞` at or beyond the saturation slope.
    pub fn legendre(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(invalid("legendre needs y >= 0"));
        }
        if y >= self.saturation {
            return Ok(f64::INFINITY);
        }
        let lam = self.slope_inverse(y)?;
        Ok((lam * y - self.cgf(lam)).max(0.0))
    }

    /// Smallest `y` with `Λ*(y) ≥ t`; the saturation slope when `t` exceeds the finite range.
    pub fn invert_legendre(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid("invert_legendre needs t >= 0"));
        }
        if t == 0.0 || self.saturation <= 0.0 {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while self.legendre_along(hi) < t {
            hi *= 2.0;
            if hi > 1e15 {
                return Ok(self.saturation);
            }
        }
        let r = brent(|l| self.legendre_along(l) - t, 0.0, hi, self.tol * hi.max(1.0), MAX_ITER)?;
        Ok(self.cgf_prime(r.x).min(self.saturation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsOptions {
    pub constant: ConstantMode,
    pub centering: Centering,
    /// Exponent `p` of the empirical slack `N^{−p}`.
    pub slack_exponent: f64,
}

impl Default for AsOptions {
    fn default() -> Self {
        Self { constant: ConstantMode::Paper, centering: Centering::Mean, slack_exponent: DEFAULT_SLACK_EXPONENT }
    }
}

/// `t_{N,α} = (1/N) ln(K/α)` with `K = 2.36 √((1−β)n)` in the default mode.
pub fn t_budget(design: &SamplingDesign, alpha: f64, mode: ConstantMode) -> Result<f64> {
    Ok((coupling_factor(design, mode)? / alpha).ln().max(0.0) / design.big_n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsInterval {
    pub interval: Interval,
    pub center: f64,
    pub epsilon: f64,
    pub t: f64,
}

/// Radius `ε_N = Λ_N^{*−1}(t)/β` built from the full population.
pub fn oracle_radius(pop: &Population, design: &SamplingDesign, alpha: f64, opts: &AsOptions) -> Result<(f64, f64)> {
    if pop.len() != design.big_n {
        return Err(invalid("design N does not match the population size"));
    }
    let model = CgfModel::from_values(pop.values(), design, opts.centering)?;
    let t = t_budget(design, alpha, opts.constant)?;
    Ok((model.invert_legendre(t)? / design.beta, t))
}

/// Oracle interval around the sample mean.
pub fn ci_oracle(pop: &Population, sample: &[f64], design: &SamplingDesign, alpha: f64, opts: &AsOptions) -> Result<AsInterval> {
    let (epsilon, t) = oracle_radius(pop, design, alpha, opts)?;
    let center = compensated_sum(sample.iter().copied()) / sample.len() as f64;
    Ok(AsInterval { interval: Interval::around(center, epsilon), center, epsilon, t })
}

/// Empirical interval: the sample replaces the population in `Λ` and the
/// budget gets the slack `N^{−p}`; `β` stays the design's sampling fraction.
pub fn ci_empirical(sample: &[f64], design: &SamplingDesign, alpha: f64, opts: &AsOptions) -> Result<AsInterval> {
    if sample.len() != design.n {
        return Err(invalid(format!("sample has {} values but design says n = {}", sample.len(), design.n)));
    }
    let model = CgfModel::from_values(sample, design, opts.centering)?;
    let t = t_budget(design, alpha, opts.constant)? + (design.big_n as f64).powf(-opts.slack_exponent);
    let epsilon = model.invert_legendre(t)? / design.beta;
    let center = compensated_sum(sample.iter().copied()) / sample.len() as f64;
    Ok(AsInterval { interval: Interval::around(center, epsilon), center, epsilon, t })
}
