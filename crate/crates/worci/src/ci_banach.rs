//! Norm-ball intervals for means of bounded elements of a (2,D)-smooth Banach space,
//! the Schneider comparison radius, and kernel mean embedding deviations.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::population::SamplingDesign;
use crate::roots::golden_min;
use crate::special::ln_binomial_pmf;

/// How the reciprocal binomial probability `1/P(Bin(N, β) = βN)` is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstantMode {
    /// `1.18 √(ββ̄N)`.
    #[default]
    Paper,
    /// `(e²/√(2π)) √(ββ̄N)`.
    Safe,
    /// The exact reciprocal probability.
    Exact,
}

impl FromStr for ConstantMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ConstantMode::Paper),
            "safe" => Ok(ConstantMode::Safe),
            "exact" => Ok(ConstantMode::Exact),
            _ => Err(invalid(format!("unknown constant mode {s:?}"))),
        }
    }
}

pub const PAPER_COUPLING: f64 = 1.18;

pub fn safe_coupling() -> f64 {
    std::f64::consts::E.powi(2) / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper bound on `1/P(Bin(N, β) = βN)`.
pub fn coupling_bound(big_n: usize, beta: f64, mode: ConstantMode) -> Result<f64> {
    let scale = (beta * (1.0 - beta) * big_n as f64).sqrt();
    match mode {
        ConstantMode::Paper => Ok(PAPER_COUPLING * scale),
        ConstantMode::Safe => Ok(safe_coupling() * scale),
        ConstantMode::Exact => {
            let n = beta * big_n as f64;
            if (n - n.round()).abs() > 1e-9 {
                return Err(invalid(format!("beta * N = {n} is not an integer")));
            }
            Ok((-ln_binomial_pmf(big_n as u64, n.round() as u64, beta)).exp())
        }
    }
}

/// Multiplicative factor `K` in the log budget `ln(K/α)`: twice the coupling bound.
pub fn coupling_factor(design: &SamplingDesign, mode: ConstantMode) -> Result<f64> {
    Ok(2.0 * coupling_bound(design.big_n, design.beta, mode)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanachParams {
    /// Norm bound on the elements.
    pub d: f64,
    /// Smoothness constant.
    pub big_d: f64,
    pub beta: f64,
    /// Sample size; real-valued so that `βN` need not be integral on grids.
    pub n: f64,
    pub big_n: f64,
    pub alpha: f64,
}

impl BanachParams {
    pub fn new(d: f64, big_d: f64, design: &SamplingDesign, alpha: f64) -> Result<Self> {
        Self::with_n(d, big_d, design.beta, design.n as f64, design.big_n as f64, alpha)
    }

    /// Fraction `beta` of a population of size `big_n`, with `n = βN`.
    pub fn nominal(d: f64, big_d: f64, beta: f64, big_n: f64, alpha: f64) -> Result<Self> {
        Self::with_n(d, big_d, beta, beta * big_n, big_n, alpha)
    }

    pub fn with_n(d: f64, big_d: f64, beta: f64, n: f64, big_n: f64, alpha: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(invalid("d must be positive"));
        }
        if !(big_d >= 1.0) {
            return Err(invalid("D must be at least 1"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha must lie in (0,1)"));
        }
        if !(beta > 0.0 && beta <= 1.0) || !(n > 0.0) || !(big_n >= n) {
            return Err(invalid("need 0 < beta <= 1 and 0 < n <= N"));
        }
        Ok(Self { d, big_d, beta, n, big_n, alpha })
    }

    pub fn beta_bar(&self) -> f64 {
        1.0 - self.beta
    }
}

/// `ℓ_n = ln(2.36 √((1−β)n) / α)`.
pub fn ell_n(p: &BanachParams) -> f64 {
    (2.0 * PAPER_COUPLING * (p.beta_bar() * p.n).sqrt() / p.alpha).ln()
}

fn exp_excess(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        x * x * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)))
    } else {
        x.exp_m1() - x
    }
}

/// `g(λ) = (1/β) ln(1 + D²(βe^{λβ̄d} + β̄e^{λβd} − 1 − 2λββ̄d))`.
pub fn g_of_lambda(p: &BanachParams, lambda: f64) -> f64 {
    let (beta, bb) = (p.beta, p.beta_bar());
    let inner = beta * exp_excess(lambda * bb * p.d) + bb * exp_excess(lambda * beta * p.d);
    (p.big_d * p.big_d * inner).ln_1p() / beta
}

/// Objective `(ℓ_n/n + g(λ))/λ`.
pub fn radius_objective(p: &BanachParams, lambda: f64) -> f64 {
    (ell_n(p) / p.n + g_of_lambda(p, lambda)) / lambda
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizedRadius {
    pub epsilon: f64,
    pub lambda: f64,
    pub iterations: usize,
}

/// `ε*_n = inf_{λ>0} (ℓ_n/n + g(λ))/λ`.
pub fn radius_optimized(p: &BanachParams, tol: f64) -> Result<OptimizedRadius> {
    let ell = ell_n(p);
    if p.beta_bar() <= 0.0 || !(ell > 0.0) {
        return Ok(OptimizedRadius { epsilon: 0.0, lambda: f64::INFINITY, iterations: 0 });
    }
    let f = |u: f64| radius_objective(p, u.exp());
    let guess = (2.0 * ell / (p.n * (p.big_d * p.d).powi(2) * p.beta_bar())).sqrt().ln();
    let mut lo = guess - 2.0;
    let mut hi = guess + 2.0;
    let mid = f(guess);
    let mut expansions = 0;
    while f(lo) <= mid {
        lo -= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Solver { msg: "radius: cannot bracket from below".into(), best: Some(guess.exp()) });
        }
    }
    while f(hi) <= mid {
        hi += 2.0;
        expansions += 1;
        if expansions > 400 {
            return Err(Error::Solver { msg: "radius: cannot bracket from above".into(), best: Some(guess.exp()) });
        }
    }
    let r = golden_min(f, lo, hi, tol.max(1e-12), 500);
    Ok(OptimizedRadius { epsilon: r.fx, lambda: r.x.exp(), iterations: r.iterations + expansions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosedForm {
    /// Constant 3.
    C3,
    /// Reduced constant 2.4.
    C24,
}

impl FromStr for ClosedForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c3" => Ok(ClosedForm::C3),
            "c24" => Ok(ClosedForm::C24),
            _ => Err(invalid(format!("unknown closed form {s:?}"))),
        }
    }
}

/// Closed-form radius and whether its sample-size condition holds.
pub fn radius_closed_form(p: &BanachParams, mode: ClosedForm) -> (f64, bool) {
    let bb = p.beta_bar();
    if bb <= 0.0 {
        return (0.0, true);
    }
    let ell = ell_n(p);
    let scale = p.d * p.big_d;
    match mode {
        ClosedForm::C3 => {
            let eps = scale * (3.0 * bb * ell / p.n).max(0.0).sqrt();
            let need = 4.0 * p.beta.max(bb).powi(2) * ell / (3.0 * p.big_d * p.big_d * bb);
            (eps, p.n >= need)
        }
        ClosedForm::C24 => {
            let eps = scale * (2.4 * bb * ell / p.n).max(0.0).sqrt();
            let need = 5.0 * ell / (0.81 * bb * (p.big_d * p.d).powi(2));
            (eps, p.n >= need)
        }
    }
}

/// `dD √(8(β̄ + 1/N) ln(2/α) / n)`.
pub fn radius_schneider(p: &BanachParams) -> f64 {
    p.d * p.big_d * (8.0 * (p.beta_bar() + 1.0 / p.big_n) * (2.0 / p.alpha).ln() / p.n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Matern32 { lengthscale: f64 },
    Rbf { lengthscale: f64 },
}

impl Kernel {
    pub fn lengthscale(&self) -> f64 {
        match *self {
            Kernel::Matern32 { lengthscale } | Kernel::Rbf { lengthscale } => lengthscale,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match *self {
            Kernel::Matern32 { lengthscale } => {
                let u = 3f64.sqrt() * r2.sqrt() / lengthscale;
                (1.0 + u) * (-u).exp()
            }
            Kernel::Rbf { lengthscale } => (-0.5 * r2 / (lengthscale * lengthscale)).exp(),
        }
    }

    /// Norm bound `d` and smoothness `D` of the feature space (unit signal variance).
    pub fn banach_constants(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramSummary {
    pub s_nn_full: f64,
    pub s_nn_sample: f64,
    pub s_cross: f64,
}

impl GramSummary {
    /// Written as `((N−n)/N)‖μ_n − μ_rest‖` so that a census gives exactly zero.
    pub fn deviation(&self, n: usize, big_n: usize) -> f64 {
        if n >= big_n {
            return 0.0;
        }
        let rest = (big_n - n) as f64;
        let (n, big_n) = (n as f64, big_n as f64);
        let s_sr = self.s_cross - self.s_nn_sample;
        let s_rr = self.s_nn_full - 2.0 * self.s_cross + self.s_nn_sample;
        let v = self.s_nn_sample / (n * n) - 2.0 * s_sr / (n * rest) + s_rr / (rest * rest);
        rest / big_n * v.max(0.0).sqrt()
    }
}

/// Dense gram matrix of a dataset with cached row sums.
#[derive(Debug, Clone)]
pub struct KernelGram {
    n: usize,
    gram: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
}

impl KernelGram {
    pub fn new(vectors: &[Vec<f64>], kernel: &Kernel) -> Result<Self> {
        if vectors.is_empty() {
            return Err(invalid("empty dataset"));
        }
        if !(kernel.lengthscale() > 0.0) {
            return Err(invalid("lengthscale must be positive"));
        }
        let dim = vectors[0].len();
        if let Some(i) = vectors.iter().position(|v| v.len() != dim) {
            return Err(invalid(format!("row {i} has dimension {} instead of {dim}", vectors[i].len())));
        }
        let n = vectors.len();
        let gram: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| kernel.eval(&vectors[i], &vectors[j]))
            .collect();
        let row_sums: Vec<f64> = gram.chunks(n).map(|r| r.iter().sum()).collect();
        let total = row_sums.iter().sum();
        Ok(Self { n, gram, row_sums, total })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn summary(&self, sample: &[usize]) -> Result<GramSummary> {
        if sample.is_empty() {
            return Err(invalid("empty sample"));
        }
        if let Some(&i) = sample.iter().find(|&&i| i >= self.n) {
            return Err(invalid(format!("sample index {i} out of range")));
        }
        let mut s_nn = 0.0;
        for &i in sample {
            let row = &self.gram[i * self.n..(i + 1) * self.n];
            s_nn += sample.iter().map(|&j| row[j]).sum::<f64>();
        }
        let s_cross = sample.iter().map(|&i| self.row_sums[i]).sum();
        Ok(GramSummary { s_nn_full: self.total, s_nn_sample: s_nn, s_cross })
    }

    /// `‖μ_n − μ_N‖` in the kernel's feature space.
    pub fn deviation(&self, sample: &[usize]) -> Result<f64> {
        Ok(self.summary(sample)?.deviation(sample.len(), self.n))
    }
}

/// Kernel mean embedding deviation of a subsample from the full dataset.
pub fn mmd_deviation(vectors: &[Vec<f64>], sample: &[usize], kernel: &Kernel) -> Result<f64> {
    KernelGram::new(vectors, kernel)?.deviation(sample)
}
