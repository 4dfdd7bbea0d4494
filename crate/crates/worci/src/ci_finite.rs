//! Finite-alphabet interval built from the empirical inverse rate function,
//! the matching width lower bound, and the empirical/population sandwich check.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dualsolve::{j_value, prepare};
use crate::error::{invalid, Error, Result};
use crate::population::{empirical_distribution, sample_wor, trial_seed, DiscreteDistribution, Population, SamplingDesign};
use crate::ratefn::{rate_i_weights, Side};
use crate::roots::bisect_predicate;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// `[center − r, center + r] ∩ [0, 1]`.
    pub fn around(center: f64, radius: f64) -> Self {
        Self { lo: (center - radius).max(0.0), hi: (center + radius).min(1.0) }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_within(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBudget {
    pub alpha: f64,
    pub r_n: f64,
    pub a_n: f64,
    pub c_n: f64,
    pub a_sandwich: Option<f64>,
}

impl ConfidenceBudget {
    pub fn new(alpha: f64, k: usize, big_n: usize, sigma2: Option<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1], got {alpha}")));
        }
        let r_n = (k as f64 + 1.0) * (big_n as f64 + 1.0).ln();
        Ok(Self {
            alpha,
            r_n,
            a_n: (1.0 / (2.0 * alpha)).ln() - r_n,
            c_n: (2.0 / alpha).ln() + 2.0 * r_n,
            a_sandwich: sigma2.map(|s| 1.0 + 2.0 / s),
        })
    }
}

/// Endpoint where `J_±(P, β, ·)` first reaches `level`.
///
/// Plus side: `inf{m : J_+(m) ≥ level}`. Since `J_+ = +∞` beyond the largest
/// reachable mean `βμ + β̄`, levels above the finite range return that mean.
pub fn inverse_rate(p: &DiscreteDistribution, beta: f64, level: f64, side: Side, tol: f64) -> Result<f64> {
    if !(level >= 0.0) {
        return Err(invalid("level must be nonnegative"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("beta must lie in (0,1), got {beta}")));
    }
    let frame = match side {
        Side::Plus => p.clone(),
        Side::Minus => p.reflect(),
    };
    let mu = prepare(&frame).mean();
    let m_max = beta * mu + (1.0 - beta);
    let plus = if level == 0.0 {
        mu
    } else if j_value(&frame, beta, m_max, Side::Plus, DUAL_TOL)? < level {
        m_max
    } else {
        let mut err: Option<Error> = None;
        let (_, hi) = bisect_predicate(
            |m| match j_value(&frame, beta, m, Side::Plus, DUAL_TOL) {
                Ok(v) => v >= level,
                Err(e) => {
                    err.get_or_insert(e);
                    true
                }
            },
            mu,
            m_max,
            tol,
        );
        if let Some(e) = err {
            return Err(e);
        }
        hi
    };
    let out = match side {
        Side::Plus => plus,
        Side::Minus => 1.0 - plus,
    };
    Ok(out.clamp(0.0, 1.0))
}

/// `[ĝ_−(level), ĝ_+(level)]` for a type `p_hat`.
pub fn ci_at_level(p_hat: &DiscreteDistribution, beta: f64, level: f64, tol: f64) -> Result<Interval> {
    let hi = inverse_rate(p_hat, beta, level, Side::Plus, tol)?;
    let lo = inverse_rate(p_hat, beta, level, Side::Minus, tol)?;
    Ok(Interval::new(lo, hi))
}

/// The proposed interval `[b_−, b_+]` at level `c_N/n`.
pub fn ci_proposed(sample: &[f64], alphabet: &[f64], design: &SamplingDesign, alpha: f64, tol: f64) -> Result<Interval> {
    if sample.len() != design.n {
        return Err(invalid(format!("sample has {} values but design says n = {}", sample.len(), design.n)));
    }
    let p_hat = empirical_distribution(sample, Some(alphabet))?;
    if design.is_census() {
        let m = p_hat.mean();
        return Ok(Interval::new(m, m));
    }
    let budget = ConfidenceBudget::new(alpha, alphabet.len(), design.big_n, None)?;
    ci_at_level(&p_hat, design.beta, budget.c_n / design.n as f64, tol)
}

/// Coarse envelope `μ̂ ± √(β̄ c_N / (2n))` that always contains the proposed interval.
pub fn containment_envelope(mu_hat: f64, design: &SamplingDesign, c_n: f64) -> Interval {
    let r = (design.beta_bar * c_n / (2.0 * design.n as f64)).sqrt();
    Interval::new(mu_hat - r, mu_hat + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Rounded,
    Exhaustive,
}

impl FromStr for Projection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rounded" => Ok(Projection::Rounded),
            "exhaustive" => Ok(Projection::Exhaustive),
            _ => Err(invalid(format!("unknown projection {s:?}"))),
        }
    }
}

pub const EXHAUSTIVE_MAX_N: usize = 12;
pub const EXHAUSTIVE_MAX_K: usize = 4;

fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Type with denominator `n` close to `pop` in `I(·, β, pop)`.
pub fn project_type(pop: &DiscreteDistribution, design: &SamplingDesign, mode: Projection) -> Result<DiscreteDistribution> {
    let n = design.n;
    let k = pop.k();
    let counts = match mode {
        Projection::Rounded => largest_remainder(pop.weights(), n),
        Projection::Exhaustive => {
            if n > EXHAUSTIVE_MAX_N || k > EXHAUSTIVE_MAX_K {
                return Err(Error::Unsupported(format!(
                    "exhaustive projection needs n <= {EXHAUSTIVE_MAX_N} and k <= {EXHAUSTIVE_MAX_K}"
                )));
            }
            let mut best = (f64::INFINITY, vec![0; k]);
            let mut c = vec![0usize; k];
            fn rec(i: usize, left: usize, c: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
                if i + 1 == c.len() {
                    c[i] = left;
                    f(c);
                    return;
                }
                for x in 0..=left {
                    c[i] = x;
                    rec(i + 1, left - x, c, f);
                }
            }
            let mut t = vec![0.0; k];
            rec(0, n, &mut c, &mut |c: &[usize]| {
                for j in 0..k {
                    t[j] = c[j] as f64 / n as f64;
                }
                let v = rate_i_weights(&t, pop.weights(), design.beta);
                if v < best.0 {
                    best = (v, c.to_vec());
                }
            });
            best.1
        }
    };
    DiscreteDistribution::new(pop.alphabet().to_vec(), counts.iter().map(|&c| c as f64 / n as f64).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerBound {
    pub b_star_minus: f64,
    pub b_star_plus: f64,
    pub half_width: f64,
    pub projected: DiscreteDistribution,
}

/// Width lower bound `(b*_+ − b*_−)/2` at level `a_N/n`; degenerate when `a_N ≤ 0`.
pub fn lower_bound_width(pop: &DiscreteDistribution, design: &SamplingDesign, alpha: f64, mode: Projection) -> Result<LowerBound> {
    design.require_proper()?;
    let budget = ConfidenceBudget::new(alpha, pop.k(), design.big_n, None)?;
    let projected = project_type(pop, design, mode)?;
    if budget.a_n <= 0.0 {
        let mu = pop.mean();
        return Ok(LowerBound { b_star_minus: mu, b_star_plus: mu, half_width: 0.0, projected });
    }
    let iv = ci_at_level(&projected, design.beta, budget.a_n / design.n as f64, DEFAULT_TOL)?;
    Ok(LowerBound { b_star_minus: iv.lo, b_star_plus: iv.hi, half_width: iv.half_width(), projected })
}

/// Sample-size conditions under which the sandwich bound is claimed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SandwichThresholds {
    pub kappa: f64,
    pub n_over_c_n: f64,
    pub threshold_1: f64,
    /// Constant from the third-order Taylor remainder bound.
    pub c_beta_kappa_taylor: f64,
    /// Constant as restated next to the `n_0` definition.
    pub c_beta_kappa_restated: f64,
    pub threshold_2_taylor: f64,
    pub threshold_2_restated: f64,
    pub satisfied_1: bool,
    pub satisfied_2_taylor: bool,
    pub satisfied_2_restated: bool,
}

pub fn sandwich_thresholds(design: &SamplingDesign, c_n: f64, sigma2: f64, kappa: f64) -> SandwichThresholds {
    let (beta, bb) = (design.beta, design.beta_bar);
    let s4 = sigma2 * sigma2;
    let n_over = design.n as f64 / c_n;
    let c_taylor = ((1.0 + kappa) * (bb + kappa) + (2.0 - beta + 2.0 * kappa))
        / ((1.0 - kappa).powi(2) * (bb - kappa).powi(2));
    let c_restated = (1.0 / (bb - kappa).powi(2) + 1.0 / (1.0 - kappa).powi(2)) / beta;
    let t1 = 2.0 * bb / (kappa * kappa * s4);
    let t2 = |c: f64| 2.0 * bb.powi(3) * c * c / (9.0 * s4);
    SandwichThresholds {
        kappa,
        n_over_c_n: n_over,
        threshold_1: t1,
        c_beta_kappa_taylor: c_taylor,
        c_beta_kappa_restated: c_restated,
        threshold_2_taylor: t2(c_taylor),
        threshold_2_restated: t2(c_restated),
        satisfied_1: n_over >= t1,
        satisfied_2_taylor: n_over >= t2(c_taylor),
        satisfied_2_restated: n_over >= t2(c_restated),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub trials: usize,
    /// Trials with `ĝ_+(c_N/n) ≤ g_+(A c_N/n)` and `ĝ_−(c_N/n) ≥ g_−(A c_N/n)`, `A = 1 + 2/σ²`.
    pub holds: usize,
    pub frequency: f64,
    /// Same event with the sample variance in `A`.
    pub holds_sample_sigma: usize,
    pub frequency_sample_sigma: f64,
    pub a_sandwich: f64,
    pub g_minus: f64,
    pub g_plus: f64,
    pub budget: ConfidenceBudget,
    pub thresholds: SandwichThresholds,
}

/// Monte Carlo frequency of the empirical/population inverse-rate sandwich.
pub fn sandwich_check(
    pop: &Population,
    alphabet: &[f64],
    design: &SamplingDesign,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<SandwichReport> {
    design.require_proper()?;
    if design.big_n != pop.len() {
        return Err(invalid("design N does not match the population size"));
    }
    let pop = pop.snap(alphabet)?;
    let p_n = pop.distribution(Some(alphabet))?;
    let (_, sigma2) = pop.summary();
    if !(sigma2 > 0.0) {
        return Err(invalid("sandwich check needs positive population variance"));
    }
    let budget = ConfidenceBudget::new(alpha, alphabet.len(), design.big_n, Some(sigma2))?;
    let a = budget.a_sandwich.unwrap();
    let level = budget.c_n / design.n as f64;
    let g = ci_at_level(&p_n, design.beta, a * level, DEFAULT_TOL)?;
    let slack = 2.0 * DEFAULT_TOL;
    let flags: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(bool, bool)> {
            let sample = sample_wor(&pop, design.n, trial_seed(seed, t as u64))?;
            let p_hat = empirical_distribution(&sample, Some(alphabet))?;
            let ghat = ci_at_level(&p_hat, design.beta, level, DEFAULT_TOL)?;
            let pop_frame = ghat.hi <= g.hi + slack && ghat.lo >= g.lo - slack;
            let s2 = p_hat.variance();
            let sample_frame = if s2 > 0.0 {
                let gs = ci_at_level(&p_n, design.beta, (1.0 + 2.0 / s2) * level, DEFAULT_TOL)?;
                ghat.hi <= gs.hi + slack && ghat.lo >= gs.lo - slack
            } else {
                false
            };
            Ok((pop_frame, sample_frame))
        })
        .collect::<Result<Vec<_>>>()?;
    let holds = flags.iter().filter(|f| f.0).count();
    let holds_s = flags.iter().filter(|f| f.1).count();
    Ok(SandwichReport {
        trials,
        holds,
        frequency: holds as f64 / trials.max(1) as f64,
        holds_sample_sigma: holds_s,
        frequency_sample_sigma: holds_s as f64 / trials.max(1) as f64,
        a_sandwich: a,
        g_minus: g.lo,
        g_plus: g.hi,
        budget,
        thresholds: sandwich_thresholds(design, budget.c_n, sigma2, design.beta_bar / 2.0),
    })
}
