//! The without-replacement rate function `I(P, β, Q)` and a primal solver for `J±`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::population::DiscreteDistribution;

pub const FEAS_TOL: f64 = 1e-12;

/// A nonnegative rate value, possibly `+∞` (infeasible).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RateValue(pub f64);

impl RateValue {
    pub const INFINITE: RateValue = RateValue(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn feasible(self) -> bool {
        self.0.is_finite()
    }
}

impl fmt::Display for RateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.feasible() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

impl Serialize for RateValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.feasible() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for RateValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(RateValue(v)),
            Repr::Str(s) if s == "inf" => Ok(RateValue::INFINITE),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad rate value {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" => Ok(Side::Plus),
            "minus" | "-" => Ok(Side::Minus),
            _ => Err(invalid(format!("side must be plus or minus, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateQuery {
    pub p: DiscreteDistribution,
    pub beta: f64,
    pub m: f64,
    pub side: Side,
}

fn xlnx_over(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("beta must lie in (0,1), got {beta}")))
    }
}

/// Residual `R = (Q - βP)/β̄` with small negatives clamped; `None` if infeasible.
fn residual(p: &[f64], q: &[f64], beta: f64) -> Option<Vec<f64>> {
    let bb = 1.0 - beta;
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let d = qi - beta * pi;
            if d < -FEAS_TOL {
                None
            } else {
                Some(d.max(0.0) / bb)
            }
        })
        .collect()
}

/// `I` on raw weight vectors sharing one alphabet. Returns `+∞` when infeasible.
pub fn rate_i_weights(p: &[f64], q: &[f64], beta: f64) -> f64 {
    let Some(r) = residual(p, q, beta) else {
        return f64::INFINITY;
    };
    let bb = 1.0 - beta;
    let mut kl_pq = 0.0;
    let mut kl_rq = 0.0;
    for i in 0..p.len() {
        kl_pq += xlnx_over(p[i], q[i]);
        kl_rq += xlnx_over(r[i], q[i]);
    }
    (kl_pq + bb / beta * kl_rq).max(0.0)
}

fn entropy(w: impl IntoIterator<Item = f64>) -> f64 {
    -w.into_iter().map(|x| if x > 0.0 { x * x.ln() } else { 0.0 }).sum::<f64>()
}

pub fn rate_i_entropy_weights(p: &[f64], q: &[f64], beta: f64) -> f64 {
    let Some(r) = residual(p, q, beta) else {
        return f64::INFINITY;
    };
    let bb = 1.0 - beta;
    let h = entropy(q.iter().copied()) - beta * entropy(p.iter().copied()) - bb * entropy(r);
    (h / beta).max(0.0)
}

fn check_pair(p: &DiscreteDistribution, q: &DiscreteDistribution, beta: f64) -> Result<()> {
    check_beta(beta)?;
    if !p.same_alphabet(q) {
        return Err(invalid("P and Q must share one alphabet"));
    }
    Ok(())
}

/// `d_KL(P‖Q) + (β̄/β) d_KL((Q − βP)/β̄ ‖ Q)`.
pub fn rate_i(p: &DiscreteDistribution, beta: f64, q: &DiscreteDistribution) -> Result<RateValue> {
    check_pair(p, q, beta)?;
    Ok(RateValue(rate_i_weights(p.weights(), q.weights(), beta)))
}

/// `(1/β)(H(Q) − βH(P) − β̄H(R))`.
pub fn rate_i_entropy_form(p: &DiscreteDistribution, beta: f64, q: &DiscreteDistribution) -> Result<RateValue> {
    check_pair(p, q, beta)?;
    Ok(RateValue(rate_i_entropy_weights(p.weights(), q.weights(), beta)))
}

/// Quadratic lower bound `(2/β̄)(m − μ_P)²` on the side of `m` that `side` penalizes.
pub fn pinsker_lower(p_mean: f64, beta_bar: f64, m: f64, side: Side) -> f64 {
    let d = match side {
        Side::Plus => m - p_mean,
        Side::Minus => p_mean - m,
    };
    if d <= 0.0 {
        0.0
    } else {
        2.0 * d * d / beta_bar
    }
}

/// `J_+` at the largest reachable mean `βμ + β̄`, where `Q = βP + β̄δ_1`.
pub fn j_at_max_mean(beta: f64) -> f64 {
    let bb = 1.0 - beta;
    (1.0 / beta).ln() + bb / beta * (1.0 / bb).ln()
}

pub const ORACLE_MAX_K: usize = 4;

/// Primal solver for `J_±` on `Σ ∪ {1}`, usable as an independent check of the dual.
///
/// Writes `Q = βP + β̄R` with `R` a distribution on `Σ ∪ {1}` and minimizes
/// the separable convex function `R ↦ I(P, β, Q)` under the two linear
/// constraints `Σ R = 1`, `Σ sR = (m − βμ)/β̄` with a log-barrier Newton method.
/// A simplex grid of resolution `grid_resolution` gives an upper bound.
#[derive(Debug, Clone)]
pub struct PrimalOracle {
    side: Side,
    beta: f64,
    mu: f64,
    alphabet: Vec<f64>,
    p: Vec<f64>,
    grid_means: Vec<f64>,
    grid_suffix_min: Vec<f64>,
}

impl PrimalOracle {
    pub fn new(p: &DiscreteDistribution, beta: f64, side: Side, grid_resolution: usize) -> Result<Self> {
        check_beta(beta)?;
        if p.k() > ORACLE_MAX_K {
            return Err(Error::Unsupported(format!("primal oracle supports k <= {ORACLE_MAX_K}, got {}", p.k())));
        }
        if grid_resolution < 50 {
            return Err(invalid("grid resolution must be at least 50"));
        }
        let pp = match side {
            Side::Plus => p.clone(),
            Side::Minus => p.reflect(),
        };
        let (alphabet, weights) = pp.extended_to_one(0.0);
        let mut oracle = Self {
            side,
            beta,
            mu: pp.mean(),
            alphabet,
            p: weights,
            grid_means: Vec::new(),
            grid_suffix_min: Vec::new(),
        };
        oracle.build_grid(grid_resolution);
        Ok(oracle)
    }

    fn build_grid(&mut self, g: usize) {
        let kk = self.alphabet.len();
        let bb = 1.0 - self.beta;
        let mut pts: Vec<(f64, f64)> = Vec::new();
        let mut counts = vec![0usize; kk];
        let mut q = vec![0.0; kk];
        fn rec(i: usize, left: usize, g: usize, counts: &mut [usize], f: &mut dyn FnMut(&[usize])) {
            if i + 1 == counts.len() {
                counts[i] = left;
                f(counts);
                return;
            }
            for c in 0..=left {
                counts[i] = c;
                rec(i + 1, left - c, g, counts, f);
            }
        }
        let (alphabet, p, beta, mu) = (&self.alphabet, &self.p, self.beta, self.mu);
        rec(0, g, g, &mut counts, &mut |c: &[usize]| {
            let mut mean_r = 0.0;
            for j in 0..kk {
                let r = c[j] as f64 / g as f64;
                q[j] = beta * p[j] + bb * r;
                mean_r += alphabet[j] * r;
            }
            pts.push((beta * mu + bb * mean_r, rate_i_weights(p, &q, beta)));
        });
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut suffix = vec![f64::INFINITY; pts.len()];
        let mut best = f64::INFINITY;
        for i in (0..pts.len()).rev() {
            best = best.min(pts[i].1);
            suffix[i] = best;
        }
        self.grid_means = pts.iter().map(|x| x.0).collect();
        self.grid_suffix_min = suffix;
    }

    /// Smallest grid value among points with mean at least `m` (plus-side frame).
    pub fn grid_upper_bound(&self, m_plus: f64) -> f64 {
        let i = self.grid_means.partition_point(|x| *x < m_plus - 1e-15);
        self.grid_suffix_min.get(i).copied().unwrap_or(f64::INFINITY)
    }

    pub fn value(&self, m: f64) -> RateValue {
        let m = match self.side {
            Side::Plus => m,
            Side::Minus => 1.0 - m,
        };
        let beta = self.beta;
        let bb = 1.0 - beta;
        let m_max = beta * self.mu + bb;
        if m <= self.mu {
            return RateValue(0.0);
        }
        if m > m_max + 1e-15 {
            return RateValue::INFINITE;
        }
        if m >= m_max - 1e-13 {
            return RateValue(j_at_max_mean(beta));
        }
        let target = (m - beta * self.mu) / bb;
        let newton = self.barrier_newton(target).unwrap_or(f64::INFINITY);
        RateValue(newton.min(self.grid_upper_bound(m)))
    }

    fn objective(&self, r: &[f64]) -> f64 {
        let q: Vec<f64> = self.p.iter().zip(r).map(|(p, r)| self.beta * p + (1.0 - self.beta) * r).collect();
        rate_i_weights(&self.p, &q, self.beta)
    }

    fn barrier_newton(&self, target: f64) -> Option<f64> {
        let kk = self.alphabet.len();
        let s = &self.alphabet;
        let beta = self.beta;
        let bb = 1.0 - beta;
        let ubar = s.iter().sum::<f64>() / kk as f64;
        let mut r = vec![0.0; kk];
        if target >= ubar {
            let theta = (1.0 - target) / (1.0 - ubar);
            for j in 0..kk {
                r[j] = theta / kk as f64;
            }
            r[kk - 1] += 1.0 - theta;
        } else {
            let theta = (target - s[0]) / (ubar - s[0]);
            for j in 0..kk {
                r[j] = theta / kk as f64;
            }
            r[0] += 1.0 - theta;
        }
        if r.iter().any(|x| !(*x > 0.0)) {
            return None;
        }
        let barrier = |r: &[f64], t: f64| -> f64 {
            if r.iter().any(|x| *x <= 0.0) {
                return f64::INFINITY;
            }
            t * self.objective(r) - r.iter().map(|x| x.ln()).sum::<f64>()
        };
        let mut t = 1.0;
        let mut g = vec![0.0; kk];
        let mut h = vec![0.0; kk];
        let mut dx = vec![0.0; kk];
        while t <= 1e11 {
            for _ in 0..200 {
                for j in 0..kk {
                    let q = beta * self.p[j] + bb * r[j];
                    let ratio = bb * r[j] / q;
                    let gi = -self.p[j] * bb / q + bb / beta * ((r[j] / q).ln() + 1.0 - ratio);
                    let hi = self.p[j] * bb * bb / (q * q) + bb / beta / r[j] * (1.0 - ratio) * (1.0 - ratio);
                    g[j] = t * gi - 1.0 / r[j];
                    h[j] = t * hi + 1.0 / (r[j] * r[j]);
                }
                let res1 = r.iter().sum::<f64>() - 1.0;
                let res2 = r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() - target;
                // Weighted-centred Schur complement; the plain 2x2 determinant cancels badly
                // when one weight dominates.
                let m11: f64 = h.iter().map(|x| 1.0 / x).sum();
                let sbar = h.iter().zip(s).map(|(x, sj)| sj / x).sum::<f64>() / m11;
                let mut c22 = 0.0;
                let mut a1 = 0.0;
                let mut ac = 0.0;
                for j in 0..kk {
                    let w = 1.0 / h[j];
                    let d = s[j] - sbar;
                    c22 += w * d * d;
                    a1 += w * g[j];
                    ac += w * d * g[j];
                }
                if !(c22 > 0.0) {
                    return None;
                }
                let nu2 = (res2 - sbar * res1 - ac) / c22;
                let nu1 = (res1 - a1) / m11 - nu2 * sbar;
                let mut dec = 0.0;
                for j in 0..kk {
                    dx[j] = -(g[j] + nu1 + nu2 * s[j]) / h[j];
                    dec += dx[j] * dx[j] * h[j];
                }
                if dec < 1e-14 {
                    break;
                }
                let mut step = 1.0;
                for j in 0..kk {
                    if dx[j] < 0.0 {
                        step = f64::min(step, 0.99 * r[j] / -dx[j]);
                    }
                }
                let f0 = barrier(&r, t);
                let slope: f64 = g.iter().zip(&dx).map(|(a, b)| a * b).sum();
                let mut trial = vec![0.0; kk];
                let mut accepted = false;
                for _ in 0..60 {
                    for j in 0..kk {
                        trial[j] = r[j] + step * dx[j];
                    }
                    let f1 = barrier(&trial, t);
                    if f1 <= f0 + 0.25 * step * slope.min(0.0) || (f1 - f0).abs() <= 1e-13 * f0.abs().max(1.0) {
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
                r.copy_from_slice(&trial);
                restore_constraints(&mut r, s, target);
            }
            t *= 10.0;
        }
        let res1 = r.iter().sum::<f64>() - 1.0;
        let res2 = r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() - target;
        if res1.abs() > 1e-9 || res2.abs() > 1e-9 {
            return None;
        }
        Some(self.objective(&r))
    }
}

/// Pull `r` back onto `Σr = 1`, `Σsr = target` with a correction scaled by `r²`.
fn restore_constraints(r: &mut [f64], s: &[f64], target: f64) {
    let res1 = r.iter().sum::<f64>() - 1.0;
    let res2 = r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() - target;
    let m11: f64 = r.iter().map(|x| x * x).sum();
    let sbar = r.iter().zip(s).map(|(x, sj)| x * x * sj).sum::<f64>() / m11;
    let c22: f64 = r.iter().zip(s).map(|(x, sj)| x * x * (sj - sbar) * (sj - sbar)).sum();
    if !(c22 > 0.0) {
        return;
    }
    let nu2 = (res2 - sbar * res1) / c22;
    let nu1 = res1 / m11 - nu2 * sbar;
    let fixed: Vec<f64> = r.iter().zip(s).map(|(x, sj)| x - x * x * (nu1 + nu2 * sj)).collect();
    if fixed.iter().all(|x| *x > 0.0) {
        r.copy_from_slice(&fixed);
    }
}

/// Primal value of `J_±(P, β, m)` (small alphabets only).
pub fn j_primal_oracle(q: &RateQuery, grid_resolution: usize) -> Result<RateValue> {
    if !(0.0..=1.0).contains(&q.m) {
        return Err(invalid("m must lie in [0,1]"));
    }
    Ok(PrimalOracle::new(&q.p, q.beta, q.side, grid_resolution)?.value(q.m))
}
