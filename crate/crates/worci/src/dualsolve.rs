//! Concave dual of `J_+` and its maximization.
//!
//! For `λ ≥ 0` and `ρ + λ ≤ (1/β) ln(1/β̄)` the dual objective is
//! `E_P[ln((1 − β̄e^{β(λX+ρ)})/β)] + λ(m − βμ) + ρβ̄`. Internally the
//! solver works with the slack `δ = (1/β) ln(1/β̄) − λ − ρ ≥ 0`, in which
//! `β̄e^{β(λs+ρ)} = e^{−β(λ(1−s)+δ)}` and nothing cancels for large `λ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::population::DiscreteDistribution;
use crate::ratefn::{j_at_max_mean, rate_i_weights, RateValue, Side};
use crate::roots::brent;

pub const ENDPOINT_NUDGE: f64 = 1e-9;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda: f64,
    pub rho: f64,
}

/// Largest `ρ` allowed for a given `λ`.
pub fn rho_max(beta: f64, lambda: f64) -> f64 {
    (1.0 / (1.0 - beta)).ln() / beta - lambda
}

impl DualPoint {
    pub fn is_feasible(&self, beta: f64) -> bool {
        self.lambda >= 0.0 && self.rho <= rho_max(beta, self.lambda)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualIterations {
    pub outer: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolution {
    pub point: DualPoint,
    pub value: RateValue,
    /// Reconstructed primal optimizer on `Σ ∪ {1}` (`{0} ∪ Σ` for the minus side).
    pub primal_q: Option<DiscreteDistribution>,
    pub gap_certificate: f64,
    pub iterations: DualIterations,
}

/// Drop zero-weight points and move atoms at 0 or 1 inside by `ENDPOINT_NUDGE`.
pub fn prepare(p: &DiscreteDistribution) -> DiscreteDistribution {
    let mut a: Vec<f64> = Vec::with_capacity(p.k());
    let mut w: Vec<f64> = Vec::with_capacity(p.k());
    for (&s, &x) in p.alphabet().iter().zip(p.weights()) {
        if x <= 0.0 {
            continue;
        }
        let s = s.clamp(ENDPOINT_NUDGE, 1.0 - ENDPOINT_NUDGE);
        match a.last() {
            Some(&last) if s <= last => *w.last_mut().unwrap() += x,
            _ => {
                a.push(s);
                w.push(x);
            }
        }
    }
    DiscreteDistribution::normalized(a, w).expect("nonempty distribution")
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("beta must lie in (0,1), got {beta}")))
    }
}

/// Dual objective at `pt`.
pub fn dual_objective(p: &DiscreteDistribution, beta: f64, m: f64, pt: DualPoint) -> Result<f64> {
    check_beta(beta)?;
    if pt.lambda < 0.0 {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {}", pt.lambda)));
    }
    let bb = 1.0 - beta;
    let mut acc = 0.0;
    for (&s, &w) in p.alphabet().iter().zip(p.weights()) {
        let v = beta * (pt.lambda * s + pt.rho) + bb.ln();
        let den = -v.exp_m1();
        if !(den >= 1e-12) {
            return Err(Error::Domain(format!("1 - β̄e^(β(λs+ρ)) = {den} at s = {s}")));
        }
        if w > 0.0 {
            acc += w * (den / beta).ln();
        }
    }
    Ok(acc + pt.lambda * (m - beta * p.mean()) + pt.rho * bb)
}

/// `Q*(s) = βP(s)/(1 − β̄e^{β(λs+ρ)})` with the leftover mass placed at 1.
pub fn kkt_reconstruct(p: &DiscreteDistribution, beta: f64, pt: DualPoint) -> Result<DiscreteDistribution> {
    check_beta(beta)?;
    let bb = 1.0 - beta;
    let mut q = Vec::with_capacity(p.k());
    for (&s, &w) in p.alphabet().iter().zip(p.weights()) {
        let v = beta * (pt.lambda * s + pt.rho) + bb.ln();
        let den = -v.exp_m1();
        if !(den >= 1e-12) {
            return Err(Error::Domain(format!("1 - β̄e^(β(λs+ρ)) = {den} at s = {s}")));
        }
        q.push(beta * w / den);
    }
    let q1 = 1.0 - q.iter().sum::<f64>();
    if q1 < -1e-9 {
        return Err(Error::Certificate(format!("negative residual mass {q1} at 1")));
    }
    let tmp = DiscreteDistribution::new(p.alphabet().to_vec(), p.weights().to_vec())?;
    let (alphabet, _) = tmp.extended_to_one(0.0);
    let mut weights = q;
    if alphabet.len() > p.k() {
        weights.push(q1.max(0.0));
    } else {
        *weights.last_mut().unwrap() += q1.max(0.0);
    }
    DiscreteDistribution::normalized(alphabet, weights)
}

struct Problem {
    s: Vec<f64>,
    w: Vec<f64>,
    beta: f64,
    mu: f64,
    m: f64,
}

impl Problem {
    fn exponent(&self, j: usize, lam: f64, delta: f64) -> f64 {
        -self.beta * (lam * (1.0 - self.s[j]) + delta)
    }

    fn q(&self, lam: f64, delta: f64) -> Vec<f64> {
        (0..self.s.len()).map(|j| self.beta * self.w[j] / -self.exponent(j, lam, delta).exp_m1()).collect()
    }

    /// Mass left for the point 1; the ρ-derivative of the objective.
    fn residual(&self, lam: f64, delta: f64) -> f64 {
        1.0 - self.q(lam, delta).iter().sum::<f64>()
    }

    fn objective(&self, lam: f64, delta: f64) -> f64 {
        let beta = self.beta;
        let bb = 1.0 - beta;
        let mut acc = 0.0;
        for j in 0..self.s.len() {
            acc += self.w[j] * (-self.exponent(j, lam, delta).exp_m1() / beta).ln();
        }
        let m_max = beta * self.mu + bb;
        acc + lam * (self.m - m_max) + bb / beta * (1.0 / bb).ln() - bb * delta
    }

    /// Optimal slack for fixed `λ > 0`.
    fn inner(&self, lam: f64, iters: &mut usize) -> Result<f64> {
        if self.residual(lam, 0.0) >= 0.0 {
            return Ok(0.0);
        }
        let mut hi = 1.0 / self.beta;
        while self.residual(lam, hi) < 0.0 {
            hi *= 2.0;
            *iters += 1;
            if hi > 1e300 {
                return Err(Error::Solver { msg: "cannot bracket the inner root".into(), best: Some(lam) });
            }
        }
        let r = brent(|d| self.residual(lam, d), 0.0, hi, 1e-15 * hi.max(1.0), MAX_ITER)?;
        *iters += r.iterations;
        Ok(r.x)
    }

    /// Envelope derivative `m − mean(Q*(λ))`.
    fn slope(&self, lam: f64, iters: &mut usize) -> Result<f64> {
        let delta = self.inner(lam, iters)?;
        let q = self.q(lam, delta);
        let gap_to_one: f64 = q.iter().zip(&self.s).map(|(q, s)| q * (1.0 - s)).sum();
        Ok(self.m - 1.0 + gap_to_one)
    }
}

/// `J_±(P, β, m)` by maximizing the dual; the reconstructed primal point certifies the value.
pub fn j_dual(p: &DiscreteDistribution, beta: f64, m: f64, side: Side, tol: f64) -> Result<DualSolution> {
    match side {
        Side::Plus => j_dual_plus(p, beta, m, tol),
        Side::Minus => {
            let mut sol = j_dual_plus(&p.reflect(), beta, 1.0 - m, tol)?;
            sol.primal_q = sol.primal_q.map(|q| q.reflect());
            Ok(sol)
        }
    }
}

fn j_dual_plus(p: &DiscreteDistribution, beta: f64, m: f64, tol: f64) -> Result<DualSolution> {
    check_beta(beta)?;
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    let pp = prepare(p);
    let bb = 1.0 - beta;
    let prob = Problem { s: pp.alphabet().to_vec(), w: pp.weights().to_vec(), beta, mu: pp.mean(), m };
    let m_max = beta * prob.mu + bb;
    if m <= prob.mu {
        let (a, w) = pp.extended_to_one(0.0);
        return Ok(DualSolution {
            point: DualPoint { lambda: 0.0, rho: 0.0 },
            value: RateValue(0.0),
            primal_q: Some(DiscreteDistribution::normalized(a, w)?),
            gap_certificate: 0.0,
            iterations: DualIterations::default(),
        });
    }
    if m > m_max {
        return Ok(DualSolution {
            point: DualPoint { lambda: f64::INFINITY, rho: f64::NEG_INFINITY },
            value: RateValue::INFINITE,
            primal_q: None,
            gap_certificate: 0.0,
            iterations: DualIterations::default(),
        });
    }
    if m == m_max {
        let (a, w) = pp.extended_to_one(bb);
        let q: Vec<f64> = w.iter().enumerate().map(|(j, &x)| if j + 1 < w.len() { beta * x } else { x }).collect();
        return Ok(DualSolution {
            point: DualPoint { lambda: f64::INFINITY, rho: f64::NEG_INFINITY },
            value: RateValue(j_at_max_mean(beta)),
            primal_q: Some(DiscreteDistribution::normalized(a, q)?),
            gap_certificate: 0.0,
            iterations: DualIterations::default(),
        });
    }

    let mut it = DualIterations::default();
    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        let g = prob.slope(hi, &mut it.inner)?;
        it.outer += 1;
        if g <= 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Solver { msg: "cannot bracket the optimal lambda".into(), best: Some(lo) });
        }
    }
    let xtol = (tol * 1e-3).min(1e-12) * hi.max(1.0);
    let mut inner_iters = 0;
    let root = {
        let slope = |lam: f64| -> f64 {
            if lam <= 0.0 {
                return m - prob.mu;
            }
            prob.slope(lam, &mut inner_iters).unwrap_or(f64::NAN)
        };
        brent(slope, lo, hi, xtol, MAX_ITER)?
    };
    it.inner += inner_iters;
    it.outer += root.iterations;
    let lam = root.x;
    let mut dummy = 0;
    let delta = prob.inner(lam, &mut dummy)?;
    it.inner += dummy;
    let value = prob.objective(lam, delta);
    let q = prob.q(lam, delta);
    let q1 = 1.0 - q.iter().sum::<f64>();
    if q1 < -1e-9 {
        return Err(Error::Certificate(format!("negative residual mass {q1} at 1")));
    }
    let (alphabet, mut p_ext) = pp.extended_to_one(0.0);
    let mut q_ext = q;
    if alphabet.len() > pp.k() {
        q_ext.push(q1.max(0.0));
    } else {
        *q_ext.last_mut().unwrap() += q1.max(0.0);
        p_ext = pp.weights().to_vec();
    }
    let primal = rate_i_weights(&p_ext, &q_ext, beta);
    Ok(DualSolution {
        point: DualPoint { lambda: lam, rho: rho_max(beta, lam) - delta },
        value: RateValue(value.max(0.0)),
        primal_q: Some(DiscreteDistribution::normalized(alphabet, q_ext)?),
        gap_certificate: (primal - value).abs(),
        iterations: it,
    })
}

/// Value of `J_±` only.
pub fn j_value(p: &DiscreteDistribution, beta: f64, m: f64, side: Side, tol: f64) -> Result<f64> {
    Ok(j_dual(p, beta, m, side, tol)?.value.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratefn::rate_i;

    fn dist(a: &[f64], w: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(a.to_vec(), w.to_vec()).unwrap()
    }

    #[test]
    fn objective_zero_at_origin() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let v = dual_objective(&p, 0.35, 0.7, DualPoint { lambda: 0.0, rho: 0.0 }).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn objective_rejects_boundary() {
        let p = dist(&[0.1, 1.0], &[0.5, 0.5]);
        let pt = DualPoint { lambda: 1.0, rho: rho_max(0.35, 1.0) };
        assert!(matches!(dual_objective(&p, 0.35, 0.7, pt), Err(Error::Domain(_))));
    }

    #[test]
    fn kkt_at_origin_is_p() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let q = kkt_reconstruct(&p, 0.4, DualPoint { lambda: 0.0, rho: 0.0 }).unwrap();
        assert_eq!(q.k(), 4);
        for j in 0..3 {
            assert!((q.weights()[j] - p.weights()[j]).abs() < 1e-15);
        }
        assert!(q.weights()[3].abs() < 1e-15);
    }

    #[test]
    fn below_mean_is_zero() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let s = j_dual(&p, 0.35, p.mean() - 0.1, Side::Plus, 1e-9).unwrap();
        assert_eq!(s.value.value(), 0.0);
        assert_eq!(s.point.lambda, 0.0);
    }

    #[test]
    fn unreachable_mean_is_infinite() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let s = j_dual(&p, 0.35, 0.35 * p.mean() + 0.65 + 1e-6, Side::Plus, 1e-9).unwrap();
        assert!(!s.value.feasible());
    }

    #[test]
    fn certificate_at_interior_optimum() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let m = p.mean() + 0.1;
        let s = j_dual(&p, 0.35, m, Side::Plus, 1e-9).unwrap();
        let q = s.primal_q.unwrap();
        assert!((q.mean() - m).abs() < 1e-6);
        assert!(s.gap_certificate < 1e-8);
        let (a, w) = p.extended_to_one(0.0);
        let pe = DiscreteDistribution::new(a, w).unwrap();
        assert!((rate_i(&pe, 0.35, &q).unwrap().value() - s.value.value()).abs() < 1e-6);
    }

    #[test]
    fn minus_side_is_reflection() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let a = j_dual(&p, 0.3, 0.3, Side::Minus, 1e-9).unwrap().value.value();
        let b = j_dual(&p.reflect(), 0.3, 0.7, Side::Plus, 1e-9).unwrap().value.value();
        assert_eq!(a, b);
    }

    #[test]
    fn max_mean_matches_closed_form() {
        let p = dist(&[0.1, 0.5, 0.9], &[0.2, 0.5, 0.3]);
        let pp = prepare(&p);
        let m_max = 0.35 * pp.mean() + 0.65;
        let near = j_dual(&p, 0.35, m_max - 1e-7, Side::Plus, 1e-9).unwrap().value.value();
        assert!((near - j_at_max_mean(0.35)).abs() < 1e-4, "{near}");
    }
}
