//! Special functions backed by statrs.

use statrs::distribution::{Beta, ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Log of the binomial probability P(Bin(big_n, beta) = n).
pub fn ln_binomial_pmf(big_n: u64, n: u64, beta: f64) -> f64 {
    if n > big_n {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    let rest = (big_n - n) as f64;
    let mut out = ln_binomial(big_n, n);
    if n > 0 {
        out += nf * beta.ln();
    }
    if big_n > n {
        out += rest * (1.0 - beta).ln();
    }
    out
}

/// Inverse CDF of Beta(a, b).
pub fn beta_quantile(a: f64, b: f64, u: f64) -> f64 {
    Beta::new(a, b).expect("beta shape parameters").inverse_cdf(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantile_975() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
    }

    #[test]
    fn binomial_pmf_small_case() {
        // P(Bin(4, 1/2) = 2) = 6/16
        assert!((ln_binomial_pmf(4, 2, 0.5).exp() - 0.375).abs() < 1e-12);
    }

    #[test]
    fn beta_quantile_uniform() {
        assert!((beta_quantile(1.0, 1.0, 0.3) - 0.3).abs() < 1e-10);
    }
}
