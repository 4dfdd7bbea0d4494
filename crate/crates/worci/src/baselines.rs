//! Classical comparison intervals: Hoeffding, Hoeffding-Serfling, Bernstein-Serfling and CLT.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::population::{compensated_sum, SamplingDesign};
use crate::special::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hoeffding,
    HoeffdingSerfling,
    HoeffdingSerflingImproved,
    BernsteinSerfling,
    Clt,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hoeffding" => Method::Hoeffding,
            "hoeffding_serfling" => Method::HoeffdingSerfling,
            "hoeffding_serfling_improved" => Method::HoeffdingSerflingImproved,
            "bernstein_serfling" => Method::BernsteinSerfling,
            "clt" => Method::Clt,
            _ => return Err(invalid(format!("unknown baseline method {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub method: Method,
    /// Known population standard deviation (Bernstein-Serfling).
    pub sigma: Option<f64>,
    pub design: SamplingDesign,
    pub alpha: f64,
}

impl BaselineSpec {
    /// Half-width; `sample` is only read by the CLT interval.
    pub fn half_width(&self, sample: &[f64]) -> Result<f64> {
        let d = &self.design;
        Ok(match self.method {
            Method::Hoeffding => width_hoeffding(d, self.alpha),
            Method::HoeffdingSerfling => width_hoeffding_serfling(d, self.alpha, false),
            Method::HoeffdingSerflingImproved => width_hoeffding_serfling(d, self.alpha, true),
            Method::BernsteinSerfling => {
                let sigma = self.sigma.ok_or_else(|| invalid("bernstein_serfling needs sigma"))?;
                if !(sigma >= 0.0) {
                    return Err(invalid("sigma must be nonnegative"));
                }
                width_bernstein_serfling(d, self.alpha, sigma)
            }
            Method::Clt => width_clt(sample, d, self.alpha)?,
        })
    }
}

pub fn width_hoeffding(design: &SamplingDesign, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * design.n as f64)).sqrt()
}

pub fn width_hoeffding_serfling(design: &SamplingDesign, alpha: f64, improved: bool) -> f64 {
    let (n, big_n) = (design.n as f64, design.big_n as f64);
    let rho = if improved { 1.0 - n / big_n } else { 1.0 - (n - 1.0) / big_n };
    ((2.0 / alpha).ln() * rho / (2.0 * n)).sqrt()
}

pub fn width_bernstein_serfling(design: &SamplingDesign, alpha: f64, sigma: f64) -> f64 {
    let (n, big_n) = (design.n as f64, design.big_n as f64);
    let l = (2.0 / alpha).ln();
    let f = 1.0 - n / big_n;
    let first = sigma * (2.0 * f * (1.0 + 1.0 / n) * l / n).sqrt();
    let radical = ((big_n / (n + 1.0) - 1.0) * f).max(0.0).sqrt();
    first + (4.0 / 3.0 + radical) * l / n
}

/// Normal-approximation half-width with the finite-population correction.
pub fn width_clt(sample: &[f64], design: &SamplingDesign, alpha: f64) -> Result<f64> {
    if sample.len() < 2 {
        return Err(invalid("CLT interval needs at least two observations"));
    }
    let n = sample.len() as f64;
    let mean = compensated_sum(sample.iter().copied()) / n;
    let var = if sample.iter().all(|x| *x == sample[0]) {
        0.0
    } else {
        compensated_sum(sample.iter().map(|x| (x - mean) * (x - mean))) / n
    };
    let z = normal_quantile(1.0 - alpha / 2.0);
    let f = (1.0 - design.n as f64 / design.big_n as f64).max(0.0);
    Ok(z * var.sqrt() * (f / n).sqrt())
}
