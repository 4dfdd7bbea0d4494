//! Seeded Monte Carlo experiments with CSV output.
//!
//! Every trial draws from its own generator seeded by `trial_seed(master, trial)`
//! and results are collected in trial order, so output does not depend on
//! the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{width_bernstein_serfling, width_clt, width_hoeffding, width_hoeffding_serfling};
use crate::ci_as::{ci_empirical, oracle_radius, AsOptions, Centering};
use crate::ci_banach::{
    ell_n, radius_closed_form, radius_optimized, radius_schneider, BanachParams, ClosedForm, ConstantMode, Kernel,
    KernelGram,
};
use crate::ci_finite::{
    ci_at_level, ci_proposed, containment_envelope, lower_bound_width, sandwich_check, ConfidenceBudget, Projection,
    SandwichReport, DEFAULT_TOL,
};
use crate::dualsolve::j_value;
use crate::error::{invalid, Error, Result};
use crate::population::{
    compensated_sum, empirical_distribution, rng_from_seed, sample_indices, sample_wor, trial_seed,
    DiscreteDistribution, Population, SamplingDesign,
};
use crate::ratefn::{PrimalOracle, Side};
use crate::special::beta_quantile;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "WOR_CI_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "E1" => ExperimentId::E1,
            "E2" => ExperimentId::E2,
            "E3" => ExperimentId::E3,
            "E4" => ExperimentId::E4,
            "E5" => ExperimentId::E5,
            "E6" => ExperimentId::E6,
            _ => return Err(invalid(format!("unknown experiment {s:?}"))),
        })
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PopulationGen {
    Beta { params: Vec<(f64, f64)> },
    Finite { k: usize, concentration: f64 },
    Vectors { dim: usize, components: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub population: PopulationGen,
    pub big_n: usize,
    pub big_n_grid: Vec<usize>,
    pub beta: f64,
    pub n: Option<usize>,
    pub n_step: usize,
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub oracle_resolution: usize,
    pub constant: ConstantMode,
    pub centering: Centering,
    pub lengthscale: Option<f64>,
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let base = Self {
            experiment: id,
            population: PopulationGen::Finite { k: 10, concentration: 1.0 },
            big_n: 1000,
            big_n_grid: vec![200, 1000, 2000, 10_000, 20_000],
            beta: 0.35,
            n: None,
            n_step: 20,
            alphas: vec![1e-5, 1e-10],
            trials: 200,
            seed: 20_240_601,
            grid_points: 201,
            oracle_resolution: 50,
            constant: ConstantMode::Paper,
            centering: Centering::Mean,
            lengthscale: None,
            output: None,
        };
        match id {
            ExperimentId::E1 => Self { population: PopulationGen::Finite { k: 4, concentration: 1.0 }, trials: 2, ..base },
            ExperimentId::E2 => base,
            ExperimentId::E3 => Self {
                population: PopulationGen::Beta { params: vec![(2.0, 5.0), (5.0, 2.0), (1.0, 1.0)] },
                beta: 0.5,
                alphas: vec![0.05],
                ..base
            },
            ExperimentId::E4 => Self { alphas: vec![0.05], grid_points: 999, trials: 1, ..base },
            ExperimentId::E5 => Self {
                population: PopulationGen::Vectors { dim: 8, components: 5 },
                alphas: vec![0.05],
                trials: 100,
                ..base
            },
            ExperimentId::E6 => Self {
                population: PopulationGen::Finite { k: 5, concentration: 1.0 },
                big_n: 2000,
                beta: 0.5,
                alphas: vec![1e-6],
                trials: 500,
                ..base
            },
        }
    }

    /// Parse flat `key = value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Ingest { row: i + 1, msg: format!("expected key=value, got {line:?}") })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let id: ExperimentId = kv.remove("experiment").ok_or_else(|| invalid("config needs an experiment key"))?.parse()?;
        let mut cfg = Self::defaults(id);
        let num = |k: &str, v: &str| -> Result<f64> { v.parse().map_err(|_| invalid(format!("{k}: not a number: {v:?}"))) };
        let int = |k: &str, v: &str| -> Result<usize> { v.parse().map_err(|_| invalid(format!("{k}: not an integer: {v:?}"))) };
        let mut k_alpha = None;
        let mut conc = None;
        let mut dim = None;
        let mut comps = None;
        for (k, v) in &kv {
            match k.as_str() {
                "seed" => cfg.seed = v.parse().map_err(|_| invalid(format!("seed: not an integer: {v:?}")))?,
                "trials" => cfg.trials = int(k, v)?,
                "N" | "big_n" => cfg.big_n = int(k, v)?,
                "n" => cfg.n = Some(int(k, v)?),
                "beta" => cfg.beta = num(k, v)?,
                "alpha" | "alphas" => cfg.alphas = v.split(',').map(|s| num(k, s.trim())).collect::<Result<_>>()?,
                "N_grid" => cfg.big_n_grid = v.split(',').map(|s| int(k, s.trim())).collect::<Result<_>>()?,
                "n_step" => cfg.n_step = int(k, v)?,
                "grid_points" => cfg.grid_points = int(k, v)?,
                "oracle_resolution" => cfg.oracle_resolution = int(k, v)?,
                "constant" => cfg.constant = v.parse()?,
                "centering" => cfg.centering = v.parse()?,
                "lengthscale" => cfg.lengthscale = Some(num(k, v)?),
                "output" => cfg.output = Some(v.clone()),
                "k" => k_alpha = Some(int(k, v)?),
                "concentration" => conc = Some(num(k, v)?),
                "dim" => dim = Some(int(k, v)?),
                "components" => comps = Some(int(k, v)?),
                "beta_params" => {
                    let params = v
                        .split(',')
                        .map(|pair| {
                            let (a, b) = pair.split_once(':').ok_or_else(|| invalid(format!("beta_params: bad pair {pair:?}")))?;
                            Ok((num(k, a.trim())?, num(k, b.trim())?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    cfg.population = PopulationGen::Beta { params };
                }
                _ => return Err(invalid(format!("unknown config key {k:?}"))),
            }
        }
        match &mut cfg.population {
            PopulationGen::Finite { k, concentration } => {
                if let Some(x) = k_alpha {
                    *k = x;
                }
                if let Some(x) = conc {
                    *concentration = x;
                }
            }
            PopulationGen::Vectors { dim: d, components: c } => {
                if let Some(x) = dim {
                    *d = x;
                }
                if let Some(x) = comps {
                    *c = x;
                }
            }
            PopulationGen::Beta { .. } => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s.trim().parse().map_err(|_| invalid(format!("{SEED_ENV}: not an integer: {s:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(invalid("alphas must lie in (0,1)"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("beta must lie in (0,1)"));
        }
        Ok(())
    }

    pub fn sample_size(&self) -> usize {
        self.n.unwrap_or_else(|| (self.beta * self.big_n as f64).round() as usize)
    }

    pub fn design(&self) -> Result<SamplingDesign> {
        SamplingDesign::new(self.big_n, self.sample_size())
    }
}

/// Evenly spaced alphabet `(i + 1/2)/k`.
pub fn midpoint_alphabet(k: usize) -> Vec<f64> {
    (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect()
}

/// Symmetric Dirichlet weights.
pub fn dirichlet_weights<R: Rng + ?Sized>(k: usize, concentration: f64, rng: &mut R) -> Result<Vec<f64>> {
    let g = Gamma::new(concentration, 1.0).map_err(|e| invalid(format!("gamma: {e}")))?;
    let raw: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|x| x / total).collect())
}

/// Population of size `big_n` whose type is the largest-remainder rounding of `weights`.
pub fn finite_population(alphabet: &[f64], weights: &[f64], big_n: usize) -> Result<Population> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * big_n as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(big_n - assigned) {
        counts[i] += 1;
    }
    let values = alphabet.iter().zip(&counts).flat_map(|(&s, &c)| std::iter::repeat_n(s, c)).collect();
    Population::new(values)
}

/// Beta(a, b) population by inverse CDF at stratified uniforms `(i + U_i)/N`.
pub fn beta_population<R: Rng + ?Sized>(a: f64, b: f64, big_n: usize, rng: &mut R) -> Result<Population> {
    let values: Vec<f64> = (0..big_n)
        .map(|i| beta_quantile(a, b, (i as f64 + rng.random::<f64>()) / big_n as f64))
        .collect();
    Population::new(values)
}

/// Gaussian mixture corpus: `components` centers drawn from N(0, 4I), points at unit spread around them.
pub fn gaussian_mixture<R: Rng + ?Sized>(big_n: usize, dim: usize, components: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    let centers: Vec<Vec<f64>> =
        (0..components.max(1)).map(|_| (0..dim).map(|_| 2.0 * normal(rng)).collect()).collect();
    (0..big_n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            c.iter().map(|m| m + normal(rng)).collect()
        })
        .collect()
}

/// Median pairwise distance among the first `limit` rows.
pub fn median_distance(vectors: &[Vec<f64>], limit: usize) -> f64 {
    let m = vectors.len().min(limit);
    let mut d = Vec::with_capacity(m * m / 2);
    for i in 0..m {
        for j in 0..i {
            d.push(vectors[i].iter().zip(&vectors[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    d.get(d.len() / 2).copied().unwrap_or(1.0)
}

fn csv_text<T: Serialize>(id: ExperimentId, seed: u64, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| invalid(format!("csv: {e}")))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| invalid(format!("csv: {e}")))?).expect("utf8 csv");
    let mut out = String::new();
    writeln!(out, "# wor-ci v{VERSION} experiment={id} seed={seed}").unwrap();
    out.push_str(&body);
    Ok(out)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    compensated_sum(v.iter().copied()) / v.len().max(1) as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E1Row {
    pub dist: usize,
    pub m: f64,
    pub j_primal: f64,
    pub j_dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E1Result {
    pub distributions: Vec<DiscreteDistribution>,
    pub rows: Vec<E1Row>,
    pub max_gap: f64,
    pub j_at_mean: Vec<(f64, f64)>,
}

fn j_both(v_plus: f64, v_minus: f64) -> f64 {
    v_plus.max(v_minus)
}

/// Dual solver against the primal solver on random `k`-point distributions.
pub fn run_e1_dual_vs_primal(cfg: &ExperimentConfig) -> Result<E1Result> {
    let PopulationGen::Finite { k, concentration } = cfg.population else {
        return Err(invalid("E1 needs a finite population generator"));
    };
    let beta = cfg.beta;
    let grid: Vec<f64> = (0..cfg.grid_points).map(|i| i as f64 / (cfg.grid_points - 1).max(1) as f64).collect();
    let mut distributions = Vec::new();
    let mut rows = Vec::new();
    let mut j_at_mean = Vec::new();
    for dist in 0..cfg.trials {
        let mut rng = rng_from_seed(trial_seed(cfg.seed, dist as u64));
        let mut alphabet: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        alphabet.sort_by(f64::total_cmp);
        let weights = dirichlet_weights(k, concentration, &mut rng)?;
        let p = DiscreteDistribution::new(alphabet, weights)?;
        let plus = PrimalOracle::new(&p, beta, Side::Plus, cfg.oracle_resolution)?;
        let minus = PrimalOracle::new(&p, beta, Side::Minus, cfg.oracle_resolution)?;
        let part: Vec<E1Row> = grid
            .par_iter()
            .map(|&m| -> Result<E1Row> {
                let jp = j_both(plus.value(m).value(), minus.value(m).value());
                let jd = j_both(j_value(&p, beta, m, Side::Plus, 1e-10)?, j_value(&p, beta, m, Side::Minus, 1e-10)?);
                let gap = if jp.is_infinite() && jd.is_infinite() { 0.0 } else { (jp - jd).abs() };
                Ok(E1Row { dist, m, j_primal: jp, j_dual: jd, gap })
            })
            .collect::<Result<_>>()?;
        let mu = p.mean();
        let jp = j_both(plus.value(mu).value(), minus.value(mu).value());
        let jd = j_both(j_value(&p, beta, mu, Side::Plus, 1e-10)?, j_value(&p, beta, mu, Side::Minus, 1e-10)?);
        j_at_mean.push((jp, jd));
        rows.extend(part);
        distributions.push(p);
    }
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(E1Result { distributions, rows, max_gap, j_at_mean })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E2Row {
    pub alpha: f64,
    pub trial: usize,
    pub proposed: f64,
    pub hoeffding: f64,
    pub bernstein_serfling: f64,
    pub hoeffding_serfling_improved: f64,
    /// Same construction with level `ln(2/α)/n` (no type-counting term); reported for reference only.
    pub proposed_reduced_budget: f64,
    pub covered_proposed: bool,
    pub covered_hoeffding: bool,
    pub covered_bernstein_serfling: bool,
    pub covered_hoeffding_serfling_improved: bool,
    pub covered_reduced_budget: bool,
    pub contained_in_envelope: bool,
    pub lower_bound_half_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E2Summary {
    pub alpha: f64,
    pub mean_proposed: f64,
    pub mean_hoeffding: f64,
    pub mean_bernstein_serfling: f64,
    pub mean_hoeffding_serfling_improved: f64,
    pub mean_reduced_budget: f64,
    pub coverage_proposed: f64,
    pub coverage_reduced_budget: f64,
    pub envelope_violations: usize,
    pub lower_bound_half_width: f64,
    pub lower_bound_below_proposed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E2Result {
    pub population: Population,
    pub alphabet: Vec<f64>,
    pub rows: Vec<E2Row>,
    pub summaries: Vec<E2Summary>,
}

/// Fixed finite-alphabet population with Dirichlet weights drawn from the master seed.
pub fn finite_experiment_population(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Population)> {
    let PopulationGen::Finite { k, concentration } = cfg.population else {
        return Err(invalid("this experiment needs a finite population generator"));
    };
    let alphabet = midpoint_alphabet(k);
    let mut rng = rng_from_seed(cfg.seed);
    let w = dirichlet_weights(k, concentration, &mut rng)?;
    let pop = finite_population(&alphabet, &w, cfg.big_n)?;
    Ok((alphabet, pop))
}

/// Widths of the proposed finite-alphabet interval against the classical baselines.
pub fn run_e2_finite_widths(cfg: &ExperimentConfig) -> Result<E2Result> {
    let (alphabet, pop) = finite_experiment_population(cfg)?;
    let design = cfg.design()?;
    let (mu, sigma2) = pop.summary();
    let sigma = sigma2.sqrt();
    let pop_dist = pop.distribution(Some(&alphabet))?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &alpha in &cfg.alphas {
        let budget = ConfidenceBudget::new(alpha, alphabet.len(), design.big_n, None)?;
        let lb = lower_bound_width(&pop_dist, &design, alpha, Projection::Rounded)?.half_width;
        let h = width_hoeffding(&design, alpha);
        let bs = width_bernstein_serfling(&design, alpha, sigma);
        let hsi = width_hoeffding_serfling(&design, alpha, true);
        let part: Vec<E2Row> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| -> Result<E2Row> {
                let sample = sample_wor(&pop, design.n, trial_seed(cfg.seed, trial as u64))?;
                let mu_hat = compensated_sum(sample.iter().copied()) / design.n as f64;
                let iv = ci_proposed(&sample, &alphabet, &design, alpha, DEFAULT_TOL)?;
                let p_hat = empirical_distribution(&sample, Some(&alphabet))?;
                let reduced = ci_at_level(&p_hat, design.beta, (2.0 / alpha).ln() / design.n as f64, DEFAULT_TOL)?;
                let env = containment_envelope(mu_hat, &design, budget.c_n);
                let cov = |r: f64| (mu - mu_hat).abs() <= r;
                Ok(E2Row {
                    alpha,
                    trial,
                    proposed: iv.half_width(),
                    hoeffding: h,
                    bernstein_serfling: bs,
                    hoeffding_serfling_improved: hsi,
                    proposed_reduced_budget: reduced.half_width(),
                    covered_proposed: iv.contains(mu),
                    covered_hoeffding: cov(h),
                    covered_bernstein_serfling: cov(bs),
                    covered_hoeffding_serfling_improved: cov(hsi),
                    covered_reduced_budget: reduced.contains(mu),
                    contained_in_envelope: iv.is_within(&env),
                    lower_bound_half_width: lb,
                })
            })
            .collect::<Result<_>>()?;
        let t = part.len() as f64;
        summaries.push(E2Summary {
            alpha,
            mean_proposed: mean(part.iter().map(|r| r.proposed)),
            mean_hoeffding: h,
            mean_bernstein_serfling: bs,
            mean_hoeffding_serfling_improved: hsi,
            mean_reduced_budget: mean(part.iter().map(|r| r.proposed_reduced_budget)),
            coverage_proposed: part.iter().filter(|r| r.covered_proposed).count() as f64 / t,
            coverage_reduced_budget: part.iter().filter(|r| r.covered_reduced_budget).count() as f64 / t,
            envelope_violations: part.iter().filter(|r| !r.contained_in_envelope).count(),
            lower_bound_half_width: lb,
            lower_bound_below_proposed: part.iter().filter(|r| lb <= r.proposed).count() as f64 / t,
        });
        rows.extend(part);
    }
    Ok(E2Result { population: pop, alphabet, rows, summaries })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E3Row {
    pub a: f64,
    pub b: f64,
    pub trial: usize,
    pub as_ci: f64,
    pub clt: f64,
    pub bernstein_serfling: f64,
    pub as_oracle: f64,
    pub as_uncentered: f64,
    pub covered_as: bool,
    pub covered_clt: bool,
    pub covered_bernstein_serfling: bool,
    pub empirical_ge_oracle: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E3Summary {
    pub a: f64,
    pub b: f64,
    pub mean_as: f64,
    pub mean_clt: f64,
    pub mean_bernstein_serfling: f64,
    pub mean_as_oracle: f64,
    pub mean_as_uncentered: f64,
    pub coverage_as: f64,
    pub coverage_clt: f64,
    pub coverage_bernstein_serfling: f64,
    pub empirical_ge_oracle: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E3Result {
    pub rows: Vec<E3Row>,
    pub summaries: Vec<E3Summary>,
}

/// Almost-sure interval against CLT and Bernstein-Serfling on Beta populations.
pub fn run_e3_as_ci(cfg: &ExperimentConfig) -> Result<E3Result> {
    let PopulationGen::Beta { params } = &cfg.population else {
        return Err(invalid("E3 needs a beta population generator"));
    };
    let design = cfg.design()?;
    let alpha = cfg.alphas[0];
    let opts = AsOptions { constant: cfg.constant, centering: cfg.centering, ..AsOptions::default() };
    let raw = AsOptions { centering: Centering::Raw, ..opts };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (pi, &(a, b)) in params.iter().enumerate() {
        let part: Vec<E3Row> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| -> Result<E3Row> {
                let seed = trial_seed(cfg.seed ^ ((pi as u64 + 1) << 48), trial as u64);
                let mut rng = rng_from_seed(seed);
                let pop = beta_population(a, b, design.big_n, &mut rng)?;
                let (mu, sigma2) = pop.summary();
                let idx = sample_indices(design.big_n, design.n, &mut rng);
                let sample: Vec<f64> = idx.iter().map(|&i| pop.values()[i]).collect();
                let mu_hat = compensated_sum(sample.iter().copied()) / design.n as f64;
                let emp = ci_empirical(&sample, &design, alpha, &opts)?;
                let unc = ci_empirical(&sample, &design, alpha, &raw)?;
                let (oracle, _) = oracle_radius(&pop, &design, alpha, &opts)?;
                let clt = width_clt(&sample, &design, alpha)?;
                let bs = width_bernstein_serfling(&design, alpha, sigma2.sqrt());
                let cov = |r: f64| (mu - mu_hat).abs() <= r;
                Ok(E3Row {
                    a,
                    b,
                    trial,
                    as_ci: emp.epsilon,
                    clt,
                    bernstein_serfling: bs,
                    as_oracle: oracle,
                    as_uncentered: unc.epsilon,
                    covered_as: emp.interval.contains(mu),
                    covered_clt: cov(clt),
                    covered_bernstein_serfling: cov(bs),
                    empirical_ge_oracle: emp.epsilon >= oracle,
                })
            })
            .collect::<Result<_>>()?;
        let t = part.len() as f64;
        let frac = |f: &dyn Fn(&E3Row) -> bool| part.iter().filter(|r| f(r)).count() as f64 / t;
        summaries.push(E3Summary {
            a,
            b,
            mean_as: mean(part.iter().map(|r| r.as_ci)),
            mean_clt: mean(part.iter().map(|r| r.clt)),
            mean_bernstein_serfling: mean(part.iter().map(|r| r.bernstein_serfling)),
            mean_as_oracle: mean(part.iter().map(|r| r.as_oracle)),
            mean_as_uncentered: mean(part.iter().map(|r| r.as_uncentered)),
            coverage_as: frac(&|r| r.covered_as),
            coverage_clt: frac(&|r| r.covered_clt),
            coverage_bernstein_serfling: frac(&|r| r.covered_bernstein_serfling),
            empirical_ge_oracle: frac(&|r| r.empirical_ge_oracle),
        });
        rows.extend(part);
    }
    Ok(E3Result { rows, summaries })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E4Row {
    pub big_n: usize,
    pub beta: f64,
    pub ell_n: f64,
    pub eps_closed: f64,
    pub eps_schneider: f64,
    pub ratio: f64,
    /// `8 ln(2/α) / (3 ℓ_n)`.
    pub ratio_sq_lower: f64,
    /// `8 ln(2/α)(β̄ + 1/N) / (3 β̄ ℓ_n)`.
    pub ratio_sq_exact: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E4Result {
    pub rows: Vec<E4Row>,
    pub min_ratio: Vec<(usize, f64)>,
}

/// Ratio of the Schneider radius to the closed-form radius over a grid of sampling fractions.
pub fn run_e4_banach_ratio(cfg: &ExperimentConfig) -> Result<E4Result> {
    let alpha = cfg.alphas[0];
    let g = cfg.grid_points;
    let mut rows = Vec::new();
    let mut min_ratio = Vec::new();
    for &big_n in &cfg.big_n_grid {
        let mut lo = f64::INFINITY;
        for i in 1..=g {
            let beta = i as f64 / (g + 1) as f64;
            let p = BanachParams::nominal(1.0, 1.0, beta, big_n as f64, alpha)?;
            let ell = ell_n(&p);
            let (eps, _) = radius_closed_form(&p, ClosedForm::C3);
            let sch = radius_schneider(&p);
            let ratio = sch / eps;
            let base = 8.0 * (2.0 / alpha).ln() / (3.0 * ell);
            lo = lo.min(ratio);
            rows.push(E4Row {
                big_n,
                beta,
                ell_n: ell,
                eps_closed: eps,
                eps_schneider: sch,
                ratio,
                ratio_sq_lower: base,
                ratio_sq_exact: base * (p.beta_bar() + 1.0 / big_n as f64) / p.beta_bar(),
            });
        }
        min_ratio.push((big_n, lo));
    }
    Ok(E4Result { rows, min_ratio })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E5Row {
    pub n: usize,
    pub mean_dev: f64,
    pub max_dev: f64,
    pub eps_schneider: f64,
    pub eps_closed: f64,
    pub closed_valid: bool,
    pub eps_opt: f64,
    pub coverage_opt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct E5Result {
    pub lengthscale: f64,
    pub rows: Vec<E5Row>,
}

/// Kernel mean embedding deviations of WoR subsamples against the norm-ball radii.
pub fn run_e5_mmd(cfg: &ExperimentConfig) -> Result<E5Result> {
    let PopulationGen::Vectors { dim, components } = cfg.population else {
        return Err(invalid("E5 needs a vector population generator"));
    };
    let mut rng = rng_from_seed(cfg.seed);
    let data = gaussian_mixture(cfg.big_n, dim, components, &mut rng);
    let ls = cfg.lengthscale.unwrap_or_else(|| median_distance(&data, 500));
    let kernel = Kernel::Matern32 { lengthscale: ls };
    run_mmd_sweep(&data, &kernel, cfg)
}

/// Sweep `n = step, 2·step, …, N` on a fixed dataset.
pub fn run_mmd_sweep(data: &[Vec<f64>], kernel: &Kernel, cfg: &ExperimentConfig) -> Result<E5Result> {
    let gram = KernelGram::new(data, kernel)?;
    let big_n = gram.len();
    let alpha = cfg.alphas[0];
    let (d, big_d) = kernel.banach_constants();
    let step = cfg.n_step.max(1);
    let mut rows = Vec::new();
    for n in (step..=big_n).step_by(step) {
        let design = SamplingDesign::new(big_n, n)?;
        let p = BanachParams::new(d, big_d, &design, alpha)?;
        let eps_opt = radius_optimized(&p, 1e-10)?.epsilon;
        let (eps_closed, closed_valid) = radius_closed_form(&p, ClosedForm::C3);
        let eps_sch = radius_schneider(&p);
        let devs: Vec<f64> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from_seed(trial_seed(cfg.seed ^ ((n as u64) << 32), t as u64));
                gram.deviation(&sample_indices(big_n, n, &mut rng))
            })
            .collect::<Result<_>>()?;
        rows.push(E5Row {
            n,
            mean_dev: mean(devs.iter().copied()),
            max_dev: devs.iter().copied().fold(0.0, f64::max),
            eps_schneider: eps_sch,
            eps_closed,
            closed_valid,
            eps_opt,
            coverage_opt: devs.iter().filter(|&&x| x <= eps_opt).count() as f64 / devs.len() as f64,
        });
    }
    Ok(E5Result { lengthscale: kernel.lengthscale(), rows })
}

/// Sandwich frequency on a fixed finite-alphabet population.
pub fn run_e6_sandwich(cfg: &ExperimentConfig) -> Result<SandwichReport> {
    let (alphabet, pop) = finite_experiment_population(cfg)?;
    sandwich_check(&pop, &alphabet, &cfg.design()?, cfg.alphas[0], cfg.trials, cfg.seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub csv: String,
    pub summary: serde_json::Value,
    pub summary_line: String,
}

#[derive(Serialize)]
struct KeyValue<'a> {
    key: &'a str,
    value: String,
}

/// Run the configured experiment and render its CSV and summary.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let id = cfg.experiment;
    let (csv, summary, line) = match id {
        ExperimentId::E1 => {
            let r = run_e1_dual_vs_primal(cfg)?;
            let line = format!("E1 rows={} max_gap={:.3e}", r.rows.len(), r.max_gap);
            (csv_text(id, cfg.seed, &r.rows)?, serde_json::json!({"max_gap": r.max_gap, "j_at_mean": r.j_at_mean}), line)
        }
        ExperimentId::E2 => {
            let r = run_e2_finite_widths(cfg)?;
            let line = r
                .summaries
                .iter()
                .map(|s| {
                    format!(
                        "alpha={:e} proposed={:.4} hoeffding={:.4} bernstein_serfling={:.4} coverage={:.3}",
                        s.alpha, s.mean_proposed, s.mean_hoeffding, s.mean_bernstein_serfling, s.coverage_proposed
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            (csv_text(id, cfg.seed, &r.rows)?, to_json(&r.summaries), format!("E2 {line}"))
        }
        ExperimentId::E3 => {
            let r = run_e3_as_ci(cfg)?;
            let line = r
                .summaries
                .iter()
                .map(|s| {
                    format!(
                        "beta({},{}) clt={:.4} as={:.4} bernstein_serfling={:.4} coverage_as={:.3}",
                        s.a, s.b, s.mean_clt, s.mean_as, s.mean_bernstein_serfling, s.coverage_as
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            (csv_text(id, cfg.seed, &r.rows)?, to_json(&r.summaries), format!("E3 {line}"))
        }
        ExperimentId::E4 => {
            let r = run_e4_banach_ratio(cfg)?;
            let line = r.min_ratio.iter().map(|(n, m)| format!("N={n} min_ratio={m:.4}")).collect::<Vec<_>>().join("; ");
            (csv_text(id, cfg.seed, &r.rows)?, serde_json::json!({"min_ratio": r.min_ratio}), format!("E4 {line}"))
        }
        ExperimentId::E5 => {
            let r = run_e5_mmd(cfg)?;
            let worst = r.rows.iter().filter(|x| x.eps_opt > 0.0).map(|x| x.mean_dev / x.eps_opt).fold(0.0, f64::max);
            let line = format!("E5 rows={} lengthscale={:.4} max(mean_dev/eps_opt)={:.4}", r.rows.len(), r.lengthscale, worst);
            (csv_text(id, cfg.seed, &r.rows)?, serde_json::json!({"lengthscale": r.lengthscale}), line)
        }
        ExperimentId::E6 => {
            let r = run_e6_sandwich(cfg)?;
            let line = format!("E6 trials={} frequency={:.4} A={:.4}", r.trials, r.frequency, r.a_sandwich);
            let summary = serde_json::to_value(&r).map_err(|e| invalid(e.to_string()))?;
            let kv: Vec<KeyValue> = summary
                .as_object()
                .into_iter()
                .flatten()
                .filter(|(_, v)| !v.is_object())
                .map(|(k, v)| KeyValue { key: k, value: v.to_string() })
                .collect();
            (csv_text(id, cfg.seed, &kv)?, summary, line)
        }
    };
    Ok(ExperimentOutput { csv, summary, summary_line: line })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_env_free_defaults() {
        let cfg = ExperimentConfig::parse("experiment = E2\nseed = 7 # comment\nalphas = 1e-5, 1e-10\nk = 6\n").unwrap();
        assert_eq!(cfg.experiment, ExperimentId::E2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.alphas, vec![1e-5, 1e-10]);
        assert_eq!(cfg.population, PopulationGen::Finite { k: 6, concentration: 1.0 });
        assert!(ExperimentConfig::parse("experiment = E2\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n").is_err());
    }

    #[test]
    fn beta_params_parse() {
        let cfg = ExperimentConfig::parse("experiment=E3\nbeta_params=2:5,5:2\n").unwrap();
        assert_eq!(cfg.population, PopulationGen::Beta { params: vec![(2.0, 5.0), (5.0, 2.0)] });
    }

    #[test]
    fn finite_population_matches_weights() {
        let pop = finite_population(&[0.25, 0.75], &[0.3, 0.7], 10).unwrap();
        assert_eq!(pop.values().iter().filter(|&&v| v == 0.25).count(), 3);
    }

    #[test]
    fn beta_population_in_range() {
        let mut rng = rng_from_seed(3);
        let pop = beta_population(2.0, 5.0, 500, &mut rng).unwrap();
        assert!((pop.mean() - 2.0 / 7.0).abs() < 0.01);
    }

    #[test]
    fn csv_header_comment() {
        #[derive(Serialize)]
        struct R {
            x: f64,
        }
        let text = csv_text(ExperimentId::E4, 9, &[R { x: 1.5 }]).unwrap();
        assert!(text.starts_with(&format!("# wor-ci v{VERSION} experiment=E4 seed=9\n")));
        assert!(text.contains("x\n1.5\n"));
    }

    #[test]
    fn e4_small_run() {
        let mut cfg = ExperimentConfig::defaults(ExperimentId::E4);
        cfg.grid_points = 9;
        cfg.big_n_grid = vec![200, 2000];
        let r = run_e4_banach_ratio(&cfg).unwrap();
        assert_eq!(r.rows.len(), 18);
        assert!(r.min_ratio.iter().all(|(_, m)| *m > 1.0));
    }
}
