//! Finite populations, empirical distributions and without-replacement sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SNAP_TOL: f64 = 1e-12;

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of an experiment with master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master) ^ trial.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    values: Vec<f64>,
}

impl Population {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid("population needs at least two values"));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!("value {} at index {i} is outside [0,1]", values[i])));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// Mean and variance (denominator N).
    pub fn summary(&self) -> (f64, f64) {
        let mu = self.mean();
        let ss = compensated_sum(self.values.iter().map(|x| (x - mu) * (x - mu)));
        (mu, ss / self.values.len() as f64)
    }

    /// Replace every value by the alphabet point it matches; errors if a value matches none.
    pub fn snap(&self, alphabet: &[f64]) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                find_point(alphabet, v)
                    .map(|j| alphabet[j])
                    .ok_or_else(|| invalid(format!("value {v} at index {i} is not an alphabet point")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    pub fn distribution(&self, alphabet: Option<&[f64]>) -> Result<DiscreteDistribution> {
        empirical_distribution(&self.values, alphabet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    alphabet: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(alphabet: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() != weights.len() {
            return Err(invalid("alphabet and weights must be nonempty and of equal length"));
        }
        if alphabet.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("alphabet must be strictly increasing"));
        }
        if alphabet.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(invalid("alphabet points must lie in [0,1]"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights must be nonnegative"));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { alphabet, weights })
    }

    /// Build from unnormalized nonnegative weights.
    pub fn normalized(alphabet: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let total = compensated_sum(raw.iter().copied());
        if !(total > 0.0) {
            return Err(invalid("weights must have positive total"));
        }
        let weights = raw.iter().map(|w| w / total).collect();
        Self::new(alphabet, weights)
    }

    pub fn point_mass(s: f64) -> Result<Self> {
        Self::new(vec![s], vec![1.0])
    }

    pub fn alphabet(&self) -> &[f64] {
        &self.alphabet
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.alphabet.len()
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.alphabet.iter().zip(&self.weights).map(|(s, w)| s * w))
    }

    pub fn second_moment(&self) -> f64 {
        compensated_sum(self.alphabet.iter().zip(&self.weights).map(|(s, w)| s * s * w))
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        compensated_sum(self.alphabet.iter().zip(&self.weights).map(|(s, w)| (s - mu) * (s - mu) * w))
    }

    /// Distribution of 1 - X.
    pub fn reflect(&self) -> Self {
        Self {
            alphabet: self.alphabet.iter().rev().map(|s| 1.0 - s).collect(),
            weights: self.weights.iter().rev().copied().collect(),
        }
    }

    pub fn same_alphabet(&self, other: &Self) -> bool {
        self.alphabet.len() == other.alphabet.len()
            && self.alphabet.iter().zip(&other.alphabet).all(|(a, b)| (a - b).abs() <= SNAP_TOL)
    }

    /// Copy onto `alphabet ∪ {1}`, giving the new point `mass_at_one`.
    /// When 1 is already present the mass is added to it.
    pub fn extended_to_one(&self, mass_at_one: f64) -> (Vec<f64>, Vec<f64>) {
        let mut a = self.alphabet.clone();
        let mut w = self.weights.clone();
        if *a.last().unwrap() >= 1.0 {
            *w.last_mut().unwrap() += mass_at_one;
        } else {
            a.push(1.0);
            w.push(mass_at_one);
        }
        (a, w)
    }
}

/// Sample design: population size `big_n`, sample size `n`.
///
/// `n == big_n` (a census) is accepted so baselines and radii can be
/// evaluated at the end of a sampling path; rate-function code requires `n < big_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDesign {
    pub big_n: usize,
    pub n: usize,
    pub beta: f64,
    pub beta_bar: f64,
}

impl SamplingDesign {
    pub fn new(big_n: usize, n: usize) -> Result<Self> {
        if n < 1 || n > big_n {
            return Err(invalid(format!("need 1 <= n <= N, got n={n}, N={big_n}")));
        }
        let beta = n as f64 / big_n as f64;
        Ok(Self { big_n, n, beta, beta_bar: (big_n - n) as f64 / big_n as f64 })
    }

    pub fn is_census(&self) -> bool {
        self.n == self.big_n
    }

    pub(crate) fn require_proper(&self) -> Result<()> {
        if self.is_census() {
            Err(invalid("this operation needs n < N"))
        } else {
            Ok(())
        }
    }
}

fn find_point(alphabet: &[f64], v: f64) -> Option<usize> {
    let i = alphabet.partition_point(|s| *s < v - SNAP_TOL);
    (i < alphabet.len() && (alphabet[i] - v).abs() <= SNAP_TOL).then_some(i)
}

/// First `n` positions of a seeded uniformly random permutation of `0..big_n`.
pub fn sample_indices<R: Rng + ?Sized>(big_n: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..big_n).collect();
    for i in 0..n.min(big_n) {
        let j = rng.random_range(i..big_n);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

pub fn sample_wor(pop: &Population, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n > pop.len() {
        return Err(invalid(format!("sample size {n} exceeds population size {}", pop.len())));
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample_indices(pop.len(), n, &mut rng).into_iter().map(|i| pop.values[i]).collect())
}

/// Type of `sample`. Without an alphabet the distinct sample values are used.
pub fn empirical_distribution(sample: &[f64], alphabet: Option<&[f64]>) -> Result<DiscreteDistribution> {
    if sample.is_empty() {
        return Err(invalid("empty sample"));
    }
    let alphabet: Vec<f64> = match alphabet {
        Some(a) => a.to_vec(),
        None => {
            let mut a = sample.to_vec();
            a.sort_by(|x, y| x.total_cmp(y));
            a.dedup_by(|x, y| (*x - *y).abs() <= SNAP_TOL);
            a
        }
    };
    let mut counts = vec![0usize; alphabet.len()];
    for (i, &v) in sample.iter().enumerate() {
        let j = find_point(&alphabet, v)
            .ok_or_else(|| invalid(format!("sample value {v} at index {i} is not an alphabet point")))?;
        counts[j] += 1;
    }
    let n = sample.len() as f64;
    DiscreteDistribution::new(alphabet, counts.iter().map(|&c| c as f64 / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub fn parse_values_csv(text: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingest { row, msg: e.to_string() })?;
        let field = rec.get(0).unwrap_or("");
        if i == 0 && field.eq_ignore_ascii_case("value") {
            continue;
        }
        if field.is_empty() && rec.len() <= 1 {
            continue;
        }
        let v: f64 = field.parse().map_err(|_| Error::Ingest { row, msg: format!("not a number: {field:?}") })?;
        out.push(v);
    }
    Ok(out)
}

pub fn parse_values_json(text: &str) -> Result<Vec<f64>> {
    serde_json::from_str(text).map_err(|e| Error::Ingest { row: e.line(), msg: e.to_string() })
}

fn check_range(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Ingest { row: i + 1, msg: format!("value {} outside [0,1]", values[i]) });
    }
    Ok(())
}

pub fn parse_population(text: &str, format: Format) -> Result<Population> {
    let values = match format {
        Format::Csv => parse_values_csv(text)?,
        Format::Json => parse_values_json(text)?,
    };
    check_range(&values)?;
    Population::new(values)
}

pub fn load_population(path: &Path, format: Format) -> Result<Population> {
    parse_population(&std::fs::read_to_string(path)?, format)
}

/// Read a list of values in [0,1] (e.g. a sample or an alphabet).
pub fn load_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let values = match Format::from_path(path) {
        Format::Csv => parse_values_csv(&text)?,
        Format::Json => parse_values_json(&text)?,
    };
    check_range(&values)?;
    Ok(values)
}

/// Read feature vectors, one per CSV row.
pub fn load_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Ingest { row: 0, msg: e.to_string() })?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingest { row, msg: e.to_string() })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = out.first() {
                    if first.len() != v.len() {
                        return Err(Error::Ingest { row, msg: format!("expected {} columns, found {}", first.len(), v.len()) });
                    }
                }
                out.push(v);
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Ingest { row, msg: e.to_string() }),
        }
    }
    Ok(out)
}
