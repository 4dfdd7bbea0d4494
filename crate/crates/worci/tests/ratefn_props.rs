use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;

use worci::population::{rng_from_seed, DiscreteDistribution};
use worci::ratefn::{pinsker_lower, rate_i, rate_i_entropy_form, PrimalOracle, Side};

/// Distinct sorted alphabet in [0,1] with strictly positive normalized weights.
fn dist(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DiscreteDistribution> {
    k.prop_flat_map(|k| (prop::collection::btree_set(0u32..=1000, k), prop::collection::vec(0.01f64..1.0, k)))
        .prop_filter_map("need matching sizes", |(pts, raw)| {
            if pts.len() != raw.len() {
                return None;
            }
            let a: Vec<f64> = pts.iter().map(|&i| i as f64 / 1000.0).collect();
            DiscreteDistribution::normalized(a, raw).ok()
        })
}

/// `Q = βP + β̄R` for a random `R` on the same alphabet.
fn feasible_q(p: &DiscreteDistribution, beta: f64, raw_r: &[f64]) -> DiscreteDistribution {
    let total: f64 = raw_r.iter().sum();
    let q: Vec<f64> = p.weights().iter().zip(raw_r).map(|(w, r)| beta * w + (1.0 - beta) * r / total).collect();
    DiscreteDistribution::normalized(p.alphabet().to_vec(), q).unwrap()
}

fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y).ln()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rate_matches_entropy_form(
        p in dist(2..=8),
        beta in 0.02f64..0.98,
        raw in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let mut r = raw[..p.k()].to_vec();
        r[0] += 1e-3;
        let q = feasible_q(&p, beta, &r);
        let a = rate_i(&p, beta, &q).unwrap().value();
        let b = rate_i_entropy_form(&p, beta, &q).unwrap().value();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn rate_nonnegative_and_zero_only_at_p(
        p in dist(2..=6),
        beta in 0.02f64..0.98,
        raw in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let mut r = raw[..p.k()].to_vec();
        r[0] += 1e-3;
        let q = feasible_q(&p, beta, &r);
        let v = rate_i(&p, beta, &q).unwrap().value();
        prop_assert!(v >= 0.0);
        let dist_pq: f64 = p.weights().iter().zip(q.weights()).map(|(a, b)| (a - b).abs()).sum();
        if v <= 1e-12 {
            prop_assert!(dist_pq <= 1e-5, "zero rate at Q != P: {dist_pq}");
        }
        prop_assert!(rate_i(&p, beta, &p).unwrap().value() <= 1e-12);
    }

    #[test]
    fn half_sampling_is_twice_jensen_shannon(
        p in dist(2..=8),
        raw in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let mut r = raw[..p.k()].to_vec();
        r[0] += 1e-3;
        let q = feasible_q(&p, 0.5, &r);
        let resid: Vec<f64> = p.weights().iter().zip(q.weights()).map(|(pw, qw)| ((qw - 0.5 * pw) / 0.5).max(0.0)).collect();
        let mid: Vec<f64> = p.weights().iter().zip(&resid).map(|(a, b)| 0.5 * (a + b)).collect();
        let js = 0.5 * kl(p.weights(), &mid) + 0.5 * kl(&resid, &mid);
        let v = rate_i(&p, 0.5, &q).unwrap().value();
        prop_assert!((v - 2.0 * js).abs() <= 1e-10, "I = {v}, 2 JS = {}", 2.0 * js);
    }
}

#[test]
fn infeasible_pair_gives_infinity() {
    let p = DiscreteDistribution::new(vec![0.2, 0.8], vec![0.5, 0.5]).unwrap();
    let q = DiscreteDistribution::new(vec![0.2, 0.8], vec![0.9, 0.1]).unwrap();
    assert!(rate_i(&p, 0.5, &q).unwrap().value().is_infinite());
}

#[test]
fn small_beta_rate_tends_to_kl() {
    let p = DiscreteDistribution::new(vec![0.1, 0.5, 0.9], vec![0.2, 0.3, 0.5]).unwrap();
    let q = DiscreteDistribution::new(vec![0.1, 0.5, 0.9], vec![0.3, 0.3, 0.4]).unwrap();
    let target = kl(p.weights(), q.weights());
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&b| (rate_i(&p, b, &q).unwrap().value() - target).abs())
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 1e-3);
}

#[test]
fn oracle_monotone_and_above_pinsker() {
    let mut rng = rng_from_seed(11);
    for _ in 0..6 {
        let k = rng.random_range(2..=4);
        let mut a: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        a.sort_by(f64::total_cmp);
        let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let p = DiscreteDistribution::normalized(a, w).unwrap();
        let beta = rng.random_range(0.1..0.9);
        let plus = PrimalOracle::new(&p, beta, Side::Plus, 50).unwrap();
        let minus = PrimalOracle::new(&p, beta, Side::Minus, 50).unwrap();
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let vp: Vec<f64> = grid.iter().map(|&m| plus.value(m).value()).collect();
        let vm: Vec<f64> = grid.iter().map(|&m| minus.value(m).value()).collect();
        for i in 1..grid.len() {
            assert!(vp[i] >= vp[i - 1] - 1e-9, "plus side decreases at m = {}", grid[i]);
            assert!(vm[i] <= vm[i - 1] + 1e-9, "minus side increases at m = {}", grid[i]);
        }
        for (i, &m) in grid.iter().enumerate() {
            assert!(pinsker_lower(p.mean(), 1.0 - beta, m, Side::Plus) <= vp[i] + 1e-9);
            assert!(pinsker_lower(p.mean(), 1.0 - beta, m, Side::Minus) <= vm[i] + 1e-9);
        }
        assert_abs_diff_eq!(plus.value(p.mean()).value(), 0.0);
    }
}
