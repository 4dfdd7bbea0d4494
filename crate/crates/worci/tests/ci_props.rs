use proptest::prelude::*;
use rand::Rng;
use rayon::prelude::*;

use worci::baselines::{width_bernstein_serfling, width_clt, width_hoeffding, width_hoeffding_serfling};
use worci::ci_as::{ci_empirical, ci_oracle, oracle_radius, AsOptions, CgfModel, Centering};
use worci::ci_finite::{ci_proposed, containment_envelope, lower_bound_width, ConfidenceBudget, Projection, DEFAULT_TOL};
use worci::population::{
    compensated_sum, rng_from_seed, sample_indices, sample_wor, trial_seed, DiscreteDistribution, Population,
    SamplingDesign,
};
use worci::sim::{beta_population, finite_population, midpoint_alphabet};

fn mean(x: &[f64]) -> f64 {
    compensated_sum(x.iter().copied()) / x.len() as f64
}

fn mc_floor(trials: usize) -> f64 {
    0.95 - 3.0 * (0.05 * 0.95 / trials as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_brackets_mean_and_sits_in_envelope(
        counts in prop::collection::vec(1usize..40, 2..=6),
        frac in 0.05f64..0.9,
        seed in any::<u64>(),
        alpha_exp in 1i32..10,
    ) {
        let k = counts.len();
        let alphabet = midpoint_alphabet(k);
        let total: usize = counts.iter().sum();
        let w: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let pop = finite_population(&alphabet, &w, total).unwrap();
        let n = ((frac * total as f64).round() as usize).clamp(1, total - 1);
        let design = SamplingDesign::new(total, n).unwrap();
        let alpha = 10f64.powi(-alpha_exp);
        let sample = sample_wor(&pop, n, seed).unwrap();
        let mu_hat = mean(&sample);
        let iv = ci_proposed(&sample, &alphabet, &design, alpha, DEFAULT_TOL).unwrap();
        prop_assert!(iv.lo <= mu_hat + 1e-12 && mu_hat <= iv.hi + 1e-12, "{iv:?} vs {mu_hat}");
        let budget = ConfidenceBudget::new(alpha, k, total, None).unwrap();
        let env = containment_envelope(mu_hat, &design, budget.c_n);
        prop_assert!(iv.lo >= env.lo - 2.0 * DEFAULT_TOL && iv.hi <= env.hi + 2.0 * DEFAULT_TOL, "{iv:?} not in {env:?}");
    }

    #[test]
    fn cgf_is_convex(
        values in prop::collection::vec(0.0f64..1.0, 2..40),
        beta in 0.05f64..0.95,
        l1 in -50.0f64..50.0,
        l2 in -50.0f64..50.0,
    ) {
        let big_n = 1000;
        let n = ((beta * big_n as f64).round() as usize).clamp(1, big_n - 1);
        let design = SamplingDesign::new(big_n, n).unwrap();
        let model = CgfModel::from_values(&values, &design, Centering::Mean).unwrap();
        let mid = model.cgf(0.5 * (l1 + l2));
        let avg = 0.5 * (model.cgf(l1) + model.cgf(l2));
        prop_assert!(mid <= avg + 1e-12 * (1.0 + avg.abs()));
    }

    #[test]
    fn legendre_nonnegative_increasing_and_invertible(
        values in prop::collection::vec(0.0f64..1.0, 2..40),
        u1 in 0.0f64..0.95,
        u2 in 0.0f64..0.95,
    ) {
        let design = SamplingDesign::new(1000, 350).unwrap();
        let model = CgfModel::from_values(&values, &design, Centering::Mean).unwrap();
        prop_assume!(model.saturation() > 1e-6);
        let (y1, y2) = (u1.min(u2) * model.saturation(), u1.max(u2) * model.saturation());
        let (a, b) = (model.legendre(y1).unwrap(), model.legendre(y2).unwrap());
        prop_assert!(a >= 0.0 && b >= a - 1e-12);
        let ym = 0.5 * (y1 + y2);
        prop_assert!(model.legendre(ym).unwrap() <= 0.5 * (a + b) + 1e-10);
        if b > 1e-10 {
            let back = model.invert_legendre(b).unwrap();
            prop_assert!((back - y2).abs() <= 1e-8 * (1.0 + y2), "{back} vs {y2}");
            let again = model.legendre(back).unwrap();
            prop_assert!(again >= b - 1e-10 && again <= b + 1e-8, "{again} vs {b}");
        }
    }
}

#[test]
fn cgf_identities_at_zero() {
    let mut rng = rng_from_seed(8);
    let pop = beta_population(2.0, 5.0, 1000, &mut rng).unwrap();
    let design = SamplingDesign::new(1000, 500).unwrap();
    let model = CgfModel::from_values(pop.values(), &design, Centering::Mean).unwrap();
    let h = 1e-6;
    assert_eq!(model.cgf(0.0), 0.0);
    assert!(((model.cgf(h) - model.cgf(-h)) / (2.0 * h)).abs() <= 1e-8);
    let h2 = 1e-4;
    let second = (model.cgf(h2) - 2.0 * model.cgf(0.0) + model.cgf(-h2)) / (h2 * h2);
    let c2 = model.curvature_at_zero();
    assert!((second - c2).abs() / c2 <= 1e-5, "{second} vs {c2}");
    let lam = 1e-4;
    assert!((model.cgf(lam) - c2 * lam * lam / 2.0).abs() / (c2 * lam * lam / 2.0) < 0.01);
    for y in [1e-4, 1e-3, 1e-2] {
        let approx = y * y / (2.0 * c2);
        let exact = model.legendre(y).unwrap();
        assert!((exact - approx).abs() / approx < 0.05, "y = {y}: {exact} vs {approx}");
    }
}

#[test]
fn oracle_radius_matches_quadratic_regime() {
    let mut rng = rng_from_seed(21);
    let pop = beta_population(2.0, 5.0, 1000, &mut rng).unwrap();
    let design = SamplingDesign::new(1000, 500).unwrap();
    let opts = AsOptions::default();
    let (eps, t) = oracle_radius(&pop, &design, 0.05, &opts).unwrap();
    let model = CgfModel::from_values(pop.values(), &design, Centering::Mean).unwrap();
    let approx = (2.0 * model.curvature_at_zero() * t).sqrt() / design.beta;
    assert!((eps - approx).abs() / approx < 0.1, "{eps} vs {approx}");
}

#[test]
fn empirical_at_least_oracle_when_types_agree() {
    let mut rng = rng_from_seed(4);
    let half: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    let pop = Population::new(half.iter().chain(&half).copied().collect()).unwrap();
    let design = SamplingDesign::new(600, 300).unwrap();
    let opts = AsOptions::default();
    let oracle = ci_oracle(&pop, &half, &design, 0.05, &opts).unwrap();
    let emp = ci_empirical(&half, &design, 0.05, &opts).unwrap();
    assert!(emp.epsilon >= oracle.epsilon);
}

#[test]
fn oracle_interval_coverage() {
    let mut rng = rng_from_seed(99);
    let pop = beta_population(2.0, 5.0, 1000, &mut rng).unwrap();
    let design = SamplingDesign::new(1000, 500).unwrap();
    let (eps, _) = oracle_radius(&pop, &design, 0.05, &AsOptions::default()).unwrap();
    let trials = 10_000;
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = sample_wor(&pop, 500, trial_seed(99, t as u64)).unwrap();
            usize::from((mean(&s) - pop.mean()).abs() <= eps)
        })
        .sum();
    assert!(hits as f64 / trials as f64 >= mc_floor(trials));
}

#[test]
fn empirical_interval_coverage() {
    for big_n in [500usize, 1000] {
        let design = SamplingDesign::new(big_n, big_n / 2).unwrap();
        let trials = 2000;
        let hits: usize = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from_seed(trial_seed(big_n as u64, t as u64));
                let pop = beta_population(2.0, 5.0, big_n, &mut rng).unwrap();
                let idx = sample_indices(big_n, design.n, &mut rng);
                let s: Vec<f64> = idx.iter().map(|&i| pop.values()[i]).collect();
                let iv = ci_empirical(&s, &design, 0.05, &AsOptions::default()).unwrap();
                usize::from(iv.interval.contains(pop.mean()))
            })
            .sum();
        let freq = hits as f64 / trials as f64;
        assert!(freq >= mc_floor(trials), "N = {big_n}: coverage {freq}");
    }
}

#[test]
fn empirical_dominates_oracle_more_often_as_n_grows() {
    let freq = |big_n: usize| -> f64 {
        let design = SamplingDesign::new(big_n, big_n / 2).unwrap();
        let trials = 400;
        let hits: usize = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from_seed(trial_seed(7 + big_n as u64, t as u64));
                let pop = beta_population(2.0, 5.0, big_n, &mut rng).unwrap();
                let idx = sample_indices(big_n, design.n, &mut rng);
                let s: Vec<f64> = idx.iter().map(|&i| pop.values()[i]).collect();
                let opts = AsOptions::default();
                let emp = ci_empirical(&s, &design, 0.05, &opts).unwrap().epsilon;
                let (orc, _) = oracle_radius(&pop, &design, 0.05, &opts).unwrap();
                usize::from(emp >= orc)
            })
            .sum();
        hits as f64 / trials as f64
    };
    let f: Vec<f64> = [200, 500, 1000, 2000].iter().map(|&n| freq(n)).collect();
    assert!(f[3] >= f[0], "{f:?}");
}

#[test]
fn proposed_width_shrinks_with_n() {
    let alphabet = midpoint_alphabet(5);
    let pop = finite_population(&alphabet, &[0.1, 0.3, 0.2, 0.25, 0.15], 1000).unwrap();
    let widths: Vec<f64> = [100usize, 200, 400, 700]
        .iter()
        .map(|&n| {
            let design = SamplingDesign::new(1000, n).unwrap();
            let w: Vec<f64> = (0..40)
                .into_par_iter()
                .map(|t| {
                    let s = sample_wor(&pop, n, trial_seed(n as u64, t)).unwrap();
                    ci_proposed(&s, &alphabet, &design, 1e-3, DEFAULT_TOL).unwrap().width()
                })
                .collect();
            mean(&w)
        })
        .collect();
    assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
}

#[test]
fn lower_bound_below_mean_width() {
    let alphabet = midpoint_alphabet(4);
    let pop = finite_population(&alphabet, &[0.4, 0.3, 0.2, 0.1], 2000).unwrap();
    let dist = pop.distribution(Some(&alphabet)).unwrap();
    let design = SamplingDesign::new(2000, 800).unwrap();
    let lb = lower_bound_width(&dist, &design, 1e-6, Projection::Rounded).unwrap();
    let w: Vec<f64> = (0..40)
        .map(|t| {
            let s = sample_wor(&pop, 800, trial_seed(3, t)).unwrap();
            ci_proposed(&s, &alphabet, &design, 1e-6, DEFAULT_TOL).unwrap().half_width()
        })
        .collect();
    assert!(lb.half_width <= mean(&w), "{} vs {}", lb.half_width, mean(&w));
}

#[test]
fn exhaustive_projection_agrees_on_tiny_instance() {
    let dist = DiscreteDistribution::new(vec![0.2, 0.5, 0.9], vec![0.3, 0.4, 0.3]).unwrap();
    let design = SamplingDesign::new(40, 10).unwrap();
    let a = lower_bound_width(&dist, &design, 1e-3, Projection::Rounded).unwrap();
    let b = lower_bound_width(&dist, &design, 1e-3, Projection::Exhaustive).unwrap();
    assert!(b.half_width >= 0.0 && a.half_width >= 0.0);
    assert_eq!(b.projected.alphabet(), dist.alphabet());
}

#[test]
fn baseline_widths_nonnegative_and_vanish_at_census() {
    let big_n = 1000;
    for n in [10, 100, 500, 999, 1000] {
        let d = SamplingDesign::new(big_n, n).unwrap();
        for w in [
            width_hoeffding(&d, 0.05),
            width_hoeffding_serfling(&d, 0.05, false),
            width_hoeffding_serfling(&d, 0.05, true),
            width_bernstein_serfling(&d, 0.05, 0.2),
        ] {
            assert!(w >= 0.0);
        }
    }
    let census = SamplingDesign::new(big_n, big_n).unwrap();
    let sample: Vec<f64> = (0..big_n).map(|i| i as f64 / big_n as f64).collect();
    assert!(width_hoeffding(&census, 0.05) > 0.0);
    assert_eq!(width_hoeffding_serfling(&census, 0.05, true), 0.0);
    // Only the range term 4 ln(2/α)/(3n) survives a census.
    let residual = 4.0 * (2.0f64 / 0.05).ln() / (3.0 * big_n as f64);
    assert!((width_bernstein_serfling(&census, 0.05, 0.3) - residual).abs() < 1e-15);
    assert_eq!(width_clt(&sample, &census, 0.05).unwrap(), 0.0);
}

#[test]
fn baseline_coverage_on_beta_populations() {
    let trials = 2000;
    let big_n = 1000;
    let design = SamplingDesign::new(big_n, 500).unwrap();
    for (a, b) in [(2.0, 5.0), (5.0, 2.0)] {
        let hits: [usize; 4] = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from_seed(trial_seed(a as u64 * 31 + b as u64, t as u64));
                let pop = beta_population(a, b, big_n, &mut rng).unwrap();
                let (mu, s2) = pop.summary();
                let idx = sample_indices(big_n, design.n, &mut rng);
                let s: Vec<f64> = idx.iter().map(|&i| pop.values()[i]).collect();
                let err = (mean(&s) - mu).abs();
                [
                    usize::from(err <= width_hoeffding(&design, 0.05)),
                    usize::from(err <= width_hoeffding_serfling(&design, 0.05, false)),
                    usize::from(err <= width_hoeffding_serfling(&design, 0.05, true)),
                    usize::from(err <= width_bernstein_serfling(&design, 0.05, s2.sqrt())),
                ]
            })
            .reduce(|| [0; 4], |x, y| [x[0] + y[0], x[1] + y[1], x[2] + y[2], x[3] + y[3]]);
        for h in hits {
            assert!(h as f64 / trials as f64 >= mc_floor(trials), "Beta({a},{b}): {hits:?}");
        }
    }
}
