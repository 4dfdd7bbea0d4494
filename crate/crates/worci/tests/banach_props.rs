use proptest::prelude::*;
use rand::seq::SliceRandom;

use worci::ci_banach::{
    coupling_bound, ell_n, radius_closed_form, radius_optimized, radius_schneider, BanachParams, ClosedForm,
    ConstantMode, Kernel, KernelGram,
};
use worci::population::{rng_from_seed, sample_indices, trial_seed, SamplingDesign};
use worci::sim::gaussian_mixture;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn optimized_never_exceeds_valid_closed_form(
        big_n in 20usize..20_000,
        frac in 0.01f64..0.99,
        alpha in 1e-6f64..0.5,
        d in 0.1f64..3.0,
        big_d in 1.0f64..3.0,
    ) {
        let n = ((frac * big_n as f64).round() as usize).clamp(1, big_n - 1);
        let design = SamplingDesign::new(big_n, n).unwrap();
        let p = BanachParams::new(d, big_d, &design, alpha).unwrap();
        let opt = radius_optimized(&p, 1e-12).unwrap().epsilon;
        for mode in [ClosedForm::C3, ClosedForm::C24] {
            let (eps, valid) = radius_closed_form(&p, mode);
            if valid {
                prop_assert!(opt <= eps + 1e-9, "{mode:?}: {opt} > {eps}");
            }
        }
    }

    #[test]
    fn ratio_identity_is_exact(big_n in 50usize..50_000, beta in 0.001f64..0.999, alpha in 1e-8f64..0.5) {
        let p = BanachParams::nominal(1.0, 1.0, beta, big_n as f64, alpha).unwrap();
        prop_assume!(ell_n(&p) > 0.0);
        let (eps, _) = radius_closed_form(&p, ClosedForm::C3);
        let ratio = radius_schneider(&p) / eps;
        let bb = 1.0 - beta;
        let expected = (8.0 * (2.0 / alpha).ln() * (bb + 1.0 / big_n as f64) / (3.0 * bb * ell_n(&p))).sqrt();
        prop_assert!((ratio - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn exact_coupling_below_safe_bound() {
    for big_n in 1..=10_000usize {
        for i in 1..=9 {
            if (i * big_n) % 10 != 0 {
                continue;
            }
            let beta = i as f64 / 10.0;
            let exact = coupling_bound(big_n, beta, ConstantMode::Exact).unwrap();
            let safe = coupling_bound(big_n, beta, ConstantMode::Safe).unwrap();
            assert!(exact <= safe, "N = {big_n}, beta = {beta}: {exact} > {safe}");
        }
    }
}

#[test]
fn deviation_ignores_labels_and_row_order() {
    let mut rng = rng_from_seed(12);
    let data = gaussian_mixture(120, 3, 2, &mut rng);
    let kernel = Kernel::Rbf { lengthscale: 2.0 };
    let gram = KernelGram::new(&data, &kernel).unwrap();
    let mut sample = sample_indices(120, 40, &mut rng);
    let base = gram.deviation(&sample).unwrap();
    sample.shuffle(&mut rng);
    assert!((gram.deviation(&sample).unwrap() - base).abs() <= 1e-12);

    let mut perm: Vec<usize> = (0..120).collect();
    perm.shuffle(&mut rng);
    let mut inverse = vec![0; 120];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| data[i].clone()).collect();
    let gram2 = KernelGram::new(&permuted, &kernel).unwrap();
    let moved: Vec<usize> = sample.iter().map(|&i| inverse[i]).collect();
    assert!((gram2.deviation(&moved).unwrap() - base).abs() <= 1e-12);
}

#[test]
fn norm_ball_coverage() {
    let mut rng = rng_from_seed(31);
    let data = gaussian_mixture(400, 4, 3, &mut rng);
    let kernel = Kernel::Matern32 { lengthscale: 3.0 };
    let gram = KernelGram::new(&data, &kernel).unwrap();
    let (d, big_d) = kernel.banach_constants();
    for n in [20usize, 100, 200, 380] {
        let design = SamplingDesign::new(400, n).unwrap();
        let eps = radius_optimized(&BanachParams::new(d, big_d, &design, 0.05).unwrap(), 1e-12).unwrap().epsilon;
        for t in 0..100u64 {
            let mut r = rng_from_seed(trial_seed(n as u64, t));
            let dev = gram.deviation(&sample_indices(400, n, &mut r)).unwrap();
            assert!(dev <= eps, "n = {n}, trial {t}: {dev} > {eps}");
        }
    }
}
