mod common;

use common::{random_crossover, toy_instances};
use ldlm_core::data_model::{build_design, Design, RandomEffect};
use ldlm_core::inference::{
    difference_curve, null_covariance, pointwise_interval, satterthwaite, simultaneous_band, smoother_matrices,
    zls_p_value, zls_test,
};
use ldlm_core::simstudy::{simulate_dataset, SimConfig};
use ldlm_core::special::normal_quantile;
use ldlm_core::vb::fit;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn assert_smoother_exact(fit_: &ldlm_core::vb::VariationalFit, dm: &ldlm_core::data_model::DesignMatrices, theta: &DMatrix<f64>, label: &str) {
    let (c0, c1) = smoother_matrices(fit_, dm, theta).unwrap();
    let curve = difference_curve(fit_, theta).unwrap();
    let y0 = &c0 * &dm.y;
    let y1 = &c1 * &dm.y;
    for t in 0..theta.nrows() {
        assert!((y0[t] - curve.gamma0_hat[t]).abs() < 1e-8, "{label} γ₀ lag {t}");
        assert!((y1[t] - curve.gamma1_hat[t]).abs() < 1e-8, "{label} γ₁ lag {t}");
    }
}

#[test]
fn smoother_reproduces_fitted_curves_on_toy_fits() {
    for toy in toy_instances().into_iter().filter(|t| t.config.design == Design::Crossover) {
        let f = fit(&toy.dm, &toy.config).unwrap();
        let theta = toy.config.fixed_basis(toy.ell).unwrap();
        assert_smoother_exact(&f, &toy.dm, &theta, toy.name);
    }
}

#[test]
fn smoother_reproduces_fitted_curves_on_simulated_fits() {
    for (true_model, kg) in [(RandomEffect::Intercept, 8), (RandomEffect::Lag, 1)] {
        let sim = SimConfig { true_model, n: 12, ell: 30, ..SimConfig::default() };
        let data = simulate_dataset(&sim, 3).unwrap();
        for re in [RandomEffect::Intercept, RandomEffect::Lag] {
            let mut cfg = sim.model_for(re);
            cfg.random_basis = kg;
            let dm = build_design(&data, &cfg).unwrap();
            let f = fit(&dm, &cfg).unwrap();
            let theta = cfg.fixed_basis(sim.ell).unwrap();
            assert_smoother_exact(&f, &dm, &theta, &format!("{true_model}/{re}"));
        }
    }
}

#[test]
fn zls_moments_match_explicit_sum_over_lags() {
    let toy = random_crossover(RandomEffect::Intercept, 8, 5, 1.0, 9);
    let f = fit(&toy.dm, &toy.config).unwrap();
    let theta = toy.config.fixed_basis(toy.ell).unwrap();
    let (c0, c1) = smoother_matrices(&f, &toy.dm, &theta).unwrap();
    let n = toy.dm.num_rows();
    let mut s = DMatrix::zeros(n, n);
    for t in 0..toy.ell {
        let c = (c1.row(t) - c0.row(t)).transpose();
        s += &c * c.transpose();
    }
    let v = null_covariance(&f, &toy.dm).unwrap();
    let sv = &s * &v;
    let z = zls_test(&f, &toy.dm, &theta).unwrap();
    let g = (toy.dm.y.transpose() * &s * &toy.dm.y)[(0, 0)];
    assert!((z.g - g).abs() < 1e-9 * g.max(1.0));
    assert!((z.e - sv.trace()).abs() < 1e-9 * z.e);
    assert!((z.psi - 2.0 * (&sv * &sv).trace()).abs() < 1e-9 * z.psi);
    assert!((z.p_value - zls_p_value(g / z.kappa, z.nu).unwrap()).abs() < 1e-15);
}

#[test]
fn single_lag_band_reduces_to_normal_quantile() {
    // one lag: a single row of the basis
    let toy = random_crossover(RandomEffect::Intercept, 6, 4, 1.0, 4);
    let f = fit(&toy.dm, &toy.config).unwrap();
    let theta = toy.config.fixed_basis(toy.ell).unwrap().rows(2, 1).into_owned();
    let curve = difference_curve(&f, &theta).unwrap();
    let band = simultaneous_band(&f, &curve, &theta, 0.05, 10_000, 21).unwrap();
    assert!((band.m_crit - 1.959964).abs() < 0.03, "{}", band.m_crit);
}

#[test]
fn simultaneous_band_is_wider_at_every_lag() {
    let toy = random_crossover(RandomEffect::Lag, 12, 6, 1.0, 8);
    let f = fit(&toy.dm, &toy.config).unwrap();
    let theta = toy.config.fixed_basis(toy.ell).unwrap();
    let curve = difference_curve(&f, &theta).unwrap();
    let pw = pointwise_interval(&curve, 0.05).unwrap();
    let band = simultaneous_band(&f, &curve, &theta, 0.05, 10_000, 2).unwrap();
    for t in 0..toy.ell {
        assert!(band.band.upper[t] > pw.upper[t] && band.band.lower[t] < pw.lower[t], "lag {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn band_dominates_pointwise(
        seed in 0u64..10_000,
        ell in 2usize..15,
        k in 3usize..6,
        alpha in 0.01f64..0.2,
        lag_model in any::<bool>(),
    ) {
        let re = if lag_model { RandomEffect::Lag } else { RandomEffect::Intercept };
        let toy = random_crossover(re, ell, k.min(ell + 2), 1.0, seed);
        let f = fit(&toy.dm, &toy.config).unwrap();
        let theta = toy.config.fixed_basis(ell).unwrap();
        let curve = difference_curve(&f, &theta).unwrap();
        let pw = pointwise_interval(&curve, alpha).unwrap();
        let band = simultaneous_band(&f, &curve, &theta, alpha, 2_000, seed).unwrap();
        prop_assert!(band.m_crit >= normal_quantile(1.0 - alpha / 2.0).unwrap());
        for t in 0..ell {
            prop_assert!(band.band.lower[t] <= pw.lower[t] && pw.upper[t] <= band.band.upper[t]);
        }
    }

    #[test]
    fn satterthwaite_identities(e in 1e-6f64..1e6, psi in 1e-6f64..1e6) {
        let (kappa, nu) = satterthwaite(e, psi).unwrap();
        prop_assert!((kappa - psi / (2.0 * e)).abs() <= 1e-12 * kappa);
        prop_assert!((nu - 2.0 * e * e / psi).abs() <= 1e-12 * nu);
        // κχ²_ν has mean e and variance ψ
        prop_assert!((kappa * nu - e).abs() <= 1e-12 * e);
        prop_assert!((2.0 * kappa * kappa * nu - psi).abs() <= 1e-11 * psi);
    }

    #[test]
    fn inference_is_deterministic(seed in 0u64..10_000) {
        let toy = random_crossover(RandomEffect::Intercept, 6, 4, 1.0, seed);
        let a = fit(&toy.dm, &toy.config).unwrap();
        let b = fit(&toy.dm, &toy.config).unwrap();
        prop_assert_eq!(&a.elbo_trace, &b.elbo_trace);
        let theta = toy.config.fixed_basis(toy.ell).unwrap();
        let curve = difference_curve(&a, &theta).unwrap();
        let band_a = simultaneous_band(&a, &curve, &theta, 0.05, 500, seed).unwrap();
        let band_b = simultaneous_band(&b, &curve, &theta, 0.05, 500, seed).unwrap();
        prop_assert_eq!(band_a, band_b);
        prop_assert_eq!(zls_test(&a, &toy.dm, &theta).unwrap(), zls_test(&b, &toy.dm, &theta).unwrap());
    }
}
