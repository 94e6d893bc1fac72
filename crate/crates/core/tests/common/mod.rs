#![allow(dead_code)]

use ldlm_core::data_model::{build_design, Design, DesignMatrices, LdlmDataset, ModelConfig, Occasion, RandomEffect, Subject};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

pub struct Toy {
    pub name: &'static str,
    pub config: ModelConfig,
    pub dm: DesignMatrices,
    pub ell: usize,
}

pub struct ToySpec {
    pub name: &'static str,
    pub design: Design,
    pub random_effect: RandomEffect,
    pub subjects: usize,
    pub occasions: usize,
    pub ell: usize,
    pub covariates: usize,
    pub num_basis: usize,
    pub random_basis: usize,
    pub noise_sd: f64,
    /// Multiplies every simulated effect.
    pub signal: f64,
    pub seed: u64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Exposures and covariates are white noise; the response is drawn from the
/// model itself, with every coefficient of size `signal`.
pub fn toy(spec: ToySpec) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<i64> = match spec.design {
        Design::Crossover => vec![0, 1],
        Design::Longitudinal => (1..=spec.occasions as i64).collect(),
    };
    let data = LdlmDataset {
        subjects: (0..spec.subjects)
            .map(|i| Subject {
                id: format!("t{i}"),
                occasions: labels
                    .iter()
                    .map(|&j| Occasion {
                        index: j,
                        y: 0.0,
                        x: (0..spec.covariates).map(|_| normal(&mut rng)).collect(),
                        lags: (0..spec.ell).map(|_| normal(&mut rng)).collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut config = ModelConfig::new(spec.design, spec.random_effect);
    config.num_basis = spec.num_basis;
    config.random_basis = spec.random_basis;
    config.tol = 1e-12;
    config.max_iter = 20_000;
    let mut dm = build_design(&data, &config).unwrap();
    let theta = DVector::from_fn(dm.c.ncols(), |_, _| spec.signal * normal(&mut rng));
    let noise = DVector::from_fn(dm.num_rows(), |_, _| spec.noise_sd * normal(&mut rng));
    dm.y = &dm.c * theta + noise;
    Toy { name: spec.name, config, dm, ell: spec.ell }
}

/// Small crossover instance for randomized property checks.
pub fn random_crossover(random_effect: RandomEffect, ell: usize, num_basis: usize, signal: f64, seed: u64) -> Toy {
    toy(ToySpec { name: "random-crossover", design: Design::Crossover, random_effect, subjects: 6, occasions: 2, ell, covariates: 1, num_basis, random_basis: 1, noise_sd: 0.5, signal, seed })
}

/// Crossover random intercept with four subjects and four lags.
pub fn crossover_intercept_n4() -> Toy {
    toy(ToySpec { name: "crossover-intercept-n4", design: Design::Crossover, random_effect: RandomEffect::Intercept, subjects: 4, occasions: 2, ell: 4, covariates: 0, num_basis: 1, random_basis: 1, noise_sd: 0.01, signal: 10.0, seed: 1 })
}

/// Five data-dominated instances with N ≤ 20 and q ≤ 15.
pub fn toy_instances() -> Vec<Toy> {
    use Design::*;
    use RandomEffect::*;
    let specs = [
        ToySpec { name: "crossover-intercept", design: Crossover, random_effect: Intercept, subjects: 9, occasions: 2, ell: 5, covariates: 1, num_basis: 2, random_basis: 1, noise_sd: 0.01, signal: 30.0, seed: 2 },
        ToySpec { name: "crossover-lag", design: Crossover, random_effect: Lag, subjects: 7, occasions: 2, ell: 4, covariates: 1, num_basis: 2, random_basis: 1, noise_sd: 0.01, signal: 10.0, seed: 5 },
        ToySpec { name: "longitudinal-intercept", design: Longitudinal, random_effect: Intercept, subjects: 4, occasions: 4, ell: 6, covariates: 2, num_basis: 4, random_basis: 1, noise_sd: 0.01, signal: 10.0, seed: 3 },
        ToySpec { name: "longitudinal-intercept-k3", design: Longitudinal, random_effect: Intercept, subjects: 4, occasions: 5, ell: 6, covariates: 1, num_basis: 3, random_basis: 1, noise_sd: 0.01, signal: 10.0, seed: 6 },
        ToySpec { name: "longitudinal-lag", design: Longitudinal, random_effect: Lag, subjects: 5, occasions: 4, ell: 5, covariates: 1, num_basis: 3, random_basis: 1, noise_sd: 0.01, signal: 10.0, seed: 4 },
    ];
    specs.into_iter().map(toy).collect()
}

pub struct GibbsSummary {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// Batch-means Monte-Carlo standard error of each posterior mean.
    pub mc_se: DVector<f64>,
}

fn inverse_gamma(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> f64 {
    let g: f64 = rng.sample(Gamma::new(shape, 1.0).unwrap());
    scale / g
}

/// Gibbs sampler for the same hierarchical model the variational fit targets.
pub fn gibbs(toy: &Toy, draws: usize, burn_in: usize, batches: usize, seed: u64) -> GibbsSummary {
    let dm = &toy.dm;
    let cfg = &toy.config;
    let q = dm.c.ncols();
    let n = dm.num_rows() as f64;
    let ctc = dm.c.tr_mul(&dm.c);
    let cty = dm.c.tr_mul(&dm.y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sigma2 = 1.0;
    let mut lambdas = vec![1.0; dm.penalty_blocks.len()];

    let mut sum = DVector::zeros(q);
    let mut sum_sq = DVector::zeros(q);
    let per_batch = draws / batches;
    let mut batch_means = DMatrix::zeros(q, batches);

    for it in 0..(burn_in + per_batch * batches) {
        let mut prec = &ctc / sigma2;
        if let Some(r) = dm.block_index.get(ldlm_core::data_model::Block::Beta) {
            for i in r {
                prec[(i, i)] += 1.0 / cfg.sigma_b2;
            }
        }
        for (pb, lam) in dm.penalty_blocks.iter().zip(&lambdas) {
            let r = dm.block_index.require(pb.block).unwrap();
            let mut view = prec.view_mut((r.start, r.start), (r.len(), r.len()));
            view += &pb.penalty / *lam;
        }
        let chol = prec.cholesky().expect("conditional precision is PD");
        let mean = chol.solve(&(&cty / sigma2));
        let z = DVector::from_fn(q, |_, _| normal(&mut rng));
        // L Lᵀ = Q, so Lᵀ x = z gives x ~ N(0, Q⁻¹)
        let dev = chol.l().transpose().solve_upper_triangular(&z).unwrap();
        let theta = mean + dev;

        let resid = &dm.y - &dm.c * &theta;
        sigma2 = inverse_gamma(&mut rng, cfg.priors.a_e + 0.5 * n, cfg.priors.b_e + 0.5 * resid.norm_squared());
        for (pb, lam) in dm.penalty_blocks.iter().zip(lambdas.iter_mut()) {
            let r = dm.block_index.require(pb.block).unwrap();
            let t = theta.rows(r.start, r.len());
            let quad = t.dot(&(&pb.penalty * t));
            *lam = inverse_gamma(&mut rng, pb.a + 0.5 * r.len() as f64, pb.b + 0.5 * quad);
        }

        if it >= burn_in {
            let k = it - burn_in;
            sum += &theta;
            sum_sq += theta.component_mul(&theta);
            let mut col = batch_means.column_mut(k / per_batch);
            col += &theta / per_batch as f64;
        }
    }
    let total = (per_batch * batches) as f64;
    let mean = &sum / total;
    let variance = DVector::from_fn(q, |i, _| sum_sq[i] / total - mean[i] * mean[i]);
    let mc_se = DVector::from_fn(q, |i, _| {
        let row = batch_means.row(i);
        let m = row.mean();
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        (var / batches as f64).sqrt()
    });
    GibbsSummary { mean, variance, mc_se }
}

/// Non-decreasing within the stated slack.
pub fn monotone(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - slack)
}
