//! Mean-field variational coordinate ascent for the LDLM.
//!
//! The approximating family is `q(θ) q(σ²) Π q(λ_k)` with a joint Gaussian
//! over all regression coefficients and inverse-gamma factors for the noise
//! variance and every penalized block's variance parameter. Each sweep
//! updates `Σ_q(θ)`, `μ_q(θ)`, `B_q(σ²)` and then every `B_q(λ_k)`; the lower
//! bound is evaluated after the sweep, where its closed form is exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{Block, BlockIndex, Design, DesignMatrices, ModelConfig, RandomEffect};
use crate::special::log_gamma;
use crate::{LdlmError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Converged q-density parameters of one inverse-gamma variance component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub block: Block,
    /// Posterior shape `a + K/2`.
    pub shape: f64,
    /// Posterior scale `B_q(·)`.
    pub scale: f64,
}

impl VarianceComponent {
    /// E_q[1/λ].
    pub fn precision_mean(&self) -> f64 {
        self.shape / self.scale
    }

    /// E_q[λ]; `None` when the shape does not exceed one.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariationalFit {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// `B_q(σ²)`.
    pub b_sigma2: f64,
    /// `a_e + N/2`.
    pub shape_sigma2: f64,
    /// One entry per penalized block: λ₀, λ₁ (crossover) or λ_γ, then λ_g or σ_u².
    pub components: Vec<VarianceComponent>,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub block_index: BlockIndex,
    pub config: ModelConfig,
    pub num_rows: usize,
}

impl VariationalFit {
    /// E_q[1/σ²] = (a_e + N/2) / B_q(σ²).
    pub fn noise_precision(&self) -> f64 {
        self.shape_sigma2 / self.b_sigma2
    }

    /// Inverse-gamma mean of σ², `B_q(σ²) / (a_e + N/2 - 1)`.
    pub fn sigma2_mean(&self) -> Result<f64> {
        let shape = self.shape_sigma2 - 1.0;
        if shape <= 0.0 {
            return Err(LdlmError::Domain(format!(
                "noise variance mean undefined for shape {}",
                self.shape_sigma2
            )));
        }
        Ok(self.b_sigma2 / shape)
    }

    pub fn component(&self, block: Block) -> Option<&VarianceComponent> {
        self.components.iter().find(|c| c.block == block)
    }

    pub fn block_mean(&self, block: Block) -> Result<DVector<f64>> {
        let r = self.block_index.require(block)?;
        Ok(self.mu.rows(r.start, r.len()).into_owned())
    }

    pub fn block_cov(&self, a: Block, b: Block) -> Result<DMatrix<f64>> {
        let ra = self.block_index.require(a)?;
        let rb = self.block_index.require(b)?;
        Ok(self.sigma.view((ra.start, rb.start), (ra.len(), rb.len())).into_owned())
    }

    pub fn elbo(&self) -> Option<f64> {
        self.elbo_trace.last().copied()
    }
}

/// Current variational parameters, as consumed by [`elbo`].
#[derive(Debug, Clone)]
pub struct VbState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub b_sigma2: f64,
    /// `B_q(λ_k)` aligned with `DesignMatrices::penalty_blocks`.
    pub b_lambda: Vec<f64>,
}

fn check_consistent(dm: &DesignMatrices, config: &ModelConfig) -> Result<()> {
    let idx = &dm.block_index;
    let fixed_ok = match config.design {
        Design::Crossover => idx.get(Block::Gamma0).is_some() && idx.get(Block::Gamma1).is_some(),
        Design::Longitudinal => idx.get(Block::Gamma).is_some(),
    };
    let random = idx.require(Block::Random)?;
    let random_ok = match config.random_effect {
        RandomEffect::Intercept => random.len() == dm.num_subjects,
        RandomEffect::Lag => random.len() == dm.num_subjects * config.random_basis,
    };
    if !fixed_ok || !random_ok || idx.total() != dm.c.ncols() || dm.y.len() != dm.c.nrows() {
        return Err(LdlmError::Contract(
            "design matrices were not assembled for this configuration".into(),
        ));
    }
    Ok(())
}

fn block_dim(dm: &DesignMatrices, block: Block) -> usize {
    dm.block_index.get(block).map_or(0, |r| r.len())
}

struct Precomputed {
    ctc: DMatrix<f64>,
    cty: DVector<f64>,
}

fn update_theta(
    dm: &DesignMatrices,
    config: &ModelConfig,
    pre: &Precomputed,
    shape_sigma2: f64,
    b_sigma2: f64,
    b_lambda: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let e_prec = shape_sigma2 / b_sigma2;
    let mut precision = &pre.ctc * e_prec;
    if let Some(beta) = dm.block_index.get(Block::Beta) {
        for i in beta {
            precision[(i, i)] += 1.0 / config.sigma_b2;
        }
    }
    for (pb, b) in dm.penalty_blocks.iter().zip(b_lambda) {
        let r = dm.block_index.require(pb.block)?;
        let weight = (pb.a + 0.5 * r.len() as f64) / b;
        let mut view = precision.view_mut((r.start, r.start), (r.len(), r.len()));
        view += &pb.penalty * weight;
    }
    let chol = precision.cholesky().ok_or_else(|| {
        LdlmError::NotPositiveDefinite("variational precision of θ (degenerate design)".into())
    })?;
    let inv = chol.inverse();
    let sigma = (&inv + inv.transpose()) * 0.5;
    let mu = &sigma * (&pre.cty * e_prec);
    Ok((sigma, mu))
}

/// Starting state used by [`fit`]: `μ = 0`, `Σ = I` and every scale `B = 1`.
pub fn initial_state(dm: &DesignMatrices) -> VbState {
    VbState {
        mu: DVector::zeros(dm.c.ncols()),
        sigma: DMatrix::identity(dm.c.ncols(), dm.c.ncols()),
        b_sigma2: 1.0,
        b_lambda: vec![1.0; dm.penalty_blocks.len()],
    }
}

/// One `q(θ)` update against the scales held in `state`; the scales are kept.
pub fn step_theta(dm: &DesignMatrices, config: &ModelConfig, state: &VbState) -> Result<VbState> {
    check_consistent(dm, config)?;
    let pre = Precomputed {
        ctc: dm.c.tr_mul(&dm.c),
        cty: dm.c.tr_mul(&dm.y),
    };
    let shape_sigma2 = config.priors.a_e + 0.5 * dm.num_rows() as f64;
    let (sigma, mu) = update_theta(dm, config, &pre, shape_sigma2, state.b_sigma2, &state.b_lambda)?;
    Ok(VbState {
        mu,
        sigma,
        b_sigma2: state.b_sigma2,
        b_lambda: state.b_lambda.clone(),
    })
}

/// Runs coordinate ascent until the lower bound changes by less than `config.tol`.
///
/// Hitting `max_iter` is not an error: the fit comes back with `converged = false`.
/// On exit `Σ_q(θ)` and `μ_q(θ)` are refreshed once more against the final
/// variance-component scales, so `μ = E[1/σ²] Σ CᵀY` holds exactly for the
/// returned state.
pub fn fit(dm: &DesignMatrices, config: &ModelConfig) -> Result<VariationalFit> {
    config.validate()?;
    check_consistent(dm, config)?;
    let n_rows = dm.num_rows();
    let pre = Precomputed {
        ctc: dm.c.tr_mul(&dm.c),
        cty: dm.c.tr_mul(&dm.y),
    };
    let shape_sigma2 = config.priors.a_e + 0.5 * n_rows as f64;

    let mut state = initial_state(dm);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let (sigma, mu) =
            update_theta(dm, config, &pre, shape_sigma2, state.b_sigma2, &state.b_lambda)?;
        state.sigma = sigma;
        state.mu = mu;

        let resid = &dm.y - &dm.c * &state.mu;
        state.b_sigma2 =
            config.priors.b_e + 0.5 * (resid.norm_squared() + pre.ctc.dot(&state.sigma));

        state.b_lambda = dm
            .penalty_blocks
            .iter()
            .map(|pb| penalty_scale(&state, dm, pb))
            .collect::<Result<_>>()?;

        let value = elbo(&state, dm, config)?;
        let delta = trace.last().map(|prev: &f64| value - prev);
        trace.push(value);
        if let Some(d) = delta {
            if d.abs() < config.tol {
                converged = true;
                break;
            }
        }
    }

    let (sigma, mu) =
        update_theta(dm, config, &pre, shape_sigma2, state.b_sigma2, &state.b_lambda)?;

    let components = dm
        .penalty_blocks
        .iter()
        .zip(&state.b_lambda)
        .map(|(pb, b)| VarianceComponent {
            block: pb.block,
            shape: pb.a + 0.5 * block_dim(dm, pb.block) as f64,
            scale: *b,
        })
        .collect();

    Ok(VariationalFit {
        mu,
        sigma,
        b_sigma2: state.b_sigma2,
        shape_sigma2,
        components,
        elbo_trace: trace,
        iterations,
        converged,
        block_index: dm.block_index.clone(),
        config: config.clone(),
        num_rows: n_rows,
    })
}

// b + ½[μᵀPμ + tr(PΣ)] over the block.
fn penalty_scale(
    state: &VbState,
    dm: &DesignMatrices,
    pb: &crate::data_model::PenaltyBlock,
) -> Result<f64> {
    let r = dm.block_index.require(pb.block)?;
    let mu = state.mu.rows(r.start, r.len());
    let sig = state.sigma.view((r.start, r.start), (r.len(), r.len()));
    let quad = mu.dot(&(&pb.penalty * mu));
    let trace = pb.penalty.dot(&sig);
    Ok(pb.b + 0.5 * (quad + trace))
}

fn ig_line(a: f64, b: f64, dim: f64, scale: f64) -> Result<f64> {
    let shape = a + 0.5 * dim;
    Ok(a * b.ln() - shape * scale.ln() + log_gamma(shape)? - log_gamma(a)?)
}

/// Closed-form log lower bound `log p̲(Y; q)`.
///
/// Only exact when every `B` in `state` is at its optimum for the current
/// `μ` and `Σ` (i.e. right after a full sweep). The noise line carries
/// `-a_e log b_e`, a constant offset relative to the full bound.
pub fn elbo(state: &VbState, dm: &DesignMatrices, config: &ModelConfig) -> Result<f64> {
    let q = dm.c.ncols() as f64;
    let n = dm.num_rows() as f64;
    let pr = &config.priors;
    let chol = state.sigma.clone().cholesky().ok_or_else(|| {
        LdlmError::NotPositiveDefinite("Σ_q(θ) has no Cholesky factor".into())
    })?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    if !logdet.is_finite() {
        return Err(LdlmError::NotPositiveDefinite("log|Σ_q(θ)| is not finite".into()));
    }

    let p = block_dim(dm, Block::Beta);
    let mut value = 0.5 * q - 0.5 * n * LN_2PI + 0.5 * logdet;
    if let Some(beta) = dm.block_index.get(Block::Beta) {
        let mu_b = state.mu.rows(beta.start, beta.len());
        let tr_b: f64 = beta.clone().map(|i| state.sigma[(i, i)]).sum();
        value -= 0.5 * p as f64 * config.sigma_b2.ln();
        value -= (mu_b.norm_squared() + tr_b) / (2.0 * config.sigma_b2);
    }

    let shape_e = pr.a_e + 0.5 * n;
    value += -pr.a_e * pr.b_e.ln() - shape_e * state.b_sigma2.ln() + log_gamma(shape_e)?
        - log_gamma(pr.a_e)?;

    for (pb, b) in dm.penalty_blocks.iter().zip(&state.b_lambda) {
        value += ig_line(pb.a, pb.b, block_dim(dm, pb.block) as f64, *b)?;
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{build_design, LdlmDataset, Occasion, Subject};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(n: usize, ell: usize, zero_y: bool, seed: u64) -> LdlmDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LdlmDataset {
            subjects: (0..n)
                .map(|i| Subject {
                    id: i.to_string(),
                    occasions: (0..2)
                        .map(|j| {
                            let lags: Vec<f64> = (0..ell).map(|_| rng.sample(StandardNormal)).collect();
                            let x: f64 = rng.sample(StandardNormal);
                            let signal: f64 = lags.iter().sum::<f64>() * 0.3 + x;
                            Occasion {
                                index: j,
                                y: if zero_y { 0.0 } else { signal + 0.2 * rng.sample::<f64, _>(StandardNormal) },
                                x: vec![x],
                                lags,
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn small_config(re: RandomEffect) -> ModelConfig {
        let mut cfg = ModelConfig::new(Design::Crossover, re);
        cfg.num_basis = 2;
        cfg.random_basis = 2;
        cfg
    }

    #[test]
    fn zero_outcome_gives_zero_mean() {
        let data = dataset(2, 4, true, 1);
        for re in [RandomEffect::Intercept, RandomEffect::Lag] {
            let cfg = small_config(re);
            let dm = build_design(&data, &cfg).unwrap();
            let f = fit(&dm, &cfg).unwrap();
            assert!(f.mu.amax() < 1e-8, "{re}: {}", f.mu.amax());
            assert!(f.elbo().unwrap().is_finite());
        }
    }

    #[test]
    fn zero_outcome_is_deterministic() {
        let data = dataset(3, 4, true, 2);
        let cfg = small_config(RandomEffect::Intercept);
        let dm = build_design(&data, &cfg).unwrap();
        let a = fit(&dm, &cfg).unwrap();
        let b = fit(&dm, &cfg).unwrap();
        assert_eq!(a.elbo_trace, b.elbo_trace);
    }

    #[test]
    fn elbo_monotone_and_converges() {
        for (seed, re) in [(3, RandomEffect::Intercept), (4, RandomEffect::Lag)] {
            let data = dataset(6, 5, false, seed);
            let cfg = small_config(re);
            let dm = build_design(&data, &cfg).unwrap();
            let f = fit(&dm, &cfg).unwrap();
            assert!(f.converged);
            for w in f.elbo_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
            let n = f.elbo_trace.len();
            assert!((f.elbo_trace[n - 1] - f.elbo_trace[n - 2]).abs() < cfg.tol);
        }
    }

    #[test]
    fn fixed_point_of_mean_update() {
        let data = dataset(5, 6, false, 5);
        let cfg = small_config(RandomEffect::Lag);
        let dm = build_design(&data, &cfg).unwrap();
        let f = fit(&dm, &cfg).unwrap();
        let again = &f.sigma * (dm.c.tr_mul(&dm.y) * f.noise_precision());
        assert!((&again - &f.mu).amax() < 1e-10);
    }

    #[test]
    fn covariance_is_symmetric_pd_and_scales_positive() {
        let data = dataset(5, 6, false, 6);
        let cfg = small_config(RandomEffect::Intercept);
        let dm = build_design(&data, &cfg).unwrap();
        let f = fit(&dm, &cfg).unwrap();
        assert_eq!(f.sigma, f.sigma.transpose());
        assert!(f.sigma.clone().cholesky().is_some());
        assert!(f.b_sigma2 > 0.0);
        assert!(f.components.iter().all(|c| c.scale > 0.0));
        assert_eq!(f.components.len(), 3);
    }

    #[test]
    fn reports_non_convergence_without_error() {
        let data = dataset(5, 6, false, 7);
        let mut cfg = small_config(RandomEffect::Intercept);
        cfg.max_iter = 2;
        let dm = build_design(&data, &cfg).unwrap();
        let f = fit(&dm, &cfg).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 2);
    }

    #[test]
    fn rejects_mismatched_config() {
        let data = dataset(3, 4, false, 8);
        let cfg = small_config(RandomEffect::Intercept);
        let dm = build_design(&data, &cfg).unwrap();
        let other = small_config(RandomEffect::Lag);
        assert!(matches!(fit(&dm, &other), Err(LdlmError::Contract(_))));
    }
}
