//! Interval estimation and the global test for lag curves.
//!
//! Everything here is computed from a converged [`VariationalFit`]; nothing
//! refits. Curve variances come from `Θ Σ_q Θᵀ` blocks. The global test
//! writes each estimated difference `δ̂(t)` as a linear smoother `c(t)ᵀY`
//! using the fixed point `μ = E[1/σ²] Σ CᵀY` and matches the quadratic form
//! `YᵀSY` to a scaled chi-squared.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{Block, Design, DesignMatrices, RandomEffect};
use crate::special::{chi_squared_sf, normal_quantile};
use crate::vb::VariationalFit;
use crate::{LdlmError, Result};

/// Eigenvalues of a non-PD draw covariance are clipped to this floor.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurve {
    pub delta_hat: Vec<f64>,
    pub sd: Vec<f64>,
    pub gamma0_hat: Vec<f64>,
    pub gamma1_hat: Vec<f64>,
}

/// A single data-space lag curve with point-wise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate {
    pub estimate: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Interval {
    pub fn covers(&self, t: usize, value: f64) -> bool {
        self.lower[t] <= value && value <= self.upper[t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousBand {
    pub band: Interval,
    /// Monte-Carlo `(1 - α)` quantile of the maximal standardized deviation.
    pub m_crit: f64,
    pub n_draws: usize,
    /// True when the joint covariance needed eigenvalue clipping.
    pub clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZlsResult {
    /// `G = YᵀSY`.
    pub g: f64,
    /// Approximate null mean of G, `tr(SV)`.
    pub e: f64,
    /// Approximate null variance of G, `2 tr((SV)²)`.
    pub psi: f64,
    pub kappa: f64,
    pub nu: f64,
    /// `G / κ`, the statistic referred to `χ²_ν`.
    pub scaled_statistic: f64,
    pub p_value: f64,
}

fn require_crossover(fit: &VariationalFit) -> Result<()> {
    if fit.config.design != Design::Crossover {
        return Err(LdlmError::Contract(
            "difference curves exist only for crossover fits".into(),
        ));
    }
    Ok(())
}

fn check_theta(fit: &VariationalFit, theta: &DMatrix<f64>) -> Result<()> {
    let k = fit
        .block_index
        .get(Block::Gamma0)
        .or_else(|| fit.block_index.get(Block::Gamma))
        .map_or(0, |r| r.len());
    if theta.ncols() != k {
        return Err(LdlmError::InvalidConfig(format!(
            "basis has {} columns but the fixed lag block has {k}",
            theta.ncols()
        )));
    }
    Ok(())
}

// diag(Θ A Θᵀ) without forming the ℓ × ℓ product.
fn projected_diag(theta: &DMatrix<f64>, a: &DMatrix<f64>) -> DVector<f64> {
    let ta = theta * a;
    DVector::from_fn(theta.nrows(), |t, _| ta.row(t).dot(&theta.row(t)))
}

/// `Var[δ(t)] = Var[γ₁(t)] + Var[γ₀(t)] − 2 Cov[γ₁(t), γ₀(t)]` from spline-space blocks.
pub fn difference_sd(
    theta: &DMatrix<f64>,
    cov00: &DMatrix<f64>,
    cov11: &DMatrix<f64>,
    cov01: &DMatrix<f64>,
) -> Vec<f64> {
    let v0 = projected_diag(theta, cov00);
    let v1 = projected_diag(theta, cov11);
    let c01 = projected_diag(theta, cov01);
    (0..theta.nrows())
        .map(|t| (v1[t] + v0[t] - 2.0 * c01[t]).max(0.0).sqrt())
        .collect()
}

pub fn difference_curve(fit: &VariationalFit, theta: &DMatrix<f64>) -> Result<DifferenceCurve> {
    require_crossover(fit)?;
    check_theta(fit, theta)?;
    let g0 = theta * fit.block_mean(Block::Gamma0)?;
    let g1 = theta * fit.block_mean(Block::Gamma1)?;
    let sd = difference_sd(
        theta,
        &fit.block_cov(Block::Gamma0, Block::Gamma0)?,
        &fit.block_cov(Block::Gamma1, Block::Gamma1)?,
        &fit.block_cov(Block::Gamma0, Block::Gamma1)?,
    );
    Ok(DifferenceCurve {
        delta_hat: g1.iter().zip(g0.iter()).map(|(a, b)| a - b).collect(),
        sd,
        gamma0_hat: g0.iter().copied().collect(),
        gamma1_hat: g1.iter().copied().collect(),
    })
}

/// Data-space estimate of one fixed lag block (`γ`, `γ₀` or `γ₁`).
pub fn lag_curve(fit: &VariationalFit, theta: &DMatrix<f64>, block: Block) -> Result<CurveEstimate> {
    check_theta(fit, theta)?;
    if !matches!(block, Block::Gamma | Block::Gamma0 | Block::Gamma1) {
        return Err(LdlmError::Contract(format!("{block:?} is not a lag curve block")));
    }
    let est = theta * fit.block_mean(block)?;
    let var = projected_diag(theta, &fit.block_cov(block, block)?);
    Ok(CurveEstimate {
        estimate: est.iter().copied().collect(),
        sd: var.iter().map(|v| v.max(0.0).sqrt()).collect(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(LdlmError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `estimate ± z_{1-α/2} sd` at every lag.
pub fn gaussian_interval(estimate: &[f64], sd: &[f64], alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    let z = normal_quantile(1.0 - 0.5 * alpha)?;
    Ok(scaled_interval(estimate, sd, z))
}

fn scaled_interval(estimate: &[f64], sd: &[f64], mult: f64) -> Interval {
    Interval {
        lower: estimate.iter().zip(sd).map(|(e, s)| e - mult * s).collect(),
        upper: estimate.iter().zip(sd).map(|(e, s)| e + mult * s).collect(),
    }
}

pub fn pointwise_interval(curve: &DifferenceCurve, alpha: f64) -> Result<Interval> {
    gaussian_interval(&curve.delta_hat, &curve.sd, alpha)
}

/// Lower-triangular factor of a covariance, clipping eigenvalues if needed.
fn draw_factor(cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(chol) = cov.clone().cholesky() {
        return (chol.l(), false);
    }
    let eig = cov.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR).sqrt());
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt);
    (factor, true)
}

/// `(1 - α)` empirical quantile: the `⌈(1-α) n⌉`-th order statistic.
fn upper_quantile(mut values: Vec<f64>, alpha: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((1.0 - alpha) * n as f64).ceil() as usize;
    values[rank.clamp(1, n) - 1]
}

/// Monte-Carlo simultaneous band `δ̂ ± m_{1-α} sd`.
///
/// Draws `(γ₀ˢ, γ₁ˢ)` errors from their joint q-density, maps each draw to
/// the data-space difference and records `max_t |δ_err(t)| / sd(t)`. Lags
/// with zero standard deviation are skipped in the maximum.
pub fn simultaneous_band(
    fit: &VariationalFit,
    curve: &DifferenceCurve,
    theta: &DMatrix<f64>,
    alpha: f64,
    n_draws: usize,
    seed: u64,
) -> Result<SimultaneousBand> {
    require_crossover(fit)?;
    check_theta(fit, theta)?;
    check_alpha(alpha)?;
    if n_draws == 0 {
        return Err(LdlmError::InvalidConfig("n_draws must be positive".into()));
    }
    let r0 = fit.block_index.require(Block::Gamma0)?;
    let r1 = fit.block_index.require(Block::Gamma1)?;
    let k = r0.len();
    let idx: Vec<usize> = r0.chain(r1).collect();
    let joint = DMatrix::from_fn(2 * k, 2 * k, |i, j| fit.sigma[(idx[i], idx[j])]);

    // Difference operator in spline space, mapped to lags.
    let mut diff_op = DMatrix::zeros(theta.nrows(), 2 * k);
    diff_op.view_mut((0, 0), (theta.nrows(), k)).copy_from(&(-theta));
    diff_op.view_mut((0, k), (theta.nrows(), k)).copy_from(theta);
    monte_carlo_band(&curve.delta_hat, &curve.sd, &joint, &diff_op, alpha, n_draws, seed)
}

/// Simultaneous band for a single lag curve, e.g. `γ` of a longitudinal fit.
pub fn lag_curve_band(
    fit: &VariationalFit,
    curve: &CurveEstimate,
    theta: &DMatrix<f64>,
    block: Block,
    alpha: f64,
    n_draws: usize,
    seed: u64,
) -> Result<SimultaneousBand> {
    check_theta(fit, theta)?;
    check_alpha(alpha)?;
    if n_draws == 0 {
        return Err(LdlmError::InvalidConfig("n_draws must be positive".into()));
    }
    let cov = fit.block_cov(block, block)?;
    monte_carlo_band(&curve.estimate, &curve.sd, &cov, theta, alpha, n_draws, seed)
}

// Draws spline-space errors from N(0, cov), maps them through `projector`
// and takes the (1 - α) quantile of max_t |err(t)| / sd(t).
fn monte_carlo_band(
    estimate: &[f64],
    sd: &[f64],
    cov: &DMatrix<f64>,
    projector: &DMatrix<f64>,
    alpha: f64,
    n_draws: usize,
    seed: u64,
) -> Result<SimultaneousBand> {
    let (factor, clipped) = draw_factor(cov);
    let proj = projector * factor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DVector::zeros(proj.ncols());
    let stats: Vec<f64> = (0..n_draws)
        .map(|_| {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let err = &proj * &z;
            err.iter()
                .zip(sd)
                .filter(|(_, s)| **s > 0.0)
                .map(|(e, s)| (e / s).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let m_crit = upper_quantile(stats, alpha);
    Ok(SimultaneousBand {
        band: scaled_interval(estimate, sd, m_crit),
        m_crit,
        n_draws,
        clipped,
    })
}

/// Smoother matrices `(C₀, C₁)`, each `ℓ × N`, with `γ̂_j = C_j Y` at convergence.
///
/// Row `t` of `C_j` is `Θ[t,·] E[1/σ²] Σ_q(θ)[γ_j rows, :] Cᵀ`; the full
/// rows of Σ are required for the identity to hold.
pub fn smoother_matrices(
    fit: &VariationalFit,
    dm: &DesignMatrices,
    theta: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    require_crossover(fit)?;
    check_theta(fit, theta)?;
    if dm.c.ncols() != fit.mu.len() {
        return Err(LdlmError::Contract("design does not match fit".into()));
    }
    let e_prec = fit.noise_precision();
    let rows = |block: Block| -> Result<DMatrix<f64>> {
        let r = fit.block_index.require(block)?;
        let sig_rows = fit.sigma.rows(r.start, r.len());
        Ok(theta * (sig_rows * dm.c.transpose()) * e_prec)
    };
    Ok((rows(Block::Gamma0)?, rows(Block::Gamma1)?))
}

/// Null covariance of Y: `σ̂² I + Z Ĝ Zᵀ` with inverse-gamma means plugged in.
pub fn null_covariance(fit: &VariationalFit, dm: &DesignMatrices) -> Result<DMatrix<f64>> {
    let n = dm.num_rows();
    let sigma2 = fit.sigma2_mean()?;
    let r = fit.block_index.require(Block::Random)?;
    let comp = fit
        .component(Block::Random)
        .ok_or_else(|| LdlmError::Contract("fit has no random-effect variance".into()))?;
    let scale = comp.mean().ok_or_else(|| {
        LdlmError::Domain(format!(
            "random-effect variance mean undefined for shape {}",
            comp.shape
        ))
    })?;
    let z = dm.c.columns(r.start, r.len());
    let g = match fit.config.random_effect {
        RandomEffect::Intercept => DMatrix::identity(r.len(), r.len()) * scale,
        RandomEffect::Lag => {
            let pb = dm
                .penalty_blocks
                .iter()
                .find(|p| p.block == Block::Random)
                .ok_or_else(|| LdlmError::Contract("missing random penalty".into()))?;
            let inv = pb.penalty.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
                LdlmError::NotPositiveDefinite("random-lag penalty".into())
            })?;
            inv * scale
        }
    };
    let mut v = z * g * z.transpose();
    for i in 0..n {
        v[(i, i)] += sigma2;
    }
    Ok((&v + v.transpose()) * 0.5)
}

/// `κ = ψ / (2e)` and `ν = 2e² / ψ`.
pub fn satterthwaite(e: f64, psi: f64) -> Result<(f64, f64)> {
    if !(e > 0.0 && psi > 0.0 && e.is_finite() && psi.is_finite()) {
        return Err(LdlmError::DegenerateSmoother { e, psi });
    }
    Ok((psi / (2.0 * e), 2.0 * e * e / psi))
}

/// `P(χ²_ν > scaled_statistic)`.
pub fn zls_p_value(scaled_statistic: f64, nu: f64) -> Result<f64> {
    chi_squared_sf(scaled_statistic, nu)
}

/// Global test of `H₀: δ(t) = 0` for all lags.
pub fn zls_test(fit: &VariationalFit, dm: &DesignMatrices, theta: &DMatrix<f64>) -> Result<ZlsResult> {
    let (c0, c1) = smoother_matrices(fit, dm, theta)?;
    let a = c1 - c0;
    let ay = &a * &dm.y;
    let g = ay.norm_squared();
    let v = null_covariance(fit, dm)?;
    // With S = AᵀA: tr(SV) = tr(M), tr((SV)²) = ‖M‖²_F for M = A V Aᵀ.
    let m = &a * v * a.transpose();
    let e = m.trace();
    let psi = 2.0 * m.norm_squared();
    let (kappa, nu) = satterthwaite(e, psi)?;
    let scaled_statistic = g / kappa;
    Ok(ZlsResult {
        g,
        e,
        psi,
        kappa,
        nu,
        scaled_statistic,
        p_value: zls_p_value(scaled_statistic, nu)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjustment {
    Bonferroni,
    /// Benjamini-Hochberg false discovery rate.
    Bh,
}

impl std::str::FromStr for Adjustment {
    type Err = LdlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni" => Ok(Adjustment::Bonferroni),
            "bh" => Ok(Adjustment::Bh),
            other => Err(LdlmError::InvalidConfig(format!("unknown adjustment '{other}'"))),
        }
    }
}

/// Multiplicity-adjusted p-values, returned in input order.
pub fn adjust_p_values(p: &[f64], method: Adjustment) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(LdlmError::Domain(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len() as f64;
    match method {
        Adjustment::Bonferroni => Ok(p.iter().map(|v| (v * m).min(1.0)).collect()),
        Adjustment::Bh => {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            let mut out = vec![0.0; p.len()];
            let mut running = 1.0f64;
            for (rank, &i) in order.iter().enumerate().rev() {
                running = running.min(p[i] * m / (rank + 1) as f64);
                out[i] = running;
            }
            Ok(out)
        }
    }
}
