//! Variational AIC and random-effect selection rules.

use serde::{Deserialize, Serialize};

use crate::data_model::{DesignMatrices, RandomEffect};
use crate::vb::VariationalFit;
use crate::{LdlmError, Result};

pub use crate::special::{digamma, log_gamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The two likelihood pieces a VAIC is assembled from, plus the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaicParts {
    /// `log p(Y | θ*)` at `θ* = E_q(θ)` with the inverse-gamma mode-type plug-in for σ².
    pub log_lik_at_mean: f64,
    /// `E_q[log p(Y | θ)]`.
    pub expected_log_lik: f64,
    /// Effective number of parameters `P*_D`.
    pub effective_params: f64,
    /// `-2 log p(Y | θ*) + 2 P*_D`.
    pub assembled: f64,
    pub closed_form: f64,
}

pub fn vaic_parts(fit: &VariationalFit, dm: &DesignMatrices) -> Result<VaicParts> {
    let b = fit.b_sigma2;
    if !(b > 0.0 && b.is_finite()) {
        return Err(LdlmError::Domain(format!("B_q(σ²) must be positive, got {b}")));
    }
    let n = dm.num_rows() as f64;
    let shape = fit.shape_sigma2;
    if shape <= 1.0 {
        return Err(LdlmError::Domain(format!("VAIC needs a_e + N/2 > 1, got {shape}")));
    }
    let resid = &dm.y - &dm.c * &fit.mu;
    let rss = resid.norm_squared();
    // tr(C Σ Cᵀ) = tr(CᵀC Σ)
    let trace = (&dm.c * &fit.sigma).dot(&dm.c);
    let dg = digamma(shape)?;

    let log_lik_at_mean = -0.5 * n * LN_2PI - 0.5 * n * (b.ln() - (shape - 1.0).ln())
        - 0.5 * (shape - 1.0) / b * rss;
    let expected_log_lik =
        -0.5 * n * LN_2PI + 0.5 * n * (dg - b.ln()) - 0.5 * shape / b * (trace + rss);
    let effective_params = 2.0 * log_lik_at_mean - 2.0 * expected_log_lik;
    let assembled = -2.0 * log_lik_at_mean + 2.0 * effective_params;

    let closed_form = n * (shape - 1.0).ln() + n * LN_2PI - 2.0 * n * dg
        + n * b.ln()
        + 2.0 * shape / b * trace
        + (shape + 1.0) / b * rss;

    Ok(VaicParts {
        log_lik_at_mean,
        expected_log_lik,
        effective_params,
        assembled,
        closed_form,
    })
}

/// Closed-form VAIC of a converged fit.
///
/// Fails with [`LdlmError::Contract`] if the closed form disagrees with the
/// two-piece assembly beyond floating-point noise.
pub fn vaic(fit: &VariationalFit, dm: &DesignMatrices) -> Result<f64> {
    let parts = vaic_parts(fit, dm)?;
    let scale = parts.closed_form.abs().max(1.0);
    if (parts.closed_form - parts.assembled).abs() > 1e-8 * scale {
        return Err(LdlmError::Contract(format!(
            "VAIC closed form {} disagrees with assembled value {}",
            parts.closed_form, parts.assembled
        )));
    }
    Ok(parts.closed_form)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionRule {
    Min,
    Diff2,
    Diff5,
    Diff10,
}

impl DecisionRule {
    pub const ALL: [DecisionRule; 4] =
        [DecisionRule::Min, DecisionRule::Diff2, DecisionRule::Diff5, DecisionRule::Diff10];

    /// Absolute VAIC difference below which the random intercept is preferred.
    pub fn threshold(self) -> f64 {
        match self {
            DecisionRule::Min => 0.0,
            DecisionRule::Diff2 => 2.0,
            DecisionRule::Diff5 => 5.0,
            DecisionRule::Diff10 => 10.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DecisionRule::Min => "min",
            DecisionRule::Diff2 => "diff2",
            DecisionRule::Diff5 => "diff5",
            DecisionRule::Diff10 => "diff10",
        }
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = LdlmError;

    fn from_str(s: &str) -> Result<Self> {
        DecisionRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| LdlmError::InvalidConfig(format!("unknown decision rule '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub vaic_lag: f64,
    pub vaic_intercept: f64,
    pub rule: DecisionRule,
    pub chosen: RandomEffect,
    pub abs_diff: f64,
}

/// Picks the random-effect structure. Ties go to the random intercept.
pub fn select(vaic_lag: f64, vaic_intercept: f64, rule: DecisionRule) -> SelectionResult {
    let abs_diff = (vaic_lag - vaic_intercept).abs();
    let chosen = if abs_diff < rule.threshold() || vaic_intercept <= vaic_lag {
        RandomEffect::Intercept
    } else {
        RandomEffect::Lag
    };
    SelectionResult {
        vaic_lag,
        vaic_intercept,
        rule,
        chosen,
        abs_diff,
    }
}
