//! Synthetic data and replicated operating-characteristic experiments.
//!
//! The data generator is a stand-in: effect shapes, exposure curves and
//! variance magnitudes are chosen here, not taken from any published
//! generator. Reports carry [`GENERATOR_NOTE`] so this is never lost.
//!
//! Every replicate derives its own seed from the study seed, replicates run
//! in parallel on the current rayon pool, and results are aggregated in
//! replicate order, so reports do not depend on the worker count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, BasisSpec};
use crate::criteria::{select, vaic, DecisionRule};
use crate::data_model::{build_design, Block, Design, LdlmDataset, ModelConfig, Occasion, RandomEffect, Subject};
use crate::inference::{
    difference_curve, gaussian_interval, lag_curve, lag_curve_band, simultaneous_band, zls_test,
};
use crate::vb::fit;
use crate::{LdlmError, Result};

pub const GENERATOR_NOTE: &str =
    "effect functions, exposure generator and variance magnitudes are invented stand-ins";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Peak,
    Cyclical,
    Sigmoidal,
}

impl std::str::FromStr for Effect {
    type Err = LdlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peak" => Ok(Effect::Peak),
            "cyclical" => Ok(Effect::Cyclical),
            "sigmoidal" => Ok(Effect::Sigmoidal),
            other => Err(LdlmError::InvalidConfig(format!("unknown effect '{other}'"))),
        }
    }
}

impl std::fmt::Display for Effect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Effect::Peak => "peak",
            Effect::Cyclical => "cyclical",
            Effect::Sigmoidal => "sigmoidal",
        })
    }
}

/// Base effect shape at lag `t` of `ell`.
///
/// Peak: Gaussian bump of height 1 at `ℓ/2` with sd `ℓ/8`. Cyclical:
/// `sin(4πt/ℓ)`. Sigmoidal: `1 / (1 + exp(-10 (t/ℓ - 1/2)))`.
pub fn effect_value(effect: Effect, t: f64, ell: usize) -> f64 {
    let l = ell as f64;
    match effect {
        Effect::Peak => {
            let sd = l / 8.0;
            (-0.5 * ((t - l / 2.0) / sd).powi(2)).exp()
        }
        Effect::Cyclical => (4.0 * std::f64::consts::PI * t / l).sin(),
        Effect::Sigmoidal => 1.0 / (1.0 + (-10.0 * (t / l - 0.5)).exp()),
    }
}

/// Treatment curve value `s · effect(t)`; the control curve is the `s = 1` case.
pub fn true_effect(effect: Effect, t: f64, ell: usize, s: f64) -> f64 {
    s * effect_value(effect, t, ell)
}

/// Data-space truth at lags `1..=ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCurves {
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
}

impl TrueCurves {
    /// Curves at lags `1..=ℓ`, both multiplied by `amplitude`.
    pub fn new(effect: Effect, ell: usize, s: f64, amplitude: f64) -> Self {
        let lags = (1..=ell).map(|t| t as f64);
        TrueCurves {
            gamma0: lags.clone().map(|t| amplitude * true_effect(effect, t, ell, 1.0)).collect(),
            gamma1: lags.map(|t| amplitude * true_effect(effect, t, ell, s)).collect(),
        }
    }

    pub fn delta(&self) -> Vec<f64> {
        self.gamma1.iter().zip(&self.gamma0).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub design: Design,
    pub true_model: RandomEffect,
    pub effect: Effect,
    pub n: usize,
    pub ell: usize,
    /// Occasions per subject for longitudinal designs.
    pub n_longitudinal_occasions: usize,
    pub scaling_factor: f64,
    /// Height of the control curve `γ₀`.
    pub effect_amplitude: f64,
    /// When non-empty, replicate `i` uses `scaling_cycle[i % len]` instead of
    /// `scaling_factor`, so one cell averages over a grid of differences.
    pub scaling_cycle: Vec<f64>,
    pub replicates: usize,
    pub rng_seed: u64,
    pub noise_sd: f64,
    pub random_intercept_sd: f64,
    pub random_lag_sd: f64,
    /// Number of cubic B-splines smoothing the white noise behind each exposure curve.
    pub exposure_basis: usize,
    /// Fixed-effect coefficients; covariates are standard normal.
    pub beta: Vec<f64>,
    /// Template for the fitted models; `design` and `random_effect` are overridden.
    pub model: ModelConfig,
    /// Models fitted to each dataset. Selection needs both.
    pub fit_models: Vec<RandomEffect>,
    /// Level of the intervals and of the power calculation.
    pub alpha: f64,
    /// Levels at which ZLS rejection rates are tabulated.
    pub alpha_grid: Vec<f64>,
    /// Scaling factors for the power curve (separate replicates per value).
    pub power_grid: Vec<f64>,
    pub compute_bands: bool,
    pub band_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            design: Design::Crossover,
            true_model: RandomEffect::Intercept,
            effect: Effect::Peak,
            n: 25,
            ell: 60,
            n_longitudinal_occasions: 2,
            scaling_factor: 1.0,
            effect_amplitude: 1.0,
            scaling_cycle: Vec::new(),
            replicates: 200,
            rng_seed: 20_240_601,
            noise_sd: 1.0,
            random_intercept_sd: 1.0,
            random_lag_sd: 0.5,
            exposure_basis: 4,
            beta: vec![1.0, -0.5],
            model: ModelConfig::default(),
            fit_models: vec![RandomEffect::Lag, RandomEffect::Intercept],
            alpha: 0.05,
            alpha_grid: (1..=10).map(|k| f64::from(k) / 100.0).collect(),
            power_grid: Vec::new(),
            compute_bands: true,
            band_draws: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LdlmError::InvalidConfig(m.to_string()));
        if self.n < 2 {
            return bad("need at least 2 subjects");
        }
        if self.ell < 2 {
            return bad("need at least 2 lags");
        }
        if self.design == Design::Longitudinal && self.n_longitudinal_occasions == 0 {
            return bad("longitudinal designs need at least one occasion per subject");
        }
        if !self.effect_amplitude.is_finite() {
            return bad("effect_amplitude must be finite");
        }
        if !(self.scaling_factor.is_finite()
            && self.power_grid.iter().chain(&self.scaling_cycle).all(|s| s.is_finite()))
        {
            return bad("scaling factors must be finite");
        }
        if [self.noise_sd, self.random_intercept_sd, self.random_lag_sd]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("standard deviations must be non-negative");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("alpha levels must lie in (0, 1)");
        }
        if self.exposure_basis < 4 {
            return bad("exposure_basis must be at least 4");
        }
        if self.fit_models.is_empty() {
            return bad("fit_models must not be empty");
        }
        if self.compute_bands && self.band_draws == 0 {
            return bad("band_draws must be positive");
        }
        self.model.validate()
    }

    /// Model configuration actually fitted for `random_effect`.
    pub fn model_for(&self, random_effect: RandomEffect) -> ModelConfig {
        ModelConfig {
            design: self.design,
            random_effect,
            ..self.model.clone()
        }
    }

    /// Scaling factor of replicate `index` in the main cell.
    pub fn scaling_for(&self, index: usize) -> f64 {
        if self.scaling_cycle.is_empty() {
            self.scaling_factor
        } else {
            self.scaling_cycle[index % self.scaling_cycle.len()]
        }
    }

    fn occasion_labels(&self) -> Vec<i64> {
        match self.design {
            Design::Crossover => vec![0, 1],
            Design::Longitudinal => (1..=self.n_longitudinal_occasions as i64).collect(),
        }
    }
}

/// Seed of replicate `index` of a study with seed `base`.
pub fn replicate_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}


/// Cubic-spline-smoothed white noise rescaled to span `[90, 100]`.
fn exposure_curve<R: Rng>(rng: &mut R, basis: &DMatrix<f64>) -> Vec<f64> {
    let w = DVector::from_fn(basis.ncols(), |_, _| rng.sample(StandardNormal));
    let u = basis * w;
    let (lo, hi) = (u.min(), u.max());
    if hi - lo < 1e-12 {
        return vec![95.0; u.len()];
    }
    u.iter().map(|v| 90.0 + 10.0 * (v - lo) / (hi - lo)).collect()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws one dataset from the configured generating model.
pub fn simulate_dataset(config: &SimConfig, seed: u64) -> Result<LdlmDataset> {
    simulate_with_scale(config, config.scaling_factor, seed)
}

fn simulate_with_scale(config: &SimConfig, s: f64, seed: u64) -> Result<LdlmDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ell = config.ell;
    let truth = TrueCurves::new(config.effect, ell, s, config.effect_amplitude);
    let exposure = build_basis(&BasisSpec::cubic(ell, config.exposure_basis))?;
    let random_basis = config.model_for(RandomEffect::Lag).random_basis_matrix(ell)?;
    let labels = config.occasion_labels();

    let subjects = (0..config.n)
        .map(|i| {
            let (intercept, lag_curve) = match config.true_model {
                RandomEffect::Intercept => (config.random_intercept_sd * normal(&mut rng), None),
                RandomEffect::Lag => {
                    let z = DVector::from_fn(random_basis.ncols(), |_, _| {
                        config.random_lag_sd * normal(&mut rng)
                    });
                    (0.0, Some(&random_basis * z))
                }
            };
            let occasions = labels
                .iter()
                .map(|&j| {
                    let x: Vec<f64> = config.beta.iter().map(|_| normal(&mut rng)).collect();
                    let lags = exposure_curve(&mut rng, &exposure);
                    let gamma = match config.design {
                        Design::Crossover if j == 1 => &truth.gamma1,
                        _ => &truth.gamma0,
                    };
                    let fixed: f64 = x.iter().zip(&config.beta).map(|(a, b)| a * b).sum();
                    let lagged: f64 = lags.iter().zip(gamma).map(|(a, b)| a * b).sum();
                    let random = match &lag_curve {
                        Some(g) => lags.iter().zip(g.iter()).map(|(a, b)| a * b).sum(),
                        None => intercept,
                    };
                    let y = fixed + lagged + random + config.noise_sd * normal(&mut rng);
                    Occasion { index: j, y, x, lags }
                })
                .collect();
            Subject {
                id: format!("s{:03}", i + 1),
                occasions,
            }
        })
        .collect();
    Ok(LdlmDataset { subjects })
}

/// Per-fit outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub model: RandomEffect,
    pub converged: bool,
    pub iterations: usize,
    pub vaic: Option<f64>,
    pub bias: Option<f64>,
    pub mise: Option<f64>,
    pub pointwise_coverage: Option<f64>,
    pub simultaneous_coverage: Option<f64>,
    pub zls_p_value: Option<f64>,
    pub error: Option<String>,
}

impl FitOutcome {
    fn failed(model: RandomEffect, err: String) -> Self {
        FitOutcome {
            model,
            converged: false,
            iterations: 0,
            vaic: None,
            bias: None,
            mise: None,
            pointwise_coverage: None,
            simultaneous_coverage: None,
            zls_p_value: None,
            error: Some(err),
        }
    }

    fn usable(&self) -> bool {
        self.converged && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub scaling_factor: f64,
    pub fits: Vec<FitOutcome>,
    /// Model chosen by each rule; empty unless both fits converged.
    pub decisions: Vec<(DecisionRule, RandomEffect)>,
}

fn mean_abs_and_sq(est: &[f64], truth: &[f64]) -> (f64, f64) {
    let n = est.len() as f64;
    let (a, s) = est.iter().zip(truth).fold((0.0, 0.0), |(a, s), (e, t)| {
        let d = e - t;
        (a + d.abs(), s + d * d)
    });
    (a / n, s / n)
}

fn covered_fraction(lower: &[f64], upper: &[f64], truth: &[f64]) -> f64 {
    let hits = truth
        .iter()
        .enumerate()
        .filter(|(t, v)| lower[*t] <= **v && **v <= upper[*t])
        .count();
    hits as f64 / truth.len() as f64
}

fn evaluate_fit(
    config: &SimConfig,
    data: &LdlmDataset,
    model: RandomEffect,
    truth: &TrueCurves,
    seed: u64,
) -> Result<FitOutcome> {
    let cfg = config.model_for(model);
    let dm = build_design(data, &cfg)?;
    let theta = cfg.fixed_basis(config.ell)?;
    let f = fit(&dm, &cfg)?;
    let mut out = FitOutcome {
        model,
        converged: f.converged,
        iterations: f.iterations,
        vaic: Some(vaic(&f, &dm)?),
        bias: None,
        mise: None,
        pointwise_coverage: None,
        simultaneous_coverage: None,
        zls_p_value: None,
        error: None,
    };
    let band_seed = seed.rotate_left(17) ^ 0x5eed;
    match config.design {
        Design::Crossover => {
            let target = truth.delta();
            let curve = difference_curve(&f, &theta)?;
            let (bias, mise) = mean_abs_and_sq(&curve.delta_hat, &target);
            out.bias = Some(bias);
            out.mise = Some(mise);
            let pw = gaussian_interval(&curve.delta_hat, &curve.sd, config.alpha)?;
            out.pointwise_coverage = Some(covered_fraction(&pw.lower, &pw.upper, &target));
            if config.compute_bands {
                let band = simultaneous_band(&f, &curve, &theta, config.alpha, config.band_draws, band_seed)?;
                out.simultaneous_coverage =
                    Some(covered_fraction(&band.band.lower, &band.band.upper, &target));
            }
            out.zls_p_value = Some(zls_test(&f, &dm, &theta)?.p_value);
        }
        Design::Longitudinal => {
            let target = &truth.gamma0;
            let curve = lag_curve(&f, &theta, Block::Gamma)?;
            let (bias, mise) = mean_abs_and_sq(&curve.estimate, target);
            out.bias = Some(bias);
            out.mise = Some(mise);
            let pw = gaussian_interval(&curve.estimate, &curve.sd, config.alpha)?;
            out.pointwise_coverage = Some(covered_fraction(&pw.lower, &pw.upper, target));
            if config.compute_bands {
                let band =
                    lag_curve_band(&f, &curve, &theta, Block::Gamma, config.alpha, config.band_draws, band_seed)?;
                out.simultaneous_coverage =
                    Some(covered_fraction(&band.band.lower, &band.band.upper, target));
            }
        }
    }
    Ok(out)
}

/// Simulates and fits one replicate at scaling factor `s`.
pub fn run_replicate(config: &SimConfig, index: usize, s: f64, base_seed: u64) -> Result<ReplicateOutcome> {
    let seed = replicate_seed(base_seed, index);
    let data = simulate_with_scale(config, s, seed)?;
    let truth = TrueCurves::new(config.effect, config.ell, s, config.effect_amplitude);
    let fits: Vec<FitOutcome> = config
        .fit_models
        .iter()
        .map(|&m| {
            evaluate_fit(config, &data, m, &truth, seed)
                .unwrap_or_else(|e| FitOutcome::failed(m, e.to_string()))
        })
        .collect();
    let find = |m: RandomEffect| fits.iter().find(|f| f.model == m && f.usable());
    let decisions = match (find(RandomEffect::Lag), find(RandomEffect::Intercept)) {
        (Some(l), Some(i)) => {
            let (vl, vi) = (l.vaic.unwrap_or(f64::NAN), i.vaic.unwrap_or(f64::NAN));
            DecisionRule::ALL.iter().map(|&r| (r, select(vl, vi, r).chosen)).collect()
        }
        _ => Vec::new(),
    };
    Ok(ReplicateOutcome {
        index,
        seed,
        scaling_factor: s,
        fits,
        decisions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAccuracy {
    pub rule: DecisionRule,
    /// Percent of replicates where the rule chose the generating model.
    pub percent_correct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: RandomEffect,
    pub used: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub mean_abs_bias: f64,
    pub mise: f64,
    /// Percent of (lag, dataset) pairs covered.
    pub pointwise_coverage: f64,
    pub simultaneous_coverage: Option<f64>,
    /// ZLS rejection rate at each level of `alpha_grid`.
    pub rejection_by_alpha: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub scaling_factor: f64,
    pub model: RandomEffect,
    pub rejection_rate: f64,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub generator_note: String,
    pub config: SimConfig,
    pub selection: Vec<RuleAccuracy>,
    /// Replicates excluded from selection because a fit failed to converge.
    pub selection_excluded: usize,
    pub models: Vec<ModelSummary>,
    pub power: Vec<PowerPoint>,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Runs all replicates; `s = None` takes each replicate's factor from the config.
fn run_replicates(config: &SimConfig, s: Option<f64>, base_seed: u64) -> Result<Vec<ReplicateOutcome>> {
    (0..config.replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, i, s.unwrap_or_else(|| config.scaling_for(i)), base_seed))
        .collect()
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn summarize_model(config: &SimConfig, reps: &[ReplicateOutcome], model: RandomEffect) -> ModelSummary {
    let fits: Vec<&FitOutcome> = reps
        .iter()
        .filter_map(|r| r.fits.iter().find(|f| f.model == model))
        .collect();
    let used: Vec<&FitOutcome> = fits.iter().copied().filter(|f| f.usable()).collect();
    let collect = |g: fn(&FitOutcome) -> Option<f64>| -> Vec<f64> { used.iter().filter_map(|f| g(f)).collect() };
    let pvals = collect(|f| f.zls_p_value);
    let rejection_by_alpha = config
        .alpha_grid
        .iter()
        .map(|&a| {
            let rej = pvals.iter().filter(|p| **p < a).count();
            (a, percent(rej, pvals.len()) / 100.0)
        })
        .collect();
    let simultaneous = collect(|f| f.simultaneous_coverage);
    ModelSummary {
        model,
        used: used.len(),
        not_converged: fits.iter().filter(|f| f.error.is_none() && !f.converged).count(),
        failed: fits.iter().filter(|f| f.error.is_some()).count(),
        mean_abs_bias: mean(&collect(|f| f.bias)),
        mise: mean(&collect(|f| f.mise)),
        pointwise_coverage: 100.0 * mean(&collect(|f| f.pointwise_coverage)),
        simultaneous_coverage: (!simultaneous.is_empty()).then(|| 100.0 * mean(&simultaneous)),
        rejection_by_alpha,
    }
}

/// Runs the replicated experiment described by `config`.
pub fn run_study(config: &SimConfig) -> Result<StudyReport> {
    config.validate()?;
    let reps = run_replicates(config, None, config.rng_seed)?;

    let decided: Vec<&ReplicateOutcome> = reps.iter().filter(|r| !r.decisions.is_empty()).collect();
    let selection = if config.fit_models.contains(&RandomEffect::Lag)
        && config.fit_models.contains(&RandomEffect::Intercept)
    {
        DecisionRule::ALL
            .iter()
            .map(|&rule| {
                let correct = decided
                    .iter()
                    .filter(|r| r.decisions.iter().any(|(q, m)| *q == rule && *m == config.true_model))
                    .count();
                RuleAccuracy {
                    rule,
                    percent_correct: percent(correct, decided.len()),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let models = config
        .fit_models
        .iter()
        .map(|&m| summarize_model(config, &reps, m))
        .collect();

    let mut power = Vec::new();
    for (g, &s) in config.power_grid.iter().enumerate() {
        let base = config.rng_seed.wrapping_add((g as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let grid_reps = run_replicates(config, Some(s), base)?;
        for &m in &config.fit_models {
            let pv: Vec<f64> = grid_reps
                .iter()
                .filter_map(|r| r.fits.iter().find(|f| f.model == m && f.usable()))
                .filter_map(|f| f.zls_p_value)
                .collect();
            let rej = pv.iter().filter(|p| **p < config.alpha).count();
            power.push(PowerPoint {
                scaling_factor: s,
                model: m,
                rejection_rate: percent(rej, pv.len()) / 100.0,
                used: pv.len(),
            });
        }
    }

    Ok(StudyReport {
        generator_note: GENERATOR_NOTE.to_string(),
        config: config.clone(),
        selection_excluded: reps.len() - decided.len(),
        selection,
        models,
        power,
        replicates: reps,
    })
}

impl StudyReport {
    pub fn model(&self, m: RandomEffect) -> Option<&ModelSummary> {
        self.models.iter().find(|s| s.model == m)
    }

    pub fn accuracy(&self, rule: DecisionRule) -> Option<f64> {
        self.selection.iter().find(|r| r.rule == rule).map(|r| r.percent_correct)
    }

    /// One row per study cell: selection by rule, bias/MISE and coverage by fitted model.
    pub fn write_tables<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "effect", "true_model", "n", "ell", "min", "diff2", "diff5", "diff10", "bias_lag",
            "bias_intercept", "mise_lag", "mise_intercept", "pointwise_lag", "pointwise_intercept",
            "simultaneous_lag", "simultaneous_intercept", "note",
        ])?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let by = |m: RandomEffect, g: fn(&ModelSummary) -> Option<f64>| fmt(self.model(m).and_then(g));
        let mut rec = vec![
            self.config.effect.to_string(),
            self.config.true_model.to_string(),
            self.config.n.to_string(),
            self.config.ell.to_string(),
        ];
        rec.extend(DecisionRule::ALL.iter().map(|r| fmt(self.accuracy(*r))));
        for m in [RandomEffect::Lag, RandomEffect::Intercept] {
            rec.push(by(m, |s| Some(s.mean_abs_bias)));
        }
        for m in [RandomEffect::Lag, RandomEffect::Intercept] {
            rec.push(by(m, |s| Some(s.mise)));
        }
        for m in [RandomEffect::Lag, RandomEffect::Intercept] {
            rec.push(by(m, |s| Some(s.pointwise_coverage)));
        }
        for m in [RandomEffect::Lag, RandomEffect::Intercept] {
            rec.push(by(m, |s| s.simultaneous_coverage));
        }
        rec.push(GENERATOR_NOTE.to_string());
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }

    /// `s,model,rate` rows of the power curve.
    pub fn write_power<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "model", "rate"])?;
        for p in &self.power {
            w.write_record([p.scaling_factor.to_string(), p.model.to_string(), p.rejection_rate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `alpha,model,rate` rows of the rejection curve at the study's scaling factor.
    pub fn write_size<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha", "model", "rate"])?;
        for m in &self.models {
            for (a, r) in &m.rejection_by_alpha {
                w.write_record([a.to_string(), m.model.to_string(), r.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_scaling_gives_zero_difference() {
        for effect in [Effect::Peak, Effect::Cyclical, Effect::Sigmoidal] {
            let t = TrueCurves::new(effect, 40, 1.0, 1.0);
            assert!(t.delta().iter().all(|d| *d == 0.0));
        }
    }

    #[test]
    fn effect_shapes() {
        assert!(effect_value(Effect::Cyclical, 30.0, 60).abs() < 1e-12);
        let argmax = (1..=60)
            .max_by(|a, b| {
                effect_value(Effect::Peak, *a as f64, 60).total_cmp(&effect_value(Effect::Peak, *b as f64, 60))
            })
            .unwrap();
        assert_eq!(argmax, 30);
        assert!((effect_value(Effect::Sigmoidal, 30.0, 60) - 0.5).abs() < 1e-15);
        assert!("wavy".parse::<Effect>().is_err());
    }

    #[test]
    fn datasets_are_reproducible_and_well_formed() {
        let cfg = SimConfig {
            n: 5,
            ell: 20,
            true_model: RandomEffect::Lag,
            ..Default::default()
        };
        let a = simulate_dataset(&cfg, 11).unwrap();
        let b = simulate_dataset(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_dataset(&cfg, 12).unwrap());
        for s in &a.subjects {
            let idx: Vec<i64> = s.occasions.iter().map(|o| o.index).collect();
            assert_eq!(idx, vec![0, 1]);
            for o in &s.occasions {
                let lo = o.lags.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = o.lags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!((lo - 90.0).abs() < 1e-9 && (hi - 100.0).abs() < 1e-9);
            }
        }
        a.validate(Design::Crossover).unwrap();
    }

    #[test]
    fn longitudinal_occasions() {
        let cfg = SimConfig {
            design: Design::Longitudinal,
            n: 3,
            ell: 12,
            n_longitudinal_occasions: 4,
            ..Default::default()
        };
        let d = simulate_dataset(&cfg, 1).unwrap();
        assert!(d.subjects.iter().all(|s| s.occasions.len() == 4));
        d.validate(Design::Longitudinal).unwrap();
    }
}
