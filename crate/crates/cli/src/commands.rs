use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ldlm_core::criteria::{select, vaic, DecisionRule};
use ldlm_core::data_model::{build_design, Block, Design, LdlmDataset, ModelConfig, RandomEffect};
use ldlm_core::inference::{
    adjust_p_values, difference_curve, gaussian_interval, lag_curve, lag_curve_band, simultaneous_band, zls_test,
    Adjustment, Interval, SimultaneousBand, ZlsResult,
};
use ldlm_core::simstudy::{run_study, SimConfig, StudyReport};
use ldlm_core::vb::{fit, VariationalFit};
use ldlm_core::LdlmError;
use serde::{Deserialize, Serialize};

use crate::manifest::{ManifestBuilder, RunManifest};

/// Environment variable naming the default model configuration file.
pub const CONFIG_ENV: &str = "LDLM_CONFIG";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl From<LdlmError> for CliError {
    fn from(e: LdlmError) -> Self {
        let code = match e {
            LdlmError::InvalidConfig(_)
            | LdlmError::InvalidData(_)
            | LdlmError::Parse { .. }
            | LdlmError::Csv(_)
            | LdlmError::Io(_) => 2,
            LdlmError::NotPositiveDefinite(_) | LdlmError::DegenerateSmoother { .. } | LdlmError::Domain(_) => 3,
            LdlmError::Contract(_) => 4,
        };
        CliError { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// How a command finished once its output was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

fn read_input(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    manifest.input(path, &bytes);
    Ok(bytes)
}

fn read_dataset(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<LdlmDataset> {
    let bytes = read_input(path, manifest)?;
    LdlmDataset::from_csv_reader(bytes.as_slice())
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Explicit path, else the file named by `LDLM_CONFIG`, else built-in defaults.
fn load_model_config(path: Option<&Path>, manifest: &mut ManifestBuilder) -> CliResult<ModelConfig> {
    let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let config = match path.map(Path::to_path_buf).or(from_env) {
        Some(p) => {
            let bytes = read_input(&p, manifest)?;
            parse_json(&p, &bytes)?
        }
        None => ModelConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError { code: 4, message: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn block_name(block: Block) -> &'static str {
    match block {
        Block::Beta => "beta",
        Block::Gamma0 => "gamma0",
        Block::Gamma1 => "gamma1",
        Block::Gamma => "gamma",
        Block::Random => "random",
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitFile {
    pub manifest: RunManifest,
    pub converged: bool,
    /// Coefficient means by block, in spline space.
    pub spline_means: BTreeMap<String, Vec<f64>>,
    /// Fixed lag curves `Θ μ` at lags `1..=ℓ`.
    pub lag_curves: BTreeMap<String, Vec<f64>>,
    pub fit: VariationalFit,
    pub data: LdlmDataset,
}

pub fn cmd_fit(data: &Path, config: Option<&Path>, out: &Path) -> CliResult<Status> {
    let mut manifest = ManifestBuilder::new("fit");
    let dataset = read_dataset(data, &mut manifest)?;
    let cfg = load_model_config(config, &mut manifest)?;
    let dm = build_design(&dataset, &cfg)?;
    let f = fit(&dm, &cfg)?;
    let theta = cfg.fixed_basis(dataset.num_lags())?;

    let mut spline_means = BTreeMap::new();
    let mut lag_curves = BTreeMap::new();
    for block in [Block::Beta, Block::Gamma0, Block::Gamma1, Block::Gamma, Block::Random] {
        if f.block_index.get(block).is_none() {
            continue;
        }
        let mean = f.block_mean(block)?;
        if matches!(block, Block::Gamma0 | Block::Gamma1 | Block::Gamma) {
            lag_curves.insert(block_name(block).to_string(), (&theta * &mean).iter().copied().collect());
        }
        spline_means.insert(block_name(block).to_string(), mean.iter().copied().collect());
    }
    let converged = f.converged;
    let file = FitFile {
        manifest: manifest.finish(&cfg),
        converged,
        spline_means,
        lag_curves,
        fit: f,
        data: dataset,
    };
    write_json(out, &file)?;
    Ok(if converged { Status::Ok } else { Status::NotConverged })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelAttempt {
    pub model: RandomEffect,
    pub converged: bool,
    pub iterations: usize,
    pub vaic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RuleChoice {
    pub rule: DecisionRule,
    pub chosen: RandomEffect,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionFile {
    pub manifest: RunManifest,
    pub rule: DecisionRule,
    pub vaic_lag: Option<f64>,
    pub vaic_intercept: Option<f64>,
    pub abs_diff: Option<f64>,
    pub chosen: Option<RandomEffect>,
    /// Set when the choice could not be made between two converged fits.
    pub warning: Option<String>,
    pub by_rule: Vec<RuleChoice>,
    pub models: Vec<ModelAttempt>,
}

fn attempt(dataset: &LdlmDataset, cfg: &ModelConfig, model: RandomEffect) -> ModelAttempt {
    let cfg = ModelConfig { random_effect: model, ..cfg.clone() };
    let result = build_design(dataset, &cfg).and_then(|dm| {
        let f = fit(&dm, &cfg)?;
        let v = vaic(&f, &dm)?;
        Ok((f, v))
    });
    match result {
        Ok((f, v)) => ModelAttempt {
            model,
            converged: f.converged,
            iterations: f.iterations,
            vaic: Some(v),
            error: None,
        },
        Err(e) => ModelAttempt {
            model,
            converged: false,
            iterations: 0,
            vaic: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn cmd_select(data: &Path, config: Option<&Path>, rule: DecisionRule, out: &Path) -> CliResult<Status> {
    let mut manifest = ManifestBuilder::new("select");
    let dataset = read_dataset(data, &mut manifest)?;
    let cfg = load_model_config(config, &mut manifest)?;
    dataset.validate(cfg.design)?;
    let models = vec![
        attempt(&dataset, &cfg, RandomEffect::Lag),
        attempt(&dataset, &cfg, RandomEffect::Intercept),
    ];
    let usable = |m: RandomEffect| {
        models
            .iter()
            .find(|a| a.model == m && a.converged)
            .and_then(|a| a.vaic)
    };
    let (lag, intercept) = (usable(RandomEffect::Lag), usable(RandomEffect::Intercept));
    let mut file = SelectionFile {
        manifest: manifest.finish(&cfg),
        rule,
        vaic_lag: models[0].vaic,
        vaic_intercept: models[1].vaic,
        abs_diff: None,
        chosen: None,
        warning: None,
        by_rule: Vec::new(),
        models: Vec::new(),
    };
    let status = match (lag, intercept) {
        (Some(l), Some(i)) => {
            let result = select(l, i, rule);
            file.abs_diff = Some(result.abs_diff);
            file.chosen = Some(result.chosen);
            file.by_rule = DecisionRule::ALL
                .iter()
                .map(|&r| RuleChoice { rule: r, chosen: select(l, i, r).chosen })
                .collect();
            Status::Ok
        }
        (Some(_), None) | (None, Some(_)) => {
            let only = if lag.is_some() { RandomEffect::Lag } else { RandomEffect::Intercept };
            file.chosen = Some(only);
            file.warning = Some(format!("only the {only} model converged; it is reported without comparison"));
            Status::Ok
        }
        (None, None) => {
            file.warning = Some("neither model converged".into());
            Status::NotConverged
        }
    };
    file.models = models;
    if let Some(w) = &file.warning {
        eprintln!("warning: {w}");
    }
    write_json(out, &file)?;
    Ok(status)
}

/// A fit file together with everything needed to continue from it.
pub struct LoadedFit {
    pub file: FitFile,
    pub dm: ldlm_core::data_model::DesignMatrices,
    pub theta: nalgebra::DMatrix<f64>,
}

pub fn load_fit(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<LoadedFit> {
    let bytes = read_input(path, manifest)?;
    let file: FitFile = parse_json(path, &bytes)?;
    let cfg = &file.fit.config;
    let dm = build_design(&file.data, cfg)?;
    if dm.c.ncols() != file.fit.mu.len() {
        return Err(CliError::input(format!("{}: stored fit does not match its data", path.display())));
    }
    let theta = cfg.fixed_basis(file.data.num_lags())?;
    Ok(LoadedFit { file, dm, theta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    Pointwise,
    Simultaneous,
    Both,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferenceFile {
    pub manifest: RunManifest,
    pub design: Design,
    pub alpha: f64,
    /// `δ̂` for crossover fits, `γ̂` for longitudinal fits.
    pub estimate: Vec<f64>,
    pub sd: Vec<f64>,
    pub gamma0_hat: Option<Vec<f64>>,
    pub gamma1_hat: Option<Vec<f64>>,
    pub pointwise: Option<Interval>,
    pub simultaneous: Option<SimultaneousBand>,
}

#[derive(Serialize)]
struct InferSettings {
    alpha: f64,
    band: &'static str,
    draws: usize,
}

pub fn cmd_infer(
    fit_path: &Path,
    alpha: f64,
    band: BandKind,
    seed: Option<u64>,
    draws: usize,
    out: &Path,
) -> CliResult<Status> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if draws == 0 {
        return Err(CliError::input("draws must be positive"));
    }
    let mut manifest = ManifestBuilder::new("infer");
    let loaded = load_fit(fit_path, &mut manifest)?;
    let f = &loaded.file.fit;
    let want_pw = band != BandKind::Simultaneous;
    let want_sim = band != BandKind::Pointwise;
    let seed = if want_sim { Some(manifest.seed("band", seed)) } else { None };

    let mut file = match f.config.design {
        Design::Crossover => {
            let curve = difference_curve(f, &loaded.theta)?;
            let simultaneous = match seed {
                Some(s) => Some(simultaneous_band(f, &curve, &loaded.theta, alpha, draws, s)?),
                None => None,
            };
            InferenceFile {
                manifest: manifest.finish(&()),
                design: Design::Crossover,
                alpha,
                pointwise: None,
                simultaneous,
                estimate: curve.delta_hat,
                sd: curve.sd,
                gamma0_hat: Some(curve.gamma0_hat),
                gamma1_hat: Some(curve.gamma1_hat),
            }
        }
        Design::Longitudinal => {
            let curve = lag_curve(f, &loaded.theta, Block::Gamma)?;
            let simultaneous = match seed {
                Some(s) => Some(lag_curve_band(f, &curve, &loaded.theta, Block::Gamma, alpha, draws, s)?),
                None => None,
            };
            InferenceFile {
                manifest: manifest.finish(&()),
                design: Design::Longitudinal,
                alpha,
                pointwise: None,
                simultaneous,
                estimate: curve.estimate,
                sd: curve.sd,
                gamma0_hat: None,
                gamma1_hat: None,
            }
        }
    };
    if want_pw {
        file.pointwise = Some(gaussian_interval(&file.estimate, &file.sd, alpha)?);
    }
    let settings = InferSettings {
        alpha,
        band: match band {
            BandKind::Pointwise => "pointwise",
            BandKind::Simultaneous => "simultaneous",
            BandKind::Both => "both",
        },
        draws,
    };
    file.manifest.config = serde_json::to_value(settings).unwrap_or_default();
    write_json(out, &file)?;
    Ok(Status::Ok)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Adjusted {
    pub method: Adjustment,
    /// This test's p-value followed by the supplied ones.
    pub p_values: Vec<f64>,
    pub adjusted: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TestFile {
    pub manifest: RunManifest,
    pub zls: ZlsResult,
    pub adjustment: Option<Adjusted>,
}

pub fn cmd_test(fit_path: &Path, adjust: Option<Adjustment>, others: &[f64], out: &Path) -> CliResult<Status> {
    let mut manifest = ManifestBuilder::new("test");
    let loaded = load_fit(fit_path, &mut manifest)?;
    if loaded.file.fit.config.design != Design::Crossover {
        return Err(CliError::input("the global test needs a crossover fit"));
    }
    let zls = zls_test(&loaded.file.fit, &loaded.dm, &loaded.theta)?;
    let adjustment = match adjust {
        Some(method) => {
            let mut p_values = vec![zls.p_value];
            p_values.extend_from_slice(others);
            let adjusted = adjust_p_values(&p_values, method)?;
            Some(Adjusted { method, p_values, adjusted })
        }
        None if !others.is_empty() => return Err(CliError::input("--p-values requires --adjust")),
        None => None,
    };
    let file = TestFile {
        manifest: manifest.finish(&adjust),
        zls,
        adjustment,
    };
    write_json(out, &file)?;
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
pub struct ReportFile<'a> {
    pub manifest: RunManifest,
    pub report: &'a StudyReport,
}

pub fn cmd_simulate(config: &Path, seed: Option<u64>, jobs: Option<usize>, out_dir: &Path) -> CliResult<Status> {
    let mut manifest = ManifestBuilder::new("simulate");
    let bytes = read_input(config, &mut manifest)?;
    let mut cfg: SimConfig = parse_json(config, &bytes)?;
    cfg.rng_seed = manifest.seed("rng_seed", seed.or(Some(cfg.rng_seed)));
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError { code: 4, message: e.to_string() })?;
    let report = pool.install(|| run_study(&cfg))?;

    fs::create_dir_all(out_dir).map_err(|e| CliError::input(format!("{}: {e}", out_dir.display())))?;
    let csv_file = |name: &str| {
        let p = out_dir.join(name);
        fs::File::create(&p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
    };
    report.write_tables(csv_file("tables.csv")?)?;
    report.write_power(csv_file("power.csv")?)?;
    report.write_size(csv_file("size.csv")?)?;
    let file = ReportFile {
        manifest: manifest.finish(&cfg),
        report: &report,
    };
    write_json(&out_dir.join("report.json"), &file)?;
    Ok(Status::Ok)
}
