//! Repeated-measures datasets, model configuration and design assembly.
//!
//! The stacked outcome vector and design matrix are laid out subject-major,
//! occasion-minor. Downstream code locates coefficient blocks exclusively
//! through [`BlockIndex`].

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, build_penalty, BasisSpec, PenaltySpec};
use crate::{LdlmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Crossover,
    Longitudinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomEffect {
    Lag,
    Intercept,
}

impl std::fmt::Display for RandomEffect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RandomEffect::Lag => f.write_str("lag"),
            RandomEffect::Intercept => f.write_str("intercept"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occasion {
    /// Crossover: 0 = control, 1 = treatment. Longitudinal: 1..m_i.
    pub index: i64,
    pub y: f64,
    pub x: Vec<f64>,
    pub lags: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub occasions: Vec<Occasion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdlmDataset {
    pub subjects: Vec<Subject>,
}

impl LdlmDataset {
    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Total number of stacked rows N.
    pub fn num_rows(&self) -> usize {
        self.subjects.iter().map(|s| s.occasions.len()).sum()
    }

    fn first(&self) -> Option<&Occasion> {
        self.subjects.iter().flat_map(|s| s.occasions.iter()).next()
    }

    pub fn num_covariates(&self) -> usize {
        self.first().map_or(0, |o| o.x.len())
    }

    pub fn num_lags(&self) -> usize {
        self.first().map_or(0, |o| o.lags.len())
    }

    pub fn validate(&self, design: Design) -> Result<()> {
        if self.subjects.is_empty() || self.num_rows() == 0 {
            return Err(LdlmError::InvalidData("dataset has no observations".into()));
        }
        let p = self.num_covariates();
        let ell = self.num_lags();
        for s in &self.subjects {
            if s.occasions.is_empty() {
                return Err(LdlmError::InvalidData(format!("subject {} has no occasions", s.id)));
            }
            for o in &s.occasions {
                if o.x.len() != p {
                    return Err(LdlmError::InvalidData(format!(
                        "subject {} occasion {}: {} covariates, expected {p}",
                        s.id,
                        o.index,
                        o.x.len()
                    )));
                }
                if o.lags.len() != ell {
                    return Err(LdlmError::InvalidData(format!(
                        "subject {} occasion {}: {} lags, expected {ell}",
                        s.id,
                        o.index,
                        o.lags.len()
                    )));
                }
                let finite = o.y.is_finite()
                    && o.x.iter().all(|v| v.is_finite())
                    && o.lags.iter().all(|v| v.is_finite());
                if !finite {
                    return Err(LdlmError::InvalidData(format!(
                        "subject {} occasion {} has non-finite values",
                        s.id, o.index
                    )));
                }
            }
            let mut idx: Vec<i64> = s.occasions.iter().map(|o| o.index).collect();
            idx.sort_unstable();
            match design {
                Design::Crossover => {
                    if idx != [0, 1] {
                        return Err(LdlmError::InvalidData(format!(
                            "crossover subject {} must have exactly occasions 0 and 1, found {idx:?}",
                            s.id
                        )));
                    }
                }
                Design::Longitudinal => {
                    if idx.windows(2).any(|w| w[0] == w[1]) {
                        return Err(LdlmError::InvalidData(format!(
                            "subject {} has repeated occasion labels",
                            s.id
                        )));
                    }
                }
            }
        }
        if ell < 2 {
            return Err(LdlmError::InvalidData(format!("need at least 2 lag columns, got {ell}")));
        }
        Ok(())
    }

    /// Reads `subject,occasion,y,x1..xP,lag1..lagL`. Subjects keep their order
    /// of first appearance; occasions are sorted by label within a subject.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names.len() < 3 || names[0] != "subject" || names[1] != "occasion" || names[2] != "y" {
            return Err(LdlmError::Parse {
                row: 1,
                msg: "header must start with subject,occasion,y".into(),
            });
        }
        let mut num_x = 0;
        let mut num_lag = 0;
        for (i, name) in names[3..].iter().enumerate() {
            if num_lag == 0 && *name == format!("x{}", num_x + 1) {
                num_x += 1;
            } else if *name == format!("lag{}", num_lag + 1) {
                num_lag += 1;
            } else {
                return Err(LdlmError::Parse {
                    row: 1,
                    msg: format!("unexpected column '{name}' at position {}", i + 4),
                });
            }
        }
        let width = 3 + num_x + num_lag;

        let mut subjects: Vec<Subject> = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let row = k + 2;
            let record = record?;
            if record.len() != width {
                return Err(LdlmError::Parse {
                    row,
                    msg: format!("expected {width} fields, found {}", record.len()),
                });
            }
            let num = |col: usize| -> Result<f64> {
                record[col].parse::<f64>().map_err(|_| LdlmError::Parse {
                    row,
                    msg: format!("column '{}' is not a number: '{}'", names[col], &record[col]),
                })
            };
            let index = record[1].parse::<i64>().map_err(|_| LdlmError::Parse {
                row,
                msg: format!("occasion must be an integer, got '{}'", &record[1]),
            })?;
            let occasion = Occasion {
                index,
                y: num(2)?,
                x: (3..3 + num_x).map(&num).collect::<Result<_>>()?,
                lags: (3 + num_x..width).map(&num).collect::<Result<_>>()?,
            };
            let id = &record[0];
            match subjects.iter_mut().find(|s| s.id == id) {
                Some(s) => s.occasions.push(occasion),
                None => subjects.push(Subject {
                    id: id.to_string(),
                    occasions: vec![occasion],
                }),
            }
        }
        for s in &mut subjects {
            s.occasions.sort_by_key(|o| o.index);
        }
        Ok(LdlmDataset { subjects })
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["subject".to_string(), "occasion".into(), "y".into()];
        header.extend((1..=self.num_covariates()).map(|i| format!("x{i}")));
        header.extend((1..=self.num_lags()).map(|i| format!("lag{i}")));
        wtr.write_record(&header)?;
        for s in &self.subjects {
            for o in &s.occasions {
                let mut rec = vec![s.id.clone(), o.index.to_string(), o.y.to_string()];
                rec.extend(o.x.iter().map(|v| v.to_string()));
                rec.extend(o.lags.iter().map(|v| v.to_string()));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Inverse-gamma prior hyperparameters `(shape, scale)` for every variance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub a_e: f64,
    pub b_e: f64,
    pub a_0: f64,
    pub b_0: f64,
    pub a_1: f64,
    pub b_1: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub a_g: f64,
    pub b_g: f64,
    pub a_u: f64,
    pub b_u: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            a_e: 0.01,
            b_e: 0.01,
            a_0: 0.01,
            b_0: 0.01,
            a_1: 0.01,
            b_1: 0.01,
            a_gamma: 0.01,
            b_gamma: 0.01,
            a_g: 0.01,
            b_g: 0.01,
            a_u: 0.01,
            b_u: 0.01,
        }
    }
}

impl Priors {
    pub fn all(&self) -> [f64; 12] {
        [
            self.a_e, self.b_e, self.a_0, self.b_0, self.a_1, self.b_1, self.a_gamma, self.b_gamma,
            self.a_g, self.b_g, self.a_u, self.b_u,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub design: Design,
    pub random_effect: RandomEffect,
    /// Basis size of each fixed lag curve (K₀ = K₁ = K_γ).
    pub num_basis: usize,
    /// Basis size of each subject's random lag curve; 1 gives one scalar per subject.
    pub random_basis: usize,
    pub degree: usize,
    pub xi: f64,
    pub priors: Priors,
    /// Fixed prior variance of each fixed-effect coefficient.
    pub sigma_b2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            design: Design::Crossover,
            random_effect: RandomEffect::Intercept,
            num_basis: 8,
            random_basis: 8,
            degree: 3,
            xi: 0.01,
            priors: Priors::default(),
            sigma_b2: 1e6,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

impl ModelConfig {
    pub fn new(design: Design, random_effect: RandomEffect) -> Self {
        ModelConfig {
            design,
            random_effect,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.priors.all().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LdlmError::InvalidConfig("prior hyperparameters must be positive".into()));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(LdlmError::InvalidConfig(format!("xi must lie in (0, 1], got {}", self.xi)));
        }
        if !(self.tol > 0.0) {
            return Err(LdlmError::InvalidConfig("tol must be positive".into()));
        }
        if !(self.sigma_b2 > 0.0) {
            return Err(LdlmError::InvalidConfig("sigma_b2 must be positive".into()));
        }
        if self.num_basis == 0 || self.random_basis == 0 || self.max_iter == 0 {
            return Err(LdlmError::InvalidConfig(
                "num_basis, random_basis and max_iter must be positive".into(),
            ));
        }
        Ok(())
    }

    fn basis_spec(&self, num_lags: usize, k: usize) -> BasisSpec {
        BasisSpec::with_degree(num_lags, k, self.degree.min(k - 1))
    }

    pub fn fixed_basis(&self, num_lags: usize) -> Result<DMatrix<f64>> {
        build_basis(&self.basis_spec(num_lags, self.num_basis))
    }

    pub fn random_basis_matrix(&self, num_lags: usize) -> Result<DMatrix<f64>> {
        build_basis(&self.basis_spec(num_lags, self.random_basis))
    }
}

/// Penalty of a `dim`-dimensional spline block; pure ridge when `dim < 3`.
pub fn penalty_for(dim: usize, xi: f64) -> Result<DMatrix<f64>> {
    if dim < 3 {
        Ok(DMatrix::identity(dim, dim))
    } else {
        build_penalty(&PenaltySpec { dim, xi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Beta,
    Gamma0,
    Gamma1,
    Gamma,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub block: Block,
    pub start: usize,
    pub end: usize,
}

/// Column ranges of each coefficient block inside θ (and C).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndex {
    pub spans: Vec<BlockSpan>,
}

impl BlockIndex {
    pub fn get(&self, block: Block) -> Option<Range<usize>> {
        self.spans.iter().find(|s| s.block == block).map(|s| s.start..s.end)
    }

    pub fn require(&self, block: Block) -> Result<Range<usize>> {
        self.get(block)
            .ok_or_else(|| LdlmError::Contract(format!("model has no {block:?} block")))
    }

    pub fn total(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    fn push(&mut self, block: Block, len: usize) {
        let start = self.total();
        self.spans.push(BlockSpan {
            block,
            start,
            end: start + len,
        });
    }
}

/// A penalized coefficient block with prior `N(0, λ P⁻¹)`, `λ ~ IG(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub block: Block,
    pub penalty: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub y: DVector<f64>,
    pub c: DMatrix<f64>,
    pub block_index: BlockIndex,
    pub penalty_blocks: Vec<PenaltyBlock>,
    pub num_subjects: usize,
    /// Subject of every stacked row.
    pub row_subject: Vec<usize>,
}

impl DesignMatrices {
    pub fn num_rows(&self) -> usize {
        self.y.len()
    }

    pub fn num_coefficients(&self) -> usize {
        self.c.ncols()
    }
}

/// Builds Y and C = [X | fixed-lag block | random block].
pub fn assemble(
    data: &LdlmDataset,
    config: &ModelConfig,
    theta_fixed: &DMatrix<f64>,
    theta_rand: &DMatrix<f64>,
) -> Result<DesignMatrices> {
    config.validate()?;
    data.validate(config.design)?;
    let ell = data.num_lags();
    let p = data.num_covariates();
    let n = data.num_subjects();
    let rows = data.num_rows();
    let k = theta_fixed.ncols();
    if theta_fixed.nrows() != ell {
        return Err(LdlmError::InvalidConfig(format!(
            "fixed basis has {} rows but data has {ell} lags",
            theta_fixed.nrows()
        )));
    }
    let kg = theta_rand.ncols();
    if config.random_effect == RandomEffect::Lag && theta_rand.nrows() != ell {
        return Err(LdlmError::InvalidConfig(format!(
            "random basis has {} rows but data has {ell} lags",
            theta_rand.nrows()
        )));
    }

    let mut index = BlockIndex { spans: Vec::new() };
    if p > 0 {
        index.push(Block::Beta, p);
    }
    match config.design {
        Design::Crossover => {
            index.push(Block::Gamma0, k);
            index.push(Block::Gamma1, k);
        }
        Design::Longitudinal => index.push(Block::Gamma, k),
    }
    let random_dim = match config.random_effect {
        RandomEffect::Lag => n * kg,
        RandomEffect::Intercept => n,
    };
    index.push(Block::Random, random_dim);
    let q = index.total();
    let random_start = index.require(Block::Random)?.start;

    let mut y = DVector::zeros(rows);
    let mut c = DMatrix::zeros(rows, q);
    let mut row_subject = Vec::with_capacity(rows);
    let mut r = 0;
    for (i, s) in data.subjects.iter().enumerate() {
        for o in &s.occasions {
            y[r] = o.y;
            for (col, v) in o.x.iter().enumerate() {
                c[(r, col)] = *v;
            }
            let lag = DVector::from_column_slice(&o.lags);
            let fixed = theta_fixed.tr_mul(&lag);
            let block = match config.design {
                Design::Crossover if o.index == 1 => Block::Gamma1,
                Design::Crossover => Block::Gamma0,
                Design::Longitudinal => Block::Gamma,
            };
            let start = index.require(block)?.start;
            for (kk, v) in fixed.iter().enumerate() {
                c[(r, start + kk)] = *v;
            }
            match config.random_effect {
                RandomEffect::Lag => {
                    let rand = theta_rand.tr_mul(&lag);
                    for (kk, v) in rand.iter().enumerate() {
                        c[(r, random_start + i * kg + kk)] = *v;
                    }
                }
                RandomEffect::Intercept => c[(r, random_start + i)] = 1.0,
            }
            row_subject.push(i);
            r += 1;
        }
    }

    let priors = &config.priors;
    let fixed_penalty = penalty_for(k, config.xi)?;
    let mut penalty_blocks = Vec::new();
    match config.design {
        Design::Crossover => {
            penalty_blocks.push(PenaltyBlock {
                block: Block::Gamma0,
                penalty: fixed_penalty.clone(),
                a: priors.a_0,
                b: priors.b_0,
            });
            penalty_blocks.push(PenaltyBlock {
                block: Block::Gamma1,
                penalty: fixed_penalty,
                a: priors.a_1,
                b: priors.b_1,
            });
        }
        Design::Longitudinal => penalty_blocks.push(PenaltyBlock {
            block: Block::Gamma,
            penalty: fixed_penalty,
            a: priors.a_gamma,
            b: priors.b_gamma,
        }),
    }
    let random_penalty = match config.random_effect {
        RandomEffect::Lag => {
            let per_subject = penalty_for(kg, config.xi)?;
            let mut full = DMatrix::zeros(random_dim, random_dim);
            for i in 0..n {
                full.view_mut((i * kg, i * kg), (kg, kg)).copy_from(&per_subject);
            }
            PenaltyBlock {
                block: Block::Random,
                penalty: full,
                a: priors.a_g,
                b: priors.b_g,
            }
        }
        RandomEffect::Intercept => PenaltyBlock {
            block: Block::Random,
            penalty: DMatrix::identity(n, n),
            a: priors.a_u,
            b: priors.b_u,
        },
    };
    penalty_blocks.push(random_penalty);

    Ok(DesignMatrices {
        y,
        c,
        block_index: index,
        penalty_blocks,
        num_subjects: n,
        row_subject,
    })
}

/// [`assemble`] with bases built from the configuration.
pub fn build_design(data: &LdlmDataset, config: &ModelConfig) -> Result<DesignMatrices> {
    let ell = data.num_lags();
    if ell < 2 {
        return Err(LdlmError::InvalidData(format!("need at least 2 lag columns, got {ell}")));
    }
    let theta_fixed = config.fixed_basis(ell)?;
    let theta_rand = config.random_basis_matrix(ell)?;
    assemble(data, config, &theta_fixed, &theta_rand)
}
