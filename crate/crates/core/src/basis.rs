//! B-spline lag bases and weighted difference penalties.
//!
//! Lags are the integers `1..=num_lags`. Knots are equally spaced over the
//! domain with the boundary knots repeated `degree + 1` times, so every row of
//! the basis matrix sums to one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{LdlmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub num_lags: usize,
    pub num_basis: usize,
    pub degree: usize,
    /// Closed interval covered by the lags; defaults to `[1, num_lags]`.
    pub domain: (f64, f64),
}

impl BasisSpec {
    /// Cubic basis over `[1, num_lags]`.
    pub fn cubic(num_lags: usize, num_basis: usize) -> Self {
        Self::with_degree(num_lags, num_basis, 3)
    }

    pub fn with_degree(num_lags: usize, num_basis: usize, degree: usize) -> Self {
        BasisSpec {
            num_lags,
            num_basis,
            degree,
            domain: (1.0, num_lags as f64),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_lags < 2 {
            return Err(LdlmError::InvalidConfig(format!(
                "basis needs at least 2 lags, got {}",
                self.num_lags
            )));
        }
        if self.num_basis < self.degree + 1 {
            return Err(LdlmError::InvalidConfig(format!(
                "basis size {} is below degree + 1 = {}",
                self.num_basis,
                self.degree + 1
            )));
        }
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(LdlmError::InvalidConfig(format!("bad basis domain [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Full clamped knot vector of length `num_basis + degree + 1`.
    pub fn knots(&self) -> Vec<f64> {
        let (lo, hi) = self.domain;
        let p = self.degree;
        let spans = self.num_basis - p;
        let mut knots = Vec::with_capacity(self.num_basis + p + 1);
        knots.extend(std::iter::repeat_n(lo, p + 1));
        for i in 1..spans {
            knots.push(lo + (hi - lo) * i as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat_n(hi, p + 1));
        knots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub dim: usize,
    /// Weight on the ridge part; `1 - xi` goes to squared second differences.
    pub xi: f64,
}

/// Evaluates the basis at lags `1..=num_lags`, returning an `ℓ × K` matrix.
pub fn build_basis(spec: &BasisSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let knots = spec.knots();
    let mut theta = DMatrix::zeros(spec.num_lags, spec.num_basis);
    let mut local = vec![0.0; spec.degree + 1];
    for row in 0..spec.num_lags {
        let x = (row + 1) as f64;
        let span = find_span(&knots, spec.degree, spec.num_basis, x);
        basis_funs(&knots, spec.degree, span, x, &mut local);
        for (r, v) in local.iter().enumerate() {
            theta[(row, span - spec.degree + r)] = *v;
        }
    }
    Ok(theta)
}

// Index i with knots[i] <= x < knots[i+1], clamped to the last non-empty span.
fn find_span(knots: &[f64], degree: usize, num_basis: usize, x: f64) -> usize {
    if x >= knots[num_basis] {
        return num_basis - 1;
    }
    if x <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, num_basis);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

// Triangular Cox-de Boor scheme for the degree+1 non-zero functions on `span`.
fn basis_funs(knots: &[f64], degree: usize, span: usize, x: f64, out: &mut [f64]) {
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    out[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// `(K-2) × K` second-difference operator with rows `(…, 1, -2, 1, …)`.
pub fn second_difference(dim: usize) -> DMatrix<f64> {
    let rows = dim.saturating_sub(2);
    DMatrix::from_fn(rows, dim, |r, c| match c.wrapping_sub(r) {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    })
}

/// `ξ I + (1 - ξ) Δ₂ᵀ Δ₂`.
pub fn build_penalty(spec: &PenaltySpec) -> Result<DMatrix<f64>> {
    if !(spec.xi > 0.0 && spec.xi <= 1.0) {
        return Err(LdlmError::InvalidConfig(format!(
            "penalty weight xi must lie in (0, 1], got {}",
            spec.xi
        )));
    }
    if spec.dim < 3 {
        return Err(LdlmError::InvalidConfig(format!(
            "second-difference penalty needs dimension >= 3, got {}",
            spec.dim
        )));
    }
    let d2 = second_difference(spec.dim);
    let smooth = d2.transpose() * &d2;
    let mut penalty = smooth * (1.0 - spec.xi);
    for i in 0..spec.dim {
        penalty[(i, i)] += spec.xi;
    }
    // exact symmetry regardless of summation order
    let penalty = (&penalty + penalty.transpose()) * 0.5;
    Ok(penalty)
}
