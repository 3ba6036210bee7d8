//! Gaussian variational guides.
//!
//! Two posterior approximations are supported: a diagonal Gaussian with
//! means `m` and unconstrained scales `s`, and a full-rank Gaussian whose
//! covariance Cholesky factor is parametrized by a packed lower-triangular
//! vector `a`. Off-diagonal entries of `a` enter the factor unchanged;
//! diagonal entries pass through the scalar transform, which keeps the
//! diagonal guide a strict special case (off-diagonals zero) and the
//! Jacobian of the factor sparse and closed-form.
//!
//! Packing convention for `a`: row-major over the lower triangle, i.e.
//! slots `(0,0), (1,0), (1,1), (2,0), (2,1), (2,2), ...`.

use crate::error::{DpviError, Result};
use crate::transforms::TransformKind;

/// `d/2 * (1 + log(2*pi))`, the entropy constant of a d-dim Gaussian.
fn entropy_const(d: usize) -> f64 {
    0.5 * d as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln())
}

/// Index of packed slot `(i, j)`, `i >= j`, in row-major lower-triangle order.
pub fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Dimension `d` such that `len == d(d+1)/2`, or a shape error.
pub fn packed_dim(len: usize) -> Result<usize> {
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if d * (d + 1) / 2 == len {
        Ok(d)
    } else {
        Err(DpviError::Shape(format!(
            "packed length {len} is not a triangular number"
        )))
    }
}

/// Diagonal Gaussian guide with means `m` and unconstrained scales `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGuide {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub transform: TransformKind,
}

impl DiagonalGuide {
    pub fn new(m: Vec<f64>, s: Vec<f64>, transform: TransformKind) -> Result<Self> {
        if m.is_empty() || m.len() != s.len() {
            return Err(DpviError::Shape(format!(
                "diagonal guide requires matching non-empty m and s, got {} and {}",
                m.len(),
                s.len()
            )));
        }
        if m.iter().chain(s.iter()).any(|v| !v.is_finite()) {
            return Err(DpviError::Data(
                "diagonal guide parameters must be finite".into(),
            ));
        }
        Ok(Self { m, s, transform })
    }

    /// Guide with zero means and every scale initialized so that
    /// `T(s) = sigma`.
    pub fn with_initial_sigma(dim: usize, sigma: f64, transform: TransformKind) -> Result<Self> {
        let s0 = transform.inverse(sigma)?;
        Self::new(vec![0.0; dim], vec![s0; dim], transform)
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// `sigma_q = T(s)` elementwise.
    pub fn sigma(&self) -> Result<Vec<f64>> {
        self.transform.value_vec(&self.s)
    }

    /// Reparametrized draw `theta = m + T(s) * eta`.
    pub fn reparam_draw(&self, eta: &[f64]) -> Result<Vec<f64>> {
        if eta.len() != self.dim() {
            return Err(DpviError::Shape(format!(
                "noise draw has length {}, guide dimension is {}",
                eta.len(),
                self.dim()
            )));
        }
        let mut theta = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            theta.push(self.m[j] + self.transform.value(self.s[j])? * eta[j]);
        }
        Ok(theta)
    }

    /// Differential entropy `sum_j log T(s_j) + d/2 (1 + log 2 pi)`.
    pub fn entropy(&self) -> Result<f64> {
        let mut h = entropy_const(self.dim());
        for &sj in &self.s {
            h += self.transform.value(sj)?.ln();
        }
        Ok(h)
    }

    /// Gradient of the entropy w.r.t. `s`: `T'(s) / T(s)` elementwise.
    pub fn entropy_grad_s(&self) -> Result<Vec<f64>> {
        self.s
            .iter()
            .map(|&sj| Ok(self.transform.deriv(sj)? / self.transform.value(sj)?))
            .collect()
    }
}

/// Full-rank Gaussian guide with means `m` and packed Cholesky parameters `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRankGuide {
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub transform: TransformKind,
}

impl FullRankGuide {
    pub fn new(m: Vec<f64>, a: Vec<f64>, transform: TransformKind) -> Result<Self> {
        let d = packed_dim(a.len())?;
        if m.len() != d {
            return Err(DpviError::Shape(format!(
                "mean length {} does not match packed dimension {d}",
                m.len()
            )));
        }
        if m.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(DpviError::Data(
                "full-rank guide parameters must be finite".into(),
            ));
        }
        Ok(Self { m, a, transform })
    }

    /// Zero means, diagonal slots set so `L_ii = sigma`, off-diagonals zero.
    pub fn with_initial_sigma(dim: usize, sigma: f64, transform: TransformKind) -> Result<Self> {
        let s0 = transform.inverse(sigma)?;
        let mut a = vec![0.0; dim * (dim + 1) / 2];
        for i in 0..dim {
            a[packed_index(i, i)] = s0;
        }
        Self::new(vec![0.0; dim], a, transform)
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn packed_len(&self) -> usize {
        self.a.len()
    }

    /// The Cholesky factor as a dense row-major `d x d` matrix.
    pub fn cholesky_factor(&self) -> Result<Vec<Vec<f64>>> {
        cholesky_factor(&self.a, self.transform)
    }

    /// Reparametrized draw `theta = m + L * eta`.
    pub fn reparam_draw(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if eta.len() != d {
            return Err(DpviError::Shape(format!(
                "noise draw has length {}, guide dimension is {d}",
                eta.len()
            )));
        }
        let mut theta = Vec::with_capacity(d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..i {
                acc += self.a[packed_index(i, j)] * eta[j];
            }
            acc += self.transform.value(self.a[packed_index(i, i)])? * eta[i];
            theta.push(self.m[i] + acc);
        }
        Ok(theta)
    }

    /// Differential entropy `sum_i log L_ii + d/2 (1 + log 2 pi)`.
    pub fn entropy(&self) -> Result<f64> {
        let mut h = entropy_const(self.dim());
        for i in 0..self.dim() {
            h += self.transform.value(self.a[packed_index(i, i)])?.ln();
        }
        Ok(h)
    }

    /// Gradient of the entropy w.r.t. the packed `a`: `T'(a_ii) / L_ii` on
    /// diagonal slots, zero elsewhere.
    pub fn entropy_grad_a(&self) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.packed_len()];
        for i in 0..self.dim() {
            let idx = packed_index(i, i);
            g[idx] = self.transform.deriv(self.a[idx])? / self.transform.value(self.a[idx])?;
        }
        Ok(g)
    }
}

/// Unpack `a` into the lower-triangular factor: raw off-diagonals,
/// transformed (hence strictly positive) diagonal.
pub fn cholesky_factor(a: &[f64], transform: TransformKind) -> Result<Vec<Vec<f64>>> {
    let d = packed_dim(a.len())?;
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..i {
            l[i][j] = a[packed_index(i, j)];
        }
        l[i][i] = transform.value(a[packed_index(i, i)])?;
    }
    Ok(l)
}

/// Either guide family, as stored by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub enum Guide {
    Diagonal(DiagonalGuide),
    FullRank(FullRankGuide),
}

impl Guide {
    pub fn dim(&self) -> usize {
        match self {
            Guide::Diagonal(g) => g.dim(),
            Guide::FullRank(g) => g.dim(),
        }
    }

    /// Number of scale parameters (`d` diagonal, `d(d+1)/2` full-rank).
    pub fn scale_len(&self) -> usize {
        match self {
            Guide::Diagonal(g) => g.dim(),
            Guide::FullRank(g) => g.packed_len(),
        }
    }

    pub fn transform(&self) -> TransformKind {
        match self {
            Guide::Diagonal(g) => g.transform,
            Guide::FullRank(g) => g.transform,
        }
    }

    pub fn reparam_draw(&self, eta: &[f64]) -> Result<Vec<f64>> {
        match self {
            Guide::Diagonal(g) => g.reparam_draw(eta),
            Guide::FullRank(g) => g.reparam_draw(eta),
        }
    }

    pub fn entropy(&self) -> Result<f64> {
        match self {
            Guide::Diagonal(g) => g.entropy(),
            Guide::FullRank(g) => g.entropy(),
        }
    }

    /// Entropy gradient w.r.t. the scale parameters.
    pub fn entropy_grad_scale(&self) -> Result<Vec<f64>> {
        match self {
            Guide::Diagonal(g) => g.entropy_grad_s(),
            Guide::FullRank(g) => g.entropy_grad_a(),
        }
    }

    /// Names of all parameters in `(m, scale)` order, matching the layout
    /// used in traces and CSV output.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.dim()).map(|j| format!("m[{j}]")).collect();
        match self {
            Guide::Diagonal(g) => {
                names.extend((0..g.dim()).map(|j| format!("s[{j}]")));
            }
            Guide::FullRank(g) => {
                for i in 0..g.dim() {
                    for j in 0..=i {
                        names.push(format!("a[{i},{j}]"));
                    }
                }
            }
        }
        names
    }

    /// Flat parameter vector `(m, scale)`.
    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Guide::Diagonal(g) => g.m.iter().chain(g.s.iter()).copied().collect(),
            Guide::FullRank(g) => g.m.iter().chain(g.a.iter()).copied().collect(),
        }
    }

    /// Overwrite parameters from a flat `(m, scale)` vector.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let (dim, scale_len) = (self.dim(), self.scale_len());
        if flat.len() != dim + scale_len {
            return Err(DpviError::Shape(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                dim + scale_len
            )));
        }
        match self {
            Guide::Diagonal(g) => {
                g.m.copy_from_slice(&flat[..dim]);
                g.s.copy_from_slice(&flat[dim..]);
            }
            Guide::FullRank(g) => {
                g.m.copy_from_slice(&flat[..dim]);
                g.a.copy_from_slice(&flat[dim..]);
            }
        }
        Ok(())
    }
}
