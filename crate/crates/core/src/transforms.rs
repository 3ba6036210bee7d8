//! Scalar transforms mapping unconstrained parameters to positive scales.
//!
//! The Gaussian guide keeps its standard deviations in unconstrained form
//! and maps them through a monotonic `T: R -> R_+` whenever a positive
//! scale is needed. Two choices are supported: softplus (the default) and
//! exp. Both satisfy `T'(s) <= T(s)` everywhere, which is what makes the
//! scale gradient systematically smaller than the mean gradient and is the
//! starting point of the aligned estimator.
//!
//! All functions are pure scalar maps; callers lift them elementwise.

use std::fmt;
use std::str::FromStr;

use crate::error::{DpviError, Result};

/// Unconstraining transform for scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// `T(s) = log(1 + exp(s))`, with `T'(s) = sigmoid(s)`.
    Softplus,
    /// `T(s) = exp(s)`, with `T'(s) = exp(s)`.
    Exp,
}

impl Default for TransformKind {
    fn default() -> Self {
        TransformKind::Softplus
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformKind::Softplus => write!(f, "softplus"),
            TransformKind::Exp => write!(f, "exp"),
        }
    }
}

impl FromStr for TransformKind {
    type Err = DpviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(TransformKind::Softplus),
            "exp" => Ok(TransformKind::Exp),
            other => Err(DpviError::Config(format!(
                "unknown transform '{other}' (expected 'softplus' or 'exp')"
            ))),
        }
    }
}

/// Numerically stable softplus. For large `s` the naive `ln(1 + e^s)`
/// overflows, so we use `max(s, 0) + log1p(exp(-|s|))`, which is exact in
/// both tails.
#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn check_finite(kind: TransformKind, s: f64) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(DpviError::Domain(format!(
            "transform {kind} evaluated at non-finite input {s}"
        )))
    }
}

impl TransformKind {
    /// `T(s)`. Positive for all finite `s`.
    pub fn value(self, s: f64) -> Result<f64> {
        check_finite(self, s)?;
        Ok(match self {
            TransformKind::Softplus => softplus(s),
            TransformKind::Exp => s.exp(),
        })
    }

    /// `T'(s)`. Equals `sigmoid(s)` for softplus and `exp(s)` for exp,
    /// so `deriv(s) <= value(s)` holds for both kinds.
    pub fn deriv(self, s: f64) -> Result<f64> {
        check_finite(self, s)?;
        Ok(match self {
            TransformKind::Softplus => sigmoid(s),
            TransformKind::Exp => s.exp(),
        })
    }

    /// `T^{-1}(sigma)`, used to initialize unconstrained scales from a
    /// target standard deviation.
    pub fn inverse(self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(DpviError::Domain(format!(
                "transform {self} inverse requires sigma > 0, got {sigma}"
            )));
        }
        Ok(match self {
            // s = log(exp(sigma) - 1) = sigma + log(1 - exp(-sigma)),
            // written via expm1/ln_1p to stay accurate for small sigma.
            TransformKind::Softplus => {
                if sigma > 30.0 {
                    // exp(-sigma) underflows; the identity is exact here.
                    sigma
                } else {
                    sigma.exp_m1().ln()
                }
            }
            TransformKind::Exp => sigma.ln(),
        })
    }

    /// Elementwise `value` over a slice.
    pub fn value_vec(self, s: &[f64]) -> Result<Vec<f64>> {
        s.iter().map(|&v| self.value(v)).collect()
    }

    /// Elementwise `deriv` over a slice.
    pub fn deriv_vec(self, s: &[f64]) -> Result<Vec<f64>> {
        s.iter().map(|&v| self.deriv(v)).collect()
    }
}
