//! Built-in probabilistic models.
//!
//! A model exposes per-example log-likelihood, a log-prior, and their
//! gradients w.r.t. the model parameters `theta`. All three built-ins put a
//! standard normal prior on the regression weights; the linear-regression
//! model additionally carries a noise scale `sigma_y = exp(u)` with a
//! Gamma(0.1, 0.1) prior on `sigma_y`, handled in unconstrained space with
//! the exp reparametrization's log-Jacobian `+u` folded into the prior.

use statrs::function::gamma::ln_gamma;

use crate::error::{DpviError, Result};

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// A probabilistic model over i.i.d. examples `(x, y)` with parameter
/// vector `theta` of length `dim()`.
pub trait Model {
    /// Length of `theta`.
    fn dim(&self) -> usize;

    /// Number of feature columns an example row must have.
    fn n_features(&self) -> usize;

    /// `log p(y | x, theta)` for a single example.
    fn per_example_loglik(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<f64>;

    /// Gradient of `per_example_loglik` w.r.t. `theta`.
    fn per_example_loglik_grad(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<Vec<f64>>;

    /// `log p(theta)`.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Gradient of `log_prior` w.r.t. `theta`.
    fn log_prior_grad(&self, theta: &[f64]) -> Vec<f64>;

    /// Check that a target value is admissible for this model.
    fn validate_target(&self, _y: f64) -> Result<()> {
        Ok(())
    }
}

fn check_shapes(model: &dyn Model, x: &[f64], theta: &[f64]) -> Result<()> {
    if x.len() != model.n_features() {
        return Err(DpviError::Shape(format!(
            "example has {} features, model expects {}",
            x.len(),
            model.n_features()
        )));
    }
    if theta.len() != model.dim() {
        return Err(DpviError::Shape(format!(
            "theta has length {}, model dimension is {}",
            theta.len(),
            model.dim()
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + exp(z))`, overflow-safe.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Standard-normal log-prior over `w` (all coordinates).
fn std_normal_log_prior(w: &[f64]) -> f64 {
    let ss: f64 = w.iter().map(|v| v * v).sum();
    -0.5 * ss - 0.5 * w.len() as f64 * LN_2PI
}

/// Logistic regression: `y ~ Bernoulli(sigmoid(x . w))`, `w ~ N(0, I)`.
///
/// The log-likelihood is evaluated as `y z - softplus(z)` with `z = x . w`,
/// which never produces `-inf` for finite inputs.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    p: usize,
}

impl LogisticRegression {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(DpviError::Config("feature count must be >= 1".into()));
        }
        Ok(Self { p })
    }
}

impl Model for LogisticRegression {
    fn dim(&self) -> usize {
        self.p
    }

    fn n_features(&self) -> usize {
        self.p
    }

    fn per_example_loglik(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<f64> {
        check_shapes(self, x, theta)?;
        self.validate_target(y)?;
        let z = dot(x, theta);
        Ok(y * z - softplus(z))
    }

    fn per_example_loglik_grad(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_shapes(self, x, theta)?;
        self.validate_target(y)?;
        let r = y - sigmoid(dot(x, theta));
        Ok(x.iter().map(|&xi| r * xi).collect())
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        std_normal_log_prior(theta)
    }

    fn log_prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|&t| -t).collect()
    }

    fn validate_target(&self, y: f64) -> Result<()> {
        if y == 0.0 || y == 1.0 {
            Ok(())
        } else {
            Err(DpviError::Data(format!(
                "logistic regression target must be 0 or 1, got {y}"
            )))
        }
    }
}

/// Bayesian linear regression with unknown noise scale.
///
/// `theta = (w, u)` with `sigma_y = exp(u)`;
/// `y ~ N(x . w, sigma_y^2)`, `w ~ N(0, I)`, `sigma_y ~ Gamma(0.1, 0.1)`.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    p: usize,
}

impl LinearRegression {
    pub const GAMMA_SHAPE: f64 = 0.1;
    pub const GAMMA_RATE: f64 = 0.1;

    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(DpviError::Config("feature count must be >= 1".into()));
        }
        Ok(Self { p })
    }
}

impl Model for LinearRegression {
    fn dim(&self) -> usize {
        self.p + 1
    }

    fn n_features(&self) -> usize {
        self.p
    }

    fn per_example_loglik(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<f64> {
        check_shapes(self, x, theta)?;
        let u = theta[self.p];
        let resid = y - dot(x, &theta[..self.p]);
        Ok(-0.5 * LN_2PI - u - 0.5 * resid * resid * (-2.0 * u).exp())
    }

    fn per_example_loglik_grad(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_shapes(self, x, theta)?;
        let u = theta[self.p];
        let inv_var = (-2.0 * u).exp();
        let resid = y - dot(x, &theta[..self.p]);
        let mut g = Vec::with_capacity(self.p + 1);
        for &xi in x {
            g.push(resid * xi * inv_var);
        }
        g.push(-1.0 + resid * resid * inv_var);
        Ok(g)
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let (w, u) = (&theta[..self.p], theta[self.p]);
        let (a, b) = (Self::GAMMA_SHAPE, Self::GAMMA_RATE);
        // Gamma(a, b) density of sigma = exp(u), plus the log-Jacobian u:
        // (a-1) u - b e^u + a log b - lgamma(a) + u  =  a u - b e^u + const.
        std_normal_log_prior(w) + a * u - b * u.exp() + a * b.ln() - ln_gamma(a)
    }

    fn log_prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        let u = theta[self.p];
        let mut g: Vec<f64> = theta[..self.p].iter().map(|&t| -t).collect();
        g.push(Self::GAMMA_SHAPE - Self::GAMMA_RATE * u.exp());
        g
    }
}

/// Poisson regression: `y ~ Poisson(exp(x . w))`, `w ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct PoissonRegression {
    p: usize,
}

impl PoissonRegression {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(DpviError::Config("feature count must be >= 1".into()));
        }
        Ok(Self { p })
    }
}

impl Model for PoissonRegression {
    fn dim(&self) -> usize {
        self.p
    }

    fn n_features(&self) -> usize {
        self.p
    }

    fn per_example_loglik(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<f64> {
        check_shapes(self, x, theta)?;
        self.validate_target(y)?;
        let z = dot(x, theta);
        Ok(y * z - z.exp() - ln_gamma(y + 1.0))
    }

    fn per_example_loglik_grad(&self, x: &[f64], y: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_shapes(self, x, theta)?;
        self.validate_target(y)?;
        let r = y - dot(x, theta).exp();
        Ok(x.iter().map(|&xi| r * xi).collect())
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        std_normal_log_prior(theta)
    }

    fn log_prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|&t| -t).collect()
    }

    fn validate_target(&self, y: f64) -> Result<()> {
        if y >= 0.0 && y.fract() == 0.0 && y.is_finite() {
            Ok(())
        } else {
            Err(DpviError::Data(format!(
                "poisson regression target must be a non-negative integer, got {y}"
            )))
        }
    }
}

/// Construct a built-in model by its CLI name.
pub fn model_by_name(name: &str, n_features: usize) -> Result<Box<dyn Model>> {
    match name {
        "logistic" => Ok(Box::new(LogisticRegression::new(n_features)?)),
        "linear" => Ok(Box::new(LinearRegression::new(n_features)?)),
        "poisson" => Ok(Box::new(PoissonRegression::new(n_features)?)),
        other => Err(DpviError::Config(format!(
            "unknown model '{other}' (expected 'logistic', 'linear' or 'poisson')"
        ))),
    }
}

/// A dataset of `n_rows` examples with named feature columns and a target.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>, // row-major, n_rows x n_cols
    targets: Vec<f64>,
    n_cols: usize,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        targets: Vec<f64>,
        feature_names: Vec<String>,
        target_name: String,
    ) -> Result<Self> {
        let n_cols = feature_names.len();
        if n_cols == 0 || targets.is_empty() {
            return Err(DpviError::Data("dataset must be non-empty".into()));
        }
        if features.len() != targets.len() * n_cols {
            return Err(DpviError::Shape(format!(
                "feature buffer has {} entries, expected {} rows x {} columns",
                features.len(),
                targets.len(),
                n_cols
            )));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(DpviError::Data("dataset contains non-finite entries".into()));
        }
        Ok(Self {
            features,
            targets,
            n_cols,
            feature_names,
            target_name,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Standardize every feature column to zero mean and unit variance
    /// (columns with zero variance are left centered only).
    pub fn standardize(&mut self) {
        let n = self.n_rows() as f64;
        for c in 0..self.n_cols {
            let mut mean = 0.0;
            for r in 0..self.n_rows() {
                mean += self.features[r * self.n_cols + c];
            }
            mean /= n;
            let mut var = 0.0;
            for r in 0..self.n_rows() {
                let v = self.features[r * self.n_cols + c] - mean;
                var += v * v;
            }
            var /= n;
            let sd = var.sqrt();
            for r in 0..self.n_rows() {
                let v = &mut self.features[r * self.n_cols + c];
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
    }
}
