//! Synthetic data generation.
//!
//! Correlated linear-regression data is generated by sampling a correlation
//! matrix with a controlled density of nonzero off-diagonal entries, scaling
//! it by log-normal marginal factors, and drawing Gaussian features. The
//! sampled correlation matrix can be indefinite at high density, so it is
//! repaired by eigenvalue clipping followed by re-normalization to unit
//! diagonal, iterated until the smallest eigenvalue clears a floor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{DpviError, Result};
use crate::models::Dataset;
use crate::rng::{standard_normal_vec, RngFactory, StreamPurpose};

/// Configuration for the correlated-regression generator.
#[derive(Debug, Clone, Copy)]
pub struct SynthRegressionConfig {
    /// Feature dimension.
    pub dim: usize,
    /// Fraction of nonzero off-diagonal correlation pairs, in [0, 1].
    pub rho: f64,
    /// Beta shape parameters controlling correlation strength.
    pub alpha_beta: f64,
    pub beta_beta: f64,
    /// Rows per split (an independent test split of the same size is drawn).
    pub n: usize,
    /// Observation noise scale of the targets.
    pub sigma_y: f64,
    /// Standard deviation of the log marginal scale factors (0 forces the
    /// identity scaling used in tests).
    pub marginal_log_std: f64,
    pub seed: u64,
}

impl Default for SynthRegressionConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            rho: 0.2,
            alpha_beta: 8.0,
            beta_beta: 10.0,
            n: 10_000,
            sigma_y: 1.0,
            marginal_log_std: 0.2,
            seed: 0,
        }
    }
}

/// Minimum eigenvalue enforced by the positive-definiteness repair.
pub const PD_FLOOR: f64 = 1e-6;

/// Sample a raw correlation matrix: identity diagonal plus exactly
/// `K = round(rho d(d-1)/2)` symmetric off-diagonal pairs set to `f * c`
/// with `c ~ Beta(alpha, beta)` and `f` a random sign. No repair applied.
pub fn sample_correlation_matrix_raw<R: Rng>(
    d: usize,
    rho: f64,
    alpha_beta: f64,
    beta_beta: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(DpviError::Config(format!("rho must be in [0, 1], got {rho}")));
    }
    if d == 0 {
        return Err(DpviError::Config("dimension must be >= 1".into()));
    }
    let beta = Beta::new(alpha_beta, beta_beta)
        .map_err(|e| DpviError::Config(format!("invalid Beta parameters: {e}")))?;
    let n_pairs = d * (d - 1) / 2;
    let k = (rho * n_pairs as f64).round() as usize;

    let mut pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .collect();
    // Fisher-Yates prefix shuffle: the first k pairs are a uniform sample.
    for idx in 0..k.min(n_pairs) {
        let swap_with = rng.gen_range(idx..n_pairs);
        pairs.swap(idx, swap_with);
    }

    let mut c = DMatrix::<f64>::identity(d, d);
    for &(i, j) in pairs.iter().take(k) {
        let strength: f64 = beta.sample(rng);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        c[(i, j)] = sign * strength;
        c[(j, i)] = sign * strength;
    }
    Ok(c)
}

/// Repair a symmetric matrix to a positive-definite correlation matrix:
/// clip eigenvalues at [`PD_FLOOR`], re-normalize to unit diagonal, and
/// iterate (the re-normalization can push the spectrum down again).
pub fn repair_correlation_matrix(mut c: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = c.nrows();
    // Clip above the floor so the re-normalization's roundoff cannot push
    // the spectrum back under it.
    let clip_level = 10.0 * PD_FLOOR;
    for _ in 0..10 {
        let eig = c.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig >= PD_FLOOR {
            return Ok(c);
        }
        let clipped = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(clip_level)));
        let q = eig.eigenvectors;
        c = &q * DMatrix::from_diagonal(&clipped) * q.transpose();
        // re-normalize to unit diagonal and re-symmetrize
        let scale: Vec<f64> = (0..d).map(|i| c[(i, i)].sqrt()).collect();
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] /= scale[i] * scale[j];
            }
        }
        for i in 0..d {
            c[(i, i)] = 1.0;
            for j in 0..i {
                let v = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
    }
    let min_eig = c
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig >= PD_FLOOR {
        Ok(c)
    } else {
        Err(DpviError::Generation(format!(
            "correlation matrix repair did not converge (min eigenvalue {min_eig:e})"
        )))
    }
}

/// Sample a positive-definite correlation matrix with density `rho`.
pub fn sample_correlation_matrix<R: Rng>(
    d: usize,
    rho: f64,
    alpha_beta: f64,
    beta_beta: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    repair_correlation_matrix(sample_correlation_matrix_raw(
        d, rho, alpha_beta, beta_beta, rng,
    )?)
}

/// Data-generating parameters alongside the generated splits.
#[derive(Debug, Clone)]
pub struct CorrelatedRegression {
    pub train: Dataset,
    pub test: Dataset,
    /// True regression weights.
    pub weights: Vec<f64>,
    /// Feature covariance used for both splits.
    pub covariance: DMatrix<f64>,
}

/// Generate correlated linear-regression data:
/// `Sigma = D C D` with `D_ii ~ exp(N(0, marginal_log_std^2))`,
/// `x ~ N(0, Sigma)`, `w ~ N(0, I)`, `y ~ N(X w, sigma_y^2)`. A second,
/// independent draw of `n` rows with the same `(Sigma, w)` forms the test
/// split.
pub fn gen_correlated_regression(cfg: &SynthRegressionConfig) -> Result<CorrelatedRegression> {
    let factory = RngFactory::new(cfg.seed);
    let mut rng = factory.stream(0, StreamPurpose::Data);
    let d = cfg.dim;

    let c = sample_correlation_matrix(d, cfg.rho, cfg.alpha_beta, cfg.beta_beta, &mut rng)?;
    let scales: Vec<f64> = standard_normal_vec(&mut rng, d)
        .iter()
        .map(|z| (cfg.marginal_log_std * z).exp())
        .collect();
    let mut sigma = c;
    for i in 0..d {
        for j in 0..d {
            sigma[(i, j)] *= scales[i] * scales[j];
        }
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| DpviError::Generation("covariance is not positive definite".into()))?;
    let l = chol.l();
    let weights = standard_normal_vec(&mut rng, d);

    let gen_split = |rng: &mut rand_chacha::ChaCha20Rng| -> Result<Dataset> {
        let mut features = Vec::with_capacity(cfg.n * d);
        let mut targets = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let z = standard_normal_vec(rng, d);
            let mut dot = 0.0;
            for i in 0..d {
                let mut xi = 0.0;
                for j in 0..=i {
                    xi += l[(i, j)] * z[j];
                }
                features.push(xi);
                dot += xi * weights[i];
            }
            let noise: f64 = standard_normal_vec(rng, 1)[0];
            targets.push(dot + cfg.sigma_y * noise);
        }
        Dataset::new(
            features,
            targets,
            (0..d).map(|j| format!("x{j}")).collect(),
            "y".into(),
        )
    };

    let train = gen_split(&mut rng)?;
    let test = gen_split(&mut rng)?;
    Ok(CorrelatedRegression {
        train,
        test,
        weights,
        covariance: sigma,
    })
}

/// Generated logistic-regression data with its true weights.
#[derive(Debug, Clone)]
pub struct LogisticData {
    pub train: Dataset,
    pub weights: Vec<f64>,
}

/// Generate logistic-regression data with independent standard-normal
/// features: `w ~ N(0, I)`, `y ~ Bernoulli(sigmoid(x . w))`.
pub fn gen_logistic(n: usize, p: usize, seed: u64) -> Result<LogisticData> {
    if n == 0 || p == 0 {
        return Err(DpviError::Config("need n >= 1 and p >= 1".into()));
    }
    let factory = RngFactory::new(seed);
    let mut rng = factory.stream(0, StreamPurpose::Data);
    let weights = standard_normal_vec(&mut rng, p);
    let mut features = Vec::with_capacity(n * p);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = standard_normal_vec(&mut rng, p);
        let z: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum();
        let prob = 1.0 / (1.0 + (-z).exp());
        let y = if rng.gen::<f64>() < prob { 1.0 } else { 0.0 };
        features.extend_from_slice(&x);
        targets.push(y);
    }
    let train = Dataset::new(
        features,
        targets,
        (0..p).map(|j| format!("x{j}")).collect(),
        "y".into(),
    )?;
    Ok(LogisticData { train, weights })
}
