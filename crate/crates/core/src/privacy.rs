//! DP-SGD primitives and privacy accounting.
//!
//! Per-example clipping bounds each record's contribution to the released
//! gradient sum at `C`; the Gaussian mechanism perturbs the sum with noise
//! `sigma_DP * C * psi`; Poisson subsampling amplifies privacy. The
//! accountant composes the per-iteration Rényi divergences of the
//! subsampled Gaussian mechanism and converts to `(epsilon, delta)` by
//! minimizing over a grid of Rényi orders. RDP is slightly conservative
//! compared to accountants that track the privacy loss distribution
//! numerically; comparisons should therefore fix `(sigma_DP, q, T)` rather
//! than match a target epsilon computed elsewhere.

use rand::Rng;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{DpviError, Result};
use crate::gradest::EstimatorVariant;

/// Configuration of a DP-SGD run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpSgdConfig {
    /// Clipping threshold `C` (may be `f64::INFINITY` to disable clipping
    /// in non-private runs).
    pub clip_threshold: f64,
    /// Noise multiplier `sigma_DP` (0 disables the mechanism).
    pub noise_multiplier: f64,
    /// Poisson subsampling ratio `q` in (0, 1].
    pub subsample_ratio: f64,
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Privacy slack `delta` in (0, 1).
    pub delta: f64,
    /// Seed for all random streams of the run.
    pub seed: u64,
    /// Gradient estimator variant.
    pub variant: EstimatorVariant,
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_threshold > 0.0) {
            return Err(DpviError::Config(format!(
                "clip threshold must be positive, got {}",
                self.clip_threshold
            )));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(DpviError::Config(format!(
                "noise multiplier must be finite and non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if self.noise_multiplier > 0.0 && !self.clip_threshold.is_finite() {
            return Err(DpviError::Config(
                "clip threshold must be finite when noise is added".into(),
            ));
        }
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return Err(DpviError::Config(format!(
                "subsample ratio must be in (0, 1], got {}",
                self.subsample_ratio
            )));
        }
        if self.iterations == 0 {
            return Err(DpviError::Config("iteration count must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpviError::Config(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Cumulative privacy guarantee of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
}

/// Rescale `g` to `min(1, C / ||g||) * g`. The zero vector maps to itself.
pub fn clip_row(g: &[f64], clip_threshold: f64) -> Result<Vec<f64>> {
    if !(clip_threshold > 0.0) {
        return Err(DpviError::Config(format!(
            "clip threshold must be positive, got {clip_threshold}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(DpviError::Data("cannot clip a non-finite gradient".into()));
    }
    let gamma = clip_factor(l2_norm(g), clip_threshold);
    Ok(g.iter().map(|&v| gamma * v).collect())
}

/// `min(1, C / norm)`, with the degenerate zero-norm case defined as 1.
#[inline]
pub fn clip_factor(norm: f64, clip_threshold: f64) -> f64 {
    if norm <= clip_threshold {
        1.0
    } else {
        clip_threshold / norm
    }
}

#[inline]
pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `sum + sigma_DP * C * psi`. With `sigma_DP = 0` this is the identity
/// (and `C` may then be infinite).
pub fn gaussian_mechanism(sum: &[f64], clip_threshold: f64, sigma_dp: f64, psi: &[f64]) -> Vec<f64> {
    if sigma_dp == 0.0 {
        return sum.to_vec();
    }
    debug_assert_eq!(sum.len(), psi.len());
    let scale = sigma_dp * clip_threshold;
    sum.iter().zip(psi).map(|(&s, &p)| s + scale * p).collect()
}

/// Poisson subsampling: each index enters independently with probability `q`.
pub fn poisson_subsample<R: Rng>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..n).filter(|_| rng.gen::<f64>() < q).collect()
}

// ---------------------------------------------------------------------------
// RDP accountant for the Poisson-subsampled Gaussian mechanism
// ---------------------------------------------------------------------------

/// Orders used for the RDP-to-DP minimization: a fractional band near 1,
/// half-integers through 64, and integers up to 512.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut alphas = Vec::new();
    for i in 1..10 {
        alphas.push(1.0 + 0.1 * i as f64);
    }
    let mut a = 2.0;
    while a < 64.0 {
        alphas.push(a);
        alphas.push(a + 0.5);
        a += 1.0;
    }
    let mut a = 64.0;
    while a <= 512.0 {
        alphas.push(a);
        a += 1.0;
    }
    alphas
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> f64 {
    // log(e^a - e^b) for a >= b; tiny negative overshoots from roundoff
    // collapse to -inf.
    if b >= a {
        return f64::NEG_INFINITY;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

fn log_erfc(x: f64) -> f64 {
    if x <= 8.0 {
        erfc(x).ln()
    } else {
        // Asymptotic expansion; erfc itself underflows past x ~ 27.
        let x2 = x * x;
        -x2 - (x * std::f64::consts::PI.sqrt()).ln()
            + (1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2)).ln()
    }
}

/// Log of `A_alpha` for integer `alpha`: the binomial expansion of the
/// alpha-th moment of the subsampled-Gaussian privacy loss, summed in the
/// log domain.
fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let lnq = q.ln();
    let ln1q = (-q).ln_1p();
    let a = alpha as f64;
    let lg_a1 = ln_gamma(a + 1.0);
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let log_coef = lg_a1 - ln_gamma(kf + 1.0) - ln_gamma(a - kf + 1.0);
        let term = log_coef + kf * lnq + (a - kf) * ln1q + (kf * kf - kf) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
    }
    log_a
}

/// Log of `A_alpha` for fractional `alpha`, via the two-sided series with
/// erfc tail weights. Terms are generated until they fall below 1e-13 of
/// the running scale; `A_alpha >= 1` so an absolute cutoff is safe.
fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;
    let lnq = q.ln();
    let ln1q = (-q).ln_1p();

    // binomial(alpha, i) tracked incrementally in sign/log form
    let mut log_coef = 0.0f64;
    let mut coef_positive = true;
    let mut i = 0u64;
    loop {
        let fi = i as f64;
        let j = alpha - fi;
        let log_t0 = log_coef + fi * lnq + j * ln1q;
        let log_t1 = log_coef + j * lnq + fi * ln1q;
        let log_e0 = (0.5f64).ln() + log_erfc((fi - z0) / sqrt2_sigma);
        let log_e1 = (0.5f64).ln() + log_erfc((z0 - j) / sqrt2_sigma);
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef_positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if log_s0.max(log_s1) < -30.0 || i > 5_000 {
            break;
        }
        // binom(alpha, i+1) = binom(alpha, i) * (alpha - i) / (i + 1)
        let ratio = (alpha - fi) / (fi + 1.0);
        if ratio < 0.0 {
            coef_positive = !coef_positive;
        }
        log_coef += ratio.abs().ln();
        i += 1;
    }
    log_add(log_a0, log_a1)
}

/// Per-iteration Rényi divergence of order `alpha` of the subsampled
/// Gaussian mechanism with noise multiplier `sigma` and sampling ratio `q`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 1.0);
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// Total `(epsilon, delta)` of `iterations` compositions of the subsampled
/// Gaussian mechanism: `min_alpha T * RDP_alpha + log(1/delta) / (alpha-1)`.
///
/// `sigma_dp = 0` yields an explicit infinite epsilon.
pub fn account_privacy(
    sigma_dp: f64,
    q: f64,
    iterations: usize,
    delta: f64,
) -> Result<PrivacySpend> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(DpviError::Config(format!("q must be in (0, 1], got {q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpviError::Config(format!("delta must be in (0, 1), got {delta}")));
    }
    if iterations == 0 {
        return Err(DpviError::Config("iteration count must be positive".into()));
    }
    if !(sigma_dp >= 0.0) || !sigma_dp.is_finite() {
        return Err(DpviError::Config(format!(
            "noise multiplier must be finite and non-negative, got {sigma_dp}"
        )));
    }
    if sigma_dp == 0.0 {
        return Ok(PrivacySpend {
            epsilon: f64::INFINITY,
            delta,
        });
    }
    let log_inv_delta = -delta.ln();
    let t = iterations as f64;
    let mut best = f64::INFINITY;
    for alpha in default_alpha_grid() {
        let rdp = rdp_subsampled_gaussian(q, sigma_dp, alpha);
        if !rdp.is_finite() {
            continue;
        }
        let eps = t * rdp + log_inv_delta / (alpha - 1.0);
        if eps < best {
            best = eps;
        }
    }
    Ok(PrivacySpend {
        epsilon: best,
        delta,
    })
}

/// Smallest noise multiplier whose accounted epsilon is within 1% below
/// `target_epsilon` (never above it), found by bisection.
pub fn calibrate_noise(target_epsilon: f64, delta: f64, q: f64, iterations: usize) -> Result<f64> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(DpviError::Config(format!(
            "target epsilon must be positive and finite, got {target_epsilon}"
        )));
    }
    const SIGMA_MAX: f64 = 1e6;
    let eps_at = |sigma: f64| -> Result<f64> {
        Ok(account_privacy(sigma, q, iterations, delta)?.epsilon)
    };
    if eps_at(SIGMA_MAX)? > target_epsilon {
        return Err(DpviError::Calibration(format!(
            "target epsilon {target_epsilon} unattainable with sigma_DP <= {SIGMA_MAX:e}"
        )));
    }
    // Bracket: grow hi until it satisfies the target.
    let mut hi = 1.0;
    while eps_at(hi)? > target_epsilon {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    if hi == 1.0 {
        // Already satisfied at sigma = 1; shrink lo until it violates.
        while lo > 1e-4 && eps_at(lo)? <= target_epsilon {
            lo /= 2.0;
        }
        if eps_at(lo)? <= target_epsilon {
            // Essentially free privacy at tiny sigma; return it.
            return Ok(lo);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let eps = eps_at(mid)?;
        if eps > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
            if eps >= 0.99 * target_epsilon {
                return Ok(mid);
            }
        }
    }
    Ok(hi)
}
