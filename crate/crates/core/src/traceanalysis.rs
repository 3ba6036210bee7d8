//! Post-hoc analysis of parameter traces.
//!
//! Near the optimum, constant-step DP-SGD behaves like a discretized
//! Ornstein-Uhlenbeck process whose stationary distribution is centered on
//! the optimum, with noise covariance scaling linearly in `sigma_DP^2`.
//! Three consequences are implemented here:
//!
//! * averaging the trailing, converged part of a trace gives an unbiased
//!   estimate of the optimum with up to `1/T_burn_out` of the variance of
//!   the last iterate,
//! * the sample variance of the converged mean trace estimates the
//!   DP-induced noise, which can be added to the guide's marginal
//!   variances to make the posterior noise aware,
//! * convergence itself is detected per parameter by regressing the
//!   trailing window on `[0, 1]` and thresholding the fitted slope,
//!   picking the longest window that passes.
//!
//! All of this is post-processing of already-released values, so it costs
//! nothing in privacy. An explicit simulator for the quadratic-loss
//! recursion validates the theory.

use nalgebra::DMatrix;

use crate::error::{DpviError, Result};
use crate::rng::{standard_normal_vec, RngFactory, StreamPurpose};
use crate::trainer::Trace;
use crate::transforms::TransformKind;

/// Whether the convergence slope is thresholded on range-normalized or raw
/// window values. A fixed threshold on raw slopes is scale-dependent, so
/// normalized is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeMode {
    Normalized,
    Raw,
}

impl std::str::FromStr for SlopeMode {
    type Err = DpviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(SlopeMode::Normalized),
            "raw" => Ok(SlopeMode::Raw),
            other => Err(DpviError::Config(format!(
                "unknown slope mode '{other}' (expected 'normalized' or 'raw')"
            ))),
        }
    }
}

/// Default slope threshold for the convergence check.
pub const DEFAULT_SLOPE_THRESHOLD: f64 = 0.05;

/// Default trailing window candidates: 1/8, 1/4, 1/2 and 3/4 of the trace.
pub fn default_candidate_windows(trace_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [8, 4, 2]
        .iter()
        .map(|&f| trace_len / f)
        .chain(std::iter::once(3 * trace_len / 4))
        .filter(|&w| w >= 2)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Burn-out decision for a single parameter.
#[derive(Debug, Clone)]
pub struct SeriesBurnOut {
    /// Chosen trailing window length (0 when no candidate passed).
    pub t_burn_out: usize,
    /// Slope used for the decision, in the configured mode.
    pub slope: f64,
    /// Raw (unnormalized) slope at the chosen window.
    pub slope_raw: f64,
    pub converged: bool,
}

/// Burn-out report for every parameter of a trace.
#[derive(Debug, Clone)]
pub struct BurnOutReport {
    pub param_names: Vec<String>,
    pub params: Vec<SeriesBurnOut>,
    pub threshold: f64,
    pub mode: SlopeMode,
    pub candidates: Vec<usize>,
}

/// OLS slope of `values` regressed on `len(values)` equispaced points
/// spanning `[0, 1]`.
pub fn window_slope(values: &[f64]) -> f64 {
    let n = values.len();
    debug_assert!(n >= 2);
    let nf = n as f64;
    let x_mean = 0.5;
    let y_mean = values.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &y) in values.iter().enumerate() {
        let x = i as f64 / (nf - 1.0) - x_mean;
        sxy += x * (y - y_mean);
        sxx += x * x;
    }
    sxy / sxx
}

fn decision_slope(window: &[f64], mode: SlopeMode) -> (f64, f64) {
    let raw = window_slope(window);
    let slope = match mode {
        SlopeMode::Raw => raw,
        SlopeMode::Normalized => {
            let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            if range > 0.0 {
                raw / range
            } else {
                0.0
            }
        }
    };
    (slope, raw)
}

/// Convergence check for one parameter series: regress each trailing
/// candidate window on `[0, 1]` and return the longest window whose
/// absolute slope is below `threshold`.
pub fn detect_burn_out_series(
    values: &[f64],
    candidates: &[usize],
    threshold: f64,
    mode: SlopeMode,
) -> Result<SeriesBurnOut> {
    if candidates.is_empty() {
        return Err(DpviError::Config("no candidate windows given".into()));
    }
    for &c in candidates {
        if c < 2 {
            return Err(DpviError::Config(format!(
                "candidate window length {c} is below the minimum of 2"
            )));
        }
        if c > values.len() {
            return Err(DpviError::Config(format!(
                "candidate window length {c} exceeds trace length {}",
                values.len()
            )));
        }
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &len in sorted.iter().rev() {
        let window = &values[values.len() - len..];
        let (slope, raw) = decision_slope(window, mode);
        if slope.abs() < threshold {
            return Ok(SeriesBurnOut {
                t_burn_out: len,
                slope,
                slope_raw: raw,
                converged: true,
            });
        }
    }
    // report the slope at the shortest window for diagnostics
    let window = &values[values.len() - sorted[0]..];
    let (slope, raw) = decision_slope(window, mode);
    Ok(SeriesBurnOut {
        t_burn_out: 0,
        slope,
        slope_raw: raw,
        converged: false,
    })
}

/// Run the convergence check on every parameter of a trace.
pub fn detect_burn_out(
    trace: &Trace,
    candidates: &[usize],
    threshold: f64,
    mode: SlopeMode,
) -> Result<BurnOutReport> {
    let mut params = Vec::with_capacity(trace.n_params());
    for j in 0..trace.n_params() {
        params.push(detect_burn_out_series(
            &trace.series(j),
            candidates,
            threshold,
            mode,
        )?);
    }
    Ok(BurnOutReport {
        param_names: trace.param_names.clone(),
        params,
        threshold,
        mode,
        candidates: candidates.to_vec(),
    })
}

/// Arithmetic mean of the trailing `t_burn_out` values.
pub fn iterate_average(values: &[f64], t_burn_out: usize) -> Result<f64> {
    if t_burn_out == 0 || t_burn_out > values.len() {
        return Err(DpviError::Config(format!(
            "burn-out window {t_burn_out} invalid for trace of length {}",
            values.len()
        )));
    }
    let window = &values[values.len() - t_burn_out..];
    Ok(window.iter().sum::<f64>() / t_burn_out as f64)
}

/// Unbiased sample variance of the trailing `t_burn_out` values.
pub fn estimate_dp_noise_variance(values: &[f64], t_burn_out: usize) -> Result<f64> {
    if t_burn_out < 2 || t_burn_out > values.len() {
        return Err(DpviError::Config(format!(
            "variance needs a window of at least 2, got {t_burn_out} (trace length {})",
            values.len()
        )));
    }
    let window = &values[values.len() - t_burn_out..];
    let mean = window.iter().sum::<f64>() / t_burn_out as f64;
    let ss: f64 = window.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / (t_burn_out - 1) as f64)
}

/// Marginals of one coordinate of the noise-aware posterior.
#[derive(Debug, Clone)]
pub struct NoiseAwareParam {
    pub index: usize,
    /// Averaged mean, when the mean trace converged.
    pub mean: Option<f64>,
    /// Averaged unconstrained scale, when the scale trace converged.
    pub scale: Option<f64>,
    /// Sample variance of the mean trace over its burn-out window.
    pub trace_var_m: Option<f64>,
    /// Sample variance of the scale trace, reported but not folded in.
    pub trace_var_s: Option<f64>,
    /// `T(scale)^2 + trace_var_m`; present only when both traces converged.
    pub inflated_marginal_var: Option<f64>,
}

/// Noise-aware posterior for a diagonal guide: averaged parameters plus
/// DP-noise-inflated marginal variances.
#[derive(Debug, Clone)]
pub struct NoiseAwarePosterior {
    pub params: Vec<NoiseAwareParam>,
    pub transform: TransformKind,
}

/// Build the noise-aware posterior from a diagonal-guide trace and its
/// burn-out report. Parameters whose traces did not converge are excluded
/// from inflation and reported with missing values.
pub fn build_noise_aware_posterior(
    trace: &Trace,
    report: &BurnOutReport,
    transform: TransformKind,
) -> Result<NoiseAwarePosterior> {
    if report.params.len() != trace.n_params() {
        return Err(DpviError::Shape(
            "burn-out report does not match trace".into(),
        ));
    }
    if !report.params.iter().any(|p| p.converged) {
        return Err(DpviError::Analysis(
            "no parameter trace passed the convergence check".into(),
        ));
    }
    let dim = trace
        .param_names
        .iter()
        .filter(|n| n.starts_with("m["))
        .count();
    if dim == 0 {
        return Err(DpviError::Analysis(
            "trace has no mean parameters named m[j]".into(),
        ));
    }
    let mut params = Vec::with_capacity(dim);
    for j in 0..dim {
        let m_idx = trace.index_of(&format!("m[{j}]"));
        let s_idx = trace.index_of(&format!("s[{j}]"));
        let (m_idx, s_idx) = match (m_idx, s_idx) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(DpviError::Analysis(format!(
                    "trace is not a diagonal-guide trace: missing m[{j}] or s[{j}]"
                )))
            }
        };
        let m_report = &report.params[m_idx];
        let s_report = &report.params[s_idx];

        let (mean, trace_var_m) = if m_report.converged {
            let series = trace.series(m_idx);
            (
                Some(iterate_average(&series, m_report.t_burn_out)?),
                Some(estimate_dp_noise_variance(&series, m_report.t_burn_out)?),
            )
        } else {
            (None, None)
        };
        let (scale, trace_var_s) = if s_report.converged {
            let series = trace.series(s_idx);
            (
                Some(iterate_average(&series, s_report.t_burn_out)?),
                Some(estimate_dp_noise_variance(&series, s_report.t_burn_out)?),
            )
        } else {
            (None, None)
        };
        let inflated_marginal_var = match (scale, trace_var_m) {
            (Some(s), Some(vm)) => {
                let sigma = transform.value(s)?;
                Some(sigma * sigma + vm)
            }
            _ => None,
        };
        params.push(NoiseAwareParam {
            index: j,
            mean,
            scale,
            trace_var_m,
            trace_var_s,
            inflated_marginal_var,
        });
    }
    Ok(NoiseAwarePosterior { params, transform })
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck simulator for the quadratic-loss recursion
// ---------------------------------------------------------------------------

/// Configuration of the discretized OU recursion around an optimum at zero:
///
/// ```text
/// xi(t+1) = xi(t) - alpha (A xi(t) + B eta_1 + sigma_DP eta_2)
/// ```
///
/// with independent standard-normal draws `eta_1, eta_2` per step, so the
/// per-step noise covariance is `alpha^2 (B B^T + sigma_DP^2 I)` — the
/// subsampling noise and the DP noise add in covariance.
#[derive(Debug, Clone)]
pub struct OuSimConfig {
    /// Curvature (Hessian) of the quadratic loss; symmetric positive definite.
    pub curvature: DMatrix<f64>,
    /// SGD step size `alpha`.
    pub step_size: f64,
    /// DP noise scale.
    pub sigma_dp: f64,
    /// Cholesky factor of the subsampling-noise covariance.
    pub subsample_chol: DMatrix<f64>,
    pub steps: usize,
}

impl OuSimConfig {
    /// One-dimensional configuration.
    pub fn scalar(curvature: f64, step_size: f64, subsample_noise: f64, sigma_dp: f64, steps: usize) -> Self {
        Self {
            curvature: DMatrix::from_element(1, 1, curvature),
            step_size,
            sigma_dp,
            subsample_chol: DMatrix::from_element(1, 1, subsample_noise),
            steps,
        }
    }

    /// Exact stationary variance of the scalar AR(1) recursion:
    /// `alpha^2 (B^2 + sigma_DP^2) / (1 - (1 - alpha A)^2)`.
    pub fn scalar_stationary_variance(&self) -> f64 {
        let a = self.curvature[(0, 0)];
        let b = self.subsample_chol[(0, 0)];
        let alpha = self.step_size;
        let phi = 1.0 - alpha * a;
        alpha * alpha * (b * b + self.sigma_dp * self.sigma_dp) / (1.0 - phi * phi)
    }
}

/// Simulated OU trace: `steps` snapshots of a `dim`-dimensional state.
#[derive(Debug, Clone)]
pub struct OuTrace {
    pub dim: usize,
    data: Vec<f64>,
}

impl OuTrace {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn series(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.data[t * self.dim + j]).collect()
    }

    pub fn snapshot(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Simulate the discrete quadratic-loss recursion from `xi(0) = 0`.
pub fn simulate_dp_sgd_quadratic(cfg: &OuSimConfig, seed: u64) -> Result<OuTrace> {
    let d = cfg.curvature.nrows();
    if cfg.curvature.ncols() != d || cfg.subsample_chol.nrows() != d || cfg.subsample_chol.ncols() != d
    {
        return Err(DpviError::Shape(
            "curvature and subsample factor must be square matrices of equal size".into(),
        ));
    }
    let sym_err = (&cfg.curvature - cfg.curvature.transpose()).norm();
    if sym_err > 1e-10 * cfg.curvature.norm().max(1.0) {
        return Err(DpviError::Config("curvature matrix must be symmetric".into()));
    }
    let eig = cfg.curvature.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min <= 0.0 {
        return Err(DpviError::Config(
            "curvature matrix must be positive definite".into(),
        ));
    }
    if cfg.step_size * lambda_max >= 2.0 {
        return Err(DpviError::Config(format!(
            "unstable recursion: step size {} times largest eigenvalue {lambda_max} must be < 2",
            cfg.step_size
        )));
    }

    let factory = RngFactory::new(seed);
    let mut xi = vec![0.0f64; d];
    let mut data = Vec::with_capacity(cfg.steps * d);
    let mut drift = vec![0.0f64; d];
    for t in 0..cfg.steps {
        let eta1 = standard_normal_vec(&mut factory.stream(t as u64, StreamPurpose::Eta), d);
        let eta2 = standard_normal_vec(&mut factory.stream(t as u64, StreamPurpose::Psi), d);
        // drift = A xi
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += cfg.curvature[(i, j)] * xi[j];
            }
            drift[i] = acc;
        }
        for i in 0..d {
            let mut noise = cfg.sigma_dp * eta2[i];
            for j in 0..d {
                noise += cfg.subsample_chol[(i, j)] * eta1[j];
            }
            xi[i] -= cfg.step_size * (drift[i] + noise);
        }
        data.extend_from_slice(&xi);
    }
    Ok(OuTrace { dim: d, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_trace_passes_with_longest_window() {
        let values = vec![3.5; 1000];
        let candidates = default_candidate_windows(values.len());
        let r = detect_burn_out_series(&values, &candidates, 0.05, SlopeMode::Normalized).unwrap();
        assert!(r.converged);
        assert_eq!(r.t_burn_out, 750);
        assert_eq!(r.slope, 0.0);
    }

    #[test]
    fn pure_linear_drift_is_rejected() {
        // values t/(n-1): every trailing window has normalized slope 1
        let n = 1000;
        let values: Vec<f64> = (0..n).map(|t| t as f64 / (n - 1) as f64).collect();
        let candidates = default_candidate_windows(n);
        let r = detect_burn_out_series(&values, &candidates, 0.05, SlopeMode::Normalized).unwrap();
        assert!(!r.converged);
        assert_eq!(r.t_burn_out, 0);
        // raw slope of the full-range line over a window of length L is L/n
        let r_raw = detect_burn_out_series(&values, &[500], 0.05, SlopeMode::Raw).unwrap();
        assert_relative_eq!(r_raw.slope_raw, 0.5, max_relative = 1e-2);
    }

    #[test]
    fn white_noise_around_constant_passes() {
        let mut rng = RngFactory::new(31).stream(0, StreamPurpose::Eval);
        let values: Vec<f64> = standard_normal_vec(&mut rng, 1000)
            .iter()
            .map(|v| 2.0 + 0.1 * v)
            .collect();
        let r = detect_burn_out_series(&values, &[1000], 0.05, SlopeMode::Normalized).unwrap();
        assert!(r.converged);
        let r_raw = detect_burn_out_series(&values, &[1000], 0.05, SlopeMode::Raw).unwrap();
        assert!(r_raw.converged);
    }

    #[test]
    fn window_shorter_than_two_is_config_error() {
        assert!(detect_burn_out_series(&[1.0, 2.0], &[1], 0.05, SlopeMode::Raw).is_err());
        assert!(detect_burn_out_series(&[1.0, 2.0], &[3], 0.05, SlopeMode::Raw).is_err());
    }

    #[test]
    fn raw_slope_scales_linearly_with_the_trace() {
        let mut rng = RngFactory::new(5).stream(0, StreamPurpose::Eval);
        let values = standard_normal_vec(&mut rng, 200);
        let scaled: Vec<f64> = values.iter().map(|v| 7.0 * v).collect();
        let s1 = detect_burn_out_series(&values, &[200], 1e9, SlopeMode::Raw).unwrap();
        let s2 = detect_burn_out_series(&scaled, &[200], 1e9, SlopeMode::Raw).unwrap();
        assert_relative_eq!(s2.slope_raw, 7.0 * s1.slope_raw, max_relative = 1e-12);
        // normalized slope is scale-free
        let n1 = detect_burn_out_series(&values, &[200], 1e9, SlopeMode::Normalized).unwrap();
        let n2 = detect_burn_out_series(&scaled, &[200], 1e9, SlopeMode::Normalized).unwrap();
        assert_relative_eq!(n1.slope, n2.slope, max_relative = 1e-12);
    }

    #[test]
    fn iterate_average_examples() {
        assert_eq!(iterate_average(&[1.0, 2.0, 3.0, 4.0], 1).unwrap(), 4.0);
        assert_eq!(iterate_average(&[5.0; 10], 7).unwrap(), 5.0);
        assert_relative_eq!(
            iterate_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(),
            3.5,
            max_relative = 1e-15
        );
        assert!(iterate_average(&[1.0], 0).is_err());
    }

    #[test]
    fn noise_variance_examples() {
        assert_eq!(estimate_dp_noise_variance(&[2.0; 50], 20).unwrap(), 0.0);
        assert_relative_eq!(
            estimate_dp_noise_variance(&[9.0, 0.0, 2.0], 2).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        assert!(estimate_dp_noise_variance(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn default_windows_shape() {
        assert_eq!(default_candidate_windows(8000), vec![1000, 2000, 4000, 6000]);
        assert_eq!(default_candidate_windows(8), vec![2, 4, 6]);
    }

    #[test]
    fn ou_deterministic_convergence_without_noise() {
        let cfg = OuSimConfig::scalar(1.0, 0.1, 0.0, 0.0, 200);
        let trace = simulate_dp_sgd_quadratic(&cfg, 0).unwrap();
        // xi stays at 0 from xi(0)=0; start elsewhere by shifting manually:
        // the recursion is linear, so instead check the contraction factor
        // on a one-step basis via a manual run.
        assert!(trace.series(0).iter().all(|v| *v == 0.0));

        // manual recursion from 1.0: xi(t) = 0.9^t
        let mut xi = 1.0;
        for _ in 0..50 {
            xi -= 0.1 * xi;
        }
        assert_relative_eq!(xi, 0.9f64.powi(50), max_relative = 1e-12);
    }

    #[test]
    fn ou_scalar_stationary_variance_matches_ar1_closed_form() {
        let cfg = OuSimConfig::scalar(1.0, 0.1, 0.0, 1.0, 200_000);
        let trace = simulate_dp_sgd_quadratic(&cfg, 42).unwrap();
        let series = trace.series(0);
        // discard a short burn-in
        let tail = &series[1000..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tail.len() as f64;
        assert_relative_eq!(var, cfg.scalar_stationary_variance(), max_relative = 0.1);
    }

    #[test]
    fn ou_unstable_step_size_is_config_error() {
        let cfg = OuSimConfig::scalar(1.0, 2.5, 0.0, 1.0, 10);
        assert!(simulate_dp_sgd_quadratic(&cfg, 0).is_err());
    }

    #[test]
    fn ou_requires_positive_definite_curvature() {
        let mut cfg = OuSimConfig::scalar(1.0, 0.1, 0.0, 1.0, 10);
        cfg.curvature[(0, 0)] = -1.0;
        assert!(simulate_dp_sgd_quadratic(&cfg, 0).is_err());
    }

    fn synthetic_trace(m_values: &[f64], s_values: &[f64]) -> Trace {
        use crate::gradest::EstimatorVariant;
        use crate::privacy::{DpSgdConfig, PrivacySpend};
        let names = vec!["m[0]".to_string(), "s[0]".to_string()];
        let mut data = Vec::new();
        for (m, s) in m_values.iter().zip(s_values) {
            data.push(*m);
            data.push(*s);
        }
        Trace::from_parts(
            names,
            data,
            DpSgdConfig {
                clip_threshold: 1.0,
                noise_multiplier: 1.0,
                subsample_ratio: 1.0,
                iterations: m_values.len(),
                delta: 1e-5,
                seed: 0,
                variant: EstimatorVariant::Aligned,
            },
            PrivacySpend {
                epsilon: 1.0,
                delta: 1e-5,
            },
        )
        .unwrap()
    }

    #[test]
    fn noise_aware_posterior_zero_trace_variance() {
        let t = TransformKind::Softplus;
        let s_star = t.inverse(0.4).unwrap();
        let trace = synthetic_trace(&[1.5; 100], &[s_star; 100]);
        let report = detect_burn_out(
            &trace,
            &default_candidate_windows(100),
            0.05,
            SlopeMode::Normalized,
        )
        .unwrap();
        let post = build_noise_aware_posterior(&trace, &report, t).unwrap();
        let p = &post.params[0];
        assert_relative_eq!(p.mean.unwrap(), 1.5, max_relative = 1e-12);
        assert_relative_eq!(
            p.inflated_marginal_var.unwrap(),
            0.4 * 0.4,
            max_relative = 1e-10
        );
        assert_eq!(p.trace_var_m.unwrap(), 0.0);
    }

    #[test]
    fn noise_aware_posterior_inflation_factor_two() {
        // trace variance of m equal to T(s)^2 doubles the marginal variance
        let t = TransformKind::Exp;
        let sigma = 0.3;
        let s_star = t.inverse(sigma).unwrap();
        // alternate m around 0 with sample variance sigma^2
        let n = 400;
        let dev = sigma; // +/- sigma alternating has sample variance ~ sigma^2
        let m_vals: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { dev } else { -dev }).collect();
        let trace = synthetic_trace(&m_vals, &vec![s_star; n]);
        let report = detect_burn_out(
            &trace,
            &default_candidate_windows(n),
            0.05,
            SlopeMode::Normalized,
        )
        .unwrap();
        let post = build_noise_aware_posterior(&trace, &report, t).unwrap();
        let p = &post.params[0];
        let inflated = p.inflated_marginal_var.unwrap();
        assert_relative_eq!(inflated, 2.0 * sigma * sigma, max_relative = 2e-2);
        assert!(inflated >= sigma * sigma);
    }

    #[test]
    fn noise_aware_posterior_requires_convergence() {
        let n = 200;
        let drift: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let trace = synthetic_trace(&drift, &drift);
        let report = detect_burn_out(
            &trace,
            &default_candidate_windows(n),
            0.05,
            SlopeMode::Normalized,
        )
        .unwrap();
        assert!(matches!(
            build_noise_aware_posterior(&trace, &report, TransformKind::Softplus),
            Err(DpviError::Analysis(_))
        ));
    }
}
