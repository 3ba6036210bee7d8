//! End-to-end checks of the training loop against the conjugate
//! Gaussian-mean model, whose exact posterior is known in closed form.

mod common;

use common::{conjugate_posterior, gaussian_mean_dataset, mean_and_var, GaussianMeanModel};
use dpvi::gradest::EstimatorVariant;
use dpvi::guide::{DiagonalGuide, Guide};
use dpvi::privacy::DpSgdConfig;
use dpvi::traceanalysis::{
    build_noise_aware_posterior, default_candidate_windows, detect_burn_out, SlopeMode,
};
use dpvi::trainer::{run_dpvi, AdamParams};
use dpvi::transforms::TransformKind;

fn unit_guide() -> Guide {
    Guide::Diagonal(DiagonalGuide::with_initial_sigma(1, 1.0, TransformKind::Softplus).unwrap())
}

#[test]
fn non_private_vi_recovers_conjugate_posterior() {
    let data = gaussian_mean_dataset(100, 0.8, 42);
    let (mu_post, sigma_post) = conjugate_posterior(&data);

    let config = DpSgdConfig {
        clip_threshold: f64::INFINITY,
        noise_multiplier: 0.0,
        subsample_ratio: 1.0,
        iterations: 20_000,
        delta: 1e-4,
        seed: 7,
        variant: EstimatorVariant::Aligned,
    };
    let trace = run_dpvi(
        &GaussianMeanModel,
        unit_guide(),
        &data,
        &config,
        AdamParams::default(),
    )
    .unwrap();

    // after 5000 steps the mean has recovered the posterior mean to within
    // MC error (three trailing standard deviations, floored to protect
    // against a degenerate window)
    let m_series = trace.series(0);
    let at_5000 = &m_series[4_000..5_000];
    let (m_hat, m_var) = mean_and_var(at_5000);
    let tol = (3.0 * m_var.sqrt()).max(0.05 * sigma_post);
    assert!(
        (m_hat - mu_post).abs() <= tol,
        "recovered mean {m_hat} vs posterior mean {mu_post} (tol {tol})"
    );

    // with more steps the scale parameter approaches the posterior std too
    let s_series = trace.series(1);
    let s_tail_mean = s_series[s_series.len() - 2_000..].iter().sum::<f64>() / 2_000.0;
    let sigma_hat = TransformKind::Softplus.value(s_tail_mean).unwrap();
    assert!(
        (sigma_hat - sigma_post).abs() < 0.5 * sigma_post,
        "recovered sigma {sigma_hat} vs posterior sigma {sigma_post}"
    );
}

#[test]
fn single_sample_elbo_increases_over_training() {
    let data = gaussian_mean_dataset(100, 0.8, 5);
    let config = DpSgdConfig {
        clip_threshold: f64::INFINITY,
        noise_multiplier: 0.0,
        subsample_ratio: 1.0,
        iterations: 5_000,
        delta: 1e-4,
        seed: 3,
        variant: EstimatorVariant::Vanilla,
    };
    let trace = run_dpvi(
        &GaussianMeanModel,
        unit_guide(),
        &data,
        &config,
        AdamParams::default(),
    )
    .unwrap();
    let first = trace.elbo[..1_000].iter().sum::<f64>() / 1_000.0;
    let last = trace.elbo[trace.elbo.len() - 1_000..].iter().sum::<f64>() / 1_000.0;
    assert!(
        last > first,
        "trailing ELBO mean {last} not above initial {first}"
    );
}

#[test]
fn inflated_intervals_cover_at_least_as_often_as_plain_ones() {
    // 100 seeded DP runs; compare 95% interval coverage of the true
    // posterior mean with and without the DP-noise inflation. The raw slope
    // mode is the right detector here: Adam's iterate wobble mixes slowly,
    // so windows look drift-like at their own scale, while the absolute
    // drift of a converged trace is far below the 0.05 threshold.
    let data = gaussian_mean_dataset(100, 0.5, 11);
    let (mu_post, _) = conjugate_posterior(&data);
    let iterations = 6_000;
    let candidates = default_candidate_windows(iterations);

    let mut covered_plain = 0usize;
    let mut covered_inflated = 0usize;
    let mut converged_runs = 0usize;
    for seed in 0..100u64 {
        let config = DpSgdConfig {
            clip_threshold: 1.0,
            noise_multiplier: 0.6,
            subsample_ratio: 0.2,
            iterations,
            delta: 1e-4,
            seed,
            variant: EstimatorVariant::Aligned,
        };
        let guide = Guide::Diagonal(
            DiagonalGuide::with_initial_sigma(1, 0.3, TransformKind::Softplus).unwrap(),
        );
        let trace = run_dpvi(&GaussianMeanModel, guide, &data, &config, AdamParams::default())
            .unwrap();
        let report = detect_burn_out(&trace, &candidates, 0.05, SlopeMode::Raw).unwrap();
        let post = match build_noise_aware_posterior(&trace, &report, TransformKind::Softplus) {
            Ok(p) => p,
            Err(_) => continue, // nothing converged in this run
        };
        let p = &post.params[0];
        let (mean, scale, inflated) = match (p.mean, p.scale, p.inflated_marginal_var) {
            (Some(m), Some(s), Some(v)) => (m, s, v),
            _ => continue,
        };
        converged_runs += 1;
        let sigma_q = TransformKind::Softplus.value(scale).unwrap();
        if (mu_post - mean).abs() <= 1.96 * sigma_q {
            covered_plain += 1;
        }
        if (mu_post - mean).abs() <= 1.96 * inflated.sqrt() {
            covered_inflated += 1;
        }
    }
    assert!(
        converged_runs >= 50,
        "only {converged_runs} of 100 runs converged"
    );
    assert!(
        covered_inflated >= covered_plain,
        "inflated coverage {covered_inflated} below plain coverage {covered_plain} ({converged_runs} runs)"
    );
}
