//! Shared test fixtures: a conjugate Gaussian-mean model with a closed-form
//! posterior, used as an independent oracle for the training loop.

use dpvi::error::Result;
use dpvi::models::{Dataset, Model};
use dpvi::rng::{standard_normal_vec, RngFactory, StreamPurpose};

const LN_2PI: f64 = 1.8378770664093453;

/// `y ~ N(theta, 1)` with prior `theta ~ N(0, 1)`. The exact posterior is
/// `N(sum(y) / (N + 1), 1 / (N + 1))`.
pub struct GaussianMeanModel;

impl Model for GaussianMeanModel {
    fn dim(&self) -> usize {
        1
    }

    fn n_features(&self) -> usize {
        1
    }

    fn per_example_loglik(&self, _x: &[f64], y: f64, theta: &[f64]) -> Result<f64> {
        let r = y - theta[0];
        Ok(-0.5 * LN_2PI - 0.5 * r * r)
    }

    fn per_example_loglik_grad(&self, _x: &[f64], y: f64, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![y - theta[0]])
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        -0.5 * LN_2PI - 0.5 * theta[0] * theta[0]
    }

    fn log_prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        vec![-theta[0]]
    }
}

/// Observations from `N(true_mean, 1)`, stored in the target column with a
/// dummy unit feature.
pub fn gaussian_mean_dataset(n: usize, true_mean: f64, seed: u64) -> Dataset {
    let mut rng = RngFactory::new(seed).stream(0, StreamPurpose::Data);
    let targets: Vec<f64> = standard_normal_vec(&mut rng, n)
        .iter()
        .map(|z| true_mean + z)
        .collect();
    Dataset::new(vec![1.0; n], targets, vec!["one".into()], "y".into()).unwrap()
}

/// Closed-form posterior `(mean, std)` of the conjugate model.
pub fn conjugate_posterior(data: &Dataset) -> (f64, f64) {
    let n = data.n_rows() as f64;
    let sum: f64 = data.targets().iter().sum();
    (sum / (n + 1.0), (1.0 / (n + 1.0)).sqrt())
}

/// Mean and (population) variance of a slice.
pub fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}
