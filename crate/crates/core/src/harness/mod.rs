//! Experiment support: metrics, synthetic data, gradient checking and the
//! desk-scale experiment drivers used by the CLI.

pub mod datagen;
pub mod experiments;

use rand::Rng;

use crate::error::{DpviError, Result};
use crate::guide::Guide;
use crate::models::{Dataset, Model};
use crate::rng::standard_normal_vec;

/// Inputs for the mean proportional absolute error.
#[derive(Debug, Clone)]
pub struct MpaeInput<'a> {
    /// Current parameters.
    pub current: &'a [f64],
    /// Reference optimum (in practice: the result of a long non-private run).
    pub reference: &'a [f64],
    /// Initial parameters of the run being scored.
    pub initial: &'a [f64],
}

/// Result of an MPAE evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MpaeReport {
    pub value: f64,
    /// Coordinates excluded because `|initial - reference| < 1e-12`.
    pub excluded: usize,
}

/// Mean proportional absolute error:
/// `(1/D) sum_d |cur_d - ref_d| / |init_d - ref_d|`.
///
/// 0 means the optimum was recovered, 1 means the parameters on average did
/// not move from their initialization. Coordinates where the initial point
/// already coincides with the reference are excluded and counted.
pub fn mpae(input: &MpaeInput) -> Result<MpaeReport> {
    let d = input.current.len();
    if input.reference.len() != d || input.initial.len() != d {
        return Err(DpviError::Shape(format!(
            "mpae inputs must have equal lengths, got {d}, {}, {}",
            input.reference.len(),
            input.initial.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for j in 0..d {
        let denom = (input.initial[j] - input.reference[j]).abs();
        if denom < 1e-12 {
            continue;
        }
        sum += (input.current[j] - input.reference[j]).abs() / denom;
        used += 1;
    }
    if used == 0 {
        return Err(DpviError::Metric(
            "all coordinates are degenerate: initial parameters coincide with the reference"
                .into(),
        ));
    }
    Ok(MpaeReport {
        value: sum / used as f64,
        excluded: d - used,
    })
}

/// Average test log predictive density:
/// mean over rows of `log( (1/S) sum_s p(y | x, theta_s) )` with `theta_s`
/// drawn from the guide.
pub fn predictive_loglik<R: Rng>(
    guide: &Guide,
    model: &dyn Model,
    test: &Dataset,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(DpviError::Config("need at least one posterior sample".into()));
    }
    let draws: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| {
            let eta = standard_normal_vec(rng, guide.dim());
            guide.reparam_draw(&eta)
        })
        .collect::<Result<_>>()?;
    let log_s = (n_samples as f64).ln();
    let mut total = 0.0;
    let mut lls = vec![0.0f64; n_samples];
    for i in 0..test.n_rows() {
        for (s, theta) in draws.iter().enumerate() {
            lls[s] = model.per_example_loglik(test.row(i), test.target(i), theta)?;
        }
        // log-sum-exp
        let max = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lls.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - log_s;
    }
    Ok(total / test.n_rows() as f64)
}

/// Result of checking one model's gradients against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_points: usize,
    pub max_rel_error: f64,
    /// `(point, coordinate, got, finite_difference)` of the worst mismatch
    /// above tolerance, if any.
    pub failure: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compare a model's analytic gradients (likelihood and prior) against
/// central finite differences at `n_points` random `(x, y, theta)`.
pub fn grad_check<R: Rng>(
    model: &dyn Model,
    n_points: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if !(tolerance > 0.0) {
        return Err(DpviError::Config("tolerance must be positive".into()));
    }
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    let mut failure = None;
    for point in 0..n_points {
        let x = standard_normal_vec(rng, model.n_features());
        let theta: Vec<f64> = standard_normal_vec(rng, model.dim())
            .iter()
            .map(|v| 0.5 * v)
            .collect();
        // draw a target the model accepts
        let y = sample_valid_target(model, rng);

        let grad = model.per_example_loglik_grad(&x, y, &theta)?;
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (model.per_example_loglik(&x, y, &tp)?
                - model.per_example_loglik(&x, y, &tm)?)
                / (2.0 * h);
            let e = rel_error(grad[j], fd);
            if e > max_rel {
                max_rel = e;
                if e > tolerance {
                    failure = Some((point, j, grad[j], fd));
                }
            }
        }

        let pgrad = model.log_prior_grad(&theta);
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (model.log_prior(&tp) - model.log_prior(&tm)) / (2.0 * h);
            let e = rel_error(pgrad[j], fd);
            if e > max_rel {
                max_rel = e;
                if e > tolerance {
                    failure = Some((point, j, pgrad[j], fd));
                }
            }
        }
    }
    Ok(GradCheckReport {
        n_points,
        max_rel_error: max_rel,
        failure,
    })
}

fn sample_valid_target<R: Rng>(model: &dyn Model, rng: &mut R) -> f64 {
    // binary targets if the model demands them, counts if it rejects
    // fractions, otherwise any real value
    if model.validate_target(0.5).is_ok() {
        rng.gen_range(-2.0..2.0)
    } else if model.validate_target(3.0).is_ok() {
        f64::from(rng.gen_range(0..6))
    } else {
        f64::from(rng.gen_range(0..2))
    }
}
