//! The DPVI optimization loop.
//!
//! Each iteration: Poisson-subsample a batch, draw one reparametrization
//! noise vector `eta` (single-sample MC, shared across the batch), build the
//! variant's per-example vectors, clip each at `C`, sum, apply the Gaussian
//! mechanism, post-process the scale gradient for aligned variants, divide
//! by the expected batch size `qN`, and feed the negative result to Adam
//! (ascent on the ELBO as descent on its negation). Every iteration's
//! parameters are recorded; under DP-SGD all intermediate parameters are
//! covered by the privacy guarantee, which is what makes post-hoc trace
//! analysis free.

use crate::error::{DpviError, Result};
use crate::gradest::{
    build_per_example_batch, postprocess_scale, GradientDiagnostics, UpdateGradient,
};
use crate::guide::Guide;
use crate::models::{Dataset, Model};
use crate::privacy::{account_privacy, gaussian_mechanism, poisson_subsample, DpSgdConfig, PrivacySpend};
use crate::rng::{standard_normal_vec, RngFactory, StreamPurpose};

/// Abort when any parameter magnitude exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: first/second moment estimates and step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamState {
    pub fn new(dim: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One Adam update with bias correction. `grad` is a descent gradient.
    pub fn step(&mut self, values: &mut [f64], grad: &[f64]) -> Result<()> {
        if values.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(DpviError::Shape(format!(
                "adam state has dimension {}, got values {} and grad {}",
                self.m.len(),
                values.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let p = &self.params;
        let bc1 = 1.0 - p.beta1.powf(t);
        let bc2 = 1.0 - p.beta2.powf(t);
        for j in 0..values.len() {
            self.m[j] = p.beta1 * self.m[j] + (1.0 - p.beta1) * grad[j];
            self.v[j] = p.beta2 * self.v[j] + (1.0 - p.beta2) * grad[j] * grad[j];
            let m_hat = self.m[j] / bc1;
            let v_hat = self.v[j] / bc2;
            values[j] -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
        }
        Ok(())
    }
}

/// Per-iteration parameter snapshots of a training run, plus the recorded
/// privacy spend.
#[derive(Debug, Clone)]
pub struct Trace {
    pub param_names: Vec<String>,
    data: Vec<f64>, // iterations x n_params, row-major
    n_params: usize,
    /// Single-sample ELBO estimate per iteration (full-data scale,
    /// batch-estimated data term).
    pub elbo: Vec<f64>,
    /// Mean pre-clip gradient norms per iteration.
    pub grad_norms: Vec<GradientDiagnostics>,
    pub config: DpSgdConfig,
    pub spend: PrivacySpend,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        if self.n_params == 0 {
            0
        } else {
            self.data.len() / self.n_params
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Parameters recorded after iteration `t`.
    pub fn snapshot(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_params..(t + 1) * self.n_params]
    }

    pub fn final_params(&self) -> &[f64] {
        self.snapshot(self.iterations() - 1)
    }

    /// The per-iteration series of one parameter.
    pub fn series(&self, param_idx: usize) -> Vec<f64> {
        (0..self.iterations())
            .map(|t| self.data[t * self.n_params + param_idx])
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Assemble a trace from parts (used when reading one back from CSV).
    pub fn from_parts(
        param_names: Vec<String>,
        data: Vec<f64>,
        config: DpSgdConfig,
        spend: PrivacySpend,
    ) -> Result<Self> {
        let n_params = param_names.len();
        if n_params == 0 || data.len() % n_params != 0 {
            return Err(DpviError::Shape(format!(
                "trace buffer of {} values does not divide into {} parameters",
                data.len(),
                n_params
            )));
        }
        Ok(Self {
            param_names,
            data,
            n_params,
            elbo: Vec::new(),
            grad_norms: Vec::new(),
            config,
            spend,
        })
    }
}

/// One iteration's privatized update gradient at the current guide state.
pub fn dpvi_update(
    model: &dyn Model,
    guide: &Guide,
    data: &Dataset,
    config: &DpSgdConfig,
    factory: &RngFactory,
    iteration: u64,
) -> Result<UpdateGradient> {
    let n = data.n_rows();
    let d = guide.dim();
    let batch = poisson_subsample(
        n,
        config.subsample_ratio,
        &mut factory.stream(iteration, StreamPurpose::Subsample),
    );
    let eta = standard_normal_vec(&mut factory.stream(iteration, StreamPurpose::Eta), d);
    let rows = build_per_example_batch(config.variant, guide, model, data, &batch, &eta, n)?;
    let sum = rows.clip_and_sum(config.clip_threshold)?;
    let psi = standard_normal_vec(
        &mut factory.stream(iteration, StreamPurpose::Psi),
        rows.dim(),
    );
    let noised = gaussian_mechanism(&sum, config.clip_threshold, config.noise_multiplier, &psi);

    // Average scale: the clipped sum estimates q * (full-data gradient), so
    // dividing by qN lands on the per-N ELBO gradient.
    let qn = config.subsample_ratio * n as f64;
    let avg: Vec<f64> = noised.iter().map(|v| v / qn).collect();

    let diagnostics = GradientDiagnostics {
        mean_m_norm: rows.mean_m_norm,
        mean_scale_norm: rows.mean_scale_norm,
    };

    if config.variant.is_aligned() {
        // Entropy enters once, outside the privatized sum, with the 1/N
        // weight of the averaged gradient.
        let ent: Vec<f64> = guide
            .entropy_grad_scale()?
            .iter()
            .map(|v| v / n as f64)
            .collect();
        let g_scale = postprocess_scale(config.variant, &avg, &eta, guide, &ent)?;
        Ok(UpdateGradient {
            g_m: avg,
            g_scale,
            diagnostics,
        })
    } else {
        let g_m = avg[..d].to_vec();
        let g_scale = avg[d..].to_vec();
        Ok(UpdateGradient {
            g_m,
            g_scale,
            diagnostics,
        })
    }
}

/// Single-sample ELBO estimate at the current guide state (full-data scale;
/// the data term is estimated from the batch with weight `1/q`).
fn elbo_estimate(
    model: &dyn Model,
    guide: &Guide,
    data: &Dataset,
    batch_eta: &[f64],
    q: f64,
    factory: &RngFactory,
    iteration: u64,
) -> Result<f64> {
    let theta = guide.reparam_draw(batch_eta)?;
    let batch = poisson_subsample(
        data.n_rows(),
        q,
        &mut factory.stream(iteration, StreamPurpose::Subsample),
    );
    let mut ll = 0.0;
    for &i in &batch {
        ll += model.per_example_loglik(data.row(i), data.target(i), &theta)?;
    }
    Ok(ll / q + model.log_prior(&theta) + guide.entropy()?)
}

/// Run the DPVI loop for `config.iterations` iterations starting from
/// `guide`, returning the full parameter trace.
pub fn run_dpvi(
    model: &dyn Model,
    guide: Guide,
    data: &Dataset,
    config: &DpSgdConfig,
    adam: AdamParams,
) -> Result<Trace> {
    config.validate()?;
    if model.dim() != guide.dim() {
        return Err(DpviError::Shape(format!(
            "model dimension {} does not match guide dimension {}",
            model.dim(),
            guide.dim()
        )));
    }
    if model.n_features() != data.n_features() {
        return Err(DpviError::Shape(format!(
            "model expects {} features, dataset has {}",
            model.n_features(),
            data.n_features()
        )));
    }
    for i in 0..data.n_rows() {
        model.validate_target(data.target(i))?;
    }

    let factory = RngFactory::new(config.seed);
    let mut guide = guide;
    let mut flat = guide.flat_params();
    let mut opt = AdamState::new(flat.len(), adam);
    let n_params = flat.len();
    let mut trace_data = Vec::with_capacity(config.iterations * n_params);
    let mut elbo = Vec::with_capacity(config.iterations);
    let mut grad_norms = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        let it = t as u64;
        let eta = standard_normal_vec(&mut factory.stream(it, StreamPurpose::Eta), guide.dim());
        elbo.push(elbo_estimate(
            model,
            &guide,
            data,
            &eta,
            config.subsample_ratio,
            &factory,
            it,
        )?);

        let update = dpvi_update(model, &guide, data, config, &factory, it)?;
        grad_norms.push(update.diagnostics);

        let descent: Vec<f64> = update
            .g_m
            .iter()
            .chain(update.g_scale.iter())
            .map(|v| -v)
            .collect();
        opt.step(&mut flat, &descent)?;

        if flat.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(DpviError::Divergence {
                iteration: t,
                limit: DIVERGENCE_LIMIT,
            });
        }
        guide.set_flat_params(&flat)?;
        trace_data.extend_from_slice(&flat);
    }

    let spend = account_privacy(
        config.noise_multiplier,
        config.subsample_ratio,
        config.iterations,
        config.delta,
    )?;

    Ok(Trace {
        param_names: guide.param_names(),
        data: trace_data,
        n_params,
        elbo,
        grad_norms,
        config: *config,
        spend,
    })
}
