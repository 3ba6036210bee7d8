//! Gradient estimators for DP variational inference.
//!
//! With a reparametrized draw `theta = m + T(s) eta`, the scale gradient is
//! a data-independent transformation of the mean gradient:
//!
//! ```text
//! g_s = eta * T'(s) * g_m + grad_s H(q)
//! ```
//!
//! This identity is what the aligned variants exploit: only the mean
//! gradient is clipped and perturbed, and the scale gradient is
//! reconstructed from the private release in post-processing, which is free
//! under DP. The other variants rescale what goes into the clipping step
//! instead: preconditioning divides the scale part by `T'(s)`, natural
//! gradients multiply by the inverse Fisher blocks of the Gaussian guide,
//!
//! ```text
//! inv(I_m) = diag(T(s)^2)        inv(I_s) = diag(T(s)^2 / (2 T'(s)^2))
//! ```
//!
//! For the full-rank guide the same structure holds with the Jacobian of
//! the packed Cholesky map in place of `eta T'(s)`.
//!
//! Per-example vectors carry the prior and entropy contributions with
//! weight `1/N` so that the clipped sum estimates the full ELBO gradient;
//! the aligned variants add the entropy once, outside the privatized sum.

use std::fmt;
use std::str::FromStr;

use crate::error::{DpviError, Result};
use crate::guide::{packed_index, DiagonalGuide, FullRankGuide, Guide};
use crate::models::{Dataset, Model};
use crate::privacy::l2_norm;

/// The estimator variants. `FullRank*` variants require a full-rank guide,
/// all others a diagonal guide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorVariant {
    Vanilla,
    Aligned,
    Preconditioned,
    Natural,
    AlignedNatural,
    FullRankVanilla,
    FullRankAligned,
}

impl EstimatorVariant {
    pub const ALL: [EstimatorVariant; 7] = [
        EstimatorVariant::Vanilla,
        EstimatorVariant::Aligned,
        EstimatorVariant::Preconditioned,
        EstimatorVariant::Natural,
        EstimatorVariant::AlignedNatural,
        EstimatorVariant::FullRankVanilla,
        EstimatorVariant::FullRankAligned,
    ];

    /// Variants whose scale gradient is reconstructed in post-processing.
    pub fn is_aligned(self) -> bool {
        matches!(
            self,
            EstimatorVariant::Aligned
                | EstimatorVariant::AlignedNatural
                | EstimatorVariant::FullRankAligned
        )
    }

    pub fn requires_full_rank(self) -> bool {
        matches!(
            self,
            EstimatorVariant::FullRankVanilla | EstimatorVariant::FullRankAligned
        )
    }
}

impl fmt::Display for EstimatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EstimatorVariant::Vanilla => "vanilla",
            EstimatorVariant::Aligned => "aligned",
            EstimatorVariant::Preconditioned => "preconditioned",
            EstimatorVariant::Natural => "natural",
            EstimatorVariant::AlignedNatural => "aligned-natural",
            EstimatorVariant::FullRankVanilla => "full-rank-vanilla",
            EstimatorVariant::FullRankAligned => "full-rank-aligned",
        };
        write!(f, "{name}")
    }
}

impl FromStr for EstimatorVariant {
    type Err = DpviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(EstimatorVariant::Vanilla),
            "aligned" => Ok(EstimatorVariant::Aligned),
            "preconditioned" => Ok(EstimatorVariant::Preconditioned),
            "natural" => Ok(EstimatorVariant::Natural),
            "aligned-natural" => Ok(EstimatorVariant::AlignedNatural),
            "full-rank-vanilla" => Ok(EstimatorVariant::FullRankVanilla),
            "full-rank-aligned" => Ok(EstimatorVariant::FullRankAligned),
            other => Err(DpviError::Config(format!(
                "unknown estimator variant '{other}'"
            ))),
        }
    }
}

/// Per-example vectors submitted to clipping, one row per batch element.
#[derive(Debug, Clone)]
pub struct PerExampleBatch {
    data: Vec<f64>,
    dim: usize,
    n_rows: usize,
    /// Mean pre-clip L2 norm of the mean-gradient part of the rows.
    pub mean_m_norm: f64,
    /// Mean pre-clip L2 norm of the scale part, for variants that build one.
    pub mean_scale_norm: Option<f64>,
}

impl PerExampleBatch {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Clip every row at `clip_threshold` and sum in ascending row order.
    pub fn clip_and_sum(&self, clip_threshold: f64) -> Result<Vec<f64>> {
        if !(clip_threshold > 0.0) {
            return Err(DpviError::Config(format!(
                "clip threshold must be positive, got {clip_threshold}"
            )));
        }
        let mut sum = vec![0.0; self.dim];
        for row in self.rows() {
            let gamma = crate::privacy::clip_factor(l2_norm(row), clip_threshold);
            for (acc, &v) in sum.iter_mut().zip(row) {
                *acc += gamma * v;
            }
        }
        Ok(sum)
    }
}

/// The combined update gradient after privatization and post-processing.
#[derive(Debug, Clone)]
pub struct UpdateGradient {
    pub g_m: Vec<f64>,
    pub g_scale: Vec<f64>,
    pub diagnostics: GradientDiagnostics,
}

/// Per-batch mean pre-clip norms of the row parts.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientDiagnostics {
    pub mean_m_norm: f64,
    pub mean_scale_norm: Option<f64>,
}

/// Per-example mean gradient: `grad_theta log p(x | theta) + (1/N) grad_theta log p(theta)`.
pub fn per_example_gm(
    model: &dyn Model,
    theta: &[f64],
    x: &[f64],
    y: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let prior = model.log_prior_grad(theta);
    per_example_gm_with_prior(model, theta, x, y, n, &prior)
}

fn per_example_gm_with_prior(
    model: &dyn Model,
    theta: &[f64],
    x: &[f64],
    y: f64,
    n: usize,
    prior_grad: &[f64],
) -> Result<Vec<f64>> {
    let mut g = model.per_example_loglik_grad(x, y, theta)?;
    let w = 1.0 / n as f64;
    for (gj, pj) in g.iter_mut().zip(prior_grad) {
        *gj += w * pj;
    }
    Ok(g)
}

/// Per-example scale gradient for the diagonal guide:
/// `eta * T'(s) * g_mx + (1/N) grad_s H(q)`.
pub fn per_example_gs(
    g_mx: &[f64],
    eta: &[f64],
    guide: &DiagonalGuide,
    n: usize,
) -> Result<Vec<f64>> {
    let d = guide.dim();
    if g_mx.len() != d || eta.len() != d {
        return Err(DpviError::Shape(format!(
            "per-example scale gradient needs length-{d} inputs, got {} and {}",
            g_mx.len(),
            eta.len()
        )));
    }
    let tprime = guide.transform.deriv_vec(&guide.s)?;
    let ent = guide.entropy_grad_s()?;
    let w = 1.0 / n as f64;
    Ok((0..d)
        .map(|j| eta[j] * tprime[j] * g_mx[j] + w * ent[j])
        .collect())
}

/// Inverse Fisher blocks of the diagonal Gaussian guide.
/// Returns `(inv_I_m, inv_I_s) = (T(s)^2, T(s)^2 / (2 T'(s)^2))`.
pub fn inverse_fisher_blocks(guide: &DiagonalGuide) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = guide.transform.value_vec(&guide.s)?;
    let tp = guide.transform.deriv_vec(&guide.s)?;
    let inv_m: Vec<f64> = t.iter().map(|&v| v * v).collect();
    let inv_s: Vec<f64> = t
        .iter()
        .zip(&tp)
        .map(|(&v, &d)| v * v / (2.0 * d * d))
        .collect();
    Ok((inv_m, inv_s))
}

/// Map a mean gradient to the packed scale gradient of the full-rank guide
/// through the Jacobian of the Cholesky parametrization (no entropy term):
/// slot `(i, j)` gets `eta_j * g_m[i]` off the diagonal and
/// `T'(a_ii) * eta_i * g_m[i]` on it.
pub fn fullrank_scale_from_mean(
    g_m: &[f64],
    eta: &[f64],
    guide: &FullRankGuide,
) -> Result<Vec<f64>> {
    let d = guide.dim();
    if g_m.len() != d || eta.len() != d {
        return Err(DpviError::Shape(format!(
            "full-rank scale map needs length-{d} inputs, got {} and {}",
            g_m.len(),
            eta.len()
        )));
    }
    let mut g_a = vec![0.0; guide.packed_len()];
    for i in 0..d {
        for j in 0..i {
            g_a[packed_index(i, j)] = eta[j] * g_m[i];
        }
        let idx = packed_index(i, i);
        g_a[idx] = guide.transform.deriv(guide.a[idx])? * eta[i] * g_m[i];
    }
    Ok(g_a)
}

fn check_compat(variant: EstimatorVariant, guide: &Guide) -> Result<()> {
    let ok = match guide {
        Guide::Diagonal(_) => !variant.requires_full_rank(),
        Guide::FullRank(_) => variant.requires_full_rank(),
    };
    if ok {
        Ok(())
    } else {
        Err(DpviError::Config(format!(
            "estimator variant '{variant}' is incompatible with the given guide family"
        )))
    }
}

/// Row length of the vectors a variant submits to clipping.
pub fn clipped_dim(variant: EstimatorVariant, guide: &Guide) -> usize {
    let d = guide.dim();
    match variant {
        EstimatorVariant::Aligned
        | EstimatorVariant::AlignedNatural
        | EstimatorVariant::FullRankAligned => d,
        EstimatorVariant::Vanilla
        | EstimatorVariant::Preconditioned
        | EstimatorVariant::Natural => 2 * d,
        EstimatorVariant::FullRankVanilla => d + guide.scale_len(),
    }
}

/// Build the per-example vectors submitted to clipping for one iteration.
///
/// `theta` must be the reparametrized draw of `guide` at `eta`, and `n` the
/// full dataset size.
pub fn build_per_example_batch(
    variant: EstimatorVariant,
    guide: &Guide,
    model: &dyn Model,
    data: &Dataset,
    batch: &[usize],
    eta: &[f64],
    n: usize,
) -> Result<PerExampleBatch> {
    check_compat(variant, guide)?;
    let d = guide.dim();
    if model.dim() != d {
        return Err(DpviError::Shape(format!(
            "model dimension {} does not match guide dimension {d}",
            model.dim()
        )));
    }
    if eta.len() != d {
        return Err(DpviError::Shape(format!(
            "noise draw has length {}, guide dimension is {d}",
            eta.len()
        )));
    }
    let theta = guide.reparam_draw(eta)?;
    let prior_grad = model.log_prior_grad(&theta);
    let dim = clipped_dim(variant, guide);
    let mut out = PerExampleBatch {
        data: Vec::with_capacity(batch.len() * dim),
        dim,
        n_rows: batch.len(),
        mean_m_norm: 0.0,
        mean_scale_norm: None,
    };
    let mut scale_norm_acc = 0.0;

    match (variant, guide) {
        (EstimatorVariant::Aligned, Guide::Diagonal(_))
        | (EstimatorVariant::FullRankAligned, Guide::FullRank(_)) => {
            for &i in batch {
                let g_mx =
                    per_example_gm_with_prior(model, &theta, data.row(i), data.target(i), n, &prior_grad)?;
                out.mean_m_norm += l2_norm(&g_mx);
                out.data.extend_from_slice(&g_mx);
            }
        }
        (EstimatorVariant::AlignedNatural, Guide::Diagonal(g)) => {
            let (inv_m, _) = inverse_fisher_blocks(g)?;
            for &i in batch {
                let mut g_mx =
                    per_example_gm_with_prior(model, &theta, data.row(i), data.target(i), n, &prior_grad)?;
                for (v, im) in g_mx.iter_mut().zip(&inv_m) {
                    *v *= im;
                }
                out.mean_m_norm += l2_norm(&g_mx);
                out.data.extend_from_slice(&g_mx);
            }
        }
        (EstimatorVariant::Vanilla, Guide::Diagonal(g)) => {
            for &i in batch {
                let g_mx =
                    per_example_gm_with_prior(model, &theta, data.row(i), data.target(i), n, &prior_grad)?;
                let g_sx = per_example_gs(&g_mx, eta, g, n)?;
                out.mean_m_norm += l2_norm(&g_mx);
                scale_norm_acc += l2_norm(&g_sx);
                out.data.extend_from_slice(&g_mx);
                out.data.extend_from_slice(&g_sx);
            }
            out.mean_scale_norm = Some(0.0);
        }
        (EstimatorVariant::Preconditioned, Guide::Diagonal(g)) => {
            let tprime = g.transform.deriv_vec(&g.s)?;
            for &i in batch {
                let g_mx =
                    per_example_gm_with_prior(model, &theta, data.row(i), data.target(i), n, &prior_grad)?;
                let mut g_sx = per_example_gs(&g_mx, eta, g, n)?;
                for (v, tp) in g_sx.iter_mut().zip(&tprime) {
                    *v /= tp;
                }
                out.mean_m_norm += l2_norm(&g_mx);
                scale_norm_acc += l2_norm(&g_sx);
                out.data.extend_from_slice(&g_mx);
                out.data.extend_from_slice(&g_sx);
            }
            out.mean_scale_norm = Some(0.0);
        }
        (EstimatorVariant::Natural, Guide::Diagonal(g)) => {
            let (inv_m, inv_s) = inverse_fisher_blocks(g)?;
            for &i in batch {
                let mut g_mx =
                    per_example_gm_with_prior(model, &theta, data.row(i), data.target(i), n, &prior_grad)?;
                let mut g_sx = per_example_gs(&g_mx, eta, g, n)?;
                for (v, im) in g_mx.iter_mut().zip(&inv_m) {
                    *v *= im;
                }
                for (v, is) in g_sx.iter_mut().zip(&inv_s) {
                    *v *= is;
                }
                out.mean_m_norm += l2_norm(&g_mx);
                scale_norm_acc += l2_norm(&g_sx);
                out.data.extend_from_slice(&g_mx);
                out.data.extend_from_slice(&g_sx);
            }
            out.mean_scale_norm = Some(0.0);
        }
        (EstimatorVariant::FullRankVanilla, Guide::FullRank(g)) => {
            let ent = g.entropy_grad_a()?;
            let w = 1.0 / n as f64;
            for &i in batch {
                let g_mx =
                    per_example_gm_with_prior(model, &theta, data.row(i), data.target(i), n, &prior_grad)?;
                let mut g_ax = fullrank_scale_from_mean(&g_mx, eta, g)?;
                for (v, e) in g_ax.iter_mut().zip(&ent) {
                    *v += w * e;
                }
                out.mean_m_norm += l2_norm(&g_mx);
                scale_norm_acc += l2_norm(&g_ax);
                out.data.extend_from_slice(&g_mx);
                out.data.extend_from_slice(&g_ax);
            }
            out.mean_scale_norm = Some(0.0);
        }
        _ => unreachable!("compatibility checked above"),
    }

    if out.n_rows > 0 {
        out.mean_m_norm /= out.n_rows as f64;
        if out.mean_scale_norm.is_some() {
            out.mean_scale_norm = Some(scale_norm_acc / out.n_rows as f64);
        }
    }
    Ok(out)
}

/// Reconstruct the scale gradient from a privatized mean gradient, for the
/// aligned variants. `entropy_grad` is added as given, so the caller
/// controls its weight (the full gradient uses it once; a gradient averaged
/// over `N` examples uses `1/N` of it).
pub fn postprocess_scale(
    variant: EstimatorVariant,
    gm_noised: &[f64],
    eta: &[f64],
    guide: &Guide,
    entropy_grad: &[f64],
) -> Result<Vec<f64>> {
    if !variant.is_aligned() {
        return Err(DpviError::Contract(format!(
            "estimator variant '{variant}' has no post-processing step"
        )));
    }
    check_compat(variant, guide)?;
    let d = guide.dim();
    if gm_noised.len() != d || eta.len() != d {
        return Err(DpviError::Shape(format!(
            "post-processing needs length-{d} inputs, got {} and {}",
            gm_noised.len(),
            eta.len()
        )));
    }
    if entropy_grad.len() != guide.scale_len() {
        return Err(DpviError::Shape(format!(
            "entropy gradient has length {}, expected {}",
            entropy_grad.len(),
            guide.scale_len()
        )));
    }
    match (variant, guide) {
        (EstimatorVariant::Aligned, Guide::Diagonal(g)) => {
            let tprime = g.transform.deriv_vec(&g.s)?;
            Ok((0..d)
                .map(|j| eta[j] * tprime[j] * gm_noised[j] + entropy_grad[j])
                .collect())
        }
        (EstimatorVariant::AlignedNatural, Guide::Diagonal(g)) => {
            // inv(I_s) (eta T'(s) I_m g_m_nat + grad_s H), I_m = 1/T(s)^2
            let tprime = g.transform.deriv_vec(&g.s)?;
            let (inv_m, inv_s) = inverse_fisher_blocks(g)?;
            Ok((0..d)
                .map(|j| {
                    inv_s[j] * (eta[j] * tprime[j] * gm_noised[j] / inv_m[j] + entropy_grad[j])
                })
                .collect())
        }
        (EstimatorVariant::FullRankAligned, Guide::FullRank(g)) => {
            let mut g_a = fullrank_scale_from_mean(gm_noised, eta, g)?;
            for (v, e) in g_a.iter_mut().zip(entropy_grad) {
                *v += e;
            }
            Ok(g_a)
        }
        _ => unreachable!("compatibility checked above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LogisticRegression;
    use crate::rng::{standard_normal_vec, RngFactory, StreamPurpose};
    use crate::transforms::TransformKind;
    use approx::assert_relative_eq;

    fn toy_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = RngFactory::new(seed).stream(0, StreamPurpose::Data);
        let features = standard_normal_vec(&mut rng, n * p);
        let targets: Vec<f64> = standard_normal_vec(&mut rng, n)
            .iter()
            .map(|v| if *v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Dataset::new(features, targets, names, "y".into()).unwrap()
    }

    fn toy_guide(d: usize, sigma: f64) -> DiagonalGuide {
        let mut g = DiagonalGuide::with_initial_sigma(d, sigma, TransformKind::Softplus).unwrap();
        for j in 0..d {
            g.m[j] = 0.1 * (j as f64 + 1.0);
        }
        g
    }

    #[test]
    fn variant_names_round_trip() {
        for v in EstimatorVariant::ALL {
            assert_eq!(v.to_string().parse::<EstimatorVariant>().unwrap(), v);
        }
        assert!("fullrank".parse::<EstimatorVariant>().is_err());
    }

    #[test]
    fn per_example_gm_flat_prior_equals_likelihood_grad() {
        // prior gradient is zero at theta = 0 for the std-normal prior
        let model = LogisticRegression::new(2).unwrap();
        let g = per_example_gm(&model, &[0.0, 0.0], &[1.0, -1.0], 1.0, 50).unwrap();
        let ll = model
            .per_example_loglik_grad(&[1.0, -1.0], 1.0, &[0.0, 0.0])
            .unwrap();
        assert_eq!(g, ll);
    }

    #[test]
    fn per_example_gm_n_one_gets_full_prior() {
        let model = LogisticRegression::new(2).unwrap();
        let theta = [0.5, -0.3];
        let g = per_example_gm(&model, &theta, &[1.0, 2.0], 0.0, 1).unwrap();
        let ll = model
            .per_example_loglik_grad(&[1.0, 2.0], 0.0, &theta)
            .unwrap();
        let prior = model.log_prior_grad(&theta);
        for j in 0..2 {
            assert_relative_eq!(g[j], ll[j] + prior[j], max_relative = 1e-14);
        }
    }

    #[test]
    fn per_example_gm_sums_to_full_gradient() {
        let model = LogisticRegression::new(3).unwrap();
        let data = toy_dataset(20, 3, 7);
        let theta = [0.2, -0.4, 0.1];
        let mut sum = vec![0.0; 3];
        for i in 0..data.n_rows() {
            let g = per_example_gm(&model, &theta, data.row(i), data.target(i), data.n_rows())
                .unwrap();
            for j in 0..3 {
                sum[j] += g[j];
            }
        }
        // direct evaluation of grad log p(D, theta)
        let mut full = model.log_prior_grad(&theta);
        for i in 0..data.n_rows() {
            let g = model
                .per_example_loglik_grad(data.row(i), data.target(i), &theta)
                .unwrap();
            for j in 0..3 {
                full[j] += g[j];
            }
        }
        for j in 0..3 {
            assert_relative_eq!(sum[j], full[j], max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn per_example_gs_zero_eta_leaves_entropy_share() {
        let guide = toy_guide(2, 0.5);
        let g = per_example_gs(&[3.0, -1.0], &[0.0, 0.0], &guide, 10).unwrap();
        let ent = guide.entropy_grad_s().unwrap();
        for j in 0..2 {
            assert_relative_eq!(g[j], ent[j] / 10.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn per_example_gs_exp_transform_scales_by_sigma() {
        let sigma = 0.7;
        let guide = DiagonalGuide::with_initial_sigma(2, sigma, TransformKind::Exp).unwrap();
        let eta = [1.0, -2.0];
        let g_mx = [0.4, 0.5];
        let g = per_example_gs(&g_mx, &eta, &guide, 1_000_000_000).unwrap();
        // entropy share is ~1e-9, data part is sigma * eta * g_mx
        for j in 0..2 {
            assert_relative_eq!(g[j], sigma * eta[j] * g_mx[j], max_relative = 1e-5);
        }
    }

    /// Single-sample MC ELBO as a function of s with (m, eta, data) fixed.
    fn mc_elbo_at_s(
        model: &dyn Model,
        data: &Dataset,
        m: &[f64],
        s: &[f64],
        eta: &[f64],
    ) -> f64 {
        let guide = DiagonalGuide::new(m.to_vec(), s.to_vec(), TransformKind::Softplus).unwrap();
        let theta = guide.reparam_draw(eta).unwrap();
        let mut ll = model.log_prior(&theta);
        for i in 0..data.n_rows() {
            ll += model
                .per_example_loglik(data.row(i), data.target(i), &theta)
                .unwrap();
        }
        ll + guide.entropy().unwrap()
    }

    #[test]
    fn summed_per_example_gs_matches_elbo_finite_difference() {
        let model = LogisticRegression::new(3).unwrap();
        let data = toy_dataset(12, 3, 3);
        let guide = toy_guide(3, 0.8);
        let mut rng = RngFactory::new(21).stream(0, StreamPurpose::Eta);
        let eta = standard_normal_vec(&mut rng, 3);
        let theta = guide.reparam_draw(&eta).unwrap();

        let mut summed = vec![0.0; 3];
        for i in 0..data.n_rows() {
            let g_mx = per_example_gm(&model, &theta, data.row(i), data.target(i), data.n_rows())
                .unwrap();
            let g_sx = per_example_gs(&g_mx, &eta, &guide, data.n_rows()).unwrap();
            for j in 0..3 {
                summed[j] += g_sx[j];
            }
        }

        let h = 1e-6;
        for j in 0..3 {
            let mut sp = guide.s.clone();
            sp[j] += h;
            let mut sm = guide.s.clone();
            sm[j] -= h;
            let fd = (mc_elbo_at_s(&model, &data, &guide.m, &sp, &eta)
                - mc_elbo_at_s(&model, &data, &guide.m, &sm, &eta))
                / (2.0 * h);
            assert_relative_eq!(summed[j], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn row_dimensions_per_variant() {
        let model = LogisticRegression::new(3).unwrap();
        let data = toy_dataset(8, 3, 1);
        let diag = Guide::Diagonal(toy_guide(3, 1.0));
        let eta = [0.3, -0.2, 0.9];
        let batch: Vec<usize> = (0..8).collect();

        for (variant, dim) in [
            (EstimatorVariant::Vanilla, 6),
            (EstimatorVariant::Aligned, 3),
            (EstimatorVariant::Preconditioned, 6),
            (EstimatorVariant::Natural, 6),
            (EstimatorVariant::AlignedNatural, 3),
        ] {
            let b =
                build_per_example_batch(variant, &diag, &model, &data, &batch, &eta, 8).unwrap();
            assert_eq!(b.dim(), dim, "variant {variant}");
            assert_eq!(b.n_rows(), 8);
        }

        let fr = Guide::FullRank(
            FullRankGuide::with_initial_sigma(3, 1.0, TransformKind::Softplus).unwrap(),
        );
        let b = build_per_example_batch(
            EstimatorVariant::FullRankVanilla,
            &fr,
            &model,
            &data,
            &batch,
            &eta,
            8,
        )
        .unwrap();
        assert_eq!(b.dim(), 3 + 6);
        let b = build_per_example_batch(
            EstimatorVariant::FullRankAligned,
            &fr,
            &model,
            &data,
            &batch,
            &eta,
            8,
        )
        .unwrap();
        assert_eq!(b.dim(), 3);
    }

    #[test]
    fn incompatible_variant_and_guide_is_config_error() {
        let model = LogisticRegression::new(2).unwrap();
        let data = toy_dataset(4, 2, 2);
        let diag = Guide::Diagonal(toy_guide(2, 1.0));
        let err = build_per_example_batch(
            EstimatorVariant::FullRankVanilla,
            &diag,
            &model,
            &data,
            &[0, 1],
            &[0.1, 0.2],
            4,
        );
        assert!(matches!(err, Err(DpviError::Config(_))));
    }

    #[test]
    fn natural_blocks_at_unit_sigma_exp() {
        let guide = DiagonalGuide::with_initial_sigma(2, 1.0, TransformKind::Exp).unwrap();
        let (inv_m, inv_s) = inverse_fisher_blocks(&guide).unwrap();
        for j in 0..2 {
            assert_relative_eq!(inv_m[j], 1.0, max_relative = 1e-12);
            assert_relative_eq!(inv_s[j], 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn natural_closed_form_matches_explicit_fisher_inverse() {
        // Assemble the 2d x 2d diagonal Fisher diag(1/T(s)^2, 2T'(s)^2/T(s)^2)
        // explicitly, invert with nalgebra, and compare the product against
        // the closed-form rows.
        let model = LogisticRegression::new(4).unwrap();
        let data = toy_dataset(6, 4, 9);
        let mut guide = toy_guide(4, 0.6);
        guide.s[2] = 1.3;
        let eta = [0.5, -1.0, 0.25, 2.0];
        let batch: Vec<usize> = (0..6).collect();
        let g = Guide::Diagonal(guide.clone());

        let vanilla = build_per_example_batch(
            EstimatorVariant::Vanilla,
            &g,
            &model,
            &data,
            &batch,
            &eta,
            6,
        )
        .unwrap();
        let natural = build_per_example_batch(
            EstimatorVariant::Natural,
            &g,
            &model,
            &data,
            &batch,
            &eta,
            6,
        )
        .unwrap();

        let d = 4;
        let t = guide.transform.value_vec(&guide.s).unwrap();
        let tp = guide.transform.deriv_vec(&guide.s).unwrap();
        let mut fisher = nalgebra::DMatrix::<f64>::zeros(2 * d, 2 * d);
        for j in 0..d {
            fisher[(j, j)] = 1.0 / (t[j] * t[j]);
            fisher[(d + j, d + j)] = 2.0 * tp[j] * tp[j] / (t[j] * t[j]);
        }
        let inv = fisher.try_inverse().unwrap();
        for r in 0..6 {
            let v = nalgebra::DVector::from_column_slice(vanilla.row(r));
            let expected = &inv * v;
            for k in 0..2 * d {
                assert_relative_eq!(natural.row(r)[k], expected[k], max_relative = 1e-10, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn preconditioned_data_part_is_eta_times_gm() {
        // With the entropy share removed, the preconditioned scale rows are
        // exactly eta * g_m.
        let model = LogisticRegression::new(2).unwrap();
        let data = toy_dataset(5, 2, 4);
        let guide = toy_guide(2, 0.3);
        let g = Guide::Diagonal(guide.clone());
        let eta = [1.5, -0.5];
        let batch: Vec<usize> = (0..5).collect();
        let n = data.n_rows();

        let precon = build_per_example_batch(
            EstimatorVariant::Preconditioned,
            &g,
            &model,
            &data,
            &batch,
            &eta,
            n,
        )
        .unwrap();
        let ent = guide.entropy_grad_s().unwrap();
        let tprime = guide.transform.deriv_vec(&guide.s).unwrap();
        for (r, &i) in batch.iter().enumerate() {
            let theta = guide.reparam_draw(&eta).unwrap();
            let g_mx = per_example_gm(&model, &theta, data.row(i), data.target(i), n).unwrap();
            for j in 0..2 {
                let data_part = precon.row(r)[2 + j] - ent[j] / (n as f64) / tprime[j];
                assert_relative_eq!(data_part, eta[j] * g_mx[j], max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fullrank_vanilla_zero_eta_scale_rows_are_entropy_share() {
        let model = LogisticRegression::new(2).unwrap();
        let data = toy_dataset(3, 2, 8);
        let fr = FullRankGuide::with_initial_sigma(2, 0.9, TransformKind::Softplus).unwrap();
        let ent = fr.entropy_grad_a().unwrap();
        let g = Guide::FullRank(fr);
        let batch: Vec<usize> = (0..3).collect();
        let b = build_per_example_batch(
            EstimatorVariant::FullRankVanilla,
            &g,
            &model,
            &data,
            &batch,
            &[0.0, 0.0],
            3,
        )
        .unwrap();
        for r in 0..3 {
            for k in 0..3 {
                assert_relative_eq!(b.row(r)[2 + k], ent[k] / 3.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn aligned_postprocess_matches_summed_rows_without_noise() {
        // With no clipping and no noise, the aligned reconstruction equals
        // the summed per-example scale gradients (full batch).
        let model = LogisticRegression::new(3).unwrap();
        let data = toy_dataset(10, 3, 6);
        let guide = toy_guide(3, 0.4);
        let g = Guide::Diagonal(guide.clone());
        let mut rng = RngFactory::new(2).stream(0, StreamPurpose::Eta);
        let eta = standard_normal_vec(&mut rng, 3);
        let batch: Vec<usize> = (0..10).collect();
        let n = data.n_rows();
        let theta = guide.reparam_draw(&eta).unwrap();

        let aligned =
            build_per_example_batch(EstimatorVariant::Aligned, &g, &model, &data, &batch, &eta, n)
                .unwrap();
        let gm_sum = aligned.clip_and_sum(f64::INFINITY).unwrap();
        let ent = guide.entropy_grad_s().unwrap();
        let gs = postprocess_scale(EstimatorVariant::Aligned, &gm_sum, &eta, &g, &ent).unwrap();

        let mut summed = vec![0.0; 3];
        for &i in &batch {
            let g_mx = per_example_gm(&model, &theta, data.row(i), data.target(i), n).unwrap();
            let g_sx = per_example_gs(&g_mx, &eta, &guide, n).unwrap();
            for j in 0..3 {
                summed[j] += g_sx[j];
            }
        }
        for j in 0..3 {
            assert_relative_eq!(gs[j], summed[j], max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn aligned_postprocess_zero_eta_returns_entropy() {
        let guide = toy_guide(2, 1.0);
        let g = Guide::Diagonal(guide.clone());
        let ent = guide.entropy_grad_s().unwrap();
        let gs = postprocess_scale(
            EstimatorVariant::Aligned,
            &[123.0, -777.0],
            &[0.0, 0.0],
            &g,
            &ent,
        )
        .unwrap();
        assert_eq!(gs, ent);
    }

    #[test]
    fn aligned_natural_postprocess_at_unit_sigma_exp() {
        // g_s = 1/2 (eta * g_m_nat + grad_s H) when T = exp and T(s) = 1
        let guide = DiagonalGuide::with_initial_sigma(2, 1.0, TransformKind::Exp).unwrap();
        let ent = guide.entropy_grad_s().unwrap();
        let g = Guide::Diagonal(guide);
        let gm_nat = [2.0, -4.0];
        let eta = [1.0, 0.5];
        let gs = postprocess_scale(EstimatorVariant::AlignedNatural, &gm_nat, &eta, &g, &ent)
            .unwrap();
        for j in 0..2 {
            assert_relative_eq!(
                gs[j],
                0.5 * (eta[j] * gm_nat[j] + ent[j]),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn postprocess_rejects_non_aligned_variants() {
        let g = Guide::Diagonal(toy_guide(1, 1.0));
        let err = postprocess_scale(EstimatorVariant::Vanilla, &[1.0], &[1.0], &g, &[0.5]);
        assert!(matches!(err, Err(DpviError::Contract(_))));
    }
}
