//! Command-line interface for the DPVI engine.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dpvi::dataio;
use dpvi::gradest::EstimatorVariant;
use dpvi::harness::datagen::{gen_correlated_regression, gen_logistic, SynthRegressionConfig};
use dpvi::harness::experiments::{
    epochs_to_iterations, init_diagonal_guide, init_fullrank_guide, run_disparate_noise,
    run_full_rank, DisparateNoiseConfig, FullRankConfig,
};
use dpvi::harness::grad_check;
use dpvi::models::model_by_name;
use dpvi::privacy::{account_privacy, calibrate_noise, DpSgdConfig};
use dpvi::rng::{RngFactory, StreamPurpose};
use dpvi::traceanalysis::{
    build_noise_aware_posterior, default_candidate_windows, detect_burn_out, SlopeMode,
    DEFAULT_SLOPE_THRESHOLD,
};
use dpvi::trainer::{run_dpvi, AdamParams};
use dpvi::transforms::TransformKind;

#[derive(Parser)]
#[command(
    name = "dpvi",
    about = "Differentially private variational inference",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a variational approximation with DP-SGD and record the trace.
    Train(TrainArgs),
    /// Analyze a recorded trace: convergence, averaging, noise estimation.
    AnalyzeTrace(AnalyzeArgs),
    /// Generate synthetic datasets.
    GenData(GenDataArgs),
    /// Check model gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Compute the privacy spend of a configuration.
    Accountant(AccountantArgs),
    /// Calibrate the noise multiplier for a target epsilon.
    Calibrate(CalibrateArgs),
    /// Run a named experiment sweep from a key=value config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Model: logistic | linear | poisson.
    #[arg(long)]
    model: String,
    /// Training data (headered CSV).
    #[arg(long)]
    data: PathBuf,
    /// Target column name.
    #[arg(long, default_value = "y")]
    target: String,
    /// Estimator variant: vanilla | aligned | preconditioned | natural |
    /// aligned-natural | full-rank-vanilla | full-rank-aligned.
    #[arg(long, default_value = "aligned")]
    variant: String,
    /// Number of epochs (one epoch is ~1/q iterations).
    #[arg(long, conflicts_with = "iterations")]
    epochs: Option<usize>,
    /// Exact number of iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Poisson subsampling ratio.
    #[arg(long, default_value_t = 0.01)]
    q: f64,
    /// Clipping threshold; defaults per variant (vanilla/aligned 2.0,
    /// preconditioned 4.0, natural variants 0.1, full-rank variants 0.2).
    #[arg(long)]
    clip: Option<f64>,
    /// Noise multiplier sigma_DP (mutually exclusive with --epsilon).
    #[arg(long, conflicts_with = "epsilon")]
    sigma: Option<f64>,
    /// Target epsilon; sigma_DP is calibrated to meet it.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Privacy slack delta; defaults to 1/N.
    #[arg(long)]
    delta: Option<f64>,
    /// Initial guide standard deviation sigma_q.
    #[arg(long, default_value_t = 1.0)]
    init_sigma: f64,
    /// Mean initialization: zero | normal.
    #[arg(long, default_value = "zero")]
    init_mean: String,
    /// Scale transform: softplus | exp.
    #[arg(long, default_value = "softplus")]
    transform: String,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize feature columns before training.
    #[arg(long)]
    standardize: bool,
    /// Write the per-iteration parameter trace (CSV: iteration,parameter,value).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the final guide (CSV: name,index,value).
    #[arg(long)]
    guide_out: Option<PathBuf>,
    /// Write per-iteration mean pre-clip gradient norms.
    #[arg(long)]
    grad_norms_out: Option<PathBuf>,
    /// Write the per-iteration single-sample ELBO estimate.
    #[arg(long)]
    elbo_out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace CSV produced by `train --trace-out`.
    #[arg(long)]
    trace: PathBuf,
    /// Slope threshold for the convergence check.
    #[arg(long, default_value_t = DEFAULT_SLOPE_THRESHOLD)]
    threshold: f64,
    /// Comma-separated trailing window lengths; defaults to 1/8, 1/4, 1/2
    /// and 3/4 of the trace.
    #[arg(long)]
    windows: Option<String>,
    /// Slope mode: normalized | raw.
    #[arg(long, default_value = "normalized")]
    mode: String,
    /// Transform used by the run (needed to inflate marginal variances).
    #[arg(long, default_value = "softplus")]
    transform: String,
    /// Output CSV (parameter,t_burn_out,converged,slope,mean,trace_var,inflated_var).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Dataset kind: correlated-linear | logistic.
    #[arg(long, default_value = "correlated-linear")]
    kind: String,
    /// Feature dimension.
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Rows per split.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Correlation density in [0, 1] (correlated-linear only).
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    /// Beta shape parameters for correlation strengths.
    #[arg(long, default_value_t = 8.0)]
    alpha_beta: f64,
    #[arg(long, default_value_t = 10.0)]
    beta_beta: f64,
    /// Observation noise scale.
    #[arg(long, default_value_t = 1.0)]
    sigma_y: f64,
    /// Std of the log marginal scale factors.
    #[arg(long, default_value_t = 0.2)]
    marginal_log_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV for the training split.
    #[arg(long)]
    out_train: PathBuf,
    /// Output CSV for the test split (correlated-linear only).
    #[arg(long)]
    out_test: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Model: logistic | linear | poisson.
    #[arg(long)]
    model: String,
    /// Feature dimension.
    #[arg(long, default_value_t = 5)]
    features: usize,
    /// Number of random evaluation points.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AccountantArgs {
    /// Noise multiplier sigma_DP.
    #[arg(long)]
    sigma: f64,
    /// Poisson subsampling ratio.
    #[arg(long)]
    q: f64,
    #[arg(long)]
    iterations: usize,
    #[arg(long)]
    delta: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Target epsilon.
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    iterations: usize,
    #[arg(long)]
    delta: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Key=value config file; must set `experiment` to
    /// `disparate-noise` or `full-rank`.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::AnalyzeTrace(args) => cmd_analyze(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::Accountant(args) => cmd_accountant(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

/// Paper defaults for the clipping threshold, per variant.
fn default_clip(variant: EstimatorVariant) -> f64 {
    match variant {
        EstimatorVariant::Vanilla | EstimatorVariant::Aligned => 2.0,
        EstimatorVariant::Preconditioned => 4.0,
        EstimatorVariant::Natural | EstimatorVariant::AlignedNatural => 0.1,
        EstimatorVariant::FullRankVanilla | EstimatorVariant::FullRankAligned => 0.2,
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let variant: EstimatorVariant = args.variant.parse()?;
    let transform: TransformKind = args.transform.parse()?;
    let mut data = dataio::load_dataset(&args.data, &args.target)?;
    if args.standardize {
        data.standardize();
    }
    let n = data.n_rows();
    let model = model_by_name(&args.model, data.n_features())?;

    let iterations = match (args.iterations, args.epochs) {
        (Some(t), _) => t,
        (None, Some(e)) => epochs_to_iterations(e, args.q),
        (None, None) => bail!("one of --epochs or --iterations is required"),
    };
    let delta = args.delta.unwrap_or(1.0 / n as f64);
    let clip = args.clip.unwrap_or_else(|| default_clip(variant));
    let sigma = match (args.sigma, args.epsilon) {
        (Some(s), _) => s,
        (None, Some(eps)) => {
            let s = calibrate_noise(eps, delta, args.q, iterations)?;
            println!("calibrated sigma_DP = {s} for epsilon = {eps}");
            s
        }
        (None, None) => bail!("one of --sigma or --epsilon is required (use --sigma 0 for a non-private run)"),
    };

    let random_means = match args.init_mean.as_str() {
        "zero" => false,
        "normal" => true,
        other => bail!("unknown --init-mean '{other}' (expected 'zero' or 'normal')"),
    };
    let guide = if variant.requires_full_rank() {
        init_fullrank_guide(model.dim(), args.init_sigma, transform, args.seed, random_means)?
    } else {
        init_diagonal_guide(model.dim(), args.init_sigma, transform, args.seed, random_means)?
    };

    let config = DpSgdConfig {
        clip_threshold: if sigma == 0.0 && args.clip.is_none() {
            f64::INFINITY
        } else {
            clip
        },
        noise_multiplier: sigma,
        subsample_ratio: args.q,
        iterations,
        delta,
        seed: args.seed,
        variant,
    };
    let adam = AdamParams {
        learning_rate: args.lr,
        ..AdamParams::default()
    };

    println!(
        "training {} ({} rows, {} features) with {variant} for {iterations} iterations (q = {}, C = {}, sigma_DP = {sigma})",
        args.model,
        n,
        data.n_features(),
        args.q,
        config.clip_threshold,
    );
    let trace = run_dpvi(model.as_ref(), guide.clone(), &data, &config, adam)?;

    if trace.spend.epsilon.is_finite() {
        println!(
            "privacy spend: epsilon = {} at delta = {} (RDP accountant; conservative versus PLD-based accountants)",
            trace.spend.epsilon, trace.spend.delta
        );
    } else {
        println!("privacy spend: unbounded (sigma_DP = 0, non-private run)");
    }
    let tail = trace.elbo.len().min(100);
    let elbo_tail: f64 =
        trace.elbo[trace.elbo.len() - tail..].iter().sum::<f64>() / tail as f64;
    println!("single-sample ELBO, mean of last {tail} iterations: {elbo_tail}");

    if let Some(path) = &args.trace_out {
        dataio::write_trace_csv(path, &trace)?;
        println!("trace written to {}", path.display());
    }
    if let Some(path) = &args.guide_out {
        let mut final_guide = guide;
        final_guide.set_flat_params(trace.final_params())?;
        dataio::write_guide_csv(path, &final_guide)?;
        println!("final guide written to {}", path.display());
    }
    if let Some(path) = &args.grad_norms_out {
        dataio::write_grad_norms_csv(path, &trace.grad_norms)?;
        println!("gradient norms written to {}", path.display());
    }
    if let Some(path) = &args.elbo_out {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iteration,elbo")?;
        for (t, v) in trace.elbo.iter().enumerate() {
            writeln!(w, "{t},{v}")?;
        }
        println!("ELBO trace written to {}", path.display());
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let mode: SlopeMode = args.mode.parse()?;
    let transform: TransformKind = args.transform.parse()?;
    let trace = dataio::read_trace_csv(&args.trace)?;
    let candidates = match &args.windows {
        Some(spec) => spec
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad window length '{w}'"))
            })
            .collect::<Result<Vec<_>>>()?,
        None => default_candidate_windows(trace.iterations()),
    };
    let report = detect_burn_out(&trace, &candidates, args.threshold, mode)?;
    let converged = report.params.iter().filter(|p| p.converged).count();
    println!(
        "{} of {} parameter traces converged (threshold {}, {} mode, windows {:?})",
        converged,
        report.params.len(),
        args.threshold,
        args.mode,
        candidates
    );
    let posterior = match build_noise_aware_posterior(&trace, &report, transform) {
        Ok(p) => Some(p),
        Err(e) => {
            println!("noise-aware posterior unavailable: {e}");
            None
        }
    };
    dataio::write_analysis_csv(&args.out, &trace, &report, posterior.as_ref())?;
    println!("analysis written to {}", args.out.display());
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    match args.kind.as_str() {
        "correlated-linear" => {
            let cfg = SynthRegressionConfig {
                dim: args.dim,
                rho: args.rho,
                alpha_beta: args.alpha_beta,
                beta_beta: args.beta_beta,
                n: args.n,
                sigma_y: args.sigma_y,
                marginal_log_std: args.marginal_log_std,
                seed: args.seed,
            };
            let gen = gen_correlated_regression(&cfg)?;
            dataio::write_dataset(&args.out_train, &gen.train)?;
            println!("train split written to {}", args.out_train.display());
            if let Some(path) = &args.out_test {
                dataio::write_dataset(path, &gen.test)?;
                println!("test split written to {}", path.display());
            }
        }
        "logistic" => {
            let gen = gen_logistic(args.n, args.dim, args.seed)?;
            dataio::write_dataset(&args.out_train, &gen.train)?;
            println!("train split written to {}", args.out_train.display());
        }
        other => bail!("unknown dataset kind '{other}'"),
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<()> {
    let model = model_by_name(&args.model, args.features)?;
    let mut rng = RngFactory::new(args.seed).stream(0, StreamPurpose::Eval);
    let report = grad_check(model.as_ref(), args.points, args.tolerance, &mut rng)?;
    println!(
        "{}: {} points, max relative error {:e}",
        args.model, report.n_points, report.max_rel_error
    );
    match report.failure {
        None => {
            println!("PASS (tolerance {:e})", args.tolerance);
            Ok(())
        }
        Some((point, coord, got, fd)) => {
            bail!(
                "FAIL at point {point}, coordinate {coord}: analytic {got} vs finite difference {fd}"
            );
        }
    }
}

fn cmd_accountant(args: AccountantArgs) -> Result<()> {
    let spend = account_privacy(args.sigma, args.q, args.iterations, args.delta)?;
    println!(
        "epsilon = {} at delta = {} (sigma_DP = {}, q = {}, T = {}; RDP accountant, conservative versus PLD-based accountants)",
        spend.epsilon, spend.delta, args.sigma, args.q, args.iterations
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let sigma = calibrate_noise(args.epsilon, args.delta, args.q, args.iterations)?;
    let spend = account_privacy(sigma, args.q, args.iterations, args.delta)?;
    println!(
        "sigma_DP = {sigma} reaches epsilon = {} <= {} at delta = {} over {} iterations",
        spend.epsilon, args.epsilon, args.delta, args.iterations
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

fn parse_kv_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {} is not key=value: '{raw}'", lineno + 1);
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_seed_list(spec: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let lo: u64 = a.trim().parse().context("bad seed range start")?;
        let hi: u64 = b.trim().parse().context("bad seed range end")?;
        return Ok((lo..hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed '{s}'")))
        .collect()
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<T>()
            .map_err(|_| anyhow::anyhow!("config key '{key}': cannot parse '{v}'")),
    }
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    use std::io::Write;
    let cfg = parse_kv_config(&args.config)?;
    let name = cfg
        .get("experiment")
        .context("config must set 'experiment = disparate-noise | full-rank'")?
        .clone();
    let out_dir = PathBuf::from(cfg.get("out_dir").cloned().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out_dir)?;
    let seeds = match cfg.get("seeds") {
        Some(s) => parse_seed_list(s)?,
        None => (0..10).collect(),
    };

    match name.as_str() {
        "disparate-noise" => {
            let exp = DisparateNoiseConfig {
                n: get_parsed(&cfg, "n", 10_000)?,
                p: get_parsed(&cfg, "p", 10)?,
                epochs: get_parsed(&cfg, "epochs", 500)?,
                q: get_parsed(&cfg, "q", 0.01)?,
                clip: get_parsed(&cfg, "clip", 2.0)?,
                target_epsilon: get_parsed(&cfg, "epsilon", 1.0)?,
                delta: get_parsed(&cfg, "delta", 1e-4)?,
                init_sigma: get_parsed(&cfg, "init_sigma", 1.0)?,
                learning_rate: get_parsed(&cfg, "lr", 1e-3)?,
                seeds,
                data_seed: get_parsed(&cfg, "data_seed", 1234)?,
                reference_multiplier: get_parsed(&cfg, "reference_multiplier", 4)?,
            };
            println!(
                "disparate-noise: n={} p={} epochs={} q={} clip={} epsilon={}",
                exp.n, exp.p, exp.epochs, exp.q, exp.clip, exp.target_epsilon
            );
            let summary = run_disparate_noise(&exp)?;
            let runs_path = out_dir.join("disparate_noise_runs.csv");
            let mut w = std::io::BufWriter::new(std::fs::File::create(&runs_path)?);
            writeln!(w, "seed,variant,mpae_m,mpae_s")?;
            for r in &summary.vanilla {
                writeln!(w, "{},vanilla,{},{}", r.seed, r.mpae_m, r.mpae_s)?;
            }
            for r in &summary.aligned {
                writeln!(w, "{},aligned,{},{}", r.seed, r.mpae_m, r.mpae_s)?;
            }
            w.flush()?;
            let summary_path = out_dir.join("disparate_noise_summary.csv");
            let mut w = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
            writeln!(
                w,
                "sigma_dp,iterations,aligned_s_wins,runs,mean_mpae_m_vanilla,mean_mpae_m_aligned,mean_mpae_s_vanilla,mean_mpae_s_aligned"
            )?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                summary.sigma_dp,
                summary.iterations,
                summary.aligned_s_wins,
                summary.vanilla.len(),
                summary.mean_mpae_m_vanilla,
                summary.mean_mpae_m_aligned,
                summary.mean_mpae_s_vanilla,
                summary.mean_mpae_s_aligned
            )?;
            w.flush()?;
            println!(
                "aligned wins on scale MPAE in {}/{} seeds; mean scale MPAE {:.4} (aligned) vs {:.4} (vanilla)",
                summary.aligned_s_wins,
                summary.vanilla.len(),
                summary.mean_mpae_s_aligned,
                summary.mean_mpae_s_vanilla
            );
            println!("wrote {} and {}", runs_path.display(), summary_path.display());
        }
        "full-rank" => {
            let rhos: Vec<f64> = cfg
                .get("rho")
                .map(|s| {
                    s.split(',')
                        .map(|v| v.trim().parse::<f64>().context("bad rho"))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?
                .unwrap_or_else(|| vec![0.2, 0.8]);
            let runs_path = out_dir.join("full_rank_runs.csv");
            let summary_path = out_dir.join("full_rank_summary.csv");
            let mut runs_w = std::io::BufWriter::new(std::fs::File::create(&runs_path)?);
            writeln!(runs_w, "rho,seed,pred_loglik_vanilla,pred_loglik_aligned")?;
            let mut sum_w = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
            writeln!(sum_w, "rho,sigma_dp,iterations,aligned_wins,runs")?;
            for &rho in &rhos {
                let exp = FullRankConfig {
                    dim: get_parsed(&cfg, "dim", 20)?,
                    rho,
                    n: get_parsed(&cfg, "n", 10_000)?,
                    epochs: get_parsed(&cfg, "epochs", 100)?,
                    q: get_parsed(&cfg, "q", 0.01)?,
                    clip: get_parsed(&cfg, "clip", 0.2)?,
                    target_epsilon: get_parsed(&cfg, "epsilon", 1.0)?,
                    delta: get_parsed(&cfg, "delta", 1e-4)?,
                    init_sigma: get_parsed(&cfg, "init_sigma", 1.0)?,
                    learning_rate: get_parsed(&cfg, "lr", 1e-3)?,
                    seeds: seeds.clone(),
                    data_seed: get_parsed(&cfg, "data_seed", 4321)?,
                    pred_samples: get_parsed(&cfg, "pred_samples", 200)?,
                    eval_seed: get_parsed(&cfg, "eval_seed", 99)?,
                };
                println!(
                    "full-rank: rho={rho} dim={} n={} epochs={} clip={}",
                    exp.dim, exp.n, exp.epochs, exp.clip
                );
                let summary = run_full_rank(&exp)?;
                for r in &summary.runs {
                    writeln!(
                        runs_w,
                        "{rho},{},{},{}",
                        r.seed, r.pred_vanilla, r.pred_aligned
                    )?;
                }
                writeln!(
                    sum_w,
                    "{rho},{},{},{},{}",
                    summary.sigma_dp,
                    summary.iterations,
                    summary.aligned_wins,
                    summary.runs.len()
                )?;
                println!(
                    "rho {rho}: aligned predictive log-lik at least vanilla's in {}/{} seeds",
                    summary.aligned_wins,
                    summary.runs.len()
                );
            }
            runs_w.flush()?;
            sum_w.flush()?;
            println!("wrote {} and {}", runs_path.display(), summary_path.display());
        }
        other => bail!("unknown experiment '{other}'"),
    }
    Ok(())
}
