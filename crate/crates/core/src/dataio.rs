//! CSV input/output.
//!
//! All numeric output is written with Rust's shortest round-trip `f64`
//! formatting, so values survive a write/read cycle exactly and repeated
//! runs with the same seed produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{DpviError, Result};
use crate::gradest::{EstimatorVariant, GradientDiagnostics};
use crate::guide::Guide;
use crate::models::Dataset;
use crate::privacy::{DpSgdConfig, PrivacySpend};
use crate::traceanalysis::{BurnOutReport, NoiseAwarePosterior};
use crate::trainer::Trace;

/// Load a headered CSV into a [`Dataset`], selecting the target column by
/// name. All other columns become features, in header order.
pub fn load_dataset(path: &Path, target: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let target_idx = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| DpviError::Data(format!("target column '{target}' not found")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(DpviError::Data(format!(
                "row {row_idx} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for (i, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                DpviError::Data(format!("row {row_idx}: cannot parse '{field}' as a number"))
            })?;
            if i == target_idx {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
    }
    Dataset::new(features, targets, feature_names, target.to_string())
}

/// Write a dataset as headered CSV (features first, target last).
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<&str> = data.feature_names.iter().map(|s| s.as_str()).collect();
    header.push(&data.target_name);
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n_rows() {
        let mut fields: Vec<String> = data.row(i).iter().map(|v| format!("{v}")).collect();
        fields.push(format!("{}", data.target(i)));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a trace in long format: `iteration,parameter,value`.
pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,parameter,value")?;
    for t in 0..trace.iterations() {
        let snap = trace.snapshot(t);
        for (name, value) in trace.param_names.iter().zip(snap) {
            writeln!(w, "{t},{name},{value}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a trace written by [`write_trace_csv`]. The privacy configuration
/// is not part of the file format; the returned trace carries a neutral
/// placeholder config and an infinite spend.
pub fn read_trace_csv(path: &Path) -> Result<Trace> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut first_iteration = true;
    let mut current_iter: Option<u64> = None;
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(DpviError::Data("trace rows must have 3 fields".into()));
        }
        let iter: u64 = record[0]
            .parse()
            .map_err(|_| DpviError::Data(format!("bad iteration index '{}'", &record[0])))?;
        let name = record[1].to_string();
        let value: f64 = record[2]
            .parse()
            .map_err(|_| DpviError::Data(format!("bad value '{}'", &record[2])))?;
        if current_iter != Some(iter) {
            current_iter = Some(iter);
            if !names.is_empty() {
                first_iteration = false;
            }
        }
        if first_iteration {
            names.push(name);
        }
        data.push(value);
    }
    if names.is_empty() {
        return Err(DpviError::Data("trace file is empty".into()));
    }
    let placeholder = DpSgdConfig {
        clip_threshold: 1.0,
        noise_multiplier: 0.0,
        subsample_ratio: 1.0,
        iterations: data.len() / names.len(),
        delta: 0.5,
        seed: 0,
        variant: EstimatorVariant::Vanilla,
    };
    Trace::from_parts(
        names,
        data,
        placeholder,
        PrivacySpend {
            epsilon: f64::INFINITY,
            delta: 0.5,
        },
    )
}

/// Write a guide as `name,index,value` rows; full-rank scale parameters are
/// labeled by their `(i,j)` position.
pub fn write_guide_csv(path: &Path, guide: &Guide) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "name,index,value")?;
    match guide {
        Guide::Diagonal(g) => {
            for (j, v) in g.m.iter().enumerate() {
                writeln!(w, "m,{j},{v}")?;
            }
            for (j, v) in g.s.iter().enumerate() {
                writeln!(w, "s,{j},{v}")?;
            }
        }
        Guide::FullRank(g) => {
            for (j, v) in g.m.iter().enumerate() {
                writeln!(w, "m,{j},{v}")?;
            }
            let mut k = 0;
            for i in 0..g.dim() {
                for j in 0..=i {
                    writeln!(w, "a,\"({i},{j})\",{}", g.a[k])?;
                    k += 1;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the per-iteration mean pre-clip gradient norms.
pub fn write_grad_norms_csv(path: &Path, norms: &[GradientDiagnostics]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,mean_m_norm,mean_scale_norm")?;
    for (t, d) in norms.iter().enumerate() {
        match d.mean_scale_norm {
            Some(s) => writeln!(w, "{t},{},{s}", d.mean_m_norm)?,
            None => writeln!(w, "{t},{},", d.mean_m_norm)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the trace-analysis report:
/// `parameter,t_burn_out,converged,slope,mean,trace_var,inflated_var`.
pub fn write_analysis_csv(
    path: &Path,
    trace: &Trace,
    report: &BurnOutReport,
    posterior: Option<&NoiseAwarePosterior>,
) -> Result<()> {
    use crate::traceanalysis::{estimate_dp_noise_variance, iterate_average};
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "parameter,t_burn_out,converged,slope,mean,trace_var,inflated_var")?;
    for (idx, (name, p)) in report
        .param_names
        .iter()
        .zip(report.params.iter())
        .enumerate()
    {
        let (mean, var) = if p.converged {
            let series = trace.series(idx);
            (
                format!("{}", iterate_average(&series, p.t_burn_out)?),
                format!("{}", estimate_dp_noise_variance(&series, p.t_burn_out)?),
            )
        } else {
            (String::new(), String::new())
        };
        let inflated = posterior
            .and_then(|post| {
                name.strip_prefix("m[").and_then(|rest| {
                    let j: usize = rest.strip_suffix(']')?.parse().ok()?;
                    post.params.get(j)?.inflated_marginal_var
                })
            })
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{name},{},{},{},{mean},{var},{inflated}",
            p.t_burn_out, p.converged, p.slope
        )?;
    }
    w.flush()?;
    Ok(())
}
