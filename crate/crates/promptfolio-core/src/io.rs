//! Artifact output: atomic file writes, JSON reports with a non-finite
//! sentinel policy, and the CSV formats for trajectories, training logs,
//! and sweep summaries.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::decomp::CoeffTrajectory;
use crate::error::Error;
use crate::eval::{ErrorReport, SweepResult};
use crate::train::{RunOutput, TrainRecord};
use crate::Result;

/// Writes bytes to `path` through a sibling temporary file and an
/// atomic rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            tempfile::NamedTempFile::new_in(d)?
        }
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Whether a JSON tree contains any of the non-finite sentinel strings
/// produced by the sentinel field serializers.
pub fn contains_nonfinite_sentinel(value: &serde_json::Value) -> bool {
    match value {
        serde_json::Value::String(s) => matches!(s.as_str(), "nan" | "inf" | "-inf"),
        serde_json::Value::Array(items) => items.iter().any(contains_nonfinite_sentinel),
        serde_json::Value::Object(map) => map.values().any(contains_nonfinite_sentinel),
        _ => false,
    }
}

/// Serializes a value to pretty JSON, appending a "warnings" array
/// entry when any non-finite sentinel appears in the output.
/// Returns the rendered bytes and whether sentinels were present.
pub fn render_report<T: Serialize>(payload: &T) -> Result<(Vec<u8>, bool)> {
    let mut value = serde_json::to_value(payload)?;
    let had_nonfinite = contains_nonfinite_sentinel(&value);
    if had_nonfinite {
        if let serde_json::Value::Object(map) = &mut value {
            let warnings = map
                .entry("warnings".to_string())
                .or_insert_with(|| serde_json::Value::Array(Vec::new()));
            if let serde_json::Value::Array(items) = warnings {
                items.push(serde_json::Value::String(
                    "non-finite values replaced by sentinels".to_string(),
                ));
            }
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&value)?;
    bytes.push(b'\n');
    Ok((bytes, had_nonfinite))
}

/// Writes a report as sanitized pretty JSON; returns whether any
/// non-finite sentinel was emitted.
pub fn write_json_atomic<T: Serialize>(path: &Path, payload: &T) -> Result<bool> {
    let (bytes, had_nonfinite) = render_report(payload)?;
    write_atomic(path, &bytes)?;
    Ok(had_nonfinite)
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        // Round-trippable shortest representation.
        let mut buf = ryu_like(v);
        if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") {
            buf.push_str(".0");
        }
        buf
    }
}

fn ryu_like(v: f64) -> String {
    format!("{v}")
}

/// Running mode implied by the mixing coefficient.
pub fn mixing_mode(theta: f64) -> &'static str {
    if theta == 0.0 {
        "PromptFL-equivalent"
    } else if theta == 1.0 {
        "isolated-local-equivalent"
    } else {
        "portfolio"
    }
}

/// Top-level JSON report of a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub theta: f64,
    /// "PromptFL-equivalent" at theta 0, "isolated-local-equivalent" at
    /// theta 1, "portfolio" otherwise.
    pub mode: String,
    pub eta: f64,
    pub eta_searched: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub error: ErrorReport,
    pub warnings: Vec<String>,
}

/// Assembles the run report from training output and evaluation.
pub fn build_run_report(
    cfg: &RunConfig,
    seed: u64,
    theta: f64,
    record: &TrainRecord,
    error: ErrorReport,
) -> RunReport {
    let final_loss = record
        .rounds
        .last()
        .map(|r| r.mean_loss)
        .unwrap_or(record.initial_loss);
    RunReport {
        config_hash: cfg.canonical_hash(),
        seed,
        theta,
        mode: mixing_mode(theta).to_string(),
        eta: record.eta,
        eta_searched: record.eta_searched,
        initial_loss: record.initial_loss,
        final_loss,
        error,
        warnings: Vec::new(),
    }
}

fn trajectory_rows(
    out: &mut Vec<u8>,
    traj: &CoeffTrajectory,
    s_total: usize,
    l_total: usize,
) -> Result<()> {
    for snap in &traj.snapshots {
        let mut row = Vec::with_capacity(3 + s_total + l_total);
        row.push(snap.round.to_string());
        row.push(traj.prompt_id.clone());
        row.push(fmt_f64(snap.beta));
        for j in 0..s_total {
            row.push(fmt_f64(snap.gamma[j]));
        }
        for j in 0..l_total {
            row.push(fmt_f64(snap.phi[j]));
        }
        row.push(fmt_f64(snap.residual_norm));
        out.extend_from_slice(row.join(",").as_bytes());
        out.push(b'\n');
    }
    Ok(())
}

/// Writes every tracked trajectory as one CSV: round, prompt id, the
/// coefficient columns, and the reconstruction residual.
pub fn write_trajectories_csv(
    path: &Path,
    run: &RunOutput,
    s_total: usize,
    l_total: usize,
) -> Result<()> {
    let mut header: Vec<String> = vec!["round".into(), "prompt".into(), "beta".into()];
    for j in 1..=s_total {
        header.push(format!("gamma_{j}"));
    }
    for j in 1..=l_total {
        header.push(format!("phi_{j}"));
    }
    header.push("residual".into());
    let mut bytes = Vec::new();
    bytes.extend_from_slice(header.join(",").as_bytes());
    bytes.push(b'\n');
    trajectory_rows(&mut bytes, &run.trajectories.server, s_total, l_total)?;
    for traj in &run.trajectories.client_global {
        trajectory_rows(&mut bytes, traj, s_total, l_total)?;
    }
    for traj in &run.trajectories.client_local {
        trajectory_rows(&mut bytes, traj, s_total, l_total)?;
    }
    write_atomic(path, &bytes)
}

/// Writes the per-round training log: one row per round and client with
/// the post-update loss and the first-step gradient norms.
pub fn write_train_log_csv(path: &Path, record: &TrainRecord) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"round,client,loss,grad_norm_global,grad_norm_local,mean_loss\n");
    for round in &record.rounds {
        for k in 0..round.client_loss.len() {
            let row = [
                round.round.to_string(),
                k.to_string(),
                fmt_f64(round.client_loss[k]),
                fmt_f64(round.grad_norm_global[k]),
                fmt_f64(round.grad_norm_local[k]),
                fmt_f64(round.mean_loss),
            ];
            bytes.extend_from_slice(row.join(",").as_bytes());
            bytes.push(b'\n');
        }
    }
    write_atomic(path, &bytes)
}

/// Writes a sweep summary: one row per grid point with the measured and
/// closed-form columns side by side.
pub fn write_sweep_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(
        b"axis,x,empirical,stderr,analytic,a,b,rho,theta_star,chi_mean,order_prediction,optimal_theta,optimal_lo,optimal_hi\n",
    );
    for p in &sweep.points {
        let (ob, ol, oh) = match p.optimal_theta {
            Some(band) => (fmt_f64(band.best), fmt_f64(band.lo), fmt_f64(band.hi)),
            None => (String::new(), String::new(), String::new()),
        };
        let row = [
            sweep.axis.clone(),
            fmt_f64(p.x),
            fmt_f64(p.empirical),
            fmt_f64(p.stderr),
            fmt_f64(p.analytic),
            fmt_f64(p.a),
            fmt_f64(p.b),
            fmt_f64(p.rho),
            fmt_f64(p.theta_star),
            fmt_f64(p.chi_mean),
            fmt_f64(p.order_prediction),
            ob,
            ol,
            oh,
        ];
        bytes.extend_from_slice(row.join(",").as_bytes());
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}
