//! Signal-noise decomposition of prompt displacements into feature
//! coefficients, plus trajectory bookkeeping and dynamics diagnostics.
//!
//! A prompt's displacement from its initialization decomposes against the
//! orthogonal feature bank. The coefficient convention is c_f = <dp, f>,
//! so the component along f reconstructs as c_f * f / |f|^2.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::bank::FeatureBank;
use crate::encoder::Prompt;
use crate::error::Error;
use crate::Result;

/// Feature coefficients of one prompt at one round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffSnapshot {
    /// Round index the snapshot was taken at (post-aggregation).
    pub round: usize,
    /// Coefficient on the global feature.
    pub beta: f64,
    /// Coefficients on the S local features.
    pub gamma: Vec<f64>,
    /// Coefficients on the L noise features.
    pub phi: Vec<f64>,
    /// Label-split noise accumulators (y = +1 contributions), when tracked.
    pub psi_acc: Option<Vec<f64>>,
    /// Label-split noise accumulators (y = -1 contributions), when tracked.
    pub varphi_acc: Option<Vec<f64>>,
    /// Norm of the part of dp outside the feature span.
    pub residual_norm: f64,
}

/// Ordered snapshots for one tracked prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffTrajectory {
    /// Which prompt this tracks, e.g. "server", "global/3", "local/0".
    pub prompt_id: String,
    pub snapshots: Vec<CoeffSnapshot>,
}

impl CoeffTrajectory {
    pub fn new(prompt_id: impl Into<String>) -> Self {
        CoeffTrajectory {
            prompt_id: prompt_id.into(),
            snapshots: Vec::new(),
        }
    }

    /// Appends a snapshot, keeping rounds strictly increasing.
    pub fn push(&mut self, snap: CoeffSnapshot) {
        if let Some(last) = self.snapshots.last() {
            assert!(
                snap.round > last.round,
                "snapshot rounds must increase: {} then {}",
                last.round,
                snap.round
            );
        }
        self.snapshots.push(snap);
    }
}

/// Projects dp = p - p0 onto the feature bank.
pub fn decompose(p: &Prompt, p0: &Prompt, bank: &FeatureBank) -> Result<CoeffSnapshot> {
    if p.len() != bank.m_p || p0.len() != bank.m_p {
        return Err(Error::DimensionMismatch {
            context: "decompose prompt",
            expected: bank.m_p,
            got: if p.len() != bank.m_p { p.len() } else { p0.len() },
        });
    }
    let dp = p - p0;
    let mut residual = dp.clone();
    let mut coeff = |f: &Array1<f64>| {
        let c = dp.dot(f);
        let scale = c / f.dot(f);
        residual.zip_mut_with(f, |r, &fi| *r -= scale * fi);
        c
    };
    let beta = coeff(&bank.mu_g);
    let gamma: Vec<f64> = bank.nu.iter().map(&mut coeff).collect();
    let phi: Vec<f64> = bank.xi.iter().map(&mut coeff).collect();
    let residual_norm = residual.dot(&residual).sqrt();
    Ok(CoeffSnapshot {
        round: 0,
        beta,
        gamma,
        phi,
        psi_acc: None,
        varphi_acc: None,
        residual_norm,
    })
}

/// Early growth rate of a coefficient series: value at the probe round
/// divided by the probe round. The probe is clamped to the last
/// available round.
pub fn growth_rate(rounds: &[usize], values: &[f64], probe: usize) -> Result<f64> {
    if rounds.len() < 2 || values.len() != rounds.len() {
        return Err(Error::InsufficientTrajectory {
            got: rounds.len(),
            needed: 2,
        });
    }
    let probe = probe.max(1);
    let idx = rounds
        .iter()
        .rposition(|&r| r <= probe && r >= 1)
        .ok_or(Error::InsufficientTrajectory {
            got: rounds.len(),
            needed: 2,
        })?;
    Ok(values[idx] / rounds[idx] as f64)
}

/// Extracts (rounds, beta series) from a trajectory.
pub fn beta_series(traj: &CoeffTrajectory) -> (Vec<usize>, Vec<f64>) {
    let rounds = traj.snapshots.iter().map(|s| s.round).collect();
    let betas = traj.snapshots.iter().map(|s| s.beta).collect();
    (rounds, betas)
}

/// Extracts (rounds, gamma_j series) for local feature j (0-based).
pub fn gamma_series(traj: &CoeffTrajectory, j: usize) -> (Vec<usize>, Vec<f64>) {
    let rounds = traj.snapshots.iter().map(|s| s.round).collect();
    let gammas = traj.snapshots.iter().map(|s| s.gamma[j]).collect();
    (rounds, gammas)
}

/// Mean absolute noise coefficient at the last snapshot.
pub fn mean_abs_phi(traj: &CoeffTrajectory) -> f64 {
    match traj.snapshots.last() {
        Some(s) if !s.phi.is_empty() => {
            s.phi.iter().map(|v| v.abs()).sum::<f64>() / s.phi.len() as f64
        }
        _ => 0.0,
    }
}

/// Summary checks over a finished run's trajectories and loss series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsReport {
    /// Task-relevant coefficients of the server prompt stay above -tol.
    pub signs_ok: bool,
    /// Server beta and the assigned gammas are non-decreasing over the
    /// first few rounds (up to `early_rounds`).
    pub nondecreasing_early: bool,
    /// How many leading rounds the monotonicity check covered.
    pub early_rounds: usize,
    /// First round with mean train loss below the threshold, if any.
    pub loss_below_round: Option<usize>,
    /// The loss threshold used.
    pub loss_threshold: f64,
}

/// Checks coefficient signs, early monotonicity, and loss crossing.
///
/// `assigned` maps each client to its local feature (1-based), so only
/// gammas that actually receive signal are required to grow.
pub fn dynamics_diagnostics(
    server: &CoeffTrajectory,
    assigned: &[usize],
    losses: &[f64],
    loss_threshold: f64,
    tol: f64,
) -> Result<DynamicsReport> {
    if server.snapshots.len() < 2 {
        return Err(Error::InsufficientTrajectory {
            got: server.snapshots.len(),
            needed: 2,
        });
    }
    let mut signs_ok = true;
    for s in &server.snapshots {
        if s.beta < -tol {
            signs_ok = false;
        }
        for &sk in assigned {
            if s.gamma[sk - 1] < -tol {
                signs_ok = false;
            }
        }
    }
    let early_rounds = server.snapshots.len().min(5);
    let mut nondecreasing_early = true;
    for w in server.snapshots[..early_rounds].windows(2) {
        if w[1].beta < w[0].beta - tol {
            nondecreasing_early = false;
        }
        for &sk in assigned {
            if w[1].gamma[sk - 1] < w[0].gamma[sk - 1] - tol {
                nondecreasing_early = false;
            }
        }
    }
    let loss_below_round = losses.iter().position(|&l| l < loss_threshold);
    Ok(DynamicsReport {
        signs_ok,
        nondecreasing_early,
        early_rounds,
        loss_below_round,
        loss_threshold,
    })
}
