//! Empirical test-error measurement and the three experiment sweeps:
//! over the mixing coefficient, over assignment heterogeneity, and over
//! the client count. Every sweep point carries both the measured error
//! and the closed-form quantities so the two routes can be compared.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{chi, snr, SnrTarget};
use crate::config::{build_world, execute_at, RunConfig, World};
use crate::data::{AssignmentPolicy, ClientDataset};
use crate::encoder::{decide, ClassPrompts, Prompt};
use crate::error::Error;
use crate::theory::{
    analytic_error, estimate_ab_rho, gaussian_test_params, mixed_class_difference, theta_star,
    theta_star_order,
};
use crate::bank::EncoderWeights;
use crate::train::RunOutput;
use crate::Result;

/// One client's share of an error measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientError {
    pub client: usize,
    pub error: f64,
    pub n: usize,
    pub wrong: usize,
}

/// Per-client and pooled empirical error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub per_client: Vec<ClientError>,
    /// Sample-weighted mean of the per-client errors.
    pub pooled: f64,
    /// Binomial standard error of the pooled estimate.
    pub pooled_stderr: f64,
    pub n_total: usize,
    pub wrong_total: usize,
}

/// Fraction of test samples each client's mixed prompt pair misclassifies.
///
/// A sample is wrong when the decision (ties to +1) disagrees with its
/// label; the pooled rate weights clients by sample count.
pub fn empirical_error(
    w: &EncoderWeights,
    p_g: &Prompt,
    p_locals: &[Prompt],
    theta: f64,
    class: &ClassPrompts,
    test: &[ClientDataset],
) -> Result<ErrorReport> {
    if p_locals.len() != test.len() {
        return Err(Error::DimensionMismatch {
            context: "one local prompt per test set",
            expected: test.len(),
            got: p_locals.len(),
        });
    }
    let mut per_client = Vec::with_capacity(test.len());
    let mut n_total = 0usize;
    let mut wrong_total = 0usize;
    for (k, (p_l, data)) in p_locals.iter().zip(test.iter()).enumerate() {
        if data.n() == 0 {
            return Err(Error::EmptyTestSet);
        }
        let f = mixed_class_difference(w, p_g, p_l, theta, class)?;
        let mut wrong = 0usize;
        for i in 0..data.n() {
            let score: f64 = data
                .g
                .row(i)
                .iter()
                .zip(f.iter())
                .map(|(gi, fi)| gi * fi)
                .sum();
            if decide(score) != data.y[i] {
                wrong += 1;
            }
        }
        n_total += data.n();
        wrong_total += wrong;
        per_client.push(ClientError {
            client: k,
            error: wrong as f64 / data.n() as f64,
            n: data.n(),
            wrong,
        });
    }
    let pooled = wrong_total as f64 / n_total as f64;
    let pooled_stderr = (pooled * (1.0 - pooled) / n_total as f64).sqrt();
    Ok(ErrorReport {
        per_client,
        pooled,
        pooled_stderr,
        n_total,
        wrong_total,
    })
}

/// The best grid point of an error curve together with the contiguous
/// stretch of neighbors statistically tied with it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThetaBand {
    pub best: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Argmin of `errs` over `grid`, extended to adjacent points whose
/// error lies within the joint standard error of the minimum.
pub fn tie_band(grid: &[f64], errs: &[f64], stderrs: &[f64]) -> ThetaBand {
    assert!(!grid.is_empty() && grid.len() == errs.len() && errs.len() == stderrs.len());
    let mut best = 0;
    for i in 1..errs.len() {
        if errs[i] < errs[best] {
            best = i;
        }
    }
    let tied = |i: usize| errs[i] <= errs[best] + stderrs[i] + stderrs[best];
    let mut lo = best;
    while lo > 0 && tied(lo - 1) {
        lo -= 1;
    }
    let mut hi = best;
    while hi + 1 < errs.len() && tied(hi + 1) {
        hi += 1;
    }
    ThetaBand {
        best: grid[best],
        lo: grid[lo],
        hi: grid[hi],
    }
}

/// Whether a sequence of measured optima is non-increasing, allowing a
/// step up when the later optimum's tie band reaches down to the
/// earlier point estimate.
pub fn non_increasing_with_ties(bands: &[ThetaBand]) -> bool {
    bands
        .windows(2)
        .all(|pair| pair[1].best <= pair[0].best || pair[1].lo <= pair[0].best)
}

/// One grid point of a sweep: measured error, closed-form error, and
/// the portfolio quantities estimated from the trained prompts.
/// Unavailable estimates are NaN (serialized with a sentinel downstream).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Grid coordinate: theta, alpha, or client count.
    pub x: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub analytic: f64,
    /// Client-and-seed means of the portfolio parameters.
    #[serde(with = "crate::sentinel")]
    pub a: f64,
    #[serde(with = "crate::sentinel")]
    pub b: f64,
    #[serde(with = "crate::sentinel")]
    pub rho: f64,
    /// Closed-form optimum at the mean parameters.
    #[serde(with = "crate::sentinel")]
    pub theta_star: f64,
    /// Mean share count of the drawn assignments.
    pub chi_mean: f64,
    /// Order-level optimum at the mean share count (NaN below two clients).
    #[serde(with = "crate::sentinel")]
    pub order_prediction: f64,
    /// Inner-sweep optimum, present on heterogeneity and client sweeps.
    pub optimal_theta: Option<ThetaBand>,
}

/// A full sweep: the grid, one point per grid value, and the argmin
/// summaries for mixing-coefficient sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub argmin_empirical: Option<ThetaBand>,
    pub argmin_analytic: Option<f64>,
}

struct PointAccum {
    wrong: usize,
    n: usize,
    analytic_weighted: f64,
    analytic_weight: f64,
    a_sum: f64,
    b_sum: f64,
    rho_sum: f64,
    est_count: usize,
    chi_sum: f64,
    chi_count: usize,
}

impl PointAccum {
    fn new() -> Self {
        PointAccum {
            wrong: 0,
            n: 0,
            analytic_weighted: 0.0,
            analytic_weight: 0.0,
            a_sum: 0.0,
            b_sum: 0.0,
            rho_sum: 0.0,
            est_count: 0,
            chi_sum: 0.0,
            chi_count: 0,
        }
    }

    fn absorb(&mut self, cfg: &RunConfig, world: &World, out: &RunOutput, theta: f64) -> Result<()> {
        let report = empirical_error(
            &world.w,
            &out.state.server_global,
            &out.state.client_local,
            theta,
            &world.class,
            &world.test,
        )?;
        self.wrong += report.wrong_total;
        self.n += report.n_total;
        for k in 0..cfg.k {
            let s_k = world.assignment.s[k];
            let n_k = world.test[k].n() as f64;
            let model = gaussian_test_params(
                &world.w,
                &out.state.server_global,
                &out.state.client_local[k],
                theta,
                &world.class,
                &world.bank,
                s_k,
                cfg.sigma_p,
            )?;
            self.analytic_weighted += n_k * analytic_error(&model)?;
            self.analytic_weight += n_k;
            if let Ok(est) = estimate_ab_rho(
                &world.w,
                &out.state.server_global,
                &out.state.client_local[k],
                &world.class,
                &world.bank,
                s_k,
            ) {
                if !est.degenerate {
                    self.a_sum += est.a;
                    self.b_sum += est.b;
                    self.rho_sum += est.rho;
                    self.est_count += 1;
                }
            }
            self.chi_sum += chi(&world.assignment.s, k)?;
            self.chi_count += 1;
        }
        Ok(())
    }

    fn finish(self, cfg: &RunConfig, world: &World, x: f64) -> SweepPoint {
        let pooled = self.wrong as f64 / self.n as f64;
        let stderr = (pooled * (1.0 - pooled) / self.n as f64).sqrt();
        let (a, b, rho, ts) = if self.est_count > 0 {
            let a = self.a_sum / self.est_count as f64;
            let b = self.b_sum / self.est_count as f64;
            let rho = self.rho_sum / self.est_count as f64;
            let ts = theta_star(a, b, rho).map(|t| t.value).unwrap_or(f64::NAN);
            (a, b, rho, ts)
        } else {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        let chi_mean = self.chi_sum / self.chi_count.max(1) as f64;
        let order_prediction = if cfg.k >= 2 && cfg.sigma_p > 0.0 {
            let snr_g = snr(&world.bank, cfg.sigma_p, SnrTarget::Global).unwrap_or(f64::NAN);
            let snr_k = snr(&world.bank, cfg.sigma_p, SnrTarget::Local(1)).unwrap_or(f64::NAN);
            theta_star_order(cfg.k, chi_mean, snr_g, snr_k).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        SweepPoint {
            x,
            empirical: pooled,
            stderr,
            analytic: self.analytic_weighted / self.analytic_weight,
            a,
            b,
            rho,
            theta_star: ts,
            chi_mean,
            order_prediction,
            optimal_theta: None,
        }
    }
}

fn check_grid(grid: &[f64], name: &str, lo: f64, hi: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config {
            field: name.into(),
            message: "must not be empty".into(),
        });
    }
    for pair in grid.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(Error::Config {
                field: name.into(),
                message: format!("must be strictly increasing, got {} after {}", pair[1], pair[0]),
            });
        }
    }
    for &v in grid {
        if !(lo..=hi).contains(&v) {
            return Err(Error::Config {
                field: name.into(),
                message: format!("values must lie in [{lo}, {hi}], got {v}"),
            });
        }
    }
    Ok(())
}

/// Trains one run per grid theta per seed (worlds shared across thetas
/// through the seed scheme) and assembles the error curve.
pub fn sweep_theta(cfg: &RunConfig, grid: &[f64]) -> Result<SweepResult> {
    cfg.validate()?;
    check_grid(grid, "theta_grid", 0.0, 1.0)?;
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&theta| -> Result<SweepPoint> {
            let mut acc = PointAccum::new();
            let mut last_world = None;
            for &seed in &cfg.seeds {
                let (world, out) = execute_at(cfg, theta, seed)?;
                acc.absorb(cfg, &world, &out, theta)?;
                last_world = Some(world);
            }
            Ok(acc.finish(cfg, &last_world.expect("at least one seed"), theta))
        })
        .collect::<Result<Vec<_>>>()?;
    let errs: Vec<f64> = points.iter().map(|p| p.empirical).collect();
    let stderrs: Vec<f64> = points.iter().map(|p| p.stderr).collect();
    let band = tie_band(grid, &errs, &stderrs);
    let analytic_argmin = {
        let mut best = 0;
        for i in 1..points.len() {
            if points[i].analytic < points[best].analytic {
                best = i;
            }
        }
        grid[best]
    };
    Ok(SweepResult {
        axis: "theta".into(),
        grid: grid.to_vec(),
        points,
        seeds: cfg.seeds.clone(),
        config_hash: cfg.canonical_hash(),
        argmin_empirical: Some(band),
        argmin_analytic: Some(analytic_argmin),
    })
}

fn inner_optimal_point(cfg: &RunConfig, x: f64) -> Result<SweepPoint> {
    let inner = sweep_theta(cfg, &cfg.theta_grid)?;
    let band = inner.argmin_empirical.expect("theta sweep always reports a band");
    let at_best = inner
        .points
        .iter()
        .find(|p| p.x == band.best)
        .expect("band.best is a grid point")
        .clone();
    Ok(SweepPoint {
        x,
        optimal_theta: Some(band),
        ..at_best
    })
}

/// For each assignment concentration alpha: runs the full inner theta
/// sweep and reports the measured optimal theta and the errors there.
pub fn sweep_heterogeneity(cfg: &RunConfig, alphas: &[f64]) -> Result<SweepResult> {
    cfg.validate()?;
    check_grid(alphas, "alpha_grid", f64::MIN_POSITIVE, f64::INFINITY)?;
    let points: Vec<SweepPoint> = alphas
        .par_iter()
        .map(|&alpha| {
            let mut sub = cfg.clone();
            sub.policy = AssignmentPolicy::Dirichlet { alpha };
            inner_optimal_point(&sub, alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: "heterogeneity".into(),
        grid: alphas.to_vec(),
        points,
        seeds: cfg.seeds.clone(),
        config_hash: cfg.canonical_hash(),
        argmin_empirical: None,
        argmin_analytic: None,
    })
}

/// How the total sample budget responds to the client-count grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSweepMode {
    /// Every client keeps the configured n_k.
    FixedPerClient,
    /// The configured total k * n_k is redistributed evenly.
    FixedTotal,
}

/// For each client count: runs the full inner theta sweep and reports
/// the measured optimal theta there.
pub fn sweep_clients(
    cfg: &RunConfig,
    ks: &[usize],
    mode: ClientSweepMode,
) -> Result<SweepResult> {
    cfg.validate()?;
    if ks.is_empty() {
        return Err(Error::Config {
            field: "k_grid".into(),
            message: "must not be empty".into(),
        });
    }
    for pair in ks.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config {
                field: "k_grid".into(),
                message: format!("must be strictly increasing, got {} after {}", pair[1], pair[0]),
            });
        }
    }
    for &k in ks {
        if k < 2 {
            return Err(Error::Config {
                field: "k_grid".into(),
                message: format!("client counts must be at least 2, got {k}"),
            });
        }
    }
    let total = cfg.k * cfg.n_k;
    let points: Vec<SweepPoint> = ks
        .par_iter()
        .map(|&k| {
            let mut sub = cfg.clone();
            sub.k = k;
            if mode == ClientSweepMode::FixedTotal {
                sub.n_k = (total / k).max(1);
            }
            inner_optimal_point(&sub, k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let axis = match mode {
        ClientSweepMode::FixedPerClient => "clients_fixed_n_k",
        ClientSweepMode::FixedTotal => "clients_fixed_total",
    };
    Ok(SweepResult {
        axis: axis.into(),
        grid: ks.iter().map(|&k| k as f64).collect(),
        points,
        seeds: cfg.seeds.clone(),
        config_hash: cfg.canonical_hash(),
        argmin_empirical: None,
        argmin_analytic: None,
    })
}

/// Fraction of sweep points whose empirical and analytic errors agree
/// within three pooled standard errors.
pub fn model_match_fraction(result: &SweepResult) -> f64 {
    let hits = result
        .points
        .iter()
        .filter(|p| (p.empirical - p.analytic).abs() <= 3.0 * p.stderr.max(1e-12))
        .count();
    hits as f64 / result.points.len().max(1) as f64
}
