//! Client assignment policies and synthetic labeled datasets.
//!
//! Each client k is assigned one local task-relevant feature index s_k.
//! A sample with label y has latent vector g with g[0] = y (global
//! coordinate), g[s_k] = y (the client's local coordinate), zeros on all
//! other task-relevant coordinates, and i.i.d. N(0, sigma_p^2) noise on
//! the L task-irrelevant coordinates.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seed::substream;
use crate::Result;

/// How clients get their local feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AssignmentPolicy {
    /// Independent uniform draws over the S features.
    Uniform,
    /// One categorical distribution drawn from Dirichlet(alpha * 1_S),
    /// shared by all clients; each s_k is sampled from it.
    Dirichlet { alpha: f64 },
    /// s_k cycles deterministically through 1..S.
    RoundRobin,
}

/// Per-client local feature indices (1-based), with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientAssignment {
    /// s_k for each client, each in 1..=S.
    pub s: Vec<usize>,
    /// Policy that produced the assignment.
    pub policy: AssignmentPolicy,
    /// Seed the assignment was drawn under.
    pub seed: u64,
}

/// Labeled latent samples for one client.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    /// n_k x m matrix of latent vectors.
    pub g: Array2<f64>,
    /// Labels in {+1, -1}, length n_k.
    pub y: Array1<f64>,
    /// The client's local feature index (1-based).
    pub s: usize,
}

impl ClientDataset {
    /// Sample count.
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Assigns a local feature to each of K clients.
pub fn assign_clients(
    k_total: usize,
    s_total: usize,
    policy: AssignmentPolicy,
    seed: u64,
) -> Result<ClientAssignment> {
    assert!(k_total >= 1 && s_total >= 1, "need K >= 1 and S >= 1");
    let mut rng = substream(seed, "assign");
    let s = match policy {
        AssignmentPolicy::RoundRobin => (0..k_total).map(|k| (k % s_total) + 1).collect(),
        AssignmentPolicy::Uniform => (0..k_total)
            .map(|_| rng.gen_range(0..s_total) + 1)
            .collect(),
        AssignmentPolicy::Dirichlet { alpha } => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::InvalidAlpha(alpha));
            }
            let probs = dirichlet_draw(&mut rng, alpha, s_total);
            (0..k_total)
                .map(|_| sample_categorical(&mut rng, &probs) + 1)
                .collect()
        }
    };
    Ok(ClientAssignment { s, policy, seed })
}

/// One draw from Dirichlet(alpha * 1_S) via normalized Gamma variates.
fn dirichlet_draw(rng: &mut ChaCha8Rng, alpha: f64, s_total: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draws: Vec<f64> = (0..s_total).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // At very small alpha every variate can underflow to zero;
        // redraw until the simplex point is well defined.
        if total > 0.0 {
            return draws.iter().map(|d| d / total).collect();
        }
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generates one client's dataset from an already-positioned stream.
///
/// Labels interleave deterministically (+1, -1, +1, ...), so they are
/// exactly balanced for even n_k and within one sample otherwise.
pub fn gen_client_data(
    n_k: usize,
    s: usize,
    s_total: usize,
    l_total: usize,
    sigma_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ClientDataset> {
    if !(sigma_p >= 0.0) || !sigma_p.is_finite() {
        return Err(Error::InvalidSigma(sigma_p, ">= 0"));
    }
    assert!(
        s >= 1 && s <= s_total,
        "local feature index {s} outside 1..={s_total}"
    );
    let m = 1 + s_total + l_total;
    let mut g = Array2::zeros((n_k, m));
    let mut y = Array1::zeros(n_k);
    for i in 0..n_k {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        y[i] = label;
        g[(i, 0)] = label;
        g[(i, s)] = label;
        for l in 0..l_total {
            g[(i, 1 + s_total + l)] = if sigma_p == 0.0 {
                0.0
            } else {
                sigma_p * rng.sample::<f64, _>(StandardNormal)
            };
        }
    }
    Ok(ClientDataset { g, y, s })
}

/// Training datasets for all clients, one seed substream per client.
pub fn gen_train_data(
    assignment: &ClientAssignment,
    n_k: usize,
    s_total: usize,
    l_total: usize,
    sigma_p: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    gen_all(assignment, n_k, s_total, l_total, sigma_p, seed, "train")
}

/// Fresh evaluation datasets from the same per-client distributions,
/// drawn from seed substreams disjoint from training.
pub fn gen_test_data(
    assignment: &ClientAssignment,
    n_test: usize,
    s_total: usize,
    l_total: usize,
    sigma_p: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    gen_all(assignment, n_test, s_total, l_total, sigma_p, seed, "test")
}

fn gen_all(
    assignment: &ClientAssignment,
    n: usize,
    s_total: usize,
    l_total: usize,
    sigma_p: f64,
    seed: u64,
    kind: &str,
) -> Result<Vec<ClientDataset>> {
    assignment
        .s
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let mut rng = substream(seed, &format!("data/{kind}/{k}"));
            gen_client_data(n, s, s_total, l_total, sigma_p, &mut rng)
        })
        .collect()
}

/// Writes datasets as CSV rows: client, y, g_0..g_{m-1}.
pub fn datasets_to_csv<W: std::io::Write>(datasets: &[ClientDataset], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = datasets.first().map_or(0, |d| d.g.ncols());
    let mut header = vec!["client".to_string(), "y".to_string()];
    header.extend((0..m).map(|j| format!("g_{j}")));
    w.write_record(&header)?;
    for (k, d) in datasets.iter().enumerate() {
        for i in 0..d.n() {
            let mut rec = vec![k.to_string(), format!("{}", d.y[i])];
            rec.extend(d.g.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};

    #[test]
    fn round_robin_cycles() {
        let a = assign_clients(4, 2, AssignmentPolicy::RoundRobin, 0).unwrap();
        assert_eq!(a.s, vec![1, 2, 1, 2]);
        for k in 0..4 {
            assert_eq!(crate::bank::chi(&a.s, k).unwrap(), 2.0);
        }
    }

    #[test]
    fn single_feature_forces_sharing() {
        for policy in [
            AssignmentPolicy::Uniform,
            AssignmentPolicy::RoundRobin,
            AssignmentPolicy::Dirichlet { alpha: 0.5 },
        ] {
            let a = assign_clients(6, 1, policy, 9).unwrap();
            assert!(a.s.iter().all(|&s| s == 1));
            assert_eq!(crate::bank::chi(&a.s, 0).unwrap(), 6.0);
        }
    }

    #[test]
    fn small_alpha_concentrates_the_shared_categorical() {
        // Dirichlet(0.01 * 1_10) puts nearly all mass on one feature, so
        // the largest client share should average at least one half.
        let mut total = 0.0;
        let reps = 200;
        for seed in 0..reps {
            let a = assign_clients(10, 10, AssignmentPolicy::Dirichlet { alpha: 0.01 }, seed)
                .unwrap();
            let mut counts = [0usize; 11];
            for &s in &a.s {
                counts[s] += 1;
            }
            total += counts.iter().max().copied().unwrap() as f64 / 10.0;
        }
        let mean_max_share = total / reps as f64;
        assert!(
            mean_max_share >= 0.5,
            "mean max share {mean_max_share} below 0.5"
        );
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(matches!(
            assign_clients(2, 2, AssignmentPolicy::Dirichlet { alpha: 0.0 }, 1),
            Err(Error::InvalidAlpha(_))
        ));
    }

    #[test]
    fn labels_interleave_balanced() {
        let mut rng = substream(3, "data/train/0");
        let d = gen_client_data(2, 1, 2, 3, 0.5, &mut rng).unwrap();
        assert_eq!(d.y[0], 1.0);
        assert_eq!(d.y[1], -1.0);
        assert_eq!(d.g[(0, 0)], 1.0);
        assert_eq!(d.g[(1, 0)], -1.0);

        let mut rng = substream(3, "data/train/1");
        let d = gen_client_data(9, 1, 2, 3, 0.5, &mut rng).unwrap();
        let sum: f64 = d.y.iter().sum();
        assert_eq!(sum, 1.0);
    }

    #[test]
    fn task_relevant_coordinates_are_exact() {
        let mut rng = substream(4, "data/train/0");
        let d = gen_client_data(8, 2, 3, 4, 0.7, &mut rng).unwrap();
        for i in 0..8 {
            let y = d.y[i];
            assert_eq!(d.g[(i, 0)], y);
            assert_eq!(d.g[(i, 2)], y);
            assert_eq!(d.g[(i, 1)], 0.0);
            assert_eq!(d.g[(i, 3)], 0.0);
        }
    }

    #[test]
    fn zero_sigma_means_zero_noise() {
        let mut rng = substream(4, "data/train/0");
        let d = gen_client_data(6, 1, 1, 5, 0.0, &mut rng).unwrap();
        for i in 0..6 {
            for l in 0..5 {
                assert_eq!(d.g[(i, 2 + l)], 0.0);
            }
        }
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let mut rng = substream(4, "data/train/0");
        assert!(gen_client_data(2, 1, 1, 1, -0.1, &mut rng).is_err());
    }

    #[test]
    fn noise_variance_matches_request() {
        let mut rng = substream(8, "data/train/0");
        let sigma = 0.7;
        let d = gen_client_data(10_000, 1, 1, 4, sigma, &mut rng).unwrap();
        for l in 0..4 {
            let col = d.g.column(2 + l);
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            let rel = (var - sigma * sigma).abs() / (sigma * sigma);
            assert!(rel < 0.05, "column {l}: var {var}, rel err {rel}");
            // Mean magnitude bound for a centered Gaussian column.
            assert!(mean.abs() < 5.0 * sigma / (col.len() as f64).sqrt());
        }
    }

    #[test]
    fn regeneration_is_bitwise() {
        let a = assign_clients(3, 2, AssignmentPolicy::Uniform, 21).unwrap();
        let d1 = gen_train_data(&a, 16, 2, 3, 0.4, 21).unwrap();
        let d2 = gen_train_data(&a, 16, 2, 3, 0.4, 21).unwrap();
        for (x, y) in d1.iter().zip(d2.iter()) {
            for (u, v) in x.g.iter().zip(y.g.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn test_stream_differs_from_train_stream() {
        let a = assign_clients(2, 2, AssignmentPolicy::RoundRobin, 5).unwrap();
        let train = gen_train_data(&a, 8, 2, 4, 0.6, 5).unwrap();
        let test = gen_test_data(&a, 8, 2, 4, 0.6, 5).unwrap();
        let same = train[0]
            .g
            .iter()
            .zip(test[0].g.iter())
            .all(|(u, v)| u == v);
        assert!(!same);
    }

    #[test]
    fn empty_test_sets_are_representable() {
        let a = assign_clients(2, 2, AssignmentPolicy::RoundRobin, 5).unwrap();
        let test = gen_test_data(&a, 0, 2, 4, 0.6, 5).unwrap();
        assert_eq!(test[0].n(), 0);
    }

    #[test]
    fn train_and_test_noise_variance_agree() {
        // Two-sample F-test on the first noise coordinate at level 0.01.
        let a = assign_clients(1, 1, AssignmentPolicy::RoundRobin, 13).unwrap();
        let n = 4096;
        let train = gen_train_data(&a, n, 1, 2, 0.5, 13).unwrap();
        let test = gen_test_data(&a, n, 1, 2, 0.5, 13).unwrap();
        let var = |d: &ClientDataset| {
            let col = d.g.column(2);
            let mean = col.sum() / n as f64;
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        };
        let f = var(&train[0]) / var(&test[0]);
        let dist = FisherSnedecor::new((n - 1) as f64, (n - 1) as f64).unwrap();
        let p = dist.cdf(f);
        assert!(
            (0.005..0.995).contains(&p),
            "F = {f}, cdf = {p}: variances differ at level 0.01"
        );
    }

    #[test]
    fn csv_export_has_one_row_per_sample() {
        let a = assign_clients(2, 2, AssignmentPolicy::RoundRobin, 5).unwrap();
        let data = gen_train_data(&a, 3, 2, 2, 0.5, 5).unwrap();
        let mut buf = Vec::new();
        datasets_to_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[0].starts_with("client,y,g_0"));
    }
}
