//! Orthogonal feature bank and the frozen encoder weight matrix.
//!
//! The bank holds 1 + S + L directions in prompt space: one globally
//! shared task-relevant feature, S client-local task-relevant features,
//! and L task-irrelevant noise features. They are drawn as i.i.d.
//! Gaussian vectors, orthogonalized exactly by modified Gram-Schmidt,
//! and rescaled to requested norms. The encoder weight matrix W stacks
//! them as rows, so the latent dimension is m = 1 + S + L.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::seed::substream;
use crate::Result;

/// Requested l2 norms per feature group.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    /// Norm of the global task-relevant feature.
    pub mu: f64,
    /// Norm of each local task-relevant feature.
    pub nu: f64,
    /// Norm of each task-irrelevant feature.
    pub xi: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec {
            mu: 1.0,
            nu: 1.0,
            xi: 1.0,
        }
    }
}

/// The orthogonal feature bank.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    /// Global task-relevant feature, length `m_p`.
    pub mu_g: Array1<f64>,
    /// Local task-relevant features nu_1..nu_S.
    pub nu: Vec<Array1<f64>>,
    /// Task-irrelevant features xi_1..xi_L.
    pub xi: Vec<Array1<f64>>,
    /// Requested norms.
    pub norms: NormSpec,
    /// Prompt dimension.
    pub m_p: usize,
    /// Seed the bank was built from.
    pub seed: u64,
}

impl FeatureBank {
    /// Number of local task-relevant features.
    pub fn s(&self) -> usize {
        self.nu.len()
    }

    /// Number of task-irrelevant features.
    pub fn l(&self) -> usize {
        self.xi.len()
    }

    /// Latent dimension m = 1 + S + L.
    pub fn m(&self) -> usize {
        1 + self.nu.len() + self.xi.len()
    }

    /// Feature by latent row index: 0 is mu_g, 1..=S the nu's, then xi's.
    pub fn feature(&self, row: usize) -> &Array1<f64> {
        let s = self.s();
        if row == 0 {
            &self.mu_g
        } else if row <= s {
            &self.nu[row - 1]
        } else {
            &self.xi[row - 1 - s]
        }
    }

    /// Realized norm of the feature at `row`.
    pub fn feature_norm(&self, row: usize) -> f64 {
        self.feature(row).dot(self.feature(row)).sqrt()
    }
}

/// Frozen text-encoder weights: rows are the bank features in order.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    /// (1 + S + L) x m_p matrix.
    pub w: Array2<f64>,
    /// Squared l2 norm of each row, cached for gradient math.
    pub row_sq: Array1<f64>,
}

/// Builds the bank: Gaussian draws, exact Gram-Schmidt, rescale.
///
/// Deterministic given `seed` (substream label `"bank"`).
pub fn build_feature_bank(
    s: usize,
    l: usize,
    m_p: usize,
    norms: NormSpec,
    seed: u64,
) -> Result<FeatureBank> {
    let m = 1 + s + l;
    if m_p < m {
        return Err(Error::DimensionTooSmall { m_p, needed: m });
    }
    for (group, value) in [("mu", norms.mu), ("nu", norms.nu), ("xi", norms.xi)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidNorm { group, value });
        }
    }

    let mut rng = substream(seed, "bank");
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(m);
    while rows.len() < m {
        let mut v = Array1::from_iter((0..m_p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // Modified Gram-Schmidt against everything accepted so far.
        for q in &rows {
            let c = v.dot(q) / q.dot(q);
            v.scaled_add(-c, q);
        }
        // A Gaussian draw is dependent on the previous ones with
        // probability zero; redraw on the measure-zero degeneracy so the
        // constructor stays total.
        if v.dot(&v).sqrt() > 1e-8 {
            rows.push(v);
        }
    }

    let rescale = |v: &Array1<f64>, target: f64| -> Array1<f64> {
        let n = v.dot(v).sqrt();
        v * (target / n)
    };

    let mu_g = rescale(&rows[0], norms.mu);
    let nu = rows[1..=s].iter().map(|v| rescale(v, norms.nu)).collect();
    let xi = rows[1 + s..].iter().map(|v| rescale(v, norms.xi)).collect();

    Ok(FeatureBank {
        mu_g,
        nu,
        xi,
        norms,
        m_p,
        seed,
    })
}

/// Stacks the bank features into the encoder weight matrix.
pub fn assemble_w(bank: &FeatureBank) -> EncoderWeights {
    let m = bank.m();
    let mut w = Array2::zeros((m, bank.m_p));
    for r in 0..m {
        w.row_mut(r).assign(bank.feature(r));
    }
    let row_sq = Array1::from_iter((0..m).map(|r| w.row(r).dot(&w.row(r))));
    EncoderWeights { w, row_sq }
}

/// Which feature a signal-to-noise ratio refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrTarget {
    /// The global task-relevant feature.
    Global,
    /// The local feature with 1-based index s.
    Local(usize),
}

/// Signal-to-noise ratio of a task-relevant feature: norm / (sigma_p sqrt(m)).
pub fn snr(bank: &FeatureBank, sigma_p: f64, which: SnrTarget) -> Result<f64> {
    if !(sigma_p > 0.0) {
        return Err(Error::InvalidSigma(sigma_p, "> 0"));
    }
    let norm = match which {
        SnrTarget::Global => bank.feature_norm(0),
        SnrTarget::Local(s) => {
            if s == 0 || s > bank.s() {
                return Err(Error::UnknownClient {
                    k: s,
                    k_total: bank.s(),
                });
            }
            bank.feature_norm(s)
        }
    };
    Ok(norm / (sigma_p * (bank.m() as f64).sqrt()))
}

/// Total signal similarity of client k's local feature across clients.
///
/// With exactly orthogonal local features this counts how many clients
/// share client k's assigned feature, so it runs from 1 (fully
/// heterogeneous) to K (all clients alike).
pub fn chi(assignment: &[usize], k: usize) -> Result<f64> {
    if k >= assignment.len() {
        return Err(Error::UnknownClient {
            k,
            k_total: assignment.len(),
        });
    }
    let mine = assignment[k];
    Ok(assignment.iter().filter(|&&s| s == mine).count() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(bank: &FeatureBank) -> Array2<f64> {
        let w = assemble_w(bank).w;
        w.dot(&w.t())
    }

    #[test]
    fn minimal_bank_is_orthonormal() {
        let bank = build_feature_bank(1, 1, 3, NormSpec::default(), 5).unwrap();
        let g = gram(&bank);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g[(i, j)] - want).abs() < 1e-10,
                    "gram[{i},{j}] = {}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn requested_norms_are_realized() {
        let norms = NormSpec {
            mu: 2.0,
            nu: 1.0,
            xi: 0.5,
        };
        let bank = build_feature_bank(2, 4, 7, norms, 11).unwrap();
        let g = gram(&bank);
        let want = [4.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25];
        for (i, w) in want.iter().enumerate() {
            assert!(
                (g[(i, i)] - w).abs() < 1e-12 * w.max(1.0),
                "diag[{i}] = {}",
                g[(i, i)]
            );
            let rel = (bank.feature_norm(i) - w.sqrt()).abs() / w.sqrt();
            assert!(rel < 1e-12);
        }
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    let tol = 1e-10 * (g[(i, i)].sqrt() * g[(j, j)].sqrt());
                    assert!(g[(i, j)].abs() < tol);
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = build_feature_bank(3, 5, 16, NormSpec::default(), 123).unwrap();
        let b = build_feature_bank(3, 5, 16, NormSpec::default(), 123).unwrap();
        for r in 0..a.m() {
            let (fa, fb) = (a.feature(r), b.feature(r));
            for (x, y) in fa.iter().zip(fb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn dimension_too_small_is_rejected() {
        let err = build_feature_bank(2, 2, 4, NormSpec::default(), 1).unwrap_err();
        assert!(matches!(err, Error::DimensionTooSmall { m_p: 4, needed: 5 }));
    }

    #[test]
    fn non_positive_norm_is_rejected() {
        let norms = NormSpec {
            mu: 1.0,
            nu: 0.0,
            xi: 1.0,
        };
        assert!(matches!(
            build_feature_bank(1, 1, 3, norms, 1),
            Err(Error::InvalidNorm { group: "nu", .. })
        ));
    }

    #[test]
    fn w_rows_equal_bank_features_bitwise() {
        let bank = build_feature_bank(1, 1, 8, NormSpec::default(), 3).unwrap();
        let w = assemble_w(&bank);
        assert_eq!(w.w.nrows(), 3);
        for r in 0..3 {
            for (a, b) in w.w.row(r).iter().zip(bank.feature(r).iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn w_maps_mu_to_first_basis_vector() {
        let norms = NormSpec {
            mu: 2.0,
            nu: 1.0,
            xi: 1.0,
        };
        let bank = build_feature_bank(2, 3, 9, norms, 77).unwrap();
        let w = assemble_w(&bank);
        let mapped = w.w.dot(&bank.mu_g) / bank.mu_g.dot(&bank.mu_g);
        for (i, v) in mapped.iter().enumerate() {
            let want = if i == 0 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "coord {i} = {v}");
        }
    }

    #[test]
    fn w_maps_feature_sums_to_norm_weighted_coordinates() {
        let norms = NormSpec {
            mu: 2.0,
            nu: 0.5,
            xi: 1.0,
        };
        let bank = build_feature_bank(2, 2, 8, norms, 9).unwrap();
        let w = assemble_w(&bank);
        let mapped = w.w.dot(&(&bank.mu_g + &bank.nu[0]));
        let want = [4.0, 0.25, 0.0, 0.0, 0.0];
        for (v, t) in mapped.iter().zip(want.iter()) {
            assert!((v - t).abs() < 1e-10);
        }
    }

    #[test]
    fn snr_formula() {
        // m = 1 + 1 + 2 = 4 with unit mu: 1 / (0.5 * 2) = 1.
        let bank = build_feature_bank(1, 2, 6, NormSpec::default(), 2).unwrap();
        assert!((snr(&bank, 0.5, SnrTarget::Global).unwrap() - 1.0).abs() < 1e-12);

        // nu norm 2, sigma_p 1, m = 16: 2 / 4 = 0.5.
        let norms = NormSpec {
            mu: 1.0,
            nu: 2.0,
            xi: 1.0,
        };
        let bank = build_feature_bank(3, 12, 20, norms, 2).unwrap();
        assert!((snr(&bank, 1.0, SnrTarget::Local(1)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn snr_is_homogeneous_in_feature_norm() {
        let base = NormSpec::default();
        let doubled = NormSpec { mu: 2.0, ..base };
        let b1 = build_feature_bank(2, 2, 8, base, 4).unwrap();
        let b2 = build_feature_bank(2, 2, 8, doubled, 4).unwrap();
        let s1 = snr(&b1, 0.3, SnrTarget::Global).unwrap();
        let s2 = snr(&b2, 0.3, SnrTarget::Global).unwrap();
        assert!((s2 / s1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snr_rejects_bad_sigma() {
        let bank = build_feature_bank(1, 1, 3, NormSpec::default(), 1).unwrap();
        assert!(snr(&bank, 0.0, SnrTarget::Global).is_err());
        assert!(snr(&bank, -1.0, SnrTarget::Global).is_err());
    }

    #[test]
    fn chi_counts_shared_assignments() {
        // Four clients on features (1, 1, 2, 3).
        let assignment = [1, 1, 2, 3];
        assert_eq!(chi(&assignment, 0).unwrap(), 2.0);
        assert_eq!(chi(&assignment, 1).unwrap(), 2.0);
        assert_eq!(chi(&assignment, 2).unwrap(), 1.0);
        assert_eq!(chi(&assignment, 3).unwrap(), 1.0);

        let all_same = [2, 2, 2, 2, 2];
        for k in 0..5 {
            assert_eq!(chi(&all_same, k).unwrap(), 5.0);
        }
        let distinct = [1, 2, 3, 4];
        for k in 0..4 {
            assert_eq!(chi(&distinct, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn chi_rejects_unknown_client() {
        assert!(chi(&[1, 2], 2).is_err());
    }

    #[test]
    fn chi_bounds_hold() {
        let assignment = [1, 3, 3, 2, 1, 3];
        let k_total = assignment.len() as f64;
        for k in 0..assignment.len() {
            let c = chi(&assignment, k).unwrap();
            assert_eq!(c, c.round());
            assert!((1.0..=k_total).contains(&c));
        }
    }
}
