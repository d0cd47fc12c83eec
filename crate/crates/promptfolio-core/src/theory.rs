//! Closed-form calculators: the Gaussian margin model for test error,
//! the portfolio mean-to-risk ratio, the optimal mixing coefficient,
//! the advantage interval constants, and estimation of the (a, b, rho)
//! portfolio parameters from trained prompts.
//!
//! Under the data model, the test margin of a prompt pair is Gaussian:
//! its mean collects the global and own-local rows of the class-feature
//! difference F, and its standard deviation is sigma_p times the norm of
//! F's noise rows. Test error is then Phi(-mu/sigma).

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bank::FeatureBank;
use crate::bank::EncoderWeights;
use crate::encoder::{class_feature_difference, decide, ClassPrompts, Prompt};
use crate::error::Error;
use crate::seed::substream;
use crate::Result;

/// Where a Gaussian margin model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelProvenance {
    AnalyticFromPrompt,
    FittedFromMc,
}

/// Gaussian model of the signed test margin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianTestModel {
    pub mu: f64,
    pub sigma: f64,
    pub provenance: ModelProvenance,
}

/// Standard normal CDF at -ratio, i.e. P(N(0,1) < -ratio).
///
/// Routed through the FDLIBM complementary error function, which holds
/// about 1 ulp of relative accuracy over the ratios exercised here.
pub fn normal_tail(ratio: f64) -> f64 {
    0.5 * libm::erfc(ratio / std::f64::consts::SQRT_2)
}

/// Mixed class-feature difference F = (1-theta) F(p_G) + theta F(p_L).
pub fn mixed_class_difference(
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    theta: f64,
    class: &ClassPrompts,
) -> Result<Array1<f64>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    if theta == 0.0 {
        return class_feature_difference(w, p_g, class);
    }
    if theta == 1.0 {
        return class_feature_difference(w, p_l, class);
    }
    let f_g = class_feature_difference(w, p_g, class)?;
    let f_l = class_feature_difference(w, p_l, class)?;
    Ok(&f_g * (1.0 - theta) + &f_l * theta)
}

/// Margin mean and std read directly off a class-difference vector.
pub fn model_from_difference(
    f: &Array1<f64>,
    s_k: usize,
    s_total: usize,
    sigma_p: f64,
) -> Result<GaussianTestModel> {
    if !(sigma_p >= 0.0) || !sigma_p.is_finite() {
        return Err(Error::InvalidSigma(sigma_p, ">= 0"));
    }
    assert!(
        s_k >= 1 && s_k <= s_total,
        "local feature index {s_k} outside 1..={s_total}"
    );
    let mu = f[0] + f[s_k];
    let noise_sq: f64 = f.iter().skip(1 + s_total).map(|v| v * v).sum();
    Ok(GaussianTestModel {
        mu,
        sigma: sigma_p * noise_sq.sqrt(),
        provenance: ModelProvenance::AnalyticFromPrompt,
    })
}

/// Gaussian margin model of the mixed prompt pair on client s_k's data.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_test_params(
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    theta: f64,
    class: &ClassPrompts,
    bank: &FeatureBank,
    s_k: usize,
    sigma_p: f64,
) -> Result<GaussianTestModel> {
    let f = mixed_class_difference(w, p_g, p_l, theta, class)?;
    model_from_difference(&f, s_k, bank.s(), sigma_p)
}

/// Analytic test error Phi(-mu/sigma) of a margin model.
///
/// A zero-noise model is exact: error 0 for positive mean, 1 for
/// negative. Zero mean with zero noise has no defined error.
pub fn analytic_error(model: &GaussianTestModel) -> Result<f64> {
    if model.sigma > 0.0 {
        Ok(normal_tail(model.mu / model.sigma))
    } else if model.mu > 0.0 {
        Ok(0.0)
    } else if model.mu < 0.0 {
        Ok(1.0)
    } else {
        Err(Error::UndefinedModel)
    }
}

/// Monte Carlo test error of the mixed pair on fresh samples from client
/// s_k's distribution. Returns (error estimate, binomial stderr).
#[allow(clippy::too_many_arguments)]
pub fn mc_error(
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    theta: f64,
    class: &ClassPrompts,
    bank: &FeatureBank,
    s_k: usize,
    sigma_p: f64,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 1000 {
        return Err(Error::Config {
            field: "mc_samples".into(),
            message: format!("need at least 1000, got {n}"),
        });
    }
    let f = mixed_class_difference(w, p_g, p_l, theta, class)?;
    let s_total = bank.s();
    let l_total = bank.l();
    if !(sigma_p >= 0.0) || !sigma_p.is_finite() {
        return Err(Error::InvalidSigma(sigma_p, ">= 0"));
    }
    let mut rng = substream(seed, &format!("mc/{s_k}"));
    let mut wrong = 0usize;
    let noise: Vec<f64> = f.iter().skip(1 + s_total).copied().collect();
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut score = y * (f[0] + f[s_k]);
        for fl in noise.iter().take(l_total) {
            let x: f64 = rng.sample(StandardNormal);
            score += sigma_p * x * fl;
        }
        if decide(score) != y {
            wrong += 1;
        }
    }
    let p = wrong as f64 / n as f64;
    let stderr = (p * (1.0 - p) / n as f64).sqrt();
    Ok((p, stderr))
}

fn check_portfolio_args(b: f64, rho: f64) -> Result<()> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Config {
            field: "b".into(),
            message: format!("must be positive and finite, got {b}"),
        });
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Config {
            field: "rho".into(),
            message: format!("must lie in [-1, 1], got {rho}"),
        });
    }
    Ok(())
}

/// Mean-to-risk ratio of the theta-mixed portfolio, with the global
/// asset normalized to mean 1 and std 1:
/// ((1-theta) + theta a) / sqrt((1-theta)^2 + 2 rho theta (1-theta) b + theta^2 b^2).
pub fn portfolio_ratio(a: f64, b: f64, rho: f64, theta: f64) -> Result<f64> {
    check_portfolio_args(b, rho)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    let w0 = 1.0 - theta;
    let var = w0 * w0 + 2.0 * rho * theta * w0 * b + theta * theta * b * b;
    if !(var > 0.0) {
        return Err(Error::ZeroDenominator("portfolio variance"));
    }
    Ok((w0 + theta * a) / var.sqrt())
}

/// The optimal mixing coefficient.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThetaStar {
    /// Argmax of the portfolio ratio over [0, 1].
    pub value: f64,
    /// The unprojected stationary point (a - rho b) / ((a + b^2) - rho b (a + 1)).
    pub raw: f64,
    /// Whether the stationary point lies strictly inside (0, 1).
    pub interior: bool,
}

/// Maximizer of the portfolio ratio over theta in [0, 1].
///
/// The closed-form stationary point is used when it lies inside the
/// interval; otherwise the better endpoint is returned (projection alone
/// can pick the wrong end when the stationary point is a minimum or sits
/// outside on the far side).
pub fn theta_star(a: f64, b: f64, rho: f64) -> Result<ThetaStar> {
    check_portfolio_args(b, rho)?;
    let denom = (a + b * b) - rho * b * (a + 1.0);
    if denom == 0.0 {
        return Err(Error::DegenerateThetaStar { a, b, rho });
    }
    let raw = (a - rho * b) / denom;
    let interior = raw > 0.0 && raw < 1.0;
    let mut best_theta = 0.0;
    let mut best_ratio = portfolio_ratio(a, b, rho, 0.0)?;
    let mut candidates = vec![1.0];
    if interior {
        candidates.push(raw);
    }
    for theta in candidates {
        if let Ok(r) = portfolio_ratio(a, b, rho, theta) {
            if r > best_ratio {
                best_ratio = r;
                best_theta = theta;
            }
        }
    }
    Ok(ThetaStar {
        value: best_theta,
        raw,
        interior,
    })
}

/// Advantage-interval constants and the resulting upper endpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdvantageInterval {
    pub ca: f64,
    pub cb: f64,
    pub cc: f64,
    /// Radicand of cc before the square root.
    pub cc_radicand: f64,
    /// The radicand came out negative (cc set to 0, numeric fallback used).
    pub radicand_negative: bool,
    /// ca = 0, so the closed form is undefined (numeric fallback used).
    pub degenerate_ca: bool,
    /// Whether `upper` came from the numeric grid instead of the formula.
    pub numeric_fallback: bool,
    /// Claimed largest theta such that mixing at any smaller theta beats
    /// the linear interpolation of the endpoint errors.
    pub upper: f64,
}

/// Error of the mixed portfolio at unit global margin: Phi(-ratio(theta)).
fn mixed_error(a: f64, b: f64, rho: f64, theta: f64) -> Result<f64> {
    Ok(normal_tail(portfolio_ratio(a, b, rho, theta)?))
}

/// Whether the mixed error at theta is at most the theta-interpolation
/// of the endpoint errors, within tol.
pub fn advantage_holds(a: f64, b: f64, rho: f64, theta: f64, tol: f64) -> Result<bool> {
    let mixed = mixed_error(a, b, rho, theta)?;
    let global = normal_tail(1.0);
    let local = normal_tail(a / b);
    let interpolated = (1.0 - theta) * global + theta * local;
    Ok(mixed <= interpolated + tol)
}

fn numeric_upper(a: f64, b: f64, rho: f64) -> f64 {
    // Largest leading grid prefix on which the advantage holds.
    let steps = 1000;
    let mut upper = 0.0;
    for i in 0..=steps {
        let theta = i as f64 / steps as f64;
        match advantage_holds(a, b, rho, theta, 1e-12) {
            Ok(true) => upper = theta,
            _ => break,
        }
    }
    upper
}

/// The advantage-interval constants
/// Ca = (b-a)(b^2+2 rho b+1), Cb = (a+b)(b^2-1) - 4b(rho b - 1),
/// Cc = (b-1) sqrt((a+b)^2 (b+1)^2 - 8 a b^2 (rho+1)^2),
/// with upper endpoint (Cb - Cc)/(2 Ca) projected onto [0, 1].
/// Degenerate constants fall back to a numeric grid comparison.
pub fn advantage_interval(a: f64, b: f64, rho: f64) -> Result<AdvantageInterval> {
    check_portfolio_args(b, rho)?;
    let ca = (b - a) * (b * b + 2.0 * rho * b + 1.0);
    let cb = (a + b) * (b * b - 1.0) - 4.0 * b * (rho * b - 1.0);
    let cc_radicand =
        (a + b) * (a + b) * (b + 1.0) * (b + 1.0) - 8.0 * a * b * b * (rho + 1.0) * (rho + 1.0);
    let radicand_negative = cc_radicand < 0.0;
    let cc = if radicand_negative {
        0.0
    } else {
        (b - 1.0) * cc_radicand.sqrt()
    };
    let degenerate_ca = ca == 0.0;
    let numeric_fallback = degenerate_ca || radicand_negative;
    let upper = if numeric_fallback {
        numeric_upper(a, b, rho)
    } else {
        ((cb - cc) / (2.0 * ca)).clamp(0.0, 1.0)
    };
    Ok(AdvantageInterval {
        ca,
        cb,
        cc,
        cc_radicand,
        radicand_negative,
        degenerate_ca,
        numeric_fallback,
        upper,
    })
}

/// Order-level predictor of the optimal mixing coefficient:
/// (K - chi) SNR_k / ((K^2 - 1)(K SNR_G + chi SNR_k)).
pub fn theta_star_order(k_total: usize, chi_k: f64, snr_g: f64, snr_k: f64) -> Result<f64> {
    if k_total < 2 {
        return Err(Error::KTooSmall(k_total));
    }
    let k = k_total as f64;
    Ok((k - chi_k) * snr_k / ((k * k - 1.0) * (k * snr_g + chi_k * snr_k)))
}

/// Portfolio parameters estimated from a trained prompt pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AbRho {
    /// Local-to-global margin-mean ratio.
    pub a: f64,
    /// Local-to-global margin-std ratio.
    pub b: f64,
    /// Correlation of the two margins' noise parts.
    pub rho: f64,
    /// A noise norm was zero; b and rho are filled with conventions
    /// (b = 0, rho = 0) rather than ratios.
    pub degenerate: bool,
}

/// Estimates (a, b, rho) for client s_k from its prompt pair.
///
/// Means come from each prompt's own margin model; b is the ratio of
/// noise-row norms of the two class-difference vectors (sigma_p cancels);
/// rho is their normalized inner product over noise rows.
pub fn estimate_ab_rho(
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    class: &ClassPrompts,
    bank: &FeatureBank,
    s_k: usize,
) -> Result<AbRho> {
    let f_g = class_feature_difference(w, p_g, class)?;
    let f_l = class_feature_difference(w, p_l, class)?;
    let s_total = bank.s();
    let mu_g = f_g[0] + f_g[s_k];
    let mu_l = f_l[0] + f_l[s_k];
    if mu_g == 0.0 {
        return Err(Error::ZeroDenominator("global margin mean"));
    }
    let a = mu_l / mu_g;
    let noise = |f: &Array1<f64>| -> Vec<f64> { f.iter().skip(1 + s_total).copied().collect() };
    let ng = noise(&f_g);
    let nl = noise(&f_l);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_g = norm(&ng);
    let norm_l = norm(&nl);
    // Exactly-in-span prompts leave only orthogonalization residue in the
    // noise rows; treat anything that far below the vector scale as zero.
    let scale = |f: &Array1<f64>| f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_g <= 1e-12 * scale(&f_g) {
        return Err(Error::ZeroDenominator("global noise norm"));
    }
    if norm_l <= 1e-12 * scale(&f_l) {
        return Ok(AbRho {
            a,
            b: 0.0,
            rho: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = ng.iter().zip(nl.iter()).map(|(x, y)| x * y).sum();
    Ok(AbRho {
        a,
        b: norm_l / norm_g,
        rho: dot / (norm_g * norm_l),
        degenerate: false,
    })
}
