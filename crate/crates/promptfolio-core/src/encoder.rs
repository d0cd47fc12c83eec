//! Frozen two-branch text encoder, class prompts, mixed features, and
//! the margin score used for classification.
//!
//! The encoder maps a prompt p and class prompt p_c to the latent-space
//! feature h = relu(Wp + Wp_c) - relu(-Wp + Wp_c), evaluated row-wise.
//! With p_c = 0 this is exactly the linear map h = Wp, which several
//! test oracles exploit.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bank::{EncoderWeights, FeatureBank};
use crate::error::Error;
use crate::seed::substream;
use crate::Result;

/// A prompt vector in encoder input space (dimension m_p).
pub type Prompt = Array1<f64>;

/// How the class prompt pair is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassPromptMode {
    /// Both class prompts are zero; the encoder is exactly linear.
    Zero,
    /// p_plus has i.i.d. N(0, sigma_c^2) entries, reflected so that every
    /// task-relevant coordinate of W p_plus is non-negative; p_minus = -p_plus.
    Gaussian { sigma_c: f64 },
}

/// The fixed pair of class prompts for the two labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrompts {
    pub p_plus: Prompt,
    pub p_minus: Prompt,
    pub mode: ClassPromptMode,
    pub seed: u64,
}

impl ClassPrompts {
    /// Builds the class-prompt pair for a bank under the given mode.
    ///
    /// In gaussian mode the raw draw is reflected along each task-relevant
    /// feature direction whose coordinate came out negative. The feature
    /// rows are orthogonal, so the reflections commute and the result has
    /// (W p_plus)_r >= 0 for every task-relevant row r. This keeps the
    /// positive class aligned with the features carried by positive labels,
    /// making the class gates symmetric between labels instead of random.
    pub fn generate(
        mode: ClassPromptMode,
        bank: &FeatureBank,
        w: &EncoderWeights,
        seed: u64,
    ) -> Result<Self> {
        let m_p = bank.m_p;
        let p_plus = match mode {
            ClassPromptMode::Zero => Array1::zeros(m_p),
            ClassPromptMode::Gaussian { sigma_c } => {
                if !(sigma_c > 0.0) || !sigma_c.is_finite() {
                    return Err(Error::InvalidSigma(sigma_c, "> 0"));
                }
                let mut rng: ChaCha8Rng = substream(seed, "class");
                let mut p: Prompt = Array1::from_iter(
                    (0..m_p).map(|_| sigma_c * rng.sample::<f64, _>(StandardNormal)),
                );
                for r in 0..=bank.s() {
                    let f = w.w.row(r);
                    let coord = f.dot(&p);
                    if coord < 0.0 {
                        let scale = 2.0 * coord / w.row_sq[r];
                        for (pi, fi) in p.iter_mut().zip(f.iter()) {
                            *pi -= scale * fi;
                        }
                    }
                }
                p
            }
        };
        let p_minus = -&p_plus;
        Ok(ClassPrompts {
            p_plus,
            p_minus,
            mode,
            seed,
        })
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Derivative of relu with the convention relu'(0) = 0.
pub fn dstep(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One encoder row in coordinate space: f(u, c) = relu(u+c) - relu(-u+c).
pub fn row_feature(u: f64, c: f64) -> f64 {
    relu(u + c) - relu(-u + c)
}

/// Row derivative with respect to u: relu'(u+c) + relu'(-u+c).
pub fn row_gate(u: f64, c: f64) -> f64 {
    dstep(u + c) + dstep(-u + c)
}

fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Text feature h = relu(Wp + Wp_c) - relu(-Wp + Wp_c).
pub fn text_feature(w: &EncoderWeights, p: &Prompt, p_c: &Prompt) -> Result<Array1<f64>> {
    check_dim("text_feature prompt", w.w.ncols(), p.len())?;
    check_dim("text_feature class prompt", w.w.ncols(), p_c.len())?;
    let u = w.w.dot(p);
    let c = w.w.dot(p_c);
    Ok(Array1::from_iter(
        u.iter().zip(c.iter()).map(|(&u, &c)| row_feature(u, c)),
    ))
}

/// Mixed feature (1-theta) * h(p_g) + theta * h(p_l).
///
/// The endpoints theta = 0 and theta = 1 evaluate only the surviving
/// branch, so they are bitwise equal to the pure features (adding a
/// zero-weighted term could still flip signed zeros).
pub fn mixed_text_feature(
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    p_c: &Prompt,
    theta: f64,
) -> Result<Array1<f64>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    if theta == 0.0 {
        return text_feature(w, p_g, p_c);
    }
    if theta == 1.0 {
        return text_feature(w, p_l, p_c);
    }
    let h_g = text_feature(w, p_g, p_c)?;
    let h_l = text_feature(w, p_l, p_c)?;
    Ok(&h_g * (1.0 - theta) + &h_l * theta)
}

/// Inner-product similarity between a sample and a feature.
pub fn similarity(g: &Array1<f64>, h: &Array1<f64>) -> Result<f64> {
    check_dim("similarity", g.len(), h.len())?;
    Ok(g.dot(h))
}

/// Class-feature difference F(p) = h(p, p_plus) - h(p, p_minus).
pub fn class_feature_difference(
    w: &EncoderWeights,
    p: &Prompt,
    class: &ClassPrompts,
) -> Result<Array1<f64>> {
    let h_plus = text_feature(w, p, &class.p_plus)?;
    let h_minus = text_feature(w, p, &class.p_minus)?;
    Ok(h_plus - h_minus)
}

/// Margin z = y * (sim(g, h_mixed with p_plus) - sim(g, h_mixed with p_minus)).
///
/// Positive z means the sample is classified correctly.
pub fn margin(
    g: &Array1<f64>,
    y: f64,
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    theta: f64,
    class: &ClassPrompts,
) -> Result<f64> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidLabel(y));
    }
    let h_plus = mixed_text_feature(w, p_g, p_l, &class.p_plus, theta)?;
    let h_minus = mixed_text_feature(w, p_g, p_l, &class.p_minus, theta)?;
    Ok(y * (similarity(g, &h_plus)? - similarity(g, &h_minus)?))
}

/// Classification decision from the class-score difference
/// score = sim(g, h_plus) - sim(g, h_minus). Ties go to +1.
pub fn decide(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{assemble_w, build_feature_bank, NormSpec};
    use ndarray::array;

    fn small_setup() -> (FeatureBank, EncoderWeights) {
        let bank = build_feature_bank(2, 3, 8, NormSpec::default(), 7).unwrap();
        let w = assemble_w(&bank);
        (bank, w)
    }

    fn scalar_w() -> EncoderWeights {
        EncoderWeights {
            w: array![[1.0]].into_dimensionality().unwrap(),
            row_sq: array![1.0],
        }
    }

    #[test]
    fn zero_class_prompt_makes_encoder_linear() {
        let (_, w) = small_setup();
        let p = Array1::from_iter((0..8).map(|i| (i as f64 - 3.5) * 0.3));
        let h = text_feature(&w, &p, &Array1::zeros(8)).unwrap();
        let wp = w.w.dot(&p);
        for (a, b) in h.iter().zip(wp.iter()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_prompt_gives_zero_feature() {
        let (bank, w) = small_setup();
        let class = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            11,
        )
        .unwrap();
        let h = text_feature(&w, &Array1::zeros(8), &class.p_plus).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_hand_value() {
        let w = scalar_w();
        let h = text_feature(&w, &array![1.0], &array![0.3]).unwrap();
        assert_eq!(h[0], 1.3);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (_, w) = small_setup();
        let err = text_feature(&w, &Array1::zeros(5), &Array1::zeros(8)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn mixing_endpoints_are_bitwise_pure() {
        let (bank, w) = small_setup();
        let class = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            11,
        )
        .unwrap();
        let p_g = Array1::from_iter((0..8).map(|i| 0.1 * i as f64 - 0.3));
        let p_l = Array1::from_iter((0..8).map(|i| -0.2 * i as f64 + 0.5));
        let pure_g = text_feature(&w, &p_g, &class.p_plus).unwrap();
        let pure_l = text_feature(&w, &p_l, &class.p_plus).unwrap();
        let at0 = mixed_text_feature(&w, &p_g, &p_l, &class.p_plus, 0.0).unwrap();
        let at1 = mixed_text_feature(&w, &p_g, &p_l, &class.p_plus, 1.0).unwrap();
        for i in 0..pure_g.len() {
            assert_eq!(at0[i].to_bits(), pure_g[i].to_bits());
            assert_eq!(at1[i].to_bits(), pure_l[i].to_bits());
        }
    }

    #[test]
    fn equal_prompts_make_mixing_degenerate() {
        let (_, w) = small_setup();
        let p = Array1::from_iter((0..8).map(|i| 0.05 * i as f64 - 0.1));
        let pc = Array1::from_iter((0..8).map(|i| 0.01 * i as f64));
        let base = mixed_text_feature(&w, &p, &p, &pc, 0.0).unwrap();
        for theta in [0.25, 0.5, 0.9, 1.0] {
            let h = mixed_text_feature(&w, &p, &p, &pc, theta).unwrap();
            for (a, b) in h.iter().zip(base.iter()) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn half_mix_with_zero_class_prompt_is_linear_average() {
        let (_, w) = small_setup();
        let p_g = Array1::from_iter((0..8).map(|i| 0.1 * i as f64 - 0.3));
        let p_l = Array1::from_iter((0..8).map(|i| -0.2 * i as f64 + 0.5));
        let h = mixed_text_feature(&w, &p_g, &p_l, &Array1::zeros(8), 0.5).unwrap();
        let expect = w.w.dot(&(&p_g + &p_l)) * 0.5;
        for (a, b) in h.iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn theta_out_of_range_is_rejected() {
        let (_, w) = small_setup();
        let p = Array1::zeros(8);
        for bad in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                mixed_text_feature(&w, &p, &p, &p, bad),
                Err(Error::ThetaOutOfRange(_))
            ));
        }
    }

    #[test]
    fn similarity_matches_coordinate_loop() {
        let g = array![0.0, 1.0, -2.0, 0.5];
        let h = array![1.0, 0.0, 0.0, 0.0];
        assert_eq!(similarity(&g, &h).unwrap(), 0.0);

        let g = array![2.0, 0.0];
        assert_eq!(similarity(&g, &g).unwrap(), 4.0);

        let mut rng = substream(5, "test/similarity");
        let a = Array1::from_iter((0..16).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let b = Array1::from_iter((0..16).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut byhand = 0.0;
        for i in 0..16 {
            byhand += a[i] * b[i];
        }
        assert!((similarity(&a, &b).unwrap() - byhand).abs() < 1e-14);
    }

    #[test]
    fn symmetric_classes_have_zero_margin() {
        let (bank, w) = small_setup();
        let class = ClassPrompts::generate(ClassPromptMode::Zero, &bank, &w, 3).unwrap();
        let p_g = Array1::from_iter((0..8).map(|i| 0.1 * i as f64));
        let p_l = Array1::from_iter((0..8).map(|i| -0.1 * i as f64));
        let g = Array1::from_iter((0..bank.m()).map(|i| i as f64));
        let z = margin(&g, 1.0, &w, &p_g, &p_l, 0.3, &class).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn label_flip_negates_margin() {
        let (bank, w) = small_setup();
        let class = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            11,
        )
        .unwrap();
        let p_g = Array1::from_iter((0..8).map(|i| 0.1 * i as f64 - 0.3));
        let p_l = Array1::from_iter((0..8).map(|i| -0.2 * i as f64 + 0.5));
        let g = Array1::from_iter((0..bank.m()).map(|i| (i as f64).sin()));
        let zp = margin(&g, 1.0, &w, &p_g, &p_l, 0.4, &class).unwrap();
        let zm = margin(&g, -1.0, &w, &p_g, &p_l, 0.4, &class).unwrap();
        assert_eq!(zp, -zm);
        assert!(margin(&g, 0.5, &w, &p_g, &p_l, 0.4, &class).is_err());
    }

    #[test]
    fn one_row_margin_matches_hand_arithmetic() {
        let w = scalar_w();
        let class = ClassPrompts {
            p_plus: array![0.3],
            p_minus: array![-0.3],
            mode: ClassPromptMode::Zero,
            seed: 0,
        };
        // u_g = 1, u_l = -0.5, theta = 0.25: u_mix applies per branch.
        // h+(p_g) = relu(1.3) - relu(-0.7) = 1.3; h-(p_g) = relu(0.7) - relu(-1.3) = 0.7
        // h+(p_l) = relu(-0.2) - relu(0.8) = -0.8; h-(p_l) = relu(-0.8) - relu(0.2) = -0.2
        // h+ = 0.75*1.3 + 0.25*(-0.8) = 0.775; h- = 0.75*0.7 + 0.25*(-0.2) = 0.475
        // z = y * g * (h+ - h-) = 1 * 2 * 0.3 = 0.6
        let z = margin(
            &array![2.0],
            1.0,
            &w,
            &array![1.0],
            &array![-0.5],
            0.25,
            &class,
        )
        .unwrap();
        assert!((z - 0.6).abs() < 1e-15);
    }

    #[test]
    fn margin_is_positively_homogeneous_in_the_sample() {
        let (bank, w) = small_setup();
        let class = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            11,
        )
        .unwrap();
        let p_g = Array1::from_iter((0..8).map(|i| 0.1 * i as f64 - 0.3));
        let p_l = Array1::from_iter((0..8).map(|i| -0.2 * i as f64 + 0.5));
        let g = Array1::from_iter((0..bank.m()).map(|i| (i as f64).cos()));
        let z = margin(&g, 1.0, &w, &p_g, &p_l, 0.4, &class).unwrap();
        let z2 = margin(&(&g * 2.0), 1.0, &w, &p_g, &p_l, 0.4, &class).unwrap();
        assert_eq!(z2, 2.0 * z);
        let z17 = margin(&(&g * 1.7), 1.0, &w, &p_g, &p_l, 0.4, &class).unwrap();
        assert!((z17 - 1.7 * z).abs() <= 1e-14 * z.abs().max(1.0));
    }

    #[test]
    fn decision_sign_survives_joint_feature_rescale() {
        let (bank, w) = small_setup();
        let class = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            11,
        )
        .unwrap();
        let p_g = Array1::from_iter((0..8).map(|i| 0.1 * i as f64 - 0.3));
        let p_l = Array1::from_iter((0..8).map(|i| -0.2 * i as f64 + 0.5));
        let h_plus = mixed_text_feature(&w, &p_g, &p_l, &class.p_plus, 0.4).unwrap();
        let h_minus = mixed_text_feature(&w, &p_g, &p_l, &class.p_minus, 0.4).unwrap();
        let g = Array1::from_iter((0..bank.m()).map(|i| (3.0 + i as f64).sin()));
        let score = g.dot(&h_plus) - g.dot(&h_minus);
        for lambda in [0.5, 1.0, 8.0] {
            let scaled = g.dot(&(&h_plus * lambda)) - g.dot(&(&h_minus * lambda));
            assert_eq!(decide(scaled), decide(score));
        }
        assert_eq!(decide(0.0), 1.0);
        assert_eq!(decide(-1e-300), -1.0);
    }

    #[test]
    fn gaussian_class_prompts_are_antisymmetric_and_oriented() {
        let (bank, w) = small_setup();
        let c1 = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            19,
        )
        .unwrap();
        let c2 = ClassPrompts::generate(
            ClassPromptMode::Gaussian { sigma_c: 0.2 },
            &bank,
            &w,
            19,
        )
        .unwrap();
        for i in 0..8 {
            assert_eq!(c1.p_plus[i].to_bits(), c2.p_plus[i].to_bits());
            assert_eq!(c1.p_minus[i], -c1.p_plus[i]);
            assert!(c1.p_plus[i].is_finite());
        }
        let coords = w.w.dot(&c1.p_plus);
        for r in 0..=bank.s() {
            assert!(coords[r] >= 0.0, "row {r} coordinate {}", coords[r]);
        }
    }

    #[test]
    fn zero_mode_gives_zero_prompts() {
        let (bank, w) = small_setup();
        let c = ClassPrompts::generate(ClassPromptMode::Zero, &bank, &w, 19).unwrap();
        assert!(c.p_plus.iter().all(|&v| v == 0.0));
        assert!(c.p_minus.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_gate_uses_half_open_derivative() {
        assert_eq!(row_gate(0.0, 0.0), 0.0);
        assert_eq!(row_gate(0.5, 0.2), 1.0);
        assert_eq!(row_gate(0.1, 0.2), 2.0);
        assert_eq!(row_gate(0.5, -0.2), 1.0);
        assert_eq!(row_gate(0.1, -0.2), 0.0);
        assert_eq!(row_feature(0.1, 0.2), 0.1 + 0.2 - 0.1);
    }
}
