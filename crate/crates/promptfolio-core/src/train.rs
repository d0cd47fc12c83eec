//! Logistic loss, analytic prompt gradients, local full-batch descent,
//! weighted aggregation, and the federated training loop.
//!
//! Training runs R rounds of: broadcast the server global prompt, let each
//! client take E full-batch gradient steps on its own data (updating both
//! its global copy and its private local prompt), then aggregate the
//! global copies by data-weighted averaging. Local prompts are never
//! aggregated.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{EncoderWeights, FeatureBank};
use crate::data::ClientDataset;
use crate::decomp::{decompose, CoeffTrajectory};
use crate::encoder::{row_feature, row_gate, ClassPrompts, Prompt};
use crate::error::Error;
use crate::seed::substream;
use crate::Result;

/// Which loss the gradient steps minimize.
///
/// `Margin` is the class-difference logistic loss; its slope factor is
/// 1/(1+exp(z)) and the loss is bounded below. `PaperSimilarity` is the
/// literal negative log(1+exp(sim)) against the true-class prompt only;
/// it is unbounded below, so runs in this mode rely on the divergence
/// guard. Both are kept because the two formulations disagree and the
/// choice changes the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Margin,
    PaperSimilarity,
}

impl Default for LossMode {
    fn default() -> Self {
        LossMode::Margin
    }
}

/// Margin logistic loss log(1 + exp(-z)), stable for |z| up to ~700.
pub fn margin_loss(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Slope factor of the margin loss: 1/(1 + exp(z)), in (0, 1).
pub fn margin_slope(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Similarity-mode loss -log(1 + exp(s)).
pub fn similarity_loss(s: f64) -> f64 {
    -(s.max(0.0) + (-s.abs()).exp().ln_1p())
}

/// Similarity-mode slope factor: the sigmoid exp(s)/(1 + exp(s)).
pub fn similarity_slope(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Per-row gradient contributions split by sample label.
///
/// The gradient with respect to a prompt is -W^T (plus + minus); the
/// split is kept so noise-coefficient accumulators can attribute each
/// step to the label that produced it.
#[derive(Debug, Clone)]
pub struct LabelSplit {
    pub plus: Array1<f64>,
    pub minus: Array1<f64>,
}

impl LabelSplit {
    fn zeros(m: usize) -> Self {
        LabelSplit {
            plus: Array1::zeros(m),
            minus: Array1::zeros(m),
        }
    }
}

/// Batch-mean loss and analytic gradients for both prompts.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub grad_g: Prompt,
    pub grad_l: Prompt,
    pub mean_loss: f64,
    pub split_g: LabelSplit,
    pub split_l: LabelSplit,
}

/// Label-attributed noise-coefficient accumulators, in the same units as
/// the decomposition's phi coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiPhiDelta {
    /// Contributions from y = +1 samples.
    pub psi: Vec<f64>,
    /// Contributions from y = -1 samples.
    pub varphi: Vec<f64>,
}

impl PsiPhiDelta {
    pub fn zeros(l_total: usize) -> Self {
        PsiPhiDelta {
            psi: vec![0.0; l_total],
            varphi: vec![0.0; l_total],
        }
    }

    pub fn add(&mut self, other: &PsiPhiDelta) {
        for (a, b) in self.psi.iter_mut().zip(other.psi.iter()) {
            *a += b;
        }
        for (a, b) in self.varphi.iter_mut().zip(other.varphi.iter()) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &PsiPhiDelta, scale: f64) {
        for (a, b) in self.psi.iter_mut().zip(other.psi.iter()) {
            *a += scale * b;
        }
        for (a, b) in self.varphi.iter_mut().zip(other.varphi.iter()) {
            *a += scale * b;
        }
    }
}

/// Folds one gradient step's label split into noise accumulators.
///
/// A step moves the prompt by -eta * grad = eta * W^T (plus + minus), so
/// the change of the coefficient on noise feature xi_l is
/// eta * (plus + minus)[row] * |xi_l|^2 with row = 1 + S + l. The y = +1
/// part lands in psi, the y = -1 part in varphi; their sum equals the
/// measured per-step phi change.
pub fn accumulate_psi_phi(
    acc: &mut PsiPhiDelta,
    split: &LabelSplit,
    eta: f64,
    w: &EncoderWeights,
    s_total: usize,
) {
    let l_total = acc.psi.len();
    for l in 0..l_total {
        let row = 1 + s_total + l;
        acc.psi[l] += eta * split.plus[row] * w.row_sq[row];
        acc.varphi[l] += eta * split.minus[row] * w.row_sq[row];
    }
}

fn mix_features(a: Array1<f64>, b: Array1<f64>, theta: f64) -> Array1<f64> {
    &a * (1.0 - theta) + &b * theta
}

/// Batch-mean loss and exact gradients of both prompts.
///
/// Endpoint mixing coefficients short-circuit: at theta = 0 the local
/// gradient is the exact zero vector and the local prompt is never read,
/// and symmetrically at theta = 1.
pub fn grad_prompts(
    data: &ClientDataset,
    w: &EncoderWeights,
    p_g: &Prompt,
    p_l: &Prompt,
    theta: f64,
    class: &ClassPrompts,
    mode: LossMode,
) -> Result<BatchGrad> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    let m = w.w.nrows();
    if data.g.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "grad_prompts samples",
            expected: m,
            got: data.g.ncols(),
        });
    }
    let m_p = w.w.ncols();
    let need_g = theta < 1.0;
    let need_l = theta > 0.0;
    let u_g = if need_g { Some(w.w.dot(p_g)) } else { None };
    let u_l = if need_l { Some(w.w.dot(p_l)) } else { None };
    let cp = w.w.dot(&class.p_plus);
    let cm = w.w.dot(&class.p_minus);

    let feat = |u: &Array1<f64>, c: &Array1<f64>| -> Array1<f64> {
        Array1::from_iter((0..m).map(|r| row_feature(u[r], c[r])))
    };

    // Per-label weighted row sums of the samples.
    let mut sum_plus = Array1::<f64>::zeros(m);
    let mut sum_minus = Array1::<f64>::zeros(m);
    let mut loss_total = 0.0;

    match mode {
        LossMode::Margin => {
            let fdiff = |u: &Array1<f64>| -> Array1<f64> {
                Array1::from_iter(
                    (0..m).map(|r| row_feature(u[r], cp[r]) - row_feature(u[r], cm[r])),
                )
            };
            let fmix = if theta == 0.0 {
                fdiff(u_g.as_ref().unwrap())
            } else if theta == 1.0 {
                fdiff(u_l.as_ref().unwrap())
            } else {
                mix_features(
                    fdiff(u_g.as_ref().unwrap()),
                    fdiff(u_l.as_ref().unwrap()),
                    theta,
                )
            };
            for i in 0..n {
                let gi = data.g.row(i);
                let y = data.y[i];
                let z = y * gi.dot(&fmix);
                loss_total += margin_loss(z);
                let wgt = margin_slope(z) * y;
                let target = if y > 0.0 {
                    &mut sum_plus
                } else {
                    &mut sum_minus
                };
                target.zip_mut_with(&gi, |t, &g| *t += wgt * g);
            }
        }
        LossMode::PaperSimilarity => {
            let h_plus = if theta == 0.0 {
                feat(u_g.as_ref().unwrap(), &cp)
            } else if theta == 1.0 {
                feat(u_l.as_ref().unwrap(), &cp)
            } else {
                mix_features(
                    feat(u_g.as_ref().unwrap(), &cp),
                    feat(u_l.as_ref().unwrap(), &cp),
                    theta,
                )
            };
            let h_minus = if theta == 0.0 {
                feat(u_g.as_ref().unwrap(), &cm)
            } else if theta == 1.0 {
                feat(u_l.as_ref().unwrap(), &cm)
            } else {
                mix_features(
                    feat(u_g.as_ref().unwrap(), &cm),
                    feat(u_l.as_ref().unwrap(), &cm),
                    theta,
                )
            };
            for i in 0..n {
                let gi = data.g.row(i);
                let y = data.y[i];
                let h = if y > 0.0 { &h_plus } else { &h_minus };
                let sim = gi.dot(h);
                loss_total += similarity_loss(sim);
                let wgt = similarity_slope(sim);
                let target = if y > 0.0 {
                    &mut sum_plus
                } else {
                    &mut sum_minus
                };
                target.zip_mut_with(&gi, |t, &g| *t += wgt * g);
            }
        }
    }

    let build = |u: Option<&Array1<f64>>, mixfac: f64| -> (Prompt, LabelSplit) {
        let u = match u {
            Some(u) => u,
            None => return (Array1::zeros(m_p), LabelSplit::zeros(m)),
        };
        let scale = mixfac / n as f64;
        let mut plus = Array1::<f64>::zeros(m);
        let mut minus = Array1::<f64>::zeros(m);
        match mode {
            LossMode::Margin => {
                for r in 0..m {
                    let dd = row_gate(u[r], cp[r]) - row_gate(u[r], cm[r]);
                    plus[r] = scale * dd * sum_plus[r];
                    minus[r] = scale * dd * sum_minus[r];
                }
            }
            LossMode::PaperSimilarity => {
                for r in 0..m {
                    plus[r] = scale * row_gate(u[r], cp[r]) * sum_plus[r];
                    minus[r] = scale * row_gate(u[r], cm[r]) * sum_minus[r];
                }
            }
        }
        let grad = -(w.w.t().dot(&(&plus + &minus)));
        (grad, LabelSplit { plus, minus })
    };

    let (grad_g, split_g) = if need_g {
        build(u_g.as_ref(), 1.0 - theta)
    } else {
        (Array1::zeros(m_p), LabelSplit::zeros(m))
    };
    let (grad_l, split_l) = if need_l {
        build(u_l.as_ref(), theta)
    } else {
        (Array1::zeros(m_p), LabelSplit::zeros(m))
    };

    Ok(BatchGrad {
        grad_g,
        grad_l,
        mean_loss: loss_total / n as f64,
        split_g,
        split_l,
    })
}

/// Result of one client's E-step local update.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub p_g: Prompt,
    pub p_l: Prompt,
    /// Batch loss before each step, length = number of steps taken.
    pub step_losses: Vec<f64>,
    /// Batch loss after the final step.
    pub final_loss: f64,
    /// First-step gradient norms.
    pub grad_norm_g: f64,
    pub grad_norm_l: f64,
    /// Noise accumulators for the global-copy updates over this call.
    pub acc_g: PsiPhiDelta,
    /// Noise accumulators for the local-prompt updates.
    pub acc_l: PsiPhiDelta,
}

/// Runs `epochs` full-batch gradient steps on one client.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    data: &ClientDataset,
    w: &EncoderWeights,
    p_g0: &Prompt,
    p_l0: &Prompt,
    theta: f64,
    eta: f64,
    epochs: usize,
    mode: LossMode,
    class: &ClassPrompts,
    divergence_bound: f64,
    s_total: usize,
    round: usize,
) -> Result<LocalUpdate> {
    let m = w.w.nrows();
    let l_total = m - 1 - s_total;
    let mut p_g = p_g0.clone();
    let mut p_l = p_l0.clone();
    let mut step_losses = Vec::with_capacity(epochs);
    let mut grad_norm_g = 0.0;
    let mut grad_norm_l = 0.0;
    let mut acc_g = PsiPhiDelta::zeros(l_total);
    let mut acc_l = PsiPhiDelta::zeros(l_total);
    for step in 0..epochs {
        let bg = grad_prompts(data, w, &p_g, &p_l, theta, class, mode)?;
        step_losses.push(bg.mean_loss);
        if step == 0 {
            grad_norm_g = bg.grad_g.dot(&bg.grad_g).sqrt();
            grad_norm_l = bg.grad_l.dot(&bg.grad_l).sqrt();
        }
        accumulate_psi_phi(&mut acc_g, &bg.split_g, eta, w, s_total);
        accumulate_psi_phi(&mut acc_l, &bg.split_l, eta, w, s_total);
        p_g.zip_mut_with(&bg.grad_g, |p, &g| *p -= eta * g);
        p_l.zip_mut_with(&bg.grad_l, |p, &g| *p -= eta * g);
        let norm_g = p_g.dot(&p_g).sqrt();
        let norm_l = p_l.dot(&p_l).sqrt();
        let worst = norm_g.max(norm_l);
        if !(worst <= divergence_bound) || !bg.mean_loss.is_finite() {
            return Err(Error::Divergence {
                norm: worst,
                bound: divergence_bound,
                round,
                step,
            });
        }
    }
    let final_loss = grad_prompts(data, w, &p_g, &p_l, theta, class, mode)?.mean_loss;
    Ok(LocalUpdate {
        p_g,
        p_l,
        step_losses,
        final_loss,
        grad_norm_g,
        grad_norm_l,
        acc_g,
        acc_l,
    })
}

/// Data-weighted average in delta form: p_1 + sum_k w_k (p_k - p_1),
/// accumulated in ascending client order. Equal inputs average to
/// themselves bitwise, and the result is independent of parallelism
/// because the reduction order is fixed.
pub fn fedavg(prompts: &[Prompt], weights: &[f64]) -> Result<Prompt> {
    if prompts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    assert_eq!(prompts.len(), weights.len(), "one weight per prompt");
    let mut total = 0.0;
    for (index, &value) in weights.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveWeight { index, value });
        }
        total += value;
    }
    let mut avg = prompts[0].clone();
    for k in 1..prompts.len() {
        let wk = weights[k] / total;
        for j in 0..avg.len() {
            avg[j] += wk * (prompts[k][j] - prompts[0][j]);
        }
    }
    Ok(avg)
}

/// Learning-rate policy for a run.
///
/// Serialized as a bare number for a fixed rate or the string "auto"
/// for the halving search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaChoice {
    Fixed(f64),
    /// Halve from 1.0 until every client's first ten full-batch steps have
    /// non-increasing loss; error below 1e-6.
    Auto,
}

impl Serialize for EtaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaChoice::Fixed(v) => s.serialize_f64(*v),
            EtaChoice::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for EtaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = EtaChoice;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or the string \"auto\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<EtaChoice, E> {
                Ok(EtaChoice::Fixed(v))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<EtaChoice, E> {
                Ok(EtaChoice::Fixed(v as f64))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<EtaChoice, E> {
                Ok(EtaChoice::Fixed(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<EtaChoice, E> {
                if v == "auto" {
                    Ok(EtaChoice::Auto)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Federated state after a run.
#[derive(Debug, Clone)]
pub struct FederationState {
    pub server_global: Prompt,
    pub client_global: Vec<Prompt>,
    pub client_local: Vec<Prompt>,
    pub theta: f64,
    pub round: usize,
}

/// Per-round scalars recorded during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Post-update batch loss per client.
    pub client_loss: Vec<f64>,
    pub grad_norm_global: Vec<f64>,
    pub grad_norm_local: Vec<f64>,
    /// Data-weighted mean of client_loss.
    pub mean_loss: f64,
}

/// Full scalar record of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    /// The learning rate actually used.
    pub eta: f64,
    /// Whether eta came from the halving search.
    pub eta_searched: bool,
    /// Data-weighted mean batch loss at initialization.
    pub initial_loss: f64,
    pub rounds: Vec<RoundRecord>,
}

/// Coefficient trajectories for all tracked prompts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub server: CoeffTrajectory,
    pub client_global: Vec<CoeffTrajectory>,
    pub client_local: Vec<CoeffTrajectory>,
}

/// Everything a federated run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: FederationState,
    pub record: TrainRecord,
    pub trajectories: TrajectorySet,
    /// Server prompt after each aggregation, preceded by the shared init.
    pub server_history: Vec<Prompt>,
    /// Each client's local prompt after each round, preceded by its init.
    pub local_history: Vec<Vec<Prompt>>,
}

/// Inputs to the federated loop.
#[derive(Clone)]
pub struct TrainSetup<'a> {
    pub bank: &'a FeatureBank,
    pub w: &'a EncoderWeights,
    pub class: &'a ClassPrompts,
    pub data: &'a [ClientDataset],
    pub theta: f64,
    pub eta: EtaChoice,
    pub epochs: usize,
    pub rounds: usize,
    pub loss_mode: LossMode,
    pub divergence_bound: f64,
    pub sigma_0: f64,
    pub seed: u64,
}

fn draw_prompt(m_p: usize, sigma_0: f64, seed: u64, label: &str) -> Prompt {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = substream(seed, label);
    Array1::from_iter((0..m_p).map(|_| sigma_0 * rng.sample::<f64, _>(StandardNormal)))
}

/// Server and per-client-local prompt initialization.
pub fn init_prompts(m_p: usize, sigma_0: f64, seed: u64, k_total: usize) -> (Prompt, Vec<Prompt>) {
    let server = draw_prompt(m_p, sigma_0, seed, "init/global");
    let locals = (0..k_total)
        .map(|k| draw_prompt(m_p, sigma_0, seed, &format!("init/local/{k}")))
        .collect();
    (server, locals)
}

/// Halving search for the largest eta (from 1.0) whose first ten
/// full-batch steps are loss-non-increasing on every client.
pub fn search_eta(setup: &TrainSetup) -> Result<f64> {
    let k_total = setup.data.len();
    let (server, locals) = init_prompts(setup.bank.m_p, setup.sigma_0, setup.seed, k_total);
    let mut eta = 1.0;
    while eta >= 1e-6 {
        let mut ok = true;
        for (k, data) in setup.data.iter().enumerate() {
            let trial = local_update(
                data,
                setup.w,
                &server,
                &locals[k],
                setup.theta,
                eta,
                10,
                setup.loss_mode,
                setup.class,
                setup.divergence_bound,
                setup.bank.s(),
                0,
            );
            let monotone = match trial {
                Err(Error::Divergence { .. }) => false,
                Err(e) => return Err(e),
                Ok(upd) => {
                    let mut seq = upd.step_losses.clone();
                    seq.push(upd.final_loss);
                    seq.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs())
                }
            };
            if !monotone {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(eta);
        }
        eta /= 2.0;
    }
    Err(Error::EtaSearchFailed(1e-6))
}

/// Runs the full federated loop.
pub fn run_promptfolio(setup: &TrainSetup) -> Result<RunOutput> {
    let k_total = setup.data.len();
    if k_total == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(0.0..=1.0).contains(&setup.theta) {
        return Err(Error::ThetaOutOfRange(setup.theta));
    }
    let (eta, eta_searched) = match setup.eta {
        EtaChoice::Fixed(e) => {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config {
                    field: "eta".into(),
                    message: format!("must be positive and finite, got {e}"),
                });
            }
            (e, false)
        }
        EtaChoice::Auto => (search_eta(setup)?, true),
    };
    let s_total = setup.bank.s();
    let l_total = setup.bank.l();
    let weights: Vec<f64> = setup.data.iter().map(|d| d.n() as f64).collect();
    let total_n: f64 = weights.iter().sum();
    if !(total_n > 0.0) {
        return Err(Error::EmptyBatch);
    }

    let (server_init, local_init) = init_prompts(setup.bank.m_p, setup.sigma_0, setup.seed, k_total);
    let mut server = server_init.clone();
    let mut client_local = local_init.clone();

    let initial_loss = {
        let mut acc = 0.0;
        for (k, data) in setup.data.iter().enumerate() {
            let bg = grad_prompts(
                data,
                setup.w,
                &server,
                &client_local[k],
                setup.theta,
                setup.class,
                setup.loss_mode,
            )?;
            acc += weights[k] / total_n * bg.mean_loss;
        }
        acc
    };

    let mut record = TrainRecord {
        eta,
        eta_searched,
        initial_loss,
        rounds: Vec::with_capacity(setup.rounds),
    };
    let mut trajectories = TrajectorySet {
        server: CoeffTrajectory::new("server"),
        client_global: (0..k_total)
            .map(|k| CoeffTrajectory::new(format!("global/{k}")))
            .collect(),
        client_local: (0..k_total)
            .map(|k| CoeffTrajectory::new(format!("local/{k}")))
            .collect(),
    };
    let mut server_acc = PsiPhiDelta::zeros(l_total);
    let mut local_acc: Vec<PsiPhiDelta> = (0..k_total).map(|_| PsiPhiDelta::zeros(l_total)).collect();
    let mut server_history = vec![server_init.clone()];
    let mut local_history: Vec<Vec<Prompt>> =
        local_init.iter().map(|p| vec![p.clone()]).collect();

    let mut client_global: Vec<Prompt> = vec![server.clone(); k_total];

    for round in 1..=setup.rounds {
        // Broadcast.
        for copy in client_global.iter_mut() {
            copy.clone_from(&server);
        }
        // Local updates, one independent task per client.
        let updates: Vec<Result<LocalUpdate>> = setup
            .data
            .par_iter()
            .enumerate()
            .map(|(k, data)| {
                local_update(
                    data,
                    setup.w,
                    &client_global[k],
                    &client_local[k],
                    setup.theta,
                    eta,
                    setup.epochs,
                    setup.loss_mode,
                    setup.class,
                    setup.divergence_bound,
                    s_total,
                    round,
                )
            })
            .collect();
        let updates: Vec<LocalUpdate> = updates.into_iter().collect::<Result<_>>()?;

        for (k, upd) in updates.iter().enumerate() {
            server_acc.add_scaled(&upd.acc_g, weights[k] / total_n);
            local_acc[k].add(&upd.acc_l);
            client_global[k] = upd.p_g.clone();
            client_local[k] = upd.p_l.clone();
        }
        server = fedavg(&client_global, &weights)?;

        let client_loss: Vec<f64> = updates.iter().map(|u| u.final_loss).collect();
        let mean_loss = client_loss
            .iter()
            .zip(weights.iter())
            .map(|(l, w)| l * w / total_n)
            .sum();
        record.rounds.push(RoundRecord {
            round,
            client_loss,
            grad_norm_global: updates.iter().map(|u| u.grad_norm_g).collect(),
            grad_norm_local: updates.iter().map(|u| u.grad_norm_l).collect(),
            mean_loss,
        });

        let mut snap = decompose(&server, &server_init, setup.bank)?;
        snap.round = round;
        snap.psi_acc = Some(server_acc.psi.clone());
        snap.varphi_acc = Some(server_acc.varphi.clone());
        trajectories.server.push(snap);
        for k in 0..k_total {
            let mut snap = decompose(&client_global[k], &server_init, setup.bank)?;
            snap.round = round;
            trajectories.client_global[k].push(snap);
            let mut snap = decompose(&client_local[k], &local_init[k], setup.bank)?;
            snap.round = round;
            snap.psi_acc = Some(local_acc[k].psi.clone());
            snap.varphi_acc = Some(local_acc[k].varphi.clone());
            trajectories.client_local[k].push(snap);
        }
        server_history.push(server.clone());
        for (k, hist) in local_history.iter_mut().enumerate() {
            hist.push(client_local[k].clone());
        }
    }

    // Final broadcast so the state satisfies the sync contract.
    for copy in client_global.iter_mut() {
        copy.clone_from(&server);
    }

    Ok(RunOutput {
        state: FederationState {
            server_global: server,
            client_global,
            client_local,
            theta: setup.theta,
            round: setup.rounds,
        },
        record,
        trajectories,
        server_history,
        local_history,
    })
}

/// Single-prompt federated baseline: every client trains one shared-role
/// prompt on the pure global feature path and the server averages it.
/// With theta = 0 the portfolio loop must reproduce this exactly.
#[allow(clippy::too_many_arguments)]
pub fn run_global_only(
    bank: &FeatureBank,
    w: &EncoderWeights,
    class: &ClassPrompts,
    data: &[ClientDataset],
    eta: f64,
    epochs: usize,
    rounds: usize,
    mode: LossMode,
    divergence_bound: f64,
    sigma_0: f64,
    seed: u64,
) -> Result<Vec<Prompt>> {
    let k_total = data.len();
    let weights: Vec<f64> = data.iter().map(|d| d.n() as f64).collect();
    let mut server = draw_prompt(bank.m_p, sigma_0, seed, "init/global");
    let dummy = Array1::zeros(bank.m_p);
    let mut history = vec![server.clone()];
    for round in 1..=rounds {
        let mut copies = Vec::with_capacity(k_total);
        for d in data {
            let mut p = server.clone();
            for step in 0..epochs {
                let bg = grad_prompts(d, w, &p, &dummy, 0.0, class, mode)?;
                p.zip_mut_with(&bg.grad_g, |pi, &g| *pi -= eta * g);
                let norm = p.dot(&p).sqrt();
                if !(norm <= divergence_bound) {
                    return Err(Error::Divergence {
                        norm,
                        bound: divergence_bound,
                        round,
                        step,
                    });
                }
            }
            copies.push(p);
        }
        server = fedavg(&copies, &weights)?;
        history.push(server.clone());
    }
    Ok(history)
}

/// Isolated per-client baseline: each client trains its own prompt on the
/// pure local feature path with no aggregation. With theta = 1 the
/// portfolio loop's local prompts must reproduce this exactly.
#[allow(clippy::too_many_arguments)]
pub fn run_isolated(
    bank: &FeatureBank,
    w: &EncoderWeights,
    class: &ClassPrompts,
    data: &[ClientDataset],
    eta: f64,
    epochs: usize,
    rounds: usize,
    mode: LossMode,
    divergence_bound: f64,
    sigma_0: f64,
    seed: u64,
) -> Result<Vec<Vec<Prompt>>> {
    let dummy = Array1::zeros(bank.m_p);
    let mut histories = Vec::with_capacity(data.len());
    for (k, d) in data.iter().enumerate() {
        let mut p = draw_prompt(bank.m_p, sigma_0, seed, &format!("init/local/{k}"));
        let mut history = vec![p.clone()];
        for round in 1..=rounds {
            for step in 0..epochs {
                let bg = grad_prompts(d, w, &dummy, &p, 1.0, class, mode)?;
                p.zip_mut_with(&bg.grad_l, |pi, &g| *pi -= eta * g);
                let norm = p.dot(&p).sqrt();
                if !(norm <= divergence_bound) {
                    return Err(Error::Divergence {
                        norm,
                        bound: divergence_bound,
                        round,
                        step,
                    });
                }
            }
            history.push(p.clone());
        }
        histories.push(history);
    }
    Ok(histories)
}
