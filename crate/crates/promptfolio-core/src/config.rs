//! Run configuration: the complete set of knobs for one federated run,
//! strict JSON (de)serialization, validation with field-level messages,
//! a canonical content hash, and world construction from a master seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{assemble_w, build_feature_bank, EncoderWeights, FeatureBank, NormSpec};
use crate::data::{assign_clients, gen_test_data, gen_train_data, AssignmentPolicy, ClientAssignment, ClientDataset};
use crate::encoder::{ClassPromptMode, ClassPrompts};
use crate::error::Error;
use crate::train::{run_promptfolio, EtaChoice, LossMode, RunOutput, TrainSetup};
use crate::Result;

fn default_s() -> usize {
    8
}
fn default_l() -> usize {
    32
}
fn default_m_p() -> usize {
    64
}
fn default_n_k() -> usize {
    64
}
fn default_n_eval() -> usize {
    2048
}
fn default_sigma_p() -> f64 {
    // Signal-to-noise ratio 0.5 for unit feature norms at m = 41.
    1.0 / (0.5 * 41f64.sqrt())
}
fn default_sigma_c() -> f64 {
    0.1 / 8.0
}
fn default_sigma_0() -> f64 {
    0.01 / 8.0
}
fn default_eta() -> EtaChoice {
    EtaChoice::Fixed(3e-3)
}
fn default_epochs() -> usize {
    5
}
fn default_rounds() -> usize {
    50
}
fn default_theta() -> f64 {
    0.2
}
fn default_theta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
fn default_policy() -> AssignmentPolicy {
    AssignmentPolicy::RoundRobin
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_divergence_bound() -> f64 {
    1e6
}

/// All knobs of one federated run.
///
/// `k` (the client count) is the only required field; every other knob
/// has the documented default. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of clients.
    pub k: usize,
    /// Number of local task-relevant features.
    #[serde(default = "default_s")]
    pub s: usize,
    /// Number of task-irrelevant features.
    #[serde(default = "default_l")]
    pub l: usize,
    /// Prompt dimension.
    #[serde(default = "default_m_p")]
    pub m_p: usize,
    /// Training samples per client.
    #[serde(default = "default_n_k")]
    pub n_k: usize,
    /// Evaluation samples per client.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    /// Feature norms per group.
    #[serde(default)]
    pub norms: NormSpec,
    /// Data noise std on task-irrelevant coordinates.
    #[serde(default = "default_sigma_p")]
    pub sigma_p: f64,
    /// Class prompt scale; 0 selects zero class prompts.
    #[serde(default = "default_sigma_c")]
    pub sigma_c: f64,
    /// Prompt initialization scale.
    #[serde(default = "default_sigma_0")]
    pub sigma_0: f64,
    /// Learning rate: a number, or "auto" for the halving search.
    #[serde(default = "default_eta")]
    pub eta: EtaChoice,
    /// Full-batch descent epochs per round.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Federated rounds.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Mixing coefficient for a single run.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Mixing grid for sweeps.
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    /// Local-feature assignment policy.
    #[serde(default = "default_policy")]
    pub policy: AssignmentPolicy,
    /// Master seeds; the first is used for single runs, all for sweeps.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Training loss formulation.
    #[serde(default)]
    pub loss_mode: LossMode,
    /// Prompt-norm guard; exceeding it aborts the run.
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
    /// Default output directory; flags override it.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    /// The documented default configuration for `k` clients.
    pub fn defaults(k: usize) -> Self {
        RunConfig {
            k,
            s: default_s(),
            l: default_l(),
            m_p: default_m_p(),
            n_k: default_n_k(),
            n_eval: default_n_eval(),
            norms: NormSpec::default(),
            sigma_p: default_sigma_p(),
            sigma_c: default_sigma_c(),
            sigma_0: default_sigma_0(),
            eta: default_eta(),
            epochs: default_epochs(),
            rounds: default_rounds(),
            theta: default_theta(),
            theta_grid: default_theta_grid(),
            policy: default_policy(),
            seeds: default_seeds(),
            loss_mode: LossMode::default(),
            divergence_bound: default_divergence_bound(),
            out_dir: None,
        }
    }

    /// Field-by-field range validation.
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.k < 1 {
            return err("k", "need at least one client".into());
        }
        if self.s < 1 {
            return err("s", "need at least one local feature".into());
        }
        if self.l < 1 {
            return err("l", "need at least one task-irrelevant feature".into());
        }
        let m = 1 + self.s + self.l;
        if self.m_p < m {
            return err(
                "m_p",
                format!("prompt dimension {} below feature count {m}", self.m_p),
            );
        }
        if self.n_k < 1 {
            return err("n_k", "need at least one training sample per client".into());
        }
        if self.n_eval < 1 {
            return err("n_eval", "need at least one evaluation sample".into());
        }
        for (name, v) in [
            ("norms.mu", self.norms.mu),
            ("norms.nu", self.norms.nu),
            ("norms.xi", self.norms.xi),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return err(name, format!("must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("sigma_p", self.sigma_p),
            ("sigma_c", self.sigma_c),
            ("sigma_0", self.sigma_0),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return err(name, format!("must be nonnegative and finite, got {v}"));
            }
        }
        if let EtaChoice::Fixed(v) = self.eta {
            if !(v > 0.0) || !v.is_finite() {
                return err("eta", format!("must be positive and finite, got {v}"));
            }
        }
        if self.epochs < 1 {
            return err("epochs", "need at least one epoch per round".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return err("theta", format!("must lie in [0, 1], got {}", self.theta));
        }
        if self.theta_grid.is_empty() {
            return err("theta_grid", "must not be empty".into());
        }
        for pair in self.theta_grid.windows(2) {
            if !(pair[1] > pair[0]) {
                return err(
                    "theta_grid",
                    format!("must be strictly increasing, got {} after {}", pair[1], pair[0]),
                );
            }
        }
        for &t in &self.theta_grid {
            if !(0.0..=1.0).contains(&t) {
                return err("theta_grid", format!("values must lie in [0, 1], got {t}"));
            }
        }
        if let AssignmentPolicy::Dirichlet { alpha } = self.policy {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return err("policy.alpha", format!("must be positive and finite, got {alpha}"));
            }
        }
        if self.seeds.is_empty() {
            return err("seeds", "need at least one seed".into());
        }
        if !(self.divergence_bound > 0.0) {
            return err(
                "divergence_bound",
                format!("must be positive, got {}", self.divergence_bound),
            );
        }
        Ok(())
    }

    /// Hash of the canonical serialization (sorted keys, exact floats).
    /// Identifies a configuration across runs and file names.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialization cannot fail");
        let canonical = serde_json::to_string(&value).expect("value serialization cannot fail");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Short hash prefix for embedding in file names.
    pub fn short_hash(&self) -> String {
        self.canonical_hash()[..12].to_string()
    }

    pub fn class_mode(&self) -> ClassPromptMode {
        if self.sigma_c == 0.0 {
            ClassPromptMode::Zero
        } else {
            ClassPromptMode::Gaussian {
                sigma_c: self.sigma_c,
            }
        }
    }
}

/// Everything a run needs besides the prompts: features, encoder,
/// class prompts, the client assignment, and both data splits.
#[derive(Debug, Clone)]
pub struct World {
    pub bank: FeatureBank,
    pub w: EncoderWeights,
    pub class: ClassPrompts,
    pub assignment: ClientAssignment,
    pub train: Vec<ClientDataset>,
    pub test: Vec<ClientDataset>,
}

/// Deterministic world construction from a master seed. Every component
/// draws from its own labeled substream, so worlds agree across runs
/// that share a seed regardless of theta or training knobs.
pub fn build_world(cfg: &RunConfig, seed: u64) -> Result<World> {
    cfg.validate()?;
    let bank = build_feature_bank(cfg.s, cfg.l, cfg.m_p, cfg.norms, seed)?;
    let w = assemble_w(&bank);
    let class = ClassPrompts::generate(cfg.class_mode(), &bank, &w, seed)?;
    let assignment = assign_clients(cfg.k, cfg.s, cfg.policy.clone(), seed)?;
    let train = gen_train_data(&assignment, cfg.n_k, cfg.s, cfg.l, cfg.sigma_p, seed)?;
    let test = gen_test_data(&assignment, cfg.n_eval, cfg.s, cfg.l, cfg.sigma_p, seed)?;
    Ok(World {
        bank,
        w,
        class,
        assignment,
        train,
        test,
    })
}

/// Builds the world for `seed` and trains at the given mixing
/// coefficient (overriding the config's single-run theta).
pub fn execute_at(cfg: &RunConfig, theta: f64, seed: u64) -> Result<(World, RunOutput)> {
    let world = build_world(cfg, seed)?;
    let setup = TrainSetup {
        bank: &world.bank,
        w: &world.w,
        class: &world.class,
        data: &world.train,
        theta,
        eta: cfg.eta,
        epochs: cfg.epochs,
        rounds: cfg.rounds,
        loss_mode: cfg.loss_mode,
        divergence_bound: cfg.divergence_bound,
        sigma_0: cfg.sigma_0,
        seed,
    };
    let out = run_promptfolio(&setup)?;
    Ok((world, out))
}

/// Builds the world and trains at the config's own theta and first seed.
pub fn execute(cfg: &RunConfig) -> Result<(World, RunOutput)> {
    let seed = *cfg.seeds.first().ok_or_else(|| Error::Config {
        field: "seeds".into(),
        message: "need at least one seed".into(),
    })?;
    execute_at(cfg, cfg.theta, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::defaults(8);
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"k": 4}"#).unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.s, 8);
        assert_eq!(cfg.rounds, 50);
        assert_eq!(cfg.eta, EtaChoice::Fixed(3e-3));
        assert!((cfg.sigma_p - 1.0 / (0.5 * 41f64.sqrt())).abs() < 1e-15);
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_client_count_is_an_error_naming_the_field() {
        let err = serde_json::from_str::<RunConfig>("{}").unwrap_err();
        assert!(err.to_string().contains("k"), "message was: {err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"k": 4, "wat": 1}"#).unwrap_err();
        assert!(err.to_string().contains("wat"), "message was: {err}");
        let err =
            serde_json::from_str::<RunConfig>(r#"{"k": 4, "norms": {"mu": 1.0, "bad": 2}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("bad"), "message was: {err}");
    }

    #[test]
    fn eta_accepts_numbers_and_the_auto_string() {
        let cfg: RunConfig = serde_json::from_str(r#"{"k": 2, "eta": 0.25}"#).unwrap();
        assert_eq!(cfg.eta, EtaChoice::Fixed(0.25));
        let cfg: RunConfig = serde_json::from_str(r#"{"k": 2, "eta": "auto"}"#).unwrap();
        assert_eq!(cfg.eta, EtaChoice::Auto);
        assert!(serde_json::from_str::<RunConfig>(r#"{"k": 2, "eta": "fast"}"#).is_err());
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut cfg = RunConfig::defaults(8);
        cfg.theta = 1.5;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "theta"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut cfg = RunConfig::defaults(8);
        cfg.m_p = 10;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "m_p"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut cfg = RunConfig::defaults(8);
        cfg.theta_grid = vec![0.0, 0.5, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::defaults(8);
        cfg.policy = AssignmentPolicy::Dirichlet { alpha: 0.0 };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "policy.alpha"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = RunConfig::defaults(8);
        let again = RunConfig::defaults(8);
        assert_eq!(cfg.canonical_hash(), again.canonical_hash());
        assert_eq!(cfg.canonical_hash().len(), 64);
        let mut other = RunConfig::defaults(8);
        other.rounds = 51;
        assert_ne!(cfg.canonical_hash(), other.canonical_hash());
        // Serialization order does not matter: the hash is over sorted keys.
        let reordered: RunConfig =
            serde_json::from_str(r#"{"rounds": 50, "k": 8}"#).unwrap();
        assert_eq!(reordered.canonical_hash(), cfg.canonical_hash());
    }

    #[test]
    fn world_construction_is_seed_deterministic_and_theta_independent() {
        let mut cfg = RunConfig::defaults(3);
        cfg.n_k = 8;
        cfg.n_eval = 8;
        let w1 = build_world(&cfg, 7).unwrap();
        let w2 = build_world(&cfg, 7).unwrap();
        assert_eq!(w1.assignment.s, w2.assignment.s);
        assert_eq!(w1.train[0].g, w2.train[0].g);
        assert_eq!(w1.test[2].g, w2.test[2].g);
        let w3 = build_world(&cfg, 8).unwrap();
        assert_ne!(w1.train[0].g, w3.train[0].g);
    }

    #[test]
    fn execute_runs_end_to_end_on_a_tiny_config() {
        let mut cfg = RunConfig::defaults(2);
        cfg.s = 2;
        cfg.l = 4;
        cfg.m_p = 8;
        cfg.n_k = 8;
        cfg.n_eval = 4;
        cfg.rounds = 3;
        cfg.epochs = 2;
        cfg.sigma_p = 0.3;
        let (world, out) = execute(&cfg).unwrap();
        assert_eq!(out.state.round, 3);
        assert_eq!(out.state.client_local.len(), 2);
        assert_eq!(world.test.len(), 2);
        assert_eq!(out.record.rounds.len(), 3);
    }
}
