use std::path::{Path, PathBuf};

use guardrl::guardian::PsosConfig;
use guardrl::metrics::{EvalConfig, VitalThreshold};
use guardrl::models::{CostRules, KnnConfig, RewardRule, Weighting};
use guardrl::policy::{Architecture, TrainConfig, TrainMode};
use guardrl::synthetic::{GenerationConfig, SyntheticClinicalCmdp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// One JSON document describing a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Synthetic environment to generate data from; exclusive with `dataset_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    /// Expected hex SHA-256 of the dataset CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
    pub guardian: GuardianSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub generation: GenerationConfig,
    /// Environment parameters; the built-in synthetic environment when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<SyntheticClinicalCmdp>,
    #[serde(default)]
    pub support_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuardianSection {
    Psos {
        d: u32,
        alpha_c: f64,
        /// Fit on an evenly strided subsample of at most this many points.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_points: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        solver: Option<PsosConfig>,
    },
    Kde {
        alpha: f64,
        /// Shared bandwidth in standardized units; Scott's rule when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_points: Option<usize>,
    },
    Knn {
        k: usize,
        alpha: f64,
        #[serde(default = "default_calibration_fraction")]
        calibration_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_calibration_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    #[serde(default)]
    pub weighting: Weighting,
    /// Reward and cost rules; taken from the synthetic environment when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostRules>,
}

impl ModelSection {
    pub fn knn(&self) -> KnnConfig {
        KnnConfig { k: self.k, weighting: self.weighting }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    pub gamma: f64,
    pub horizon: usize,
    pub cost_thresholds: Vec<f64>,
    pub ood_threshold: f64,
    #[serde(default)]
    pub tightening: f64,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    #[serde(default = "defaults::rollouts")]
    pub rollouts_per_iteration: usize,
    #[serde(default = "defaults::step_size")]
    pub step_size: f64,
    #[serde(default = "defaults::max_halvings")]
    pub max_halvings: u32,
    #[serde(default = "defaults::line_search_rollouts")]
    pub line_search_rollouts: usize,
    #[serde(default = "defaults::dual_step_size")]
    pub dual_step_size: f64,
}

fn default_mode() -> TrainMode {
    TrainMode::HardConstraint
}

fn default_architecture() -> Architecture {
    Architecture::Affine
}

mod defaults {
    use guardrl::policy::TrainConfig;

    pub fn rollouts() -> usize {
        TrainConfig::default().rollouts_per_iteration
    }
    pub fn step_size() -> f64 {
        TrainConfig::default().step_size
    }
    pub fn max_halvings() -> u32 {
        TrainConfig::default().max_halvings
    }
    pub fn line_search_rollouts() -> usize {
        TrainConfig::default().line_search_rollouts
    }
    pub fn dual_step_size() -> f64 {
        TrainConfig::default().dual_step_size
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            rollouts_per_iteration: self.rollouts_per_iteration,
            step_size: self.step_size,
            max_halvings: self.max_halvings,
            line_search_rollouts: self.line_search_rollouts,
            dual_step_size: self.dual_step_size,
            tightening: self.tightening,
            mode: self.mode.clone(),
            seed,
        }
    }
}

/// Where evaluation rollouts for ME and the reward summary run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simulator {
    /// The fitted kNN model.
    #[default]
    Model,
    /// The synthetic environment's true dynamics.
    TrueEnv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concordance_epsilon: Option<f64>,
    #[serde(default)]
    pub intensification_margin: f64,
    pub vitals: Vec<VitalThreshold>,
    pub n_rollouts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulator: Simulator,
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            concordance_epsilon: self.concordance_epsilon,
            intensification_margin: self.intensification_margin,
            vitals: self.vitals.clone(),
            n_me_rollouts: self.n_rollouts,
            seed: self.seed,
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed {
            if let Some(env) = &mut config.env {
                env.generation.seed = seed;
            }
            config.train.seeds = vec![seed];
            if let GuardianSection::Knn { seed: s, .. } = &mut config.guardian {
                *s = seed;
            }
        }
        if let Some(out) = &overrides.output {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }

    /// Schema checks that need no data.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        match (&self.env, &self.dataset_path) {
            (Some(_), Some(_)) => return bad("set exactly one of env and dataset_path, not both".into()),
            (None, None) => return bad("set one of env or dataset_path".into()),
            _ => {}
        }
        if let Some(env) = &self.env {
            env.generation.validate()?;
            if env.generation.n_trajectories == 0 {
                return bad("env.generation.n_trajectories must be positive".into());
            }
            if let Some(d) = &env.dynamics {
                d.validate()?;
            }
        }
        match &self.guardian {
            GuardianSection::Psos { d, alpha_c, max_points, .. } => {
                if *d == 0 {
                    return bad("guardian.d must be at least 1".into());
                }
                if !(*alpha_c > 0.0 && *alpha_c < 1.0) {
                    return bad(format!("guardian.alpha_c must lie in (0,1), got {alpha_c}"));
                }
                if *max_points == Some(0) {
                    return bad("guardian.max_points must be positive".into());
                }
            }
            GuardianSection::Kde { alpha, h, max_points } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("guardian.alpha must lie in (0,1), got {alpha}"));
                }
                if h.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
                    return bad("guardian.h must be positive".into());
                }
                if *max_points == Some(0) {
                    return bad("guardian.max_points must be positive".into());
                }
            }
            GuardianSection::Knn { k, alpha, calibration_fraction, .. } => {
                if *k == 0 {
                    return bad("guardian.k must be at least 1".into());
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("guardian.alpha must lie in (0,1), got {alpha}"));
                }
                if !(*calibration_fraction > 0.0 && *calibration_fraction < 1.0) {
                    return bad("guardian.calibration_fraction must lie in (0,1)".into());
                }
            }
        }
        if self.model.k == 0 {
            return bad("model.k must be at least 1".into());
        }
        let t = &self.train;
        if !(t.gamma > 0.0 && t.gamma < 1.0) {
            return bad(format!("train.gamma must lie in (0,1), got {}", t.gamma));
        }
        if !(t.ood_threshold >= 0.0) {
            return bad("train.ood_threshold must be nonnegative".into());
        }
        if t.seeds.is_empty() {
            return bad("train.seeds must not be empty".into());
        }
        if let TrainMode::RewardPenalty { penalty } = t.mode {
            if !(penalty > 0.0) {
                return bad("train.mode.penalty must be positive".into());
            }
        }
        t.train_config(0).validate(&t.cost_thresholds)?;
        if let Some(env) = &self.env {
            let l = env.dynamics.as_ref().map_or_else(|| SyntheticClinicalCmdp::default().costs.len(), |d| d.costs.len());
            let l = self.model.costs.as_ref().map_or(l, CostRules::len);
            if t.cost_thresholds.len() != l {
                return bad(format!("train.cost_thresholds has {} entries for {l} cost rules", t.cost_thresholds.len()));
            }
            if self.eval.vitals.iter().any(|v| v.feature >= 4) {
                return bad("eval.vitals feature index outside the synthetic state".into());
            }
        }
        let e = &self.eval;
        if e.vitals.is_empty() {
            return bad("eval.vitals must name at least one feature".into());
        }
        if e.concordance_epsilon.is_some_and(|x| !(x > 0.0)) {
            return bad("eval.concordance_epsilon must be positive".into());
        }
        if !(e.intensification_margin >= 0.0) {
            return bad("eval.intensification_margin must be nonnegative".into());
        }
        if e.n_rollouts == 0 {
            return bad("eval.n_rollouts must be positive".into());
        }
        if e.simulator == Simulator::TrueEnv && self.env.is_none() {
            return bad("eval.simulator = true_env needs an env section".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form after overrides. The output
    /// directory is left out so identical runs in different places agree.
    pub fn sha256(&self) -> String {
        let canonical = RunConfig { output_dir: PathBuf::new(), ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
