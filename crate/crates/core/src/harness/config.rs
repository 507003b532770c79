//! Run configuration: TOML on disk, `DPI_` environment overrides, a stable
//! content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::appraisal::NetConfig;
use crate::baselines::{validate_simplex, AgentKind, BaselineConfig};
use crate::envs::{EnvKind, EventMode, MazeConfig, QueueConfig, REWARD_DIM};
use crate::error::{DpiError, Result};
use crate::policy::LossWeights;

/// Prefix of environment overrides. `__` separates nested keys, so
/// `DPI_TRAIN__LR=1e-3` sets `train.lr`.
pub const ENV_PREFIX: &str = "DPI_";

/// `DPI_` variables that are not config overrides.
const RESERVED_VARS: [&str; 1] = ["DPI_REVISION"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Transitions collected per update.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    /// Vector share of the critic loss.
    pub xi: f64,
    pub max_grad_norm: f64,
    /// History window length `H`.
    pub history: usize,
    /// Posterior samples `K` per step.
    pub samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2.5e-4,
            batch_size: 1024,
            minibatch_size: 16,
            epochs: 1,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            xi: 0.5,
            max_grad_norm: 0.5,
            history: 3,
            samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Environment steps between greedy evaluations; 0 disables them.
    pub interval: usize,
    pub episodes: usize,
    /// Largest post-event window for PS@K and alignment.
    pub k_max: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            interval: 5000,
            episodes: 200,
            k_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Agents compared by `suite`.
    pub agents: Vec<AgentKind>,
    /// History lengths for `sweep-h`.
    pub history_values: Vec<usize>,
    /// `(γ_stab, λ_dir)` multipliers for `sweep-hparams`.
    pub hparam_grid: Vec<(f64, f64)>,
    /// Simplex lattice resolution for `pareto`; 2 gives 15 points.
    pub pareto_resolution: usize,
    pub pareto_steps: usize,
    pub pareto_seeds: Vec<u64>,
    pub pareto_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            agents: vec![
                AgentKind::Dpi,
                AgentKind::Random,
                AgentKind::Fixed,
                AgentKind::Rs,
                AgentKind::Heuristic,
                AgentKind::Envelope,
                AgentKind::Oracle,
                AgentKind::MerPpo,
                AgentKind::SrPpo,
                AgentKind::Tabq,
            ],
            history_values: vec![1, 3, 5, 7, 9],
            hparam_grid: vec![(0.5, 1.0), (1.0, 1.0), (2.0, 1.0), (1.0, 0.5), (1.0, 2.0)],
            pareto_resolution: 2,
            pareto_steps: 20_000,
            pareto_seeds: vec![0],
            pareto_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    /// Environment interactions per training run.
    pub total_steps: usize,
    pub output_dir: PathBuf,
    /// Scalarization used for MER and PS@K.
    pub omega_eval: Vec<f64>,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub net: NetConfig,
    pub eval: EvalConfig,
    pub queue: QueueConfig,
    pub maze: MazeConfig,
    pub baselines: BaselineConfig,
    pub experiments: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvKind::Queue,
            agent: AgentKind::Dpi,
            seeds: (0..10).collect(),
            total_steps: 150_000,
            output_dir: PathBuf::from("runs"),
            omega_eval: vec![1.0 / REWARD_DIM as f64; REWARD_DIM],
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            net: NetConfig::default(),
            eval: EvalConfig::default(),
            queue: QueueConfig::default(),
            maze: MazeConfig::default(),
            baselines: BaselineConfig::default(),
            experiments: ExperimentConfig::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(DpiError::config(msg))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        check(!self.seeds.is_empty(), "seeds must not be empty")?;
        check(t.lr > 0.0 && t.lr.is_finite(), "train.lr must be positive")?;
        check(
            t.batch_size > 0 && t.minibatch_size > 0,
            "batch sizes must be positive",
        )?;
        check(t.epochs > 0, "train.epochs must be positive")?;
        check(
            (0.0..=1.0).contains(&t.gamma),
            "train.gamma must be in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&t.gae_lambda),
            "train.gae_lambda must be in [0, 1]",
        )?;
        check(t.clip > 0.0 && t.clip < 1.0, "train.clip must be in (0, 1)")?;
        check(
            t.entropy_coef >= 0.0,
            "train.entropy_coef must be non-negative",
        )?;
        check((0.0..=1.0).contains(&t.xi), "train.xi must be in [0, 1]")?;
        check(
            t.max_grad_norm > 0.0,
            "train.max_grad_norm must be positive",
        )?;
        check(t.history > 0, "train.history must be positive")?;
        check(t.samples > 0, "train.samples must be positive")?;
        let l = &self.loss;
        check(
            [l.lambda_dir, l.gamma_stab, l.alpha_kl, l.beta]
                .iter()
                .all(|x| *x >= 0.0 && x.is_finite()),
            "loss weights must be finite and non-negative",
        )?;
        check(
            self.eval.episodes > 0 && self.eval.k_max > 0,
            "eval.episodes and eval.k_max must be positive",
        )?;
        validate_simplex(&self.omega_eval, "omega_eval")?;
        self.net.validate()?;
        self.queue.validate()?;
        self.maze.validate()?;
        self.baselines.validate()?;
        let x = &self.experiments;
        check(!x.agents.is_empty(), "experiments.agents must not be empty")?;
        check(
            x.history_values.iter().all(|h| *h > 0),
            "history values must be positive",
        )?;
        check(
            x.hparam_grid.iter().all(|(a, b)| *a >= 0.0 && *b >= 0.0),
            "hparam multipliers must be non-negative",
        )?;
        check(
            !x.pareto_seeds.is_empty() && x.pareto_episodes > 0,
            "pareto seeds and episodes must be set",
        )?;
        check(
            self.agent != AgentKind::Tabq || self.env == EnvKind::Queue,
            "the tabq agent runs only on queue",
        )?;
        Ok(())
    }

    /// Constants of the selected environment's event process.
    pub fn event_mode(&self) -> EventMode {
        match self.env {
            EnvKind::Queue => self.queue.events,
            EnvKind::Maze => self.maze.events,
        }
    }

    pub fn set_event_mode(&mut self, mode: EventMode) {
        match self.env {
            EnvKind::Queue => self.queue.events = mode,
            EnvKind::Maze => self.maze.events = mode,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DpiError::Serde(e.to_string()))
    }

    /// Parses a TOML document without environment overrides.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, std::iter::empty())
    }

    /// Parses a TOML document after applying `DPI_*` style overrides.
    pub fn from_toml_with<I>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| DpiError::config(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| DpiError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads a config file and applies overrides from the process environment.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| DpiError::io(path, e))?;
    RunConfig::from_toml_with(&text, std::env::vars())
}

/// Writes `config` as TOML.
pub fn save_config(config: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.to_toml()?).map_err(|e| DpiError::io(path, e))
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `DPI_A__B=v` pairs to the document; other variables are ignored.
pub fn apply_overrides<I>(doc: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| {
            k.starts_with(ENV_PREFIX)
                && k.len() > ENV_PREFIX.len()
                && !RESERVED_VARS.contains(&k.as_str())
        })
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(DpiError::config(format!("malformed override `{key}`")));
        }
        let mut table = &mut *doc;
        for part in &path[..path.len() - 1] {
            let entry = table
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| {
                DpiError::config(format!("override `{key}` descends into non-table `{part}`"))
            })?;
        }
        table.insert(path[path.len() - 1].clone(), parse_value(&raw));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr, 2.5e-4);
        assert_eq!(c.train.batch_size, 1024);
        assert_eq!(
            (c.train.gamma, c.train.gae_lambda, c.train.clip),
            (0.99, 0.95, 0.2)
        );
        assert_eq!((c.train.entropy_coef, c.train.xi), (0.01, 0.5));
        assert_eq!(
            (c.loss.alpha_kl, c.loss.lambda_dir, c.loss.gamma_stab),
            (0.1, 0.1, 0.01)
        );
        assert_eq!(
            (c.train.epochs, c.train.history, c.train.samples),
            (1, 3, 8)
        );
        assert_eq!((c.total_steps, c.seeds.len()), (150_000, 10));
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.env = EnvKind::Maze;
        c.loss.no_dir = true;
        c.queue.events = EventMode::AtStart;
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[train]\nlearnig_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, DpiError::Config(_)));
        assert!(err.to_string().contains("learnig_rate"), "{err}");
        let err = RunConfig::from_toml(
            "[baselines.queue_schedule.events]\nwarp = [0.2, 0.2, 0.2, 0.2, 0.2]\n",
        );
        assert!(err.is_err());
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let vars = vec![
            ("DPI_TRAIN__LR".to_string(), "0.001".to_string()),
            ("DPI_ENV".to_string(), "maze".to_string()),
            ("DPI_SEEDS".to_string(), "[3, 4]".to_string()),
            ("HOME".to_string(), "/root".to_string()),
            ("DPI_REVISION".to_string(), "abc123".to_string()),
        ];
        let c = RunConfig::from_toml_with("[train]\nlr = 0.5\n", vars).unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.env, EnvKind::Maze);
        assert_eq!(c.seeds, vec![3, 4]);
        let bad = vec![("DPI_TRAIN__LERN".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml_with("", bad).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for doc in [
            "seeds = []",
            "[train]\ngamma = 1.5",
            "omega_eval = [1.0, 1.0, 0.0, 0.0, 0.0]",
        ] {
            assert!(
                matches!(RunConfig::from_toml(doc), Err(DpiError::Config(_))),
                "{doc}"
            );
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.lr = 1e-3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
