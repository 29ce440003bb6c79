//! Run configuration: consortium choice, task mix, training and probe
//! settings, serialized as TOML. Every key can be overridden through the
//! environment (prefix `ORCHESTRA_`, nesting with `__`), and the resolved
//! document's SHA-256 hash is embedded in every artifact a run produces.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experts::{generate_task, Consortium, ExpertProfile, PromptInstance, TaskTag};
use crate::orchestrator::RolloutOptions;
use crate::rng::{self, lane};
use crate::training::TrainConfig;

pub const ENV_PREFIX: &str = "ORCHESTRA_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConsortiumSpec {
    /// Ten equal-capability experts, temperature-diversified.
    Homogeneous,
    /// Ten mixed-capacity experts (1B / 3B / 7B tiers).
    Heterogeneous,
    Custom {
        profiles: Vec<ExpertProfile>,
    },
}

impl ConsortiumSpec {
    pub fn build(&self, dim: usize) -> Result<Consortium> {
        match self {
            ConsortiumSpec::Homogeneous => Ok(Consortium::homogeneous(dim)),
            ConsortiumSpec::Heterogeneous => Ok(Consortium::heterogeneous(dim)),
            ConsortiumSpec::Custom { profiles } => Consortium::custom(profiles.clone(), dim),
        }
    }
}

// ExpertProfile is defined in experts.rs without deny_unknown_fields; the
// custom consortium path re-validates ids in Consortium::custom.

/// Relative draw weights over task flavors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskMix {
    pub arith: f64,
    pub code: f64,
    pub knowledge: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        TaskMix {
            arith: 1.0,
            code: 0.0,
            knowledge: 0.0,
        }
    }
}

impl TaskMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.arith, self.code, self.knowledge];
        if parts.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("task mix weights must be nonnegative".into()));
        }
        if parts.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("task mix weights sum to zero".into()));
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> TaskTag {
        let total = self.arith + self.code + self.knowledge;
        let x = u * total;
        if x < self.arith {
            TaskTag::Arith
        } else if x < self.arith + self.code {
            TaskTag::Code
        } else {
            TaskTag::Knowledge
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Size of the probe prompt set.
    pub prompts: usize,
    /// Monte-Carlo draws for s(x).
    pub mc_draws: usize,
    /// KL smoothing epsilon.
    pub epsilon: f64,
    /// Closed-form s(x) instead of sampled.
    pub closed_form: bool,
    /// Seed for perturbation permutations.
    pub perturbation_seed: u64,
    /// Seeds averaged for the random-nontop masking baseline.
    pub nontop_seeds: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            prompts: 64,
            mc_draws: 64,
            epsilon: 1e-10,
            closed_form: false,
            perturbation_seed: 0,
            nontop_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    /// Entropy threshold below which an expert stops the cascade.
    pub threshold: f64,
    /// Sigmoid sharpness of the soft stopping gates.
    pub beta: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            threshold: 0.9,
            beta: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Embedding dimension d.
    pub dim: usize,
    pub consortium: ConsortiumSpec,
    pub task_mix: TaskMix,
    /// Training corpus size.
    pub num_prompts: usize,
    pub train: TrainConfig,
    pub rollout: RolloutOptions,
    pub probe: ProbeConfig,
    pub cascade: CascadeConfig,
    /// Output directory (CLI --out overrides).
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dim: 32,
            consortium: ConsortiumSpec::Homogeneous,
            task_mix: TaskMix::default(),
            num_prompts: 200,
            train: TrainConfig::default(),
            rollout: RolloutOptions::default(),
            probe: ProbeConfig::default(),
            cascade: CascadeConfig::default(),
            out_dir: "runs/default".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::Config("dim must be at least 4".into()));
        }
        if self.num_prompts == 0 {
            return Err(Error::Config("num_prompts must be positive".into()));
        }
        self.task_mix.validate()?;
        self.train.validate()?;
        self.consortium.build(self.dim)?;
        Ok(())
    }

    /// Parse a TOML document, then apply environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_env(&text, &env_overrides())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, &[])
    }

    /// Deterministic override application: keys sorted, `__` separates
    /// nesting levels, values parsed as TOML scalars.
    pub fn from_toml_with_env(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("toml parse error: {e}")))?;
        let mut sorted: Vec<&(String, String)> = overrides.iter().collect();
        sorted.sort();
        for (key, raw) in sorted {
            apply_override(&mut value, key, raw)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 over the resolved canonical TOML document.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(hex_string(&hasher.finalize()))
    }

    pub fn consortium(&self) -> Result<Consortium> {
        self.consortium.build(self.dim)
    }

    /// The seeded training corpus.
    pub fn training_prompts(&self) -> Vec<PromptInstance> {
        let mut r = rng::stream(self.seed, &[lane::TASK]);
        (0..self.num_prompts)
            .map(|_| {
                let tag = self.task_mix.draw(rng::uniform(&mut r));
                generate_task(tag, &mut r, self.dim)
            })
            .collect()
    }

    /// The seeded probe corpus (disjoint stream from training).
    pub fn probe_prompts(&self) -> Vec<PromptInstance> {
        let mut r = rng::stream(self.seed, &[lane::TASK, lane::PROBE]);
        (0..self.probe.prompts)
            .map(|_| {
                let tag = self.task_mix.draw(rng::uniform(&mut r));
                generate_task(tag, &mut r, self.dim)
            })
            .collect()
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `ORCHESTRA_TRAIN__LEARNING_RATE=2e-3` overrides `train.learning_rate`.
pub fn env_overrides() -> Vec<(String, String)> {
    std::env::vars()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_lowercase(), v))
        })
        .collect()
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split("__").collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    let leaf = parts.last().unwrap().to_string();
    let parsed: toml::Value = parse_scalar(raw);
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key}: not a table")))?;
    table.insert(leaf, parsed);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.hash().unwrap(), cfg.hash().unwrap());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(cfg.hash().unwrap(), other.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "seed = 1\nnot_a_key = 2\n";
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))));
        let nested = "[train]\nlearning_rate = 0.001\nbogus = true\n";
        assert!(RunConfig::from_toml(nested).is_err());
    }

    #[test]
    fn env_overrides_apply_to_nested_keys() {
        let overrides = vec![
            ("seed".to_string(), "42".to_string()),
            ("train__learning_rate".to_string(), "0.002".to_string()),
            ("probe__closed_form".to_string(), "true".to_string()),
        ];
        let cfg = RunConfig::from_toml_with_env("", &overrides).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.learning_rate, 0.002);
        assert!(cfg.probe.closed_form);
    }

    #[test]
    fn prompt_generation_is_deterministic_and_mixed() {
        let mut cfg = RunConfig::default();
        cfg.task_mix = TaskMix {
            arith: 1.0,
            code: 1.0,
            knowledge: 1.0,
        };
        cfg.num_prompts = 60;
        let a = cfg.training_prompts();
        let b = cfg.training_prompts();
        assert_eq!(a.len(), 60);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.text, y.text);
        }
        let tags: std::collections::BTreeSet<&str> = a.iter().map(|p| p.task_tag.name()).collect();
        assert_eq!(tags.len(), 3);
    }

    #[test]
    fn consortium_specs_build() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.consortium().unwrap().len(), 10);
        let text = r#"
[consortium]
kind = "heterogeneous"
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let c = cfg.consortium().unwrap();
        assert!((c.profiles[0].capability - 0.3).abs() < 1e-12);
    }
}
