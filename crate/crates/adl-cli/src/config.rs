use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::Path;

pub const CONFIG_ENV: &str = "ADL_CONFIG";

/// Defaults shared by every subcommand, overridable by `ADL_CONFIG` and then by flags.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub width: u32,
    pub seed: u64,
    pub max_steps: u64,
    pub budget: usize,
    pub recipe_depth: usize,
    pub max_nodes: usize,
    pub trials: u64,
    pub samples: u64,
    pub jobs: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            width: 8,
            seed: 0,
            max_steps: 10_000,
            budget: 2,
            recipe_depth: 3,
            max_nodes: 1_000,
            trials: 10_000,
            samples: 10_000,
            jobs: 1,
        }
    }
}

impl Config {
    pub fn parse(src: &str) -> Result<Config> {
        let c: Config = toml::from_str(src)?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let src = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&src).with_context(|| format!("in config {}", path.display()))
    }

    /// The file named by `ADL_CONFIG`, or the defaults.
    pub fn from_env() -> Result<Config> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Config::load(Path::new(&p)),
            _ => Ok(Config::default()),
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(2..=64).contains(&self.width) {
            bail!("width must lie in 2..=64, got {}", self.width);
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        Ok(())
    }
}
