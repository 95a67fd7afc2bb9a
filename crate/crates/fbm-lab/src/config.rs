//! Plain-text experiment configuration: `key = value` lines grouped under
//! `[section]` headers (a TOML-compatible subset). Every field of the
//! environment, occlusion, dynamics, model, trainer, and eval settings is
//! addressable as `section.key`; command-line flags override file values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::envgen::{
    DeskEnv, DynamicsConfig, Gridworld, InitialDist, OcclusionConfig, OcclusionMode, PointMass,
    Routing,
};
use crate::error::{FbmError, Result};

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn empty() -> Config {
        Config::default()
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(FbmError::Config(format!(
                    "line {}: expected 'key = value' or '[section]', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            values.insert(full, value.to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets a value, clobbering any file-provided one (flag overrides).
    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| FbmError::Config(format!("'{key}' is not a number: '{s}'"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| FbmError::Config(format!("'{key}' is not an integer: '{s}'"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| FbmError::Config(format!("'{key}' is not an integer: '{s}'"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(s) => Err(FbmError::Config(format!(
                "'{key}' is not a boolean: '{s}'"
            ))),
        }
    }

    /// Final values, for the reproducibility manifest.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Builds the environment described by `env.*` keys.
pub fn env_from_config(cfg: &Config) -> Result<DeskEnv> {
    let kind = cfg.get_or("env.kind", "pointmass");
    let episode_length = cfg.get_usize("env.episode_length", 200)?;
    let discount = cfg.get_f64("env.discount", 0.98)?;
    let initial = InitialDist::parse(cfg.get_or("env.initial", "uniform"))?;
    match kind {
        "gridworld" => {
            let n = cfg.get_usize("env.size", 7)?;
            let slip = cfg.get_f64("env.slip", 0.1)?;
            Ok(DeskEnv::Grid(Gridworld::new(
                n,
                slip,
                episode_length,
                discount,
                initial,
            )?))
        }
        "pointmass" => Ok(DeskEnv::Point(PointMass::new(
            episode_length,
            discount,
            initial,
        )?)),
        other => Err(FbmError::Config(format!(
            "unknown env.kind '{other}' (expected gridworld|pointmass)"
        ))),
    }
}

/// Builds the occlusion wrapper from `occlusion.*` keys; routing may also be
/// given as `model.routing`.
pub fn occlusion_from_config(cfg: &Config) -> Result<OcclusionConfig> {
    let mode = match cfg.get_or("occlusion.mode", "none") {
        "none" => OcclusionMode::None,
        "noisy" => OcclusionMode::Noisy {
            sigma: cfg.get_f64("occlusion.sigma_noise", 0.2)?,
        },
        "flickering" => OcclusionMode::Flickering {
            p: cfg.get_f64("occlusion.p_flick", 0.2)?,
        },
        "hidden_velocity" => OcclusionMode::HiddenVelocity,
        other => {
            return Err(FbmError::Config(format!(
                "unknown occlusion.mode '{other}'"
            )))
        }
    };
    let routing = Routing::parse(
        cfg.get("occlusion.routing")
            .or_else(|| cfg.get("model.routing"))
            .unwrap_or("all"),
    )?;
    OcclusionConfig::new(mode, routing)
}

/// Builds the dynamics multipliers from `dynamics.*` keys. `dynamics.scale`
/// sets both coefficients at once; the individual keys win when present.
pub fn dynamics_from_config(cfg: &Config) -> Result<DynamicsConfig> {
    let both = cfg.get_f64("dynamics.scale", 1.0)?;
    let mass = cfg.get_f64("dynamics.mass_scale", both)?;
    let damping = cfg.get_f64("dynamics.damping_scale", both)?;
    DynamicsConfig::new(mass, damping)
}
