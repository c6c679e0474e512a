//! `key = value` configuration file.
//!
//! Recognised keys: `port`, `weights_1d`, `weights_2d`, `scaler`,
//! `session_ttl_s`, `static_dir`, and `level1.<field>` / `level2.<field>`
//! where `<field>` is one of `click_threshold`, `countdown_ms`, `show_ms`,
//! `rows`, `cols`, `swap_interval_ms` (`none` or `0` disables swaps).
//! Blank lines and lines starting with `#` are ignored.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use memscreen_core::game::{GameConfig, LevelConfig};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SESSION_TTL_S: u64 = 1800;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("invalid game settings: {0}")]
    Game(#[from] memscreen_core::game::GameError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub weights_1d: Option<PathBuf>,
    pub weights_2d: Option<PathBuf>,
    /// Scaler JSON; defaults to `<weights_1d>.scaler.json`.
    pub scaler: Option<PathBuf>,
    pub session_ttl_s: u64,
    pub static_dir: Option<PathBuf>,
    pub game: GameConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            weights_1d: None,
            weights_2d: None,
            scaler: None,
            session_ttl_s: DEFAULT_SESSION_TTL_S,
            static_dir: None,
            game: GameConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn set_level_field(level: &mut LevelConfig, line: usize, key: &str, field: &str, value: &str) -> Result<(), ConfigError> {
    match field {
        "click_threshold" => level.click_threshold = parse_num(line, key, value)?,
        "countdown_ms" => level.countdown_ms = parse_num(line, key, value)?,
        "show_ms" => level.show_ms = parse_num(line, key, value)?,
        "rows" => level.rows = parse_num(line, key, value)?,
        "cols" => level.cols = parse_num(line, key, value)?,
        "swap_interval_ms" => {
            level.swap_interval_ms = match value {
                "none" | "0" => None,
                v => Some(parse_num(line, key, v)?),
            }
        }
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "port" => cfg.port = parse_num(line, key, value)?,
                "weights_1d" => cfg.weights_1d = Some(value.into()),
                "weights_2d" => cfg.weights_2d = Some(value.into()),
                "scaler" => cfg.scaler = Some(value.into()),
                "session_ttl_s" => cfg.session_ttl_s = parse_num(line, key, value)?,
                "static_dir" => cfg.static_dir = Some(value.into()),
                _ => match key.split_once('.') {
                    Some(("level1", field)) => set_level_field(&mut cfg.game.level1, line, key, field, value)?,
                    Some(("level2", field)) => set_level_field(&mut cfg.game.level2, line, key, field, value)?,
                    _ => {
                        return Err(ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                        })
                    }
                },
            }
        }
        cfg.game.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn scaler_path(&self) -> Option<PathBuf> {
        self.scaler
            .clone()
            .or_else(|| self.weights_1d.as_ref().map(|w| scaler_sidecar(w)))
    }
}

/// `<weights>.scaler.json`, written next to trained health weights.
pub fn scaler_sidecar(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".scaler.json");
    PathBuf::from(s)
}
