//! Server configuration. Precedence, lowest first: built-in defaults, the
//! TOML file, `FOODBOT_*` environment variables, command-line flags (the
//! last layer is applied by the caller).

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use foodbot_core::clock::ClockMode;
use serde::{Deserialize, Serialize};

use crate::ServerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Store, graph snapshot and other state live here.
    pub data_dir: PathBuf,
    /// Corpus ingested on first start when no graph snapshot exists.
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub policies: Option<PathBuf>,
    pub goals: Option<PathBuf>,
    pub clock: ClockMode,
    /// Simulated clock origin; defaults to the wall clock at start-up.
    pub sim_start: Option<DateTime<Utc>>,
    /// Simulated seconds that pass per real second.
    pub sim_speed: u32,
    pub listen: String,
    /// Real seconds between scheduler ticks.
    pub tick_seconds: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("foodbot-data"),
            corpus: None,
            lexicon: None,
            policies: None,
            goals: None,
            clock: ClockMode::Realtime,
            sim_start: None,
            sim_speed: 60,
            listen: "127.0.0.1:8080".into(),
            tick_seconds: 60,
        }
    }
}

pub const ENV_PREFIX: &str = "FOODBOT_";

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ServerError> {
        toml::from_str(text).map_err(|e| ServerError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config, ServerError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    /// Applies `FOODBOT_<FIELD>` overrides from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ServerError> {
        for (k, v) in vars {
            let Some(field) = k.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let bad = |what: &str| ServerError::Config(format!("{k}: {what}"));
            match field {
                "DATA_DIR" => self.data_dir = v.into(),
                "CORPUS" => self.corpus = Some(v.into()),
                "LEXICON" => self.lexicon = Some(v.into()),
                "POLICIES" => self.policies = Some(v.into()),
                "GOALS" => self.goals = Some(v.into()),
                "CLOCK" => self.clock = parse_clock(&v).ok_or_else(|| bad("expected realtime or simulated"))?,
                "SIM_START" => self.sim_start = Some(v.parse().map_err(|_| bad("expected an RFC 3339 timestamp"))?),
                "SIM_SPEED" => self.sim_speed = v.parse().map_err(|_| bad("expected an integer"))?,
                "LISTEN" => self.listen = v,
                "TICK_SECONDS" => self.tick_seconds = v.parse().map_err(|_| bad("expected an integer"))?,
                // CONFIG names the file itself and is read by the caller.
                _ => {}
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.tick_seconds == 0 {
            return Err(ServerError::Config("tick_seconds must be positive".into()));
        }
        if self.sim_speed == 0 {
            return Err(ServerError::Config("sim_speed must be positive".into()));
        }
        Ok(())
    }

    pub fn graph_path(&self) -> PathBuf {
        self.data_dir.join("graph.json")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data_dir.join("store")
    }
}

pub fn parse_clock(s: &str) -> Option<ClockMode> {
    match s {
        "realtime" => Some(ClockMode::Realtime),
        "simulated" => Some(ClockMode::Simulated),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn env_overrides_file() {
        let mut c = Config::from_toml("listen = \"0.0.0.0:1\"\ntick_seconds = 5\nclock = \"simulated\"\n").unwrap();
        assert_eq!(c.clock, ClockMode::Simulated);
        c.apply_env(env(&[("FOODBOT_LISTEN", "127.0.0.1:9"), ("OTHER", "x")]))
            .unwrap();
        assert_eq!((c.listen.as_str(), c.tick_seconds), ("127.0.0.1:9", 5));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::from_toml("nonsense = 1").is_err());
        assert!(Config::default().apply_env(env(&[("FOODBOT_CLOCK", "fast")])).is_err());
        assert!(Config::default()
            .apply_env(env(&[("FOODBOT_TICK_SECONDS", "0")]))
            .is_err());
    }
}
