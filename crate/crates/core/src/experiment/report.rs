use serde::Serialize;

use super::config::ExperimentConfig;
use super::engine::Engine;

/// Where a result came from. No timestamps, so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub engine: Engine,
    pub version: String,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig, engine: Engine) -> Self {
        Provenance {
            config_sha256: config.sha256(),
            seed: config.seed,
            engine,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub kind: String,
    pub provenance: Provenance,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(kind: &str, config: &ExperimentConfig, engine: Engine, result: T) -> Self {
        Report { kind: kind.to_string(), provenance: Provenance::new(config, engine), result }
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
