use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::ChshAngles;
use crate::lock::{Controller, DriftModel};
use crate::node::NoiseParams;
use crate::optics::InterferometerConfig;

/// Timing of one trial, all in ns from the trial start.
///
/// The write pulse fires when optical pumping ends; the Stokes gate opens
/// `stokes_delay_ns` later and the retrieval (anti-Stokes gate) `storage_ns` later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub pump_ns: f64,
    pub control_pulse_ns: f64,
    pub storage_ns: f64,
    pub stokes_delay_ns: f64,
    pub gate_ns: f64,
    pub period_ns: f64,
    /// detections closer than this count as simultaneous
    pub simultaneity_ns: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            pump_ns: 2000.0,
            control_pulse_ns: 2.0,
            storage_ns: 100.0,
            stokes_delay_ns: 0.0,
            gate_ns: 10.0,
            period_ns: 5000.0,
            simultaneity_ns: 2.0,
        }
    }
}

impl Schedule {
    pub fn write_time(&self) -> f64 {
        self.pump_ns
    }

    pub fn herald_time(&self) -> f64 {
        self.pump_ns + self.stokes_delay_ns
    }

    pub fn verify_time(&self) -> f64 {
        self.pump_ns + self.storage_ns
    }

    pub fn with_storage(&self, storage_ns: f64) -> Self {
        Schedule { storage_ns, ..self.clone() }
    }

    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let positive = [
            ("pump_ns", self.pump_ns),
            ("control_pulse_ns", self.control_pulse_ns),
            ("gate_ns", self.gate_ns),
            ("period_ns", self.period_ns),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((format!("schedule.{k}"), format!("must be positive, found {v}")));
            }
        }
        for (k, v) in [
            ("storage_ns", self.storage_ns),
            ("stokes_delay_ns", self.stokes_delay_ns),
            ("simultaneity_ns", self.simultaneity_ns),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((format!("schedule.{k}"), format!("must be >= 0, found {v}")));
            }
        }
        let last = self.herald_time().max(self.verify_time()) + self.gate_ns / 2.0;
        if last > self.period_ns {
            return Err((
                "schedule.period_ns".into(),
                format!("gates end at {last} ns, after the trial period {} ns", self.period_ns),
            ));
        }
        Ok(())
    }
}

/// One-dimensional lab layout (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub cell_separation_m: f64,
    /// D1 and D2
    pub stokes_station_m: f64,
    /// D3 and D4
    pub anti_stokes_station_m: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { cell_separation_m: 0.30, stokes_station_m: 0.0, anti_stokes_station_m: 0.30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FringeSection {
    /// phases evenly spaced over one period
    pub points: usize,
    pub trials_per_point: u64,
}

impl Default for FringeSection {
    fn default() -> Self {
        FringeSection { points: 13, trials_per_point: 10_000_000 }
    }
}

impl FringeSection {
    pub fn phases(&self) -> Vec<f64> {
        (0..self.points).map(|k| 2.0 * std::f64::consts::PI * k as f64 / self.points as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeMatrixSection {
    pub heralds: u64,
    pub bootstrap_resamples: usize,
}

impl Default for ModeMatrixSection {
    fn default() -> Self {
        ModeMatrixSection { heralds: 45_000_000, bootstrap_resamples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographySection {
    /// post-selected pairs over all settings
    pub samples: u64,
    pub bootstrap_resamples: usize,
}

impl Default for TomographySection {
    fn default() -> Self {
        TomographySection { samples: 1_000_000, bootstrap_resamples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChshSection {
    pub pairs_per_setting: u64,
    pub angles: ChshAngles,
}

impl Default for ChshSection {
    fn default() -> Self {
        ChshSection { pairs_per_setting: 2750, angles: ChshAngles::equatorial() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySection {
    pub storage_delays_ns: Vec<f64>,
    pub stokes_delay_ns: f64,
    pub trials_per_point: u64,
    pub heralds: u64,
}

impl Default for DelaySection {
    fn default() -> Self {
        DelaySection {
            storage_delays_ns: vec![60.0, 100.0, 140.0, 160.0, 180.0, 220.0, 260.0],
            stokes_delay_ns: 160.0,
            trials_per_point: 2_500_000,
            heralds: 15_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockSection {
    pub drift: DriftModel,
    pub controller: Controller,
    pub duration_s: f64,
    /// Sampled trials take their phase error from a locked trajectory instead
    /// of a Gaussian draw of width `noise.phase_jitter`.
    pub couple_trajectory: bool,
}

impl Default for LockSection {
    fn default() -> Self {
        LockSection {
            drift: DriftModel::default(),
            controller: Controller::default(),
            duration_s: 60.0,
            couple_trajectory: false,
        }
    }
}

/// Everything a run needs: physics, timing, layout, workloads and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// trials for `run`
    pub trials: u64,
    pub noise: NoiseParams,
    pub interferometer: InterferometerConfig,
    pub schedule: Schedule,
    pub geometry: Geometry,
    pub fringe: FringeSection,
    pub mode_matrix: ModeMatrixSection,
    pub tomography: TomographySection,
    pub chsh: ChshSection,
    pub delay: DelaySection,
    pub lock: LockSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            trials: 1_000_000,
            noise: NoiseParams::default(),
            interferometer: InterferometerConfig::default(),
            schedule: Schedule::default(),
            geometry: Geometry::default(),
            fringe: FringeSection::default(),
            mode_matrix: ModeMatrixSection::default(),
            tomography: TomographySection::default(),
            chsh: ChshSection::default(),
            delay: DelaySection::default(),
            lock: LockSection::default(),
        }
    }
}

/// Where and why a config was rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigDiagnostic {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l}, column {c}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "field `{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl From<ConfigDiagnostic> for Error {
    fn from(d: ConfigDiagnostic) -> Self {
        Error::Config(d.to_string())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map(|s| s.chars().count()).unwrap_or(0) + 1;
    (line, col)
}

/// Dotted key path of the assignment on `line` (1-based), using the nearest table header.
fn key_path(text: &str, line: usize) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let here = lines.get(line.checked_sub(1)?)?.trim();
    let key = here.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') {
        return here.trim_matches(|c| c == '[' || c == ']').trim().to_string().into();
    }
    let table = lines[..line - 1]
        .iter()
        .rev()
        .map(|l| l.trim())
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    Some(match table {
        Some(t) if !t.is_empty() => format!("{t}.{key}"),
        _ => key.to_string(),
    })
}

impl ExperimentConfig {
    /// Parses and validates, reporting the offending line and field on failure.
    pub fn parse_with_diagnostics(text: &str) -> std::result::Result<Self, ConfigDiagnostic> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            let message = e.message().trim().to_string();
            let field = message
                .strip_prefix("unknown field `")
                .and_then(|rest| rest.split('`').next())
                .map(|f| match line.and_then(|l| key_path(text, l)) {
                    Some(path) if path.ends_with(f) => path,
                    _ => f.to_string(),
                })
                .or_else(|| line.and_then(|l| key_path(text, l)));
            ConfigDiagnostic { line, column, field, message }
        })?;
        cfg.validate_fields().map_err(|(field, message)| ConfigDiagnostic {
            line: None,
            column: None,
            field: Some(field),
            message,
        })?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(Self::parse_with_diagnostics(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_fields().map_err(|(field, message)| Error::Config(format!("field `{field}`: {message}")))
    }

    fn validate_fields(&self) -> std::result::Result<(), (String, String)> {
        let wrap = |section: &str, e: Error| (section.to_string(), e.to_string());
        self.noise.validate().map_err(|e| wrap("noise", e))?;
        self.interferometer.validate().map_err(|e| wrap("interferometer", e))?;
        self.schedule.validate()?;
        if self.trials == 0 {
            return Err(("trials".into(), "must be > 0".into()));
        }
        if self.fringe.points < 5 {
            return Err(("fringe.points".into(), format!("need at least 5 phases, found {}", self.fringe.points)));
        }
        if self.fringe.trials_per_point == 0 || self.delay.trials_per_point == 0 {
            return Err(("trials_per_point".into(), "must be > 0".into()));
        }
        if self.delay.storage_delays_ns.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(("delay.storage_delays_ns".into(), "delays must be finite and >= 0".into()));
        }
        for (k, v) in [
            ("geometry.cell_separation_m", self.geometry.cell_separation_m),
            ("geometry.stokes_station_m", self.geometry.stokes_station_m),
            ("geometry.anti_stokes_station_m", self.geometry.anti_stokes_station_m),
        ] {
            if !v.is_finite() {
                return Err((k.into(), "must be finite".into()));
            }
        }
        if self.tomography.samples < 16 {
            return Err(("tomography.samples".into(), "need at least one sample per setting".into()));
        }
        self.lock.drift.validate().map_err(|e| wrap("lock.drift", e))?;
        self.lock.controller.validate(&self.lock.drift).map_err(|e| wrap("lock.controller", e))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, so equal configs hash equally
    /// regardless of formatting or omitted defaults.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
