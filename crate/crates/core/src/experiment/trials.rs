use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lock::run_locked;
use crate::optics::{ClickPattern, DetectionEvent, DetectorId};

use super::config::ExperimentConfig;
use super::engine::{derive_seed, stream_rng, Engine, ProtocolModel, VerifyBasis};

/// Trials per independent random stream.
pub const CHUNK_TRIALS: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coincidences {
    pub d1_d3: bool,
    pub d1_d4: bool,
    pub d2_d3: bool,
    pub d2_d4: bool,
}

/// One heralded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub herald: Vec<DetectionEvent>,
    /// extra anti-Stokes phase including this trial's jitter draw
    pub phase: f64,
    pub verify: Vec<DetectionEvent>,
    pub coincidences: Coincidences,
}

/// Counts `[herald pattern][verify pattern]`; unheralded trials sit in `[0][0]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    pub trials: u64,
    pub table: [[u64; 4]; 4],
}

impl JointCounts {
    pub fn merge(mut self, other: JointCounts) -> JointCounts {
        self.trials += other.trials;
        for h in 0..4 {
            for v in 0..4 {
                self.table[h][v] += other.table[h][v];
            }
        }
        self
    }

    /// Trials in which the given heralding detector (D1 = first) clicked.
    pub fn heralds(&self, first: bool) -> u64 {
        let r = if first { [1, 3] } else { [2, 3] };
        r.iter().map(|&h| self.table[h].iter().sum::<u64>()).sum()
    }

    /// Coincidences between a herald detector and a verify detector, each inclusive.
    pub fn coincidences(&self, herald_first: bool, verify_first: bool) -> u64 {
        let r = if herald_first { [1, 3] } else { [2, 3] };
        let c = if verify_first { [1, 3] } else { [2, 3] };
        r.iter().flat_map(|&h| c.iter().map(move |&v| (h, v))).map(|(h, v)| self.table[h][v]).sum()
    }
}

/// Output of a batch of trials.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRun {
    pub engine: Engine,
    pub trials: u64,
    /// exact joint probabilities in the layout of [`JointCounts::table`]
    pub probabilities: [[f64; 4]; 4],
    pub counts: Option<JointCounts>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

fn events(
    pattern: ClickPattern,
    ids: [DetectorId; 2],
    positions: [f64; 2],
    time_ns: f64,
    trial: u64,
) -> Vec<DetectionEvent> {
    [pattern.first(), pattern.second()]
        .iter()
        .zip(ids.iter().zip(positions.iter()))
        .filter(|(on, _)| **on)
        .map(|(_, (&detector, &position_m))| DetectionEvent { detector, time_ns, position_m, trial })
        .collect()
}

/// Settled phase errors of a locked trajectory plus its step in seconds.
fn locked_phase_errors(config: &ExperimentConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    let l = &config.lock;
    let report = run_locked(&l.drift, &l.controller, l.duration_s, derive_seed(seed, "lock", 0))?;
    let errors = report.settled_deviations();
    if errors.is_empty() {
        return Err(Error::Validation("locked trajectory has no settled samples".into()));
    }
    Ok((errors, l.drift.dt))
}

/// Draws `trials` independent trials at extra phase `theta`.
///
/// Chunk `k` of [`CHUNK_TRIALS`] trials uses stream `k` of the generator
/// seeded by `seed`, so results do not depend on the thread count. The verify
/// side is only simulated for heralded trials. With `lock.couple_trajectory`
/// trial `i` at time `i * period` reads its phase error off a locked trajectory.
pub fn sample_trials(
    model: &ProtocolModel,
    config: &ExperimentConfig,
    theta: f64,
    trials: u64,
    seed: u64,
    keep_records: bool,
) -> Result<(JointCounts, Vec<TrialRecord>)> {
    let coupled = if config.lock.couple_trajectory {
        Some((locked_phase_errors(config, seed)?, model.without_jitter()))
    } else {
        None
    };
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let s = &config.schedule;
    let g = &config.geometry;
    let (herald_t, verify_t, period) = (s.herald_time(), s.verify_time(), s.period_ns);
    let parts: Vec<(JointCounts, Vec<TrialRecord>)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let start = k * CHUNK_TRIALS;
            let end = (start + CHUNK_TRIALS).min(trials);
            let mut counts = JointCounts { trials: end - start, table: [[0; 4]; 4] };
            let mut records = Vec::new();
            for trial in start..end {
                let (h, phase, v) = match &coupled {
                    Some(((errors, dt), quiet)) => {
                        let t_s = trial as f64 * period * 1e-9;
                        let offset = errors[(t_s / dt) as usize % errors.len()];
                        quiet.sample_trial(theta + offset, &mut rng)
                    }
                    None => model.sample_trial(theta, &mut rng),
                };
                let vi = v.unwrap_or(ClickPattern::None);
                counts.table[h.index()][vi.index()] += 1;
                if keep_records && h != ClickPattern::None {
                    let t0 = trial as f64 * period;
                    records.push(TrialRecord {
                        trial,
                        herald: events(
                            h,
                            [DetectorId::D1, DetectorId::D2],
                            [g.stokes_station_m; 2],
                            t0 + herald_t,
                            trial,
                        ),
                        phase,
                        verify: events(
                            vi,
                            [DetectorId::D3, DetectorId::D4],
                            [g.anti_stokes_station_m; 2],
                            t0 + verify_t,
                            trial,
                        ),
                        coincidences: Coincidences {
                            d1_d3: h.first() && vi.first(),
                            d1_d4: h.first() && vi.second(),
                            d2_d3: h.second() && vi.first(),
                            d2_d4: h.second() && vi.second(),
                        },
                    });
                }
            }
            (counts, records)
        })
        .collect();
    let mut total = JointCounts::default();
    let mut records = Vec::new();
    for (c, r) in parts {
        total = total.merge(c);
        records.extend(r);
    }
    Ok((total, records))
}

/// Runs `config.trials` trials of the configured interferometer and storage time.
pub fn run_trials(
    config: &ExperimentConfig,
    engine: Engine,
    basis: VerifyBasis,
    keep_records: bool,
) -> Result<TrialRun> {
    config.validate()?;
    let model = ProtocolModel::new(&config.noise, &config.interferometer, config.schedule.storage_ns, basis)?;
    let probabilities = model.joint_probabilities(0.0);
    let (counts, records) = match engine {
        Engine::Exact => (None, Vec::new()),
        Engine::Sampling => {
            let seed = derive_seed(config.seed, "run", 0);
            let (c, r) = sample_trials(&model, config, 0.0, config.trials, seed, keep_records)?;
            (Some(c), r)
        }
    };
    Ok(TrialRun { engine, trials: config.trials, probabilities, counts, records })
}
