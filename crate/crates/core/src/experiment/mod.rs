//! Trial orchestration, the four experiments, causal classification and calibration.

pub mod calibrate;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod report;
pub mod spacetime;
pub mod trials;

pub use calibrate::{
    calibrate, calibrate_memory_lifetime, forward_observables, Calibration, CalibrationTargets, LifetimeFit,
};
pub use config::{ConfigDiagnostic, ExperimentConfig, Geometry, Schedule};
pub use engine::{derive_seed, Engine, ProtocolModel, VerifyBasis};
pub use experiments::{
    chsh_experiment, chsh_of, delay_choice_sweep, fringe_experiment, mode_matrix_experiment, model_pair_state,
    phase_sweep, tomography_experiment, tomography_of, ChshReport, DelayChoiceResult, DelayPoint, FringeReport,
    ModeMatrixReport, TomographyReport,
};
pub use report::{Provenance, Report};
pub use spacetime::{classify_interval, DetectionOrder, IntervalClass, IntervalKind, PhotonLabel, SpaceTimeEvent};
pub use trials::{run_trials, JointCounts, TrialRecord, TrialRun};
