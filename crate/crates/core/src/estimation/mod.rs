//! Estimators that turn click records into visibilities, density matrices and
//! entanglement figures.

pub mod chsh;
pub mod entanglement;
pub mod fringe;
pub mod io;
pub mod mode_matrix;
pub mod tomography;

pub use chsh::{chsh, chsh_exact, AnalyzerKind, ChshAngles, ChshResult};
pub use entanglement::{
    fidelity, two_qubit_fidelity, uhlmann_fidelity, wootters_concurrence, wootters_concurrence_matrix,
};
pub use fringe::{fit_fringe, fit_sinusoid, FringeDataset, FringeFit, FringePoint, SinusoidFit};
pub use mode_matrix::{
    concurrence_bound, concurrence_bound_bootstrap, concurrence_bound_value, expected_mode_matrix, mode_matrix,
    ConcurrenceBound, ModeCounts, ModeDensityMatrix,
};
pub use tomography::{
    james_settings, linear_inversion, maximum_likelihood, reconstruct, MleFit, MleOptions, SettingCount,
    TomographyResult,
};
