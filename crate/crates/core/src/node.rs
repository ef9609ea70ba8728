//! Protocol layer: symmetric write, heralding, storage and retrieval.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    phase_shift, two_mode_squeezed, DensityOperator, ModeLabel, ModeRegister, PureState, QuantumChannel, Site, Species,
    C64, DEFAULT_N_MAX,
};
use crate::optics::{diagonal_analyzer, two_detector_povm, ClickPattern, DetectorId, DetectorModel};
use crate::polarization::TwoQubitState;

/// Physical noise and efficiency parameters of the two-node setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// excitation probability per write pulse and ensemble
    pub chi: f64,
    pub eta_ret_l: f64,
    pub eta_ret_r: f64,
    /// optical path transmission including filtering
    pub eta_trans: f64,
    pub eta_det: f64,
    /// dark-count probability per detector and gate
    pub dark_prob: f64,
    /// pump leakage through the filters, per detector and gate
    pub leakage_prob: f64,
    /// residual interferometer phase jitter (rad, standard deviation)
    pub phase_jitter: f64,
    #[serde(with = "crate::serde_util")]
    pub memory_lifetime_ns: f64,
    #[serde(with = "crate::serde_util")]
    pub amplitude_lifetime_ns: f64,
    pub n_max: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            chi: 0.011,
            eta_ret_l: 0.0165,
            eta_ret_r: 0.0146,
            eta_trans: 0.92,
            eta_det: 0.5,
            dark_prob: 1e-6,
            leakage_prob: 0.0,
            phase_jitter: 0.517,
            memory_lifetime_ns: f64::INFINITY,
            amplitude_lifetime_ns: f64::INFINITY,
            n_max: DEFAULT_N_MAX,
        }
    }
}

impl NoiseParams {
    /// Lossless, noiseless setup with the given excitation probability.
    pub fn ideal(chi: f64) -> Self {
        NoiseParams {
            chi,
            eta_ret_l: 1.0,
            eta_ret_r: 1.0,
            eta_trans: 1.0,
            eta_det: 1.0,
            dark_prob: 0.0,
            leakage_prob: 0.0,
            phase_jitter: 0.0,
            memory_lifetime_ns: f64::INFINITY,
            amplitude_lifetime_ns: f64::INFINITY,
            n_max: DEFAULT_N_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("chi", self.chi),
            ("eta_ret_l", self.eta_ret_l),
            ("eta_ret_r", self.eta_ret_r),
            ("eta_trans", self.eta_trans),
            ("eta_det", self.eta_det),
            ("dark_prob", self.dark_prob),
            ("leakage_prob", self.leakage_prob),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.chi >= 1.0 {
            return Err(Error::Domain("chi must be below 1".into()));
        }
        if !(self.phase_jitter >= 0.0 && self.phase_jitter.is_finite()) {
            return Err(Error::Domain(format!("phase_jitter = {} must be finite and >= 0", self.phase_jitter)));
        }
        for (name, v) in
            [("memory_lifetime_ns", self.memory_lifetime_ns), ("amplitude_lifetime_ns", self.amplitude_lifetime_ns)]
        {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} = {v} must be positive")));
            }
        }
        if self.n_max == 0 || self.n_max > 6 {
            return Err(Error::Domain(format!("n_max = {} must be in 1..=6", self.n_max)));
        }
        if self.chi > 0.1 {
            log::warn!("chi = {} is large; multi-excitation terms are not negligible", self.chi);
        }
        Ok(())
    }

    pub fn eta_ret(&self, site: Site) -> f64 {
        match site {
            Site::L => self.eta_ret_l,
            Site::R => self.eta_ret_r,
        }
    }

    /// Efficiency from photon emission to a click.
    pub fn detection_efficiency(&self) -> f64 {
        self.eta_trans * self.eta_det
    }

    /// Spurious click probability per detector and gate.
    pub fn background_prob(&self) -> f64 {
        1.0 - (1.0 - self.dark_prob) * (1.0 - self.leakage_prob)
    }

    /// Average coherence left by the residual phase jitter.
    pub fn jitter_coherence(&self) -> f64 {
        (-self.phase_jitter * self.phase_jitter / 2.0).exp()
    }

    pub fn storage_coherence(&self, tau_ns: f64) -> f64 {
        (-tau_ns / self.memory_lifetime_ns).exp()
    }

    pub fn detector(&self, id: DetectorId, position_m: f64, gate_ns: f64) -> DetectorModel {
        DetectorModel {
            id,
            efficiency: self.detection_efficiency(),
            dark_prob: self.background_prob(),
            position_m,
            gate_ns,
        }
    }

    pub fn node(&self, site: Site) -> Result<EnsembleNode> {
        EnsembleNode::new(site, self.memory_lifetime_ns, self.eta_ret(site))
    }
}

/// One atomic ensemble and its spin-wave memory mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleNode {
    pub site: Site,
    pub spin_wave_mode: ModeLabel,
    #[serde(with = "crate::serde_util")]
    pub memory_lifetime_ns: f64,
    pub retrieval_efficiency: f64,
}

impl EnsembleNode {
    pub fn new(site: Site, memory_lifetime_ns: f64, retrieval_efficiency: f64) -> Result<Self> {
        if !(memory_lifetime_ns > 0.0) {
            return Err(Error::Domain("memory lifetime must be positive".into()));
        }
        if !(0.0..=1.0).contains(&retrieval_efficiency) {
            return Err(Error::Domain(format!("retrieval efficiency {retrieval_efficiency} outside [0, 1]")));
        }
        Ok(EnsembleNode { site, spin_wave_mode: ModeLabel::spin_wave(site), memory_lifetime_ns, retrieval_efficiency })
    }
}

/// Which heralding detector fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeraldOutcome {
    D1,
    D2,
}

impl HeraldOutcome {
    pub fn sign(self) -> f64 {
        match self {
            HeraldOutcome::D1 => 1.0,
            HeraldOutcome::D2 => -1.0,
        }
    }

    pub fn detector(self) -> DetectorId {
        match self {
            HeraldOutcome::D1 => DetectorId::D1,
            HeraldOutcome::D2 => DetectorId::D2,
        }
    }
}

/// Conditional spin-wave state after a herald.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldedState {
    pub rho: DensityOperator,
    pub outcome: HeraldOutcome,
    pub herald_probability: f64,
}

impl HeraldedState {
    pub fn sign(&self) -> f64 {
        self.outcome.sign()
    }

    /// `(p00, p01, p10, p11)` over (L, R) occupations of the first two modes.
    pub fn populations(&self) -> [f64; 4] {
        [
            self.rho.population(&[0, 0]),
            self.rho.population(&[0, 1]),
            self.rho.population(&[1, 0]),
            self.rho.population(&[1, 1]),
        ]
    }
}

pub fn write_modes() -> [ModeLabel; 4] {
    [
        ModeLabel::spin_wave(Site::L),
        ModeLabel::stokes(Site::L),
        ModeLabel::spin_wave(Site::R),
        ModeLabel::stokes(Site::R),
    ]
}

pub fn spin_wave_modes() -> [ModeLabel; 2] {
    [ModeLabel::spin_wave(Site::L), ModeLabel::spin_wave(Site::R)]
}

pub fn stokes_modes() -> [ModeLabel; 2] {
    [ModeLabel::stokes(Site::L), ModeLabel::stokes(Site::R)]
}

/// Two equal two-mode squeezed states, the R Stokes branch carrying `e^{iφ_S}`.
pub fn symmetric_write(params: &NoiseParams, phi_s: f64) -> Result<PureState> {
    params.validate()?;
    let [swl, sl, swr, sr] = write_modes();
    let left = two_mode_squeezed(params.chi, params.n_max, [swl, sl])?;
    let right = two_mode_squeezed(params.chi, params.n_max, [swr, sr])?;
    left.tensor(&right)?.apply_unitary(&phase_shift(phi_s, params.n_max), &[sr])
}

/// Heralding POVM `{none, D1 only, D2 only, both}` on the Stokes modes.
pub fn herald_povm(params: &NoiseParams, with_background: bool) -> [DMatrix<C64>; 4] {
    let mut d1 = params.detector(DetectorId::D1, 0.0, 0.0);
    let mut d2 = params.detector(DetectorId::D2, 0.0, 0.0);
    if !with_background {
        d1 = d1.without_dark();
        d2 = d2.without_dark();
    }
    two_detector_povm(&diagonal_analyzer(), &d1, &d2, params.n_max)
}

/// Conditional spin-wave operator for one heralding pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldBranch {
    pub pattern: ClickPattern,
    pub probability: f64,
    /// normalized; `None` when the pattern cannot occur
    pub rho: Option<DensityOperator>,
}

/// Splits the written state by the signal (background-free) click pattern of
/// the heralding detectors. Background clicks are independent of the branch.
pub fn herald_branches(joint: &PureState, params: &NoiseParams) -> Result<Vec<HeraldBranch>> {
    let rho = joint.to_density();
    herald_povm(params, false)
        .iter()
        .zip(ClickPattern::ALL)
        .map(|(e, pattern)| {
            let (p, reg, m) = rho.measure_and_discard(e, &stokes_modes())?;
            let rho = if p > 0.0 { Some(DensityOperator::from_unnormalized(reg, m)?) } else { None };
            Ok(HeraldBranch { pattern, probability: p, rho })
        })
        .collect()
}

/// Conditions the written state on a click of the given heralding detector.
///
/// The other detector's state is not examined, so a background click on both
/// still heralds.
pub fn herald(joint: &PureState, outcome: HeraldOutcome, params: &NoiseParams) -> Result<HeraldedState> {
    params.validate()?;
    for m in stokes_modes() {
        joint.register().require(&m)?;
    }
    let povm = herald_povm(params, true);
    let element = match outcome {
        HeraldOutcome::D1 => &povm[ClickPattern::First.index()] + &povm[ClickPattern::Both.index()],
        HeraldOutcome::D2 => &povm[ClickPattern::Second.index()] + &povm[ClickPattern::Both.index()],
    };
    let (p, reg, m) = joint.to_density().measure_and_discard(&element, &stokes_modes())?;
    if !(p > 0.0) {
        return Err(Error::HeraldImpossible(format!("{outcome:?}")));
    }
    Ok(HeraldedState { rho: DensityOperator::from_unnormalized(reg, m)?, outcome, herald_probability: p.min(1.0) })
}

/// Memory decoherence over a storage time `tau_ns`.
pub fn store(state: &HeraldedState, tau_ns: f64, params: &NoiseParams) -> Result<HeraldedState> {
    Ok(HeraldedState { rho: store_operator(&state.rho, tau_ns, params)?, ..state.clone() })
}

pub(crate) fn store_operator(rho: &DensityOperator, tau_ns: f64, params: &NoiseParams) -> Result<DensityOperator> {
    if !(tau_ns >= 0.0) {
        return Err(Error::Domain(format!("storage time {tau_ns} must be >= 0")));
    }
    let [l, r] = spin_wave_modes();
    let mut out = QuantumChannel::dephasing(params.storage_coherence(tau_ns), l, r)?.apply(rho)?;
    if params.amplitude_lifetime_ns.is_finite() {
        let eta = (-tau_ns / params.amplitude_lifetime_ns).exp();
        for m in [l, r] {
            out = QuantumChannel::loss(eta, m)?.apply(&out)?;
        }
    }
    Ok(out)
}

/// Retrieves spin waves into anti-Stokes modes, the R branch carrying `e^{iφ_AS}`.
///
/// Other modes in the operator (e.g. Stokes modes) are left untouched.
pub fn read_operator(rho: &DensityOperator, params: &NoiseParams, phi_as: f64) -> Result<DensityOperator> {
    let mut out = rho.clone();
    for site in [Site::L, Site::R] {
        let sw = ModeLabel::spin_wave(site);
        let anti = sw.with_species(Species::AntiStokes);
        out = out.relabel(&sw, anti)?;
        out = QuantumChannel::loss(params.eta_ret(site), anti)?.apply(&out)?;
    }
    if phi_as != 0.0 {
        out = out.apply_unitary(&phase_shift(phi_as, params.n_max), &[ModeLabel::anti_stokes(Site::R)])?;
    }
    Ok(out)
}

pub fn read(state: &HeraldedState, params: &NoiseParams, phi_as: f64) -> Result<DensityOperator> {
    read_operator(&state.rho, params, phi_as)
}

fn qubit_occupations(register: &ModeRegister, s_qubit: usize, as_qubit: usize) -> Vec<usize> {
    let targets = [
        (ModeLabel::stokes(Site::L), s_qubit == 0),
        (ModeLabel::stokes(Site::R), s_qubit == 1),
        (ModeLabel::anti_stokes(Site::L), as_qubit == 0),
        (ModeLabel::anti_stokes(Site::R), as_qubit == 1),
    ];
    register
        .modes()
        .iter()
        .map(|m| targets.iter().find(|(t, _)| t == m).map(|&(_, on)| on as usize).unwrap_or(0))
        .collect()
}

/// Post-selected Stokes/anti-Stokes polarization state after `storage_ns`.
///
/// One photon in each species is kept; the Stokes qubit is first with
/// `H = L, V = R`. Optical losses act before post-selection and phase jitter
/// dephases the anti-Stokes branches.
pub fn joint_polarization_state(params: &NoiseParams, storage_ns: f64) -> Result<TwoQubitState> {
    let tau_jitter = params.jitter_coherence();
    let mut rho = symmetric_write(params, 0.0)?.to_density();
    rho = store_operator(&rho, storage_ns, params)?;
    for m in stokes_modes() {
        rho = QuantumChannel::loss(params.detection_efficiency(), m)?.apply(&rho)?;
    }
    rho = read_operator(&rho, params, 0.0)?;
    let [al, ar] = [ModeLabel::anti_stokes(Site::L), ModeLabel::anti_stokes(Site::R)];
    for m in [al, ar] {
        rho = QuantumChannel::loss(params.detection_efficiency(), m)?.apply(&rho)?;
    }
    rho = QuantumChannel::dephasing(tau_jitter, al, ar)?.apply(&rho)?;
    let reg = rho.register().clone();
    let m = Matrix4::from_fn(|i, j| {
        let row = qubit_occupations(&reg, i / 2, i % 2);
        let col = qubit_occupations(&reg, j / 2, j % 2);
        rho.element(&row, &col)
    });
    TwoQubitState::from_unnormalized(m)
}

/// Expected post-selected state in the single-pair limit.
pub fn ideal_bell_fidelity(visibility: f64) -> f64 {
    (1.0 + visibility) / 2.0
}
