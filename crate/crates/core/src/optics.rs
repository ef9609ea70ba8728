//! Measurement optics: wave plates and the geometric phase shifter, threshold
//! detectors, fringe probabilities, click sampling and time-window routing.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{passive, DensityOperator, ModeLabel, ModeRegister, Site, C64};

fn rotation(theta: f64) -> Matrix2<C64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(C64::new(c, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0), C64::new(c, 0.0))
}

/// Jones matrix of a linear retarder with fast axis at `angle` from H.
pub fn waveplate(retardance: f64, angle: f64) -> Matrix2<C64> {
    let d = Matrix2::new(
        C64::from_polar(1.0, -retardance / 2.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, retardance / 2.0),
    );
    rotation(-angle) * d * rotation(angle)
}

pub fn half_wave_plate(angle: f64) -> Matrix2<C64> {
    waveplate(PI, angle)
}

pub fn quarter_wave_plate(angle: f64) -> Matrix2<C64> {
    waveplate(PI / 2.0, angle)
}

/// QWP(45°) · HWP(θ) · QWP(45°) with `θ = (φ - π)/4`.
///
/// The sandwich is diagonal with relative V/H phase `π + 4θ`, so this choice
/// of `θ` gives `diag(1, e^{iφ})` up to a global phase.
pub fn pb_phase_unitary(phi: f64) -> Matrix2<C64> {
    let q = quarter_wave_plate(FRAC_PI_4);
    q * half_wave_plate((phi - PI) / 4.0) * q
}

/// Removes the global phase so that the (0,0) entry, or failing that the
/// first nonzero entry, is real and positive.
pub fn strip_global_phase(u: &Matrix2<C64>) -> Matrix2<C64> {
    let pivot = u.iter().find(|z| z.norm() > 1e-12).copied().unwrap_or(C64::new(1.0, 0.0));
    u * C64::from_polar(1.0, -pivot.arg())
}

/// Balanced analyzer in front of a PBS: H output is (H + V)/√2.
pub fn diagonal_analyzer() -> Matrix2<C64> {
    strip_global_phase(&half_wave_plate(PI / 8.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    HalfWave,
    QuarterWave,
    /// geometric phase shifter, `angle` is the imposed relative phase
    PhaseShifter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalElement {
    pub kind: ElementKind,
    pub angle: f64,
}

impl OpticalElement {
    pub fn jones(&self) -> Matrix2<C64> {
        match self.kind {
            ElementKind::HalfWave => half_wave_plate(self.angle),
            ElementKind::QuarterWave => quarter_wave_plate(self.angle),
            ElementKind::PhaseShifter => pb_phase_unitary(self.angle),
        }
    }
}

/// Interferometer phases and the extra elements in the verifying arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferometerConfig {
    /// Stokes-path phase difference, applied by the write stage.
    pub phi_s: f64,
    /// Anti-Stokes-path phase difference, applied by the read stage.
    pub phi_as: f64,
    /// Scanned geometric phase in the verifying arm.
    pub pb_phase: f64,
    /// Applied in list order before the phase shifter.
    pub elements: Vec<OpticalElement>,
}

impl Default for InterferometerConfig {
    fn default() -> Self {
        InterferometerConfig { phi_s: 0.0, phi_as: 0.0, pb_phase: 0.0, elements: Vec::new() }
    }
}

impl InterferometerConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.phi_s, self.phi_as, self.pb_phase]
            .iter()
            .chain(self.elements.iter().map(|e| &e.angle))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("interferometer angles must be finite".into()));
        }
        Ok(())
    }

    pub fn with_pb_phase(&self, pb_phase: f64) -> Self {
        InterferometerConfig { pb_phase, ..self.clone() }
    }

    /// Jones matrix from the combined anti-Stokes beam to the output PBS.
    pub fn analyzer(&self) -> Matrix2<C64> {
        let arm = self.elements.iter().fold(Matrix2::identity(), |acc, e| e.jones() * acc);
        diagonal_analyzer() * pb_phase_unitary(self.pb_phase) * arm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorId {
    D1,
    D2,
    D3,
    D4,
}

/// Threshold single-photon detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub id: DetectorId,
    pub efficiency: f64,
    pub dark_prob: f64,
    pub position_m: f64,
    pub gate_ns: f64,
}

impl DetectorModel {
    pub fn new(id: DetectorId, efficiency: f64, dark_prob: f64, position_m: f64, gate_ns: f64) -> Result<Self> {
        let d = DetectorModel { id, efficiency, dark_prob, position_m, gate_ns };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("efficiency", self.efficiency), ("dark_prob", self.dark_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("detector {:?} {name} = {v} outside [0, 1]", self.id)));
            }
        }
        Ok(())
    }

    /// Same detector with dark counts switched off.
    pub fn without_dark(&self) -> Self {
        DetectorModel { dark_prob: 0.0, ..self.clone() }
    }

    /// `P(no click | m photons) = (1 - dark)(1 - η)^m`.
    pub fn no_click(&self, photons: usize) -> f64 {
        (1.0 - self.dark_prob) * (1.0 - self.efficiency).powi(photons as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detector: DetectorId,
    pub time_ns: f64,
    pub position_m: f64,
    pub trial: u64,
}

/// Joint outcome of a detector pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClickPattern {
    None,
    First,
    Second,
    Both,
}

impl ClickPattern {
    pub const ALL: [ClickPattern; 4] =
        [ClickPattern::None, ClickPattern::First, ClickPattern::Second, ClickPattern::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_clicks(first: bool, second: bool) -> Self {
        match (first, second) {
            (false, false) => ClickPattern::None,
            (true, false) => ClickPattern::First,
            (false, true) => ClickPattern::Second,
            (true, true) => ClickPattern::Both,
        }
    }

    pub fn first(self) -> bool {
        matches!(self, ClickPattern::First | ClickPattern::Both)
    }

    pub fn second(self) -> bool {
        matches!(self, ClickPattern::Second | ClickPattern::Both)
    }

    pub fn label(self) -> &'static str {
        match self {
            ClickPattern::None => "none",
            ClickPattern::First => "first",
            ClickPattern::Second => "second",
            ClickPattern::Both => "both",
        }
    }
}

/// POVM `{none, first, second, both}` of two threshold detectors placed on the
/// outputs of the passive optics `u` acting on two input modes.
pub fn two_detector_povm(
    u: &Matrix2<C64>,
    first: &DetectorModel,
    second: &DetectorModel,
    n_max: usize,
) -> [DMatrix<C64>; 4] {
    let q1 = |m: usize| first.no_click(m);
    let q2 = |m: usize| second.no_click(m);
    [
        passive::pull_back_diagonal(u, n_max, |a, b| q1(a) * q2(b)),
        passive::pull_back_diagonal(u, n_max, |a, b| (1.0 - q1(a)) * q2(b)),
        passive::pull_back_diagonal(u, n_max, |a, b| q1(a) * (1.0 - q2(b))),
        passive::pull_back_diagonal(u, n_max, |a, b| (1.0 - q1(a)) * (1.0 - q2(b))),
    ]
}

pub fn anti_stokes_modes() -> [ModeLabel; 2] {
    [ModeLabel::anti_stokes(Site::L), ModeLabel::anti_stokes(Site::R)]
}

/// Outcome probabilities of the verifying detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeProbabilities {
    pub none: f64,
    pub d3: f64,
    pub d4: f64,
    pub both: f64,
}

impl FringeProbabilities {
    pub fn from_array(p: [f64; 4]) -> Self {
        FringeProbabilities { none: p[0], d3: p[1], d4: p[2], both: p[3] }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.none, self.d3, self.d4, self.both]
    }

    pub fn total(&self) -> f64 {
        self.none + self.d3 + self.d4 + self.both
    }

    /// `P(D3) / (P(D3) + P(D4))` over exclusive clicks.
    pub fn conditional_d3(&self) -> f64 {
        let s = self.d3 + self.d4;
        if s > 0.0 {
            self.d3 / s
        } else {
            0.5
        }
    }
}

/// Fringe probabilities of D3/D4 behind the interferometer's analyzer.
///
/// The state's own coherence already carries `φ_S + φ_AS`; the analyzer adds
/// `pb_phase` and the extra elements.
pub fn detect_fringe_probabilities(
    rho_as: &DensityOperator,
    config: &InterferometerConfig,
    d3: &DetectorModel,
    d4: &DetectorModel,
) -> Result<FringeProbabilities> {
    config.validate()?;
    let modes = anti_stokes_modes();
    let povm = two_detector_povm(&config.analyzer(), d3, d4, rho_as.register().n_max());
    let mut p = [0.0; 4];
    for (slot, e) in p.iter_mut().zip(povm.iter()) {
        *slot = rho_as.expectation(e, &modes)?.max(0.0);
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|x| *x /= total);
    }
    Ok(FringeProbabilities::from_array(p))
}

/// Outcome probabilities as trigonometric polynomials of an extra phase `θ`
/// imprinted on one mode: `P(θ) = Re Σ_k c_k e^{ikθ}`.
///
/// Gaussian phase noise with standard deviation `σ` multiplies harmonic `k`
/// by `exp(-k²σ²/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResponse {
    n_max: usize,
    /// `coeffs[outcome][k + n_max]`
    coeffs: Vec<Vec<C64>>,
}

impl PhaseResponse {
    /// `rho` may be unnormalized; probabilities then carry its weight.
    pub fn new(
        register: &ModeRegister,
        rho: &DMatrix<C64>,
        phase_mode: &ModeLabel,
        povm: &[DMatrix<C64>],
        targets: &[ModeLabel],
    ) -> Result<Self> {
        let n_max = register.n_max();
        let pos = register.require(phase_mode)?;
        let split_positions: Vec<usize> = targets.iter().map(|t| register.require(t)).collect::<Result<_>>()?;
        let base = register.local_dim();
        let rest: Vec<usize> = (0..register.n_modes()).filter(|p| !split_positions.contains(p)).collect();
        let dim = register.dim();
        let occ: Vec<Vec<usize>> = (0..dim).map(|i| register.occupations(i)).collect();
        let t_of: Vec<usize> = occ.iter().map(|o| split_positions.iter().fold(0, |a, &p| a * base + o[p])).collect();
        let r_of: Vec<usize> = occ.iter().map(|o| rest.iter().fold(0, |a, &p| a * base + o[p])).collect();
        let mut coeffs = vec![vec![C64::new(0.0, 0.0); 2 * n_max + 1]; povm.len()];
        for (o, e) in povm.iter().enumerate() {
            for n in 0..dim {
                for m in 0..dim {
                    if r_of[n] != r_of[m] {
                        continue;
                    }
                    let x = e[(t_of[n], t_of[m])] * rho[(m, n)];
                    if x.re == 0.0 && x.im == 0.0 {
                        continue;
                    }
                    let k = occ[m][pos] as i64 - occ[n][pos] as i64 + n_max as i64;
                    coeffs[o][k as usize] += x;
                }
            }
        }
        Ok(PhaseResponse { n_max, coeffs })
    }

    pub fn outcomes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficient(&self, outcome: usize, harmonic: i64) -> C64 {
        self.coeffs[outcome][(harmonic + self.n_max as i64) as usize]
    }

    /// Probabilities at phase `theta` averaged over Gaussian jitter `sigma`.
    pub fn evaluate(&self, theta: f64, sigma: f64) -> Vec<f64> {
        let nm = self.n_max as i64;
        self.coeffs
            .iter()
            .map(|c| {
                let mut acc = 0.0;
                for k in -nm..=nm {
                    let damp = (-(k * k) as f64 * sigma * sigma / 2.0).exp();
                    acc += (c[(k + nm) as usize] * C64::from_polar(1.0, k as f64 * theta)).re * damp;
                }
                acc.max(0.0)
            })
            .collect()
    }

    /// First-harmonic visibility `2|c_1|/c_0` of one outcome.
    pub fn visibility(&self, outcome: usize, sigma: f64) -> f64 {
        let c0 = self.coefficient(outcome, 0).re;
        let c1 = self.coefficient(outcome, 1);
        if c0 <= 0.0 {
            return 0.0;
        }
        2.0 * c1.norm() * (-sigma * sigma / 2.0).exp() / c0
    }
}

/// Validated probabilities over a detector pair's signal patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickDistribution([f64; 4]);

impl ClickDistribution {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|x| !(0.0..=1.0 + 1e-12).contains(x)) {
            return Err(Error::Validation(format!("click probabilities {p:?} outside [0, 1]")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("click probabilities sum to {s}")));
        }
        Ok(ClickDistribution(p))
    }

    pub fn probabilities(&self) -> [f64; 4] {
        self.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ClickPattern {
        sample_index(&self.0, rng.random::<f64>())
    }
}

pub(crate) fn sample_index(p: &[f64; 4], u: f64) -> ClickPattern {
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return ClickPattern::ALL[i];
        }
    }
    // rounding: fall back to the last outcome with nonzero weight
    let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    ClickPattern::ALL[last]
}

/// Samples one gate of a detector pair: signal pattern from `signal`, then
/// independent dark counts per detector.
pub fn sample_clicks<R: Rng + ?Sized>(
    signal: &ClickDistribution,
    detectors: [&DetectorModel; 2],
    rng: &mut R,
    gate_time_ns: f64,
    trial: u64,
) -> Vec<DetectionEvent> {
    let pattern = signal.sample(rng);
    let clicks = [pattern.first(), pattern.second()];
    let mut events = Vec::new();
    for (det, &signal_click) in detectors.iter().zip(clicks.iter()) {
        let dark = det.dark_prob > 0.0 && rng.random::<f64>() < det.dark_prob;
        if signal_click || dark {
            events.push(DetectionEvent { detector: det.id, time_ns: gate_time_ns, position_m: det.position_m, trial });
        }
    }
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Heralding,
    Verifying,
}

/// Closed time window, relative to the start of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingWindow {
    pub stream: Stream,
    pub start_ns: f64,
    pub end_ns: f64,
}

/// Time-window routing that replaces the physical AOM switch.
///
/// An event at a shared boundary belongs to the earlier window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AomSchedule {
    pub period_ns: f64,
    windows: Vec<RoutingWindow>,
}

impl AomSchedule {
    pub fn new(period_ns: f64, mut windows: Vec<RoutingWindow>) -> Result<Self> {
        if !(period_ns > 0.0) {
            return Err(Error::Domain("trial period must be positive".into()));
        }
        windows.sort_by(|a, b| a.start_ns.total_cmp(&b.start_ns));
        for w in &windows {
            if !(w.end_ns > w.start_ns) || w.start_ns < 0.0 || w.end_ns > period_ns {
                return Err(Error::Validation(format!("window {w:?} is empty or outside the trial period")));
            }
        }
        for pair in windows.windows(2) {
            if pair[0].end_ns > pair[1].start_ns {
                return Err(Error::Validation(format!("routing windows overlap: {:?} and {:?}", pair[0], pair[1])));
            }
        }
        Ok(AomSchedule { period_ns, windows })
    }

    pub fn windows(&self) -> &[RoutingWindow] {
        &self.windows
    }

    pub fn stream_at(&self, offset_ns: f64) -> Option<Stream> {
        self.windows.iter().find(|w| w.start_ns <= offset_ns && offset_ns <= w.end_ns).map(|w| w.stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEvent {
    pub event: DetectionEvent,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutedEvents {
    pub heralding: Vec<DetectionEvent>,
    pub verifying: Vec<DetectionEvent>,
    pub dropped: Vec<DroppedEvent>,
}

/// Assigns events to streams by the trial-relative time in `time_ns`.
///
/// Output streams are sorted by (trial, time, detector) so the result does not
/// depend on input order.
pub fn route_by_time(events: &[DetectionEvent], schedule: &AomSchedule) -> RoutedEvents {
    let mut out = RoutedEvents::default();
    for ev in events {
        let offset = ev.time_ns - ev.trial as f64 * schedule.period_ns;
        match schedule.stream_at(offset) {
            Some(Stream::Heralding) => out.heralding.push(*ev),
            Some(Stream::Verifying) => out.verifying.push(*ev),
            None => {
                let reason = format!("t = {offset:.3} ns is outside every routing window");
                log::debug!("dropping event {ev:?}: {reason}");
                out.dropped.push(DroppedEvent { event: *ev, reason });
            }
        }
    }
    let key = |e: &DetectionEvent| (e.trial, e.time_ns.to_bits(), e.detector);
    out.heralding.sort_by_key(key);
    out.verifying.sort_by_key(key);
    out.dropped.sort_by_key(|d| key(&d.event));
    out
}
