use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fock::{ModeLabel, Site, C64};
use crate::node::{herald_branches, read_operator, store_operator, symmetric_write, HeraldOutcome, NoiseParams};
use crate::optics::{
    anti_stokes_modes, two_detector_povm, ClickPattern, DetectorId, InterferometerConfig, PhaseResponse,
};

/// How outcome statistics are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// probabilities propagated through the density-operator pipeline
    Exact,
    /// seeded Monte-Carlo clicks drawn from the same pipeline
    Sampling,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Engine::Exact),
            "sampling" => Ok(Engine::Sampling),
            other => Err(Error::Validation(format!("unknown engine '{other}', expected exact or sampling"))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Exact => "exact",
            Engine::Sampling => "sampling",
        })
    }
}

/// What the verifying detectors look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyBasis {
    /// D3/D4 behind the analyzer: interference of the two anti-Stokes modes
    Interference,
    /// D3 on the L mode and D4 on the R mode, no interference
    Modes,
}

/// Independent 64-bit seed for a named sub-run.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Adds independent background clicks to a two-detector signal distribution.
pub fn with_background(signal: [f64; 4], b1: f64, b2: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (s, &p) in ClickPattern::ALL.iter().zip(signal.iter()) {
        let f1 = if s.first() { 1.0 } else { b1 };
        let f2 = if s.second() { 1.0 } else { b2 };
        out[0] += p * (1.0 - f1) * (1.0 - f2);
        out[1] += p * f1 * (1.0 - f2);
        out[2] += p * (1.0 - f1) * f2;
        out[3] += p * f1 * f2;
    }
    out
}

#[derive(Debug, Clone)]
struct Branch {
    pattern: ClickPattern,
    probability: f64,
    response: Option<PhaseResponse>,
    /// `coeffs[outcome][k]` for harmonics `k = 0..=n_max`, folded so that
    /// `P(θ) = Re Σ_k coeffs[k] e^{ikθ}`
    folded: Vec<Vec<C64>>,
}

impl Branch {
    fn signal_at(&self, theta: f64, sigma: f64) -> [f64; 4] {
        if self.response.is_none() {
            return [1.0, 0.0, 0.0, 0.0];
        }
        let mut out = [0.0; 4];
        let step = C64::from_polar(1.0, theta);
        for (o, c) in self.folded.iter().enumerate() {
            let mut rot = C64::new(1.0, 0.0);
            let mut acc = 0.0;
            for (k, ck) in c.iter().enumerate() {
                let damp = if sigma > 0.0 { (-((k * k) as f64) * sigma * sigma / 2.0).exp() } else { 1.0 };
                acc += (ck * rot).re * damp;
                rot *= step;
            }
            out[o] = acc.max(0.0);
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|x| *x /= total);
        }
        out
    }
}

/// Precomputed herald-conditional verify responses for one configuration.
///
/// The herald signal pattern splits the written state into four branches;
/// each branch is stored, retrieved and turned into a phase response of the
/// verifying detectors. Background clicks are added on top, independently
/// per detector, so exact probabilities and sampled clicks share one model.
#[derive(Debug, Clone)]
pub struct ProtocolModel {
    branches: Vec<Branch>,
    background: f64,
    jitter: f64,
    basis: VerifyBasis,
}

impl ProtocolModel {
    pub fn new(
        params: &NoiseParams,
        interferometer: &InterferometerConfig,
        storage_ns: f64,
        basis: VerifyBasis,
    ) -> Result<Self> {
        params.validate()?;
        interferometer.validate()?;
        let joint = symmetric_write(params, interferometer.phi_s)?;
        let d3 = params.detector(DetectorId::D3, 0.0, 0.0).without_dark();
        let d4 = params.detector(DetectorId::D4, 0.0, 0.0).without_dark();
        let u = match basis {
            VerifyBasis::Interference => interferometer.analyzer(),
            VerifyBasis::Modes => Matrix2::identity(),
        };
        let povm = two_detector_povm(&u, &d3, &d4, params.n_max);
        let phase_mode = ModeLabel::anti_stokes(Site::R);
        let branches = herald_branches(&joint, params)?
            .into_iter()
            .map(|b| {
                let response = match &b.rho {
                    Some(rho) => {
                        let stored = store_operator(rho, storage_ns, params)?;
                        let out = read_operator(&stored, params, interferometer.phi_as)?;
                        Some(PhaseResponse::new(
                            out.register(),
                            out.matrix(),
                            &phase_mode,
                            &povm,
                            &anti_stokes_modes(),
                        )?)
                    }
                    None => None,
                };
                let n = params.n_max as i64;
                let folded = match &response {
                    Some(r) => (0..r.outcomes())
                        .map(|o| {
                            (0..=n)
                                .map(|k| {
                                    if k == 0 {
                                        r.coefficient(o, 0)
                                    } else {
                                        r.coefficient(o, k) + r.coefficient(o, -k).conj()
                                    }
                                })
                                .collect()
                        })
                        .collect(),
                    None => Vec::new(),
                };
                Ok(Branch { pattern: b.pattern, probability: b.probability, response, folded })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProtocolModel { branches, background: params.background_prob(), jitter: params.phase_jitter, basis })
    }

    pub fn basis(&self) -> VerifyBasis {
        self.basis
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn herald_given(&self, pattern: ClickPattern) -> [f64; 4] {
        let mut s = [0.0; 4];
        s[pattern.index()] = 1.0;
        with_background(s, self.background, self.background)
    }

    fn verify_signal(&self, b: &Branch, theta: f64, sigma: f64) -> [f64; 4] {
        b.signal_at(theta, sigma)
    }

    /// Probability of each herald pattern (with background).
    pub fn herald_probabilities(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for b in &self.branches {
            for (o, h) in out.iter_mut().zip(self.herald_given(b.pattern)) {
                *o += b.probability * h;
            }
        }
        out
    }

    /// Probability that the given heralding detector clicks.
    pub fn herald_probability(&self, outcome: HeraldOutcome) -> f64 {
        let h = self.herald_probabilities();
        match outcome {
            HeraldOutcome::D1 => h[1] + h[3],
            HeraldOutcome::D2 => h[2] + h[3],
        }
    }

    /// Joint probabilities `[herald pattern][verify pattern]` at an extra
    /// anti-Stokes phase `theta`, averaged over the configured phase jitter.
    ///
    /// The verify side is only defined for heralded trials; row 0 carries the
    /// whole no-herald probability in column 0.
    pub fn joint_probabilities(&self, theta: f64) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for b in &self.branches {
            if b.probability == 0.0 {
                continue;
            }
            let h = self.herald_given(b.pattern);
            let v = with_background(self.verify_signal(b, theta, self.jitter), self.background, self.background);
            out[0][0] += b.probability * h[0];
            for hi in 1..4 {
                for vi in 0..4 {
                    out[hi][vi] += b.probability * h[hi] * v[vi];
                }
            }
        }
        out
    }

    /// Verify-pattern probabilities conditional on a herald click.
    pub fn conditional_verify(&self, outcome: HeraldOutcome, theta: f64) -> [f64; 4] {
        let joint = self.joint_probabilities(theta);
        let rows: [usize; 2] = match outcome {
            HeraldOutcome::D1 => [1, 3],
            HeraldOutcome::D2 => [2, 3],
        };
        let mut out = [0.0; 4];
        for r in rows {
            for v in 0..4 {
                out[v] += joint[r][v];
            }
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|x| *x /= total);
        }
        out
    }

    /// First-harmonic visibility of the verify detector's inclusive click
    /// rate (`first = true` for D3) conditional on a herald click.
    pub fn fringe_visibility(&self, outcome: HeraldOutcome, first: bool) -> f64 {
        let (mut c0, mut c1) = (0.0, C64::new(0.0, 0.0));
        let bg = self.background;
        let fire = |p: ClickPattern| match outcome {
            HeraldOutcome::D1 => p.first(),
            HeraldOutcome::D2 => p.second(),
        };
        let outs: [usize; 2] = if first { [1, 3] } else { [2, 3] };
        for b in &self.branches {
            let Some(r) = &b.response else { continue };
            let w = b.probability * if fire(b.pattern) { 1.0 } else { bg };
            let norm: f64 = (0..r.outcomes()).map(|o| r.coefficient(o, 0).re).sum();
            if norm <= 0.0 {
                continue;
            }
            for o in outs {
                c0 += w * r.coefficient(o, 0).re / norm * (1.0 - bg);
                c1 += r.coefficient(o, 1) * (w / norm * (1.0 - bg));
            }
            c0 += w * bg;
        }
        if c0 <= 0.0 {
            return 0.0;
        }
        2.0 * c1.norm() * (-self.jitter * self.jitter / 2.0).exp() / c0
    }

    /// Same model with the Gaussian phase jitter switched off.
    pub fn without_jitter(&self) -> ProtocolModel {
        ProtocolModel { jitter: 0.0, ..self.clone() }
    }

    /// Draws one trial. Returns the herald pattern, the sampled phase and,
    /// for heralded trials only, the verify pattern.
    pub fn sample_trial<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> (ClickPattern, f64, Option<ClickPattern>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.branches[0];
        for b in &self.branches {
            acc += b.probability;
            chosen = b;
            if u < acc {
                break;
            }
        }
        let bg = self.background;
        let d1 = chosen.pattern.first() || (bg > 0.0 && rng.random::<f64>() < bg);
        let d2 = chosen.pattern.second() || (bg > 0.0 && rng.random::<f64>() < bg);
        let herald = ClickPattern::from_clicks(d1, d2);
        let phase = if self.jitter > 0.0 { theta + self.jitter * rng.sample::<f64, _>(StandardNormal) } else { theta };
        if herald == ClickPattern::None {
            return (herald, phase, None);
        }
        (herald, phase, Some(self.sample_verify(chosen, phase, rng)))
    }

    fn sample_verify<R: Rng + ?Sized>(&self, b: &Branch, phase: f64, rng: &mut R) -> ClickPattern {
        let s = self.verify_signal(b, phase, 0.0);
        let signal = crate::optics::sample_index(&s, rng.random());
        let bg = self.background;
        let v3 = signal.first() || (bg > 0.0 && rng.random::<f64>() < bg);
        let v4 = signal.second() || (bg > 0.0 && rng.random::<f64>() < bg);
        ClickPattern::from_clicks(v3, v4)
    }

    /// Draws the verify pattern of one trial already known to be heralded by `outcome`.
    pub fn sample_heralded<R: Rng + ?Sized>(&self, outcome: HeraldOutcome, theta: f64, rng: &mut R) -> ClickPattern {
        let bg = self.background;
        let fire = |p: ClickPattern| match outcome {
            HeraldOutcome::D1 => p.first(),
            HeraldOutcome::D2 => p.second(),
        };
        let mut weights = [0.0; 4];
        for (w, b) in weights.iter_mut().zip(&self.branches) {
            *w = b.probability * if fire(b.pattern) { 1.0 } else { bg };
        }
        let total: f64 = weights.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = &self.branches[0];
        for (b, w) in self.branches.iter().zip(&weights) {
            if *w == 0.0 {
                continue;
            }
            acc += w;
            chosen = b;
            if u < acc {
                break;
            }
        }
        let phase = if self.jitter > 0.0 { theta + self.jitter * rng.sample::<f64, _>(StandardNormal) } else { theta };
        self.sample_verify(chosen, phase, rng)
    }
}

/// ChaCha8 stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::herald;

    fn model(params: &NoiseParams, basis: VerifyBasis) -> ProtocolModel {
        ProtocolModel::new(params, &InterferometerConfig::default(), 100.0, basis).unwrap()
    }

    #[test]
    fn folded_harmonics_match_phase_response() {
        let params = NoiseParams { chi: 0.08, ..NoiseParams::default() };
        let m = model(&params, VerifyBasis::Interference);
        for b in &m.branches {
            let Some(r) = &b.response else { continue };
            for theta in [0.0, 0.7, 2.9, -1.3] {
                let direct = r.evaluate(theta, 0.3);
                let total: f64 = direct.iter().sum();
                let folded = b.signal_at(theta, 0.3);
                for o in 0..4 {
                    assert!((direct[o] / total - folded[o]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn background_mixing_is_normalized() {
        let p = with_background([0.7, 0.1, 0.15, 0.05], 0.01, 0.02);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(with_background([1.0, 0.0, 0.0, 0.0], 0.0, 0.0), [1.0, 0.0, 0.0, 0.0]);
        assert!((with_background([1.0, 0.0, 0.0, 0.0], 0.1, 0.2)[3] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn herald_rate_matches_projective_herald() {
        let params = NoiseParams { dark_prob: 1e-3, ..NoiseParams::default() };
        let m = model(&params, VerifyBasis::Modes);
        let joint = symmetric_write(&params, 0.0).unwrap();
        for o in [HeraldOutcome::D1, HeraldOutcome::D2] {
            let h = herald(&joint, o, &params).unwrap();
            assert!((m.herald_probability(o) - h.herald_probability).abs() < 1e-15);
        }
        let total: f64 = m.joint_probabilities(0.3).iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_modes_match_heralded_state() {
        // dark-free, so the heralded spin-wave populations map to clicks directly
        let params = NoiseParams { chi: 1e-4, dark_prob: 0.0, ..NoiseParams::default() };
        let m = model(&params, VerifyBasis::Modes);
        let joint = symmetric_write(&params, 0.0).unwrap();
        let h = herald(&joint, HeraldOutcome::D1, &params).unwrap();
        let eta = params.detection_efficiency();
        let [_, p01, p10, _] = h.populations();
        let v = m.conditional_verify(HeraldOutcome::D1, 0.0);
        // two-excitation terms shift these at O(chi)
        assert!((v[1] / (p10 * params.eta_ret_l * eta) - 1.0).abs() < 1e-3);
        assert!((v[2] / (p01 * params.eta_ret_r * eta) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn ideal_fringe_visibility_is_jitter_damping() {
        let mut params = NoiseParams::ideal(1e-4);
        params.phase_jitter = 0.459;
        let m = model(&params, VerifyBasis::Interference);
        let v = m.fringe_visibility(HeraldOutcome::D1, true);
        let expected = (-0.459f64 * 0.459 / 2.0).exp();
        assert!((v - expected).abs() < 2e-3, "v = {v}");
        // numerical check of the harmonic formula
        let ps: Vec<f64> = (0..64)
            .map(|k| m.conditional_verify(HeraldOutcome::D1, k as f64 * std::f64::consts::TAU / 64.0))
            .map(|p| p[1] + p[3])
            .collect();
        let hi = ps.iter().cloned().fold(f64::MIN, f64::max);
        let lo = ps.iter().cloned().fold(f64::MAX, f64::min);
        assert!(((hi - lo) / (hi + lo) - v).abs() < 1e-3);
    }

    #[test]
    fn trial_sampler_frequencies() {
        let params = NoiseParams { chi: 0.05, dark_prob: 1e-3, ..NoiseParams::default() };
        let m = model(&params, VerifyBasis::Interference);
        let exact = m.joint_probabilities(0.4);
        let mut rng = stream_rng(5, 0);
        let n = 400_000;
        let mut counts = [[0u64; 4]; 4];
        for _ in 0..n {
            let (h, _, v) = m.sample_trial(0.4, &mut rng);
            counts[h.index()][v.map(|v| v.index()).unwrap_or(0)] += 1;
        }
        for h in 0..4 {
            for v in 0..4 {
                let p = exact[h][v];
                let sd = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
                let f = counts[h][v] as f64 / n as f64;
                assert!((f - p).abs() < 5.0 * sd, "h={h} v={v} f={f} p={p}");
            }
        }
    }

    #[test]
    fn heralded_sampler_matches_conditional() {
        let params = NoiseParams { chi: 0.05, dark_prob: 1e-2, ..NoiseParams::default() };
        let m = model(&params, VerifyBasis::Modes);
        let exact = m.conditional_verify(HeraldOutcome::D2, 0.0);
        let mut rng = stream_rng(11, 3);
        let n = 200_000;
        let mut c = [0u64; 4];
        for _ in 0..n {
            c[m.sample_heralded(HeraldOutcome::D2, 0.0, &mut rng).index()] += 1;
        }
        for k in 0..4 {
            let sd = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt().max(1.0 / n as f64);
            assert!((c[k] as f64 / n as f64 - exact[k]).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn zero_excitation_never_heralds() {
        let params = NoiseParams { chi: 0.0, dark_prob: 0.0, ..NoiseParams::default() };
        let m = model(&params, VerifyBasis::Interference);
        assert_eq!(m.herald_probability(HeraldOutcome::D1), 0.0);
        let mut rng = stream_rng(1, 0);
        for _ in 0..10_000 {
            assert_eq!(m.sample_trial(0.0, &mut rng).0, ClickPattern::None);
        }
    }

    #[test]
    fn seeds_and_engines() {
        assert_ne!(derive_seed(1, "fringe", 0), derive_seed(1, "fringe", 1));
        assert_ne!(derive_seed(1, "fringe", 0), derive_seed(1, "modes", 0));
        assert_eq!(derive_seed(9, "x", 2), derive_seed(9, "x", 2));
        assert_eq!("Exact".parse::<Engine>().unwrap(), Engine::Exact);
        assert!("fast".parse::<Engine>().is_err());
    }
}
