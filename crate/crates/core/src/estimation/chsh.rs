use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::C64;
use crate::polarization::{equatorial_ket, kron2, linear_ket, TwoQubitState};

/// Family of analyzer states used for each photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerKind {
    /// `(|H> + e^{iθ}|V>)/√2`, outcome `-` at `θ + π`
    Equatorial,
    /// `cos α |H> + sin α |V>`, outcome `-` at `α + π/2`
    Linear,
}

/// Two analyzer angles per photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshAngles {
    pub kind: AnalyzerKind,
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for ChshAngles {
    fn default() -> Self {
        ChshAngles::equatorial()
    }
}

impl ChshAngles {
    /// Optimal equatorial settings for a real `Φ+`-like state; `S = 2√2 V`.
    pub fn equatorial() -> Self {
        ChshAngles {
            kind: AnalyzerKind::Equatorial,
            a: 0.0,
            a_prime: FRAC_PI_2,
            b: -FRAC_PI_4,
            b_prime: -3.0 * FRAC_PI_4,
        }
    }

    /// Textbook polarizer angles 0, 45°, 22.5°, 67.5°.
    pub fn linear() -> Self {
        ChshAngles { kind: AnalyzerKind::Linear, a: 0.0, a_prime: FRAC_PI_4, b: PI / 8.0, b_prime: 3.0 * PI / 8.0 }
    }

    /// Settings in the order `(a,b) (a,b') (a',b) (a',b')`.
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [(self.a, self.b), (self.a, self.b_prime), (self.a_prime, self.b), (self.a_prime, self.b_prime)]
    }

    fn ket(&self, angle: f64, plus: bool) -> Vector2<C64> {
        match (self.kind, plus) {
            (AnalyzerKind::Equatorial, true) => equatorial_ket(angle),
            (AnalyzerKind::Equatorial, false) => equatorial_ket(angle + PI),
            (AnalyzerKind::Linear, true) => linear_ket(angle),
            (AnalyzerKind::Linear, false) => linear_ket(angle + FRAC_PI_2),
        }
    }

    pub fn projector(&self, angle: f64, plus: bool) -> Matrix2<C64> {
        let k = self.ket(angle, plus);
        k * k.adjoint()
    }

    /// Outcome probabilities `[++, +-, -+, --]` at each of the four settings.
    pub fn outcome_probabilities(&self, state: &TwoQubitState) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (s, (x, y)) in self.pairs().into_iter().enumerate() {
            for (o, (px, py)) in [(true, true), (true, false), (false, true), (false, false)].into_iter().enumerate() {
                out[s][o] = state.probability(&kron2(&self.projector(x, px), &self.projector(y, py)));
            }
        }
        out
    }
}

fn correlation(p: &[f64; 4]) -> f64 {
    p[0] + p[3] - p[1] - p[2]
}

/// Exact correlations and `S = E1 - E2 + E3 + E4` for a known state.
pub fn chsh_exact(state: &TwoQubitState, angles: &ChshAngles) -> ([f64; 4], f64) {
    let probs = angles.outcome_probabilities(state);
    let e = probs.map(|p| correlation(&p) / p.iter().sum::<f64>().max(f64::MIN_POSITIVE));
    (e, combine(&e))
}

fn combine(e: &[f64; 4]) -> f64 {
    (e[0] - e[1] + e[2] + e[3]).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub correlations: [f64; 4],
    pub correlation_errors: [f64; 4],
    pub s: f64,
    pub s_err: f64,
    /// `(S - 2) / σ_S`
    pub violation_sigma: f64,
}

/// Estimates `S` from coincidence counts `[N++, N+-, N-+, N--]` per setting.
pub fn chsh(counts: &[[u64; 4]; 4]) -> Result<ChshResult> {
    let mut e = [0.0; 4];
    let mut de = [0.0; 4];
    for (k, c) in counts.iter().enumerate() {
        let total: u64 = c.iter().sum();
        if total == 0 {
            return Err(Error::UndefinedEstimate(format!("no coincidences at setting {k}")));
        }
        let t = total as f64;
        e[k] = (c[0] as f64 + c[3] as f64 - c[1] as f64 - c[2] as f64) / t;
        de[k] = ((1.0 - e[k] * e[k]).max(0.0) / t).sqrt();
    }
    let s = combine(&e);
    let s_err = de.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(ChshResult {
        correlations: e,
        correlation_errors: de,
        s,
        s_err,
        violation_sigma: if s_err > 0.0 { (s - 2.0) / s_err } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::phi_plus;
    use proptest::prelude::*;

    #[test]
    fn equatorial_reaches_tsirelson() {
        let bell = TwoQubitState::pure(&phi_plus()).unwrap();
        let (_, s) = chsh_exact(&bell, &ChshAngles::equatorial());
        assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let (_, s) = chsh_exact(&bell, &ChshAngles::linear());
        assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dephased_state_values() {
        let v = 0.875;
        let rho = TwoQubitState::dephased_bell(v).unwrap();
        let (e, s) = chsh_exact(&rho, &ChshAngles::equatorial());
        for (k, (x, y)) in ChshAngles::equatorial().pairs().into_iter().enumerate() {
            assert!((e[k] - v * (x + y).cos()).abs() < 1e-12);
        }
        assert!((s - 2.0 * 2f64.sqrt() * v).abs() < 1e-12);
        // dephasing leaves the HH/VV correlations intact along linear axes
        let (_, s_lin) = chsh_exact(&rho, &ChshAngles::linear());
        assert!((s_lin - 2f64.sqrt() * (1.0 + v)).abs() < 1e-12);
    }

    #[test]
    fn counts_estimator() {
        let c = [[400, 100, 100, 400], [100, 400, 400, 100], [400, 100, 100, 400], [400, 100, 100, 400]];
        let r = chsh(&c).unwrap();
        assert!((r.s - 2.4).abs() < 1e-12);
        assert!((r.correlation_errors[0] - (0.64f64 / 1000.0).sqrt()).abs() < 1e-12);
        assert!(matches!(chsh(&[[0; 4]; 4]), Err(Error::UndefinedEstimate(_))));
    }

    proptest! {
        #[test]
        fn bounded_by_tsirelson(p in 0.0f64..=1.0, a in -3.2f64..3.2, ap in -3.2f64..3.2,
                                b in -3.2f64..3.2, bp in -3.2f64..3.2, lin in any::<bool>()) {
            let rho = TwoQubitState::werner(p).unwrap();
            let kind = if lin { AnalyzerKind::Linear } else { AnalyzerKind::Equatorial };
            let (_, s) = chsh_exact(&rho, &ChshAngles { kind, a, a_prime: ap, b, b_prime: bp });
            prop_assert!(s <= 2.0 * 2f64.sqrt() + 1e-9);
        }

        #[test]
        fn product_states_respect_local_bound(v in 0.0f64..=1.0, a in -3.2f64..3.2, b in -3.2f64..3.2) {
            // a fully dephased Bell state is separable
            let rho = TwoQubitState::dephased_bell(0.0).unwrap();
            let (_, s) = chsh_exact(&rho, &ChshAngles { kind: AnalyzerKind::Linear, a, a_prime: a + v, b, b_prime: b - v });
            prop_assert!(s <= 2.0 + 1e-9);
        }
    }
}
