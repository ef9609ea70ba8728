//! Two-photon polarization qubits: kets, projectors and the 4×4 state type.
//!
//! Basis order is `{HH, HV, VH, VV}` with the Stokes photon first.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{C64, HERMITIAN_TOL, NEGATIVE_EIGEN_TOL, TRACE_TOL};

/// Named single-photon polarization states used for projective analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolState {
    H,
    V,
    /// diagonal, (H + V)/√2
    D,
    /// anti-diagonal, (H - V)/√2
    A,
    /// right circular, (H + iV)/√2
    R,
    /// left circular, (H - iV)/√2
    L,
}

impl PolState {
    pub fn ket(self) -> Vector2<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (a, b) = match self {
            PolState::H => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            PolState::V => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            PolState::D => (C64::new(s, 0.0), C64::new(s, 0.0)),
            PolState::A => (C64::new(s, 0.0), C64::new(-s, 0.0)),
            PolState::R => (C64::new(s, 0.0), C64::new(0.0, s)),
            PolState::L => (C64::new(s, 0.0), C64::new(0.0, -s)),
        };
        Vector2::new(a, b)
    }

    pub fn symbol(self) -> char {
        match self {
            PolState::H => 'H',
            PolState::V => 'V',
            PolState::D => 'D',
            PolState::A => 'A',
            PolState::R => 'R',
            PolState::L => 'L',
        }
    }

    pub fn from_symbol(c: char) -> Option<PolState> {
        Some(match c.to_ascii_uppercase() {
            'H' => PolState::H,
            'V' => PolState::V,
            'D' => PolState::D,
            'A' => PolState::A,
            'R' => PolState::R,
            'L' => PolState::L,
            _ => return None,
        })
    }
}

/// Projection setting for a photon pair, e.g. `HD` = Stokes on H, anti-Stokes on D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSetting {
    pub stokes: PolState,
    pub anti_stokes: PolState,
}

impl PairSetting {
    pub fn new(stokes: PolState, anti_stokes: PolState) -> Self {
        PairSetting { stokes, anti_stokes }
    }

    pub fn ket(&self) -> Vector4<C64> {
        product_ket(&self.stokes.ket(), &self.anti_stokes.ket())
    }

    pub fn projector(&self) -> Matrix4<C64> {
        let k = self.ket();
        k * k.adjoint()
    }
}

impl fmt::Display for PairSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.stokes.symbol(), self.anti_stokes.symbol())
    }
}

impl FromStr for PairSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 2 {
            return Err(Error::Validation(format!("setting '{s}' must be two polarization symbols")));
        }
        match (PolState::from_symbol(chars[0]), PolState::from_symbol(chars[1])) {
            (Some(a), Some(b)) => Ok(PairSetting::new(a, b)),
            _ => Err(Error::Validation(format!("unknown polarization symbol in '{s}'"))),
        }
    }
}

pub fn product_ket(a: &Vector2<C64>, b: &Vector2<C64>) -> Vector4<C64> {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

/// `(|HH> + |VV>)/√2`.
pub fn phi_plus() -> Vector4<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Vector4::new(C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0))
}

/// Equatorial analyzer state `(|H> + e^{iθ}|V>)/√2`.
pub fn equatorial_ket(theta: f64) -> Vector2<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Vector2::new(C64::new(s, 0.0), C64::from_polar(s, theta))
}

/// Linear polarizer state at angle `alpha` from H.
pub fn linear_ket(alpha: f64) -> Vector2<C64> {
    Vector2::new(C64::new(alpha.cos(), 0.0), C64::new(alpha.sin(), 0.0))
}

/// Validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    matrix: Matrix4<C64>,
}

impl TwoQubitState {
    pub fn new(matrix: Matrix4<C64>) -> Result<Self> {
        let herm = (matrix - matrix.adjoint()).camax();
        if herm > HERMITIAN_TOL {
            return Err(Error::Validation(format!("matrix is not Hermitian ({herm:.3e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Validation(format!("trace is {tr}, expected 1")));
        }
        let s = TwoQubitState { matrix };
        let min = s.min_eigenvalue();
        if !(min >= -NEGATIVE_EIGEN_TOL) {
            return Err(Error::Validation(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(s)
    }

    /// Normalizes a positive matrix, Hermitizing first.
    pub fn from_unnormalized(matrix: Matrix4<C64>) -> Result<Self> {
        let herm = (matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
        let tr = herm.trace().re;
        if !(tr > 0.0) {
            return Err(Error::Validation("zero-trace two-qubit operator".into()));
        }
        TwoQubitState::new(herm / C64::new(tr, 0.0))
    }

    pub fn pure(ket: &Vector4<C64>) -> Result<Self> {
        let norm = ket.norm();
        if !(norm > 0.0) {
            return Err(Error::Validation("zero ket".into()));
        }
        let k = ket / C64::new(norm, 0.0);
        TwoQubitState::new(k * k.adjoint())
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState { matrix: Matrix4::identity() * C64::new(0.25, 0.0) }
    }

    /// Bell state `Φ+` whose HH↔VV coherence is scaled by `visibility`.
    pub fn dephased_bell(visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::Domain(format!("visibility {visibility} outside [0, 1]")));
        }
        let mut m = Matrix4::zeros();
        m[(0, 0)] = C64::new(0.5, 0.0);
        m[(3, 3)] = C64::new(0.5, 0.0);
        m[(0, 3)] = C64::new(0.5 * visibility, 0.0);
        m[(3, 0)] = C64::new(0.5 * visibility, 0.0);
        TwoQubitState::new(m)
    }

    /// Mixture `p |Φ+><Φ+| + (1-p) 1/4`.
    pub fn werner(p: f64) -> Result<Self> {
        let b = phi_plus();
        let m = b * b.adjoint() * C64::new(p, 0.0) + Matrix4::identity() * C64::new((1.0 - p) / 4.0, 0.0);
        TwoQubitState::new(m)
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.matrix
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_fn(4, 4, |i, j| self.matrix[(i, j)]);
        crate::fock::min_eigenvalue(&m)
    }

    pub fn probability(&self, projector: &Matrix4<C64>) -> f64 {
        (projector * self.matrix).trace().re.max(0.0)
    }

    pub fn expectation(&self, observable: &Matrix4<C64>) -> f64 {
        (observable * self.matrix).trace().re
    }
}
