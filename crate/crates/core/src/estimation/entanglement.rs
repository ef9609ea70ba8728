use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::fock::C64;
use crate::polarization::TwoQubitState;

fn spin_flip() -> Matrix4<C64> {
    // σ_y ⊗ σ_y
    let mut m = Matrix4::zeros();
    m[(0, 3)] = C64::new(-1.0, 0.0);
    m[(1, 2)] = C64::new(1.0, 0.0);
    m[(2, 1)] = C64::new(1.0, 0.0);
    m[(3, 0)] = C64::new(-1.0, 0.0);
    m
}

fn hermitian_sqrt(m: &Matrix4<C64>) -> Result<Matrix4<C64>> {
    let dm = DMatrix::from_fn(4, 4, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let eig = crate::fock::hermitian_eigen(&dm)?;
    let roots = DVector::from_fn(4, |k, _| C64::new(eig.eigenvalues[k].max(0.0).sqrt(), 0.0));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint();
    Ok(Matrix4::from_fn(|i, j| r[(i, j)]))
}

/// Wootters concurrence `max(0, λ1 - λ2 - λ3 - λ4)`, the λ being the
/// eigenvalues of `sqrt(√ρ ρ̃ √ρ)` with `ρ̃ = (σy⊗σy) ρ* (σy⊗σy)`.
pub fn wootters_concurrence(rho: &TwoQubitState) -> Result<f64> {
    let m = rho.matrix();
    let y = spin_flip();
    let tilde = y * m.conjugate() * y;
    let s = hermitian_sqrt(m)?;
    let inner = s * tilde * s;
    let dm = DMatrix::from_fn(4, 4, |i, j| (inner[(i, j)] + inner[(j, i)].conj()) * 0.5);
    let mut lambda: Vec<f64> =
        crate::fock::hermitian_eigen(&dm)?.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    Ok((lambda[0] - lambda[1] - lambda[2] - lambda[3]).clamp(0.0, 1.0))
}

/// Concurrence of a raw 4×4 matrix, validating it first.
pub fn wootters_concurrence_matrix(m: &Matrix4<C64>) -> Result<f64> {
    wootters_concurrence(&TwoQubitState::new(*m)?)
}

/// `⟨ψ|ρ|ψ⟩` for a normalized target.
pub fn fidelity(rho: &DMatrix<C64>, target: &DVector<C64>) -> Result<f64> {
    if !rho.is_square() || rho.nrows() != target.len() {
        return Err(Error::shape(
            format!("{0}x{0} operator", target.len()),
            format!("{}x{}", rho.nrows(), rho.ncols()),
        ));
    }
    let norm = target.norm();
    if !(norm > 0.0) {
        return Err(Error::Validation("zero target state".into()));
    }
    let t = target / C64::new(norm, 0.0);
    Ok((t.adjoint() * rho * &t)[(0, 0)].re.clamp(0.0, 1.0))
}

pub fn two_qubit_fidelity(rho: &TwoQubitState, target: &Vector4<C64>) -> f64 {
    let n = target.norm();
    let t = target / C64::new(n, 0.0);
    (t.adjoint() * rho.matrix() * t)[(0, 0)].re.clamp(0.0, 1.0)
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²` between two mixed states.
pub fn uhlmann_fidelity(rho: &TwoQubitState, sigma: &TwoQubitState) -> Result<f64> {
    let s = hermitian_sqrt(rho.matrix())?;
    let inner = s * sigma.matrix() * s;
    let dm = DMatrix::from_fn(4, 4, |i, j| (inner[(i, j)] + inner[(j, i)].conj()) * 0.5);
    let root: f64 = crate::fock::hermitian_eigen(&dm)?.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((root * root).clamp(0.0, 1.0))
}
