use nalgebra::{DMatrix, DVector, Dyn, Matrix2, SymmetricEigen};

use super::channel::QuantumChannel;
use super::passive;
use super::register::{ModeLabel, ModeRegister, Split};
use super::{C64, HERMITIAN_TOL, NEGATIVE_EIGEN_TOL, NORM_TOL, TRACE_TOL, UNITARY_TOL};
use crate::error::{Error, Result};

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub(crate) fn check_unitary(u: &DMatrix<C64>) -> Result<()> {
    if !u.is_square() {
        return Err(Error::shape("square matrix", format!("{}x{}", u.nrows(), u.ncols())));
    }
    let n = u.nrows();
    let err = (u.adjoint() * u - DMatrix::<C64>::identity(n, n)).camax();
    if err > UNITARY_TOL {
        return Err(Error::Validation(format!("matrix is not unitary: max |U†U - I| = {err:.3e}")));
    }
    Ok(())
}

/// `(O ⊗ 1) v` for `O` acting on the split's target factor.
fn apply_local_vec(op: &DMatrix<C64>, split: &Split, v: &DVector<C64>) -> DVector<C64> {
    let mut out = DVector::<C64>::zeros(v.len());
    for idx in 0..v.len() {
        let (t, r) = (split.target_of[idx], split.rest_of[idx]);
        let mut acc = c(0.0);
        for tp in 0..split.dt {
            let o = op[(t, tp)];
            if o.re != 0.0 || o.im != 0.0 {
                acc += o * v[split.full(tp, r)];
            }
        }
        out[idx] = acc;
    }
    out
}

/// `(O ⊗ 1) ρ (O ⊗ 1)†`.
fn conjugate_local(op: &DMatrix<C64>, split: &Split, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let dim = rho.nrows();
    let mut left = DMatrix::<C64>::zeros(dim, dim);
    for row in 0..dim {
        let (t, r) = (split.target_of[row], split.rest_of[row]);
        for tp in 0..split.dt {
            let o = op[(t, tp)];
            if o.re == 0.0 && o.im == 0.0 {
                continue;
            }
            let src = split.full(tp, r);
            for col in 0..dim {
                left[(row, col)] += o * rho[(src, col)];
            }
        }
    }
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let (t, r) = (split.target_of[col], split.rest_of[col]);
        for tp in 0..split.dt {
            let o = op[(t, tp)].conj();
            if o.re == 0.0 && o.im == 0.0 {
                continue;
            }
            let src = split.full(tp, r);
            for row in 0..dim {
                out[(row, col)] += left[(row, src)] * o;
            }
        }
    }
    out
}

fn local_dim_check(op: &DMatrix<C64>, split: &Split) -> Result<()> {
    if op.nrows() != split.dt || op.ncols() != split.dt {
        return Err(Error::shape(
            format!("{0}x{0} operator on target modes", split.dt),
            format!("{}x{}", op.nrows(), op.ncols()),
        ));
    }
    Ok(())
}

/// Weight of the state on basis states with more than `n_max` photons in the
/// two given modes combined.
fn overflow_weight(register: &ModeRegister, a: usize, b: usize, populations: impl Fn(usize) -> f64) -> f64 {
    (0..register.dim())
        .filter(|&i| register.occupation_of(i, a) + register.occupation_of(i, b) > register.n_max())
        .map(populations)
        .sum()
}

/// Normalized pure state over a truncated multimode Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    register: ModeRegister,
    amplitudes: DVector<C64>,
}

impl PureState {
    /// Wraps amplitudes that are already normalized (within `1e-12`).
    pub fn new(register: ModeRegister, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != register.dim() {
            return Err(Error::shape(register.dim(), amplitudes.len()));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state norm is {norm}, expected 1")));
        }
        Ok(PureState { register, amplitudes })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(register: ModeRegister, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != register.dim() {
            return Err(Error::shape(register.dim(), amplitudes.len()));
        }
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Validation("cannot normalize a zero vector".into()));
        }
        Ok(PureState { register, amplitudes: amplitudes / c(norm) })
    }

    pub fn vacuum(register: ModeRegister) -> Self {
        let mut amplitudes = DVector::zeros(register.dim());
        amplitudes[0] = c(1.0);
        PureState { register, amplitudes }
    }

    /// Product Fock state with the given occupations.
    pub fn fock(register: ModeRegister, occupations: &[usize]) -> Result<Self> {
        if occupations.len() != register.n_modes() {
            return Err(Error::shape(register.n_modes(), occupations.len()));
        }
        if occupations.iter().any(|&n| n > register.n_max()) {
            return Err(Error::Domain("occupation exceeds n_max".into()));
        }
        let mut amplitudes = DVector::zeros(register.dim());
        amplitudes[register.index(occupations)] = c(1.0);
        Ok(PureState { register, amplitudes })
    }

    pub fn register(&self) -> &ModeRegister {
        &self.register
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, occupations: &[usize]) -> C64 {
        self.amplitudes[self.register.index(occupations)]
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let register = self.register.tensor(&other.register)?;
        let amplitudes = self.amplitudes.kronecker(&other.amplitudes);
        Ok(PureState { register, amplitudes })
    }

    pub fn to_density(&self) -> DensityOperator {
        DensityOperator { register: self.register.clone(), matrix: &self.amplitudes * self.amplitudes.adjoint() }
    }

    /// Applies a unitary on the Fock space of `targets` (ordered as given).
    pub fn apply_unitary(&self, u: &DMatrix<C64>, targets: &[ModeLabel]) -> Result<PureState> {
        let split = self.register.split(targets)?;
        local_dim_check(u, &split)?;
        check_unitary(u)?;
        let amplitudes = apply_local_vec(u, &split, &self.amplitudes);
        let norm = amplitudes.norm();
        Ok(PureState { register: self.register.clone(), amplitudes: amplitudes / c(norm) })
    }

    /// Passive linear optics (Jones matrix `u`) mixing modes `a` and `b`.
    ///
    /// Fails with [`Error::Truncation`] when the state has weight on
    /// `n_a + n_b > n_max`, where the truncated map stops being unitary.
    pub fn apply_passive(&self, u: &Matrix2<C64>, a: &ModeLabel, b: &ModeLabel) -> Result<PureState> {
        check_unitary(&DMatrix::from_column_slice(2, 2, u.as_slice()))?;
        let (pa, pb) = (self.register.require(a)?, self.register.require(b)?);
        let weight = overflow_weight(&self.register, pa, pb, |i| self.amplitudes[i].norm_sqr());
        if weight > NORM_TOL {
            return Err(Error::Truncation { weight });
        }
        let op = passive::two_mode_operator(u, self.register.n_max());
        let split = self.register.split(&[*a, *b])?;
        let amplitudes = apply_local_vec(&op, &split, &self.amplitudes);
        PureState::normalized(self.register.clone(), amplitudes)
    }
}

/// Density operator over a truncated multimode Fock basis.
///
/// Every constructor and transformation leaves the matrix Hermitian, with unit
/// trace and no eigenvalue below `-1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    register: ModeRegister,
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    pub fn new(register: ModeRegister, matrix: DMatrix<C64>) -> Result<Self> {
        let dim = register.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::shape(format!("{dim}x{dim}"), format!("{}x{}", matrix.nrows(), matrix.ncols())));
        }
        let herm = (&matrix - matrix.adjoint()).camax();
        if herm > HERMITIAN_TOL {
            return Err(Error::Validation(format!("matrix is not Hermitian ({herm:.3e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Validation(format!("trace is {tr}, expected 1")));
        }
        let min = min_eigenvalue(&matrix);
        if !(min >= -NEGATIVE_EIGEN_TOL) {
            return Err(Error::Validation(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(DensityOperator { register, matrix })
    }

    /// Builds from a positive operator of nonzero trace, normalizing it.
    pub fn from_unnormalized(register: ModeRegister, matrix: DMatrix<C64>) -> Result<Self> {
        let dim = register.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::shape(format!("{dim}x{dim}"), format!("{}x{}", matrix.nrows(), matrix.ncols())));
        }
        let tr = matrix.trace().re;
        if !(tr > 0.0) {
            return Err(Error::Validation("operator has zero trace".into()));
        }
        let matrix = sanitize(matrix / c(tr))?;
        Ok(DensityOperator { register, matrix })
    }

    pub fn register(&self) -> &ModeRegister {
        &self.register
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Matrix element `<row| ρ |col>` by occupation vectors.
    pub fn element(&self, row: &[usize], col: &[usize]) -> C64 {
        self.matrix[(self.register.index(row), self.register.index(col))]
    }

    pub fn population(&self, occupations: &[usize]) -> f64 {
        self.element(occupations, occupations).re
    }

    pub fn tensor(&self, other: &DensityOperator) -> Result<DensityOperator> {
        let register = self.register.tensor(&other.register)?;
        Ok(DensityOperator { register, matrix: self.matrix.kronecker(&other.matrix) })
    }

    pub fn apply_unitary(&self, u: &DMatrix<C64>, targets: &[ModeLabel]) -> Result<DensityOperator> {
        let split = self.register.split(targets)?;
        local_dim_check(u, &split)?;
        check_unitary(u)?;
        let matrix = sanitize(conjugate_local(u, &split, &self.matrix))?;
        Ok(DensityOperator { register: self.register.clone(), matrix })
    }

    /// Passive linear optics mixing modes `a` and `b`; see [`PureState::apply_passive`].
    pub fn apply_passive(&self, u: &Matrix2<C64>, a: &ModeLabel, b: &ModeLabel) -> Result<DensityOperator> {
        check_unitary(&DMatrix::from_column_slice(2, 2, u.as_slice()))?;
        let (pa, pb) = (self.register.require(a)?, self.register.require(b)?);
        let weight = overflow_weight(&self.register, pa, pb, |i| self.matrix[(i, i)].re);
        if weight > NORM_TOL {
            return Err(Error::Truncation { weight });
        }
        let op = passive::two_mode_operator(u, self.register.n_max());
        let split = self.register.split(&[*a, *b])?;
        let matrix = sanitize(conjugate_local(&op, &split, &self.matrix))?;
        Ok(DensityOperator { register: self.register.clone(), matrix })
    }

    /// Applies a sum of Kraus operators acting on `targets`.
    pub(crate) fn apply_kraus(&self, kraus: &[DMatrix<C64>], targets: &[ModeLabel]) -> Result<DensityOperator> {
        let split = self.register.split(targets)?;
        let dim = self.dim();
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for k in kraus {
            local_dim_check(k, &split)?;
            acc += conjugate_local(k, &split, &self.matrix);
        }
        Ok(DensityOperator { register: self.register.clone(), matrix: sanitize(acc)? })
    }

    /// Elementwise (Schur) product with a factor matrix; used by diagonal-Kraus channels.
    pub(crate) fn schur(&self, factor: impl Fn(usize, usize) -> f64) -> Result<DensityOperator> {
        let matrix = DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * factor(i, j));
        Ok(DensityOperator { register: self.register.clone(), matrix: sanitize(matrix)? })
    }

    pub fn apply_channel(&self, channel: &QuantumChannel) -> Result<DensityOperator> {
        channel.apply(self)
    }

    /// Reduced operator on `keep` (in the order given).
    pub fn partial_trace(&self, keep: &[ModeLabel]) -> Result<DensityOperator> {
        if keep.is_empty() {
            return Err(Error::Domain("partial trace needs at least one kept mode".into()));
        }
        let register = self.register.subregister(keep)?;
        let split = self.register.split(keep)?;
        let mut out = DMatrix::<C64>::zeros(split.dt, split.dt);
        for t1 in 0..split.dt {
            for t2 in 0..split.dt {
                let mut acc = c(0.0);
                for r in 0..split.dr {
                    acc += self.matrix[(split.full(t1, r), split.full(t2, r))];
                }
                out[(t1, t2)] = acc;
            }
        }
        Ok(DensityOperator { register, matrix: out })
    }

    /// `Tr[(E ⊗ 1) ρ]` for a positive operator `E` on `targets`.
    pub fn expectation(&self, element: &DMatrix<C64>, targets: &[ModeLabel]) -> Result<f64> {
        let split = self.register.split(targets)?;
        local_dim_check(element, &split)?;
        let mut acc = c(0.0);
        for row in 0..self.dim() {
            for col in 0..self.dim() {
                if split.rest_of[row] != split.rest_of[col] {
                    continue;
                }
                acc += element[(split.target_of[col], split.target_of[row])] * self.matrix[(row, col)];
            }
        }
        Ok(acc.re)
    }

    /// Measures a POVM element on `targets` and discards those modes.
    ///
    /// Returns the outcome probability and the unnormalized post-measurement
    /// operator `Tr_targets[(√E ⊗ 1) ρ (√E ⊗ 1)] = Tr_targets[(E ⊗ 1) ρ]` on the
    /// remaining modes.
    pub fn measure_and_discard(
        &self,
        element: &DMatrix<C64>,
        targets: &[ModeLabel],
    ) -> Result<(f64, ModeRegister, DMatrix<C64>)> {
        let split = self.register.split(targets)?;
        local_dim_check(element, &split)?;
        if split.dr == 1 && split.rest_labels.is_empty() {
            return Err(Error::Domain("measuring every mode leaves nothing to keep".into()));
        }
        let register = self.register.subregister(&split.rest_labels)?;
        let mut out = DMatrix::<C64>::zeros(split.dr, split.dr);
        for r1 in 0..split.dr {
            for r2 in 0..split.dr {
                let mut acc = c(0.0);
                for t1 in 0..split.dt {
                    for t2 in 0..split.dt {
                        let e = element[(t2, t1)];
                        if e.re == 0.0 && e.im == 0.0 {
                            continue;
                        }
                        acc += e * self.matrix[(split.full(t1, r1), split.full(t2, r2))];
                    }
                }
                out[(r1, r2)] = acc;
            }
        }
        // Hermitize the outcome block; its trace is the probability.
        let out = (&out + out.adjoint()) * c(0.5);
        let prob = out.trace().re.max(0.0);
        Ok((prob, register, out))
    }

    /// Renames a mode without touching the matrix.
    pub fn relabel(&self, from: &ModeLabel, to: ModeLabel) -> Result<DensityOperator> {
        Ok(DensityOperator { register: self.register.relabel(from, to)?, matrix: self.matrix.clone() })
    }

    /// Drops a mode that is in vacuum, leaving the rest unchanged.
    pub fn prune_vacuum(&self, mode: &ModeLabel) -> Result<DensityOperator> {
        let pos = self.register.require(mode)?;
        let occupied: f64 =
            (0..self.dim()).filter(|&i| self.register.occupation_of(i, pos) > 0).map(|i| self.matrix[(i, i)].re).sum();
        if occupied > NORM_TOL {
            return Err(Error::Validation(format!("mode {mode} is not in vacuum (occupied weight {occupied:.3e})")));
        }
        let keep: Vec<ModeLabel> = self.register.modes().iter().filter(|m| *m != mode).copied().collect();
        log::debug!("pruning vacuum mode {mode}");
        self.partial_trace(&keep)
    }
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// The LAPACK-free solver can return NaN on sparse rank-deficient input; a
/// spectral shift avoids that without changing the eigenvectors.
pub(crate) fn hermitian_eigen(herm: &DMatrix<C64>) -> Result<SymmetricEigen<C64, Dyn>> {
    let eig = herm.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Ok(eig);
    }
    let n = herm.nrows();
    let shift = herm.camax().max(1e-300) * 1.5;
    let mut eig = (herm + DMatrix::<C64>::identity(n, n) * c(shift)).symmetric_eigen();
    eig.eigenvalues.iter_mut().for_each(|v| *v -= shift);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("eigen-decomposition did not converge".into()));
    }
    Ok(eig)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let herm = (m + m.adjoint()) * c(0.5);
    match hermitian_eigen(&herm) {
        Ok(eig) => eig.eigenvalues.iter().fold(f64::INFINITY, |acc, &v| acc.min(v)),
        Err(_) => f64::NAN,
    }
}

/// Re-Hermitizes and clips small negative eigenvalues.
///
/// Eigenvalues at roundoff level are left alone since rebuilding from the
/// eigenbasis would cost more accuracy than it restores. Eigenvalues down to
/// `-1e-9` are set to zero and the trace restored; anything more negative is an
/// error because no channel produces it.
const ROUNDOFF_EIGEN_TOL: f64 = 1e-12;

pub(crate) fn sanitize(m: DMatrix<C64>) -> Result<DMatrix<C64>> {
    let herm = (&m + m.adjoint()) * c(0.5);
    let trace = herm.trace().re;
    let eig = hermitian_eigen(&herm)?;
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
    if min < -NEGATIVE_EIGEN_TOL * trace.abs().max(1.0) {
        return Err(Error::Validation(format!("channel produced eigenvalue {min:.3e}")));
    }
    if min >= -ROUNDOFF_EIGEN_TOL * trace.abs().max(1.0) {
        return Ok(herm);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let d = DMatrix::from_diagonal(&clipped.map(c));
    let rebuilt = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
    let new_trace = rebuilt.trace().re;
    let scale = if new_trace > 0.0 { trace / new_trace } else { 1.0 };
    let rebuilt = rebuilt * c(scale);
    Ok((&rebuilt + rebuilt.adjoint()) * c(0.5))
}
