use nalgebra::{DMatrix, DVector};

use super::register::{ModeLabel, ModeRegister};
use super::state::{check_unitary, hermitian_eigen, DensityOperator};
use super::{C64, KRAUS_TOL};
use crate::error::{Error, Result};

/// Completely positive trace-preserving maps used by the protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumChannel {
    /// `ρ -> U ρ U†` with `U` on the Fock space of `targets`.
    Unitary { matrix: DMatrix<C64>, targets: Vec<ModeLabel> },
    /// Beam-splitter loss with transmission `eta` on one mode.
    Loss { eta: f64, mode: ModeLabel },
    /// Gaussian-averaged relative phase between two modes.
    ///
    /// Averages `exp(iθ (n_target - n_reference) / 2)` conjugation over a
    /// Gaussian `θ` with `exp(-Var θ / 2) = coherence`, so the single-excitation
    /// coherence `|1,0><0,1|` is multiplied by exactly `coherence`.
    Dephasing { coherence: f64, reference: ModeLabel, target: ModeLabel },
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} = {v} is outside [0, 1]")));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kraus operators of single-mode loss: `K_k |n> = sqrt(C(n,k) η^{n-k} (1-η)^k) |n-k>`.
pub fn loss_kraus(eta: f64, n_max: usize) -> Vec<DMatrix<C64>> {
    let d = n_max + 1;
    (0..d)
        .map(|k| {
            let mut m = DMatrix::<C64>::zeros(d, d);
            for n in k..d {
                let amp = (binomial(n, k) * eta.powi((n - k) as i32) * (1.0 - eta).powi(k as i32)).sqrt();
                m[(n - k, n)] = C64::new(amp, 0.0);
            }
            m
        })
        .collect()
}

fn dephasing_factor(coherence: f64, delta: i64) -> f64 {
    if delta == 0 {
        1.0
    } else {
        coherence.powf((delta * delta) as f64 / 4.0)
    }
}

impl QuantumChannel {
    pub fn unitary(matrix: DMatrix<C64>, targets: Vec<ModeLabel>) -> Result<Self> {
        check_unitary(&matrix)?;
        Ok(QuantumChannel::Unitary { matrix, targets })
    }

    pub fn loss(eta: f64, mode: ModeLabel) -> Result<Self> {
        check_unit_interval("eta", eta)?;
        Ok(QuantumChannel::Loss { eta, mode })
    }

    pub fn dephasing(coherence: f64, reference: ModeLabel, target: ModeLabel) -> Result<Self> {
        check_unit_interval("coherence", coherence)?;
        if reference == target {
            return Err(Error::Validation("dephasing needs two distinct modes".into()));
        }
        Ok(QuantumChannel::Dephasing { coherence, reference, target })
    }

    pub fn targets(&self) -> Vec<ModeLabel> {
        match self {
            QuantumChannel::Unitary { targets, .. } => targets.clone(),
            QuantumChannel::Loss { mode, .. } => vec![*mode],
            QuantumChannel::Dephasing { reference, target, .. } => vec![*reference, *target],
        }
    }

    /// Kraus representation on the channel's target modes.
    pub fn kraus_operators(&self, n_max: usize) -> Vec<DMatrix<C64>> {
        match self {
            QuantumChannel::Unitary { matrix, .. } => vec![matrix.clone()],
            QuantumChannel::Loss { eta, .. } => loss_kraus(*eta, n_max),
            QuantumChannel::Dephasing { coherence, .. } => {
                // Schur multiplier M_ij = g(Δ_i - Δ_j) over Δ = n_t - n_r. With the
                // kernel G = Σ μ v v† the Kraus operators are diag(√μ v[Δ]).
                let d = n_max + 1;
                let nd = 2 * n_max + 1;
                let offset = n_max as i64;
                let kernel = DMatrix::<C64>::from_fn(nd, nd, |a, b| {
                    C64::new(dephasing_factor(*coherence, a as i64 - b as i64), 0.0)
                });
                let eig = hermitian_eigen(&kernel).expect("dephasing kernel is Hermitian");
                let mut out = Vec::new();
                for (k, &mu) in eig.eigenvalues.iter().enumerate() {
                    if mu <= 1e-15 {
                        continue;
                    }
                    let v = eig.eigenvectors.column(k);
                    let diag = DVector::<C64>::from_fn(d * d, |idx, _| {
                        let (nr, nt) = (idx / d, idx % d);
                        let delta = nt as i64 - nr as i64 + offset;
                        v[delta as usize] * mu.sqrt()
                    });
                    out.push(DMatrix::from_diagonal(&diag));
                }
                out
            }
        }
    }

    /// Max deviation of `Σ K†K` from the identity.
    pub fn completeness_error(&self, n_max: usize) -> f64 {
        let kraus = self.kraus_operators(n_max);
        let d = kraus[0].nrows();
        let sum = kraus.iter().fold(DMatrix::<C64>::zeros(d, d), |acc, k| acc + k.adjoint() * k);
        (sum - DMatrix::<C64>::identity(d, d)).camax()
    }

    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        let n_max = rho.register().n_max();
        if self.completeness_error(n_max) > KRAUS_TOL {
            return Err(Error::Validation("channel is not trace preserving".into()));
        }
        match self {
            QuantumChannel::Unitary { matrix, targets } => rho.apply_unitary(matrix, targets),
            QuantumChannel::Loss { eta, mode } => {
                if *eta == 1.0 {
                    rho.register().require(mode)?;
                    return Ok(rho.clone());
                }
                rho.apply_kraus(&loss_kraus(*eta, n_max), &[*mode])
            }
            QuantumChannel::Dephasing { coherence, reference, target } => {
                let reg: &ModeRegister = rho.register();
                let (pr, pt) = (reg.require(reference)?, reg.require(target)?);
                let delta: Vec<i64> =
                    (0..reg.dim()).map(|i| reg.occupation_of(i, pt) as i64 - reg.occupation_of(i, pr) as i64).collect();
                rho.schur(|i, j| dephasing_factor(*coherence, delta[i] - delta[j]))
            }
        }
    }
}

/// Convenience wrapper for [`QuantumChannel::Loss`].
pub fn loss_channel(rho: &DensityOperator, mode: &ModeLabel, eta: f64) -> Result<DensityOperator> {
    QuantumChannel::loss(eta, *mode)?.apply(rho)
}
