//! Truncated multimode Fock-space engine.
//!
//! States are dense complex vectors or matrices over the product basis of a
//! [`ModeRegister`]. All values are immutable; every operation returns a new
//! state.

mod channel;
pub mod passive;
mod register;
mod state;

pub use channel::{loss_channel, loss_kraus, QuantumChannel};
pub use register::{ModeLabel, ModeRegister, Polarization, Site, Species};
pub(crate) use state::{hermitian_eigen, min_eigenvalue};
pub use state::{DensityOperator, PureState};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-9;
pub const UNITARY_TOL: f64 = 1e-10;
pub const KRAUS_TOL: f64 = 1e-10;
pub const POVM_TOL: f64 = 1e-10;

/// Default photon-number cutoff per mode.
pub const DEFAULT_N_MAX: usize = 2;

/// Two-mode squeezed vacuum `Σ_n c_n |n, n>` with `|c_n|² ∝ chi^n`, truncated at `n_max`.
pub fn two_mode_squeezed(chi: f64, n_max: usize, modes: [ModeLabel; 2]) -> Result<PureState> {
    if !(0.0..1.0).contains(&chi) {
        return Err(Error::Domain(format!("chi = {chi} is outside [0, 1)")));
    }
    if n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let register = ModeRegister::new(modes.to_vec(), n_max)?;
    let mut amps = DVector::<C64>::zeros(register.dim());
    for n in 0..=n_max {
        amps[register.index(&[n, n])] = C64::new(chi.powf(n as f64 / 2.0), 0.0);
    }
    PureState::normalized(register, amps)
}

/// `diag(exp(i φ n))` on one mode.
pub fn phase_shift(phi: f64, n_max: usize) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_fn(n_max + 1, |n, _| C64::from_polar(1.0, phi * n as f64)))
}

/// Projector onto occupation `n` of a single mode.
pub fn number_projector(n: usize, n_max: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(n_max + 1, n_max + 1);
    m[(n, n)] = C64::new(1.0, 0.0);
    m
}

/// Checks that `elements` form a POVM on a space of dimension `dim`.
pub fn validate_povm(elements: &[DMatrix<C64>], dim: usize) -> Result<()> {
    if elements.is_empty() {
        return Err(Error::Validation("empty POVM".into()));
    }
    let mut sum = DMatrix::<C64>::zeros(dim, dim);
    for (k, e) in elements.iter().enumerate() {
        if e.nrows() != dim || e.ncols() != dim {
            return Err(Error::shape(format!("{dim}x{dim}"), format!("{}x{}", e.nrows(), e.ncols())));
        }
        if (e - e.adjoint()).camax() > POVM_TOL {
            return Err(Error::Validation(format!("POVM element {k} is not Hermitian")));
        }
        let min = min_eigenvalue(e);
        if min < -POVM_TOL {
            return Err(Error::Validation(format!("POVM element {k} has eigenvalue {min:.3e}")));
        }
        sum += e;
    }
    let err = (sum - DMatrix::<C64>::identity(dim, dim)).camax();
    if err > POVM_TOL {
        return Err(Error::Validation(format!("POVM elements do not sum to identity ({err:.3e})")));
    }
    Ok(())
}

/// Outcome probabilities of a POVM on `targets` (all modes when `targets` is empty).
pub fn outcome_probabilities(rho: &DensityOperator, povm: &[DMatrix<C64>], targets: &[ModeLabel]) -> Result<Vec<f64>> {
    let targets: Vec<ModeLabel> = if targets.is_empty() { rho.register().modes().to_vec() } else { targets.to_vec() };
    let dim = rho.register().n_max().saturating_add(1).pow(targets.len() as u32);
    validate_povm(povm, dim)?;
    let mut probs =
        povm.iter().map(|e| rho.expectation(e, &targets).map(|p| p.max(0.0))).collect::<Result<Vec<f64>>>()?;
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| *p /= total);
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn tms_modes() -> [ModeLabel; 2] {
        [ModeLabel::spin_wave(Site::L), ModeLabel::stokes(Site::L)]
    }

    #[test]
    fn squeezed_vacuum_limit() {
        let s = two_mode_squeezed(0.0, 2, tms_modes()).unwrap();
        assert_eq!(s.amplitude(&[0, 0]), C64::new(1.0, 0.0));
        assert!(s.amplitudes().iter().skip(1).all(|a| a.norm() == 0.0));
    }

    #[test]
    fn squeezed_weights_chi_004() {
        let s = two_mode_squeezed(0.04, 2, tms_modes()).unwrap();
        let p0 = s.amplitude(&[0, 0]).norm_sqr();
        assert!((p0 - 1.0 / (1.0 + 0.04 + 0.0016)).abs() < 1e-15);
        let a0 = s.amplitude(&[0, 0]).re;
        assert!((s.amplitude(&[1, 1]).re / a0 - 0.2).abs() < 1e-14);
        assert!((s.amplitude(&[2, 2]).re / a0 - 0.04).abs() < 1e-14);
    }

    #[test]
    fn squeezed_domain_errors() {
        assert!(matches!(two_mode_squeezed(1.0, 2, tms_modes()), Err(Error::Domain(_))));
        assert!(matches!(two_mode_squeezed(-0.1, 2, tms_modes()), Err(Error::Domain(_))));
        assert!(matches!(two_mode_squeezed(0.1, 0, tms_modes()), Err(Error::Domain(_))));
    }

    #[test]
    fn successive_weight_ratio_is_chi() {
        for chi in [1e-3, 0.05, 0.3, 0.9] {
            let s = two_mode_squeezed(chi, 3, tms_modes()).unwrap();
            // brute-force: collect the weight of every basis state by its occupation
            let reg = s.register();
            let mut by_n = [0.0; 4];
            for i in 0..reg.dim() {
                let occ = reg.occupations(i);
                let w = s.amplitudes()[i].norm_sqr();
                if w > 0.0 {
                    assert_eq!(occ[0], occ[1]);
                    by_n[occ[0]] += w;
                }
            }
            assert!((by_n[1] / by_n[0] - chi).abs() < 1e-12 * chi.max(1.0));
        }
    }

    fn h_v_register() -> (ModeRegister, ModeLabel, ModeLabel) {
        let h = ModeLabel::anti_stokes(Site::L);
        let v = ModeLabel::anti_stokes(Site::R);
        (ModeRegister::new(vec![h, v], 1).unwrap(), h, v)
    }

    #[test]
    fn half_wave_plate_on_h() {
        let (reg, h, v) = h_v_register();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let hwp = Matrix2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0));
        let photon_h = PureState::fock(reg, &[1, 0]).unwrap();
        let out = photon_h.apply_passive(&hwp, &h, &v).unwrap();
        assert!((out.amplitude(&[1, 0]).re - s).abs() < 1e-15);
        assert!((out.amplitude(&[0, 1]).re - s).abs() < 1e-15);
    }

    #[test]
    fn phase_shift_fringe_after_balanced_merge() {
        let (reg, h, v) = h_v_register();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bs = Matrix2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0));
        let mut amps = DVector::<C64>::zeros(4);
        amps[reg.index(&[1, 0])] = C64::new(s, 0.0);
        amps[reg.index(&[0, 1])] = C64::new(s, 0.0);
        let input = PureState::new(reg.clone(), amps).unwrap();
        for k in 0..16 {
            let phi = k as f64 * 0.41;
            let shifted = input.apply_unitary(&phase_shift(phi, 1), &[v]).unwrap();
            let rel = shifted.amplitude(&[0, 1]) / shifted.amplitude(&[1, 0]);
            assert!((rel - C64::from_polar(1.0, phi)).norm() < 1e-12);
            let merged = shifted.apply_passive(&bs, &h, &v).unwrap();
            // independent propagation of the two-component amplitude vector
            let a = (C64::new(1.0, 0.0) + C64::from_polar(1.0, phi)) * 0.5;
            assert!((merged.amplitude(&[1, 0]).norm_sqr() - a.norm_sqr()).abs() < 1e-12);
            assert!((a.norm_sqr() - (phi / 2.0).cos().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn vacuum_number_measurement() {
        let reg = ModeRegister::new(vec![ModeLabel::anti_stokes(Site::L)], 1).unwrap();
        let rho = PureState::vacuum(reg).to_density();
        let p = outcome_probabilities(&rho, &[number_projector(0, 1), number_projector(1, 1)], &[]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(matches!(outcome_probabilities(&rho, &[number_projector(0, 1)], &[]), Err(Error::Validation(_))));
    }

    #[test]
    fn diagonal_basis_probabilities() {
        // single photon (|H> + e^{iφ}|V>)/√2 measured in the ±45° basis
        let (reg, h, v) = h_v_register();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [C64::new(s, 0.0), C64::new(s, 0.0)];
        let minus = [C64::new(s, 0.0), C64::new(-s, 0.0)];
        for k in 0..10 {
            let phi = 0.7 * k as f64;
            let mut amps = DVector::<C64>::zeros(4);
            amps[reg.index(&[1, 0])] = C64::new(s, 0.0);
            amps[reg.index(&[0, 1])] = C64::from_polar(s, phi);
            let rho = PureState::new(reg.clone(), amps).unwrap().to_density();
            let proj = |ket: [C64; 2]| {
                let mut m = DMatrix::<C64>::zeros(4, 4);
                let idx = [reg.index(&[1, 0]), reg.index(&[0, 1])];
                for a in 0..2 {
                    for b in 0..2 {
                        m[(idx[a], idx[b])] = ket[a] * ket[b].conj();
                    }
                }
                m
            };
            let mut rest = DMatrix::<C64>::identity(4, 4);
            let (pp, pm) = (proj(plus), proj(minus));
            rest -= &pp;
            rest -= &pm;
            let probs = outcome_probabilities(&rho, &[pp, pm, rest], &[h, v]).unwrap();
            assert!((probs[0] - (phi / 2.0).cos().powi(2)).abs() < 1e-12);
            assert!((probs[1] - (phi / 2.0).sin().powi(2)).abs() < 1e-12);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
