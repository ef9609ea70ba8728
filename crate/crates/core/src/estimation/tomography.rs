use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::C64;
use crate::polarization::{kron2, phi_plus, PairSetting, TwoQubitState};

use super::entanglement::{two_qubit_fidelity, wootters_concurrence};

/// The sixteen-setting overcomplete-free two-qubit measurement set.
pub const JAMES_SETTINGS: [&str; 16] =
    ["HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH", "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL"];

pub fn james_settings() -> Vec<PairSetting> {
    JAMES_SETTINGS.iter().map(|s| s.parse().expect("static setting")).collect()
}

/// Coincidences recorded behind one pair of projectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingCount {
    pub setting: PairSetting,
    pub counts: f64,
}

fn pauli(k: usize) -> Matrix2<C64> {
    let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    match k {
        0 => Matrix2::new(o, z, z, o),
        1 => Matrix2::new(z, o, o, z),
        2 => Matrix2::new(z, -i, i, z),
        _ => Matrix2::new(o, z, z, -o),
    }
}

fn pauli_basis() -> Vec<Matrix4<C64>> {
    (0..16).map(|k| kron2(&pauli(k / 4), &pauli(k % 4)) * C64::new(0.25, 0.0)).collect()
}

/// Unconstrained linear inversion with the overall rate as a free scale; the
/// result is normalized but may have negative eigenvalues.
pub fn linear_inversion(data: &[SettingCount]) -> Result<Matrix4<C64>> {
    let basis = pauli_basis();
    let a = DMatrix::from_fn(data.len(), 16, |s, k| (data[s].setting.projector() * basis[k]).trace().re);
    let svd = SVD::new(a.clone(), true, true);
    let tol = 1e-10 * svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|v| **v > tol).count();
    if rank < 16 {
        return Err(Error::Incomplete(format!("measurement set has rank {rank} of 16")));
    }
    let n = DVector::from_iterator(data.len(), data.iter().map(|d| d.counts));
    let r = svd.solve(&n, tol).map_err(|e| Error::Domain(e.to_string()))?;
    let m: Matrix4<C64> = basis.iter().zip(r.iter()).map(|(b, c)| b * C64::new(*c, 0.0)).sum();
    let tr = m.trace().re;
    if !(tr > 0.0) {
        return Err(Error::UndefinedEstimate("no counts to invert".into()));
    }
    Ok(m / C64::new(tr, 0.0))
}

const OFF_DIAG: [(usize, usize); 6] = [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2)];

fn to_t(x: &[f64]) -> Matrix4<C64> {
    let mut t = Matrix4::zeros();
    for i in 0..4 {
        t[(i, i)] = C64::new(x[i], 0.0);
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        t[(i, j)] = C64::new(x[4 + 2 * k], x[5 + 2 * k]);
    }
    t
}

fn from_density(rho: &Matrix4<C64>) -> Vec<f64> {
    // Cholesky of a slightly mixed copy keeps every parameter active.
    let herm = DMatrix::from_fn(4, 4, |i, j| (rho[(i, j)] + rho[(j, i)].conj()) * 0.5);
    let fixed = match crate::fock::hermitian_eigen(&herm) {
        Ok(eig) => {
            let vals = DVector::from_fn(4, |k, _| C64::new(eig.eigenvalues[k].max(0.0), 0.0));
            &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.adjoint()
        }
        Err(_) => DMatrix::identity(4, 4) * C64::new(0.25, 0.0),
    };
    let tr = fixed.trace().re.max(1e-300);
    let mixed = fixed / C64::new(tr, 0.0) * C64::new(0.98, 0.0) + DMatrix::identity(4, 4) * C64::new(0.005, 0.0);
    let l = mixed.cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(4, 4) * C64::new(0.5, 0.0));
    let mut x = vec![0.0; 16];
    for i in 0..4 {
        x[i] = l[(i, i)].re;
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        x[4 + 2 * k] = l[(i, j)].re;
        x[5 + 2 * k] = l[(i, j)].im;
    }
    x
}

struct Objective {
    projectors: Vec<Matrix4<C64>>,
    counts: Vec<f64>,
    total: f64,
    sum_p: Matrix4<C64>,
}

impl Objective {
    fn new(data: &[SettingCount]) -> Self {
        let projectors: Vec<_> = data.iter().map(|d| d.setting.projector()).collect();
        let sum_p = projectors.iter().sum();
        Objective {
            counts: data.iter().map(|d| d.counts).collect(),
            total: data.iter().map(|d| d.counts).sum(),
            projectors,
            sum_p,
        }
    }

    /// Profile log-likelihood per count, invariant under `A -> cA`.
    fn log_likelihood(&self, a: &Matrix4<C64>) -> f64 {
        let mut ll = 0.0;
        for (p, &n) in self.projectors.iter().zip(&self.counts) {
            if n > 0.0 {
                ll += n * (p * a).trace().re.max(1e-300).ln();
            }
        }
        let norm = (self.sum_p * a).trace().re.max(1e-300);
        (ll - self.total * norm.ln()) / self.total
    }

    /// Negative mean log-likelihood plus a trace anchor, with its gradient.
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let t = to_t(x);
        let a = t * t.adjoint();
        let mut g = -self.sum_p * C64::new(self.total / (self.sum_p * a).trace().re.max(1e-300), 0.0);
        for (p, &n) in self.projectors.iter().zip(&self.counts) {
            if n > 0.0 {
                g += p * C64::new(n / (p * a).trace().re.max(1e-300), 0.0);
            }
        }
        let tr = a.trace().re;
        let f = -self.log_likelihood(&a) + (tr - 1.0).powi(2);
        let gt = g * t / C64::new(self.total, 0.0);
        let anchor = 4.0 * (tr - 1.0);
        let mut grad = vec![0.0; 16];
        for i in 0..4 {
            grad[i] = -2.0 * gt[(i, i)].re + anchor * x[i];
        }
        for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
            grad[4 + 2 * k] = -2.0 * gt[(i, j)].re + anchor * x[4 + 2 * k];
            grad[5 + 2 * k] = -2.0 * gt[(i, j)].im + anchor * x[5 + 2 * k];
        }
        (f, grad)
    }
}

/// BFGS with Armijo backtracking. Returns the minimizer and iteration count.
fn bfgs(obj: &Objective, x0: Vec<f64>, max_iter: usize, tol: f64) -> (Vec<f64>, usize) {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut f, g0) = obj.value_grad(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    for it in 0..max_iter {
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand = &x + &dir * step;
            let (fc, gc) = obj.value_grad(cand.as_slice());
            if fc <= f + 1e-4 * step * slope || step < 1e-12 {
                break (cand, fc, DVector::from_vec(gc));
            }
            step *= 0.5;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let df = f - f_new;
        x = x_new;
        g = g_new;
        f = f_new;
        if df.abs() < tol && g.norm() < 1e-6 {
            return (x.as_slice().to_vec(), it + 1);
        }
        if step < 1e-12 {
            return (x.as_slice().to_vec(), it + 1);
        }
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
    }
    (x.as_slice().to_vec(), max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    /// stop once the mean log-likelihood improves by less than this
    pub tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { max_iter: 10_000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub state: TwoQubitState,
    /// mean log-likelihood per count
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Maximum-likelihood state under a Cholesky parametrization `ρ = T T† / Tr`.
pub fn maximum_likelihood(data: &[SettingCount], opts: &MleOptions) -> Result<MleFit> {
    if data.iter().any(|d| !(d.counts >= 0.0)) {
        return Err(Error::Validation("counts must be non-negative".into()));
    }
    let start = linear_inversion(data)?;
    let obj = Objective::new(data);
    let (x, iterations) = bfgs(&obj, from_density(&start), opts.max_iter, opts.tolerance);
    let t = to_t(&x);
    let a = t * t.adjoint();
    let log_likelihood = obj.log_likelihood(&a);
    let state = TwoQubitState::from_unnormalized(a)?;
    Ok(MleFit { state, log_likelihood, iterations })
}

/// Reconstructed state with entanglement figures and bootstrap errors.
#[derive(Debug, Clone, Serialize)]
pub struct TomographyResult {
    pub rho_re: Vec<Vec<f64>>,
    pub rho_im: Vec<Vec<f64>>,
    pub concurrence: f64,
    pub concurrence_err: f64,
    /// overlap with `Φ+`
    pub fidelity: f64,
    pub fidelity_err: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub resamples: usize,
    #[serde(skip)]
    pub state: Option<TwoQubitState>,
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// MLE reconstruction with a Poisson parametric bootstrap of concurrence and fidelity.
pub fn reconstruct(data: &[SettingCount], opts: &MleOptions, resamples: usize, seed: u64) -> Result<TomographyResult> {
    let fit = maximum_likelihood(data, opts)?;
    let target = phi_plus();
    let concurrence = wootters_concurrence(&fit.state)?;
    let fidelity = two_qubit_fidelity(&fit.state, &target);
    let boot: Vec<(f64, f64)> = (0..resamples)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let resampled: Vec<SettingCount> = data
                .iter()
                .map(|d| SettingCount {
                    setting: d.setting,
                    counts: if d.counts > 0.0 {
                        Poisson::new(d.counts).map(|p| p.sample(&mut rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    },
                })
                .collect();
            let f = maximum_likelihood(&resampled, opts).ok()?;
            Some((wootters_concurrence(&f.state).ok()?, two_qubit_fidelity(&f.state, &target)))
        })
        .collect();
    let cs: Vec<f64> = boot.iter().map(|b| b.0).collect();
    let fs: Vec<f64> = boot.iter().map(|b| b.1).collect();
    let m = fit.state.matrix();
    Ok(TomographyResult {
        rho_re: (0..4).map(|i| (0..4).map(|j| m[(i, j)].re).collect()).collect(),
        rho_im: (0..4).map(|i| (0..4).map(|j| m[(i, j)].im).collect()).collect(),
        concurrence,
        concurrence_err: std_dev(&cs),
        fidelity,
        fidelity_err: std_dev(&fs),
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
        resamples: boot.len(),
        state: Some(fit.state),
    })
}

/// Expected counts `N Tr(P_s ρ)` at each setting.
pub fn expected_counts(state: &TwoQubitState, settings: &[PairSetting], per_setting: f64) -> Vec<SettingCount> {
    settings
        .iter()
        .map(|s| SettingCount { setting: *s, counts: per_setting * state.probability(&s.projector()) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::PolState;
    use proptest::prelude::*;
    use rand_distr::Binomial;

    fn sample(state: &TwoQubitState, per_setting: u64, seed: u64) -> Vec<SettingCount> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        james_settings()
            .into_iter()
            .map(|s| {
                let p = state.probability(&s.projector()).clamp(0.0, 1.0);
                let n = Binomial::new(per_setting, p).unwrap().sample(&mut rng);
                SettingCount { setting: s, counts: n as f64 }
            })
            .collect()
    }

    #[test]
    fn james_set_is_complete() {
        let data = expected_counts(&TwoQubitState::maximally_mixed(), &james_settings(), 1.0);
        assert!(linear_inversion(&data).is_ok());
        let partial: Vec<_> = data[..15].to_vec();
        assert!(matches!(linear_inversion(&partial), Err(Error::Incomplete(_))));
    }

    #[test]
    fn noiseless_inversion_is_exact() {
        let rho = TwoQubitState::dephased_bell(0.875).unwrap();
        let m = linear_inversion(&expected_counts(&rho, &james_settings(), 1234.5)).unwrap();
        assert!((m - rho.matrix()).camax() < 1e-10);
    }

    #[test]
    fn mle_recovers_noiseless_state() {
        let rho = TwoQubitState::werner(0.8).unwrap();
        let fit = maximum_likelihood(&expected_counts(&rho, &james_settings(), 5e4), &MleOptions::default()).unwrap();
        assert!((fit.state.matrix() - rho.matrix()).camax() < 1e-4);
    }

    #[test]
    fn mle_handles_pure_targets() {
        let rho = TwoQubitState::pure(&phi_plus()).unwrap();
        let fit = maximum_likelihood(&expected_counts(&rho, &james_settings(), 1e5), &MleOptions::default()).unwrap();
        assert!(two_qubit_fidelity(&fit.state, &phi_plus()) > 0.999);
        assert!(fit.state.min_eigenvalue() > -1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rho = TwoQubitState::werner(0.6).unwrap();
        let obj = Objective::new(&sample(&rho, 1000, 3));
        let x: Vec<f64> = (0..16).map(|k| 0.3 + 0.05 * k as f64).collect();
        let (_, g) = obj.value_grad(&x);
        for k in 0..16 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let fd = (obj.value_grad(&up).0 - obj.value_grad(&dn).0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn bootstrap_reports_spread() {
        let rho = TwoQubitState::dephased_bell(0.875).unwrap();
        let data = sample(&rho, 20_000, 9);
        let r = reconstruct(&data, &MleOptions::default(), 40, 1).unwrap();
        assert!(r.resamples == 40);
        assert!(r.concurrence_err > 0.0 && r.concurrence_err < 0.05);
        assert!((r.concurrence - 0.875).abs() < 5.0 * r.concurrence_err + 0.01);
        assert!(!serde_json::to_string(&r).unwrap().is_empty());
    }

    #[test]
    fn zero_counts_are_tolerated() {
        let rho =
            TwoQubitState::pure(&crate::polarization::product_ket(&PolState::H.ket(), &PolState::H.ket())).unwrap();
        let data = expected_counts(&rho, &james_settings(), 1e4);
        assert!(data.iter().any(|d| d.counts == 0.0));
        let fit = maximum_likelihood(&data, &MleOptions::default()).unwrap();
        assert!(fit.state.matrix()[(0, 0)].re > 0.999);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn round_trip_fidelity(p in 0.3f64..1.0, seed in 0u64..1000) {
            let rho = TwoQubitState::werner(p).unwrap();
            let fit = maximum_likelihood(&sample(&rho, 62_500, seed), &MleOptions::default()).unwrap();
            let f = super::super::entanglement::uhlmann_fidelity(&rho, &fit.state).unwrap();
            prop_assert!(f >= 0.99, "fidelity = {f}");
        }
    }
}
