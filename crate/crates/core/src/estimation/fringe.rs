use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts at one setting of the scanned phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phase: f64,
    #[serde(rename = "N_plus")]
    pub n_plus: f64,
    #[serde(rename = "N_minus")]
    pub n_minus: f64,
    pub heralds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    pub points: Vec<FringePoint>,
}

impl FringeDataset {
    pub fn new(points: Vec<FringePoint>) -> Result<Self> {
        let d = FringeDataset { points };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(p.n_plus >= 0.0 && p.n_minus >= 0.0 && p.heralds >= 0.0) || !p.phase.is_finite() {
                return Err(Error::Validation(format!("invalid fringe point {p:?}")));
            }
        }
        Ok(())
    }

    pub fn phases(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phase).collect()
    }

    pub fn plus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.n_plus).collect()
    }

    pub fn minus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.n_minus).collect()
    }

    pub fn total_counts(&self) -> f64 {
        self.points.iter().map(|p| p.n_plus + p.n_minus).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FringeDataset {
            points: self
                .points
                .iter()
                .map(|p| FringePoint {
                    phase: p.phase,
                    n_plus: p.n_plus * factor,
                    n_minus: p.n_minus * factor,
                    heralds: p.heralds * factor,
                })
                .collect(),
        }
    }
}

/// Fit of `N(φ) = A (1 + V cos(φ - φ0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub amplitude: f64,
    pub visibility: f64,
    pub visibility_err: f64,
    pub phase_offset: f64,
    pub phase_err: f64,
    /// every count was equal, so no phase dependence can be resolved
    pub degenerate: bool,
    /// the unconstrained optimum had `V > 1` and the fit was redone at `V = 1`
    pub constrained: bool,
    pub chi2: f64,
}

impl SinusoidFit {
    pub fn predict(&self, phi: f64) -> f64 {
        self.amplitude * (1.0 + self.visibility * (phi - self.phase_offset).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub plus: SinusoidFit,
    pub minus: SinusoidFit,
}

fn weighted_linear(phases: &[f64], counts: &[f64], weights: &[f64]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let mut xtwx = Matrix3::zeros();
    let mut xtwy = Vector3::zeros();
    for ((&phi, &n), &w) in phases.iter().zip(counts).zip(weights) {
        let x = Vector3::new(1.0, phi.cos(), phi.sin());
        xtwx += x * x.transpose() * w;
        xtwy += x * (w * n);
    }
    let inv = xtwx.try_inverse()?;
    Some((inv * xtwy, inv))
}

fn pearson_chi2(phases: &[f64], counts: &[f64], floor: f64, model: impl Fn(f64) -> f64) -> f64 {
    phases
        .iter()
        .zip(counts)
        .map(|(&phi, &n)| {
            let m = model(phi).max(floor);
            (n - m).powi(2) / m
        })
        .sum()
}

/// Best `A` for fixed `φ0` at `V = 1`, under Poisson weights `1/pred`.
fn unit_visibility_amplitude(phases: &[f64], counts: &[f64], phi0: f64) -> f64 {
    // d/dA Σ (n - A g)²/(A g) = 0 gives A² = Σ n²/g / Σ g
    let (mut num, mut den) = (0.0, 0.0);
    for (&phi, &n) in phases.iter().zip(counts) {
        let g = (1.0 + (phi - phi0).cos()).max(1e-9);
        num += n * n / g;
        den += g;
    }
    (num / den).sqrt()
}

/// Poisson-weighted least-squares sinusoid fit.
///
/// The model is linear as `a + b cos φ + c sin φ`; weights are refined from
/// the model prediction until stable. Uncertainties come from the inverse of
/// the weighted normal matrix with Poisson variance equal to the prediction.
pub fn fit_sinusoid(phases: &[f64], counts: &[f64]) -> Result<SinusoidFit> {
    if phases.len() != counts.len() {
        return Err(Error::shape(format!("{} counts", phases.len()), counts.len()));
    }
    let mut distinct: Vec<f64> = phases.iter().map(|p| p.rem_euclid(std::f64::consts::TAU)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if distinct.len() < 5 {
        return Err(Error::Validation(format!(
            "a fringe fit needs at least 5 distinct phases, found {}",
            distinct.len()
        )));
    }
    if counts.iter().any(|&n| !(n >= 0.0)) {
        return Err(Error::Validation("counts must be non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedEstimate("fringe has no counts".into()));
    }
    let mean = total / counts.len() as f64;
    let floor = 1e-3 * mean;
    if counts.iter().all(|&n| (n - counts[0]).abs() <= 1e-12 * mean) {
        return Ok(SinusoidFit {
            amplitude: mean,
            visibility: 0.0,
            visibility_err: 1.0,
            phase_offset: 0.0,
            phase_err: std::f64::consts::PI,
            degenerate: true,
            constrained: false,
            chi2: 0.0,
        });
    }

    let mut weights: Vec<f64> = counts.iter().map(|&n| 1.0 / n.max(floor)).collect();
    let mut theta = Vector3::zeros();
    let mut cov = Matrix3::zeros();
    for _ in 0..50 {
        let (t, c) = weighted_linear(phases, counts, &weights)
            .ok_or_else(|| Error::UndefinedEstimate("fringe design matrix is singular".into()))?;
        let change = (t - theta).abs().max();
        theta = t;
        cov = c;
        weights = phases
            .iter()
            .map(|&phi| 1.0 / (theta[0] + theta[1] * phi.cos() + theta[2] * phi.sin()).max(floor))
            .collect();
        if change <= 1e-14 * theta[0].abs() {
            break;
        }
    }
    let (a, b, c) = (theta[0], theta[1], theta[2]);
    if !(a > 0.0) {
        return Err(Error::UndefinedEstimate("fitted mean count is not positive".into()));
    }
    let r = b.hypot(c);
    let v = r / a;
    let phi0 = c.atan2(b);
    let (gv, gp) = if r > 0.0 {
        (Vector3::new(-v / a, b / (a * r), c / (a * r)), Vector3::new(0.0, -c / (r * r), b / (r * r)))
    } else {
        (Vector3::new(0.0, 1.0 / a, 1.0 / a), Vector3::zeros())
    };
    let v_err = (gv.transpose() * cov * gv)[(0, 0)].max(0.0).sqrt();
    let p_err = if r > 0.0 { (gp.transpose() * cov * gp)[(0, 0)].max(0.0).sqrt() } else { std::f64::consts::PI };

    if v <= 1.0 {
        let chi2 = pearson_chi2(phases, counts, floor, |phi| a + b * phi.cos() + c * phi.sin());
        return Ok(SinusoidFit {
            amplitude: a,
            visibility: v,
            visibility_err: v_err,
            phase_offset: phi0,
            phase_err: p_err,
            degenerate: false,
            constrained: false,
            chi2,
        });
    }

    // V = 1 boundary: one-dimensional search over the phase offset
    let objective = |p0: f64| {
        let amp = unit_visibility_amplitude(phases, counts, p0);
        pearson_chi2(phases, counts, floor, |phi| amp * (1.0 + (phi - p0).cos()))
    };
    let width = 4.0 * p_err.clamp(1e-3, 0.5);
    let (mut lo, mut hi) = (phi0 - width, phi0 + width);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - golden * (hi - lo);
    let mut x2 = lo + golden * (hi - lo);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = objective(x2);
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let p0 = 0.5 * (lo + hi);
    Ok(SinusoidFit {
        amplitude: unit_visibility_amplitude(phases, counts, p0),
        visibility: 1.0,
        visibility_err: v_err,
        phase_offset: p0,
        phase_err: p_err,
        degenerate: false,
        constrained: true,
        chi2: objective(p0),
    })
}

/// Fits the two complementary output fringes independently.
pub fn fit_fringe(data: &FringeDataset) -> Result<FringeFit> {
    data.validate()?;
    let phases = data.phases();
    Ok(FringeFit { plus: fit_sinusoid(&phases, &data.plus())?, minus: fit_sinusoid(&phases, &data.minus())? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};
    use std::f64::consts::{PI, TAU};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 * TAU / n as f64).collect()
    }

    #[test]
    fn exact_cosine() {
        let ph = grid(12);
        let counts: Vec<f64> = ph.iter().map(|p| 500.0 * (1.0 + (p - 0.4).cos())).collect();
        let f = fit_sinusoid(&ph, &counts).unwrap();
        assert!((f.visibility - 1.0).abs() < 1e-9, "{f:?}");
        assert!((f.phase_offset - 0.4).abs() < 1e-6);
    }

    #[test]
    fn constant_is_degenerate() {
        let ph = grid(8);
        let f = fit_sinusoid(&ph, &[7.0; 8]).unwrap();
        assert_eq!(f.visibility, 0.0);
        assert!(f.degenerate);
        assert!(f.visibility_err >= 1.0);
    }

    #[test]
    fn overshoot_is_clamped() {
        let ph = grid(10);
        let counts: Vec<f64> = ph.iter().map(|p| (1000.0 * (1.0 + 1.05 * p.cos())).max(0.0)).collect();
        let f = fit_sinusoid(&ph, &counts).unwrap();
        assert!(f.constrained);
        assert_eq!(f.visibility, 1.0);
        assert!(f.phase_offset.abs() < 0.05);
    }

    #[test]
    fn input_checks() {
        assert!(fit_sinusoid(&grid(4), &[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(matches!(fit_sinusoid(&grid(6), &[0.0; 6]), Err(Error::UndefinedEstimate(_))));
        assert!(fit_sinusoid(&grid(6), &[1.0; 5]).is_err());
    }

    #[test]
    fn scale_invariance() {
        let ph = grid(13);
        let counts: Vec<f64> =
            ph.iter().enumerate().map(|(i, p)| 200.0 * (1.0 + 0.8 * (p + 1.0).cos()) + (i % 3) as f64 * 7.0).collect();
        let base = fit_sinusoid(&ph, &counts).unwrap();
        for s in [0.1, 3.0, 250.0] {
            let scaled: Vec<f64> = counts.iter().map(|n| n * s).collect();
            let f = fit_sinusoid(&ph, &scaled).unwrap();
            assert!((f.visibility - base.visibility).abs() < 1e-12);
            assert!((f.visibility_err * s.sqrt() / base.visibility_err - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_error_bar_is_calibrated() {
        // 13 settings with ~120 counts at mean put σ_V near 0.02 for V = 0.9
        let ph = grid(13);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (v_true, amp) = (0.90, 120.0);
        let mut vs = Vec::new();
        let mut errs = Vec::new();
        for _ in 0..1000 {
            let counts: Vec<f64> = ph
                .iter()
                .map(|p| Poisson::new(amp * (1.0 + v_true * (p - 0.3).cos())).unwrap().sample(&mut rng))
                .collect();
            let f = fit_sinusoid(&ph, &counts).unwrap();
            vs.push(f.visibility);
            errs.push(f.visibility_err);
        }
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let sd = (vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mean_err = errs.iter().sum::<f64>() / n;
        assert!((mean - v_true).abs() < 0.005, "mean={mean}");
        assert!((sd / mean_err - 1.0).abs() < 0.1, "sd={sd} reported={mean_err}");
        assert!((mean_err - 0.02).abs() < 0.005, "reported={mean_err}");
    }

    #[test]
    fn complementary_fringes() {
        let ph = grid(9);
        let pts = ph
            .iter()
            .map(|&p| FringePoint {
                phase: p,
                n_plus: 100.0 * (1.0 + 0.7 * p.cos()),
                n_minus: 100.0 * (1.0 - 0.7 * p.cos()),
                heralds: 1e4,
            })
            .collect();
        let fit = fit_fringe(&FringeDataset::new(pts).unwrap()).unwrap();
        assert!((fit.plus.visibility - 0.7).abs() < 1e-9);
        assert!((fit.minus.visibility - 0.7).abs() < 1e-9);
        assert!(((fit.plus.phase_offset - fit.minus.phase_offset).abs() - PI).abs() < 1e-9);
    }
}
