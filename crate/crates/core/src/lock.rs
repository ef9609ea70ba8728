//! Interferometer phase drift and the integral feedback lock.
//!
//! Phases are deviations from the lock point: the interferometer sits at
//! `setpoint + φ_drift + u` where `u` is the actuator position.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ornstein–Uhlenbeck phase noise with a linear drift term:
/// `dφ = (v - κ φ) dt + σ_w dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftModel {
    /// mean-reversion rate (1/s)
    pub kappa: f64,
    /// diffusion strength (rad/√s)
    pub sigma_w: f64,
    /// deterministic drift (rad/s)
    pub v_drift: f64,
    /// integration step (s)
    pub dt: f64,
    pub phi0: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel { kappa: 0.2, sigma_w: 1.5, v_drift: 0.3, dt: 1e-3, phi0: 0.0 }
    }
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Domain(format!("kappa = {} must be finite and >= 0", self.kappa)));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::Domain(format!("sigma_w = {} must be finite and >= 0", self.sigma_w)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt = {} must be positive", self.dt)));
        }
        if !self.v_drift.is_finite() || !self.phi0.is_finite() {
            return Err(Error::Domain("drift and initial phase must be finite".into()));
        }
        Ok(())
    }

    /// Exact one-step transition `(decay, mean shift, noise std)`.
    fn step_coefficients(&self) -> (f64, f64, f64) {
        let dt = self.dt;
        if self.kappa * dt < 1e-12 {
            (1.0, self.v_drift * dt, self.sigma_w * dt.sqrt())
        } else {
            let a = (-self.kappa * dt).exp();
            let shift = self.v_drift / self.kappa * (1.0 - a);
            let sd = self.sigma_w * ((1.0 - a * a) / (2.0 * self.kappa)).sqrt();
            (a, shift, sd)
        }
    }

    fn steps(&self, duration: f64) -> Result<usize> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Domain(format!("duration = {duration} must be positive")));
        }
        Ok((duration / self.dt).ceil() as usize)
    }

    /// Open-loop stationary standard deviation (infinite without mean reversion).
    pub fn stationary_std(&self) -> f64 {
        if self.kappa > 0.0 {
            self.sigma_w / (2.0 * self.kappa).sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// Sample path of the free-running phase, `steps + 1` points starting at `phi0`.
pub fn evolve_unlocked<R: Rng + ?Sized>(model: &DriftModel, duration: f64, rng: &mut R) -> Result<Vec<f64>> {
    model.validate()?;
    let n = model.steps(duration)?;
    let (a, shift, sd) = model.step_coefficients();
    let mut path = Vec::with_capacity(n + 1);
    let mut phi = model.phi0;
    path.push(phi);
    for _ in 0..n {
        let xi: f64 = if sd > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        phi = a * phi + shift + sd * xi;
        path.push(phi);
    }
    Ok(path)
}

/// Auxiliary-fringe error `I(φ) - I(setpoint)` with `I(x) = (1 + cos x)/2`.
pub fn error_signal(phi: f64, setpoint: f64) -> f64 {
    ((1.0 + phi.cos()) - (1.0 + setpoint.cos())) / 2.0
}

/// Integral controller (optional proportional term) driving a piezo actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controller {
    /// integral gain (1/s)
    pub k_i: f64,
    pub k_p: f64,
    /// controller update period (s)
    pub update_period: f64,
    /// actuator saturation (rad)
    pub actuator_range: f64,
    /// lock point on the auxiliary fringe (rad)
    pub setpoint: f64,
    /// additive Gaussian noise on the error signal
    pub error_noise: f64,
    /// a lock counts as acquired when the residual std is at most this
    pub lock_threshold: f64,
    /// settling band around the lock point (rad)
    pub settle_band: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Controller {
            k_i: 100.0,
            k_p: 0.0,
            update_period: 1e-3,
            actuator_range: 20.0,
            setpoint: std::f64::consts::FRAC_PI_2,
            error_noise: 0.0,
            lock_threshold: 0.52,
            settle_band: 0.1,
        }
    }
}

impl Controller {
    pub fn validate(&self, model: &DriftModel) -> Result<()> {
        if !(self.update_period >= model.dt * (1.0 - 1e-9)) {
            return Err(Error::Validation(format!(
                "update_period {} is shorter than the step {}",
                self.update_period, model.dt
            )));
        }
        if !(self.actuator_range > 0.0) {
            return Err(Error::Validation("actuator_range must be positive".into()));
        }
        if !(self.k_i >= 0.0 && self.k_p >= 0.0 && self.error_noise >= 0.0) {
            return Err(Error::Validation("gains and error noise must be >= 0".into()));
        }
        if self.slope().abs() < 1e-6 {
            return Err(Error::Validation(format!(
                "setpoint {} sits on a fringe extremum with no error slope",
                self.setpoint
            )));
        }
        if !(self.lock_threshold > 0.0 && self.settle_band > 0.0) {
            return Err(Error::Validation("lock_threshold and settle_band must be positive".into()));
        }
        Ok(())
    }

    /// `dI/dφ` at the setpoint.
    pub fn slope(&self) -> f64 {
        -self.setpoint.sin() / 2.0
    }

    pub fn with_gain(&self, k_i: f64) -> Self {
        Controller { k_i, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockSample {
    pub time_s: f64,
    /// free-running phase
    pub drift: f64,
    pub actuator: f64,
    pub error: f64,
    /// residual deviation from the lock point
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockReport {
    pub residual_std: f64,
    pub residual_mean: f64,
    pub residual_rms: f64,
    pub lock_acquired: bool,
    pub settling_time: Option<f64>,
    pub saturated_fraction: f64,
    pub failure: Option<String>,
    pub steps: usize,
    #[serde(skip)]
    pub trajectory: Vec<LockSample>,
}

impl LockReport {
    /// Visibility factor `exp(-σ²/2)` implied by the residual jitter.
    pub fn coherence(&self) -> f64 {
        (-self.residual_std * self.residual_std / 2.0).exp()
    }

    /// Residual deviations after settling (the whole run if it never settled).
    pub fn settled_deviations(&self) -> Vec<f64> {
        let t0 = self.settling_time.unwrap_or(0.0);
        self.trajectory.iter().filter(|s| s.time_s >= t0).map(|s| s.deviation).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "phase_rad", "error", "actuator_rad"])?;
        for s in &self.trajectory {
            w.write_record(&[
                format!("{:.9}", s.time_s),
                format!("{:.9}", s.deviation),
                format!("{:.9}", s.error),
                format!("{:.9}", s.actuator),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn stats(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let rms = (xs.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    (mean, var.max(0.0).sqrt(), rms)
}

/// Closed-loop simulation. The drift path uses the same random stream as
/// [`evolve_unlocked`] seeded with `seed`, so open and closed loop see the
/// same disturbance.
pub fn run_locked(model: &DriftModel, controller: &Controller, duration: f64, seed: u64) -> Result<LockReport> {
    model.validate()?;
    controller.validate(model)?;
    let drift = evolve_unlocked(model, duration, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);

    let every = ((controller.update_period / model.dt).round() as usize).max(1);
    let t_update = every as f64 * model.dt;
    let slope = controller.slope();
    let range = controller.actuator_range;
    let mut integral = 0.0;
    let mut u = 0.0;
    let mut saturated = 0usize;
    let mut trajectory = Vec::with_capacity(drift.len());
    let mut settling_time = None;

    for (k, &phi) in drift.iter().enumerate() {
        let t = k as f64 * model.dt;
        let deviation = phi + u;
        let mut e = error_signal(controller.setpoint + deviation, controller.setpoint);
        if controller.error_noise > 0.0 {
            let xi: f64 = noise_rng.sample(StandardNormal);
            e += controller.error_noise * xi;
        }
        if settling_time.is_none() && deviation.abs() <= controller.settle_band {
            settling_time = Some(t);
        }
        trajectory.push(LockSample { time_s: t, drift: phi, actuator: u, error: e, deviation });
        if k % every == 0 {
            let estimate = e / slope;
            integral = (integral - controller.k_i * estimate * t_update).clamp(-range, range);
            let raw = integral - controller.k_p * estimate;
            u = raw.clamp(-range, range);
            if (controller.k_i > 0.0 || controller.k_p > 0.0) && (raw.abs() >= range || integral.abs() >= range) {
                saturated += 1;
            }
        }
    }

    let updates = drift.len().div_ceil(every);
    let saturated_fraction = saturated as f64 / updates as f64;
    let t0 = settling_time.unwrap_or(0.0);
    let window: Vec<f64> = trajectory.iter().filter(|s| s.time_s >= t0).map(|s| s.deviation).collect();
    let (mean, std, rms) = stats(&window);
    let failure = if saturated_fraction > 0.5 {
        Some(format!("actuator saturated on {:.0}% of updates", 100.0 * saturated_fraction))
    } else if settling_time.is_none() {
        Some("phase never entered the settling band".to_string())
    } else if std > controller.lock_threshold {
        Some(format!("residual std {std:.3} rad above threshold {:.3}", controller.lock_threshold))
    } else {
        None
    };
    if let Some(reason) = &failure {
        log::info!("lock not acquired: {reason}");
    }
    Ok(LockReport {
        residual_std: std,
        residual_mean: mean,
        residual_rms: rms,
        lock_acquired: failure.is_none(),
        settling_time,
        saturated_fraction,
        failure,
        steps: drift.len(),
        trajectory,
    })
}

/// Runs one closed loop per gain in parallel, all against the same disturbance.
pub fn gain_scan(
    model: &DriftModel,
    controller: &Controller,
    gains: &[f64],
    duration: f64,
    seed: u64,
) -> Result<Vec<(f64, LockReport)>> {
    gains.par_iter().map(|&k| run_locked(model, &controller.with_gain(k), duration, seed).map(|r| (k, r))).collect()
}

/// Gain with the smallest residual among acquired locks.
pub fn best_gain(scan: &[(f64, LockReport)]) -> Option<(f64, &LockReport)> {
    scan.iter()
        .filter(|(_, r)| r.lock_acquired)
        .min_by(|a, b| a.1.residual_std.total_cmp(&b.1.residual_std))
        .map(|(k, r)| (*k, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quiet_model_stays_put() {
        let m = DriftModel { sigma_w: 0.0, v_drift: 0.0, kappa: 3.0, ..DriftModel::default() };
        let path = evolve_unlocked(&m, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(path.iter().all(|&x| x == 0.0));
        assert!(evolve_unlocked(&m, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn wiener_variance_law() {
        let m = DriftModel { kappa: 0.0, sigma_w: 0.8, v_drift: 0.0, dt: 1e-2, phi0: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let paths = 2000;
        let ends: Vec<f64> = (0..paths).map(|_| *evolve_unlocked(&m, 1.0, &mut rng).unwrap().last().unwrap()).collect();
        let var = ends.iter().map(|x| x * x).sum::<f64>() / paths as f64;
        let expect = 0.64;
        let sd = expect * (2.0 / paths as f64).sqrt();
        assert!((var - expect).abs() < 4.0 * sd, "var={var}");
    }

    #[test]
    fn ou_stationary_variance() {
        let m = DriftModel { kappa: 5.0, sigma_w: 1.0, v_drift: 0.0, dt: 1e-2, phi0: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut samples = Vec::new();
        for _ in 0..1000 {
            let p = evolve_unlocked(&m, 8.0, &mut rng).unwrap();
            // start after 10 relaxation times, then every 0.6 s (3 correlation times)
            samples.extend(p.iter().skip(200).step_by(60).copied());
        }
        let var = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
        let expect = 1.0 / 10.0;
        assert!((var / expect - 1.0).abs() < 0.05, "var={var} n={}", samples.len());
    }

    #[test]
    fn error_signal_shape() {
        assert_eq!(error_signal(0.3, 0.3), 0.0);
        let d = 1e-4;
        let e = error_signal(FRAC_PI_2 + d, FRAC_PI_2);
        assert!((e + d / 2.0).abs() < 1e-10);
        for k in 0..100 {
            let x = error_signal(k as f64 * 0.37, (k * k) as f64 * 0.11);
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn noiseless_lock_is_exact() {
        let m = DriftModel { sigma_w: 0.0, v_drift: 0.0, ..DriftModel::default() };
        let r = run_locked(&m, &Controller::default(), 0.5, 1).unwrap();
        assert_eq!(r.residual_std, 0.0);
        assert_eq!(r.settling_time, Some(0.0));
        assert!(r.lock_acquired);
    }

    #[test]
    fn zero_gain_is_open_loop() {
        let m = DriftModel::default();
        let c = Controller { k_i: 0.0, error_noise: 0.01, ..Controller::default() };
        let r = run_locked(&m, &c, 2.0, 42).unwrap();
        let free = evolve_unlocked(&m, 2.0, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        for (s, f) in r.trajectory.iter().zip(&free) {
            assert_eq!(s.deviation, *f);
        }
    }

    #[test]
    fn report_is_deterministic() {
        let c = Controller { error_noise: 0.02, ..Controller::default() };
        let a = run_locked(&DriftModel::default(), &c, 1.0, 5).unwrap();
        let b = run_locked(&DriftModel::default(), &c, 1.0, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closed_loop_beats_open_loop() {
        let m = DriftModel::default();
        let open = run_locked(&m, &Controller::default().with_gain(0.0), 20.0, 9).unwrap();
        // k_i T from 0.02 to 1.0, below the oscillation threshold of 2
        for k in [20.0, 50.0, 100.0, 300.0, 600.0, 1000.0] {
            let closed = run_locked(&m, &Controller::default().with_gain(k), 20.0, 9).unwrap();
            assert!(closed.residual_std <= open.residual_std, "k={k}");
            assert!(closed.residual_rms <= open.residual_rms, "k={k}");
        }
    }

    #[test]
    fn gain_scan_reaches_visibility_budget() {
        let sigma_target = (-2.0 * 0.875f64.ln()).sqrt();
        assert!((sigma_target - 0.517).abs() < 1e-3);
        let noisy = DriftModel { sigma_w: 15.0, ..DriftModel::default() };
        let wide = Controller { actuator_range: 1000.0, ..Controller::default() };
        let scan = gain_scan(&noisy, &wide, &[1.0, 10.0, 50.0, 200.0, 800.0], 10.0, 3).unwrap();
        let (k, best) = best_gain(&scan).expect("some gain locks");
        assert!(best.residual_std <= 0.52, "k={k} std={}", best.residual_std);
        assert!(!scan[0].1.lock_acquired);
    }

    #[test]
    fn saturation_is_reported() {
        let m = DriftModel { kappa: 0.0, sigma_w: 0.0, v_drift: 50.0, ..DriftModel::default() };
        let c = Controller { actuator_range: 0.5, ..Controller::default() };
        let r = run_locked(&m, &c, 2.0, 1).unwrap();
        assert!(!r.lock_acquired);
        assert!(r.saturated_fraction > 0.5);
        assert!(r.failure.unwrap().contains("saturated"));
    }

    #[test]
    fn controller_validation() {
        let m = DriftModel::default();
        assert!(Controller { setpoint: 0.0, ..Controller::default() }.validate(&m).is_err());
        assert!(Controller { update_period: 1e-4, ..Controller::default() }.validate(&m).is_err());
        assert!(Controller { actuator_range: 0.0, ..Controller::default() }.validate(&m).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let r = run_locked(&DriftModel::default(), &Controller::default(), 0.01, 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_s,phase_rad,error,actuator_rad\n"));
        assert_eq!(text.lines().count(), r.steps + 1);
    }
}
