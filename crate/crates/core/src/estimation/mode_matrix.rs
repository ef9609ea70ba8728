use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heralded click statistics of the two anti-Stokes spatial modes.
///
/// `n10` counts a click in the L mode only, `n01` in the R mode only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub heralds: u64,
    pub n10: u64,
    pub n01: u64,
    pub n11: u64,
}

impl ModeCounts {
    pub fn n00(&self) -> u64 {
        self.heralds.saturating_sub(self.n10 + self.n01 + self.n11)
    }
}

/// Occupation probabilities and coherence of the heralded two-mode state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDensityMatrix {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    pub d: f64,
    pub p00_err: f64,
    pub p01_err: f64,
    pub p10_err: f64,
    pub p11_err: f64,
    pub d_err: f64,
    /// coherence exceeds `√(p01 p10)` by more than 3σ
    pub unphysical_coherence: bool,
}

impl ModeDensityMatrix {
    /// Error-free matrix with `p00 = 1 - p01 - p10 - p11`.
    pub fn from_probabilities(p01: f64, p10: f64, p11: f64, d: f64) -> Result<Self> {
        for (name, v) in [("p01", p01), ("p10", p10), ("p11", p11)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let p00 = 1.0 - p01 - p10 - p11;
        if p00 < -1e-12 {
            return Err(Error::Validation("probabilities sum above 1".into()));
        }
        Ok(ModeDensityMatrix {
            p00: p00.max(0.0),
            p01,
            p10,
            p11,
            d,
            p00_err: 0.0,
            p01_err: 0.0,
            p10_err: 0.0,
            p11_err: 0.0,
            d_err: 0.0,
            unphysical_coherence: d.abs() > (p01 * p10).sqrt() * (1.0 + 1e-12),
        })
    }

    /// Coherence from the fringe visibility, `d = V (p01 + p10)/2`.
    pub fn from_visibility(p01: f64, p10: f64, p11: f64, visibility: f64) -> Result<Self> {
        Self::from_probabilities(p01, p10, p11, visibility * (p01 + p10) / 2.0)
    }
}

/// Builds the mode matrix from heralded counts and a fitted visibility.
pub fn mode_matrix(counts: &ModeCounts, visibility: f64, visibility_err: f64) -> Result<ModeDensityMatrix> {
    if counts.n10 + counts.n01 + counts.n11 > counts.heralds {
        return Err(Error::Validation("more verify events than heralds".into()));
    }
    build(counts.heralds as f64, [counts.n10 as f64, counts.n01 as f64, counts.n11 as f64], visibility, visibility_err)
}

/// Mode matrix at probabilities `(p10, p01, p11)` with the Poisson errors a
/// run of `heralds` heralds would carry.
pub fn expected_mode_matrix(
    heralds: f64,
    p10: f64,
    p01: f64,
    p11: f64,
    visibility: f64,
    visibility_err: f64,
) -> Result<ModeDensityMatrix> {
    if !(p10 >= 0.0 && p01 >= 0.0 && p11 >= 0.0 && p10 + p01 + p11 <= 1.0 + 1e-12) {
        return Err(Error::Validation("mode probabilities must be non-negative and sum to at most 1".into()));
    }
    build(heralds, [p10 * heralds, p01 * heralds, p11 * heralds], visibility, visibility_err)
}

fn build(h: f64, [n10, n01, n11]: [f64; 3], visibility: f64, visibility_err: f64) -> Result<ModeDensityMatrix> {
    if !(h > 0.0) {
        return Err(Error::UndefinedEstimate("no heralds recorded".into()));
    }
    if !(visibility.is_finite() && visibility_err >= 0.0) {
        return Err(Error::Validation("visibility must be finite with a non-negative error".into()));
    }
    let n00 = (h - n10 - n01 - n11).max(0.0);
    let p = |n: f64| n / h;
    let e = |n: f64| n.sqrt() / h;
    let (p01, p10, p11) = (p(n01), p(n10), p(n11));
    let single = p01 + p10;
    let d = visibility * single / 2.0;
    let d_err = ((visibility_err * single / 2.0).powi(2)
        + (visibility / 2.0).powi(2) * (e(n01).powi(2) + e(n10).powi(2)))
    .sqrt();
    let unphysical = d.abs() > (p01 * p10).sqrt() + 3.0 * d_err;
    if unphysical {
        log::warn!("coherence d = {d:.3e} exceeds sqrt(p01 p10) = {:.3e} by more than 3 sigma", (p01 * p10).sqrt());
    }
    Ok(ModeDensityMatrix {
        p00: p(n00),
        p01,
        p10,
        p11,
        d,
        p00_err: e(n00),
        p01_err: e(n01),
        p10_err: e(n10),
        p11_err: e(n11),
        d_err,
        unphysical_coherence: unphysical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceBound {
    pub value: f64,
    /// first-order propagation
    pub sigma: f64,
    /// half-width of the central 68% bootstrap interval
    pub sigma_bootstrap: Option<f64>,
}

impl ConcurrenceBound {
    /// `value / σ`, preferring the bootstrap error when present.
    pub fn significance(&self) -> f64 {
        let s = self.sigma_bootstrap.unwrap_or(self.sigma);
        if s > 0.0 {
            self.value / s
        } else {
            f64::INFINITY
        }
    }
}

/// `C_p = 2 max(0, |d| - √(p00 p11))`.
pub fn concurrence_bound_value(m: &ModeDensityMatrix) -> f64 {
    2.0 * (m.d.abs() - (m.p00.max(0.0) * m.p11.max(0.0)).sqrt()).max(0.0)
}

/// Lower bound on the two-mode concurrence with first-order error propagation.
pub fn concurrence_bound(m: &ModeDensityMatrix) -> ConcurrenceBound {
    let value = concurrence_bound_value(m);
    if value == 0.0 {
        return ConcurrenceBound { value, sigma: 2.0 * m.d_err, sigma_bootstrap: None };
    }
    let root_err = if m.p11 > 0.0 && m.p00 > 0.0 {
        let g00 = 0.5 * (m.p11 / m.p00).sqrt();
        let g11 = 0.5 * (m.p00 / m.p11).sqrt();
        ((g00 * m.p00_err).powi(2) + (g11 * m.p11_err).powi(2)).sqrt()
    } else {
        (m.p00 * m.p11_err).sqrt()
    };
    ConcurrenceBound { value, sigma: 2.0 * (m.d_err.powi(2) + root_err.powi(2)).sqrt(), sigma_bootstrap: None }
}

pub(crate) fn sequential_multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(left);
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if left == 0 || q == 0.0 { 0 } else { Binomial::new(left, q).map(|b| b.sample(rng)).unwrap_or(0) };
        out.push(k);
        left -= k;
        mass -= p;
    }
    out
}

/// Percentile bootstrap of the concurrence bound: the herald outcomes are
/// resampled multinomially and the visibility is redrawn from its error.
pub fn concurrence_bound_bootstrap(
    counts: &ModeCounts,
    visibility: f64,
    visibility_err: f64,
    resamples: usize,
    seed: u64,
) -> Result<ConcurrenceBound> {
    let m = mode_matrix(counts, visibility, visibility_err)?;
    let mut out = concurrence_bound(&m);
    if resamples < 2 {
        return Ok(out);
    }
    let h = counts.heralds as f64;
    let probs = [counts.n10 as f64 / h, counts.n01 as f64 / h, counts.n11 as f64 / h, counts.n00() as f64 / h];
    let noise = Normal::new(0.0, visibility_err.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let mut values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let c = sequential_multinomial(&mut rng, counts.heralds, &probs);
            let v = visibility + noise.sample(&mut rng);
            let resampled = ModeCounts { heralds: counts.heralds, n10: c[0], n01: c[1], n11: c[2] };
            mode_matrix(&resampled, v, visibility_err).map(|m| concurrence_bound_value(&m)).unwrap_or(0.0)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let q = |f: f64| values[((values.len() - 1) as f64 * f).round() as usize];
    out.sigma_bootstrap = Some((q(0.8413) - q(0.1587)) / 2.0);
    Ok(out)
}
