use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/ns.
pub const C_M_PER_NS: f64 = 0.299_792_458;

const LIGHTLIKE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhotonLabel {
    S,
    AS,
}

/// A detection in a 1+1 dimensional lab frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeEvent {
    pub label: PhotonLabel,
    pub t_ns: f64,
    pub x_m: f64,
}

impl SpaceTimeEvent {
    pub fn new(label: PhotonLabel, t_ns: f64, x_m: f64) -> Result<Self> {
        if !(t_ns.is_finite() && x_m.is_finite()) {
            return Err(Error::Validation("space-time coordinates must be finite".into()));
        }
        Ok(SpaceTimeEvent { label, t_ns, x_m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Timelike,
    Lightlike,
    Spacelike,
}

/// Which of the two events happened first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOrder {
    FirstEarlier,
    Simultaneous,
    SecondEarlier,
}

impl TimeOrder {
    pub fn reversed(self) -> Self {
        match self {
            TimeOrder::FirstEarlier => TimeOrder::SecondEarlier,
            TimeOrder::Simultaneous => TimeOrder::Simultaneous,
            TimeOrder::SecondEarlier => TimeOrder::FirstEarlier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalClass {
    pub kind: IntervalKind,
    pub order: TimeOrder,
    /// `c²Δt² - Δx²` in m²
    pub invariant_m2: f64,
}

/// Causal character and time order of two events; `|Δt| <= simultaneity_ns`
/// counts as simultaneous.
pub fn classify_interval(e1: &SpaceTimeEvent, e2: &SpaceTimeEvent, simultaneity_ns: f64) -> IntervalClass {
    let dt = e2.t_ns - e1.t_ns;
    let ct = C_M_PER_NS * dt;
    let dx = e2.x_m - e1.x_m;
    let (a, b) = (ct * ct, dx * dx);
    let invariant_m2 = a - b;
    let kind = if (a - b).abs() <= LIGHTLIKE_REL_TOL * a.max(b) {
        IntervalKind::Lightlike
    } else if a > b {
        IntervalKind::Timelike
    } else {
        IntervalKind::Spacelike
    };
    let order = if dt.abs() <= simultaneity_ns {
        TimeOrder::Simultaneous
    } else if dt > 0.0 {
        TimeOrder::FirstEarlier
    } else {
        TimeOrder::SecondEarlier
    };
    IntervalClass { kind, order, invariant_m2 }
}

/// Detection order of the Stokes and anti-Stokes photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionOrder {
    StokesFirst,
    Simultaneous,
    AntiStokesFirst,
}

impl DetectionOrder {
    pub fn of(stokes: &SpaceTimeEvent, anti_stokes: &SpaceTimeEvent, simultaneity_ns: f64) -> Self {
        match classify_interval(stokes, anti_stokes, simultaneity_ns).order {
            TimeOrder::FirstEarlier => DetectionOrder::StokesFirst,
            TimeOrder::Simultaneous => DetectionOrder::Simultaneous,
            TimeOrder::SecondEarlier => DetectionOrder::AntiStokesFirst,
        }
    }
}

impl fmt::Display for DetectionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionOrder::StokesFirst => "stokes_first",
            DetectionOrder::Simultaneous => "simultaneous",
            DetectionOrder::AntiStokesFirst => "anti_stokes_first",
        })
    }
}
