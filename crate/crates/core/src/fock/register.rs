use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    L,
    R,
}

impl Site {
    pub fn other(self) -> Site {
        match self {
            Site::L => Site::R,
            Site::R => Site::L,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    SpinWave,
    Stokes,
    AntiStokes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

/// Label of one bosonic mode.
///
/// Photons scattered from the L ensemble are H polarized and those from R are
/// V polarized, so the convenience constructors tie polarization to site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeLabel {
    pub site: Site,
    pub species: Species,
    pub polarization: Polarization,
}

impl ModeLabel {
    pub fn new(site: Site, species: Species, polarization: Polarization) -> Self {
        ModeLabel { site, species, polarization }
    }

    fn site_polarization(site: Site) -> Polarization {
        match site {
            Site::L => Polarization::H,
            Site::R => Polarization::V,
        }
    }

    pub fn spin_wave(site: Site) -> Self {
        Self::new(site, Species::SpinWave, Self::site_polarization(site))
    }

    pub fn stokes(site: Site) -> Self {
        Self::new(site, Species::Stokes, Self::site_polarization(site))
    }

    pub fn anti_stokes(site: Site) -> Self {
        Self::new(site, Species::AntiStokes, Self::site_polarization(site))
    }

    /// Same site and polarization, different species.
    pub fn with_species(self, species: Species) -> Self {
        ModeLabel { species, ..self }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let species = match self.species {
            Species::SpinWave => "sw",
            Species::Stokes => "S",
            Species::AntiStokes => "AS",
        };
        write!(f, "{species}_{:?}{:?}", self.site, self.polarization)
    }
}

/// Ordered set of modes sharing one photon-number cutoff.
///
/// Basis states are product Fock states `|n_0, n_1, ..., n_{m-1}>` enumerated
/// lexicographically with the last mode running fastest, so the index of an
/// occupation vector is its value in base `n_max + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeRegister {
    modes: Vec<ModeLabel>,
    n_max: usize,
}

impl ModeRegister {
    pub fn new(modes: Vec<ModeLabel>, n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Domain("n_max must be at least 1".into()));
        }
        if modes.is_empty() {
            return Err(Error::Domain("a register needs at least one mode".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].contains(m) {
                return Err(Error::Validation(format!("duplicate mode label {m}")));
            }
        }
        let reg = ModeRegister { modes, n_max };
        if reg.checked_dim().is_none() {
            return Err(Error::Domain("basis dimension overflows".into()));
        }
        Ok(reg)
    }

    fn checked_dim(&self) -> Option<usize> {
        let base = self.n_max + 1;
        self.modes.iter().try_fold(1usize, |acc, _| acc.checked_mul(base))
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn local_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        self.local_dim().pow(self.modes.len() as u32)
    }

    pub fn position(&self, label: &ModeLabel) -> Option<usize> {
        self.modes.iter().position(|m| m == label)
    }

    pub fn require(&self, label: &ModeLabel) -> Result<usize> {
        self.position(label).ok_or_else(|| Error::Validation(format!("mode {label} is not in the register")))
    }

    /// Occupation numbers of the basis state with the given index.
    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let base = self.local_dim();
        let mut occ = vec![0; self.modes.len()];
        for slot in occ.iter_mut().rev() {
            *slot = index % base;
            index /= base;
        }
        occ
    }

    pub fn index(&self, occupations: &[usize]) -> usize {
        let base = self.local_dim();
        occupations.iter().fold(0, |acc, &n| acc * base + n)
    }

    /// Occupation of a single mode (by position) in basis state `index`.
    pub fn occupation_of(&self, index: usize, position: usize) -> usize {
        let base = self.local_dim();
        let shift = self.modes.len() - 1 - position;
        (index / base.pow(shift as u32)) % base
    }

    /// Register made of the listed modes, in the listed order.
    pub fn subregister(&self, labels: &[ModeLabel]) -> Result<ModeRegister> {
        for l in labels {
            self.require(l)?;
        }
        ModeRegister::new(labels.to_vec(), self.n_max)
    }

    /// Concatenation `self ⊗ other`.
    pub fn tensor(&self, other: &ModeRegister) -> Result<ModeRegister> {
        if self.n_max != other.n_max {
            return Err(Error::shape(format!("n_max {}", self.n_max), format!("n_max {}", other.n_max)));
        }
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        ModeRegister::new(modes, self.n_max)
    }

    pub(crate) fn relabel(&self, from: &ModeLabel, to: ModeLabel) -> Result<ModeRegister> {
        let pos = self.require(from)?;
        let mut modes = self.modes.clone();
        modes[pos] = to;
        ModeRegister::new(modes, self.n_max)
    }

    /// Index bookkeeping for splitting the register into `targets` and the rest.
    pub(crate) fn split(&self, targets: &[ModeLabel]) -> Result<Split> {
        let mut target_pos = Vec::with_capacity(targets.len());
        for t in targets {
            let p = self.require(t)?;
            if target_pos.contains(&p) {
                return Err(Error::Validation(format!("mode {t} listed twice")));
            }
            target_pos.push(p);
        }
        let rest_pos: Vec<usize> = (0..self.modes.len()).filter(|p| !target_pos.contains(p)).collect();
        let base = self.local_dim();
        let dt = base.pow(target_pos.len() as u32);
        let dr = base.pow(rest_pos.len() as u32);
        let dim = self.dim();
        let mut target_of = vec![0; dim];
        let mut rest_of = vec![0; dim];
        let mut full_of = vec![0; dim];
        for idx in 0..dim {
            let occ = self.occupations(idx);
            let t = target_pos.iter().fold(0, |acc, &p| acc * base + occ[p]);
            let r = rest_pos.iter().fold(0, |acc, &p| acc * base + occ[p]);
            target_of[idx] = t;
            rest_of[idx] = r;
            full_of[t * dr + r] = idx;
        }
        Ok(Split {
            dt,
            dr,
            target_of,
            rest_of,
            full_of,
            rest_labels: rest_pos.iter().map(|&p| self.modes[p]).collect(),
        })
    }
}

/// Factorisation of a register's basis into (target, rest) index pairs.
#[derive(Debug, Clone)]
pub(crate) struct Split {
    pub dt: usize,
    pub dr: usize,
    pub target_of: Vec<usize>,
    pub rest_of: Vec<usize>,
    /// full index for `t * dr + r`
    pub full_of: Vec<usize>,
    pub rest_labels: Vec<ModeLabel>,
}

impl Split {
    pub fn full(&self, t: usize, r: usize) -> usize {
        self.full_of[t * self.dr + r]
    }
}
