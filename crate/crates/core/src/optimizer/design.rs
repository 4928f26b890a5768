use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of the topology variable; keeps the stiffness matrix regular.
pub const RHO_VOID: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRole {
    Design,
    /// Solid base material, never updated.
    FrozenSolid,
    /// Not part of the mesh.
    Excluded,
}

impl ElementRole {
    pub fn code(self) -> u8 {
        match self {
            ElementRole::Excluded => 0,
            ElementRole::Design => 1,
            ElementRole::FrozenSolid => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(ElementRole::Excluded),
            1 => Ok(ElementRole::Design),
            2 => Ok(ElementRole::FrozenSolid),
            _ => Err(Error::invalid(format!("unknown element role code {c}"))),
        }
    }
}

/// Per-element topology variable `gamma` and microstructural density
/// `kappa`; the lattice relative density is `rho = gamma kappa`.
///
/// A cell of volume `V_cell` filled with base material volume `V_base` has
/// `rho = V_base / V_cell`. The relaxation splits it into a near-binary
/// topology part and a graded part bounded by what can be manufactured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignField {
    pub gamma: Vec<f64>,
    pub kappa: Vec<f64>,
    pub roles: Vec<ElementRole>,
    pub rho_void: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl DesignField {
    pub fn uniform(n: usize, gamma: f64, kappa: f64, rho_min: f64, rho_max: f64) -> Result<Self> {
        let f = DesignField {
            gamma: vec![gamma; n],
            kappa: vec![kappa; n],
            roles: vec![ElementRole::Design; n],
            rho_void: RHO_VOID,
            rho_min,
            rho_max,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn with_roles(mut self, roles: Vec<ElementRole>) -> Result<Self> {
        if roles.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: roles.len() });
        }
        self.roles = roles;
        for e in 0..self.len() {
            if self.roles[e] == ElementRole::FrozenSolid {
                self.gamma[e] = 1.0;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn density(&self, e: usize) -> f64 {
        self.gamma[e] * self.kappa[e]
    }

    pub fn is_design(&self, e: usize) -> bool {
        self.roles[e] == ElementRole::Design
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.kappa.len() != n || self.roles.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.kappa.len().min(self.roles.len()) });
        }
        if !(self.rho_void > 0.0 && self.rho_min > 0.0 && self.rho_min <= self.rho_max && self.rho_max <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < rho_void and 0 < rho_min <= rho_max <= 1, got {} {} {}",
                self.rho_void, self.rho_min, self.rho_max
            )));
        }
        if !self.roles.contains(&ElementRole::Design) {
            return Err(Error::invalid("design field has no design elements"));
        }
        for e in (0..n).filter(|&e| self.is_design(e)) {
            let (g, k) = (self.gamma[e], self.kappa[e]);
            if !(g >= self.rho_void && g <= 1.0) || !(k >= self.rho_min && k <= self.rho_max) {
                return Err(Error::invalid(format!("element {e} out of bounds: gamma {g}, kappa {k}")));
            }
        }
        Ok(())
    }

    /// `sum rho_e |Omega_e| / |Omega|` over design elements, plus frozen
    /// ones at `rho = 1` when `count_frozen` is set.
    pub fn volume_fraction(&self, count_frozen: bool) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for e in 0..self.len() {
            match self.roles[e] {
                ElementRole::Design => {
                    num += self.density(e);
                    den += 1.0;
                }
                ElementRole::FrozenSolid if count_frozen => {
                    num += 1.0;
                    den += 1.0;
                }
                _ => {}
            }
        }
        num / den
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|&r| r != ElementRole::Excluded).collect()
    }

    /// Share of design elements with `gamma` below 0.01 or above 0.99.
    pub fn binary_fraction(&self) -> f64 {
        let design: Vec<f64> = (0..self.len()).filter(|&e| self.is_design(e)).map(|e| self.gamma[e]).collect();
        design.iter().filter(|&&g| !(0.01..=0.99).contains(&g)).count() as f64 / design.len() as f64
    }
}
