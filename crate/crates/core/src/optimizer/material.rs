use nalgebra::DMatrix;
use rayon::prelude::*;

use super::design::{DesignField, ElementRole};
use crate::densmap::SigmoidFit;
use crate::error::{Error, Result};
use crate::pann::MaterialNet;
use crate::voigt::VoigtStiffness;

type TensorPair = (DMatrix<f64>, DMatrix<f64>);

/// Surrogate stiffness of the lattice for a fixed base material.
#[derive(Debug, Clone)]
pub struct MaterialModel {
    pub net: MaterialNet,
    pub fit: SigmoidFit,
    pub youngs: f64,
    pub poisson: f64,
    /// 2 for plane strain, 3 for solids.
    pub dim: usize,
}

/// Unpenalized lattice tensor and its `kappa` derivative for one element.
#[derive(Debug, Clone)]
pub struct ElementTensors {
    pub c: DMatrix<f64>,
    pub dc: DMatrix<f64>,
}

const BATCH: usize = 2048;

impl MaterialModel {
    /// Uses the density map stored with the network.
    pub fn new(net: MaterialNet, youngs: f64, poisson: f64, dim: usize) -> Result<Self> {
        let fit = net.density_map.ok_or_else(|| Error::invalid("material network carries no density map"))?;
        Self::with_fit(net, fit, youngs, poisson, dim)
    }

    pub fn with_fit(net: MaterialNet, fit: SigmoidFit, youngs: f64, poisson: f64, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        net.validate()?;
        if !(youngs > 0.0) || !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::invalid(format!("invalid base material E = {youngs}, nu = {poisson}")));
        }
        Ok(MaterialModel { net, fit, youngs, poisson, dim })
    }

    pub fn nstrain(&self) -> usize {
        if self.dim == 2 {
            3
        } else {
            6
        }
    }

    /// `C(kappa)` and `dC/dkappa`, plane strain reduced in 2D.
    pub fn lattice(&self, kappa: f64) -> Result<ElementTensors> {
        let mut v = self.lattice_batch(&[kappa])?;
        Ok(v.pop().expect("one entry"))
    }

    pub fn lattice_batch(&self, kappas: &[f64]) -> Result<Vec<ElementTensors>> {
        let chunks: Vec<Result<Vec<TensorPair>>> = kappas
            .par_chunks(BATCH)
            .map(|ch| self.net.kappa_stiffness_batch(ch, self.youngs, self.poisson, &self.fit, self.dim == 2))
            .collect();
        let mut out = Vec::with_capacity(kappas.len());
        for ch in chunks {
            out.extend(ch?.into_iter().map(|(c, dc)| ElementTensors { c, dc }));
        }
        Ok(out)
    }

    /// Solid base material tensor.
    pub fn solid(&self) -> Result<DMatrix<f64>> {
        let c = VoigtStiffness::isotropic(self.youngs, self.poisson)?;
        Ok(if self.dim == 2 { c.plane_strain()?.into_matrix() } else { c.into_matrix() })
    }

    /// Lattice tensors for every design element of `field` (`None` elsewhere).
    pub fn evaluate(&self, field: &DesignField) -> Result<Vec<Option<ElementTensors>>> {
        let design: Vec<usize> = (0..field.len()).filter(|&e| field.is_design(e)).collect();
        let kappas: Vec<f64> = design.iter().map(|&e| field.kappa[e]).collect();
        let mut out = vec![None; field.len()];
        for (e, t) in design.into_iter().zip(self.lattice_batch(&kappas)?) {
            out[e] = Some(t);
        }
        Ok(out)
    }

    /// Penalized constitutive matrices `gamma^p C(kappa)` per grid element;
    /// frozen elements get the solid tensor and excluded ones a zero matrix.
    pub fn penalized(&self, field: &DesignField, tensors: &[Option<ElementTensors>], p: f64) -> Result<Vec<DMatrix<f64>>> {
        let solid = self.solid()?;
        let zero = DMatrix::zeros(self.nstrain(), self.nstrain());
        Ok((0..field.len())
            .map(|e| match (field.roles[e], &tensors[e]) {
                (ElementRole::Design, Some(t)) => &t.c * field.gamma[e].powf(p),
                (ElementRole::FrozenSolid, _) => solid.clone(),
                _ => zero.clone(),
            })
            .collect())
    }
}

/// `gamma^p C(kappa)` for a single design element.
pub fn penalized_tensor(gamma: f64, kappa: f64, model: &MaterialModel, p: f64) -> Result<VoigtStiffness> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let t = model.lattice(kappa)?;
    Ok(VoigtStiffness::from_matrix_unchecked(t.c * gamma.powf(p)))
}
