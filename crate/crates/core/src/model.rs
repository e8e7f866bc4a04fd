//! Forward models realized at a fixed `theta`, and the families they come
//! from.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::deconv::{apply_K, apply_Kdot, operator_matrix, ConvolutionKernel, ShiftedConvOperator};
use crate::error::{Error, Result};
use crate::spectral::{Basis, CoefficientFunction};
use crate::xray::{realify, ChordTable};

/// The pair `(K_theta, Kdot_theta)` at one `theta`, acting on real ambient
/// coordinates.
#[derive(Clone, Debug)]
pub enum ForwardModel {
    /// Fourier-diagonal convolution.
    Convolution(ShiftedConvOperator),
    /// Dense real matrices (X-ray, realified).
    Dense {
        theta: f64,
        basis: Basis,
        k: DMatrix<f64>,
        kdot: DMatrix<f64>,
    },
}

impl ForwardModel {
    pub fn theta(&self) -> f64 {
        match self {
            ForwardModel::Convolution(op) => op.theta,
            ForwardModel::Dense { theta, .. } => *theta,
        }
    }

    /// Ambient input basis.
    pub fn basis(&self) -> Basis {
        match self {
            ForwardModel::Convolution(op) => Basis::fourier(op.kernel.k_max()),
            ForwardModel::Dense { basis, .. } => *basis,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ForwardModel::Convolution(op) => 2 * op.kernel.k_max() + 1,
            ForwardModel::Dense { k, .. } => k.nrows(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            ForwardModel::Convolution(op) => operator_matrix(&op.kernel, op.theta, 0),
            ForwardModel::Dense { k, .. } => k.clone(),
        }
    }

    pub fn dot_matrix(&self) -> DMatrix<f64> {
        match self {
            ForwardModel::Convolution(op) => operator_matrix(&op.kernel, op.theta, 1),
            ForwardModel::Dense { kdot, .. } => kdot.clone(),
        }
    }

    fn check(&self, f: &CoefficientFunction) -> Result<DVector<f64>> {
        let amb = f.to_ambient();
        if amb.basis() != self.basis() {
            return Err(Error::BasisMismatch {
                left: self.basis().to_string(),
                right: f.basis().to_string(),
            });
        }
        Ok(amb.to_vector())
    }

    pub fn apply(&self, f: &CoefficientFunction) -> Result<DVector<f64>> {
        match self {
            ForwardModel::Convolution(op) => Ok(apply_K(op, f)?.to_vector()),
            ForwardModel::Dense { k, .. } => Ok(k * self.check(f)?),
        }
    }

    pub fn apply_dot(&self, f: &CoefficientFunction) -> Result<DVector<f64>> {
        match self {
            ForwardModel::Convolution(op) => Ok(apply_Kdot(op, f)?.to_vector()),
            ForwardModel::Dense { kdot, .. } => Ok(kdot * self.check(f)?),
        }
    }
}

/// A `theta`-indexed family of forward models on a fixed truncation.
#[derive(Clone, Debug)]
pub enum ModelFamily {
    Convolution(ConvolutionKernel),
    Xray(Arc<ChordTable>),
}

impl ModelFamily {
    pub fn at(&self, theta: f64) -> ForwardModel {
        match self {
            ModelFamily::Convolution(kernel) => {
                ForwardModel::Convolution(ShiftedConvOperator::new(kernel.clone(), theta))
            }
            ModelFamily::Xray(table) => ForwardModel::Dense {
                theta,
                basis: table.basis(),
                k: realify(&table.matrix(theta, 0)),
                kdot: realify(&table.matrix(theta, 1)),
            },
        }
    }

    /// Only `K_theta` (skips the derivative for dense families).
    pub fn matrix_at(&self, theta: f64) -> DMatrix<f64> {
        match self {
            ModelFamily::Convolution(kernel) => operator_matrix(kernel, theta, 0),
            ModelFamily::Xray(table) => realify(&table.matrix(theta, 0)),
        }
    }

    pub fn basis(&self) -> Basis {
        match self {
            ModelFamily::Convolution(kernel) => Basis::fourier(kernel.k_max()),
            ModelFamily::Xray(table) => table.basis(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ModelFamily::Convolution(kernel) => 2 * kernel.k_max() + 1,
            ModelFamily::Xray(table) => 2 * table.n_lines(),
        }
    }

    /// Whether `theta -> ||K_theta f||` is constant for every `f`.
    pub fn norm_constant_in_theta(&self) -> bool {
        matches!(self, ModelFamily::Convolution(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xray::{ChiProfile, LineGrid};

    #[test]
    fn dense_and_diagonal_paths_agree() {
        let kernel = ConvolutionKernel::power_law(3.0, 5).unwrap();
        let fam = ModelFamily::Convolution(kernel);
        let m = fam.at(0.21);
        let f = CoefficientFunction::new(
            Basis::fourier(5),
            (0..11).map(|i| (i as f64).cos()).collect(),
        )
        .unwrap();
        let dense = ForwardModel::Dense {
            theta: 0.21,
            basis: m.basis(),
            k: m.matrix(),
            kdot: m.dot_matrix(),
        };
        assert!((m.apply(&f).unwrap() - dense.apply(&f).unwrap()).amax() < 1e-15);
        assert!((m.apply_dot(&f).unwrap() - dense.apply_dot(&f).unwrap()).amax() < 1e-13);
    }

    #[test]
    fn xray_family_realifies() {
        let grid = LineGrid::new(12, 6).unwrap();
        let table = ChordTable::new(ChiProfile::default(), Basis::zernike(2), &grid, 8).unwrap();
        let fam = ModelFamily::Xray(Arc::new(table));
        let m = fam.at(1.0);
        assert_eq!(m.output_dim(), 2 * grid.len());
        assert_eq!(m.basis().dim(), 12);
        assert!(!fam.norm_constant_in_theta());
        let wrong = CoefficientFunction::zeros(Basis::zernike(3));
        assert!(m.apply(&wrong).is_err());
    }
}
