//! Anisotropic elastic network model and normal modes.
//!
//! Springs connect every atom pair closer than the cutoff. The Hessian of
//! the resulting quadratic energy is eigendecomposed and the lowest
//! non-rigid eigenvectors become the deformation basis:
//! `X(α) = X0 + Σ_k α_k U_k`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{dimension, Error, Result};
use crate::Vec3;

/// Eigenvalues below this fraction of the largest one are rigid-body modes.
pub const NULL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnmConfig {
    /// Spring cutoff in Å.
    pub cutoff: f64,
    pub spring_constant: f64,
    pub num_modes: usize,
}

impl Default for EnmConfig {
    fn default() -> Self {
        Self {
            cutoff: 15.0,
            spring_constant: 1.0,
            num_modes: 15,
        }
    }
}

impl EnmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidConfig("cutoff must be positive".into()));
        }
        if !(self.spring_constant > 0.0) {
            return Err(Error::InvalidConfig("spring constant must be positive".into()));
        }
        if self.num_modes == 0 {
            return Err(Error::InvalidConfig("at least one mode is required".into()));
        }
        Ok(())
    }
}

/// Dense `3n × 3n` ANM Hessian of the given reference positions.
pub fn build_hessian(positions: &[Vec3], config: &EnmConfig) -> Result<DMatrix<f64>> {
    config.validate()?;
    let n = positions.len();
    if n < 2 {
        return Err(dimension("elastic network atoms (minimum)", 2, n));
    }
    let cutoff2 = config.cutoff * config.cutoff;
    let mut h = DMatrix::<f64>::zeros(3 * n, 3 * n);
    for j in 0..n {
        for k in (j + 1)..n {
            let d = positions[j] - positions[k];
            let d2 = d.norm_squared();
            if d2 > cutoff2 {
                continue;
            }
            if d2 == 0.0 {
                return Err(Error::DegenerateGeometry { first: j, second: k });
            }
            for a in 0..3 {
                for b in 0..3 {
                    let v = -config.spring_constant * d[a] * d[b] / d2;
                    h[(3 * j + a, 3 * k + b)] = v;
                    h[(3 * k + a, 3 * j + b)] = v;
                    h[(3 * j + a, 3 * j + b)] -= v;
                    h[(3 * k + a, 3 * k + b)] -= v;
                }
            }
        }
    }
    Ok(h)
}

/// Quadratic ENM energy `½ (X − X0)ᵀ H (X − X0)`.
pub fn energy(hessian: &DMatrix<f64>, reference: &[f64], coords: &[f64]) -> Result<f64> {
    let n = hessian.nrows();
    if reference.len() != n || coords.len() != n {
        return Err(dimension("energy coordinates", n, coords.len().min(reference.len())));
    }
    let delta = nalgebra::DVector::from_iterator(n, coords.iter().zip(reference).map(|(x, r)| x - r));
    Ok(0.5 * delta.dot(&(hessian * &delta)))
}

/// Full sorted spectrum of a Hessian.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub null_count: usize,
}

pub fn spectrum(hessian: &DMatrix<f64>) -> Result<Spectrum> {
    if hessian.nrows() != hessian.ncols() {
        return Err(dimension("square Hessian", hessian.nrows(), hessian.ncols()));
    }
    let eig = SymmetricEigen::new(hessian.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::<f64>::zeros(hessian.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // sign gauge: largest-magnitude component positive
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    let max = eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
    let null_count = eigenvalues
        .iter()
        .take_while(|&&l| l < NULL_TOLERANCE * max)
        .count();
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        null_count,
    })
}

/// Lowest non-rigid normal modes of one segment (a chain or a whole structure).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalModeBasis {
    reference: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// `3n × K`, column-major.
    modes: DMatrix<f64>,
    inverse_eigen_total: f64,
}

impl NormalModeBasis {
    /// Assembles a basis from stored parts (used by deserializers).
    /// `inverse_eigen_total` is Σ 1/λ over all non-null modes of the Hessian.
    pub fn from_parts(
        reference: Vec<f64>,
        eigenvalues: Vec<f64>,
        modes: DMatrix<f64>,
        inverse_eigen_total: f64,
    ) -> Result<Self> {
        if modes.nrows() != reference.len() {
            return Err(dimension("mode rows", reference.len(), modes.nrows()));
        }
        if modes.ncols() != eigenvalues.len() {
            return Err(dimension("mode columns", eigenvalues.len(), modes.ncols()));
        }
        if !(inverse_eigen_total > 0.0) || eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidConfig("stored eigenvalues must be positive".into()));
        }
        Ok(Self {
            reference,
            eigenvalues,
            modes,
            inverse_eigen_total,
        })
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn inverse_eigen_total(&self) -> f64 {
        self.inverse_eigen_total
    }

    pub fn num_atoms(&self) -> usize {
        self.reference.len() / 3
    }

    /// Cumulative share of ENM thermal fluctuation (∝ 1/λ) captured by the
    /// first k modes, relative to all non-null modes of the Hessian.
    pub fn cumulative_fluctuation(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += 1.0 / l;
                acc / self.inverse_eigen_total
            })
            .collect()
    }

    /// Basis restricted to its first `k` modes.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.num_modes() {
            return Err(Error::Capacity {
                requested: k,
                available: self.num_modes(),
            });
        }
        Ok(Self {
            reference: self.reference.clone(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            modes: self.modes.columns(0, k).into_owned(),
            inverse_eigen_total: self.inverse_eigen_total,
        })
    }

    pub fn deform(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.reference.len()];
        self.deform_into(alpha, &mut out)?;
        Ok(out)
    }

    /// Writes `X0 + U α` into `out`.
    pub fn deform_into(&self, alpha: &[f64], out: &mut [f64]) -> Result<()> {
        if alpha.len() != self.num_modes() {
            return Err(dimension("mode weights", self.num_modes(), alpha.len()));
        }
        if out.len() != self.reference.len() {
            return Err(dimension("deformation output", self.reference.len(), out.len()));
        }
        if !alpha.iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidConfig("mode weights must be finite".into()));
        }
        out.copy_from_slice(&self.reference);
        let rows = self.reference.len();
        let data = self.modes.as_slice();
        for (k, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let col = &data[k * rows..(k + 1) * rows];
            for (o, u) in out.iter_mut().zip(col) {
                *o += a * u;
            }
        }
        Ok(())
    }

    /// `Uᵀ g` for a coordinate-space gradient `g`.
    pub fn project(&self, g: &[f64], out: &mut [f64]) {
        let rows = self.reference.len();
        let data = self.modes.as_slice();
        for (k, o) in out.iter_mut().enumerate() {
            let col = &data[k * rows..(k + 1) * rows];
            *o = col.iter().zip(g).map(|(u, x)| u * x).sum();
        }
    }
}

/// Eigendecomposes the Hessian and keeps the `k` lowest non-null modes.
pub fn compute_modes(hessian: &DMatrix<f64>, reference: &[f64], k: usize) -> Result<NormalModeBasis> {
    if reference.len() != hessian.nrows() {
        return Err(dimension("reference coordinates", hessian.nrows(), reference.len()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("at least one mode is required".into()));
    }
    let spec = spectrum(hessian)?;
    let available = spec.eigenvalues.len() - spec.null_count;
    if k > available {
        return Err(Error::Capacity {
            requested: k,
            available,
        });
    }
    let modes = spec.eigenvectors.columns(spec.null_count, k).into_owned();
    let eigenvalues = spec.eigenvalues[spec.null_count..spec.null_count + k].to_vec();
    let inverse_eigen_total = spec.eigenvalues[spec.null_count..]
        .iter()
        .map(|l| 1.0 / l)
        .sum();
    Ok(NormalModeBasis {
        reference: reference.to_vec(),
        eigenvalues,
        modes,
        inverse_eigen_total,
    })
}

/// Hessian plus modes for one set of positions.
pub fn modes_for(positions: &[Vec3], config: &EnmConfig) -> Result<NormalModeBasis> {
    let hessian = build_hessian(positions, config)?;
    let reference: Vec<f64> = positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    compute_modes(&hessian, &reference, config.num_modes)
}
