//! Reconstruction error and latent-space analysis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{dimension, Error, Result};
use crate::rigid::{LatentState, ChainTransform};
use crate::structure::AtomicStructure;
use crate::{Mat3, Vec3};

/// Histogram bin width for error maps, in Å.
pub const ERROR_BIN_WIDTH: f64 = 0.5;

/// RMSD between two flat coordinate buffers without superposition.
pub fn rmsd_coords(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || !a.len().is_multiple_of(3) {
        return Err(dimension("RMSD coordinates", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("RMSD of zero atoms"));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(libm::sqrt(ss / (a.len() / 3) as f64))
}

/// RMSD between structures with identical atom order; no alignment.
pub fn rmsd(a: &AtomicStructure, b: &AtomicStructure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dimension("RMSD atoms", a.len(), b.len()));
    }
    rmsd_coords(&a.flat_coords(), &b.flat_coords())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts[i]` covers `[i w, (i + 1) w)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: &[f64], bin_width: f64) -> Self {
        let mut counts = Vec::new();
        for v in values {
            let bin = libm::floor(v / bin_width).max(0.0) as usize;
            if counts.len() <= bin {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        Self { bin_width, counts }
    }
}

/// Per-atom distance between the mean ground-truth and mean fitted conformations.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub per_atom: Vec<f64>,
    pub mean_truth: Vec<f64>,
    pub mean_fitted: Vec<f64>,
    pub histogram: Histogram,
}

fn mean_coords(sets: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; sets[0].len()];
    for s in sets {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let n = sets.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Error map over flat coordinate sets (one entry per image).
pub fn error_map(truth: &[Vec<f64>], fitted: &[Vec<f64>]) -> Result<ErrorMap> {
    if truth.is_empty() || fitted.is_empty() {
        return Err(Error::EmptyInput("error map needs at least one structure"));
    }
    let len = truth[0].len();
    for s in truth.iter().chain(fitted) {
        if s.len() != len {
            return Err(dimension("error map coordinates", len, s.len()));
        }
    }
    let mean_truth = mean_coords(truth);
    let mean_fitted = mean_coords(fitted);
    let per_atom: Vec<f64> = mean_truth
        .chunks_exact(3)
        .zip(mean_fitted.chunks_exact(3))
        .map(|(a, b)| (Vec3::from_column_slice(a) - Vec3::from_column_slice(b)).norm())
        .collect();
    let histogram = Histogram::of(&per_atom, ERROR_BIN_WIDTH);
    Ok(ErrorMap {
        per_atom,
        mean_truth,
        mean_fitted,
        histogram,
    })
}

pub fn error_map_structures(truth: &[AtomicStructure], fitted: &[AtomicStructure]) -> Result<ErrorMap> {
    let t: Vec<Vec<f64>> = truth.iter().map(|s| s.flat_coords()).collect();
    let f: Vec<Vec<f64>> = fitted.iter().map(|s| s.flat_coords()).collect();
    error_map(&t, &f)
}

/// A latent sub-vector to analyze. Chains are 0-based internally and
/// 1-based in the text form (`alpha:1`, `rigid:2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentBlock {
    Alpha(usize),
    /// Row-major chain rotation followed by its translation (12 numbers).
    Rigid(usize),
}

impl fmt::Display for LatentBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentBlock::Alpha(c) => write!(f, "alpha:{}", c + 1),
            LatentBlock::Rigid(c) => write!(f, "rigid:{}", c + 1),
        }
    }
}

impl FromStr for LatentBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("latent block `{s}` is not alpha:N or rigid:N"));
        let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
        let idx: usize = idx.trim().parse().map_err(|_| bad())?;
        if idx == 0 {
            return Err(bad());
        }
        match kind.trim() {
            "alpha" => Ok(LatentBlock::Alpha(idx - 1)),
            "rigid" => Ok(LatentBlock::Rigid(idx - 1)),
            _ => Err(bad()),
        }
    }
}

pub fn block_vector(latents: &LatentState, block: LatentBlock) -> Result<Vec<f64>> {
    match block {
        LatentBlock::Alpha(c) => latents
            .alphas
            .get(c)
            .cloned()
            .ok_or(Error::OutOfRange { index: c, len: latents.alphas.len() }),
        LatentBlock::Rigid(c) => {
            let t = latents
                .chains
                .get(c)
                .ok_or(Error::OutOfRange { index: c, len: latents.chains.len() })?;
            let r = t.rotation()?;
            let mut out = Vec::with_capacity(12);
            for i in 0..3 {
                for j in 0..3 {
                    out.push(r[(i, j)]);
                }
            }
            out.extend_from_slice(&t.translation);
            Ok(out)
        }
    }
}

/// Replaces one block of `template` with `values`. Rigid vectors are mapped
/// back through Gram-Schmidt of their first two rotation columns, so any
/// 12-vector (e.g. a PCA traversal point) yields a valid rotation.
pub fn with_block(template: &LatentState, block: LatentBlock, values: &[f64]) -> Result<LatentState> {
    let mut out = template.clone();
    match block {
        LatentBlock::Alpha(c) => {
            let alpha = out
                .alphas
                .get_mut(c)
                .ok_or(Error::OutOfRange { index: c, len: template.alphas.len() })?;
            if alpha.len() != values.len() {
                return Err(dimension("alpha block", alpha.len(), values.len()));
            }
            alpha.copy_from_slice(values);
        }
        LatentBlock::Rigid(c) => {
            let t = out
                .chains
                .get_mut(c)
                .ok_or(Error::OutOfRange { index: c, len: template.chains.len() })?;
            if values.len() != 12 {
                return Err(dimension("rigid block", 12, values.len()));
            }
            let r = Mat3::from_row_slice(&values[..9]);
            let v1: Vec3 = r.column(0).into_owned();
            let v2: Vec3 = r.column(1).into_owned();
            let rotation = crate::rigid::gram_schmidt_rotation(&v1, &v2)?;
            *t = ChainTransform::from_rotation(
                &rotation,
                Vec3::new(values[9], values[10], values[11]),
                t.pivot(),
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `dim × p`, orthonormal columns, by decreasing variance.
    pub components: DMatrix<f64>,
    pub explained_variance_pct: Vec<f64>,
    /// `n × p` scores.
    pub projected: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Number of input directions dropped for having no variance.
    pub zero_variance_dims: usize,
}

impl PcaResult {
    pub fn num_components(&self) -> usize {
        self.components.ncols()
    }
}

/// Mean-centered PCA via eigendecomposition of the sample covariance.
pub fn pca(samples: &[Vec<f64>]) -> Result<PcaResult> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput("PCA needs at least two samples"));
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::EmptyInput("PCA of zero-dimensional samples"));
    }
    for s in samples {
        if s.len() != dim {
            return Err(dimension("PCA sample dimension", dim, s.len()));
        }
    }
    let n = samples.len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| samples[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let max = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| max > 0.0 && eig.eigenvalues[i] > 1e-12 * max)
        .collect();
    let mut components = DMatrix::zeros(dim, kept.len());
    for (dst, &src) in kept.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        components.set_column(dst, &col);
    }
    let explained_variance_pct = kept
        .iter()
        .map(|&i| 100.0 * eig.eigenvalues[i] / total)
        .collect();
    let projected = &centered * &components;
    Ok(PcaResult {
        zero_variance_dims: dim - kept.len(),
        components,
        explained_variance_pct,
        projected,
        mean,
    })
}

/// PCA of one latent block across fitted images.
pub fn latent_pca(latents: &[LatentState], block: LatentBlock) -> Result<PcaResult> {
    let samples: Vec<Vec<f64>> = latents
        .iter()
        .map(|l| block_vector(l, block))
        .collect::<Result<_>>()?;
    pca(&samples)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Latent vectors `mean + score_q · component` at score quantiles `q`.
pub fn traverse_pc(result: &PcaResult, pc_index: usize, quantiles: &[f64]) -> Result<Vec<Vec<f64>>> {
    if pc_index >= result.num_components() {
        return Err(Error::OutOfRange {
            index: pc_index,
            len: result.num_components(),
        });
    }
    if quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::InvalidConfig("quantiles must lie in (0, 1)".into()));
    }
    let scores: Vec<f64> = result.projected.column(pc_index).iter().copied().collect();
    let comp = result.components.column(pc_index);
    Ok(quantiles
        .iter()
        .map(|&q| {
            let s = quantile(&scores, q);
            result.mean.iter().zip(comp.iter()).map(|(m, c)| m + s * c).collect()
        })
        .collect())
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(dimension("correlation samples", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("correlation needs two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

/// Mean, median and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some(Summary {
        n,
        mean,
        median: quantile(values, 0.5),
        std: libm::sqrt(var),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use crate::rigid::{euler_zyx, GlobalPose};
    use crate::structure::Atom;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn structure(pts: &[[f64; 3]]) -> AtomicStructure {
        AtomicStructure::new(
            pts.iter()
                .map(|p| Atom::new("CA", "A", Vec3::new(p[0], p[1], p[2])))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rmsd_examples() {
        let a = structure(&[[0.0; 3], [1.0, 2.0, 3.0], [-1.0, 0.0, 4.0], [2.0, 2.0, 2.0]]);
        assert_eq!(rmsd(&a, &a).unwrap(), 0.0);
        let t = a.map_positions(|p| p + Vec3::x());
        assert_relative_eq!(rmsd(&a, &t).unwrap(), 1.0, epsilon = 1e-12);
        let mut c = a.flat_coords();
        c[4] += 3.0;
        let b = a.with_flat_coords(&c).unwrap();
        assert_relative_eq!(rmsd(&a, &b).unwrap(), 3.0 / 2.0, epsilon = 1e-12);
        let short = structure(&[[0.0; 3]]);
        assert!(rmsd(&a, &short).is_err());
    }

    proptest! {
        #[test]
        fn rmsd_is_a_metric(a in prop::collection::vec(-10.0..10.0f64, 12),
                            b in prop::collection::vec(-10.0..10.0f64, 12),
                            c in prop::collection::vec(-10.0..10.0f64, 12)) {
            let ab = rmsd_coords(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, rmsd_coords(&b, &a).unwrap());
            prop_assert!(ab <= rmsd_coords(&a, &c).unwrap() + rmsd_coords(&c, &b).unwrap() + 1e-12);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn pca_reconstructs_centered_data(data in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 6..20)) {
            let r = pca(&data).unwrap();
            let recon = &r.projected * r.components.transpose();
            for (i, row) in data.iter().enumerate() {
                for j in 0..4 {
                    prop_assert!((recon[(i, j)] - (row[j] - r.mean[j])).abs() < 1e-8);
                }
            }
            let total: f64 = r.explained_variance_pct.iter().sum();
            prop_assert!(total <= 100.0 + 1e-9);
            prop_assert!(r.explained_variance_pct.windows(2).all(|w| w[0] >= w[1]));
            let gram = r.components.transpose() * &r.components;
            prop_assert!((gram - DMatrix::identity(r.num_components(), r.num_components())).amax() < 1e-10);
        }
    }

    #[test]
    fn error_map_examples() {
        let gt = vec![vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![2.0, 0.0, 0.0, 1.0, 3.0, 1.0]];
        let map = error_map(&gt, &gt).unwrap();
        assert!(map.per_atom.iter().all(|e| *e == 0.0));
        assert_eq!(map.histogram.counts, vec![2]);

        let v = [0.3, -1.2, 2.0];
        let plus: Vec<f64> = gt[0].iter().enumerate().map(|(i, x)| x + v[i % 3]).collect();
        let minus: Vec<f64> = gt[1].iter().enumerate().map(|(i, x)| x - v[i % 3]).collect();
        let map = error_map(&gt, &[plus.clone(), minus.clone()]).unwrap();
        assert!(map.per_atom.iter().all(|e| e.abs() < 1e-12));

        // image order is irrelevant
        let a = error_map(&gt, &[plus.clone(), minus.clone()]).unwrap();
        let b = error_map(&[gt[1].clone(), gt[0].clone()], &[minus, plus]).unwrap();
        assert_eq!(a.per_atom, b.per_atom);
        assert_eq!(error_map(&[], &gt), Err(Error::EmptyInput("error map needs at least one structure")));
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::of(&[0.1, 0.49, 0.5, 1.7], 0.5);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
    }

    #[test]
    fn collinear_samples_have_one_component() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 5.0]).collect();
        let r = pca(&data).unwrap();
        assert_eq!(r.num_components(), 1);
        assert_relative_eq!(r.explained_variance_pct[0], 100.0, epsilon = 1e-9);
        assert_eq!(r.zero_variance_dims, 2);
    }

    #[test]
    fn constant_block_has_no_components() {
        let data = vec![vec![1.0, 2.0]; 5];
        let r = pca(&data).unwrap();
        assert_eq!(r.num_components(), 0);
        assert_eq!(r.zero_variance_dims, 2);
        assert!(pca(&data[..1]).is_err());
    }

    #[test]
    fn isotropic_gaussian_splits_variance_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Vec<f64>> = (0..100_000)
            .map(|_| {
                let a: f64 = rng.sample(rand_distr::StandardNormal);
                let b: f64 = rng.sample(rand_distr::StandardNormal);
                vec![a, b]
            })
            .collect();
        let r = pca(&data).unwrap();
        for p in &r.explained_variance_pct {
            assert!((p - 50.0).abs() < 1.0, "{p}");
        }
    }

    #[test]
    fn traversal_moves_along_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let t: f64 = rng.random_range(-1.0..1.0);
                let u: f64 = rng.random_range(-0.1..0.1);
                vec![3.0 * t + u, t - u, 1.0 + u]
            })
            .collect();
        let r = pca(&data).unwrap();
        let pts = traverse_pc(&r, 0, &[0.05, 0.5, 0.95]).unwrap();
        assert_eq!(pts.len(), 3);
        let comp = r.components.column(0);
        for p in &pts {
            let d: Vec<f64> = p.iter().zip(&r.mean).map(|(a, b)| a - b).collect();
            let along: f64 = d.iter().zip(comp.iter()).map(|(a, b)| a * b).sum();
            let resid: f64 = d.iter().zip(comp.iter()).map(|(a, b)| (a - along * b).powi(2)).sum();
            assert!(resid < 1e-20);
        }
        // scores are near-symmetric, so the median point is near the mean
        let mid: f64 = pts[1].iter().zip(&r.mean).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(libm::sqrt(mid) < 0.2);
        assert!(traverse_pc(&r, 5, &[0.5]).is_err());
        assert!(traverse_pc(&r, 0, &[1.0]).is_err());
    }

    #[test]
    fn blocks_round_trip() {
        let pose = GlobalPose::identity();
        let latents = LatentState {
            alphas: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            chains: vec![
                ChainTransform::from_rotation(&euler_zyx([0.1, 0.2, 0.3]), Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()),
                ChainTransform::identity(Vec3::x()),
            ],
            pose,
        };
        let rigid = block_vector(&latents, LatentBlock::Rigid(0)).unwrap();
        assert_eq!(rigid.len(), 12);
        let back = with_block(&latents, LatentBlock::Rigid(0), &rigid).unwrap();
        assert_relative_eq!(back.chains[0].rotation().unwrap(), latents.chains[0].rotation().unwrap(), epsilon = 1e-14);
        assert_eq!(block_vector(&latents, LatentBlock::Alpha(1)).unwrap(), vec![3.0, 4.0]);
        assert!(block_vector(&latents, LatentBlock::Alpha(2)).is_err());
        assert_eq!("rigid:1".parse::<LatentBlock>().unwrap(), LatentBlock::Rigid(0));
        assert_eq!("alpha:2".parse::<LatentBlock>().unwrap(), LatentBlock::Alpha(1));
        assert!("rigid:0".parse::<LatentBlock>().is_err());
        assert_eq!(LatentBlock::Rigid(0).to_string(), "rigid:1");
    }

    #[test]
    fn pearson_examples() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-12);
    }
}
