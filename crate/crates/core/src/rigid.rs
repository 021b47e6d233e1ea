//! Per-chain rigid-body kinematics and the dynamics half of the decoder.
//!
//! Each chain is deformed along its normal modes, rotated about the center
//! of its reference conformation and translated; chains are then
//! concatenated in reference order.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{dimension, Error, Result};
use crate::nma::NormalModeBasis;
use crate::structure::{point, AtomicStructure};
use crate::{Mat3, Vec3};

/// Inputs with a norm (or residual norm) below this are degenerate.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Rotation with columns `(w1, w2, w1 × w2)` from two unconstrained vectors.
pub fn gram_schmidt_rotation(v1: &Vec3, v2: &Vec3) -> Result<Mat3> {
    let n1 = v1.norm();
    if !(n1 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotation("first vector has zero length"));
    }
    let w1 = v1 / n1;
    let u2 = v2 - w1 * v2.dot(&w1);
    let n2 = u2.norm();
    if !(n2 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotation("vectors are parallel"));
    }
    let w2 = u2 / n2;
    let w3 = w1.cross(&w2);
    Ok(Mat3::from_columns(&[w1, w2, w3]))
}

/// Pulls `dL/dR` back through [`gram_schmidt_rotation`] to `(dL/dv1, dL/dv2)`.
pub fn gram_schmidt_backward(v1: &Vec3, v2: &Vec3, grad_r: &Mat3) -> Result<(Vec3, Vec3)> {
    let n1 = v1.norm();
    if !(n1 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotation("first vector has zero length"));
    }
    let w1 = v1 / n1;
    let c = v2.dot(&w1);
    let u2 = v2 - w1 * c;
    let n2 = u2.norm();
    if !(n2 > DEGENERACY_EPS) {
        return Err(Error::DegenerateRotation("vectors are parallel"));
    }
    let w2 = u2 / n2;
    let g3: Vec3 = grad_r.column(2).into_owned();
    // w3 = w1 × w2
    let mut gw1: Vec3 = grad_r.column(0).into_owned() + w2.cross(&g3);
    let gw2: Vec3 = grad_r.column(1).into_owned() + g3.cross(&w1);
    // w2 = u2 / |u2|
    let gu2 = (gw2 - w2 * w2.dot(&gw2)) / n2;
    // u2 = v2 − (v2·w1) w1
    let gv2 = gu2 - w1 * w1.dot(&gu2);
    gw1 -= v2 * w1.dot(&gu2) + gu2 * c;
    // w1 = v1 / |v1|
    let gv1 = (gw1 - w1 * w1.dot(&gw1)) / n1;
    Ok((gv1, gv2))
}

/// Rotation `R = Rz(γ) Ry(β) Rx(α)` from angles in radians.
pub fn euler_zyx(angles: [f64; 3]) -> Mat3 {
    let [ax, ay, az] = angles;
    let (sx, cx) = (libm::sin(ax), libm::cos(ax));
    let (sy, cy) = (libm::sin(ay), libm::cos(ay));
    let (sz, cz) = (libm::sin(az), libm::cos(az));
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Mat3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Mat3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Rotation by `angle` radians about a unit `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let k = axis.normalize();
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Mat3::identity() + kx * s + kx * kx * (1.0 - c)
}

pub(crate) fn to_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub(crate) fn from_arr(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Rotation about `pivot` followed by a translation, for one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainTransform {
    pub v1: [f64; 3],
    pub v2: [f64; 3],
    pub translation: [f64; 3],
    pub pivot: [f64; 3],
}

impl ChainTransform {
    pub fn identity(pivot: Vec3) -> Self {
        Self {
            v1: [1.0, 0.0, 0.0],
            v2: [0.0, 1.0, 0.0],
            translation: [0.0; 3],
            pivot: to_arr(&pivot),
        }
    }

    /// Transform whose Gram-Schmidt rotation reproduces `rotation`.
    pub fn from_rotation(rotation: &Mat3, translation: Vec3, pivot: Vec3) -> Self {
        Self {
            v1: to_arr(&rotation.column(0).into_owned()),
            v2: to_arr(&rotation.column(1).into_owned()),
            translation: to_arr(&translation),
            pivot: to_arr(&pivot),
        }
    }

    pub fn rotation(&self) -> Result<Mat3> {
        gram_schmidt_rotation(&from_arr(&self.v1), &from_arr(&self.v2))
    }

    pub fn translation(&self) -> Vec3 {
        from_arr(&self.translation)
    }

    pub fn pivot(&self) -> Vec3 {
        from_arr(&self.pivot)
    }

    /// Applies `x → R(x − pivot) + pivot + t` to every atom of a flat buffer.
    pub fn apply(&self, coords: &mut [f64]) -> Result<()> {
        let r = self.rotation()?;
        apply_rigid(coords, &r, &self.translation(), &self.pivot())
    }
}

/// `x → R(x − pivot) + pivot + t` on a flat coordinate buffer.
pub fn apply_rigid(coords: &mut [f64], rotation: &Mat3, translation: &Vec3, pivot: &Vec3) -> Result<()> {
    if !coords.len().is_multiple_of(3) {
        return Err(dimension("flat coordinates (multiple of 3)", coords.len() / 3 * 3, coords.len()));
    }
    // x + (R - I)(x - p) + t, so that R = I, t = 0 leaves coordinates bit-identical
    let delta = rotation - Mat3::identity();
    for xyz in coords.chunks_exact_mut(3) {
        let x = Vec3::new(xyz[0], xyz[1], xyz[2]);
        let y = x + (delta * (x - pivot) + translation);
        xyz.copy_from_slice(y.as_slice());
    }
    Ok(())
}

pub fn apply_chain_transform(coords: &[f64], transform: &ChainTransform) -> Result<Vec<f64>> {
    let mut out = coords.to_vec();
    transform.apply(&mut out)?;
    Ok(out)
}

/// Known orientation of the whole molecule and its in-plane image shift (px).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalPose {
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub shift: [f64; 2],
}

impl Default for GlobalPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl GlobalPose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            shift: [0.0; 2],
        }
    }

    pub fn new(rotation: &Mat3, shift: [f64; 2]) -> Self {
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rotation[(i, j)];
            }
        }
        Self { rotation: rows, shift }
    }

    pub fn matrix(&self) -> Mat3 {
        let r = &self.rotation;
        Mat3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn is_rotation(&self, tol: f64) -> bool {
        let m = self.matrix();
        (m.transpose() * m - Mat3::identity()).amax() <= tol && (m.determinant() - 1.0).abs() <= tol
    }
}

/// Which segments the normal modes live on.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeSet {
    /// One basis per chain, in chain order.
    PerChain(Vec<NormalModeBasis>),
    /// One basis over every atom of the structure.
    Whole(NormalModeBasis),
}

impl ModeSet {
    pub fn bases(&self) -> &[NormalModeBasis] {
        match self {
            ModeSet::PerChain(b) => b,
            ModeSet::Whole(b) => core::slice::from_ref(b),
        }
    }

    pub fn is_whole(&self) -> bool {
        matches!(self, ModeSet::Whole(_))
    }

    /// Atom ranges covered by each basis.
    pub fn segments(&self, structure: &AtomicStructure) -> Vec<Range<usize>> {
        match self {
            ModeSet::PerChain(_) => structure.chains().iter().map(|c| c.range.clone()).collect(),
            ModeSet::Whole(_) => core::iter::once(0..structure.len()).collect(),
        }
    }

    /// Basis truncated to its first `k` modes per segment.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        Ok(match self {
            ModeSet::PerChain(b) => {
                ModeSet::PerChain(b.iter().map(|b| b.truncated(k)).collect::<Result<_>>()?)
            }
            ModeSet::Whole(b) => ModeSet::Whole(b.truncated(k)?),
        })
    }

    /// Checks that bases match the reference atom layout.
    pub fn check(&self, structure: &AtomicStructure) -> Result<()> {
        let segments = self.segments(structure);
        if segments.len() != self.bases().len() {
            return Err(dimension("mode bases", segments.len(), self.bases().len()));
        }
        for (seg, basis) in segments.iter().zip(self.bases()) {
            if basis.num_atoms() != seg.len() {
                return Err(dimension("basis atoms", seg.len(), basis.num_atoms()));
            }
        }
        Ok(())
    }
}

/// Full per-image latent variable set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentState {
    /// Mode weights, one vector per mode segment.
    pub alphas: Vec<Vec<f64>>,
    /// Rigid transform per chain.
    pub chains: Vec<ChainTransform>,
    pub pose: GlobalPose,
}

impl LatentState {
    /// Zero mode weights and identity chain transforms pivoting on the
    /// reference chain centers.
    pub fn identity(reference: &AtomicStructure, modes: &ModeSet, pose: GlobalPose) -> Self {
        Self {
            alphas: modes.bases().iter().map(|b| vec![0.0; b.num_modes()]).collect(),
            chains: reference
                .chain_centers()
                .into_iter()
                .map(ChainTransform::identity)
                .collect(),
            pose,
        }
    }
}

/// Writes the composed structure's flat coordinates into `out`.
pub fn compose_coords(
    reference: &AtomicStructure,
    modes: &ModeSet,
    latents: &LatentState,
    out: &mut [f64],
) -> Result<()> {
    modes.check(reference)?;
    if out.len() != 3 * reference.len() {
        return Err(dimension("composed coordinates", 3 * reference.len(), out.len()));
    }
    if latents.alphas.len() != modes.bases().len() {
        return Err(dimension("mode weight blocks", modes.bases().len(), latents.alphas.len()));
    }
    if latents.chains.len() != reference.num_chains() {
        return Err(dimension("chain transforms", reference.num_chains(), latents.chains.len()));
    }
    for ((seg, basis), alpha) in modes
        .segments(reference)
        .into_iter()
        .zip(modes.bases())
        .zip(&latents.alphas)
    {
        basis
            .deform_into(alpha, &mut out[3 * seg.start..3 * seg.end])
            .map_err(|e| match e {
                Error::Dimension { expected, actual, .. } => dimension(
                    alloc::format!("mode weights of segment starting at atom {}", seg.start),
                    expected,
                    actual,
                ),
                other => other,
            })?;
    }
    for (chain, transform) in reference.chains().iter().zip(&latents.chains) {
        transform.apply(&mut out[chain.coord_range()])?;
    }
    Ok(())
}

/// Deform every segment along its modes, then move each chain rigidly.
pub fn compose_structure(
    reference: &AtomicStructure,
    modes: &ModeSet,
    latents: &LatentState,
) -> Result<AtomicStructure> {
    let mut coords = vec![0.0; 3 * reference.len()];
    compose_coords(reference, modes, latents, &mut coords)?;
    reference.with_flat_coords(&coords)
}

/// Pairwise distance between atoms `i` and `j` of a flat buffer.
pub fn pair_distance(coords: &[f64], i: usize, j: usize) -> f64 {
    (point(coords, i) - point(coords, j)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nma::{modes_for, EnmConfig};
    use crate::structure::Atom;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    #[test]
    fn gram_schmidt_examples() {
        let r = gram_schmidt_rotation(&Vec3::x(), &Vec3::y()).unwrap();
        assert_eq!(r, Mat3::identity());
        let r = gram_schmidt_rotation(&Vec3::y(), &(-Vec3::x())).unwrap();
        assert_eq!(r, Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0));
        let r = gram_schmidt_rotation(&Vec3::new(2.0, 0.0, 0.0), &Vec3::new(3.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn gram_schmidt_degenerate() {
        assert!(gram_schmidt_rotation(&Vec3::zeros(), &Vec3::y()).is_err());
        assert!(gram_schmidt_rotation(&Vec3::x(), &Vec3::new(-3.0, 0.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn gram_schmidt_is_special_orthogonal(v1 in arb_vec(), v2 in arb_vec()) {
            prop_assume!(v1.norm() > 1e-3 && v1.cross(&v2).norm() > 1e-3 * v1.norm());
            let r = gram_schmidt_rotation(&v1, &v2).unwrap();
            prop_assert!((r.transpose() * r - Mat3::identity()).amax() < 1e-10);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn backward_matches_finite_differences(v1 in arb_vec(), v2 in arb_vec(), g in prop::array::uniform9(-1.0..1.0f64)) {
            prop_assume!(v1.norm() > 0.5 && v1.cross(&v2).norm() > 0.3 * v1.norm() * v2.norm().max(0.5));
            let gr = Mat3::from_row_slice(&g);
            let loss = |a: &Vec3, b: &Vec3| gram_schmidt_rotation(a, b).unwrap().component_mul(&gr).sum();
            let (g1, g2) = gram_schmidt_backward(&v1, &v2, &gr).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                let fd1 = (loss(&(v1 + e), &v2) - loss(&(v1 - e), &v2)) / (2.0 * h);
                let fd2 = (loss(&v1, &(v2 + e)) - loss(&v1, &(v2 - e))) / (2.0 * h);
                prop_assert!((fd1 - g1[i]).abs() < 1e-6 * (1.0 + fd1.abs()));
                prop_assert!((fd2 - g2[i]).abs() < 1e-6 * (1.0 + fd2.abs()));
            }
        }

        #[test]
        fn rigid_transform_preserves_distances(v1 in arb_vec(), v2 in arb_vec(), t in arb_vec(),
                                               pts in prop::collection::vec(-20.0..20.0f64, 12)) {
            prop_assume!(v1.norm() > 1e-3 && v1.cross(&v2).norm() > 1e-3 * v1.norm());
            let tf = ChainTransform { v1: to_arr(&v1), v2: to_arr(&v2), translation: to_arr(&t), pivot: [1.0, -2.0, 0.5] };
            let out = apply_chain_transform(&pts, &tf).unwrap();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    prop_assert!((pair_distance(&pts, i, j) - pair_distance(&out, i, j)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn euler_and_axis_angle_agree() {
        let r = euler_zyx([0.0, 0.0, 0.4]);
        assert_relative_eq!(r, axis_angle(&Vec3::z(), 0.4), epsilon = 1e-15);
        let r = euler_zyx([0.3, -0.2, 0.1]);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn chain_transform_examples() {
        let pts = [0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 3.0, -1.0];
        let pivot = Vec3::new(1.0, 1.0, -1.0 / 3.0);
        let id = ChainTransform::identity(pivot);
        assert_eq!(apply_chain_transform(&pts, &id).unwrap(), pts);

        let mut shifted = id;
        shifted.translation = [1.0, 2.0, 3.0];
        let out = apply_chain_transform(&pts, &shifted).unwrap();
        for (a, b) in out.chunks(3).zip(pts.chunks(3)) {
            assert_relative_eq!(a[0] - b[0], 1.0, epsilon = 1e-14);
            assert_relative_eq!(a[1] - b[1], 2.0, epsilon = 1e-14);
            assert_relative_eq!(a[2] - b[2], 3.0, epsilon = 1e-14);
        }

        let rot = ChainTransform::from_rotation(&euler_zyx([0.7, 0.2, -1.3]), Vec3::zeros(), pivot);
        let out = apply_chain_transform(&pts, &rot).unwrap();
        let com = out.chunks(3).fold(Vec3::zeros(), |acc, p| acc + Vec3::new(p[0], p[1], p[2])) / 3.0;
        assert_relative_eq!(com, pivot, epsilon = 1e-12);
    }

    fn two_chain() -> AtomicStructure {
        let mut atoms = Vec::new();
        for i in 0..8 {
            let f = i as f64;
            atoms.push(Atom::new("CA", "A", Vec3::new(3.8 * f, libm::sin(f), 0.5 * libm::cos(f))));
        }
        for i in 0..6 {
            let f = i as f64;
            atoms.push(Atom::new("CA", "B", Vec3::new(3.0 * f, 6.0 + libm::cos(f), 1.0 + 0.3 * f)));
        }
        AtomicStructure::new(atoms).unwrap()
    }

    fn per_chain_modes(s: &AtomicStructure, k: usize) -> ModeSet {
        let cfg = EnmConfig { num_modes: k, ..EnmConfig::default() };
        ModeSet::PerChain(
            (0..s.num_chains())
                .map(|c| {
                    let pts: Vec<Vec3> = s.chain_atoms(c).iter().map(|a| a.position).collect();
                    modes_for(&pts, &cfg).unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn identity_latents_reproduce_reference() {
        let s = two_chain();
        let modes = per_chain_modes(&s, 3);
        let latents = LatentState::identity(&s, &modes, GlobalPose::identity());
        assert_eq!(compose_structure(&s, &modes, &latents).unwrap(), s);
    }

    #[test]
    fn chains_are_independent() {
        let s = two_chain();
        let modes = per_chain_modes(&s, 3);
        let mut latents = LatentState::identity(&s, &modes, GlobalPose::identity());
        latents.alphas[0] = vec![1.0, -2.0, 0.5];
        latents.chains[0] = ChainTransform::from_rotation(
            &euler_zyx([0.1, 0.2, 0.3]),
            Vec3::new(1.0, 0.0, 2.0),
            latents.chains[0].pivot(),
        );
        let out = compose_structure(&s, &modes, &latents).unwrap();
        let b = &s.chains()[1];
        assert_eq!(&out.atoms()[b.range.clone()], &s.atoms()[b.range.clone()]);
        assert_ne!(&out.atoms()[..8], &s.atoms()[..8]);
    }

    #[test]
    fn dimension_errors_are_reported() {
        let s = two_chain();
        let modes = per_chain_modes(&s, 3);
        let mut latents = LatentState::identity(&s, &modes, GlobalPose::identity());
        latents.alphas[1] = vec![0.0; 2];
        match compose_structure(&s, &modes, &latents) {
            Err(Error::Dimension { context, .. }) => assert!(context.contains("atom 8")),
            other => panic!("unexpected {other:?}"),
        }
        latents.alphas.pop();
        assert!(compose_structure(&s, &modes, &latents).is_err());
    }

    #[test]
    fn composition_is_rotation_equivariant() {
        // Rotating the reference by Q (modes follow) and conjugating the chain
        // rotations gives Q times the original composition.
        let s = two_chain();
        let q = euler_zyx([0.4, -0.9, 1.7]);
        let rotated = s.map_positions(|p| q * p);
        let modes = per_chain_modes(&s, 3);
        let modes_q = per_chain_modes(&rotated, 3);
        let mut latents = LatentState::identity(&s, &modes, GlobalPose::identity());
        let mut latents_q = LatentState::identity(&rotated, &modes_q, GlobalPose::identity());
        for c in 0..2 {
            let r = euler_zyx([0.2 * c as f64, 0.3, -0.1]);
            let t = Vec3::new(0.5, -1.0, 2.0);
            latents.chains[c] = ChainTransform::from_rotation(&r, t, latents.chains[c].pivot());
            latents_q.chains[c] = ChainTransform::from_rotation(&(q * r * q.transpose()), q * t, latents_q.chains[c].pivot());
        }
        let a = compose_structure(&s, &modes, &latents).unwrap();
        let b = compose_structure(&rotated, &modes_q, &latents_q).unwrap();
        for (x, y) in a.positions().zip(b.positions()) {
            assert_relative_eq!(q * x, y, epsilon = 1e-8);
        }
    }
}
