//! Synthetic Cα models: dimers of helical bundles arranged in a V.
//!
//! Used for desk-scale experiments and tests where no PDB entry is at hand.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rigid::axis_angle;
use crate::structure::{Atom, AtomicStructure};
use crate::Vec3;

const HELIX_RADIUS: f64 = 2.3;
const HELIX_RISE: f64 = 1.5;
const HELIX_TWIST_DEG: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyConfig {
    pub helices_per_chain: usize,
    pub residues_per_helix: usize,
    /// Distance between neighbouring helix axes (Å).
    pub helix_spacing: f64,
    /// Tilt of each chain's long axis away from the dimer axis (degrees).
    pub opening_deg: f64,
    /// Separation between the two chains at the hinge end (Å).
    pub hinge_gap: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            helices_per_chain: 4,
            residues_per_helix: 25,
            helix_spacing: 9.0,
            opening_deg: 20.0,
            hinge_gap: 9.0,
        }
    }
}

impl ToyConfig {
    /// 2 × 2 × 8 atoms, for fast unit tests.
    pub fn small() -> Self {
        Self {
            helices_per_chain: 2,
            residues_per_helix: 8,
            helix_spacing: 8.0,
            opening_deg: 15.0,
            hinge_gap: 8.0,
        }
    }
}

/// Helix axis offsets in the bundle cross-section, packed two per row.
fn bundle_layout(helices: usize, spacing: f64) -> Vec<(f64, f64)> {
    let rows = helices.div_ceil(2);
    (0..helices)
        .map(|h| {
            let row = h / 2;
            let col = if row % 2 == 0 { h % 2 } else { 1 - h % 2 };
            let x = (col as f64 - 0.5) * spacing;
            let y = (row as f64 - (rows as f64 - 1.0) / 2.0) * spacing;
            (x, y)
        })
        .collect()
}

/// One bundle with its long axis along +z, starting at z = 0.
fn bundle(config: &ToyConfig) -> Vec<Vec3> {
    let mut pts = Vec::new();
    let twist = HELIX_TWIST_DEG.to_radians();
    let length = (config.residues_per_helix - 1) as f64 * HELIX_RISE;
    for (h, (ax, ay)) in bundle_layout(config.helices_per_chain, config.helix_spacing)
        .into_iter()
        .enumerate()
    {
        let up = h % 2 == 0;
        for i in 0..config.residues_per_helix {
            let phase = twist * i as f64 + h as f64;
            let z = if up { i as f64 * HELIX_RISE } else { length - i as f64 * HELIX_RISE };
            pts.push(Vec3::new(
                ax + HELIX_RADIUS * libm::cos(phase),
                ay + HELIX_RADIUS * libm::sin(phase),
                z,
            ));
        }
    }
    pts
}

/// Two identical bundles (chains `A` and `B`) meeting at a hinge near the
/// origin and opening symmetrically in the x–z plane.
pub fn helix_bundle_dimer(config: &ToyConfig) -> Result<AtomicStructure> {
    if config.helices_per_chain == 0 || config.residues_per_helix < 2 {
        return Err(Error::InvalidConfig("bundle needs helices with at least two residues".into()));
    }
    let base = bundle(config);
    let half_gap = 0.5 * config.hinge_gap;
    let tilt = config.opening_deg.to_radians();
    let mut atoms = Vec::with_capacity(2 * base.len());
    for (chain, sign) in [("A", -1.0), ("B", 1.0)] {
        let rot = axis_angle(&Vec3::y(), sign * tilt);
        let half_width = 0.5 * config.helix_spacing;
        for (i, p) in base.iter().enumerate() {
            let local = Vec3::new(p.x + sign * (half_gap + half_width), p.y, p.z);
            let hinge = Vec3::new(sign * half_gap, 0.0, 0.0);
            let placed = rot * (local - hinge) + hinge;
            let mut atom = Atom::new("CA", chain, placed);
            atom.residue_name = "ALA".to_string();
            atom.residue_seq = i as i32 + 1;
            atom.element = "C".to_string();
            atoms.push(atom);
        }
    }
    let s = AtomicStructure::new(atoms)?;
    // center the dimer on the origin
    let n = s.len() as f64;
    let c = s.positions().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    Ok(s.map_positions(|p| p - c))
}

/// Copy of `structure` with chain `c` rotated about its own center by
/// `angles_deg[c]` degrees around `axis`.
pub fn rotate_chains(structure: &AtomicStructure, axis: &Vec3, angles_deg: &[f64]) -> Result<AtomicStructure> {
    if angles_deg.len() != structure.num_chains() {
        return Err(Error::InvalidConfig(format!(
            "expected {} chain angles, got {}",
            structure.num_chains(),
            angles_deg.len()
        )));
    }
    let mut coords = structure.flat_coords();
    for (c, chain) in structure.chains().iter().enumerate() {
        let r = axis_angle(axis, angles_deg[c].to_radians());
        let pivot = structure.chain_center(c);
        crate::rigid::apply_rigid(&mut coords[chain.coord_range()], &r, &Vec3::zeros(), &pivot)?;
    }
    structure.with_flat_coords(&coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimer_shape() {
        let s = helix_bundle_dimer(&ToyConfig::default()).unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s.num_chains(), 2);
        // consecutive helix residues are 3.8 Å apart, as in real helices
        let d = (s.atoms()[1].position - s.atoms()[0].position).norm();
        assert!((d - 3.8).abs() < 0.1, "{d}");
        // chains do not overlap
        let mut min = f64::MAX;
        for a in s.chain_atoms(0) {
            for b in s.chain_atoms(1) {
                min = min.min((a.position - b.position).norm());
            }
        }
        assert!(min > 3.0, "{min}");
    }

    #[test]
    fn rotate_chains_keeps_centers() {
        let s = helix_bundle_dimer(&ToyConfig::small()).unwrap();
        let r = rotate_chains(&s, &Vec3::y(), &[15.0, -15.0]).unwrap();
        for c in 0..2 {
            assert!((r.chain_center(c) - s.chain_center(c)).norm() < 1e-12);
        }
        assert!(rotate_chains(&s, &Vec3::y(), &[1.0]).is_err());
    }
}
