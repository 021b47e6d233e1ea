//! Chain-decomposed atomic structures.
//!
//! An [`AtomicStructure`] keeps atoms in file order and records, for each
//! chain, the contiguous index range it occupies. Most numerical code works
//! on flat `[x0, y0, z0, x1, ...]` coordinate buffers; the structure type
//! converts to and from that layout.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{dimension, Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub name: String,
    pub residue_name: String,
    pub residue_seq: i32,
    pub chain_id: String,
    pub element: String,
    pub hetero: bool,
    pub position: Vec3,
}

impl Atom {
    /// Plain `ATOM` record with residue metadata left generic.
    pub fn new(name: &str, chain_id: &str, position: Vec3) -> Self {
        Self {
            name: name.to_string(),
            residue_name: "UNK".to_string(),
            residue_seq: 0,
            chain_id: chain_id.to_string(),
            element: name.chars().take(1).collect(),
            hetero: false,
            position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub id: String,
    pub range: Range<usize>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Range into a flat coordinate buffer.
    pub fn coord_range(&self) -> Range<usize> {
        3 * self.range.start..3 * self.range.end
    }
}

/// Immutable set of atoms partitioned into contiguous chains.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicStructure {
    atoms: Vec<Atom>,
    chains: Vec<Chain>,
}

impl AtomicStructure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyStructure);
        }
        let mut chains: Vec<Chain> = Vec::new();
        for (i, atom) in atoms.iter().enumerate() {
            if !(atom.position.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFiniteCoordinate { index: i });
            }
            match chains.last_mut() {
                Some(last) if last.id == atom.chain_id => last.range.end = i + 1,
                _ => {
                    if chains.iter().any(|c| c.id == atom.chain_id) {
                        return Err(Error::NonContiguousChain(atom.chain_id.clone()));
                    }
                    chains.push(Chain {
                        id: atom.chain_id.clone(),
                        range: i..i + 1,
                    });
                }
            }
        }
        Ok(Self { atoms, chains })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn chain_index(&self, chain_id: &str) -> Result<usize> {
        self.chains
            .iter()
            .position(|c| c.id == chain_id)
            .ok_or_else(|| Error::UnknownChain(chain_id.to_string()))
    }

    pub fn chain(&self, chain_id: &str) -> Result<&Chain> {
        self.chain_index(chain_id).map(|i| &self.chains[i])
    }

    pub fn chain_atoms(&self, index: usize) -> &[Atom] {
        &self.atoms[self.chains[index].range.clone()]
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = Vec3> + '_ {
        self.atoms.iter().map(|a| a.position)
    }

    /// Unweighted mean position of the named chain.
    pub fn center_of_mass(&self, chain_id: &str) -> Result<Vec3> {
        let idx = self.chain_index(chain_id)?;
        Ok(self.chain_center(idx))
    }

    pub fn chain_center(&self, index: usize) -> Vec3 {
        let atoms = self.chain_atoms(index);
        let sum = atoms.iter().fold(Vec3::zeros(), |acc, a| acc + a.position);
        sum / atoms.len() as f64
    }

    /// Centers of every chain, in chain order.
    pub fn chain_centers(&self) -> Vec<Vec3> {
        (0..self.chains.len()).map(|i| self.chain_center(i)).collect()
    }

    pub fn flat_coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.atoms.len());
        for a in &self.atoms {
            out.extend_from_slice(a.position.as_slice());
        }
        out
    }

    /// Copy of this structure with coordinates replaced from a flat buffer.
    pub fn with_flat_coords(&self, coords: &[f64]) -> Result<Self> {
        if coords.len() != 3 * self.atoms.len() {
            return Err(dimension("flat coordinates", 3 * self.atoms.len(), coords.len()));
        }
        let mut atoms = self.atoms.clone();
        for (i, (atom, xyz)) in atoms.iter_mut().zip(coords.chunks_exact(3)).enumerate() {
            if !xyz.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteCoordinate { index: i });
            }
            atom.position = Vec3::new(xyz[0], xyz[1], xyz[2]);
        }
        Ok(Self {
            atoms,
            chains: self.chains.clone(),
        })
    }

    /// Keeps only atoms whose name is `CA`.
    pub fn ca_only(&self) -> Result<Self> {
        let atoms: Vec<Atom> = self
            .atoms
            .iter()
            .filter(|a| a.name.trim() == "CA")
            .cloned()
            .collect();
        Self::new(atoms)
    }

    /// Whether `other` has the same atom count and the same chain layout.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.atoms.len() == other.atoms.len() && self.chains == other.chains
    }

    pub fn map_positions(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Self {
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.position = f(a.position);
        }
        out
    }
}

pub(crate) fn point(coords: &[f64], atom: usize) -> Vec3 {
    Vec3::new(coords[3 * atom], coords[3 * atom + 1], coords[3 * atom + 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn structure(spec: &[(&str, [f64; 3])]) -> AtomicStructure {
        let atoms = spec
            .iter()
            .map(|(c, p)| Atom::new("CA", c, Vec3::new(p[0], p[1], p[2])))
            .collect();
        AtomicStructure::new(atoms).unwrap()
    }

    #[test]
    fn chains_are_split_by_id() {
        let s = structure(&[("A", [0.0; 3]), ("A", [1.0, 0.0, 0.0]), ("B", [2.0, 0.0, 0.0])]);
        assert_eq!(s.num_chains(), 2);
        assert_eq!(s.chains()[0].len(), 2);
        assert_eq!(s.chains()[1].len(), 1);
        assert_eq!(s.chains()[1].range, 2..3);
    }

    #[test]
    fn split_chain_rejected() {
        let atoms = vec![
            Atom::new("CA", "A", Vec3::zeros()),
            Atom::new("CA", "B", Vec3::zeros()),
            Atom::new("CA", "A", Vec3::zeros()),
        ];
        assert_eq!(
            AtomicStructure::new(atoms),
            Err(Error::NonContiguousChain("A".into()))
        );
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert_eq!(AtomicStructure::new(vec![]), Err(Error::EmptyStructure));
        let atoms = vec![Atom::new("CA", "A", Vec3::new(f64::NAN, 0.0, 0.0))];
        assert_eq!(
            AtomicStructure::new(atoms),
            Err(Error::NonFiniteCoordinate { index: 0 })
        );
    }

    #[test]
    fn center_of_mass_examples() {
        let s = structure(&[("A", [0.0; 3]), ("A", [2.0, 0.0, 0.0]), ("B", [5.0, -1.0, 3.0])]);
        assert_eq!(s.center_of_mass("A").unwrap(), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(s.center_of_mass("B").unwrap(), Vec3::new(5.0, -1.0, 3.0));
        assert_eq!(s.center_of_mass("Z"), Err(Error::UnknownChain("Z".into())));
    }

    #[test]
    fn center_of_mass_is_equivariant() {
        let s = structure(&[
            ("A", [0.3, 1.0, -2.0]),
            ("A", [2.0, 0.5, 0.1]),
            ("A", [-1.0, 4.0, 2.2]),
        ]);
        let q = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let v = Vec3::new(10.0, -3.0, 7.5);
        let moved = s.map_positions(|p| q * p + v);
        let expected: Vec3 = q * s.center_of_mass("A").unwrap() + v;
        assert_relative_eq!(moved.center_of_mass("A").unwrap(), expected, epsilon = 1e-9);
        let _: Mat3 = q;
    }

    #[test]
    fn flat_coordinates_round_trip() {
        let s = structure(&[("A", [0.0, 1.0, 2.0]), ("B", [3.0, 4.0, 5.0])]);
        let flat = s.flat_coords();
        assert_eq!(flat, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.with_flat_coords(&flat).unwrap(), s);
        assert!(s.with_flat_coords(&flat[..5]).is_err());
    }

    #[test]
    fn ca_filter() {
        let atoms = vec![
            Atom::new("N", "A", Vec3::zeros()),
            Atom::new("CA", "A", Vec3::zeros()),
            Atom::new("C", "A", Vec3::zeros()),
        ];
        let s = AtomicStructure::new(atoms).unwrap();
        assert_eq!(s.ca_only().unwrap().len(), 1);
    }
}
