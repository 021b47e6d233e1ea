//! Binary normal-mode bases with a JSON sidecar.
//!
//! Each basis file is little-endian: the magic `CFBASIS1`, `u64` atom count
//! `n`, `u64` mode count `K`, `f64` Σ1/λ over the full spectrum, then `3n`
//! reference coordinates, `K` eigenvalues and the `3n × K` modes in
//! column-major order.

use std::fs;
use std::path::Path;

use chainfit_core::nalgebra::DMatrix;
use chainfit_core::nma::modes_for;
use chainfit_core::{AtomicStructure, EnmConfig, ModeSet, NormalModeBasis, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CFBASIS1";
pub const SIDECAR: &str = "bases.json";

pub fn encode_basis(basis: &NormalModeBasis) -> Vec<u8> {
    let n = basis.num_atoms() as u64;
    let k = basis.num_modes() as u64;
    let mut out = Vec::with_capacity(32 + 8 * (basis.reference().len() * (1 + basis.num_modes()) + basis.num_modes()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&basis.inverse_eigen_total().to_le_bytes());
    for v in basis
        .reference()
        .iter()
        .chain(basis.eigenvalues())
        .chain(basis.modes().as_slice())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take8(&mut self) -> Option<[u8; 8]> {
        let chunk = self.bytes.get(self.pos..self.pos + 8)?;
        self.pos += 8;
        chunk.try_into().ok()
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| self.take8().map(f64::from_le_bytes)).collect()
    }
}

pub fn decode_basis(bytes: &[u8]) -> std::result::Result<NormalModeBasis, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take8().as_ref() != Some(MAGIC) {
        return Err("not a basis file".into());
    }
    let truncated = || "truncated basis file".to_string();
    let n = u64::from_le_bytes(r.take8().ok_or_else(truncated)?) as usize;
    let k = u64::from_le_bytes(r.take8().ok_or_else(truncated)?) as usize;
    let expected = n
        .checked_mul(3)
        .and_then(|rows| rows.checked_mul(k + 1))
        .and_then(|v| v.checked_add(k + 4))
        .and_then(|v| v.checked_mul(8));
    if expected != Some(bytes.len()) {
        return Err(format!("basis file size does not match header (n = {n}, K = {k})"));
    }
    let total = f64::from_le_bytes(r.take8().ok_or_else(truncated)?);
    let reference = r.f64s(3 * n).ok_or_else(truncated)?;
    let eigenvalues = r.f64s(k).ok_or_else(truncated)?;
    let modes = r.f64s(3 * n * k).ok_or_else(truncated)?;
    NormalModeBasis::from_parts(reference, eigenvalues, DMatrix::from_vec(3 * n, k, modes), total)
        .map_err(|e| e.to_string())
}

pub fn save_basis(path: &Path, basis: &NormalModeBasis) -> Result<()> {
    fs::write(path, encode_basis(basis)).map_err(|e| Error::io(path, e))
}

pub fn load_basis(path: &Path) -> Result<NormalModeBasis> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_basis(&bytes).map_err(|m| Error::format(path, m))
}

/// Sidecar describing a directory of basis files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub enm: EnmConfig,
    pub whole: bool,
    /// Chain ids in structure order; empty for a whole-structure basis.
    pub chains: Vec<String>,
    pub files: Vec<String>,
    /// Cumulative fluctuation share of the stored modes, per file.
    pub cumulative_fluctuation: Vec<Vec<f64>>,
}

/// Per-chain bases, or one whole-structure basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub enm: EnmConfig,
    pub modes: ModeSet,
    pub chains: Vec<String>,
}

impl BasisSet {
    pub fn compute(structure: &AtomicStructure, enm: &EnmConfig, whole: bool) -> Result<Self> {
        enm.validate()?;
        let modes = if whole {
            let pts: Vec<Vec3> = structure.positions().collect();
            ModeSet::Whole(modes_for(&pts, enm)?)
        } else {
            let bases = (0..structure.num_chains())
                .map(|c| {
                    let pts: Vec<Vec3> = structure.chain_atoms(c).iter().map(|a| a.position).collect();
                    modes_for(&pts, enm)
                })
                .collect::<chainfit_core::Result<Vec<_>>>()?;
            ModeSet::PerChain(bases)
        };
        let chains = if whole {
            Vec::new()
        } else {
            structure.chains().iter().map(|c| c.id.clone()).collect()
        };
        Ok(Self {
            enm: *enm,
            modes,
            chains,
        })
    }

    fn file_names(&self) -> Vec<String> {
        if self.modes.is_whole() {
            vec!["basis_whole.bin".to_string()]
        } else {
            (0..self.chains.len()).map(|i| format!("basis_chain{i}.bin")).collect()
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = self.file_names();
        for (name, basis) in files.iter().zip(self.modes.bases()) {
            save_basis(&dir.join(name), basis)?;
        }
        let manifest = BasisManifest {
            enm: self.enm,
            whole: self.modes.is_whole(),
            chains: self.chains.clone(),
            files,
            cumulative_fluctuation: self.modes.bases().iter().map(|b| b.cumulative_fluctuation()).collect(),
        };
        crate::write_json(&dir.join(SIDECAR), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BasisManifest = crate::read_json(&dir.join(SIDECAR))?;
        let bases = manifest
            .files
            .iter()
            .map(|f| load_basis(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let modes = if manifest.whole {
            match <[NormalModeBasis; 1]>::try_from(bases) {
                Ok([b]) => ModeSet::Whole(b),
                Err(_) => return Err(Error::format(dir, "whole-structure basis set must have one file")),
            }
        } else {
            if bases.len() != manifest.chains.len() {
                return Err(Error::format(dir, "one basis file per chain expected"));
            }
            ModeSet::PerChain(bases)
        };
        Ok(Self {
            enm: manifest.enm,
            modes,
            chains: manifest.chains,
        })
    }

    /// Fails unless the set was built for `structure`'s chain layout.
    pub fn check(&self, structure: &AtomicStructure) -> Result<()> {
        if !self.modes.is_whole() {
            let ids: Vec<&str> = structure.chains().iter().map(|c| c.id.as_str()).collect();
            if ids != self.chains.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Data(format!(
                    "bases were computed for chains {:?}, structure has {:?}",
                    self.chains, ids
                )));
            }
        }
        self.modes.check(structure)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chainfit_core::toy;

    #[test]
    fn binary_round_trip_is_exact() {
        let s = toy::helix_bundle_dimer(&toy::ToyConfig::small()).unwrap();
        let set = BasisSet::compute(&s, &EnmConfig { num_modes: 5, ..EnmConfig::default() }, false).unwrap();
        let b = &set.modes.bases()[1];
        let back = decode_basis(&encode_basis(b)).unwrap();
        assert_eq!(&back, b);
        assert_eq!(back.cumulative_fluctuation(), b.cumulative_fluctuation());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let s = toy::helix_bundle_dimer(&toy::ToyConfig::small()).unwrap();
        let set = BasisSet::compute(&s, &EnmConfig { num_modes: 3, ..EnmConfig::default() }, true).unwrap();
        let bytes = encode_basis(&set.modes.bases()[0]);
        assert!(decode_basis(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode_basis(b"NOTABASISFILE").is_err());
        let mut wrong = bytes.clone();
        wrong[8] += 1;
        assert!(decode_basis(&wrong).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = toy::helix_bundle_dimer(&toy::ToyConfig::small()).unwrap();
        for whole in [false, true] {
            let set = BasisSet::compute(&s, &EnmConfig { num_modes: 4, ..EnmConfig::default() }, whole).unwrap();
            let sub = dir.path().join(if whole { "w" } else { "c" });
            set.save(&sub).unwrap();
            let back = BasisSet::load(&sub).unwrap();
            assert_eq!(back, set);
            back.check(&s).unwrap();
        }
    }
}
