//! Writes the synthetic helix-bundle dimer, plus a copy with the two chains
//! swung apart about y, as PDB files for trying out the CLI.
//!
//! cargo run --release -p chainfit --example toy_dimer -- out_dir [angle_deg]

use std::path::PathBuf;

use chainfit::pdb;
use chainfit_core::toy::{helix_bundle_dimer, rotate_chains, ToyConfig};
use chainfit_core::Vec3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy".into()));
    let angle: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(12.0);
    std::fs::create_dir_all(&out)?;
    let closed = helix_bundle_dimer(&ToyConfig::default())?;
    let open = rotate_chains(&closed, &Vec3::y(), &[angle, -angle])?;
    pdb::save_structure(&out.join("dimer.pdb"), &closed)?;
    pdb::save_structure(&out.join("dimer_open.pdb"), &open)?;
    println!("{} atoms in {} chains -> {}", closed.len(), closed.num_chains(), out.display());
    Ok(())
}
