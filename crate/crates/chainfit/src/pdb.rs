//! Fixed-column PDB `ATOM`/`HETATM` records.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chainfit_core::{Atom, AtomicStructure, Vec3};

use crate::error::{Error, Result};

fn column(line: &str, start: usize, end: usize) -> &str {
    // PDB columns are 1-based and inclusive
    let end = end.min(line.len());
    if start > end {
        return "";
    }
    line.get(start - 1..end).unwrap_or("")
}

fn coordinate(line: &str, number: usize, start: usize, axis: char) -> Result<f64> {
    let field = column(line, start, start + 7).trim();
    field.parse::<f64>().map_err(|_| Error::Parse {
        line: number,
        message: format!("bad {axis} coordinate {field:?}"),
    })
}

fn parse_atom(line: &str, number: usize) -> Result<Atom> {
    if !line.is_ascii() {
        return Err(Error::Parse {
            line: number,
            message: "non-ASCII characters in atom record".into(),
        });
    }
    let position = Vec3::new(
        coordinate(line, number, 31, 'x')?,
        coordinate(line, number, 39, 'y')?,
        coordinate(line, number, 47, 'z')?,
    );
    let mut atom = Atom::new(column(line, 13, 16).trim(), column(line, 22, 22).trim(), position);
    atom.residue_name = column(line, 18, 20).trim().to_string();
    atom.residue_seq = column(line, 23, 26).trim().parse().unwrap_or(0);
    atom.element = column(line, 77, 78).trim().to_string();
    atom.hetero = line.starts_with("HETATM");
    Ok(atom)
}

/// Parses every model in `text`. A file without `MODEL` records is one model.
pub fn parse_models(text: &str) -> Result<Vec<AtomicStructure>> {
    let mut models = Vec::new();
    let mut atoms = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with("ATOM  ") || line.starts_with("HETATM") {
            atoms.push(parse_atom(line, i + 1)?);
        } else if line.starts_with("ENDMDL") && !atoms.is_empty() {
            models.push(AtomicStructure::new(std::mem::take(&mut atoms))?);
        }
    }
    if !atoms.is_empty() {
        models.push(AtomicStructure::new(atoms)?);
    }
    if models.is_empty() {
        return Err(chainfit_core::Error::EmptyStructure.into());
    }
    Ok(models)
}

/// Parses the first model in `text`.
pub fn parse_structure(text: &str) -> Result<AtomicStructure> {
    Ok(parse_models(text)?.swap_remove(0))
}

fn with_path(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Parse { line, message } => Error::format(path, format!("line {line}: {message}")),
        other => other,
    }
}

pub fn read_structure(path: &Path) -> Result<AtomicStructure> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_structure(&text).map_err(with_path(path))
}

pub fn read_models(path: &Path) -> Result<Vec<AtomicStructure>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_models(&text).map_err(with_path(path))
}

fn atom_name_field(name: &str, element: &str) -> String {
    // names of one-letter elements start in column 14
    if name.len() < 4 && element.len() <= 1 {
        format!(" {name:<3}")
    } else {
        format!("{name:<4}")
    }
}

fn write_atoms(out: &mut String, structure: &AtomicStructure, serial: &mut usize) {
    for atom in structure.atoms() {
        let record = if atom.hetero { "HETATM" } else { "ATOM  " };
        let p = atom.position;
        let _ = writeln!(
            out,
            "{record}{:>5} {} {:>3} {:1}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            *serial % 100_000,
            atom_name_field(&atom.name, &atom.element),
            atom.residue_name,
            atom.chain_id,
            atom.residue_seq,
            p.x,
            p.y,
            p.z,
            1.0,
            0.0,
            atom.element,
        );
        *serial += 1;
    }
}

/// Serializes one structure with 3-decimal coordinates.
pub fn write_structure(structure: &AtomicStructure) -> String {
    let mut out = String::new();
    let mut serial = 1;
    write_atoms(&mut out, structure, &mut serial);
    out.push_str("END\n");
    out
}

/// Serializes structures as consecutive `MODEL` records.
pub fn write_models(structures: &[AtomicStructure]) -> String {
    let mut out = String::new();
    for (i, s) in structures.iter().enumerate() {
        let _ = writeln!(out, "MODEL     {:>4}", i + 1);
        let mut serial = 1;
        write_atoms(&mut out, s, &mut serial);
        out.push_str("ENDMDL\n");
    }
    out.push_str("END\n");
    out
}

pub fn save_structure(path: &Path, structure: &AtomicStructure) -> Result<()> {
    fs::write(path, write_structure(structure)).map_err(|e| Error::io(path, e))
}

pub fn save_models(path: &Path, structures: &[AtomicStructure]) -> Result<()> {
    fs::write(path, write_models(structures)).map_err(|e| Error::io(path, e))
}
