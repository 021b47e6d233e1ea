//! CSV, SVG and PDB artifacts for `chainfit analyze`.

use std::fs;
use std::path::Path;

use chainfit_core::analysis::{
    error_map, latent_pca, pearson, traverse_pc, with_block, ErrorMap, LatentBlock, PcaResult,
};
use chainfit_core::{AtomicStructure, ChainModel, GlobalPose};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::FitReport;
use crate::stack::GroundTruth;
use crate::{pdb, svg};

/// Quantiles of the PC1 traversal export.
pub const TRAVERSAL_QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsdRow {
    pub label: String,
    pub mode: String,
    pub n: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
    pub source_mean: Option<f64>,
}

pub fn rmsd_rows(reports: &[(String, FitReport)]) -> Vec<RmsdRow> {
    reports
        .iter()
        .map(|(label, r)| RmsdRow {
            label: label.clone(),
            mode: r.mode.to_string(),
            n: r.entries.len(),
            failures: r.failures,
            mean: r.rmsd.map(|s| s.mean),
            median: r.rmsd.map(|s| s.median),
            std: r.rmsd.map(|s| s.std),
            source_mean: r.source_rmsd.map(|s| s.mean),
        })
        .collect()
}

/// `rmsd.csv` and `rmsd.svg`: one bar per report.
pub fn write_rmsd(dir: &Path, rows: &[RmsdRow]) -> Result<()> {
    let path = dir.join("rmsd.csv");
    let mut w = csv_writer(&path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let scored: Vec<&RmsdRow> = rows.iter().filter(|r| r.mean.is_some()).collect();
    if !scored.is_empty() {
        let labels: Vec<String> = scored.iter().map(|r| r.label.clone()).collect();
        let values: Vec<f64> = scored.iter().filter_map(|r| r.mean).collect();
        write_text(&dir.join("rmsd.svg"), &svg::bars(&labels, &values, "Mean RMSD to ground truth", "RMSD (Å)"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaExport {
    pub block: LatentBlock,
    pub result: PcaResult,
    /// Report entry index of each PCA sample.
    pub indices: Vec<usize>,
    pub morph: Option<Vec<f64>>,
    /// Pearson correlation of PC1 scores with the morph parameter.
    pub morph_correlation: Option<f64>,
    pub traversal: Vec<Vec<f64>>,
}

pub fn pca_export(report: &FitReport, block: LatentBlock, truth: Option<&GroundTruth>) -> Result<PcaExport> {
    let ok: Vec<_> = report.successful().filter(|e| e.latents.is_some()).collect();
    let latents: Vec<_> = ok.iter().filter_map(|e| e.latents.clone()).collect();
    let indices: Vec<usize> = ok.iter().map(|e| e.index).collect();
    let result = latent_pca(&latents, block)?;
    if result.num_components() == 0 {
        return Err(Error::Data(format!("latent block {block} has no variance")));
    }
    let morph = truth
        .and_then(|t| t.morph_params())
        .map(|p| indices.iter().map(|&i| p[i]).collect::<Vec<f64>>());
    let pc1: Vec<f64> = result.projected.column(0).iter().copied().collect();
    let morph_correlation = match &morph {
        Some(s) => Some(pearson(&pc1, s)?),
        None => None,
    };
    let traversal = traverse_pc(&result, 0, &TRAVERSAL_QUANTILES)?;
    Ok(PcaExport {
        block,
        result,
        indices,
        morph,
        morph_correlation,
        traversal,
    })
}

/// Structures obtained by substituting each traversal vector into identity latents.
pub fn traversal_structures(export: &PcaExport, model: &ChainModel) -> Result<Vec<AtomicStructure>> {
    let template = model.identity_latents(GlobalPose::identity());
    export
        .traversal
        .iter()
        .map(|v| Ok(model.compose(&with_block(&template, export.block, v)?)?))
        .collect()
}

/// `pca_scores.csv`, `pca_variance.csv`, `pca_traversal.csv`, `pca.svg`
/// and, given a model, `pca_traversal.pdb`.
pub fn write_pca(dir: &Path, export: &PcaExport, model: Option<&ChainModel>) -> Result<()> {
    let r = &export.result;
    let p = r.num_components();

    let path = dir.join("pca_scores.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["index".to_string()];
    header.extend((1..=p).map(|k| format!("pc{k}")));
    if export.morph.is_some() {
        header.push("morph".into());
    }
    w.write_record(&header).map_err(csv_err(&path))?;
    for (row, &index) in export.indices.iter().enumerate() {
        let mut rec = vec![index.to_string()];
        rec.extend((0..p).map(|k| r.projected[(row, k)].to_string()));
        if let Some(m) = &export.morph {
            rec.push(m[row].to_string());
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("pca_variance.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["pc", "explained_variance_pct"]).map_err(csv_err(&path))?;
    for (k, v) in r.explained_variance_pct.iter().enumerate() {
        w.write_record([(k + 1).to_string(), v.to_string()]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("pca_traversal.csv");
    let mut w = csv_writer(&path)?;
    for (q, v) in TRAVERSAL_QUANTILES.iter().zip(&export.traversal) {
        let mut rec = vec![q.to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let points: Vec<(f64, f64)> = (0..r.projected.nrows())
        .map(|i| (r.projected[(i, 0)], if p > 1 { r.projected[(i, 1)] } else { 0.0 }))
        .collect();
    let pct = |k: usize| r.explained_variance_pct.get(k).copied().unwrap_or(0.0);
    let title = format!("PCA of {}", export.block);
    let plot = svg::scatter(
        &points,
        export.morph.as_deref(),
        &title,
        &format!("PC1 ({:.1}%)", pct(0)),
        &format!("PC2 ({:.1}%)", pct(1)),
    );
    write_text(&dir.join("pca.svg"), &plot)?;

    if let Some(model) = model {
        pdb::save_models(&dir.join("pca_traversal.pdb"), &traversal_structures(export, model)?)?;
    }
    Ok(())
}

/// Mean-conformation error map of successful fits against ground truth.
pub fn report_error_map(report: &FitReport, model: &ChainModel, truth: &GroundTruth) -> Result<ErrorMap> {
    let mut gt = Vec::new();
    let mut fitted = Vec::new();
    for e in report.successful() {
        let Some(l) = &e.latents else { continue };
        let mut coords = vec![0.0; 3 * model.reference().len()];
        model.compose_coords(l, &mut coords)?;
        fitted.push(coords);
        gt.push(truth.coords(e.index)?);
    }
    Ok(error_map(&gt, &fitted)?)
}

/// `error_map.csv` (per atom), `error_histogram.csv` and `error_histogram.svg`.
pub fn write_error_map(dir: &Path, map: &ErrorMap, reference: &AtomicStructure) -> Result<()> {
    let path = dir.join("error_map.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["atom", "chain", "residue", "name", "error"]).map_err(csv_err(&path))?;
    for (i, (atom, e)) in reference.atoms().iter().zip(&map.per_atom).enumerate() {
        w.write_record([
            i.to_string(),
            atom.chain_id.clone(),
            atom.residue_seq.to_string(),
            atom.name.clone(),
            e.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let h = &map.histogram;
    let path = dir.join("error_histogram.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["bin_start", "bin_end", "count"]).map_err(csv_err(&path))?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([
            (i as f64 * h.bin_width).to_string(),
            ((i + 1) as f64 * h.bin_width).to_string(),
            c.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_text(
        &dir.join("error_histogram.svg"),
        &svg::histogram(&h.counts, h.bin_width, "Per-atom error of the mean conformation", "error (Å)"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub block: String,
    pub explained_variance_pct: Vec<f64>,
    pub zero_variance_dims: usize,
    pub morph_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMapSummary {
    pub max: f64,
    pub mean: f64,
    pub argmax: usize,
}

/// `analysis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub rmsd: Vec<RmsdRow>,
    pub pca: Option<PcaSummary>,
    pub error_map: Option<ErrorMapSummary>,
}

impl PcaSummary {
    pub fn of(export: &PcaExport) -> Self {
        Self {
            block: export.block.to_string(),
            explained_variance_pct: export.result.explained_variance_pct.clone(),
            zero_variance_dims: export.result.zero_variance_dims,
            morph_correlation: export.morph_correlation,
        }
    }
}

impl ErrorMapSummary {
    pub fn of(map: &ErrorMap) -> Self {
        let (argmax, max) = map
            .per_atom
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        Self {
            max,
            mean: map.per_atom.iter().sum::<f64>() / map.per_atom.len() as f64,
            argmax,
        }
    }
}
