//! Independent per-image fits over a stack, and their report.

use chainfit_core::analysis::{rmsd_coords, summarize, Summary};
use chainfit_core::{fit_image, AtomicStructure, ChainModel, EnmConfig, FitConfig, FitMode, ImagingConfig, LatentState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis_io::BasisSet;
use crate::error::{Error, Result};
use crate::stack::ImageStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub index: usize,
    /// `None` when the fit failed; see `error`.
    pub latents: Option<LatentState>,
    pub mse: Option<f64>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub restart: usize,
    /// Å against the ground-truth conformation, when the stack has one.
    pub rmsd: Option<f64>,
    pub error: Option<String>,
}

impl FitEntry {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackInfo {
    pub n: usize,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub first_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: FitMode,
    pub config: FitConfig,
    pub enm: EnmConfig,
    pub imaging: ImagingConfig,
    pub stack: StackInfo,
    pub entries: Vec<FitEntry>,
    pub failures: usize,
    /// Over successful fits with ground truth.
    pub rmsd: Option<Summary>,
    /// RMSD of the unfitted source reference against the same ground truth.
    pub source_rmsd: Option<Summary>,
}

impl FitReport {
    pub fn successful(&self) -> impl Iterator<Item = &FitEntry> {
        self.entries.iter().filter(|e| e.is_ok())
    }

    pub fn latents(&self) -> Vec<LatentState> {
        self.successful().filter_map(|e| e.latents.clone()).collect()
    }
}

/// The model to fit with for `mode`: whole-structure bases for `N_whole`,
/// per-chain bases otherwise. Modes without deformation still carry
/// `K`-mode bases so the latent layout is uniform.
pub fn build_model(source: &AtomicStructure, enm: &EnmConfig, mode: FitMode) -> Result<ChainModel> {
    let bases = BasisSet::compute(source, enm, mode.uses_whole_modes())?;
    Ok(ChainModel::new(source.clone(), bases.modes)?)
}

/// Fits every image of `stack` independently; run inside
/// [`crate::with_threads`] to control parallelism. Per-image failures become
/// entries with an error message.
pub fn fit_stack(stack: &ImageStack, model: &ChainModel, enm: &EnmConfig, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    model.check_config(config)?;
    let imaging = stack.meta.imaging;
    let truth = stack.truth.as_ref();
    if let Some(t) = truth {
        if t.reference().len() != model.reference().len() {
            return Err(Error::Data(format!(
                "source has {} atoms but the stack's ground truth has {}",
                model.reference().len(),
                t.reference().len()
            )));
        }
    }
    let source_coords = model.reference().flat_coords();
    let first = stack.meta.first_index;
    let results: Vec<(FitEntry, Option<f64>)> = (0..stack.len())
        .into_par_iter()
        .map(|i| {
            let image = stack.image(i);
            let gt = truth.map(|t| t.coords(i)).transpose();
            let fitted = fit_image(&image, &stack.poses[i], model, &imaging, config, first + i as u64);
            let entry = match (fitted, gt) {
                (Ok(out), Ok(gt)) => {
                    let rmsd = match &gt {
                        Some(gt) => {
                            let mut coords = vec![0.0; source_coords.len()];
                            model
                                .compose_coords(&out.latents, &mut coords)
                                .and_then(|_| rmsd_coords(&coords, gt))
                                .ok()
                        }
                        None => None,
                    };
                    FitEntry {
                        index: i,
                        latents: Some(out.latents),
                        mse: Some(out.mse),
                        loss_trace: out.loss_trace,
                        iterations: out.iterations,
                        restart: out.restart,
                        rmsd,
                        error: None,
                    }
                }
                (Err(e), _) => failed(i, e.to_string()),
                (_, Err(e)) => failed(i, e.to_string()),
            };
            let baseline = truth
                .and_then(|t| t.coords(i).ok())
                .and_then(|gt| rmsd_coords(&source_coords, &gt).ok());
            (entry, baseline)
        })
        .collect();
    let (entries, baselines): (Vec<FitEntry>, Vec<Option<f64>>) = results.into_iter().unzip();
    let rmsds: Vec<f64> = entries.iter().filter_map(|e| e.rmsd).collect();
    let baselines: Vec<f64> = baselines.into_iter().flatten().collect();
    Ok(FitReport {
        mode: config.mode,
        config: *config,
        enm: *enm,
        imaging,
        stack: StackInfo {
            n: stack.len(),
            seed: stack.meta.seed,
            snr_db: stack.meta.snr_db,
            first_index: first,
        },
        failures: entries.iter().filter(|e| !e.is_ok()).count(),
        entries,
        rmsd: summarize(&rmsds),
        source_rmsd: summarize(&baselines),
    })
}

fn failed(index: usize, error: String) -> FitEntry {
    FitEntry {
        index,
        latents: None,
        mse: None,
        loss_trace: Vec::new(),
        iterations: 0,
        restart: 0,
        rmsd: None,
        error: Some(error),
    }
}
