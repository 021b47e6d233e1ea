//! Parallel, order-independent stack generation.

use std::path::Path;

use chainfit_core::datagen::{HeterogeneityRecipe, MorphSimulator, SimulatedImage, Simulator};
use chainfit_core::{AtomicStructure, EnmConfig, ImagingConfig};
use rayon::prelude::*;

use crate::basis_io::BasisSet;
use crate::error::Result;
use crate::stack::{StackKind, StackMeta, StackWriter, TruthSource, FORMAT_VERSION, POSE_CONVENTION};

/// Images generated per parallel batch before they are written out.
const BATCH: u64 = 256;

pub trait ImageSource: Sync {
    fn image(&self, index: u64) -> chainfit_core::Result<SimulatedImage>;
}

impl ImageSource for Simulator<'_> {
    fn image(&self, index: u64) -> chainfit_core::Result<SimulatedImage> {
        Simulator::image(self, index)
    }
}

impl ImageSource for MorphSimulator<'_> {
    fn image(&self, index: u64) -> chainfit_core::Result<SimulatedImage> {
        MorphSimulator::image(self, index)
    }
}

pub fn base_meta(kind: StackKind, imaging: &ImagingConfig, snr_db: Option<f64>, seed: u64, first_index: u64) -> StackMeta {
    StackMeta {
        format_version: FORMAT_VERSION,
        kind,
        n: 0,
        image_size: imaging.image_size,
        pixel_size: imaging.pixel_size,
        snr_db,
        seed,
        first_index,
        imaging: *imaging,
        pose_convention: POSE_CONVENTION.to_string(),
        has_clean: true,
        has_truth: false,
    }
}

/// Renders images `first .. first + n` of `source` into `dir`.
/// Call inside [`crate::with_threads`] to control parallelism.
pub fn write_stack(
    source: &dyn ImageSource,
    first: u64,
    n: u64,
    meta: StackMeta,
    dir: &Path,
    truth: Option<TruthSource<'_>>,
) -> Result<StackMeta> {
    let mut writer = StackWriter::create(dir, meta)?;
    let mut start = first;
    while start < first + n {
        let end = (start + BATCH).min(first + n);
        let batch = (start..end)
            .into_par_iter()
            .map(|i| source.image(i))
            .collect::<chainfit_core::Result<Vec<_>>>()?;
        for image in &batch {
            writer.push(image)?;
        }
        start = end;
    }
    writer.finish(truth)
}

/// Ground-truth per-chain bases for a recipe.
pub fn recipe_bases(reference: &AtomicStructure, recipe: &HeterogeneityRecipe) -> Result<BasisSet> {
    let enm = EnmConfig {
        cutoff: recipe.cutoff,
        num_modes: recipe.num_modes,
        ..EnmConfig::default()
    };
    BasisSet::compute(reference, &enm, false)
}

/// Heterogeneous stack of `n` images starting at generator index `first`.
pub fn generate_stack(
    reference: &AtomicStructure,
    bases: &BasisSet,
    recipe: &HeterogeneityRecipe,
    imaging: &ImagingConfig,
    first: u64,
    n: u64,
    dir: &Path,
) -> Result<StackMeta> {
    let sim = Simulator::new(reference, bases.modes.bases(), recipe, imaging)?;
    let meta = base_meta(StackKind::Heterogeneous, imaging, sim.snr_db(), recipe.seed, first);
    let truth = TruthSource::Heterogeneous { reference, bases };
    write_stack(&sim, first, n, meta, dir, Some(truth))
}

/// `train/`, `val/` and `test/` stacks with the recipe's counts. The splits
/// draw consecutive generator indices, so they never share an image.
pub fn generate_dataset(
    reference: &AtomicStructure,
    recipe: &HeterogeneityRecipe,
    imaging: &ImagingConfig,
    dir: &Path,
) -> Result<Vec<StackMeta>> {
    recipe.validate()?;
    imaging.validate()?;
    let bases = recipe_bases(reference, recipe)?;
    let c = recipe.counts;
    let splits = [("train", c.train), ("val", c.val), ("test", c.test)];
    let mut first = 0u64;
    let mut metas = Vec::new();
    for (name, n) in splits {
        metas.push(generate_stack(reference, &bases, recipe, imaging, first, n as u64, &dir.join(name))?);
        first += n as u64;
    }
    Ok(metas)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_morph_stack(
    a: &AtomicStructure,
    b: &AtomicStructure,
    steps: usize,
    n: u64,
    imaging: &ImagingConfig,
    snr_db: Option<f64>,
    seed: u64,
    dir: &Path,
) -> Result<StackMeta> {
    let sim = MorphSimulator::new(a, b, steps, imaging, snr_db, seed)?;
    let meta = base_meta(StackKind::Morph, imaging, snr_db, seed, 0);
    write_stack(&sim, 0, n, meta, dir, Some(TruthSource::Morph { a, b, steps }))
}
