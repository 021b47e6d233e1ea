//! Synthetic heterogeneous conformations and images.
//!
//! Mode weights follow `α_k = sqrt(N/K) d` with `d` drawn from a Gaussian
//! mixture, chains are then rotated about their reference centers by
//! per-axis angles drawn uniformly in `[-θ, θ]` (composed `Rz Ry Rx`), and
//! the result is rendered under a uniformly random global orientation.
//! Every image draws from its own ChaCha stream keyed by `(seed, index)`,
//! so output does not depend on evaluation order.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{dimension, Error, Result};
use crate::nma::NormalModeBasis;
use crate::render::{add_noise, render_coords_into, Image, ImagingConfig};
use crate::rigid::{compose_coords, euler_zyx, ChainTransform, GlobalPose, LatentState, ModeSet};
use crate::structure::AtomicStructure;
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HeterogeneityRecipe {
    pub num_modes: usize,
    pub gmm: Vec<GmmComponent>,
    /// Per-axis rotation half-angles (x, y, z) in degrees.
    pub rotation_half_angles_deg: [f64; 3],
    pub counts: DatasetCounts,
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// ENM cutoff (Å) for the ground-truth modes.
    pub cutoff: f64,
    /// Global shift half-range in pixels; `None` means `D/16`.
    pub shift_range_px: Option<f64>,
}

impl Default for HeterogeneityRecipe {
    fn default() -> Self {
        Self {
            num_modes: 15,
            gmm: alloc::vec![
                GmmComponent { weight: 0.5, mean: 0.0, std: 0.25 },
                GmmComponent { weight: 0.5, mean: 2.5, std: 0.25 },
            ],
            rotation_half_angles_deg: [5.0; 3],
            counts: DatasetCounts {
                train: 50_000,
                val: 5_000,
                test: 5_000,
            },
            snr_db: Some(-20.0),
            seed: 0,
            cutoff: 15.0,
            shift_range_px: None,
        }
    }
}

impl HeterogeneityRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.num_modes == 0 {
            return Err(Error::InvalidConfig("recipe needs at least one mode".into()));
        }
        if self.gmm.is_empty() {
            return Err(Error::InvalidConfig("mixture has no components".into()));
        }
        let total: f64 = self.gmm.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.gmm.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(Error::InvalidConfig("mixture weights must be non-negative and sum to 1".into()));
        }
        if self.gmm.iter().any(|c| !(c.std > 0.0) || !c.mean.is_finite()) {
            return Err(Error::InvalidConfig("mixture components need finite means and positive std".into()));
        }
        if self.rotation_half_angles_deg.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidConfig("rotation half-angles must be non-negative".into()));
        }
        let c = &self.counts;
        if c.train == 0 || c.val == 0 || c.test == 0 {
            return Err(Error::InvalidConfig("dataset counts must be at least 1".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidConfig("cutoff must be positive".into()));
        }
        Ok(())
    }

    pub fn shift_range(&self, imaging: &ImagingConfig) -> f64 {
        self.shift_range_px
            .unwrap_or(imaging.image_size as f64 / 16.0)
    }
}

/// Generator for image `index` of a run seeded with `seed`.
pub fn image_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the mixture component index.
pub fn sample_component<R: Rng + ?Sized>(gmm: &[GmmComponent], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, c) in gmm.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    gmm.len() - 1
}

pub fn sample_mixture<R: Rng + ?Sized>(gmm: &[GmmComponent], rng: &mut R) -> f64 {
    let c = &gmm[sample_component(gmm, rng)];
    let z: f64 = rng.sample(StandardNormal);
    c.mean + c.std * z
}

/// Per-axis angles (radians) uniform in `[-θ, θ]`.
pub fn sample_chain_angles<R: Rng + ?Sized>(half_angles_deg: &[f64; 3], rng: &mut R) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, h) in out.iter_mut().zip(half_angles_deg) {
        let u: f64 = rng.random();
        *o = h.to_radians() * (2.0 * u - 1.0);
    }
    out
}

/// Uniform rotation on SO(3) via a uniform unit quaternion.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = core::f64::consts::TAU;
    let a = libm::sqrt(1.0 - u1);
    let b = libm::sqrt(u1);
    let (w, x, y, z) = (
        a * libm::sin(tau * u2),
        a * libm::cos(tau * u2),
        b * libm::sin(tau * u3),
        b * libm::cos(tau * u3),
    );
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn sample_global_pose<R: Rng + ?Sized>(shift_range: f64, rng: &mut R) -> GlobalPose {
    let rotation = uniform_rotation(rng);
    let mut shift = [0.0; 2];
    for s in &mut shift {
        let u: f64 = rng.random();
        *s = shift_range * (2.0 * u - 1.0);
    }
    GlobalPose::new(&rotation, shift)
}

/// Samples one heterogeneous conformation from per-chain ground-truth modes.
pub fn sample_conformation<R: Rng + ?Sized>(
    reference: &AtomicStructure,
    bases: &[NormalModeBasis],
    recipe: &HeterogeneityRecipe,
    rng: &mut R,
) -> Result<(AtomicStructure, LatentState)> {
    let modes = generation_modes(reference, bases, recipe.num_modes)?;
    let latents = sample_latents(reference, &modes, recipe, rng)?;
    let mut coords = alloc::vec![0.0; 3 * reference.len()];
    compose_coords(reference, &modes, &latents, &mut coords)?;
    Ok((reference.with_flat_coords(&coords)?, latents))
}

/// Per-chain bases truncated to the recipe's mode count.
pub fn generation_modes(reference: &AtomicStructure, bases: &[NormalModeBasis], k: usize) -> Result<ModeSet> {
    if bases.len() != reference.num_chains() {
        return Err(dimension("ground-truth bases", reference.num_chains(), bases.len()));
    }
    let modes = ModeSet::PerChain(bases.to_vec()).truncated(k)?;
    modes.check(reference)?;
    Ok(modes)
}

fn sample_latents<R: Rng + ?Sized>(
    reference: &AtomicStructure,
    modes: &ModeSet,
    recipe: &HeterogeneityRecipe,
    rng: &mut R,
) -> Result<LatentState> {
    let k = recipe.num_modes;
    let scale = libm::sqrt(reference.len() as f64 / k as f64);
    let mut latents = LatentState::identity(reference, modes, GlobalPose::identity());
    for (c, alpha) in latents.alphas.iter_mut().enumerate() {
        for a in alpha.iter_mut() {
            *a = scale * sample_mixture(&recipe.gmm, rng);
        }
        let angles = sample_chain_angles(&recipe.rotation_half_angles_deg, rng);
        let pivot = latents.chains[c].pivot();
        latents.chains[c] = ChainTransform::from_rotation(&euler_zyx(angles), Vec3::zeros(), pivot);
    }
    Ok(latents)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedImage {
    pub clean: Image,
    pub observed: Image,
    pub pose: GlobalPose,
    pub latents: Option<LatentState>,
    /// Morph parameter, for morph datasets.
    pub morph: Option<f64>,
    pub out_of_view: usize,
}

fn finish_image<R: Rng + ?Sized>(
    coords: &[f64],
    pose: GlobalPose,
    imaging: &ImagingConfig,
    snr_db: Option<f64>,
    rng: &mut R,
) -> Result<(Image, Image, usize)> {
    let mut clean = Image::zeros(imaging.image_size);
    let out_of_view = render_coords_into(coords, &pose, imaging, &mut clean);
    let observed = match snr_db {
        Some(snr) => add_noise(&clean, snr, rng)?,
        None => clean.clone(),
    };
    Ok((clean, observed, out_of_view))
}

/// Heterogeneous image simulator around a ground-truth reference.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    reference: &'a AtomicStructure,
    modes: ModeSet,
    recipe: &'a HeterogeneityRecipe,
    imaging: &'a ImagingConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(
        reference: &'a AtomicStructure,
        bases: &[NormalModeBasis],
        recipe: &'a HeterogeneityRecipe,
        imaging: &'a ImagingConfig,
    ) -> Result<Self> {
        recipe.validate()?;
        imaging.validate()?;
        let modes = generation_modes(reference, bases, recipe.num_modes)?;
        Ok(Self {
            reference,
            modes,
            recipe,
            imaging,
        })
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn snr_db(&self) -> Option<f64> {
        self.recipe.snr_db.or(self.imaging.snr_db)
    }

    /// Image `index`; identical for a given `(seed, index)` regardless of
    /// which other images are generated.
    pub fn image(&self, index: u64) -> Result<SimulatedImage> {
        let mut rng = image_rng(self.recipe.seed, index);
        let mut latents = sample_latents(self.reference, &self.modes, self.recipe, &mut rng)?;
        let pose = sample_global_pose(self.recipe.shift_range(self.imaging), &mut rng);
        latents.pose = pose;
        let mut coords = alloc::vec![0.0; 3 * self.reference.len()];
        compose_coords(self.reference, &self.modes, &latents, &mut coords)?;
        let (clean, observed, out_of_view) = finish_image(&coords, pose, self.imaging, self.snr_db(), &mut rng)?;
        Ok(SimulatedImage {
            clean,
            observed,
            pose,
            latents: Some(latents),
            morph: None,
            out_of_view,
        })
    }
}

/// `(1 − s) A + s B`, coordinate-wise.
pub fn morph(a: &AtomicStructure, b: &AtomicStructure, s: f64) -> Result<AtomicStructure> {
    if !a.same_layout(b) {
        return Err(dimension("morph endpoint atoms", a.len(), b.len()));
    }
    let ca = a.flat_coords();
    let cb = b.flat_coords();
    let coords: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| (1.0 - s) * x + s * y).collect();
    a.with_flat_coords(&coords)
}

/// Morph parameter of step `i` out of `steps`, equally spaced on `[0, 1]`.
pub fn morph_parameter(step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        0.0
    } else {
        step as f64 / (steps - 1) as f64
    }
}

/// Images of a linear morph path between two conformations.
#[derive(Debug, Clone)]
pub struct MorphSimulator<'a> {
    a: &'a AtomicStructure,
    b: &'a AtomicStructure,
    steps: usize,
    imaging: &'a ImagingConfig,
    snr_db: Option<f64>,
    seed: u64,
    shift_range: f64,
}

impl<'a> MorphSimulator<'a> {
    pub fn new(
        a: &'a AtomicStructure,
        b: &'a AtomicStructure,
        steps: usize,
        imaging: &'a ImagingConfig,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        imaging.validate()?;
        if !a.same_layout(b) {
            return Err(dimension("morph endpoint atoms", a.len(), b.len()));
        }
        if steps == 0 {
            return Err(Error::InvalidConfig("morph needs at least one step".into()));
        }
        Ok(Self {
            a,
            b,
            steps,
            imaging,
            snr_db,
            seed,
            shift_range: imaging.image_size as f64 / 16.0,
        })
    }

    pub fn conformation(&self, step: usize) -> Result<AtomicStructure> {
        morph(self.a, self.b, morph_parameter(step, self.steps))
    }

    /// Image `index` shows step `index mod steps`.
    pub fn image(&self, index: u64) -> Result<SimulatedImage> {
        let mut rng = image_rng(self.seed, index);
        let step = (index % self.steps as u64) as usize;
        let s = morph_parameter(step, self.steps);
        let pose = sample_global_pose(self.shift_range, &mut rng);
        let coords = morph(self.a, self.b, s)?.flat_coords();
        let (clean, observed, out_of_view) = finish_image(&coords, pose, self.imaging, self.snr_db, &mut rng)?;
        Ok(SimulatedImage {
            clean,
            observed,
            pose,
            latents: None,
            morph: Some(s),
            out_of_view,
        })
    }
}
