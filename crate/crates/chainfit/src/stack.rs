//! On-disk image stacks.
//!
//! A stack directory holds `meta.json`, `images.f32` (little-endian `f32`,
//! row-major, image-major), `poses.json`, optionally `clean.f32` with the
//! noise-free renders, and optionally ground truth: `gt_latents.json` plus
//! the ground-truth reference (`truth.json`, exact coordinates, with
//! `truth.pdb` for atom metadata and `gt_bases/`), or the morph endpoints and
//! per-image morph parameters.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chainfit_core::datagen::morph;
use chainfit_core::{AtomicStructure, GlobalPose, Image, ImagingConfig, LatentState, ModeSet};
use serde::{Deserialize, Serialize};

use crate::basis_io::BasisSet;
use crate::error::{Error, Result};
use crate::pdb;

pub const FORMAT_VERSION: u32 = 1;
/// Orientation convention recorded in `meta.json`.
pub const POSE_CONVENTION: &str =
    "row-major R maps molecule to camera frame; image = projection of R x along z; shift in pixels (x = column, y = row); pixel (row, col) centered at (col, row) = D/2 + projection/pixel_size";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackKind {
    Heterogeneous,
    Morph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub format_version: u32,
    pub kind: StackKind,
    pub n: usize,
    pub image_size: usize,
    pub pixel_size: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// Generator index of the first image (splits of one run share a seed).
    pub first_index: u64,
    pub imaging: ImagingConfig,
    pub pose_convention: String,
    pub has_clean: bool,
    pub has_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthFile {
    /// Heterogeneous: the reference; morph: endpoint A.
    coords: Vec<f64>,
    /// Morph endpoint B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords_b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    morph_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    morph_params: Option<Vec<f64>>,
}

/// What generated the images, to score fits against.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Heterogeneous {
        reference: AtomicStructure,
        bases: BasisSet,
        latents: Vec<LatentState>,
    },
    Morph {
        a: AtomicStructure,
        b: AtomicStructure,
        steps: usize,
        params: Vec<f64>,
    },
}

impl GroundTruth {
    pub fn reference(&self) -> &AtomicStructure {
        match self {
            GroundTruth::Heterogeneous { reference, .. } => reference,
            GroundTruth::Morph { a, .. } => a,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GroundTruth::Heterogeneous { latents, .. } => latents.len(),
            GroundTruth::Morph { params, .. } => params.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat coordinates of the conformation shown in image `i`.
    pub fn coords(&self, i: usize) -> Result<Vec<f64>> {
        match self {
            GroundTruth::Heterogeneous {
                reference,
                bases,
                latents,
            } => {
                let mut out = vec![0.0; 3 * reference.len()];
                let latent = latents.get(i).ok_or(chainfit_core::Error::OutOfRange {
                    index: i,
                    len: latents.len(),
                })?;
                chainfit_core::rigid::compose_coords(reference, &bases.modes, latent, &mut out)?;
                Ok(out)
            }
            GroundTruth::Morph { a, b, params, .. } => {
                let s = *params.get(i).ok_or(chainfit_core::Error::OutOfRange {
                    index: i,
                    len: params.len(),
                })?;
                Ok(morph(a, b, s)?.flat_coords())
            }
        }
    }

    pub fn structure(&self, i: usize) -> Result<AtomicStructure> {
        Ok(self.reference().with_flat_coords(&self.coords(i)?)?)
    }

    pub fn modes(&self) -> Option<&ModeSet> {
        match self {
            GroundTruth::Heterogeneous { bases, .. } => Some(&bases.modes),
            GroundTruth::Morph { .. } => None,
        }
    }

    pub fn morph_params(&self) -> Option<&[f64]> {
        match self {
            GroundTruth::Morph { params, .. } => Some(params),
            GroundTruth::Heterogeneous { .. } => None,
        }
    }
}

/// A stack loaded into memory. Pixels are kept as `f32`, as on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub meta: StackMeta,
    pub images: Vec<f32>,
    pub clean: Option<Vec<f32>>,
    pub poses: Vec<GlobalPose>,
    pub truth: Option<GroundTruth>,
}

fn pixels(meta: &StackMeta) -> usize {
    meta.image_size * meta.image_size
}

fn to_image(size: usize, data: &[f32]) -> Image {
    Image::from_vec(size, data.iter().map(|&v| f64::from(v)).collect()).expect("stack image has D² pixels")
}

impl ImageStack {
    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    pub fn image(&self, i: usize) -> Image {
        let p = pixels(&self.meta);
        to_image(self.meta.image_size, &self.images[i * p..(i + 1) * p])
    }

    pub fn clean_image(&self, i: usize) -> Option<Image> {
        let p = pixels(&self.meta);
        self.clean
            .as_ref()
            .map(|c| to_image(self.meta.image_size, &c[i * p..(i + 1) * p]))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: StackMeta = crate::read_json(&dir.join("meta.json"))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::format(
                dir,
                format!("unsupported stack format version {}", meta.format_version),
            ));
        }
        meta.imaging.validate()?;
        if meta.imaging.image_size != meta.image_size {
            return Err(Error::format(dir, "image size in meta.json is inconsistent"));
        }
        let count = meta.n * pixels(&meta);
        let images = read_f32(&dir.join("images.f32"), count)?;
        let clean = if meta.has_clean {
            Some(read_f32(&dir.join("clean.f32"), count)?)
        } else {
            None
        };
        let poses: Vec<GlobalPose> = crate::read_json(&dir.join("poses.json"))?;
        if poses.len() != meta.n {
            return Err(Error::format(
                &dir.join("poses.json"),
                format!("{} poses for {} images", poses.len(), meta.n),
            ));
        }
        let truth = if meta.has_truth {
            Some(load_truth(dir, &meta)?)
        } else {
            None
        };
        Ok(Self {
            meta,
            images,
            clean,
            poses,
            truth,
        })
    }
}

fn load_truth(dir: &Path, meta: &StackMeta) -> Result<GroundTruth> {
    let file: TruthFile = crate::read_json(&dir.join("truth.json"))?;
    let layout = pdb::read_structure(&dir.join("truth.pdb"))?;
    let reference = layout.with_flat_coords(&file.coords)?;
    let truth = match meta.kind {
        StackKind::Heterogeneous => {
            let bases = BasisSet::load(&dir.join("gt_bases"))?;
            bases.check(&reference)?;
            let latents: Vec<LatentState> = crate::read_json(&dir.join("gt_latents.json"))?;
            GroundTruth::Heterogeneous {
                reference,
                bases,
                latents,
            }
        }
        StackKind::Morph => {
            let missing = || Error::format(&dir.join("truth.json"), "morph stack without endpoint B or parameters");
            let b = layout.with_flat_coords(file.coords_b.as_ref().ok_or_else(missing)?)?;
            GroundTruth::Morph {
                a: reference,
                b,
                steps: file.morph_steps.ok_or_else(missing)?,
                params: file.morph_params.ok_or_else(missing)?,
            }
        }
    };
    if truth.len() != meta.n {
        return Err(Error::format(
            dir,
            format!("ground truth for {} images, stack has {}", truth.len(), meta.n),
        ));
    }
    Ok(truth)
}

fn read_f32(path: &Path, count: usize) -> Result<Vec<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len != 4 * count as u64 {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {len}", 4 * count),
        ));
    }
    let mut bytes = Vec::with_capacity(4 * count);
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Streams a stack to disk image by image.
pub struct StackWriter {
    dir: std::path::PathBuf,
    meta: StackMeta,
    images: BufWriter<File>,
    clean: Option<BufWriter<File>>,
    poses: Vec<GlobalPose>,
    latents: Vec<LatentState>,
    morph_params: Vec<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_pixels(out: &mut BufWriter<File>, image: &Image, path: &Path) -> Result<()> {
    for &v in image.data() {
        out.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

impl StackWriter {
    /// `meta.n` is filled in by [`StackWriter::finish`].
    pub fn create(dir: &Path, meta: StackMeta) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let images = create(&dir.join("images.f32"))?;
        let clean = if meta.has_clean {
            Some(create(&dir.join("clean.f32"))?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            images,
            clean,
            poses: Vec::new(),
            latents: Vec::new(),
            morph_params: Vec::new(),
        })
    }

    pub fn push(&mut self, image: &chainfit_core::datagen::SimulatedImage) -> Result<()> {
        if image.observed.size() != self.meta.image_size {
            return Err(chainfit_core::Error::Dimension {
                context: "stack image size".into(),
                expected: self.meta.image_size,
                actual: image.observed.size(),
            }
            .into());
        }
        write_pixels(&mut self.images, &image.observed, &self.dir.join("images.f32"))?;
        if let Some(clean) = self.clean.as_mut() {
            write_pixels(clean, &image.clean, &self.dir.join("clean.f32"))?;
        }
        self.poses.push(image.pose);
        if let Some(l) = &image.latents {
            self.latents.push(l.clone());
        }
        if let Some(s) = image.morph {
            self.morph_params.push(s);
        }
        Ok(())
    }

    fn flush(writer: BufWriter<File>, path: &Path) -> Result<()> {
        writer
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(path, e))
    }

    /// Writes metadata and ground truth. `truth` must match the stack kind.
    pub fn finish(mut self, truth: Option<TruthSource<'_>>) -> Result<StackMeta> {
        Self::flush(self.images, &self.dir.join("images.f32"))?;
        if let Some(c) = self.clean.take() {
            Self::flush(c, &self.dir.join("clean.f32"))?;
        }
        self.meta.n = self.poses.len();
        self.meta.has_truth = truth.is_some();
        crate::write_json(&self.dir.join("poses.json"), &self.poses)?;
        match truth {
            Some(TruthSource::Heterogeneous { reference, bases }) => {
                if self.latents.len() != self.poses.len() {
                    return Err(Error::Data("every image of a heterogeneous stack needs latents".into()));
                }
                pdb::save_structure(&self.dir.join("truth.pdb"), reference)?;
                bases.save(&self.dir.join("gt_bases"))?;
                crate::write_json(&self.dir.join("gt_latents.json"), &self.latents)?;
                let file = TruthFile {
                    coords: reference.flat_coords(),
                    coords_b: None,
                    morph_steps: None,
                    morph_params: None,
                };
                crate::write_json(&self.dir.join("truth.json"), &file)?;
            }
            Some(TruthSource::Morph { a, b, steps }) => {
                if self.morph_params.len() != self.poses.len() {
                    return Err(Error::Data("every image of a morph stack needs a morph parameter".into()));
                }
                pdb::save_structure(&self.dir.join("truth.pdb"), a)?;
                let file = TruthFile {
                    coords: a.flat_coords(),
                    coords_b: Some(b.flat_coords()),
                    morph_steps: Some(steps),
                    morph_params: Some(self.morph_params.clone()),
                };
                crate::write_json(&self.dir.join("truth.json"), &file)?;
            }
            None => {}
        }
        crate::write_json(&self.dir.join("meta.json"), &self.meta)?;
        Ok(self.meta)
    }
}

pub enum TruthSource<'a> {
    Heterogeneous {
        reference: &'a AtomicStructure,
        bases: &'a BasisSet,
    },
    Morph {
        a: &'a AtomicStructure,
        b: &'a AtomicStructure,
        steps: usize,
    },
}
