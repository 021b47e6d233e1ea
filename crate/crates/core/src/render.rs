//! Image formation: Gaussian atom density, global rotation, projection along
//! the beam axis, optional Gaussian PSF, in-plane shift, additive noise.
//!
//! An isotropic 3D Gaussian projects to a 2D Gaussian of the same width, so
//! each atom contributes `exp(-|p - u|² / 2s²)` around its projected
//! center `u = (R x)_xy / pixel_size + c + t` with `c = (D/2, D/2)`.
//! Pixels are indexed `data[row * D + col]`, column along x and row along y.
//! Contributions are evaluated on a separable window of
//! [`WINDOW_SIGMAS`] standard deviations around each center.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dimension, Error, Result};
use crate::rigid::GlobalPose;
use crate::structure::AtomicStructure;
use crate::Vec3;

/// Half-width of the evaluation window, in blob standard deviations.
pub const WINDOW_SIGMAS: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImagingConfig {
    pub image_size: usize,
    /// Å per pixel.
    pub pixel_size: f64,
    /// Atom blob standard deviation in Å.
    pub blob_sigma: f64,
    /// Gaussian PSF standard deviation in pixels.
    pub psf_sigma: Option<f64>,
    pub snr_db: Option<f64>,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            pixel_size: 1.0,
            blob_sigma: 1.5,
            psf_sigma: None,
            snr_db: None,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::InvalidConfig("image size must be at least 16".into()));
        }
        if !(self.pixel_size > 0.0) {
            return Err(Error::InvalidConfig("pixel size must be positive".into()));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::InvalidConfig("blob sigma must be positive".into()));
        }
        if let Some(p) = self.psf_sigma {
            if !(p > 0.0) {
                return Err(Error::InvalidConfig("PSF sigma must be positive".into()));
            }
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::InvalidConfig("SNR must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        (self.image_size / 2) as f64
    }

    fn sigma_px(&self) -> f64 {
        self.blob_sigma / self.pixel_size
    }
}

/// Square single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_vec(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(dimension("image pixels", size * size, data.len()));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Mean squared pixel value.
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.size, best % self.size)
    }

    pub fn mse(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// `‖self − other‖ / ‖other‖`.
    pub fn relative_l2(&self, other: &Image) -> f64 {
        let num: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = other.data.iter().map(|b| b * b).sum();
        libm::sqrt(num / den)
    }
}

/// Projected pixel-space center of every atom.
fn project_centers(coords: &[f64], pose: &GlobalPose, config: &ImagingConfig) -> Vec<[f64; 2]> {
    let r = pose.matrix();
    let c = config.center();
    let inv = 1.0 / config.pixel_size;
    coords
        .chunks_exact(3)
        .map(|x| {
            let x = Vec3::new(x[0], x[1], x[2]);
            let rx = r.row(0).dot(&x.transpose());
            let ry = r.row(1).dot(&x.transpose());
            [rx * inv + c + pose.shift[0], ry * inv + c + pose.shift[1]]
        })
        .collect()
}

/// Pixel index range `[lo, hi)` within `radius` of `center`, clipped.
fn window(center: f64, radius: f64, size: usize) -> (usize, usize) {
    let lo = libm::ceil(center - radius).max(0.0);
    let hi = (libm::floor(center + radius) + 1.0).min(size as f64);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

fn gaussian_profile(center: f64, lo: usize, hi: usize, inv_two_s2: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend((lo..hi).map(|p| {
        let d = p as f64 - center;
        libm::exp(-d * d * inv_two_s2)
    }));
}

/// Renders flat coordinates into `image` (overwritten). Returns the number
/// of atoms whose projected center falls outside the field of view.
pub fn render_coords_into(
    coords: &[f64],
    pose: &GlobalPose,
    config: &ImagingConfig,
    image: &mut Image,
) -> usize {
    let d = config.image_size;
    if image.size != d {
        *image = Image::zeros(d);
    } else {
        image.fill(0.0);
    }
    let s = config.sigma_px();
    let radius = WINDOW_SIGMAS * s;
    let inv_two_s2 = 1.0 / (2.0 * s * s);
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    let mut outside = 0;
    let limit = -0.5..(d as f64 - 0.5);
    for u in project_centers(coords, pose, config) {
        if !limit.contains(&u[0]) || !limit.contains(&u[1]) {
            outside += 1;
        }
        let (c0, c1) = window(u[0], radius, d);
        let (r0, r1) = window(u[1], radius, d);
        if c0 == c1 || r0 == r1 {
            continue;
        }
        gaussian_profile(u[0], c0, c1, inv_two_s2, &mut gx);
        gaussian_profile(u[1], r0, r1, inv_two_s2, &mut gy);
        for (row, wy) in (r0..r1).zip(&gy) {
            let line = &mut image.data[row * d + c0..row * d + c1];
            for (px, wx) in line.iter_mut().zip(&gx) {
                *px += wy * wx;
            }
        }
    }
    if let Some(psf) = config.psf_sigma {
        *image = gaussian_blur(image, psf);
    }
    outside
}

/// Clean image plus the count of atoms projected outside the field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub out_of_view: usize,
}

pub fn render_clean(structure: &AtomicStructure, pose: &GlobalPose, config: &ImagingConfig) -> Result<Rendered> {
    config.validate()?;
    if !pose.is_rotation(1e-8) {
        return Err(Error::InvalidConfig("pose rotation is not in SO(3)".into()));
    }
    let mut image = Image::zeros(config.image_size);
    let out_of_view = render_coords_into(&structure.flat_coords(), pose, config, &mut image);
    Ok(Rendered { image, out_of_view })
}

/// Vector-Jacobian product of the renderer: accumulates
/// `Σ_p upstream(p) ∂I(p)/∂x_j` into `grad` (flat, length 3N).
pub fn backproject(
    coords: &[f64],
    pose: &GlobalPose,
    config: &ImagingConfig,
    upstream: &Image,
    grad: &mut [f64],
) {
    let d = config.image_size;
    let blurred;
    let w = match config.psf_sigma {
        // symmetric kernel with zero padding: the blur is its own adjoint
        Some(psf) => {
            blurred = gaussian_blur(upstream, psf);
            &blurred
        }
        None => upstream,
    };
    let r = pose.matrix();
    let s = config.sigma_px();
    let radius = WINDOW_SIGMAS * s;
    let inv_s2 = 1.0 / (s * s);
    let inv_two_s2 = 0.5 * inv_s2;
    let inv_px = 1.0 / config.pixel_size;
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    for (j, u) in project_centers(coords, pose, config).into_iter().enumerate() {
        let (c0, c1) = window(u[0], radius, d);
        let (r0, r1) = window(u[1], radius, d);
        if c0 == c1 || r0 == r1 {
            continue;
        }
        gaussian_profile(u[0], c0, c1, inv_two_s2, &mut gx);
        gaussian_profile(u[1], r0, r1, inv_two_s2, &mut gy);
        let mut du_x = 0.0;
        let mut du_y = 0.0;
        for (row, wy) in (r0..r1).zip(&gy) {
            let line = &w.data[row * d + c0..row * d + c1];
            let mut plain = 0.0;
            let mut moment = 0.0;
            for ((col, px), wx) in (c0..c1).zip(line).zip(&gx) {
                let v = px * wx;
                plain += v;
                moment += v * (col as f64 - u[0]);
            }
            du_x += wy * moment;
            du_y += wy * plain * (row as f64 - u[1]);
        }
        du_x *= inv_s2 * inv_px;
        du_y *= inv_s2 * inv_px;
        for a in 0..3 {
            grad[3 * j + a] += r[(0, a)] * du_x + r[(1, a)] * du_y;
        }
    }
}

/// Gradient of the pixel MSE w.r.t. every atom, given `residual = I − I_obs`.
pub fn render_gradients(
    structure: &AtomicStructure,
    pose: &GlobalPose,
    config: &ImagingConfig,
    residual: &Image,
) -> Result<Vec<Vec3>> {
    config.validate()?;
    if residual.size != config.image_size {
        return Err(dimension("residual image size", config.image_size, residual.size));
    }
    let scale = 2.0 / (residual.data.len() as f64);
    let upstream = Image {
        size: residual.size,
        data: residual.data.iter().map(|r| r * scale).collect(),
    };
    let coords = structure.flat_coords();
    let mut grad = vec![0.0; coords.len()];
    backproject(&coords, pose, config, &upstream, &mut grad);
    Ok(grad.chunks_exact(3).map(|g| Vec3::new(g[0], g[1], g[2])).collect())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(4.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable, zero-padded, unit-gain Gaussian blur (`sigma` in pixels).
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let d = image.size;
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; d * d];
    for row in 0..d {
        for col in 0..d {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let c = col as isize + i as isize - r;
                if c >= 0 && (c as usize) < d {
                    acc += kv * image.data[row * d + c as usize];
                }
            }
            tmp[row * d + col] = acc;
        }
    }
    let mut out = vec![0.0; d * d];
    for row in 0..d {
        for col in 0..d {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let rr = row as isize + i as isize - r;
                if rr >= 0 && (rr as usize) < d {
                    acc += kv * tmp[rr as usize * d + col];
                }
            }
            out[row * d + col] = acc;
        }
    }
    Image { size: d, data: out }
}

/// Noise variance giving the requested SNR relative to mean squared signal.
pub fn noise_variance(image: &Image, snr_db: f64) -> Result<f64> {
    let power = image.power();
    if !(power > 0.0) {
        return Err(Error::UndefinedSnr);
    }
    Ok(power / libm::pow(10.0, snr_db / 10.0))
}

/// Adds i.i.d. zero-mean Gaussian noise calibrated to `snr_db`.
pub fn add_noise<R: Rng + ?Sized>(image: &Image, snr_db: f64, rng: &mut R) -> Result<Image> {
    let sigma = libm::sqrt(noise_variance(image, snr_db)?);
    let data = image
        .data
        .iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect();
    Ok(Image { size: image.size, data })
}

/// `10 log10(P_signal / P_noise)` measured from a clean/noisy pair.
pub fn empirical_snr_db(clean: &Image, noisy: &Image) -> f64 {
    let noise = noisy.mse(clean);
    10.0 * libm::log10(clean.power() / noise)
}
