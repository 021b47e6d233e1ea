//! Per-image latent fitting through the full decoder.
//!
//! The fitter minimizes the pixel MSE between an observed image and the
//! rendering of `compose(latents)` under the image's known global pose,
//! using Adam on the enabled latent blocks. Gradients are analytic all the
//! way through: renderer → chain transform → Gram-Schmidt → mode weights.
//!
//! Mode weights are optimized in units of `α / sqrt(n)` (n = atoms in the
//! segment) so one unit moves the segment by about 1 Å RMSD, which keeps
//! a single step size meaningful for every block.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use rand::Rng;

use crate::datagen::image_rng;
use crate::error::{dimension, Error, Result};
use crate::render::{backproject, render_coords_into, Image, ImagingConfig};
use crate::rigid::{
    axis_angle, compose_coords, from_arr, gram_schmidt_backward, gram_schmidt_rotation, GlobalPose, LatentState,
    ModeSet,
};
use crate::structure::AtomicStructure;
use crate::{Mat3, Vec3};

/// Latent blocks enabled during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FitMode {
    /// Whole-structure normal modes only.
    #[cfg_attr(feature = "serde", serde(rename = "N_whole"))]
    WholeNma,
    /// Per-chain normal modes only.
    #[cfg_attr(feature = "serde", serde(rename = "cN"))]
    ChainNma,
    /// Per-chain rotations only.
    #[cfg_attr(feature = "serde", serde(rename = "cR"))]
    ChainRotation,
    /// Per-chain rotations and translations.
    #[cfg_attr(feature = "serde", serde(rename = "cRT"))]
    ChainRigid,
    /// Per-chain normal modes, rotations and translations.
    #[cfg_attr(feature = "serde", serde(rename = "full"))]
    Full,
}

impl FitMode {
    pub const ALL: [FitMode; 5] = [
        FitMode::WholeNma,
        FitMode::ChainNma,
        FitMode::ChainRotation,
        FitMode::ChainRigid,
        FitMode::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FitMode::WholeNma => "N_whole",
            FitMode::ChainNma => "cN",
            FitMode::ChainRotation => "cR",
            FitMode::ChainRigid => "cRT",
            FitMode::Full => "full",
        }
    }

    pub fn uses_modes(&self) -> bool {
        matches!(self, FitMode::WholeNma | FitMode::ChainNma | FitMode::Full)
    }

    pub fn uses_whole_modes(&self) -> bool {
        matches!(self, FitMode::WholeNma)
    }

    pub fn uses_rotation(&self) -> bool {
        matches!(self, FitMode::ChainRotation | FitMode::ChainRigid | FitMode::Full)
    }

    pub fn uses_translation(&self) -> bool {
        matches!(self, FitMode::ChainRigid | FitMode::Full)
    }
}

impl fmt::Display for FitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FitMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown fit mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FitConfig {
    pub mode: FitMode,
    /// Modes per chain, or total for whole-structure modes.
    pub num_modes: usize,
    pub step_size: f64,
    pub iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    pub restarts: usize,
    /// Largest initial rotation perturbation used by restarts (degrees).
    pub restart_angle_deg: f64,
    /// Reject steps that increase the loss and halve the step size instead.
    pub monotone: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mode: FitMode::Full,
            num_modes: 15,
            step_size: 0.01,
            iterations: 500,
            grad_tol: 1e-6,
            restarts: 1,
            restart_angle_deg: 10.0,
            monotone: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step size must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.mode.uses_modes() && self.num_modes == 0 {
            return Err(Error::InvalidConfig("mode-based fits need at least one mode".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.restart_angle_deg >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reference structure plus the normal modes the decoder deforms it with.
#[derive(Debug, Clone)]
pub struct ChainModel {
    reference: AtomicStructure,
    modes: ModeSet,
    segments: Vec<Range<usize>>,
    pivots: Vec<Vec3>,
}

impl ChainModel {
    pub fn new(reference: AtomicStructure, modes: ModeSet) -> Result<Self> {
        modes.check(&reference)?;
        let segments = modes.segments(&reference);
        let pivots = reference.chain_centers();
        Ok(Self {
            reference,
            modes,
            segments,
            pivots,
        })
    }

    pub fn reference(&self) -> &AtomicStructure {
        &self.reference
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn identity_latents(&self, pose: GlobalPose) -> LatentState {
        LatentState::identity(&self.reference, &self.modes, pose)
    }

    pub fn compose(&self, latents: &LatentState) -> Result<AtomicStructure> {
        crate::rigid::compose_structure(&self.reference, &self.modes, latents)
    }

    pub fn compose_coords(&self, latents: &LatentState, out: &mut [f64]) -> Result<()> {
        compose_coords(&self.reference, &self.modes, latents, out)
    }

    /// Checks that the model can realize `config`.
    pub fn check_config(&self, config: &FitConfig) -> Result<()> {
        config.validate()?;
        if !config.mode.uses_modes() {
            return Ok(());
        }
        if config.mode.uses_whole_modes() != self.modes.is_whole() {
            return Err(Error::InvalidConfig(alloc::format!(
                "mode `{}` needs {} normal modes",
                config.mode,
                if config.mode.uses_whole_modes() { "whole-structure" } else { "per-chain" }
            )));
        }
        for b in self.modes.bases() {
            if b.num_modes() != config.num_modes {
                return Err(dimension("normal modes per segment", config.num_modes, b.num_modes()));
            }
        }
        Ok(())
    }
}

/// Result of fitting one image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitOutcome {
    pub latents: LatentState,
    pub mse: f64,
    /// Loss after every accepted step, starting with the initial loss.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    /// Index of the restart that produced this result.
    pub restart: usize,
}

/// Scratch buffers for one decoder evaluation.
struct Workspace {
    deformed: Vec<f64>,
    coords: Vec<f64>,
    image: Image,
    upstream: Image,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
    projected: Vec<f64>,
    rotations: Vec<Mat3>,
}

/// Parameter-vector view of the enabled latent blocks.
struct Problem<'a> {
    model: &'a ChainModel,
    imaging: &'a ImagingConfig,
    pose: GlobalPose,
    observed: &'a Image,
    mode: FitMode,
    alpha_scale: Vec<f64>,
    num_params: usize,
}

impl<'a> Problem<'a> {
    fn new(model: &'a ChainModel, imaging: &'a ImagingConfig, pose: GlobalPose, observed: &'a Image, mode: FitMode) -> Self {
        let alpha_scale: Vec<f64> = model.segments.iter().map(|s| libm::sqrt(s.len() as f64)).collect();
        let mut num_params = 0;
        if mode.uses_modes() {
            num_params += model.modes.bases().iter().map(|b| b.num_modes()).sum::<usize>();
        }
        let per_chain = if mode.uses_rotation() { 6 } else { 0 } + if mode.uses_translation() { 3 } else { 0 };
        num_params += per_chain * model.reference.num_chains();
        Self {
            model,
            imaging,
            pose,
            observed,
            mode,
            alpha_scale,
            num_params,
        }
    }

    fn workspace(&self) -> Workspace {
        let n3 = 3 * self.model.reference.len();
        Workspace {
            deformed: vec![0.0; n3],
            coords: vec![0.0; n3],
            image: Image::zeros(self.imaging.image_size),
            upstream: Image::zeros(self.imaging.image_size),
            grad_x: vec![0.0; n3],
            grad_y: vec![0.0; n3],
            projected: Vec::new(),
            rotations: vec![Mat3::identity(); self.model.reference.num_chains()],
        }
    }

    fn initial_params(&self, latents: &LatentState) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params);
        if self.mode.uses_modes() {
            for (alpha, scale) in latents.alphas.iter().zip(&self.alpha_scale) {
                p.extend(alpha.iter().map(|a| a / scale));
            }
        }
        for t in &latents.chains {
            if self.mode.uses_rotation() {
                p.extend_from_slice(&t.v1);
                p.extend_from_slice(&t.v2);
            }
            if self.mode.uses_translation() {
                p.extend_from_slice(&t.translation);
            }
        }
        p
    }

    fn write_latents(&self, params: &[f64], latents: &mut LatentState) {
        let mut i = 0;
        if self.mode.uses_modes() {
            for (alpha, scale) in latents.alphas.iter_mut().zip(&self.alpha_scale) {
                for a in alpha.iter_mut() {
                    *a = params[i] * scale;
                    i += 1;
                }
            }
        }
        for t in latents.chains.iter_mut() {
            if self.mode.uses_rotation() {
                t.v1.copy_from_slice(&params[i..i + 3]);
                t.v2.copy_from_slice(&params[i + 3..i + 6]);
                i += 6;
            }
            if self.mode.uses_translation() {
                t.translation.copy_from_slice(&params[i..i + 3]);
                i += 3;
            }
        }
    }

    /// Forward pass; leaves intermediate buffers in `ws`.
    fn loss(&self, latents: &LatentState, ws: &mut Workspace) -> Result<f64> {
        let model = self.model;
        for ((seg, basis), alpha) in model.segments.iter().zip(model.modes.bases()).zip(&latents.alphas) {
            basis.deform_into(alpha, &mut ws.deformed[3 * seg.start..3 * seg.end])?;
        }
        ws.coords.copy_from_slice(&ws.deformed);
        for (c, (chain, t)) in model.reference.chains().iter().zip(&latents.chains).enumerate() {
            let r = gram_schmidt_rotation(&from_arr(&t.v1), &from_arr(&t.v2))?;
            ws.rotations[c] = r;
            crate::rigid::apply_rigid(&mut ws.coords[chain.coord_range()], &r, &t.translation(), &model.pivots[c])?;
        }
        render_coords_into(&ws.coords, &self.pose, self.imaging, &mut ws.image);
        Ok(ws.image.mse(self.observed))
    }

    /// Gradient at the point of the last `loss` call.
    fn gradient(&self, latents: &LatentState, ws: &mut Workspace, grad: &mut [f64]) -> Result<()> {
        let model = self.model;
        let scale = 2.0 / ws.image.data().len() as f64;
        for ((u, a), b) in ws
            .upstream
            .data_mut()
            .iter_mut()
            .zip(ws.image.data())
            .zip(self.observed.data())
        {
            *u = scale * (a - b);
        }
        ws.grad_x.iter_mut().for_each(|g| *g = 0.0);
        backproject(&ws.coords, &self.pose, self.imaging, &ws.upstream, &mut ws.grad_x);

        let mut chain_grads: Vec<(Mat3, Vec3)> = Vec::with_capacity(model.pivots.len());
        for (c, chain) in model.reference.chains().iter().enumerate() {
            let r = ws.rotations[c];
            let pivot = model.pivots[c];
            let mut gm = Mat3::zeros();
            let mut gt = Vec3::zeros();
            for j in chain.range.clone() {
                let g = Vec3::new(ws.grad_x[3 * j], ws.grad_x[3 * j + 1], ws.grad_x[3 * j + 2]);
                let y = Vec3::new(ws.deformed[3 * j], ws.deformed[3 * j + 1], ws.deformed[3 * j + 2]) - pivot;
                gt += g;
                gm += g * y.transpose();
                let gy = r.transpose() * g;
                ws.grad_y[3 * j..3 * j + 3].copy_from_slice(gy.as_slice());
            }
            chain_grads.push((gm, gt));
        }

        let mut i = 0;
        if self.mode.uses_modes() {
            for ((seg, basis), scale) in model.segments.iter().zip(model.modes.bases()).zip(&self.alpha_scale) {
                let k = basis.num_modes();
                ws.projected.resize(k, 0.0);
                basis.project(&ws.grad_y[3 * seg.start..3 * seg.end], &mut ws.projected);
                for (g, p) in grad[i..i + k].iter_mut().zip(&ws.projected) {
                    *g = p * scale;
                }
                i += k;
            }
        }
        for (t, (gm, gt)) in latents.chains.iter().zip(&chain_grads) {
            if self.mode.uses_rotation() {
                let (g1, g2) = gram_schmidt_backward(&from_arr(&t.v1), &from_arr(&t.v2), gm)?;
                grad[i..i + 3].copy_from_slice(g1.as_slice());
                grad[i + 3..i + 6].copy_from_slice(g2.as_slice());
                i += 6;
            }
            if self.mode.uses_translation() {
                grad[i..i + 3].copy_from_slice(gt.as_slice());
                i += 3;
            }
        }
        Ok(())
    }
}

/// Loss and gradient over the enabled latent coordinates, in fitter units.
/// Exposed for gradient checking.
pub fn loss_and_gradient(
    model: &ChainModel,
    imaging: &ImagingConfig,
    observed: &Image,
    mode: FitMode,
    latents: &LatentState,
) -> Result<(f64, Vec<f64>)> {
    let problem = Problem::new(model, imaging, latents.pose, observed, mode);
    let mut ws = problem.workspace();
    let loss = problem.loss(latents, &mut ws)?;
    let mut grad = vec![0.0; problem.num_params];
    problem.gradient(latents, &mut ws, &mut grad)?;
    Ok((loss, grad))
}

/// Latent parameters enabled by `mode`, in fitter units.
pub fn latent_params(model: &ChainModel, mode: FitMode, latents: &LatentState) -> Vec<f64> {
    let dummy = Image::zeros(0);
    let imaging = ImagingConfig::default();
    Problem::new(model, &imaging, latents.pose, &dummy, mode).initial_params(latents)
}

/// Writes fitter-unit parameters back into `latents`.
pub fn set_latent_params(model: &ChainModel, mode: FitMode, params: &[f64], latents: &mut LatentState) -> Result<()> {
    let dummy = Image::zeros(0);
    let imaging = ImagingConfig::default();
    let problem = Problem::new(model, &imaging, latents.pose, &dummy, mode);
    if params.len() != problem.num_params {
        return Err(dimension("latent parameters", problem.num_params, params.len()));
    }
    problem.write_latents(params, latents);
    Ok(())
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn run_once(problem: &Problem<'_>, start: LatentState, config: &FitConfig, restart: usize) -> Result<FitOutcome> {
    let mut ws = problem.workspace();
    let mut latents = start;
    let mut params = problem.initial_params(&latents);
    let n = params.len();
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut candidate = latents.clone();
    let mut cand_params = params.clone();

    let mut loss = problem.loss(&latents, &mut ws)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { iteration: 0, step_size: config.step_size });
    }
    let mut trace = vec![loss];
    let mut best = (loss, latents.clone());
    if n == 0 {
        return Ok(FitOutcome { latents, mse: loss, loss_trace: trace, iterations: 0, restart });
    }
    problem.gradient(&latents, &mut ws, &mut grad)?;

    let mut step = config.step_size;
    let mut t = 0i32;
    let mut iterations = 0;
    while iterations < config.iterations {
        let gnorm = libm::sqrt(grad.iter().map(|g| g * g).sum());
        if gnorm < config.grad_tol {
            break;
        }
        iterations += 1;
        t += 1;
        for i in 0..n {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
        }
        let c1 = 1.0 - libm::pow(BETA1, t as f64);
        let c2 = 1.0 - libm::pow(BETA2, t as f64);
        for i in 0..n {
            cand_params[i] = params[i] - step * (m[i] / c1) / (libm::sqrt(v[i] / c2) + ADAM_EPS);
        }
        problem.write_latents(&cand_params, &mut candidate);
        let cand_loss = match problem.loss(&candidate, &mut ws) {
            Ok(l) => l,
            // a collapsed Gram-Schmidt frame counts as a failed step
            Err(Error::DegenerateRotation(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if cand_loss.is_nan() || (!config.monotone && !cand_loss.is_finite()) {
            return Err(Error::Divergence { iteration: iterations, step_size: step });
        }
        if config.monotone && cand_loss > loss {
            step *= 0.5;
            if step < config.step_size * 1e-9 {
                break;
            }
            continue;
        }
        core::mem::swap(&mut params, &mut cand_params);
        core::mem::swap(&mut latents, &mut candidate);
        loss = cand_loss;
        trace.push(loss);
        if loss < best.0 {
            best = (loss, latents.clone());
        }
        problem.gradient(&latents, &mut ws, &mut grad)?;
    }
    Ok(FitOutcome {
        latents: best.1,
        mse: best.0,
        loss_trace: trace,
        iterations,
        restart,
    })
}

/// Fits one image with known global pose; `index` keys the restart RNG.
pub fn fit_image(
    image: &Image,
    pose: &GlobalPose,
    model: &ChainModel,
    imaging: &ImagingConfig,
    config: &FitConfig,
    index: u64,
) -> Result<FitOutcome> {
    model.check_config(config)?;
    imaging.validate()?;
    if image.size() != imaging.image_size {
        return Err(dimension("image size", imaging.image_size, image.size()));
    }
    let problem = Problem::new(model, imaging, *pose, image, config.mode);
    let mut rng = image_rng(config.seed, index);
    let mut best: Option<FitOutcome> = None;
    for restart in 0..config.restarts {
        let mut start = model.identity_latents(*pose);
        if restart > 0 && config.mode.uses_rotation() {
            let max = config.restart_angle_deg.to_radians();
            for t in start.chains.iter_mut() {
                let axis = loop {
                    let a = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let n = a.norm();
                    if n > 0.1 && n <= 1.0 {
                        break a;
                    }
                };
                let q = axis_angle(&axis, rng.random_range(0.0..=max));
                t.v1 = crate::rigid::to_arr(&(q * Vec3::x()));
                t.v2 = crate::rigid::to_arr(&(q * Vec3::y()));
            }
        }
        let outcome = run_once(&problem, start, config, restart)?;
        if best.as_ref().is_none_or(|b| outcome.mse < b.mse) {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one restart"))
}
