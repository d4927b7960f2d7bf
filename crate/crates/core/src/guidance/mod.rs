//! Score-distillation guidance from text-conditioned (2D) and
//! image-and-pose-conditioned (3D) noise predictors.

pub mod mock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::CaseInput;
use crate::raster::Raster;
use crate::scene::camera::{Mat3, Vec3};
use crate::scene::{CameraPose, RenderedView};

/// Cumulative signal coefficients `ᾱ_t` for diffusion steps `t = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::invalid("noise schedule is empty"));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::invalid("noise schedule values must lie in (0, 1)"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("noise schedule must be strictly decreasing"));
        }
        Ok(Self { alpha_bar })
    }

    /// DDPM linear-β schedule.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("noise schedule needs at least two steps"));
        }
        let mut acc = 1.0;
        let alpha_bar = (0..steps)
            .map(|i| {
                let beta = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
                acc *= 1.0 - beta;
                acc
            })
            .collect();
        Self::new(alpha_bar)
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.alpha_bar.len() {
            return Err(Error::invalid(format!(
                "diffusion step {t} outside [1, {}]",
                self.alpha_bar.len()
            )));
        }
        Ok(self.alpha_bar[t - 1])
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("static schedule is valid")
    }
}

/// The camera and background a guided view was rendered with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewContext {
    pub pose: CameraPose,
    pub background: [f64; 3],
}

impl ViewContext {
    pub fn of(view: &RenderedView) -> Self {
        Self {
            pose: view.pose,
            background: view.background,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditioningKind {
    Text,
    ImagePose,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Conditioning {
    /// Text prompt, plus the view for view-dependent prompting.
    Text { prompt: String, view: ViewContext },
    /// Reference image and the novel view's pose relative to the reference.
    ImagePose {
        reference_image: Raster,
        reference_pose: CameraPose,
        view: ViewContext,
    },
}

impl Conditioning {
    pub fn kind(&self) -> ConditioningKind {
        match self {
            Conditioning::Text { .. } => ConditioningKind::Text,
            Conditioning::ImagePose { .. } => ConditioningKind::ImagePose,
        }
    }

    pub fn view(&self) -> &ViewContext {
        match self {
            Conditioning::Text { view, .. } | Conditioning::ImagePose { view, .. } => view,
        }
    }

    /// `(R, T)` of the guided view in the reference camera's frame.
    pub fn relative_extrinsics(&self) -> Option<(Mat3, Vec3)> {
        match self {
            Conditioning::ImagePose {
                reference_pose, view, ..
            } => Some(view.pose.relative_to(reference_pose)),
            Conditioning::Text { .. } => None,
        }
    }
}

pub struct NoiseQuery<'a> {
    pub noisy_latent: &'a Raster,
    pub t_diff: usize,
    pub condition: &'a Conditioning,
    /// The noise mixed into `noisy_latent`. Visible to in-process predictors
    /// (test doubles); the IPC adapter never transmits it.
    pub injected_noise: &'a Raster,
}

/// A frozen noise predictor `ε̂(z_t; condition, t)`.
pub trait NoisePredictor: Send + Sync {
    fn name(&self) -> &str;

    fn accepts(&self, kind: ConditioningKind) -> bool;

    fn schedule(&self) -> &NoiseSchedule;

    /// Predicted noise with the shape of `query.noisy_latent`.
    fn predict_noise(&self, query: &NoiseQuery<'_>) -> Result<Raster>;

    /// Image → latent. Identity unless the backend owns an encoder.
    fn encode(&self, rgb: &Raster) -> Result<Raster> {
        Ok(rgb.clone())
    }

    /// Pulls a latent-space gradient back to image space through the encoder
    /// Jacobian at `rgb`.
    fn pull_back(&self, _rgb: &Raster, latent_grad: Raster) -> Result<Raster> {
        Ok(latent_grad)
    }

    fn is_oracle(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// `w(t) = 1`.
    #[default]
    Unit,
    /// `w(t) = 1 − ᾱ_t`.
    OneMinusAlphaBar,
}

impl Weighting {
    pub fn weight(self, schedule: &NoiseSchedule, t: usize) -> Result<f64> {
        Ok(match self {
            Weighting::Unit => 1.0,
            Weighting::OneMinusAlphaBar => 1.0 - schedule.alpha_bar(t)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceSource {
    TwoD,
    ThreeD,
    Oracle,
}

/// Image-space score-distillation gradient `ε̂ − ε` and its step weight.
/// The gradient applied to the view is `weight · grad`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceGradient {
    pub grad: Raster,
    pub weight: f64,
    pub t_diff: usize,
    pub source: GuidanceSource,
}

impl GuidanceGradient {
    pub fn weighted(&self) -> Raster {
        self.grad.scale(self.weight)
    }
}

/// Uniform integer diffusion steps in `[⌈lo·T⌉, ⌊hi·T⌋]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionStepSampler {
    pub t_min_frac: f64,
    pub t_max_frac: f64,
}

impl Default for DiffusionStepSampler {
    fn default() -> Self {
        Self {
            t_min_frac: 0.02,
            t_max_frac: 0.98,
        }
    }
}

impl DiffusionStepSampler {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_min_frac > 0.0 && self.t_max_frac < 1.0 && self.t_min_frac < self.t_max_frac;
        if !ok {
            return Err(Error::invalid(format!(
                "diffusion step fractions must satisfy 0 < min < max < 1, got {} / {}",
                self.t_min_frac, self.t_max_frac
            )));
        }
        Ok(())
    }

    pub fn range(&self, steps: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let lo = ((self.t_min_frac * steps as f64).ceil() as usize).max(1);
        let hi = (self.t_max_frac * steps as f64).floor() as usize;
        if lo > hi {
            return Err(Error::invalid(format!("empty diffusion step range for T = {steps}")));
        }
        Ok((lo, hi))
    }

    pub fn sample<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> Result<usize> {
        let (lo, hi) = self.range(steps)?;
        Ok(rng.random_range(lo..=hi))
    }
}

/// Text-conditioned score distillation on `view.rgb`.
pub fn sds_grad_2d(
    view: &RenderedView,
    prompt: &str,
    backend: &dyn NoisePredictor,
    t_diff: usize,
    noise: &Raster,
    weighting: Weighting,
) -> Result<GuidanceGradient> {
    let condition = Conditioning::Text {
        prompt: prompt.to_owned(),
        view: ViewContext::of(view),
    };
    sds_grad(view, &condition, backend, t_diff, noise, weighting, GuidanceSource::TwoD)
}

/// Reference-image-and-pose-conditioned score distillation on `view.rgb`.
pub fn sds_grad_3d(
    view: &RenderedView,
    reference: &CaseInput,
    backend: &dyn NoisePredictor,
    t_diff: usize,
    noise: &Raster,
    weighting: Weighting,
) -> Result<GuidanceGradient> {
    let condition = Conditioning::ImagePose {
        reference_image: reference.image.clone(),
        reference_pose: reference.reference_pose,
        view: ViewContext::of(view),
    };
    sds_grad(view, &condition, backend, t_diff, noise, weighting, GuidanceSource::ThreeD)
}

fn sds_grad(
    view: &RenderedView,
    condition: &Conditioning,
    backend: &dyn NoisePredictor,
    t_diff: usize,
    noise: &Raster,
    weighting: Weighting,
    source: GuidanceSource,
) -> Result<GuidanceGradient> {
    if !backend.accepts(condition.kind()) {
        return Err(Error::backend(format!(
            "backend {} does not accept {:?} conditioning",
            backend.name(),
            condition.kind()
        )));
    }
    let schedule = backend.schedule();
    let alpha_bar = schedule.alpha_bar(t_diff)?;
    let latent = backend.encode(&view.rgb)?;
    latent.ensure_same_shape(noise, "sds noise")?;

    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let noisy = latent.zip_map(noise, |z, e| a * z + b * e)?;
    let predicted = backend.predict_noise(&NoiseQuery {
        noisy_latent: &noisy,
        t_diff,
        condition,
        injected_noise: noise,
    })?;
    if !predicted.same_shape(&noisy) {
        return Err(Error::backend(format!(
            "backend {} returned shape {:?} for latent {:?}",
            backend.name(),
            predicted.shape(),
            noisy.shape()
        )));
    }
    if !predicted.is_finite() {
        return Err(Error::numeric(format!("backend {} predicted non-finite noise", backend.name())));
    }
    let residual = predicted.zip_map(noise, |p, e| p - e)?;
    let grad = backend.pull_back(&view.rgb, residual)?;
    if !grad.is_finite() {
        return Err(Error::numeric("score-distillation gradient is not finite"));
    }
    Ok(GuidanceGradient {
        grad,
        weight: weighting.weight(schedule, t_diff)?,
        t_diff,
        source: if backend.is_oracle() { GuidanceSource::Oracle } else { source },
    })
}
