//! Deterministic in-process noise predictors.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{ConditioningKind, NoisePredictor, NoiseQuery, NoiseSchedule};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scene::{render, RenderOptions, SceneModel};

/// Predicts exactly the injected noise, so every SDS gradient is zero.
#[derive(Clone, Debug, Default)]
pub struct EchoPredictor {
    schedule: NoiseSchedule,
}

impl EchoPredictor {
    pub fn new() -> Self {
        Self::default()
    }
}

impl NoisePredictor for EchoPredictor {
    fn name(&self) -> &str {
        "echo"
    }

    fn accepts(&self, _kind: ConditioningKind) -> bool {
        true
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn predict_noise(&self, query: &NoiseQuery<'_>) -> Result<Raster> {
        Ok(query.injected_noise.clone())
    }
}

/// Pose-aware test double that knows a hidden target scene. It predicts
/// `ε + κ·(z − z_target(pose))`, where `z_target` is the target rendered from
/// the queried view with the same background, so the SDS gradient is the
/// image-space residual against the target.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    target: SceneModel,
    kappa: f64,
    samples: usize,
    schedule: NoiseSchedule,
}

pub fn make_oracle_backend(target: SceneModel) -> OraclePredictor {
    OraclePredictor {
        target,
        kappa: 1.0,
        samples: crate::scene::render::DEFAULT_SAMPLES,
        schedule: NoiseSchedule::default(),
    }
}

impl OraclePredictor {
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn target(&self) -> &SceneModel {
        &self.target
    }
}

impl NoisePredictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn accepts(&self, _kind: ConditioningKind) -> bool {
        true
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn predict_noise(&self, query: &NoiseQuery<'_>) -> Result<Raster> {
        let [h, w, c] = query.noisy_latent.shape();
        if h != w || c != 3 {
            return Err(Error::backend(format!("oracle expects square RGB latents, got {h}x{w}x{c}")));
        }
        let view = query.condition.view();
        let opts = RenderOptions {
            samples: self.samples,
            background: view.background,
        };
        let target = render(&self.target, &view.pose, h, &opts)
            .map_err(|e| Error::backend(format!("oracle render failed: {e}")))?;
        let alpha_bar = self.schedule.alpha_bar(query.t_diff)?;
        let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        let kappa = self.kappa;
        let mut out = query.injected_noise.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let clean = (query.noisy_latent.data()[i] - b * query.injected_noise.data()[i]) / a;
            *o += kappa * (clean - target.rgb.data()[i]);
        }
        Ok(out)
    }

    fn is_oracle(&self) -> bool {
        true
    }
}

/// Wraps a predictor and counts `predict_noise` calls.
#[derive(Debug, Default)]
pub struct CountingPredictor<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: NoisePredictor> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: NoisePredictor> NoisePredictor for CountingPredictor<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn accepts(&self, kind: ConditioningKind) -> bool {
        self.inner.accepts(kind)
    }

    fn schedule(&self) -> &NoiseSchedule {
        self.inner.schedule()
    }

    fn predict_noise(&self, query: &NoiseQuery<'_>) -> Result<Raster> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict_noise(query)
    }

    fn encode(&self, rgb: &Raster) -> Result<Raster> {
        self.inner.encode(rgb)
    }

    fn pull_back(&self, rgb: &Raster, latent_grad: Raster) -> Result<Raster> {
        self.inner.pull_back(rgb, latent_grad)
    }

    fn is_oracle(&self) -> bool {
        self.inner.is_oracle()
    }
}
