//! Case-aware judgement of when structure initialization has plateaued:
//! multi-view image–text similarity, its windowed relative changing rate, and
//! the transition test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scene::{pose_from_spherical, render, CameraPose, RenderOptions, SceneModel};

/// An image/text embedding model producing unit-norm vectors.
pub trait EmbeddingModel: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_image(&self, image: &Raster) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::backend(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// Detection interval in iterations.
    pub interval: usize,
    /// Sliding window of the changing rate.
    pub window: usize,
    pub delta: f64,
    pub views: Vec<CameraPose>,
    pub warmup_detections: usize,
    /// When false the magnitude of the rate is compared against `delta`.
    pub signed_rate: bool,
}

impl BoundaryConfig {
    /// Eight azimuths `0°, 45°, …, 315°` at the given elevation.
    pub fn ring_views(count: usize, elevation: f64, radius: f64, fov: f64) -> Result<Vec<CameraPose>> {
        (0..count)
            .map(|i| pose_from_spherical(360.0 * i as f64 / count as f64, elevation, radius, fov))
            .collect()
    }

    pub fn with_views(views: Vec<CameraPose>) -> Self {
        let window = 5;
        Self {
            interval: 20,
            window,
            delta: 0.00025,
            views,
            warmup_detections: window + 1,
            signed_rate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.window == 0 {
            return Err(Error::invalid("boundary interval and window must be >= 1"));
        }
        // -inf disables the detector entirely.
        if !(self.delta > 0.0 || self.delta == f64::NEG_INFINITY) {
            return Err(Error::invalid(format!("boundary delta must be positive or -inf, got {}", self.delta)));
        }
        if self.views.is_empty() {
            return Err(Error::invalid("boundary detection needs at least one view"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistory {
    entries: Vec<(usize, f64)>,
}

impl SimilarityHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_scores(scores: &[f64]) -> Self {
        Self {
            entries: scores.iter().enumerate().map(|(k, s)| (k + 1, *s)).collect(),
        }
    }

    /// Appends score `S^k`; detection indices must strictly increase.
    pub fn push(&mut self, k: usize, score: f64) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if k <= last {
                return Err(Error::invalid(format!("detection index {k} does not follow {last}")));
            }
        }
        self.entries.push((k, score));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }
}

/// Mean over views of the cosine between each view's image embedding and the
/// prompt's text embedding. Views are rendered over white.
pub fn multiview_similarity(
    scene: &SceneModel,
    prompt: &str,
    cfg: &BoundaryConfig,
    resolution: usize,
    model: &dyn EmbeddingModel,
) -> Result<f64> {
    if cfg.views.is_empty() {
        return Err(Error::invalid("no detection views"));
    }
    let text = model.embed_text(prompt)?;
    let opts = RenderOptions::default();
    let mut total = 0.0;
    for pose in &cfg.views {
        let view = render(scene, pose, resolution, &opts)?;
        total += cosine(&model.embed_image(&view.rgb)?, &text)?;
    }
    Ok(total / cfg.views.len() as f64)
}

/// Mean relative increment of the last `window` consecutive score pairs.
pub fn changing_rate(history: &SimilarityHistory, window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::invalid("window must be >= 1"));
    }
    let n = history.len();
    if n < window + 1 {
        return Err(Error::NotReady(format!(
            "changing rate over {window} steps needs {} detections, have {n}",
            window + 1
        )));
    }
    let scores: Vec<f64> = history.scores().skip(n - window - 1).collect();
    let mut sum = 0.0;
    for pair in scores.windows(2) {
        if pair[0] == 0.0 {
            return Err(Error::numeric("similarity-degenerate: zero similarity in the rate window"));
        }
        sum += (pair[1] - pair[0]) / pair[0];
    }
    Ok(sum / window as f64)
}

pub fn should_transition(history: &SimilarityHistory, cfg: &BoundaryConfig) -> bool {
    if history.len() < cfg.warmup_detections {
        return false;
    }
    match changing_rate(history, cfg.window) {
        Ok(rate) => {
            let rate = if cfg.signed_rate { rate } else { rate.abs() };
            rate < cfg.delta
        }
        Err(e) => {
            log::debug!("boundary check skipped: {e}");
            false
        }
    }
}

pub mod mock {
    //! Deterministic embedding models for tests and offline runs.

    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::EmbeddingModel;
    use crate::error::{Error, Result};
    use crate::raster::Raster;

    pub const DOWNSAMPLE_SIDE: usize = 8;

    /// Flattened `8 × 8` box-filtered grayscale image, L2-normalized.
    pub fn downsample_embedding(image: &Raster) -> Result<Vec<f64>> {
        let (h, w, c) = (image.height(), image.width(), image.channels());
        if h < DOWNSAMPLE_SIDE || w < DOWNSAMPLE_SIDE {
            return Err(Error::backend(format!("image {h}x{w} is smaller than the 8x8 embedding grid")));
        }
        let mut sums = vec![0.0; DOWNSAMPLE_SIDE * DOWNSAMPLE_SIDE];
        let mut counts = vec![0usize; DOWNSAMPLE_SIDE * DOWNSAMPLE_SIDE];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * DOWNSAMPLE_SIDE / h) * DOWNSAMPLE_SIDE + x * DOWNSAMPLE_SIDE / w;
                let gray = image.pixel(y, x).iter().sum::<f64>() / c as f64;
                sums[cell] += gray;
                counts[cell] += 1;
            }
        }
        let v: Vec<f64> = sums.iter().zip(&counts).map(|(s, n)| s / *n as f64).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::backend("cannot embed an all-black image"));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }

    /// Image embedding is [`downsample_embedding`]; every text maps to the
    /// embedding of a fixed target raster.
    #[derive(Clone, Debug)]
    pub struct DownsampleEmbedding {
        text_target: Vec<f64>,
    }

    impl DownsampleEmbedding {
        pub fn new(text_target: &Raster) -> Result<Self> {
            Ok(Self {
                text_target: downsample_embedding(text_target)?,
            })
        }
    }

    impl EmbeddingModel for DownsampleEmbedding {
        fn dimension(&self) -> usize {
            DOWNSAMPLE_SIDE * DOWNSAMPLE_SIDE
        }

        fn embed_image(&self, image: &Raster) -> Result<Vec<f64>> {
            downsample_embedding(image)
        }

        fn embed_text(&self, _text: &str) -> Result<Vec<f64>> {
            Ok(self.text_target.clone())
        }
    }

    type CosineScript = dyn Fn(usize) -> f64 + Send + Sync;

    /// Text embeds to `e₀`; the `n`-th image call (0-based) embeds to a unit
    /// vector whose cosine with `e₀` is `script(n)`, regardless of content.
    pub struct ScriptedEmbedding {
        script: Box<CosineScript>,
        calls: AtomicUsize,
    }

    impl ScriptedEmbedding {
        pub fn new(script: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
            Self {
                script: Box::new(script),
                calls: AtomicUsize::new(0),
            }
        }

        /// Plays `trace(k)` for detection `k = 1, 2, …`, each detection
        /// spanning `views` image calls.
        pub fn per_detection(views: usize, trace: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
            Self::new(move |n| trace(n / views + 1))
        }

        pub fn image_calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl EmbeddingModel for ScriptedEmbedding {
        fn dimension(&self) -> usize {
            2
        }

        fn embed_image(&self, _image: &Raster) -> Result<Vec<f64>> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            let c = (self.script)(n).clamp(-1.0, 1.0);
            Ok(vec![c, (1.0 - c * c).sqrt()])
        }

        fn embed_text(&self, _text: &str) -> Result<Vec<f64>> {
            Ok(vec![1.0, 0.0])
        }
    }
}
