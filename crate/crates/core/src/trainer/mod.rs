//! Two-stage optimization: 3D-prior structure initialization with periodic
//! boundary detection, then the dynamic 3D/2D blend, with reference-view
//! supervision throughout.

mod adam;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::boundary::{multiview_similarity, should_transition, BoundaryConfig, EmbeddingModel, SimilarityHistory};
use crate::error::{Error, Result};
use crate::guidance::{sds_grad_2d, sds_grad_3d, DiffusionStepSampler, NoisePredictor, Weighting};
use crate::io::write_png;
use crate::losses::{rec_loss_with_grad, CaseInput, LossWeights, RecLoss};
use crate::raster::Raster;
use crate::scene::{
    pose_from_spherical, render, render_backward, CameraPose, RenderOptions, RenderedView, SceneModel, ViewGradient,
};
use crate::scheduler::{dynamic_prior_loss, prior_weights, ScheduleKind, ScheduleSpec};

pub const WHITE: [f64; 3] = [1.0; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Probability of drawing the reference view.
    pub p_ref: f64,
    pub resolution: usize,
    pub samples: usize,
    pub loss_weights: LossWeights,
    pub boundary: BoundaryConfig,
    /// Skip stage 1 entirely.
    pub boundary_at_start: bool,
    pub schedule_kind: ScheduleKind,
    pub schedule_verbatim_eq9: bool,
    pub schedule_clamp: bool,
    pub seed: u64,
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub radius: f64,
    pub fov: f64,
    pub grid_side: usize,
    pub half_extent: f64,
    pub init_density: f64,
    pub init_gray: f64,
    /// Start from this checkpoint instead of the centered blob.
    pub init_checkpoint: Option<PathBuf>,
    pub weighting: Weighting,
    pub step_sampler: DiffusionStepSampler,
    /// Novel views are rendered over a random gray; reference views over white.
    pub random_background: bool,
    pub checkpoint_every: usize,
    /// Iteration at which the representation-upgrade hook runs.
    pub upgrade_at: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let (radius, fov) = (2.5, 50.0);
        let views = BoundaryConfig::ring_views(8, 0.0, radius, fov).expect("default ring is valid");
        Self {
            total_iterations: 10_000,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-15,
            p_ref: 0.25,
            resolution: 64,
            samples: crate::scene::render::DEFAULT_SAMPLES,
            loss_weights: LossWeights::default(),
            boundary: BoundaryConfig::with_views(views),
            boundary_at_start: false,
            schedule_kind: ScheduleKind::Exp,
            schedule_verbatim_eq9: false,
            schedule_clamp: true,
            seed: 0,
            azimuth_range: (0.0, 360.0),
            elevation_range: (-10.0, 45.0),
            radius,
            fov,
            grid_side: 32,
            half_extent: 1.0,
            init_density: 0.1,
            init_gray: 0.5,
            init_checkpoint: None,
            weighting: Weighting::Unit,
            step_sampler: DiffusionStepSampler::default(),
            random_background: true,
            checkpoint_every: 500,
            upgrade_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_ref) {
            return bad(format!("reference probability must lie in [0, 1], got {}", self.p_ref));
        }
        if self.resolution < 8 || self.samples == 0 {
            return bad("resolution must be >= 8 and samples >= 1".into());
        }
        let (a0, a1) = self.azimuth_range;
        let (e0, e1) = self.elevation_range;
        if a0.partial_cmp(&a1) != Some(std::cmp::Ordering::Less) || e0.is_nan() || e1.is_nan() || e0 > e1 || e0 < -90.0 || e1 > 90.0 {
            return bad(format!("invalid sampling ranges: azimuth {a0}..{a1}, elevation {e0}..{e1}"));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be >= 1".into());
        }
        self.loss_weights.validate()?;
        self.boundary.validate()?;
        self.step_sampler.validate()?;
        pose_from_spherical(0.0, 0.0, self.radius, self.fov)?;
        Ok(())
    }

    pub fn schedule(&self, t_opt: usize) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule_kind,
            t_opt,
            verbatim_eq9: self.schedule_verbatim_eq9,
            clamp: self.schedule_clamp,
        }
    }

    pub fn initial_scene(&self) -> Result<SceneModel> {
        match &self.init_checkpoint {
            Some(path) => SceneModel::load(path),
            None => SceneModel::centered_blob(self.grid_side, self.half_extent, self.init_density, self.init_gray),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViewKind {
    Reference,
    Novel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "INIT3D")]
    Init3d,
    #[serde(rename = "DYNAMIC")]
    Dynamic,
}

pub fn sample_view<R: Rng + ?Sized>(cfg: &TrainConfig, reference: &CameraPose, rng: &mut R) -> Result<(ViewKind, CameraPose)> {
    if rng.random_bool(cfg.p_ref) {
        return Ok((ViewKind::Reference, *reference));
    }
    let azimuth = rng.random_range(cfg.azimuth_range.0..cfg.azimuth_range.1);
    let (e0, e1) = cfg.elevation_range;
    let elevation = rng.random_range(e0..=e1);
    Ok((ViewKind::Novel, pose_from_spherical(azimuth, elevation, cfg.radius, cfg.fov)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub stage: Stage,
    /// Steps completed so far.
    pub iteration: usize,
    pub transition_iteration: Option<usize>,
    pub history: SimilarityHistory,
}

impl StageState {
    pub fn new() -> Self {
        Self {
            stage: Stage::Init3d,
            iteration: 0,
            transition_iteration: None,
            history: SimilarityHistory::new(),
        }
    }

    fn transition(&mut self, at: usize) -> Result<()> {
        if self.stage != Stage::Init3d {
            return Err(Error::invalid("stage transition requested twice"));
        }
        self.stage = Stage::Dynamic;
        self.transition_iteration = Some(at);
        Ok(())
    }
}

impl Default for StageState {
    fn default() -> Self {
        Self::new()
    }
}

/// Stand-in for a later change of scene representation. Never invoked unless
/// `TrainConfig::upgrade_at` is set.
pub trait RepresentationUpgrade: Send + Sync {
    fn upgrade(&self, scene: &mut SceneModel, iteration: usize) -> Result<()>;
}

pub struct Backends<'a> {
    pub guidance_2d: &'a dyn NoisePredictor,
    pub guidance_3d: &'a dyn NoisePredictor,
    pub embedding: &'a dyn EmbeddingModel,
    pub upgrade: Option<&'a dyn RepresentationUpgrade>,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub kind: ViewKind,
    pub azimuth: f64,
    pub elevation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_diff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rec: Option<RecLoss>,
    /// RMS of the image-space guidance gradient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_rms: Option<f64>,
    /// `(w_3D, w_2D)` on stage-2 novel-view steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub transition: bool,
}

/// Owns the mutable training state for one case.
pub struct Trainer<'c> {
    pub scene: SceneModel,
    pub state: StageState,
    case: &'c CaseInput,
    cfg: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl<'c> Trainer<'c> {
    pub fn new(case: &'c CaseInput, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        case.validate()?;
        if case.resolution() != cfg.resolution {
            return Err(Error::invalid(format!(
                "case is {}px but training renders at {}px",
                case.resolution(),
                cfg.resolution
            )));
        }
        let scene = cfg.initial_scene()?;
        let mut state = StageState::new();
        if cfg.boundary_at_start {
            state.transition(0)?;
        }
        Ok(Self {
            adam: Adam::new(scene.param_count(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            scene,
            state,
            case,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimization step, followed by boundary detection when due.
    pub fn step(&mut self, backends: &Backends<'_>) -> Result<StepRecord> {
        let cfg = &self.cfg;
        let iteration = self.state.iteration;
        if iteration >= cfg.total_iterations {
            return Err(Error::invalid("training budget exhausted"));
        }
        let (kind, pose) = sample_view(cfg, &self.case.reference_pose, &mut self.rng)?;
        let mut record = StepRecord {
            iteration,
            stage: self.state.stage,
            kind,
            azimuth: pose.azimuth,
            elevation: pose.elevation,
            t_diff: None,
            rec: None,
            guidance_rms: None,
            weights: None,
            similarity: None,
            transition: false,
        };

        let upstream = match kind {
            ViewKind::Reference => {
                let opts = RenderOptions::default().with_samples(cfg.samples).with_background(WHITE);
                let view = render(&self.scene, &pose, cfg.resolution, &opts)?;
                let (loss, grad) = rec_loss_with_grad(&view, self.case, &cfg.loss_weights)?;
                record.rec = Some(loss);
                (view, grad)
            }
            ViewKind::Novel => {
                let background = if cfg.random_background { [self.rng.random::<f64>(); 3] } else { WHITE };
                let opts = RenderOptions::default().with_samples(cfg.samples).with_background(background);
                let view = render(&self.scene, &pose, cfg.resolution, &opts)?;
                let steps = backends.guidance_3d.schedule().steps();
                let t = cfg.step_sampler.sample(steps, &mut self.rng)?;
                let res = cfg.resolution;
                let noise = Raster::from_fn(res, res, 3, |_, _, _| self.rng.sample::<f64, _>(StandardNormal));
                let g3 = sds_grad_3d(&view, self.case, backends.guidance_3d, t, &noise, cfg.weighting)?;
                let image_grad = match (self.state.stage, self.state.transition_iteration) {
                    (Stage::Dynamic, Some(at)) => {
                        let spec = cfg.schedule(cfg.total_iterations - at);
                        let weights = prior_weights(&spec, iteration - at)?;
                        let g2 = sds_grad_2d(&view, &self.case.prompt, backends.guidance_2d, t, &noise, cfg.weighting)?;
                        record.weights = Some(weights);
                        dynamic_prior_loss(&g3, &g2, weights)?
                    }
                    _ => g3.weighted(),
                };
                record.t_diff = Some(t);
                record.guidance_rms = Some(image_grad.data().iter().map(|v| v * v).sum::<f64>().sqrt() / (image_grad.len() as f64).sqrt());
                (view, ViewGradient::from_rgb(image_grad))
            }
        };
        let (view, view_grad) = upstream;
        let grad = render_backward(&self.scene, &view, &view_grad)?;
        self.adam.update(&mut self.scene, &grad)?;
        debug_assert!(self.scene.is_finite());

        let done = iteration + 1;
        self.state.iteration = done;
        if let (Some(at), Some(hook)) = (cfg.upgrade_at, backends.upgrade) {
            if at == done {
                hook.upgrade(&mut self.scene, done)?;
            }
        }
        if self.state.stage == Stage::Init3d && done.is_multiple_of(cfg.boundary.interval) {
            let s = multiview_similarity(&self.scene, &self.case.prompt, &cfg.boundary, cfg.resolution, backends.embedding)?;
            self.state.history.push(done / cfg.boundary.interval, s)?;
            record.similarity = Some(s);
            if should_transition(&self.state.history, &cfg.boundary) {
                self.state.transition(done)?;
                record.transition = true;
                log::info!("boundary reached at iteration {done} (similarity {s:.6})");
            }
        }
        Ok(record)
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub scene: SceneModel,
    pub log: Vec<StepRecord>,
    pub state: StageState,
    pub transition_iteration: Option<usize>,
    /// Over white at the detection poses, in their configured order.
    pub renders: Vec<RenderedView>,
    pub reference_render: RenderedView,
}

/// Renders over white at every detection pose and at the reference pose.
pub fn evaluation_renders(scene: &SceneModel, cfg: &TrainConfig, reference: &CameraPose) -> Result<(Vec<RenderedView>, RenderedView)> {
    let opts = RenderOptions::default().with_samples(cfg.samples).with_background(WHITE);
    let renders = cfg
        .boundary
        .views
        .iter()
        .map(|p| render(scene, p, cfg.resolution, &opts))
        .collect::<Result<Vec<_>>>()?;
    Ok((renders, render(scene, reference, cfg.resolution, &opts)?))
}

pub const LOG_FILE: &str = "run_log.ndjson";
pub const SCENE_FILE: &str = "scene.ckpt";
pub const ABORT_FILE: &str = "abort.ckpt";

pub fn render_file_name(pose: &CameraPose) -> String {
    format!("az{:03}_el{:+03}.png", pose.azimuth.round() as i64, pose.elevation.round() as i64)
}

struct Artifacts {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl Artifacts {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: BufWriter::new(file),
        })
    }

    fn record(&mut self, r: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(r).expect("step records serialize");
        writeln!(self.log, "{line}").map_err(|e| Error::io(self.dir.join(LOG_FILE), e))
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(self.dir.join(LOG_FILE), e))
    }

    fn checkpoint(&self, scene: &SceneModel, name: &str) -> Result<()> {
        scene.save(&self.dir.join("checkpoints").join(name))
    }
}

/// Runs the full budget. With `out`, writes the run log, periodic and
/// transition checkpoints, the final scene and the evaluation renders there.
pub fn run(case: &CaseInput, cfg: &TrainConfig, backends: &Backends<'_>, out: Option<&Path>) -> Result<ReconstructionResult> {
    let mut trainer = Trainer::new(case, cfg)?;
    let mut artifacts = out.map(Artifacts::create).transpose()?;
    if let (Some(a), Some(0)) = (&artifacts, trainer.state.transition_iteration) {
        a.checkpoint(&trainer.scene, "transition_000000.ckpt")?;
    }
    let mut log = Vec::with_capacity(cfg.total_iterations);
    while trainer.state.iteration < cfg.total_iterations {
        let record = match trainer.step(backends) {
            Ok(r) => r,
            Err(e) => {
                if let Some(a) = artifacts.as_mut() {
                    a.flush()?;
                    if matches!(e, Error::Numeric(_)) {
                        trainer.scene.save(&a.dir.join(ABORT_FILE))?;
                    }
                }
                return Err(e);
            }
        };
        let done = record.iteration + 1;
        if let Some(a) = artifacts.as_mut() {
            a.record(&record)?;
            if record.transition {
                a.checkpoint(&trainer.scene, &format!("transition_{done:06}.ckpt"))?;
            }
            if done.is_multiple_of(cfg.checkpoint_every) {
                a.checkpoint(&trainer.scene, &format!("step_{done:06}.ckpt"))?;
            }
        }
        log.push(record);
    }

    let Trainer { mut scene, state, .. } = trainer;
    scene.quantize_f32();
    let (renders, reference_render) = evaluation_renders(&scene, cfg, &case.reference_pose)?;
    if let Some(a) = artifacts.as_mut() {
        a.flush()?;
        scene.save(&a.dir.join(SCENE_FILE))?;
        let dir = a.dir.join("renders");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for v in &renders {
            write_png(&dir.join(render_file_name(&v.pose)), &v.rgb)?;
        }
        write_png(&dir.join("reference.png"), &reference_render.rgb)?;
    }
    Ok(ReconstructionResult {
        scene,
        log,
        transition_iteration: state.transition_iteration,
        state,
        renders,
        reference_render,
    })
}
