//! `key = value` run configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! unparsable values are errors naming the line. [`RunConfig::to_file_string`]
//! writes every key, so its output reproduces the configuration exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::boundary::BoundaryConfig;
use crate::error::{Error, Result};
use crate::guidance::Weighting;
use crate::scene::{pose_from_spherical, CameraPose};
use crate::scheduler::ScheduleKind;
use crate::trainer::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

#[derive(Clone, Debug, PartialEq)]
pub struct BackendSpecs {
    pub guidance_2d: String,
    pub guidance_3d: String,
    pub embedding: String,
    pub perceptual: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub boundary_view_count: usize,
    pub boundary_elevation: f64,
    pub reference_azimuth: f64,
    pub reference_elevation: f64,
    pub backends: BackendSpecs,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            boundary_view_count: 8,
            boundary_elevation: 0.0,
            reference_azimuth: 0.0,
            reference_elevation: 0.0,
            backends: BackendSpecs {
                guidance_2d: "mock:echo".into(),
                guidance_3d: "mock:echo".into(),
                embedding: "mock:downsample".into(),
                perceptual: None,
            },
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("cannot parse '{s}': {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, f64, bool, String, ScheduleKind);

impl Value for PathBuf {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl Value for Weighting {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unit" => Ok(Weighting::Unit),
            "one_minus_alpha_bar" => Ok(Weighting::OneMinusAlphaBar),
            _ => Err(format!("unknown weighting '{s}' (expected unit or one_minus_alpha_bar)")),
        }
    }
    fn render(&self) -> String {
        match self {
            Weighting::Unit => "unit",
            Weighting::OneMinusAlphaBar => "one_minus_alpha_bar",
        }
        .into()
    }
}

/// `none` or an empty value means absent.
impl<T: Value> Value for Option<T> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() || s == "none" {
            Ok(None)
        } else {
            T::parse(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map(T::render).unwrap_or_else(|| "none".into())
    }
}

struct Key {
    name: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
}

macro_rules! keys {
    ($($name:literal => $($field:tt).+;)*) => {
        const KEYS: &[Key] = &[$(Key {
            name: $name,
            get: |c| Value::render(&c.$($field).+),
            set: |c, v| {
                c.$($field).+ = Value::parse(v)?;
                Ok(())
            },
        }),*];
    };
}

keys! {
    "train.iterations" => train.total_iterations;
    "train.lr" => train.learning_rate;
    "train.adam_beta1" => train.adam_beta1;
    "train.adam_beta2" => train.adam_beta2;
    "train.adam_eps" => train.adam_eps;
    "train.p_ref" => train.p_ref;
    "train.resolution" => train.resolution;
    "train.samples" => train.samples;
    "train.seed" => train.seed;
    "train.checkpoint_every" => train.checkpoint_every;
    "train.random_background" => train.random_background;
    "train.weighting" => train.weighting;
    "train.t_min_frac" => train.step_sampler.t_min_frac;
    "train.t_max_frac" => train.step_sampler.t_max_frac;
    "train.upgrade_at" => train.upgrade_at;
    "sampling.azimuth_min" => train.azimuth_range.0;
    "sampling.azimuth_max" => train.azimuth_range.1;
    "sampling.elevation_min" => train.elevation_range.0;
    "sampling.elevation_max" => train.elevation_range.1;
    "camera.radius" => train.radius;
    "camera.fov" => train.fov;
    "reference.azimuth" => reference_azimuth;
    "reference.elevation" => reference_elevation;
    "scene.grid_side" => train.grid_side;
    "scene.half_extent" => train.half_extent;
    "scene.init_density" => train.init_density;
    "scene.init_gray" => train.init_gray;
    "scene.init_checkpoint" => train.init_checkpoint;
    "loss.rgb" => train.loss_weights.rgb;
    "loss.mask" => train.loss_weights.mask;
    "loss.depth" => train.loss_weights.depth;
    "boundary.h" => train.boundary.interval;
    "boundary.window" => train.boundary.window;
    "boundary.delta" => train.boundary.delta;
    "boundary.warmup" => train.boundary.warmup_detections;
    "boundary.signed_rate" => train.boundary.signed_rate;
    "boundary.views" => boundary_view_count;
    "boundary.elevation" => boundary_elevation;
    "boundary.at_start" => train.boundary_at_start;
    "schedule.kind" => train.schedule_kind;
    "schedule.verbatim_eq9" => train.schedule_verbatim_eq9;
    "schedule.clamp" => train.schedule_clamp;
    "backend.2d" => backends.guidance_2d;
    "backend.3d" => backends.guidance_3d;
    "backend.embed" => backends.embedding;
    "backend.perceptual" => backends.perceptual;
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let k = KEYS
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| format!("unknown key '{key}'"))?;
        (k.set)(self, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter().find(|k| k.name == key).map(|k| (k.get)(self))
    }

    /// Parses on top of the defaults. `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let err = |line: usize, message: String| Error::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected 'key = value', got '{line}'")))?;
            cfg.set(key.trim(), value.trim()).map_err(|m| err(i + 1, m))?;
        }
        cfg.resolve().map_err(|e| err(0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Rebuilds derived fields (the detection ring) and validates.
    pub fn resolve(&mut self) -> Result<()> {
        let t = &mut self.train;
        t.boundary.views = BoundaryConfig::ring_views(self.boundary_view_count, self.boundary_elevation, t.radius, t.fov)?;
        t.validate()?;
        self.reference_pose()?;
        Ok(())
    }

    pub fn reference_pose(&self) -> Result<CameraPose> {
        pose_from_spherical(self.reference_azimuth, self.reference_elevation, self.train.radius, self.train.fov)
    }

    pub fn to_file_string(&self) -> String {
        KEYS.iter().map(|k| format!("{} = {}\n", k.name, (k.get)(self))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }
}
