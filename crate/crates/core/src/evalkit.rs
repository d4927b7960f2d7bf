//! Reconstruction metrics and dataset-level aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{cosine, EmbeddingModel};
use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::io::{load_case_dir, IMAGE_FILE};
use crate::losses::CaseInput;
use crate::raster::Raster;
use crate::scene::{RenderedView, SceneModel};
use crate::trainer::{evaluation_renders, ReconstructionResult, SCENE_FILE};

pub const PSNR_CAP: f64 = 99.0;
const PSNR_MIN_MSE: f64 = 1e-10;

/// An external perceptual distance such as LPIPS.
pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, a: &Raster, b: &Raster) -> Result<f64>;
}

pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse < PSNR_MIN_MSE {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).clamp(0.0, PSNR_CAP))
}

/// Mean image-to-image cosine between each render and the reference image.
pub fn clip_similarity_metric(renders: &[RenderedView], reference_image: &Raster, model: &dyn EmbeddingModel) -> Result<f64> {
    Ok(mean(&per_view_similarity(renders, reference_image, model)?))
}

fn per_view_similarity(renders: &[RenderedView], reference_image: &Raster, model: &dyn EmbeddingModel) -> Result<Vec<f64>> {
    if renders.is_empty() {
        return Err(Error::invalid("no renders to score"));
    }
    let reference = model.embed_image(reference_image)?;
    renders
        .iter()
        .map(|r| cosine(&model.embed_image(&r.rgb)?, &reference))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub azimuth: f64,
    pub elevation: f64,
    pub clip_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub clip_similarity: f64,
    pub psnr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub per_view: Vec<ViewScore>,
}

pub fn evaluate_case(
    result: &ReconstructionResult,
    case: &CaseInput,
    model: &dyn EmbeddingModel,
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<CaseReport> {
    score_renders(&result.renders, &result.reference_render, case, model, perceptual)
}

pub fn score_renders(
    renders: &[RenderedView],
    reference_render: &RenderedView,
    case: &CaseInput,
    model: &dyn EmbeddingModel,
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<CaseReport> {
    if renders.is_empty() {
        return Err(Error::invalid("result has no novel-view renders"));
    }
    let reference = reference_render.rgb_over([1.0; 3]);
    let sims = per_view_similarity(renders, &case.image, model)?;
    let per_view = renders
        .iter()
        .zip(&sims)
        .map(|(r, s)| ViewScore {
            azimuth: r.pose.azimuth,
            elevation: r.pose.elevation,
            clip_similarity: *s,
        })
        .collect();
    Ok(CaseReport {
        clip_similarity: mean(&sims),
        psnr: psnr(&reference, &case.image)?,
        lpips: perceptual.map(|p| p.distance(&reference, &case.image)).transpose()?,
        per_view,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub clip_similarity: f64,
    pub psnr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub cases: usize,
}

impl MetricMeans {
    /// Unweighted means; `lpips` only when every report has it.
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a CaseReport>) -> Result<Self> {
        let reports: Vec<&CaseReport> = reports.into_iter().collect();
        if reports.is_empty() {
            return Err(Error::invalid("no case reports to aggregate"));
        }
        let n = reports.len() as f64;
        let lpips = reports.iter().map(|r| r.lpips).collect::<Option<Vec<_>>>();
        Ok(Self {
            clip_similarity: reports.iter().map(|r| r.clip_similarity).sum::<f64>() / n,
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            lpips: lpips.map(|v| v.iter().sum::<f64>() / n),
            cases: reports.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub per_case: BTreeMap<String, CaseReport>,
    pub per_category: BTreeMap<String, MetricMeans>,
    pub mean: MetricMeans,
}

/// Aggregates named case reports, grouping by category where one is given.
pub fn aggregate(cases: Vec<(String, Option<String>, CaseReport)>) -> Result<DatasetReport> {
    let mean = MetricMeans::of(cases.iter().map(|c| &c.2))?;
    let mut groups: BTreeMap<String, Vec<&CaseReport>> = BTreeMap::new();
    for (_, category, report) in &cases {
        if let Some(cat) = category {
            groups.entry(cat.clone()).or_default().push(report);
        }
    }
    let per_category = groups
        .into_iter()
        .map(|(k, v)| Ok((k, MetricMeans::of(v)?)))
        .collect::<Result<_>>()?;
    let mut per_case = BTreeMap::new();
    for (name, _, report) in cases {
        if per_case.insert(name.clone(), report).is_some() {
            return Err(Error::invalid(format!("duplicate case name '{name}'")));
        }
    }
    Ok(DatasetReport {
        per_case,
        per_category,
        mean,
    })
}

impl DatasetReport {
    /// One row per case then a mean row: `case,category?,CLIP-Similarity,PSNR,LPIPS?`.
    pub fn to_csv(&self, categories: &BTreeMap<String, String>) -> String {
        let with_lpips = self.mean.lpips.is_some();
        let mut out = String::from("case,category,clip_similarity,psnr");
        if with_lpips {
            out.push_str(",lpips");
        }
        out.push('\n');
        let mut row = |name: &str, cat: &str, clip: f64, psnr: f64, lpips: Option<f64>| {
            out.push_str(&format!("{name},{cat},{clip},{psnr}"));
            if with_lpips {
                out.push_str(&format!(",{}", lpips.map(|v| v.to_string()).unwrap_or_default()));
            }
            out.push('\n');
        };
        for (name, r) in &self.per_case {
            row(name, categories.get(name).map(String::as_str).unwrap_or(""), r.clip_similarity, r.psnr, r.lpips);
        }
        row("mean", "", self.mean.clip_similarity, self.mean.psnr, self.mean.lpips);
        out
    }

    pub fn write(&self, dir: &Path, categories: &BTreeMap<String, String>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).expect("reports serialize");
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv(categories)).map_err(|e| Error::io(&csv, e))
    }
}

/// Result directories paired with case directories of the same name.
fn matched_pairs(results_dir: &Path, cases_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let name_of = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if results_dir.join(SCENE_FILE).is_file() {
        let case = if cases_dir.join(IMAGE_FILE).is_file() {
            cases_dir.to_path_buf()
        } else {
            cases_dir.join(name_of(results_dir))
        };
        return Ok(if case.join(IMAGE_FILE).is_file() {
            vec![(name_of(results_dir), results_dir.to_path_buf(), case)]
        } else {
            vec![]
        });
    }
    let entries = fs::read_dir(results_dir).map_err(|e| Error::io(results_dir, e))?;
    let mut pairs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(results_dir, e))?.path();
        let name = name_of(&path);
        let case = cases_dir.join(&name);
        if path.join(SCENE_FILE).is_file() && case.join(IMAGE_FILE).is_file() {
            pairs.push((name, path, case));
        }
    }
    pairs.sort();
    Ok(pairs)
}

/// Scores every result directory (final checkpoint plus resolved config)
/// against its case directory. Returns the report and the case categories.
pub fn evaluate_dataset(
    results_dir: &Path,
    cases_dir: &Path,
    model: &dyn EmbeddingModel,
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<(DatasetReport, BTreeMap<String, String>)> {
    let pairs = matched_pairs(results_dir, cases_dir)?;
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "no results under {} match a case under {}",
            results_dir.display(),
            cases_dir.display()
        )));
    }
    let mut reports = Vec::with_capacity(pairs.len());
    let mut categories = BTreeMap::new();
    for (name, result, case_dir) in pairs {
        let snapshot = result.join(RESOLVED_CONFIG_FILE);
        let cfg = if snapshot.is_file() {
            RunConfig::load(&snapshot)?
        } else {
            let mut c = RunConfig::default();
            c.resolve()?;
            c
        };
        let reference = cfg.reference_pose()?;
        let case = load_case_dir(&case_dir, reference, cfg.train.resolution)?;
        let scene = SceneModel::load(&result.join(SCENE_FILE))?;
        let (renders, reference_render) = evaluation_renders(&scene, &cfg.train, &reference)?;
        let report = score_renders(&renders, &reference_render, &case, model, perceptual)?;
        log::info!("{name}: psnr {:.3} dB, clip {:.4}", report.psnr, report.clip_similarity);
        if let Some(cat) = &case.category {
            categories.insert(name.clone(), cat.clone());
        }
        reports.push((name, case.category, report));
    }
    Ok((aggregate(reports)?, categories))
}
