#![allow(dead_code)]

use std::path::Path;

use c123::boundary::BoundaryConfig;
use c123::losses::CaseInput;
use c123::raster::Raster;
use c123::scene::{pose_from_spherical, render, CameraPose, RenderOptions, SceneModel};
use c123::trainer::TrainConfig;

pub const RADIUS: f64 = 2.5;
pub const FOV: f64 = 50.0;

/// Asymmetric two-part object: a warm ellipsoid body with a blue head offset
/// towards +x, +z.
pub fn hidden_target() -> SceneModel {
    SceneModel::from_fn(16, 1.0, |p| {
        let body = (p[0] / 0.55).powi(2) + (p[1] / 0.4).powi(2) + (p[2] / 0.35).powi(2);
        let head = (p[0] - 0.35).powi(2) + p[1].powi(2) + (p[2] - 0.35).powi(2);
        if head <= 0.25f64.powi(2) {
            (6.0, [0.2, 0.4, 0.9])
        } else if body <= 1.0 {
            (6.0, [0.85, 0.45 + 0.4 * p[1], 0.2])
        } else {
            (0.0, [0.5; 3])
        }
    })
    .unwrap()
}

pub fn reference_pose() -> CameraPose {
    pose_from_spherical(0.0, 0.0, RADIUS, FOV).unwrap()
}

/// The case a perfect reconstruction of `target` would be given: its white
/// composite, thresholded alpha and depth at the reference pose.
pub fn case_from_target(target: &SceneModel, resolution: usize, samples: usize) -> CaseInput {
    let opts = RenderOptions::default().with_samples(samples);
    let view = render(target, &reference_pose(), resolution, &opts).unwrap();
    CaseInput {
        image: view.rgb.clone(),
        mask: view.alpha.map(|a| if a >= 0.5 { 1.0 } else { 0.0 }),
        depth: view.depth.clone(),
        prompt: "a small toy".into(),
        reference_pose: reference_pose(),
        category: None,
    }
}

/// A small, fast configuration for pipeline tests.
pub fn small_config(iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_iterations: iterations,
        resolution: 16,
        samples: 32,
        grid_side: 8,
        radius: RADIUS,
        fov: FOV,
        ..TrainConfig::default()
    };
    cfg.boundary = BoundaryConfig::with_views(BoundaryConfig::ring_views(8, 0.0, RADIUS, FOV).unwrap());
    cfg
}

pub fn psnr_against_target(target: &SceneModel, views: &[c123::scene::RenderedView]) -> Vec<f64> {
    views
        .iter()
        .map(|v| {
            let opts = RenderOptions::default().with_samples(v.samples).with_background(v.background);
            let t = render(target, &v.pose, v.resolution(), &opts).unwrap();
            c123::evalkit::psnr(&v.rgb, &t.rgb).unwrap()
        })
        .collect()
}

pub fn white(res: usize) -> Raster {
    Raster::filled(res, res, 3, 1.0)
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
