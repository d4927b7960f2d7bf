//! Emission-absorption ray marching over the voxel field, with a hand-written
//! reverse pass.

use rayon::prelude::*;

use super::camera::{dot, CameraPose, Vec3};
use super::model::{sigmoid, softplus, SceneGradient, SceneModel};
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const DEFAULT_SAMPLES: usize = 96;

/// Accumulated opacity below which a pixel carries no depth.
pub const DEPTH_ALPHA_EPS: f64 = 1e-10;

/// Number of fixed row blocks the reverse pass is split into. Fixed so the
/// floating-point reduction order never depends on the thread pool.
const GRAD_BLOCKS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples: usize,
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            background: [1.0; 3],
        }
    }
}

impl RenderOptions {
    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    /// `H × W × 3`, composited over `background`.
    pub rgb: Raster,
    /// `H × W × 1`, opacity-weighted expected ray distance.
    pub depth: Raster,
    /// `H × W × 1`, accumulated opacity.
    pub alpha: Raster,
    pub pose: CameraPose,
    pub background: [f64; 3],
    pub samples: usize,
}

impl RenderedView {
    pub fn resolution(&self) -> usize {
        self.rgb.height()
    }

    /// The colour raster re-composited over a different background.
    pub fn rgb_over(&self, background: [f64; 3]) -> Raster {
        let mut out = self.rgb.clone();
        let res = self.resolution();
        for y in 0..res {
            for x in 0..res {
                let t = 1.0 - self.alpha.get(y, x, 0);
                for c in 0..3 {
                    let v = out.get(y, x, c) + t * (background[c] - self.background[c]);
                    out.set(y, x, c, v);
                }
            }
        }
        out
    }
}

/// Upstream gradient of a scalar with respect to each output raster of a view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGradient {
    pub rgb: Raster,
    pub alpha: Raster,
    pub depth: Raster,
}

impl ViewGradient {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            rgb: Raster::zeros(resolution, resolution, 3),
            alpha: Raster::zeros(resolution, resolution, 1),
            depth: Raster::zeros(resolution, resolution, 1),
        }
    }

    pub fn from_rgb(rgb: Raster) -> Self {
        let res = rgb.height();
        Self {
            rgb,
            ..Self::zeros(res)
        }
    }

    pub fn add_assign(&mut self, other: &ViewGradient) -> Result<()> {
        for (a, b) in [
            (&mut self.rgb, &other.rgb),
            (&mut self.alpha, &other.alpha),
            (&mut self.depth, &other.depth),
        ] {
            a.ensure_same_shape(b, "view gradient")?;
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// Soft mask of a rendered view: the accumulated opacity, unthresholded.
pub fn render_mask(view: &RenderedView) -> Raster {
    view.alpha.clone()
}

pub fn render(scene: &SceneModel, pose: &CameraPose, resolution: usize, opts: &RenderOptions) -> Result<RenderedView> {
    check_inputs(scene, pose, resolution, opts)?;
    let rows: Vec<Vec<[f64; 5]>> = (0..resolution)
        .into_par_iter()
        .map(|y| {
            let mut buf = Vec::with_capacity(opts.samples);
            (0..resolution)
                .map(|x| {
                    let dir = pose.ray_direction(x, y, resolution);
                    let ray = march(scene, pose.center(), dir, opts.samples, &mut buf);
                    let mut out = [0.0; 5];
                    let transmit = 1.0 - ray.alpha;
                    for c in 0..3 {
                        out[c] = (ray.rgb[c] + transmit * opts.background[c]).clamp(0.0, 1.0);
                    }
                    out[3] = ray.alpha.clamp(0.0, 1.0);
                    out[4] = ray.depth;
                    out
                })
                .collect()
        })
        .collect();

    let mut rgb = Raster::zeros(resolution, resolution, 3);
    let mut alpha = Raster::zeros(resolution, resolution, 1);
    let mut depth = Raster::zeros(resolution, resolution, 1);
    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            for c in 0..3 {
                rgb.set(y, x, c, px[c]);
            }
            alpha.set(y, x, 0, px[3]);
            depth.set(y, x, 0, px[4]);
        }
    }
    Ok(RenderedView {
        rgb,
        depth,
        alpha,
        pose: *pose,
        background: opts.background,
        samples: opts.samples,
    })
}

/// Reverse pass of [`render`]: gradient of a scalar loss with respect to the
/// raw scene parameters, given the loss gradient on the view's outputs.
pub fn render_backward(scene: &SceneModel, view: &RenderedView, upstream: &ViewGradient) -> Result<SceneGradient> {
    let resolution = view.resolution();
    let opts = RenderOptions {
        samples: view.samples,
        background: view.background,
    };
    check_inputs(scene, &view.pose, resolution, &opts)?;
    for (r, ch) in [(&upstream.rgb, 3), (&upstream.alpha, 1), (&upstream.depth, 1)] {
        if r.shape() != [resolution, resolution, ch] {
            return Err(Error::invalid(format!(
                "upstream gradient shape {:?} does not match a {resolution}px view",
                r.shape()
            )));
        }
    }

    let block = resolution.div_ceil(GRAD_BLOCKS);
    let partials: Vec<SceneGradient> = (0..GRAD_BLOCKS)
        .into_par_iter()
        .map(|b| {
            let mut grad = SceneGradient::zeros_like(scene);
            let mut buf = Vec::with_capacity(opts.samples);
            let rows = (b * block).min(resolution)..((b + 1) * block).min(resolution);
            for y in rows {
                for x in 0..resolution {
                    let g_rgb = [
                        upstream.rgb.get(y, x, 0),
                        upstream.rgb.get(y, x, 1),
                        upstream.rgb.get(y, x, 2),
                    ];
                    let g_alpha = upstream.alpha.get(y, x, 0);
                    let g_depth = upstream.depth.get(y, x, 0);
                    if g_rgb == [0.0; 3] && g_alpha == 0.0 && g_depth == 0.0 {
                        continue;
                    }
                    let dir = view.pose.ray_direction(x, y, resolution);
                    let ray = march(scene, view.pose.center(), dir, opts.samples, &mut buf);
                    backprop_ray(&ray, &buf, &opts, g_rgb, g_alpha, g_depth, &mut grad);
                }
            }
            grad
        })
        .collect();

    let mut total = SceneGradient::zeros_like(scene);
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}

fn check_inputs(scene: &SceneModel, pose: &CameraPose, resolution: usize, opts: &RenderOptions) -> Result<()> {
    if resolution < 8 {
        return Err(Error::invalid(format!("render resolution must be >= 8, got {resolution}")));
    }
    if opts.samples == 0 {
        return Err(Error::invalid("samples per ray must be positive"));
    }
    let h = scene.half_extent();
    let c = pose.center();
    if c.iter().all(|v| v.abs() <= h) {
        return Err(Error::invalid(format!(
            "camera center {c:?} lies inside the scene bounding box (half extent {h})"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Sample {
    t: f64,
    delta: f64,
    corners: [usize; 8],
    weights: [f64; 8],
    raw_density: f64,
    alpha: f64,
    transmittance: f64,
    color: [f64; 3],
}

#[derive(Clone, Copy, Debug, Default)]
struct RayResult {
    /// Premultiplied colour, without background.
    rgb: [f64; 3],
    alpha: f64,
    depth: f64,
    /// `Σ w_k t_k`, before normalization by alpha.
    depth_sum: f64,
}

/// Slab test against the cube `[-h, h]³`; returns the entry and exit distances.
fn intersect_box(origin: Vec3, dir: Vec3, h: f64) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i].abs() > h {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let mut a = (-h - origin[i]) * inv;
        let mut b = (h - origin[i]) * inv;
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Forward march of one ray; fills `buf` with the per-sample state needed
/// by the reverse pass.
fn march(scene: &SceneModel, origin: Vec3, dir: Vec3, samples: usize, buf: &mut Vec<Sample>) -> RayResult {
    buf.clear();
    let Some((t0, t1)) = intersect_box(origin, dir, scene.half_extent()) else {
        return RayResult::default();
    };
    let delta = (t1 - t0) / samples as f64;
    let h = scene.half_extent();
    let side = scene.side();
    let inv_voxel = 1.0 / scene.voxel_size();
    let density = scene.density_raw();
    let color = scene.color_raw();

    let mut result = RayResult::default();
    let mut transmittance = 1.0;
    for k in 0..samples {
        let t = t0 + (k as f64 + 0.5) * delta;
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for i in 0..3 {
            let u = (origin[i] + t * dir[i] + h) * inv_voxel;
            let base = (u.floor().max(0.0) as usize).min(side - 2);
            cell[i] = base;
            frac[i] = (u - base as f64).clamp(0.0, 1.0);
        }
        let mut corners = [0usize; 8];
        let mut weights = [0.0f64; 8];
        let mut raw_density = 0.0;
        let mut raw_color = [0.0f64; 3];
        for (n, (corner, weight)) in corners.iter_mut().zip(weights.iter_mut()).enumerate() {
            let (dx, dy, dz) = (n & 1, (n >> 1) & 1, (n >> 2) & 1);
            let idx = scene.flat(cell[0] + dx, cell[1] + dy, cell[2] + dz);
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            *corner = idx;
            *weight = w;
            raw_density += w * density[idx];
            for c in 0..3 {
                raw_color[c] += w * color[3 * idx + c];
            }
        }
        let sigma = softplus(raw_density);
        let alpha = 1.0 - (-sigma * delta).exp();
        let rgb = raw_color.map(sigmoid);
        let w = transmittance * alpha;
        for c in 0..3 {
            result.rgb[c] += w * rgb[c];
        }
        result.alpha += w;
        result.depth_sum += w * t;
        buf.push(Sample {
            t,
            delta,
            corners,
            weights,
            raw_density,
            alpha,
            transmittance,
            color: rgb,
        });
        transmittance *= 1.0 - alpha;
    }
    // Exact complement of the final transmittance keeps alpha in [0, 1].
    result.alpha = 1.0 - transmittance;
    if result.alpha > DEPTH_ALPHA_EPS {
        result.depth = result.depth_sum / result.alpha;
    }
    result
}

#[allow(clippy::too_many_arguments)]
fn backprop_ray(
    ray: &RayResult,
    samples: &[Sample],
    opts: &RenderOptions,
    g_rgb: [f64; 3],
    g_alpha: f64,
    g_depth: f64,
    grad: &mut SceneGradient,
) {
    if samples.is_empty() {
        return;
    }
    // Every output is a composite Σ T_k α_k s_k + T_N s_bg for a per-sample
    // scalar s_k, so one suffix recursion C_k = α_k s_k + (1 - α_k) C_{k+1}
    // gives dL/dα_k = T_k (s_k - C_{k+1}) for the whole loss at once.
    let (coef_t, g_alpha) = if ray.alpha > DEPTH_ALPHA_EPS {
        (g_depth / ray.alpha, g_alpha - g_depth * ray.depth / ray.alpha)
    } else {
        (0.0, g_alpha)
    };
    let mut suffix = dot(opts.background, g_rgb);
    for s in samples.iter().rev() {
        let s_k = dot(s.color, g_rgb) + g_alpha + coef_t * s.t;
        let d_alpha = s.transmittance * (s_k - suffix);
        suffix = s.alpha * s_k + (1.0 - s.alpha) * suffix;

        let d_sigma = d_alpha * (1.0 - s.alpha) * s.delta;
        let d_raw_density = d_sigma * sigmoid(s.raw_density);

        let w = s.transmittance * s.alpha;
        let d_raw_color = [0, 1, 2].map(|c| w * g_rgb[c] * s.color[c] * (1.0 - s.color[c]));

        for (&idx, &cw) in s.corners.iter().zip(&s.weights) {
            if cw == 0.0 {
                continue;
            }
            grad.density[idx] += cw * d_raw_density;
            for c in 0..3 {
                grad.color[3 * idx + c] += cw * d_raw_color[c];
            }
        }
    }
}
