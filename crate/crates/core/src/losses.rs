//! Reference-view supervision: colour, mask and depth-correlation losses.
//!
//! Each loss comes in a value-only form and a `*_with_grad` form returning the
//! gradient with respect to the rendered view's rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scene::{render_mask, CameraPose, RenderedView, ViewGradient};

/// Rendered alpha below this is excluded from the depth correlation.
pub const DEPTH_MIN_ALPHA: f64 = 1e-3;
pub const PEARSON_EPS: f64 = 1e-8;

/// One input photograph with its preprocessed supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseInput {
    /// Foreground composited over white, `H × W × 3` in `[0, 1]`.
    pub image: Raster,
    /// Binary foreground mask, `H × W × 1`.
    pub mask: Raster,
    /// Relative depth, `H × W × 1`, meaningful where `mask == 1`.
    pub depth: Raster,
    pub prompt: String,
    pub reference_pose: CameraPose,
    pub category: Option<String>,
}

impl CaseInput {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.image.shape();
        if c != 3 || h != w {
            return Err(Error::invalid(format!("case image must be square RGB, got {h}x{w}x{c}")));
        }
        if self.mask.shape() != [h, w, 1] || self.depth.shape() != [h, w, 1] {
            return Err(Error::invalid("case image, mask and depth must share dimensions"));
        }
        if self.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("case mask must be binary"));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("case image values must lie in [0, 1]"));
        }
        if self.depth.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("case depth must be finite"));
        }
        Ok(())
    }

    pub fn resolution(&self) -> usize {
        self.image.height()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rgb: f64,
    pub mask: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 5.0,
            mask: 0.5,
            depth: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.rgb, self.mask, self.depth].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthLoss {
    pub value: f64,
    /// Set when there were fewer than two valid pixels or a signal had no
    /// variance; `value` is then 0.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecLoss {
    pub rgb: f64,
    pub mask: f64,
    pub depth: f64,
    pub depth_degenerate: bool,
    pub total: f64,
}

fn check_dims(view: &RenderedView, case: &CaseInput) -> Result<usize> {
    let res = view.resolution();
    if case.image.shape() != [res, res, 3] {
        return Err(Error::invalid(format!(
            "rendered view is {res}px but the case image is {:?}",
            case.image.shape()
        )));
    }
    Ok(res)
}

pub fn rgb_loss(view: &RenderedView, case: &CaseInput) -> Result<f64> {
    Ok(rgb_loss_with_grad(view, case)?.0)
}

/// Mean squared error between the render composited over white and the case image.
pub fn rgb_loss_with_grad(view: &RenderedView, case: &CaseInput) -> Result<(f64, ViewGradient)> {
    let res = check_dims(view, case)?;
    let white = view.rgb_over([1.0; 3]);
    let n = white.len() as f64;
    let mut grad = ViewGradient::zeros(res);
    let mut sum = 0.0;
    for y in 0..res {
        for x in 0..res {
            let mut g_alpha = 0.0;
            for c in 0..3 {
                let d = white.get(y, x, c) - case.image.get(y, x, c);
                sum += d * d;
                let g = 2.0 * d / n;
                grad.rgb.set(y, x, c, g);
                // rgb_white = rgb + (1 - alpha)(1 - bg)
                g_alpha -= g * (1.0 - view.background[c]);
            }
            grad.alpha.set(y, x, 0, g_alpha);
        }
    }
    Ok((sum / n, grad))
}

pub fn mask_loss(view: &RenderedView, case: &CaseInput) -> Result<f64> {
    Ok(mask_loss_with_grad(view, case)?.0)
}

/// Mean squared error between the soft rendered mask and the binary mask.
pub fn mask_loss_with_grad(view: &RenderedView, case: &CaseInput) -> Result<(f64, ViewGradient)> {
    let res = check_dims(view, case)?;
    let soft = render_mask(view);
    let n = soft.len() as f64;
    let mut grad = ViewGradient::zeros(res);
    let mut sum = 0.0;
    for (i, (&a, &m)) in soft.data().iter().zip(case.mask.data()).enumerate() {
        let d = a - m;
        sum += d * d;
        grad.alpha.data_mut()[i] = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

pub fn depth_loss(view: &RenderedView, case: &CaseInput) -> Result<DepthLoss> {
    Ok(depth_loss_with_grad(view, case)?.0)
}

/// Negative Pearson correlation between rendered and reference depth over
/// pixels that are foreground in the mask and visibly covered in the render.
pub fn depth_loss_with_grad(view: &RenderedView, case: &CaseInput) -> Result<(DepthLoss, ViewGradient)> {
    let res = check_dims(view, case)?;
    let mut grad = ViewGradient::zeros(res);
    let valid: Vec<usize> = (0..res * res)
        .filter(|&i| case.mask.data()[i] == 1.0 && view.alpha.data()[i] >= DEPTH_MIN_ALPHA)
        .collect();
    let degenerate = DepthLoss {
        value: 0.0,
        degenerate: true,
    };
    if valid.len() < 2 {
        return Ok((degenerate, grad));
    }
    let xs: Vec<f64> = valid.iter().map(|&i| view.depth.data()[i]).collect();
    let ys: Vec<f64> = valid.iter().map(|&i| case.depth.data()[i]).collect();
    let Some((rho, drho)) = pearson_with_grad(&xs, &ys) else {
        return Ok((degenerate, grad));
    };
    for (k, &i) in valid.iter().enumerate() {
        grad.depth.data_mut()[i] = -drho[k];
    }
    Ok((
        DepthLoss {
            value: -rho,
            degenerate: false,
        },
        grad,
    ))
}

/// Pearson correlation of `xs` against `ys` and its gradient with respect to
/// `xs`. `None` when either signal has (relatively) zero spread.
fn pearson_with_grad(xs: &[f64], ys: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let cy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sx = cx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sy = cy.iter().map(|v| v * v).sum::<f64>().sqrt();
    let flat = |s: f64, raw: &[f64]| s <= 1e-12 * raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    if flat(sx, xs) || flat(sy, ys) {
        return None;
    }
    let cov: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    let denom = sx * sy + PEARSON_EPS;
    let rho = cov / denom;
    // d(cov)/dx_i = cy_i and d(sx)/dx_i = cx_i / sx; both centred vectors sum
    // to zero, so the mean's dependence on x_i drops out.
    let grad = cx
        .iter()
        .zip(&cy)
        .map(|(a, b)| b / denom - cov * sy * (a / sx) / (denom * denom))
        .collect();
    Some((rho, grad))
}

pub fn rec_loss(view: &RenderedView, case: &CaseInput, w: &LossWeights) -> Result<RecLoss> {
    Ok(rec_loss_with_grad(view, case, w)?.0)
}

/// Weighted sum of the three reference-view losses.
pub fn rec_loss_with_grad(view: &RenderedView, case: &CaseInput, w: &LossWeights) -> Result<(RecLoss, ViewGradient)> {
    w.validate()?;
    let (rgb, g_rgb) = rgb_loss_with_grad(view, case)?;
    let (mask, g_mask) = mask_loss_with_grad(view, case)?;
    let (depth, g_depth) = depth_loss_with_grad(view, case)?;
    let res = view.resolution();
    let mut grad = ViewGradient::zeros(res);
    for (g, k) in [(&g_rgb, w.rgb), (&g_mask, w.mask), (&g_depth, w.depth)] {
        if k != 0.0 {
            grad.add_assign(&scaled(g, k))?;
        }
    }
    Ok((
        RecLoss {
            rgb,
            mask,
            depth: depth.value,
            depth_degenerate: depth.degenerate,
            total: w.rgb * rgb + w.mask * mask + w.depth * depth.value,
        },
        grad,
    ))
}

fn scaled(g: &ViewGradient, k: f64) -> ViewGradient {
    ViewGradient {
        rgb: g.rgb.scale(k),
        alpha: g.alpha.scale(k),
        depth: g.depth.scale(k),
    }
}
