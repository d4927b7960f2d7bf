//! Stage-2 blending of 3D and 2D guidance as a function of the stage-2 clock.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::GuidanceGradient;
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Exp,
    Linear,
    Log,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Exp => "exp",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Log => "log",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" => Ok(ScheduleKind::Exp),
            "linear" => Ok(ScheduleKind::Linear),
            "log" => Ok(ScheduleKind::Log),
            other => Err(Error::invalid(format!("unknown schedule kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Length of the stage-2 clock.
    pub t_opt: usize,
    /// Use the linear/log forms with the 3D weight growing over time instead
    /// of decaying.
    pub verbatim_eq9: bool,
    pub clamp: bool,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, t_opt: usize) -> Self {
        Self {
            kind,
            t_opt,
            verbatim_eq9: false,
            clamp: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_opt == 0 {
            return Err(Error::invalid("schedule length must be >= 1"));
        }
        Ok(())
    }
}

/// `(w_3D, w_2D)` at stage-2 iteration `i ∈ [0, T]`.
pub fn prior_weights(spec: &ScheduleSpec, i: usize) -> Result<(f64, f64)> {
    spec.validate()?;
    if i > spec.t_opt {
        return Err(Error::invalid(format!(
            "stage-2 iteration {i} outside [0, {}]",
            spec.t_opt
        )));
    }
    let r = i as f64 / spec.t_opt as f64;
    let complement = |w3: f64| (w3, 1.0 - w3);
    Ok(match (spec.kind, spec.verbatim_eq9) {
        (ScheduleKind::Exp, _) => complement((-r).exp()),
        (ScheduleKind::Linear, false) => (1.0 - r, r),
        (ScheduleKind::Linear, true) => (r, 1.0 - r),
        (ScheduleKind::Log, false) => {
            let w2 = (1.0 + r).log2();
            (1.0 - w2, w2)
        }
        (ScheduleKind::Log, true) => {
            if i == 0 && !spec.clamp {
                return Err(Error::numeric("log of zero in the verbatim log schedule at i = 0"));
            }
            let w = r.log2();
            complement(if spec.clamp { w.clamp(0.0, 1.0) } else { w })
        }
    })
}

/// `w_3D·g3·w(t) + w_2D·g2·w(t)`, elementwise.
pub fn dynamic_prior_loss(
    grad_3d: &GuidanceGradient,
    grad_2d: &GuidanceGradient,
    weights: (f64, f64),
) -> Result<Raster> {
    let (a, b) = (weights.0 * grad_3d.weight, weights.1 * grad_2d.weight);
    grad_3d.grad.zip_map(&grad_2d.grad, |x, y| a * x + b * y)
}
