//! Backend spec grammar shared by guidance, embedding and perceptual backends:
//! `mock:echo`, `mock:oracle=<ckpt>[,kappa=<f>]`, `mock:downsample[=<png>]`,
//! `mock:l1`, `ipc:<address>`.

use std::path::Path;

use crate::boundary::mock::DownsampleEmbedding;
use crate::boundary::EmbeddingModel;
use crate::error::{Error, Result};
use crate::evalkit::PerceptualMetric;
use crate::guidance::mock::{make_oracle_backend, EchoPredictor};
use crate::guidance::NoisePredictor;
use crate::io::read_png_rgb;
use crate::ipc::{IpcEmbedding, IpcPerceptual, IpcPredictor};
use crate::raster::Raster;
use crate::scene::SceneModel;

#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Echo,
    Oracle { checkpoint: String, kappa: f64 },
    Downsample { target: Option<String> },
    L1,
    Ipc(String),
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |why: &str| Error::invalid(format!("backend spec '{spec}': {why}"));
        if let Some(addr) = spec.strip_prefix("ipc:") {
            if addr.is_empty() {
                return Err(bad("missing address"));
            }
            return Ok(BackendSpec::Ipc(addr.to_owned()));
        }
        let body = spec.strip_prefix("mock:").ok_or_else(|| bad("expected a mock: or ipc: prefix"))?;
        let (name, arg) = match body.split_once('=') {
            Some((n, a)) => (n, Some(a)),
            None => (body, None),
        };
        match (name, arg) {
            ("echo", None) => Ok(BackendSpec::Echo),
            ("l1", None) => Ok(BackendSpec::L1),
            ("downsample", target) => Ok(BackendSpec::Downsample {
                target: target.map(str::to_owned),
            }),
            ("oracle", Some(arg)) => {
                let mut parts = arg.split(',');
                let checkpoint = parts.next().filter(|p| !p.is_empty()).ok_or_else(|| bad("missing checkpoint"))?;
                let mut kappa = 1.0;
                for opt in parts {
                    let v = opt.strip_prefix("kappa=").ok_or_else(|| bad("unknown oracle option"))?;
                    kappa = v.parse().map_err(|_| bad("kappa is not a number"))?;
                }
                Ok(BackendSpec::Oracle {
                    checkpoint: checkpoint.to_owned(),
                    kappa,
                })
            }
            _ => Err(bad("unknown backend")),
        }
    }
}

pub fn guidance_backend(spec: &str, samples: usize) -> Result<Box<dyn NoisePredictor>> {
    Ok(match BackendSpec::parse(spec)? {
        BackendSpec::Echo => Box::new(EchoPredictor::new()),
        BackendSpec::Oracle { checkpoint, kappa } => {
            let target = SceneModel::load(Path::new(&checkpoint))?;
            Box::new(make_oracle_backend(target).with_kappa(kappa).with_samples(samples))
        }
        BackendSpec::Ipc(addr) => Box::new(IpcPredictor::connect(&addr)?),
        other => return Err(Error::invalid(format!("{other:?} is not a guidance backend"))),
    })
}

/// `default_target` is the text-embedding target of `mock:downsample` when the
/// spec names none.
pub fn embedding_backend(spec: &str, default_target: &Raster) -> Result<Box<dyn EmbeddingModel>> {
    Ok(match BackendSpec::parse(spec)? {
        BackendSpec::Downsample { target: None } => Box::new(DownsampleEmbedding::new(default_target)?),
        BackendSpec::Downsample { target: Some(png) } => {
            Box::new(DownsampleEmbedding::new(&read_png_rgb(Path::new(&png))?.0)?)
        }
        BackendSpec::Ipc(addr) => Box::new(IpcEmbedding::connect(&addr)?),
        other => return Err(Error::invalid(format!("{other:?} is not an embedding backend"))),
    })
}

/// Mean absolute difference; a stand-in perceptual distance for offline runs.
pub struct L1Distance;

impl PerceptualMetric for L1Distance {
    fn distance(&self, a: &Raster, b: &Raster) -> Result<f64> {
        let d = a.zip_map(b, |x, y| (x - y).abs())?;
        Ok(d.mean())
    }
}

pub fn perceptual_backend(spec: &str) -> Result<Box<dyn PerceptualMetric>> {
    Ok(match BackendSpec::parse(spec)? {
        BackendSpec::L1 => Box::new(L1Distance),
        BackendSpec::Ipc(addr) => Box::new(IpcPerceptual::connect(&addr)?),
        other => return Err(Error::invalid(format!("{other:?} is not a perceptual backend"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        assert_eq!(BackendSpec::parse("mock:echo").unwrap(), BackendSpec::Echo);
        assert_eq!(
            BackendSpec::parse("mock:oracle=t.ckpt").unwrap(),
            BackendSpec::Oracle { checkpoint: "t.ckpt".into(), kappa: 1.0 }
        );
        assert_eq!(
            BackendSpec::parse("mock:oracle=/a/b.ckpt,kappa=0.5").unwrap(),
            BackendSpec::Oracle { checkpoint: "/a/b.ckpt".into(), kappa: 0.5 }
        );
        assert_eq!(BackendSpec::parse("mock:downsample").unwrap(), BackendSpec::Downsample { target: None });
        assert_eq!(BackendSpec::parse("ipc:unix:/tmp/s").unwrap(), BackendSpec::Ipc("unix:/tmp/s".into()));
        for bad in ["echo", "mock:", "mock:oracle", "mock:oracle=x,k=1", "mock:oracle=x,kappa=z", "ipc:", "mock:echo=1"] {
            assert!(BackendSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn kinds_are_checked() {
        let white = Raster::filled(8, 8, 3, 1.0);
        assert!(guidance_backend("mock:downsample", 8).is_err());
        assert!(embedding_backend("mock:echo", &white).is_err());
        assert!(perceptual_backend("mock:echo").is_err());
        assert!(embedding_backend("mock:downsample", &white).is_ok());
        assert!(matches!(guidance_backend("mock:oracle=/nonexistent.ckpt", 8), Err(Error::Io { .. })));
    }
}
