use crate::error::{Error, Result};
use crate::scene::{SceneGradient, SceneModel};

/// Adam over the concatenated `[density, color]` raw parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Nothing is written, neither to the scene nor to the moment
    /// estimates, unless every new value is finite.
    pub fn update(&mut self, scene: &mut SceneModel, grad: &SceneGradient) -> Result<()> {
        let n = scene.param_count();
        if grad.density.len() + grad.color.len() != n || self.m.len() != n {
            return Err(Error::invalid("gradient does not match the scene parameters"));
        }
        if !grad.is_finite() {
            return Err(Error::numeric("non-finite gradient"));
        }
        let t = self.step + 1;
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        for (i, g) in grad.density.iter().chain(&grad.color).enumerate() {
            let mi = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            let vi = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let p = scene.param(i) - self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            if !p.is_finite() {
                return Err(Error::numeric(format!("optimizer produced a non-finite value at parameter {i}")));
            }
            m.push(mi);
            v.push(vi);
            next.push(p);
        }
        let dn = scene.density_raw().len();
        scene.density_raw_mut().copy_from_slice(&next[..dn]);
        scene.color_raw_mut().copy_from_slice(&next[dn..]);
        self.m = m;
        self.v = v;
        self.step = t;
        Ok(())
    }
}
