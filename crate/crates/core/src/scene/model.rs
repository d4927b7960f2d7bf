use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Raw density that activates to effectively zero (`softplus(-40) ≈ 4e-18`).
pub const EMPTY_DENSITY_RAW: f64 = -40.0;

const CHECKPOINT_MAGIC: &str = "C123-SCENE v1";

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; zero and negative inputs map to [`EMPTY_DENSITY_RAW`].
pub fn softplus_inv(y: f64) -> f64 {
    if y <= 0.0 {
        return EMPTY_DENSITY_RAW;
    }
    // log(exp(y) - 1) = y + log(1 - exp(-y))
    (y + (-(-y).exp()).ln_1p()).max(EMPTY_DENSITY_RAW)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Voxel radiance field: raw density and raw color stored at the `D³` lattice
/// nodes spanning the cube `[-half_extent, half_extent]³`.
///
/// Density activates through softplus, color through a sigmoid. Lattice node
/// `(x, y, z)` lives at flat index `(x * D + y) * D + z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    side: usize,
    half_extent: f64,
    density: Vec<f64>,
    color: Vec<f64>,
}

/// Gradient buffers laid out exactly like the scene parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradient {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl SceneGradient {
    pub fn zeros_like(scene: &SceneModel) -> Self {
        Self {
            density: vec![0.0; scene.density.len()],
            color: vec![0.0; scene.color.len()],
        }
    }

    pub fn add_assign(&mut self, other: &SceneGradient) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.density.iter_mut().for_each(|v| *v *= k);
        self.color.iter_mut().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.density.iter().chain(&self.color).all(|&v| v == 0.0)
    }
}

impl SceneModel {
    /// A scene with (numerically) zero density and mid-gray color.
    pub fn empty(side: usize, half_extent: f64) -> Result<Self> {
        Self::validate_shape(side, half_extent)?;
        let n = side * side * side;
        Ok(Self {
            side,
            half_extent,
            density: vec![EMPTY_DENSITY_RAW; n],
            color: vec![0.0; n * 3],
        })
    }

    pub fn from_raw(side: usize, half_extent: f64, density: Vec<f64>, color: Vec<f64>) -> Result<Self> {
        Self::validate_shape(side, half_extent)?;
        let n = side * side * side;
        if density.len() != n || color.len() != 3 * n {
            return Err(Error::invalid(format!(
                "grid sizes {}/{} do not match side {side}",
                density.len(),
                color.len()
            )));
        }
        if density.iter().chain(&color).any(|v| !v.is_finite()) {
            return Err(Error::numeric("scene parameters must be finite"));
        }
        Ok(Self {
            side,
            half_extent,
            density,
            color,
        })
    }

    /// Builds a scene from activated values: `f(world_position)` returns
    /// `(density ≥ 0, rgb ∈ [0,1]³)` for every lattice node.
    pub fn from_fn(side: usize, half_extent: f64, mut f: impl FnMut([f64; 3]) -> (f64, [f64; 3])) -> Result<Self> {
        let mut scene = Self::empty(side, half_extent)?;
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let (d, rgb) = f(scene.node_position(x, y, z));
                    let i = scene.flat(x, y, z);
                    scene.density[i] = softplus_inv(d);
                    for (c, v) in rgb.iter().enumerate() {
                        scene.color[3 * i + c] = logit(*v);
                    }
                }
            }
        }
        Ok(scene)
    }

    /// Faint gray blob: activated density `density` inside a centered sphere of
    /// radius `half_extent / 2`, a much fainter `density / 10` elsewhere so the
    /// outer voxels keep a usable gradient.
    pub fn centered_blob(side: usize, half_extent: f64, density: f64, gray: f64) -> Result<Self> {
        let radius = 0.5 * half_extent;
        Self::from_fn(side, half_extent, |p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let d = if r <= radius { density } else { density * 0.1 };
            (d, [gray; 3])
        })
    }

    fn validate_shape(side: usize, half_extent: f64) -> Result<()> {
        if side < 2 {
            return Err(Error::invalid(format!("grid side must be >= 2, got {side}")));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::invalid(format!("half extent must be positive, got {half_extent}")));
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    /// Distance between neighbouring lattice nodes.
    pub fn voxel_size(&self) -> f64 {
        2.0 * self.half_extent / (self.side - 1) as f64
    }

    pub fn density_raw(&self) -> &[f64] {
        &self.density
    }

    pub fn color_raw(&self) -> &[f64] {
        &self.color
    }

    pub fn density_raw_mut(&mut self) -> &mut [f64] {
        &mut self.density
    }

    pub fn color_raw_mut(&mut self) -> &mut [f64] {
        &mut self.color
    }

    pub fn param_count(&self) -> usize {
        self.density.len() + self.color.len()
    }

    /// Parameter `i` in the concatenated `[density, color]` ordering.
    pub fn param(&self, i: usize) -> f64 {
        if i < self.density.len() {
            self.density[i]
        } else {
            self.color[i - self.density.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let n = self.density.len();
        if i < n {
            &mut self.density[i]
        } else {
            &mut self.color[i - n]
        }
    }

    #[inline]
    pub fn flat(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.side + y) * self.side + z
    }

    pub fn node_position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let s = self.voxel_size();
        [
            -self.half_extent + x as f64 * s,
            -self.half_extent + y as f64 * s,
            -self.half_extent + z as f64 * s,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }

    /// Rounds every parameter to the nearest `f32`, i.e. to exactly what a
    /// checkpoint stores.
    pub fn quantize_f32(&mut self) {
        for v in self.density.iter_mut().chain(self.color.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} D={} HALF={}", self.side, self.half_extent)?;
        let mut bytes = Vec::with_capacity(4 * self.param_count());
        for v in self.density.iter().chain(&self.color) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::invalid(format!("checkpoint header unreadable: {e}")))?;
        let header = header
            .strip_suffix('\n')
            .ok_or_else(|| Error::invalid("checkpoint header is not newline-terminated"))?;
        let (side, half) = parse_header(header)?;
        Self::validate_shape(side, half)?;
        let n = side * side * side;
        let mut bytes = vec![0u8; 4 * n * 4];
        reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::invalid(format!("checkpoint payload truncated: {e}")))?;
        let mut extra = [0u8; 1];
        if reader.read(&mut extra).map_err(|e| Error::invalid(e.to_string()))? != 0 {
            return Err(Error::invalid("checkpoint has trailing bytes"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let (density, color) = values.split_at(n);
        Self::from_raw(side, half, density.to_vec(), color.to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(file)
    }
}

fn parse_header(line: &str) -> Result<(usize, f64)> {
    let rest = line
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| Error::invalid(format!("bad checkpoint magic in {line:?}")))?;
    let mut side = None;
    let mut half = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("D=") {
            side = v.parse::<usize>().ok();
        } else if let Some(v) = field.strip_prefix("HALF=") {
            half = v.parse::<f64>().ok();
        } else {
            return Err(Error::invalid(format!("unexpected checkpoint header field {field:?}")));
        }
    }
    match (side, half) {
        (Some(d), Some(h)) => Ok((d, h)),
        _ => Err(Error::invalid(format!("incomplete checkpoint header {line:?}"))),
    }
}
