//! Spherical look-at cameras.
//!
//! Conventions: azimuth 0 lies on +x and grows toward +y, elevation 0 is the
//! equatorial plane, world up is +z. The rotation stores camera-to-world axes
//! as columns `[right, up, back]`; the camera looks along `-back`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Degrees in `[0, 360)`.
    pub azimuth: f64,
    /// Degrees in `[-90, 90]`.
    pub elevation: f64,
    pub radius: f64,
    /// Vertical field of view in degrees.
    pub fov: f64,
    /// Camera-to-world rotation, columns `[right, up, back]`.
    pub rotation: Mat3,
    /// Camera center in world coordinates.
    pub translation: Vec3,
}

/// Places a camera on the sphere of `radius` looking at the origin.
pub fn pose_from_spherical(azimuth: f64, elevation: f64, radius: f64, fov: f64) -> Result<CameraPose> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("camera radius must be positive, got {radius}")));
    }
    if !(fov > 0.0 && fov < 180.0) {
        return Err(Error::invalid(format!("field of view must be in (0, 180), got {fov}")));
    }
    if !(-90.0..=90.0).contains(&elevation) {
        return Err(Error::invalid(format!("elevation must be in [-90, 90], got {elevation}")));
    }
    if !azimuth.is_finite() {
        return Err(Error::invalid("azimuth must be finite"));
    }
    let azimuth = azimuth.rem_euclid(360.0);
    let (sa, ca) = azimuth.to_radians().sin_cos();
    let (se, ce) = elevation.to_radians().sin_cos();

    let center = [radius * ce * ca, radius * ce * sa, radius * se];
    let back = [ce * ca, ce * sa, se];
    // Limit of normalize(forward x up) that stays defined at the poles.
    let right = [-sa, ca, 0.0];
    let up = cross(back, right);

    Ok(CameraPose {
        azimuth,
        elevation,
        radius,
        fov,
        rotation: [
            [right[0], up[0], back[0]],
            [right[1], up[1], back[1]],
            [right[2], up[2], back[2]],
        ],
        translation: center,
    })
}

impl CameraPose {
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn right(&self) -> Vec3 {
        self.column(0)
    }

    pub fn up(&self) -> Vec3 {
        self.column(1)
    }

    /// Unit viewing direction (toward the look-at target).
    pub fn forward(&self) -> Vec3 {
        scale(self.column(2), -1.0)
    }

    fn column(&self, j: usize) -> Vec3 {
        [self.rotation[0][j], self.rotation[1][j], self.rotation[2][j]]
    }

    /// Unit direction through the center of pixel `(x, y)` of a square
    /// `resolution × resolution` image. Row 0 is the top of the image.
    pub fn ray_direction(&self, x: usize, y: usize, resolution: usize) -> Vec3 {
        let tan_half = (self.fov.to_radians() * 0.5).tan();
        let res = resolution as f64;
        let u = ((x as f64 + 0.5) / res * 2.0 - 1.0) * tan_half;
        let v = (1.0 - (y as f64 + 0.5) / res * 2.0) * tan_half;
        normalize(add(
            add(scale(self.right(), u), scale(self.up(), v)),
            self.forward(),
        ))
    }

    /// Rotation and translation of this camera expressed in the frame of
    /// `reference`: `R_rel = R_refᵀ · R`, `T_rel = R_refᵀ · (T − T_ref)`.
    pub fn relative_to(&self, reference: &CameraPose) -> (Mat3, Vec3) {
        let rt = transpose(reference.rotation);
        let r = matmul(rt, self.rotation);
        let d = [
            self.translation[0] - reference.translation[0],
            self.translation[1] - reference.translation[1],
            self.translation[2] - reference.translation[2],
        ];
        (r, matvec(rt, d))
    }
}

pub(crate) fn transpose(m: Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

pub(crate) fn matmul(a: Mat3, b: Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub(crate) fn matvec(a: Mat3, v: Vec3) -> Vec3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

#[cfg(test)]
pub(crate) fn determinant(m: Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
