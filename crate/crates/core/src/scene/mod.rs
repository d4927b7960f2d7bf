//! Differentiable voxel radiance field: cameras, the scene model, and the
//! volume renderer.

pub mod camera;
pub mod model;
pub mod render;

pub use camera::{pose_from_spherical, CameraPose};
pub use model::{SceneGradient, SceneModel};
pub use render::{render, render_backward, render_mask, RenderOptions, RenderedView, ViewGradient};
