//! Camera motion categories, planar reprojection and per-pixel warp fields.
//!
//! Image coordinates put integer values at pixel centres, with `x` in
//! `[0, W-1]` growing rightward and `y` in `[0, H-1]` growing downward.
//! Every transition is stored as a *backward* homography: it maps a pixel of
//! frame `t` to the location in frame `t-1` it is pulled from.
//!
//! Category sign table, for speed `s`:
//!
//! | category  | source of frame-`t` pixel `(x, y)` in frame `t-1` |
//! |-----------|---------------------------------------------------|
//! | Left      | `(x + s, y)`                                      |
//! | Right     | `(x - s, y)`                                      |
//! | Upward    | `(x, y + s)`                                      |
//! | Downward  | `(x, y - s)`                                      |
//! | ZoomIn    | `c + (p - c)·(1 + s)` about the principal point    |
//! | ZoomOut   | `c + (p - c)/(1 + s)`                              |
//! | Static    | `(x, y)`                                           |

mod template;
mod warp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix3;
use crate::{Error, Result};

pub use template::{template_from_category, CameraTemplate, PoseSpec, TemplateSpec};
pub use warp::{build_warp_field, TransitionField, WarpField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionCategory {
    Left,
    Right,
    Upward,
    Downward,
    ZoomIn,
    ZoomOut,
    Static,
}

impl MotionCategory {
    pub const ALL: [MotionCategory; 7] = [
        MotionCategory::Left,
        MotionCategory::Right,
        MotionCategory::Upward,
        MotionCategory::Downward,
        MotionCategory::ZoomIn,
        MotionCategory::ZoomOut,
        MotionCategory::Static,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MotionCategory::Left => "left",
            MotionCategory::Right => "right",
            MotionCategory::Upward => "upward",
            MotionCategory::Downward => "downward",
            MotionCategory::ZoomIn => "zoom_in",
            MotionCategory::ZoomOut => "zoom_out",
            MotionCategory::Static => "static",
        }
    }

    pub fn is_pan(&self) -> bool {
        matches!(
            self,
            MotionCategory::Left
                | MotionCategory::Right
                | MotionCategory::Upward
                | MotionCategory::Downward
        )
    }

    /// Per-transition backward pixel offset of a pan at unit speed.
    pub fn pan_direction(&self) -> Option<(f64, f64)> {
        match self {
            MotionCategory::Left => Some((1.0, 0.0)),
            MotionCategory::Right => Some((-1.0, 0.0)),
            MotionCategory::Upward => Some((0.0, 1.0)),
            MotionCategory::Downward => Some((0.0, -1.0)),
            _ => None,
        }
    }

    /// Expected per-transition content displacement `(dx, dy)` at unit
    /// speed; the negation of the backward offset.
    pub fn content_displacement(&self) -> Option<(i64, i64)> {
        self.pan_direction()
            .map(|(dx, dy)| (-dx as i64, -dy as i64))
            .or(match self {
                MotionCategory::Static => Some((0, 0)),
                _ => None,
            })
    }
}

impl fmt::Display for MotionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionCategory {
    type Err = Error;

    /// Accepts the snake_case names (`zoom_in`) and the spaced forms
    /// (`zoom in`), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        MotionCategory::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::Parse(format!("unknown motion category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Validation(format!(
                "intrinsics need finite values and positive focal lengths: {self:?}"
            )));
        }
        Ok(())
    }

    /// `fx = fy = max(H, W)` with the principal point at the image centre.
    pub fn default_for(height: usize, width: usize) -> Self {
        let f = height.max(width) as f64;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn matrix(&self) -> Matrix3 {
        Matrix3([self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0])
    }

    pub fn inverse_matrix(&self) -> Matrix3 {
        Matrix3([
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        ])
    }
}

/// Relative camera motion between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3,
    translation: [f64; 3],
}

impl CameraPose {
    pub fn new(rotation: Matrix3, translation: [f64; 3]) -> Result<Self> {
        if rotation.0.iter().chain(&translation).any(|v| !v.is_finite()) {
            return Err(Error::Validation("pose has non-finite entries".into()));
        }
        let rtr = rotation.transpose() * rotation;
        let err = rtr.max_abs_diff(&Matrix3::IDENTITY);
        if err >= 1e-6 {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal (|RᵀR - I| = {err:e})"
            )));
        }
        if rotation.det() <= 0.0 {
            return Err(Error::Validation("rotation has det ≠ +1".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn translation_only(translation: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::IDENTITY,
            translation,
        }
    }

    pub fn rotation(&self) -> Matrix3 {
        self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }
}

/// The scene is a single plane `n·X = d` in the earlier camera's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneAssumption {
    depth: f64,
    normal: [f64; 3],
}

impl PlaneAssumption {
    pub fn new(depth: f64, normal: [f64; 3]) -> Result<Self> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !depth.is_finite() || depth <= 0.0 {
            return Err(Error::Validation(format!("plane depth {depth} must be > 0")));
        }
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "plane normal must be unit length, got |n| = {norm}"
            )));
        }
        Ok(Self { depth, normal })
    }

    /// Fronto-parallel plane at `depth`.
    pub fn fronto_parallel(depth: f64) -> Result<Self> {
        Self::new(depth, [0.0, 0.0, 1.0])
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn normal(&self) -> [f64; 3] {
        self.normal
    }
}

impl Default for PlaneAssumption {
    fn default() -> Self {
        Self {
            depth: 1.0,
            normal: [0.0, 0.0, 1.0],
        }
    }
}

/// Plane-induced homography `K (R + t nᵀ / d) K⁻¹`, normalized so that the
/// bottom-right entry is one.
///
/// It maps homogeneous pixels of frame `t-1` to frame `t`; warping pulls
/// through its inverse.
pub fn homography_from_pose(
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    plane: &PlaneAssumption,
) -> Result<Matrix3> {
    intrinsics.validate()?;
    let r = pose.rotation.0;
    let t = pose.translation;
    let n = plane.normal;
    let mut inner = [0.0; 9];
    for row in 0..3 {
        for col in 0..3 {
            inner[3 * row + col] = r[3 * row + col] + t[row] * n[col] / plane.depth;
        }
    }
    let h = intrinsics.matrix() * Matrix3(inner) * intrinsics.inverse_matrix();
    let degenerate = || Error::DegenerateGeometry(format!("singular homography {h:?}"));
    if !h.det().is_finite() || h.det().abs() < 1e-12 {
        return Err(degenerate());
    }
    let h = h.normalized().ok_or_else(degenerate)?;
    if h.det().abs() < 1e-12 {
        return Err(degenerate());
    }
    Ok(h)
}
