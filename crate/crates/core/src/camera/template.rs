use serde::{Deserialize, Serialize};

use super::{homography_from_pose, CameraIntrinsics, CameraPose, MotionCategory, PlaneAssumption};
use crate::tensor::Matrix3;
use crate::{Error, Result};

/// Per-transition backward homographies for a clip of `frames` frames.
///
/// `transitions[i]` maps a pixel of frame `i + 1` to its source in frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraTemplate {
    /// `None` for templates built from explicit poses.
    pub category: Option<MotionCategory>,
    pub speed: f64,
    pub transitions: Vec<Matrix3>,
}

impl CameraTemplate {
    pub fn frames(&self) -> usize {
        self.transitions.len() + 1
    }

    /// Explicit relative poses, one per transition.
    pub fn from_poses(
        intrinsics: &CameraIntrinsics,
        poses: &[CameraPose],
        plane: &PlaneAssumption,
    ) -> Result<Self> {
        let transitions = poses
            .iter()
            .map(|pose| {
                let forward = homography_from_pose(intrinsics, pose, plane)?;
                forward
                    .inverse()
                    .and_then(|m| m.normalized())
                    .ok_or_else(|| Error::DegenerateGeometry("non-invertible pose homography".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            category: None,
            speed: 0.0,
            transitions,
        })
    }

    /// Product of the backward maps tracing frame `to` back to frame `from`.
    pub fn compose(&self, from: usize, to: usize) -> Matrix3 {
        assert!(from <= to && to < self.frames());
        (from..to).fold(Matrix3::IDENTITY, |acc, i| acc * self.transitions[i])
    }

    pub fn summary(&self) -> String {
        match self.category {
            Some(m) => format!("{m}@{}x{}", self.speed, self.frames()),
            None => format!("poses x{}", self.frames()),
        }
    }
}

/// Canonical template for a motion category.
///
/// Pans move `speed` pixels per transition; zooms scale by `1 + speed` per
/// transition about `(cx, cy)`. See the module docs for the sign table.
pub fn template_from_category(
    category: MotionCategory,
    speed: f64,
    frames: usize,
    intrinsics: &CameraIntrinsics,
    dims: (usize, usize),
) -> Result<CameraTemplate> {
    if frames == 0 {
        return Err(Error::Validation("template needs at least one frame".into()));
    }
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::InvalidShape(format!("image dims {dims:?}")));
    }
    intrinsics.validate()?;
    if !speed.is_finite() || speed < 0.0 {
        return Err(Error::Validation(format!("speed {speed} must be ≥ 0")));
    }
    if speed == 0.0 && category != MotionCategory::Static {
        return Err(Error::Validation(format!(
            "speed 0 is only valid for static, not {category}"
        )));
    }
    let step = match category {
        MotionCategory::Static => Matrix3::IDENTITY,
        MotionCategory::ZoomIn => Matrix3::scaling_about(1.0 + speed, intrinsics.cx, intrinsics.cy),
        MotionCategory::ZoomOut => {
            Matrix3::scaling_about(1.0 / (1.0 + speed), intrinsics.cx, intrinsics.cy)
        }
        pan => {
            let (dx, dy) = pan.pan_direction().expect("pan category");
            Matrix3::translation(dx * speed, dy * speed)
        }
    };
    Ok(CameraTemplate {
        category: Some(category),
        speed,
        transitions: vec![step; frames - 1],
    })
}

/// JSON form of a camera template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub poses: Option<Vec<PoseSpec>>,
    #[serde(default)]
    pub plane_depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TemplateSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("camera template: {e}")))
    }

    /// Builds the template for `frames` frames of `height × width`.
    ///
    /// `poses`, when present, overrides `category` and `speed` and must hold
    /// one relative pose per transition. A `frames` entry in the JSON must
    /// agree with the requested count.
    pub fn build(&self, frames: usize, height: usize, width: usize) -> Result<CameraTemplate> {
        if let Some(f) = self.frames {
            if f != frames {
                return Err(Error::Shape(format!(
                    "template declares {f} frames, latent has {frames}"
                )));
            }
        }
        let intrinsics = self
            .intrinsics
            .unwrap_or_else(|| CameraIntrinsics::default_for(height, width));
        if let Some(poses) = &self.poses {
            if poses.len() + 1 != frames {
                return Err(Error::Shape(format!(
                    "{} poses given, {frames} frames need {}",
                    poses.len(),
                    frames.saturating_sub(1)
                )));
            }
            let plane = PlaneAssumption::fronto_parallel(self.plane_depth.unwrap_or(1.0))?;
            let poses = poses
                .iter()
                .map(|p| CameraPose::new(Matrix3(p.rotation), p.translation))
                .collect::<Result<Vec<_>>>()?;
            return CameraTemplate::from_poses(&intrinsics, &poses, &plane);
        }
        let category: MotionCategory = self
            .category
            .as_deref()
            .ok_or_else(|| Error::Parse("template needs \"category\" or \"poses\"".into()))?
            .parse()?;
        let speed = self.speed.unwrap_or(match category {
            MotionCategory::Static => 0.0,
            MotionCategory::ZoomIn | MotionCategory::ZoomOut => 0.05,
            _ => 1.0,
        });
        template_from_category(category, speed, frames, &intrinsics, (height, width))
    }
}
