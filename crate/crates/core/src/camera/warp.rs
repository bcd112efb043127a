use super::CameraTemplate;
use crate::{Error, Result};

/// Backward source coordinates for one frame transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionField {
    pub source_x: Vec<f64>,
    pub source_y: Vec<f64>,
    pub in_bounds: Vec<bool>,
}

impl TransitionField {
    pub fn identity(height: usize, width: usize) -> Self {
        let n = height * width;
        let mut source_x = Vec::with_capacity(n);
        let mut source_y = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                source_x.push(x as f64);
                source_y.push(y as f64);
            }
        }
        Self {
            source_x,
            source_y,
            in_bounds: vec![true; n],
        }
    }

    pub fn out_of_bounds_count(&self) -> usize {
        self.in_bounds.iter().filter(|b| !**b).count()
    }
}

/// Discretized reprojection: one [`TransitionField`] per frame transition.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub height: usize,
    pub width: usize,
    pub transitions: Vec<TransitionField>,
}

impl WarpField {
    pub fn frames(&self) -> usize {
        self.transitions.len() + 1
    }

    /// Field for the transition into frame `t` (`1 ≤ t < frames`).
    pub fn into_frame(&self, t: usize) -> &TransitionField {
        &self.transitions[t - 1]
    }
}

/// Evaluates every backward homography at every pixel centre.
pub fn build_warp_field(template: &CameraTemplate, dims: (usize, usize, usize)) -> Result<WarpField> {
    let (frames, height, width) = dims;
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidShape(format!("warp dims {dims:?}")));
    }
    if template.frames() != frames {
        return Err(Error::Shape(format!(
            "template has {} transitions, {frames} frames need {}",
            template.transitions.len(),
            frames - 1
        )));
    }
    let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
    let transitions = template
        .transitions
        .iter()
        .map(|h| {
            if h.is_identity() {
                return TransitionField::identity(height, width);
            }
            let n = height * width;
            let mut field = TransitionField {
                source_x: Vec::with_capacity(n),
                source_y: Vec::with_capacity(n),
                in_bounds: Vec::with_capacity(n),
            };
            for y in 0..height {
                for x in 0..width {
                    let (sx, sy) = h.apply(x as f64, y as f64);
                    field.source_x.push(sx);
                    field.source_y.push(sy);
                    field
                        .in_bounds
                        .push((0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy));
                }
            }
            field
        })
        .collect();
    Ok(WarpField {
        height,
        width,
        transitions,
    })
}
