use serde::{Deserialize, Serialize};

use crate::tensor::LatentGrid;
use crate::{Error, Result};

/// Peak correlations below this (relative to the frame energies) are
/// flagged as unreliable.
pub const LOW_CONFIDENCE: f64 = 1e-6;
const TIE_TOLERANCE: f64 = 1e-9;

/// Content shift between consecutive frames: `next(x, y) ≈ prev(x - dx, y - dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: i64,
    pub dy: i64,
    /// Normalized correlation at the chosen shift, in [-1, 1].
    pub confidence: f64,
    pub low_confidence: bool,
}

impl Displacement {
    pub fn magnitude(&self) -> f64 {
        ((self.dx * self.dx + self.dy * self.dy) as f64).sqrt()
    }
}

/// Signed shifts in `(-n/2, n/2]`, smallest magnitude first.
fn shift_range(n: usize) -> Vec<i64> {
    let n = n as i64;
    let mut v: Vec<i64> = (-(n - 1) / 2..=n / 2).collect();
    v.sort_by_key(|s| (s.abs(), *s));
    v
}

fn centred_mean_frame(means: &[f64], t: usize, pixels: usize) -> Vec<f64> {
    let f = &means[t * pixels..(t + 1) * pixels];
    let m = f.iter().sum::<f64>() / pixels as f64;
    f.iter().map(|v| v - m).collect()
}

/// Per-transition integer displacement by circular cross-correlation of
/// channel-averaged, mean-removed frames.
///
/// Ties within a relative `1e-9` go to the smaller `dx² + dy²`, then to the
/// lexicographically smaller `(dx, dy)`.
pub fn estimate_displacement(video: &LatentGrid) -> Result<Vec<Displacement>> {
    let shape = video.shape();
    if shape.frames < 2 {
        return Err(Error::Shape("displacement needs at least two frames".into()));
    }
    let (h, w) = (shape.height, shape.width);
    let pixels = h * w;
    let means = video.channel_mean();
    let mut candidates: Vec<(i64, i64)> = Vec::with_capacity(pixels);
    for dy in shift_range(h) {
        for dx in shift_range(w) {
            candidates.push((dx, dy));
        }
    }
    candidates.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));

    let mut out = Vec::with_capacity(shape.frames - 1);
    let mut prev = centred_mean_frame(&means, 0, pixels);
    for t in 1..shape.frames {
        let next = centred_mean_frame(&means, t, pixels);
        let e_prev: f64 = prev.iter().map(|v| v * v).sum();
        let e_next: f64 = next.iter().map(|v| v * v).sum();
        let norm = (e_prev * e_next).sqrt();
        if norm <= f64::MIN_POSITIVE || !norm.is_finite() {
            out.push(Displacement {
                dx: 0,
                dy: 0,
                confidence: 0.0,
                low_confidence: true,
            });
            prev = next;
            continue;
        }
        let mut best = (0i64, 0i64, f64::NEG_INFINITY);
        for &(dx, dy) in &candidates {
            let mut c = 0.0;
            for y in 0..h {
                let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
                for x in 0..w {
                    let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
                    c += next[y * w + x] * prev[sy * w + sx];
                }
            }
            // Candidates are pre-sorted by the tie-break, so only a clear win
            // replaces the incumbent.
            if c > best.2 + TIE_TOLERANCE * norm {
                best = (dx, dy, c);
            }
        }
        let confidence = best.2 / norm;
        out.push(Displacement {
            dx: best.0,
            dy: best.1,
            confidence,
            low_confidence: confidence.abs() < LOW_CONFIDENCE,
        });
        prev = next;
    }
    Ok(out)
}

/// Mean `(dx, dy)` over all transitions.
pub fn mean_displacement(d: &[Displacement]) -> (f64, f64) {
    if d.is_empty() {
        return (0.0, 0.0);
    }
    let n = d.len() as f64;
    (
        d.iter().map(|v| v.dx as f64).sum::<f64>() / n,
        d.iter().map(|v| v.dy as f64).sum::<f64>() / n,
    )
}
