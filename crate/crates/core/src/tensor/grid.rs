use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RngStream;
use crate::{Error, Result};

/// Upper bound on the number of elements in a single grid.
pub const MAX_ELEMENTS: usize = 1 << 28;

/// Frame, row, column and channel extents of a [`LatentGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        let shape = Self {
            frames,
            height,
            width,
            channels,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.frames, self.height, self.width, self.channels];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("zero dimension in {self}")));
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Capacity(format!("{self} overflows usize")))?;
        if total > MAX_ELEMENTS {
            return Err(Error::Capacity(format!(
                "{self} has {total} elements, cap is {MAX_ELEMENTS}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

impl FromStr for GridShape {
    type Err = Error;

    /// Parses `TxHxWxC`, e.g. `8x16x16x4`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != 4 {
            return Err(Error::Parse(format!("shape {s:?} is not TxHxWxC")));
        }
        let mut dims = [0usize; 4];
        for (d, p) in dims.iter_mut().zip(&parts) {
            *d = p
                .parse()
                .map_err(|_| Error::Parse(format!("shape component {p:?} in {s:?}")))?;
        }
        GridShape::new(dims[0], dims[1], dims[2], dims[3])
    }
}

/// A `T×H×W×C` block of `f32` values in `[t][h][w][c]` row-major order.
#[derive(Clone, PartialEq)]
pub struct LatentGrid {
    shape: GridShape,
    data: Vec<f32>,
}

impl fmt::Debug for LatentGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatentGrid")
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl LatentGrid {
    pub fn zeros(shape: GridShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            data: vec![0.0; shape.len()],
        })
    }

    /// Wraps `data`, rejecting wrong lengths and non-finite values.
    pub fn from_vec(shape: GridShape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Length(format!(
                "expected {} values for {shape}, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at element {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn from_frames(shape: GridShape, frames: Vec<Vec<f32>>) -> Result<Self> {
        if frames.len() != shape.frames {
            return Err(Error::Shape(format!(
                "{} frames supplied for {shape}",
                frames.len()
            )));
        }
        let mut data = Vec::with_capacity(shape.len());
        for f in frames {
            if f.len() != shape.frame_len() {
                return Err(Error::Shape(format!(
                    "frame of length {} for {shape}",
                    f.len()
                )));
            }
            data.extend_from_slice(&f);
        }
        Self::from_vec(shape, data)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.shape.index(t, y, x, c)]
    }

    /// Exact bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &LatentGrid) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Sample mean and unbiased variance of each frame, accumulated in `f64`.
    pub fn frame_moments(&self) -> Vec<(f64, f64)> {
        self.data
            .chunks_exact(self.shape.frame_len())
            .map(|f| {
                let n = f.len() as f64;
                let mean = f.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
                let ss = f.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>();
                (mean, if f.len() > 1 { ss / (n - 1.0) } else { 0.0 })
            })
            .collect()
    }

    /// Mean over all channels of each pixel, per frame: `T×H×W` values.
    pub fn channel_mean(&self) -> Vec<f64> {
        let c = self.shape.channels;
        self.data
            .chunks_exact(c)
            .map(|px| px.iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64)
            .collect()
    }
}

/// Fills a grid with independent standard normal draws.
///
/// Frame `t` is drawn from the stream labelled `("init", t)`, so the result
/// does not depend on the order frames are produced in.
pub fn gaussian_grid(shape: GridShape, seed: u64) -> Result<LatentGrid> {
    shape.validate()?;
    let n = shape.frame_len();
    let mut data = vec![0.0f32; shape.len()];
    for (t, frame) in data.chunks_exact_mut(n).enumerate() {
        RngStream::new(seed, "init", t as u64).fill_gaussian(frame);
    }
    Ok(LatentGrid { shape, data })
}
