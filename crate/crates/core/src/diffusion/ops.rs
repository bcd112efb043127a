//! Row-major dense ops with matching backward passes.

use crate::tensor::Real;

/// `x (rows × inner) · w (inner × cols)`.
pub fn matmul<F: Real>(x: &[F], w: &[F], inner: usize, cols: usize) -> Vec<F> {
    let rows = x.len() / inner;
    let mut y = vec![F::zero(); rows * cols];
    for r in 0..rows {
        let yr = &mut y[r * cols..(r + 1) * cols];
        for (i, &xv) in x[r * inner..(r + 1) * inner].iter().enumerate() {
            if xv == F::zero() {
                continue;
            }
            for (yo, &wv) in yr.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                *yo += xv * wv;
            }
        }
    }
    y
}

pub fn add_row_bias<F: Real>(y: &mut [F], bias: &[F]) {
    for row in y.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates `dW += xᵀ dy` and returns `dx = dy wᵀ`.
pub fn matmul_backward<F: Real>(
    x: &[F],
    w: &[F],
    dy: &[F],
    d_w: &mut [F],
    inner: usize,
    cols: usize,
) -> Vec<F> {
    let rows = x.len() / inner;
    let mut dx = vec![F::zero(); rows * inner];
    for r in 0..rows {
        let dyr = &dy[r * cols..(r + 1) * cols];
        let xr = &x[r * inner..(r + 1) * inner];
        let dxr = &mut dx[r * inner..(r + 1) * inner];
        for i in 0..inner {
            let wr = &w[i * cols..(i + 1) * cols];
            let dwr = &mut d_w[i * cols..(i + 1) * cols];
            let xv = xr[i];
            let mut acc = F::zero();
            for o in 0..cols {
                acc += dyr[o] * wr[o];
                dwr[o] += xv * dyr[o];
            }
            dxr[i] = acc;
        }
    }
    dx
}

pub fn bias_backward<F: Real>(dy: &[F], d_b: &mut [F]) {
    for row in dy.chunks(d_b.len()) {
        for (g, &v) in d_b.iter_mut().zip(row) {
            *g += v;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<F> {
    pub normalized: Vec<F>,
    pub inv_std: Vec<F>,
}

pub fn layer_norm<F: Real>(x: &[F], gain: &[F], bias: &[F]) -> (Vec<F>, NormCache<F>) {
    let d = gain.len();
    let rows = x.len() / d;
    let n = F::of(d as f64);
    let eps = F::of(LN_EPS);
    let mut y = vec![F::zero(); x.len()];
    let mut normalized = vec![F::zero(); x.len()];
    let mut inv_std = vec![F::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<F>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let is = F::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let nv = (xr[c] - mean) * is;
            normalized[r * d + c] = nv;
            y[r * d + c] = nv * gain[c] + bias[c];
        }
    }
    (y, NormCache { normalized, inv_std })
}

pub fn layer_norm_backward<F: Real>(
    cache: &NormCache<F>,
    gain: &[F],
    dy: &[F],
    d_gain: &mut [F],
    d_bias: &mut [F],
) -> Vec<F> {
    let d = gain.len();
    let n = F::of(d as f64);
    let mut dx = vec![F::zero(); dy.len()];
    for (r, &is) in cache.inv_std.iter().enumerate() {
        let xh = &cache.normalized[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let mut sum_dxh = F::zero();
        let mut sum_dxh_xh = F::zero();
        for c in 0..d {
            d_gain[c] += g[c] * xh[c];
            d_bias[c] += g[c];
            let dxh = g[c] * gain[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
        }
        for c in 0..d {
            let dxh = g[c] * gain[c];
            dx[r * d + c] = is * (dxh - sum_dxh / n - xh[c] * sum_dxh_xh / n);
        }
    }
    dx
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn silu<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward<F: Real>(x: &[F], dy: &[F]) -> Vec<F> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (F::one() + v * (F::one() - s))
        })
        .collect()
}

/// Sinusoidal embedding of a diffusion step: sines then cosines over
/// geometrically spaced frequencies.
pub fn timestep_embedding<F: Real>(step: usize, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = step as f64 * freq;
        out[i] = F::of(arg.sin());
        out[half + i] = F::of(arg.cos());
    }
    out
}
