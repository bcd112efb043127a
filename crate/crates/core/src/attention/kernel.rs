//! Dense multi-head attention over contiguous row blocks, with the cached
//! probabilities needed for a backward pass.

use crate::tensor::Real;

/// Output and softmax probabilities of one block attention call.
///
/// `probs` is laid out `[head][query][key]`.
#[derive(Debug, Clone)]
pub struct BlockAttention<F> {
    pub out: Vec<F>,
    pub probs: Vec<F>,
}

/// Softmax attention of `queries` (`nq × heads·head_dim`) against `keys` and
/// `values` (`nk × heads·head_dim`), scale `1/√head_dim`, heads independent.
///
/// Sums run in key order, so results are reproducible bit for bit.
pub fn attend_block<F: Real>(
    queries: &[F],
    keys: &[F],
    values: &[F],
    heads: usize,
    head_dim: usize,
) -> BlockAttention<F> {
    let width = heads * head_dim;
    let nq = queries.len() / width;
    let nk = keys.len() / width;
    debug_assert!(nk > 0, "attention needs at least one key");
    let scale = F::one() / F::of(head_dim as f64).sqrt();
    let mut out = vec![F::zero(); nq * width];
    let mut probs = vec![F::zero(); heads * nq * nk];
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..nq {
            let q = &queries[i * width + off..i * width + off + head_dim];
            let p = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let mut max = F::neg_infinity();
            for (j, pj) in p.iter_mut().enumerate() {
                let k = &keys[j * width + off..j * width + off + head_dim];
                let mut s = F::zero();
                for (a, b) in q.iter().zip(k) {
                    s += *a * *b;
                }
                *pj = s * scale;
                if *pj > max {
                    max = *pj;
                }
            }
            let mut total = F::zero();
            for pj in p.iter_mut() {
                *pj = (*pj - max).exp();
                total += *pj;
            }
            let inv = F::one() / total;
            // Accumulate v₀ + Σ pⱼ (vⱼ - v₀): exact when all values agree.
            let anchor = &values[off..off + head_dim];
            let o = &mut out[i * width + off..i * width + off + head_dim];
            o.copy_from_slice(anchor);
            for (j, pj) in p.iter_mut().enumerate() {
                *pj *= inv;
                let v = &values[j * width + off..j * width + off + head_dim];
                for ((oc, vc), ac) in o.iter_mut().zip(v).zip(anchor) {
                    *oc += *pj * (*vc - *ac);
                }
            }
        }
    }
    BlockAttention { out, probs }
}

/// Gradients of [`attend_block`] with respect to its three inputs.
pub struct BlockGrads<F> {
    pub d_queries: Vec<F>,
    pub d_keys: Vec<F>,
    pub d_values: Vec<F>,
}

pub fn attend_block_backward<F: Real>(
    queries: &[F],
    keys: &[F],
    values: &[F],
    probs: &[F],
    d_out: &[F],
    heads: usize,
    head_dim: usize,
) -> BlockGrads<F> {
    let width = heads * head_dim;
    let nq = queries.len() / width;
    let nk = keys.len() / width;
    let scale = F::one() / F::of(head_dim as f64).sqrt();
    let mut d_queries = vec![F::zero(); queries.len()];
    let mut d_keys = vec![F::zero(); keys.len()];
    let mut d_values = vec![F::zero(); values.len()];
    let mut dp = vec![F::zero(); nk];
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..nq {
            let p = &probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let go = &d_out[i * width + off..i * width + off + head_dim];
            let mut weighted = F::zero();
            for j in 0..nk {
                let v = &values[j * width + off..j * width + off + head_dim];
                let dv = &mut d_values[j * width + off..j * width + off + head_dim];
                let mut s = F::zero();
                for c in 0..head_dim {
                    dv[c] += p[j] * go[c];
                    s += go[c] * v[c];
                }
                dp[j] = s;
                weighted += s * p[j];
            }
            let q = &queries[i * width + off..i * width + off + head_dim];
            for j in 0..nk {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == F::zero() {
                    continue;
                }
                let k = &keys[j * width + off..j * width + off + head_dim];
                let dq = &mut d_queries[i * width + off..i * width + off + head_dim];
                for c in 0..head_dim {
                    dq[c] += ds * k[c];
                }
                let dk = &mut d_keys[j * width + off..j * width + off + head_dim];
                for c in 0..head_dim {
                    dk[c] += ds * q[c];
                }
            }
        }
    }
    BlockGrads {
        d_queries,
        d_keys,
        d_values,
    }
}

/// Copies the listed rows of a `rows × width` matrix into a new block.
pub fn gather_rows<F: Copy>(matrix: &[F], width: usize, rows: &[usize]) -> Vec<F> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&matrix[r * width..(r + 1) * width]);
    }
    out
}

/// Adds the rows of `block` back into `matrix` at the listed row indices.
pub fn scatter_add_rows<F: Real>(matrix: &mut [F], width: usize, rows: &[usize], block: &[F]) {
    for (b, &r) in rows.iter().enumerate() {
        for (m, &v) in matrix[r * width..(r + 1) * width]
            .iter_mut()
            .zip(&block[b * width..(b + 1) * width])
        {
            *m += v;
        }
    }
}
