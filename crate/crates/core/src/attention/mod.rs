//! Sparse inter-shot attention.
//!
//! Tokens attend densely inside their own shot. Across shots, information
//! flows only through a global cache holding the first `S` tokens of every
//! shot. A query in shot `i` sees the cache rows of all *other* shots
//! followed by every row of shot `i`; its own summary rows are not repeated
//! because they already appear among the shot's own keys.

pub mod kernel;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, RngStream};
use crate::{Error, Result};
use kernel::{attend_block, gather_rows};

/// Shot boundaries over a flat token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotLayout {
    shot_lengths: Vec<usize>,
    tokens_per_frame: usize,
}

impl ShotLayout {
    pub fn new(shot_lengths: Vec<usize>, tokens_per_frame: usize) -> Result<Self> {
        if shot_lengths.is_empty() {
            return Err(Error::Layout("layout needs at least one shot".into()));
        }
        if tokens_per_frame == 0 {
            return Err(Error::Layout("tokens_per_frame must be ≥ 1".into()));
        }
        for (i, &l) in shot_lengths.iter().enumerate() {
            if l < tokens_per_frame || l % tokens_per_frame != 0 {
                return Err(Error::Layout(format!(
                    "shot {i} has {l} tokens, not a positive multiple of {tokens_per_frame}"
                )));
            }
        }
        Ok(Self {
            shot_lengths,
            tokens_per_frame,
        })
    }

    /// `shots` shots of `frames_per_shot` frames each.
    pub fn uniform(shots: usize, frames_per_shot: usize, tokens_per_frame: usize) -> Result<Self> {
        Self::new(vec![frames_per_shot * tokens_per_frame; shots], tokens_per_frame)
    }

    pub fn shot_lengths(&self) -> &[usize] {
        &self.shot_lengths
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn num_shots(&self) -> usize {
        self.shot_lengths.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.shot_lengths.iter().sum()
    }

    pub fn total_frames(&self) -> usize {
        self.total_tokens() / self.tokens_per_frame
    }

    pub fn shot_range(&self, shot: usize) -> Range<usize> {
        let start: usize = self.shot_lengths[..shot].iter().sum();
        start..start + self.shot_lengths[shot]
    }

    pub fn shot_ranges(&self) -> Vec<Range<usize>> {
        (0..self.num_shots()).map(|i| self.shot_range(i)).collect()
    }

    pub fn shot_of(&self, token: usize) -> Option<usize> {
        let mut end = 0;
        for (i, &l) in self.shot_lengths.iter().enumerate() {
            end += l;
            if token < end {
                return Some(i);
            }
        }
        None
    }
}

/// How many leading tokens of each shot's first frame are shared globally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPolicy {
    pub summary_tokens: usize,
}

impl SummaryPolicy {
    pub fn new(summary_tokens: usize) -> Self {
        Self { summary_tokens }
    }

    /// The whole first frame of every shot.
    pub fn full_first_frame(layout: &ShotLayout) -> Self {
        Self::new(layout.tokens_per_frame)
    }

    pub fn validate(&self, layout: &ShotLayout) -> Result<()> {
        if self.summary_tokens > layout.tokens_per_frame {
            return Err(Error::Policy(format!(
                "S = {} exceeds tokens_per_frame = {}",
                self.summary_tokens, layout.tokens_per_frame
            )));
        }
        Ok(())
    }
}

/// Global token indices of each shot's summary tokens.
pub fn select_summary(layout: &ShotLayout, policy: &SummaryPolicy) -> Result<Vec<Vec<usize>>> {
    policy.validate(layout)?;
    Ok(layout
        .shot_ranges()
        .into_iter()
        .map(|r| (r.start..r.start + policy.summary_tokens).collect())
        .collect())
}

/// Per-head query, key and value rows, each `tokens × heads·head_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs<F = f32> {
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
    pub heads: usize,
    pub head_dim: usize,
}

impl<F: Real> AttentionInputs<F> {
    pub fn new(q: Vec<F>, k: Vec<F>, v: Vec<F>, heads: usize, head_dim: usize) -> Result<Self> {
        let inputs = Self {
            q,
            k,
            v,
            heads,
            head_dim,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn tokens(&self) -> usize {
        self.q.len() / self.width().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        if w == 0 {
            return Err(Error::Shape("heads and head_dim must be ≥ 1".into()));
        }
        if self.q.len() % w != 0 || self.q.len() != self.k.len() || self.q.len() != self.v.len() {
            return Err(Error::Shape(format!(
                "q/k/v lengths {}/{}/{} are not matching multiples of width {w}",
                self.q.len(),
                self.k.len(),
                self.v.len()
            )));
        }
        Ok(())
    }

    fn check_layout(&self, layout: &ShotLayout) -> Result<()> {
        self.validate()?;
        if self.tokens() != layout.total_tokens() {
            return Err(Error::Shape(format!(
                "{} tokens for a layout of {}",
                self.tokens(),
                layout.total_tokens()
            )));
        }
        Ok(())
    }
}

/// Concatenated summary keys and values, ordered by shot.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCache<F = f32> {
    pub keys: Vec<F>,
    pub values: Vec<F>,
    pub width: usize,
    /// Cache row range owned by each shot.
    pub shot_rows: Vec<Range<usize>>,
    /// Source token of each cache row.
    pub token_index: Vec<usize>,
}

impl<F: Real> GlobalCache<F> {
    pub fn rows(&self) -> usize {
        self.token_index.len()
    }

    /// Cache rows visible to `shot`: every row except the shot's own.
    pub fn view_excluding(&self, shot: usize) -> Vec<usize> {
        let own = &self.shot_rows[shot];
        (0..self.rows()).filter(|r| !own.contains(r)).collect()
    }

    /// Source tokens of [`Self::view_excluding`].
    pub fn tokens_excluding(&self, shot: usize) -> Vec<usize> {
        self.view_excluding(shot)
            .into_iter()
            .map(|r| self.token_index[r])
            .collect()
    }
}

pub fn build_global_cache<F: Real>(
    inputs: &AttentionInputs<F>,
    summaries: &[Vec<usize>],
) -> Result<GlobalCache<F>> {
    inputs.validate()?;
    let width = inputs.width();
    let n = inputs.tokens();
    let mut shot_rows = Vec::with_capacity(summaries.len());
    let mut token_index = Vec::new();
    for s in summaries {
        if let Some(&bad) = s.iter().find(|&&t| t >= n) {
            return Err(Error::Internal(format!(
                "summary token {bad} out of range for {n} tokens"
            )));
        }
        let start = token_index.len();
        token_index.extend_from_slice(s);
        shot_rows.push(start..token_index.len());
    }
    Ok(GlobalCache {
        keys: gather_rows(&inputs.k, width, &token_index),
        values: gather_rows(&inputs.v, width, &token_index),
        width,
        shot_rows,
        token_index,
    })
}

/// Key rows, as token indices, that queries of `shot` attend to: other
/// shots' summaries in shot order, then the shot's own tokens.
pub fn shot_key_tokens(layout: &ShotLayout, policy: &SummaryPolicy, shot: usize) -> Result<Vec<usize>> {
    policy.validate(layout)?;
    let mut keys = Vec::new();
    for (j, r) in layout.shot_ranges().into_iter().enumerate() {
        if j != shot {
            keys.extend(r.start..r.start + policy.summary_tokens);
        }
    }
    keys.extend(layout.shot_range(shot));
    Ok(keys)
}

/// Sparse shot attention; returns the `tokens × width` output.
pub fn sparse_shot_attention<F: Real>(
    inputs: &AttentionInputs<F>,
    layout: &ShotLayout,
    policy: &SummaryPolicy,
) -> Result<Vec<F>> {
    sparse_shot_attention_counted(inputs, layout, policy).map(|(out, _)| out)
}

/// Like [`sparse_shot_attention`], also returning the number of
/// query–key pairs scored per head.
pub fn sparse_shot_attention_counted<F: Real>(
    inputs: &AttentionInputs<F>,
    layout: &ShotLayout,
    policy: &SummaryPolicy,
) -> Result<(Vec<F>, u64)> {
    inputs.check_layout(layout)?;
    let summaries = select_summary(layout, policy)?;
    let cache = build_global_cache(inputs, &summaries)?;
    let width = inputs.width();
    let mut out = vec![F::zero(); inputs.q.len()];
    let mut pairs = 0u64;
    for (shot, range) in layout.shot_ranges().into_iter().enumerate() {
        let view = cache.view_excluding(shot);
        let mut keys = gather_rows(&cache.keys, width, &view);
        let mut values = gather_rows(&cache.values, width, &view);
        keys.extend_from_slice(&inputs.k[range.start * width..range.end * width]);
        values.extend_from_slice(&inputs.v[range.start * width..range.end * width]);
        let queries = &inputs.q[range.start * width..range.end * width];
        let block = attend_block(queries, &keys, &values, inputs.heads, inputs.head_dim);
        pairs += (range.len() * (keys.len() / width)) as u64;
        out[range.start * width..range.end * width].copy_from_slice(&block.out);
    }
    Ok((out, pairs))
}

/// Plain full attention over the whole sequence.
pub fn dense_attention<F: Real>(inputs: &AttentionInputs<F>) -> Result<Vec<F>> {
    inputs.validate()?;
    Ok(attend_block(&inputs.q, &inputs.k, &inputs.v, inputs.heads, inputs.head_dim).out)
}

/// Row-major `N × N` boolean mask; `true` means the query may see the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n * n {
            return Err(Error::Mask(format!("{} entries for {n}×{n}", allowed.len())));
        }
        Ok(Self { n, allowed })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.n..(q + 1) * self.n]
    }

    pub fn count_true(&self) -> u64 {
        self.allowed.iter().filter(|b| **b).count() as u64
    }
}

/// `mask[q][k]` is true iff `k` shares `q`'s shot or is a summary token of
/// another shot.
pub fn build_pattern_mask(layout: &ShotLayout, policy: &SummaryPolicy) -> Result<AttentionMask> {
    policy.validate(layout)?;
    let n = layout.total_tokens();
    let ranges = layout.shot_ranges();
    let mut allowed = vec![false; n * n];
    for (i, ri) in ranges.iter().enumerate() {
        for q in ri.clone() {
            let row = &mut allowed[q * n..(q + 1) * n];
            for (j, rj) in ranges.iter().enumerate() {
                let cols = if i == j {
                    rj.clone()
                } else {
                    rj.start..rj.start + policy.summary_tokens
                };
                for k in cols {
                    row[k] = true;
                }
            }
        }
    }
    AttentionMask::new(n, allowed)
}

/// Reference attention under an explicit mask: softmax over permitted
/// columns only, accumulated in `f64`.
pub fn masked_dense_oracle<F: Real>(inputs: &AttentionInputs<F>, mask: &AttentionMask) -> Result<Vec<F>> {
    inputs.validate()?;
    let n = inputs.tokens();
    if mask.size() != n {
        return Err(Error::Shape(format!("mask of size {} for {n} tokens", mask.size())));
    }
    let (width, d) = (inputs.width(), inputs.head_dim);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![F::zero(); n * width];
    for q in 0..n {
        let cols: Vec<usize> = (0..n).filter(|&k| mask.get(q, k)).collect();
        if cols.is_empty() {
            return Err(Error::Mask(format!("row {q} has no permitted column")));
        }
        for h in 0..inputs.heads {
            let off = h * d;
            let logits: Vec<f64> = cols
                .iter()
                .map(|&k| {
                    (0..d)
                        .map(|c| inputs.q[q * width + off + c].to_f64_lossy() * inputs.k[k * width + off + c].to_f64_lossy())
                        .sum::<f64>()
                        * scale
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            for c in 0..d {
                let acc: f64 = cols
                    .iter()
                    .zip(&weights)
                    .map(|(&k, w)| w * inputs.v[k * width + off + c].to_f64_lossy())
                    .sum();
                out[q * width + off + c] = F::of(acc / total);
            }
        }
    }
    Ok(out)
}

/// Cross-attention where each shot's tokens see only that shot's text rows.
///
/// `text_keys[i]` and `text_values[i]` are `M_i × heads·head_dim` blocks,
/// already projected.
pub fn windowed_cross_attention<F: Real>(
    queries: &[F],
    text_keys: &[Vec<F>],
    text_values: &[Vec<F>],
    layout: &ShotLayout,
    heads: usize,
    head_dim: usize,
) -> Result<Vec<F>> {
    let width = heads * head_dim;
    if text_keys.len() != layout.num_shots() || text_values.len() != layout.num_shots() {
        return Err(Error::Layout(format!(
            "{} text sequences for {} shots",
            text_keys.len(),
            layout.num_shots()
        )));
    }
    if width == 0 || queries.len() != layout.total_tokens() * width {
        return Err(Error::Shape(format!(
            "{} query values for {} tokens of width {width}",
            queries.len(),
            layout.total_tokens()
        )));
    }
    let mut out = vec![F::zero(); queries.len()];
    for (i, range) in layout.shot_ranges().into_iter().enumerate() {
        let (k, v) = (&text_keys[i], &text_values[i]);
        if k.is_empty() || k.len() != v.len() || k.len() % width != 0 {
            return Err(Error::Shape(format!("shot {i} text block has {} / {} values", k.len(), v.len())));
        }
        let block = attend_block(&queries[range.start * width..range.end * width], k, v, heads, head_dim);
        out[range.start * width..range.end * width].copy_from_slice(&block.out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub sparse_pairs: u64,
    pub dense_pairs: u64,
    pub ratio: f64,
}

/// Closed-form pair counts: `Σ lᵢ·(lᵢ + (N_s-1)·S)` against `N²`.
pub fn count_attention_pairs(layout: &ShotLayout, policy: &SummaryPolicy) -> Result<PairCount> {
    policy.validate(layout)?;
    let n = layout.total_tokens() as u64;
    let others = (layout.num_shots() as u64 - 1) * policy.summary_tokens as u64;
    let sparse_pairs: u64 = layout
        .shot_lengths()
        .iter()
        .map(|&l| l as u64 * (l as u64 + others))
        .sum();
    let dense_pairs = n * n;
    Ok(PairCount {
        sparse_pairs,
        dense_pairs,
        ratio: sparse_pairs as f64 / dense_pairs as f64,
    })
}

/// Outcome of [`oracle_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    /// Largest |sparse − masked dense| over all trials.
    pub max_abs_diff: f64,
    /// Largest |sparse − dense| over the single-shot trials.
    pub max_single_shot_diff: f64,
    /// Trials whose instrumented pair count differed from the closed form.
    pub count_mismatches: usize,
}

/// A random layout, policy and `f32` inputs drawn from `rng`.
pub fn random_instance(rng: &mut RngStream) -> Result<(ShotLayout, SummaryPolicy, AttentionInputs<f32>)> {
    let shots = 1 + rng.below(4);
    let tpf = 1 + rng.below(4);
    let lengths = (0..shots).map(|_| tpf * (1 + rng.below(3))).collect();
    let layout = ShotLayout::new(lengths, tpf)?;
    let policy = SummaryPolicy::new(rng.below(tpf + 1));
    let (heads, head_dim) = (1 + rng.below(2), 1 + rng.below(4));
    let n = layout.total_tokens() * heads * head_dim;
    let mut draw = || (0..n).map(|_| rng.gaussian()).collect::<Vec<f32>>();
    let (q, k, v) = (draw(), draw(), draw());
    Ok((layout, policy, AttentionInputs::new(q, k, v, heads, head_dim)?))
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from((x - y).abs()))
        .fold(0.0, f64::max)
}

/// Compares the sparse path with the masked dense oracle on `trials` random
/// instances, plus the single-shot reduction to dense attention.
pub fn oracle_suite(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport {
        trials,
        max_abs_diff: 0.0,
        max_single_shot_diff: 0.0,
        count_mismatches: 0,
    };
    for i in 0..trials {
        let mut rng = RngStream::new(seed, "attn-oracle", i as u64);
        let (layout, policy, inputs) = random_instance(&mut rng)?;
        let (sparse, pairs) = sparse_shot_attention_counted(&inputs, &layout, &policy)?;
        let oracle = masked_dense_oracle(&inputs, &build_pattern_mask(&layout, &policy)?)?;
        report.max_abs_diff = report.max_abs_diff.max(max_abs_diff(&sparse, &oracle));
        if pairs != count_attention_pairs(&layout, &policy)?.sparse_pairs {
            report.count_mismatches += 1;
        }
        let single = ShotLayout::new(vec![layout.total_tokens()], layout.tokens_per_frame())?;
        let one = sparse_shot_attention(&inputs, &single, &policy)?;
        let dense = dense_attention(&inputs)?;
        report.max_single_shot_diff = report.max_single_shot_diff.max(max_abs_diff(&one, &dense));
    }
    Ok(report)
}
