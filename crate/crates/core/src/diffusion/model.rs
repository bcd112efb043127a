//! A tiny transformer noise predictor with a hand-written backward pass.
//!
//! One token per latent pixel per frame; the channel vector is the token
//! input. Each block applies, with pre-normalization and residuals:
//! sparse shot self-attention, windowed cross-attention to the per-shot
//! text tokens, and a SiLU MLP.

use serde::{Deserialize, Serialize};

use super::ops::{
    add_row_bias, bias_backward, layer_norm, layer_norm_backward, matmul, matmul_backward, silu,
    silu_backward, timestep_embedding, NormCache,
};
use crate::attention::kernel::{attend_block, attend_block_backward, gather_rows, scatter_add_rows};
use crate::attention::{shot_key_tokens, ShotLayout, SummaryPolicy};
use crate::prompt::TextEmbedding;
use crate::tensor::{Real, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Latent channels per token (input and output width).
    pub channels: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    pub time_dim: usize,
    pub text_dim: usize,
    pub blocks: usize,
    /// Summary tokens per shot shared through the global cache.
    pub summary_tokens: usize,
}

impl DenoiserConfig {
    /// The configuration used for the toy experiments.
    pub fn toy(channels: usize) -> Self {
        Self {
            channels,
            model_dim: 16,
            heads: 1,
            head_dim: 8,
            mlp_hidden: 32,
            time_dim: 16,
            text_dim: crate::prompt::DEFAULT_EMBED_DIM,
            blocks: 2,
            summary_tokens: 4,
        }
    }

    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.channels,
            self.model_dim,
            self.heads,
            self.head_dim,
            self.mlp_hidden,
            self.time_dim,
            self.text_dim,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero dimension in {self:?}")));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even".into()));
        }
        Ok(())
    }
}

/// A named weight tensor with its gradient buffer.
///
/// Equality compares names, shapes and values; gradients are scratch space.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: PartialEq> PartialEq for Param<F> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.shape == other.shape && self.value == other.value
    }
}

impl<F: Real> Param<F> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![F::zero(); n],
            grad: vec![F::zero(); n],
        }
    }

    fn filled(name: String, shape: Vec<usize>, v: F) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    fn normal(name: String, shape: Vec<usize>, std: f64, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(name, shape);
        for x in &mut p.value {
            *x = F::of(rng.gaussian_f64() * std);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
}

impl<F: Real> Linear<F> {
    fn new(name: &str, inputs: usize, outputs: usize, bias: bool, std: f64, rng: &mut RngStream) -> Self {
        Self {
            weight: Param::normal(format!("{name}.weight"), vec![inputs, outputs], std, rng),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), vec![outputs])),
        }
    }

    fn inputs(&self) -> usize {
        self.weight.shape[0]
    }

    fn outputs(&self) -> usize {
        self.weight.shape[1]
    }

    fn forward(&self, x: &[F]) -> Vec<F> {
        let mut y = matmul(x, &self.weight.value, self.inputs(), self.outputs());
        if let Some(b) = &self.bias {
            add_row_bias(&mut y, &b.value);
        }
        y
    }

    fn backward(&mut self, x: &[F], dy: &[F]) -> Vec<F> {
        let (inner, cols) = (self.inputs(), self.outputs());
        if let Some(b) = &mut self.bias {
            bias_backward(dy, &mut b.grad);
        }
        matmul_backward(x, &self.weight.value, dy, &mut self.weight.grad, inner, cols)
    }

    fn params(&self) -> Vec<&Param<F>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<F> {
    pub gain: Param<F>,
    pub bias: Param<F>,
}

impl<F: Real> Norm<F> {
    fn new(name: &str, dim: usize) -> Self {
        Self {
            gain: Param::filled(format!("{name}.gain"), vec![dim], F::one()),
            bias: Param::zeros(format!("{name}.bias"), vec![dim]),
        }
    }

    fn forward(&self, x: &[F]) -> (Vec<F>, NormCache<F>) {
        layer_norm(x, &self.gain.value, &self.bias.value)
    }

    fn backward(&mut self, cache: &NormCache<F>, dy: &[F]) -> Vec<F> {
        layer_norm_backward(cache, &self.gain.value, dy, &mut self.gain.grad, &mut self.bias.grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub attn_norm: Norm<F>,
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub attn_out: Linear<F>,
    pub cross_norm: Norm<F>,
    pub cross_query: Linear<F>,
    pub cross_key: Linear<F>,
    pub cross_value: Linear<F>,
    pub cross_out: Linear<F>,
    pub mlp_norm: Norm<F>,
    pub mlp_in: Linear<F>,
    pub mlp_out: Linear<F>,
}

impl<F: Real> Block<F> {
    fn new(i: usize, cfg: &DenoiserConfig, std: f64, rng: &mut RngStream) -> Self {
        let (d, a, t, m) = (cfg.model_dim, cfg.attn_width(), cfg.text_dim, cfg.mlp_hidden);
        let n = |s: &str| format!("blocks.{i}.{s}");
        Self {
            attn_norm: Norm::new(&n("attn_norm"), d),
            query: Linear::new(&n("query"), d, a, false, std, rng),
            key: Linear::new(&n("key"), d, a, false, std, rng),
            value: Linear::new(&n("value"), d, a, false, std, rng),
            attn_out: Linear::new(&n("attn_out"), a, d, true, std, rng),
            cross_norm: Norm::new(&n("cross_norm"), d),
            cross_query: Linear::new(&n("cross_query"), d, a, false, std, rng),
            cross_key: Linear::new(&n("cross_key"), t, a, false, std, rng),
            cross_value: Linear::new(&n("cross_value"), t, a, false, std, rng),
            cross_out: Linear::new(&n("cross_out"), a, d, true, std, rng),
            mlp_norm: Norm::new(&n("mlp_norm"), d),
            mlp_in: Linear::new(&n("mlp_in"), d, m, true, std, rng),
            mlp_out: Linear::new(&n("mlp_out"), m, d, true, std, rng),
        }
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut v = vec![&self.attn_norm.gain, &self.attn_norm.bias];
        for l in [&self.query, &self.key, &self.value, &self.attn_out] {
            v.extend(l.params());
        }
        v.extend([&self.cross_norm.gain, &self.cross_norm.bias]);
        for l in [&self.cross_query, &self.cross_key, &self.cross_value, &self.cross_out] {
            v.extend(l.params());
        }
        v.extend([&self.mlp_norm.gain, &self.mlp_norm.bias]);
        for l in [&self.mlp_in, &self.mlp_out] {
            v.extend(l.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = vec![&mut self.attn_norm.gain, &mut self.attn_norm.bias];
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.attn_out] {
            v.extend(l.params_mut());
        }
        v.extend([&mut self.cross_norm.gain, &mut self.cross_norm.bias]);
        for l in [
            &mut self.cross_query,
            &mut self.cross_key,
            &mut self.cross_value,
            &mut self.cross_out,
        ] {
            v.extend(l.params_mut());
        }
        v.extend([&mut self.mlp_norm.gain, &mut self.mlp_norm.bias]);
        for l in [&mut self.mlp_in, &mut self.mlp_out] {
            v.extend(l.params_mut());
        }
        v
    }
}

/// All denoiser weights, in a fixed visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<F = f32> {
    pub config: DenoiserConfig,
    pub embed: Linear<F>,
    pub time: Linear<F>,
    pub blocks: Vec<Block<F>>,
    pub final_norm: Norm<F>,
    pub unembed: Linear<F>,
}

pub const INIT_STD: f64 = 0.02;

impl<F: Real> DenoiserParams<F> {
    /// Projection weights `𝓝(0, 0.02²)`, biases zero, norm gains one.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: DenoiserConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed, "denoiser-init", 0);
        let d = config.model_dim;
        Ok(Self {
            config,
            embed: Linear::new("embed", config.channels, d, true, std, &mut rng),
            time: Linear::new("time", config.time_dim, d, true, std, &mut rng),
            blocks: (0..config.blocks)
                .map(|i| Block::new(i, &config, std, &mut rng))
                .collect(),
            final_norm: Norm::new("final_norm", d),
            unembed: Linear::new("unembed", d, config.channels, true, std, &mut rng),
        })
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.embed.params();
        v.extend(self.time.params());
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend([&self.final_norm.gain, &self.final_norm.bias]);
        v.extend(self.unembed.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.embed.params_mut();
        v.extend(self.time.params_mut());
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend([&mut self.final_norm.gain, &mut self.final_norm.bias]);
        v.extend(self.unembed.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Same weights in another float type.
    pub fn cast<G: Real>(&self) -> DenoiserParams<G> {
        let mut out = DenoiserParams::<G>::init_with_std(self.config, 0, 0.0).expect("validated config");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.value.iter_mut().zip(&src.value) {
                *d = G::of(s.to_f64_lossy());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Plain gradient descent step `θ ← θ - lr·∇θ`.
    pub fn sgd_step(&mut self, lr: F) {
        for p in self.params_mut() {
            for (v, &g) in p.value.iter_mut().zip(&p.grad) {
                *v -= lr * g;
            }
        }
    }

    fn check_inputs(&self, tokens: usize, text: &[Vec<Vec<F>>], layout: &ShotLayout) -> Result<()> {
        let cfg = &self.config;
        if tokens != layout.total_tokens() {
            return Err(Error::Shape(format!(
                "{tokens} tokens for a layout of {}",
                layout.total_tokens()
            )));
        }
        SummaryPolicy::new(cfg.summary_tokens).validate(layout)?;
        if text.len() != layout.num_shots() {
            return Err(Error::Layout(format!(
                "{} text sequences for {} shots",
                text.len(),
                layout.num_shots()
            )));
        }
        for (i, seq) in text.iter().enumerate() {
            if seq.is_empty() || seq.iter().any(|t| t.len() != cfg.text_dim) {
                return Err(Error::Shape(format!(
                    "shot {i} text must be ≥ 1 tokens of dim {}",
                    cfg.text_dim
                )));
            }
        }
        Ok(())
    }

    /// Predicts noise for `x` (`tokens × channels`).
    pub fn forward(&self, x: &[F], step: usize, text: &[Vec<Vec<F>>], layout: &ShotLayout) -> Result<Vec<F>> {
        self.forward_cached(x, step, text, layout).map(|(y, _)| y)
    }

    pub(crate) fn forward_cached(
        &self,
        x: &[F],
        step: usize,
        text: &[Vec<Vec<F>>],
        layout: &ShotLayout,
    ) -> Result<(Vec<F>, ForwardCache<F>)> {
        let cfg = self.config;
        if x.len() % cfg.channels != 0 {
            return Err(Error::Shape(format!(
                "{} input values are not a multiple of {} channels",
                x.len(),
                cfg.channels
            )));
        }
        let tokens = x.len() / cfg.channels;
        self.check_inputs(tokens, text, layout)?;
        let policy = SummaryPolicy::new(cfg.summary_tokens);
        let shot_keys = (0..layout.num_shots())
            .map(|s| shot_key_tokens(layout, &policy, s))
            .collect::<Result<Vec<_>>>()?;
        let text_flat: Vec<Vec<F>> = text.iter().map(|seq| seq.concat()).collect();

        let time_in = timestep_embedding::<F>(step, cfg.time_dim);
        let time_vec = self.time.forward(&time_in);
        let mut h = self.embed.forward(x);
        add_row_bias(&mut h, &time_vec);

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (h_out, cache) = block_forward(block, &cfg, h, layout, &shot_keys, &text_flat);
            h = h_out;
            blocks.push(cache);
        }
        let (normed, final_cache) = self.final_norm.forward(&h);
        let y = self.unembed.forward(&normed);
        Ok((
            y,
            ForwardCache {
                x: x.to_vec(),
                time_in,
                blocks,
                final_in: normed,
                final_cache,
                shot_keys,
                text_flat,
                layout: layout.clone(),
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradient `dy`.
    pub(crate) fn backward(&mut self, cache: &ForwardCache<F>, dy: &[F]) {
        let cfg = self.config;
        let d_normed = self.unembed.backward(&cache.final_in, dy);
        let mut dh = self.final_norm.backward(&cache.final_cache, &d_normed);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dh = block_backward(block, &cfg, bc, dh, &cache.layout, &cache.shot_keys, &cache.text_flat);
        }
        let mut d_time = vec![F::zero(); cfg.model_dim];
        bias_backward(&dh, &mut d_time);
        self.time.backward(&cache.time_in, &d_time);
        self.embed.backward(&cache.x, &dh);
    }
}

pub(crate) struct ForwardCache<F> {
    x: Vec<F>,
    time_in: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    final_in: Vec<F>,
    final_cache: NormCache<F>,
    shot_keys: Vec<Vec<usize>>,
    text_flat: Vec<Vec<F>>,
    layout: ShotLayout,
}

struct BlockCache<F> {
    attn_in: Vec<F>,
    attn_norm: NormCache<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    attn_probs: Vec<Vec<F>>,
    attn_mix: Vec<F>,
    cross_in: Vec<F>,
    cross_norm: NormCache<F>,
    cq: Vec<F>,
    ck: Vec<Vec<F>>,
    cv: Vec<Vec<F>>,
    cross_probs: Vec<Vec<F>>,
    cross_mix: Vec<F>,
    mlp_in: Vec<F>,
    mlp_norm: NormCache<F>,
    pre_act: Vec<F>,
    act: Vec<F>,
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn block_forward<F: Real>(
    block: &Block<F>,
    cfg: &DenoiserConfig,
    mut h: Vec<F>,
    layout: &ShotLayout,
    shot_keys: &[Vec<usize>],
    text_flat: &[Vec<F>],
) -> (Vec<F>, BlockCache<F>) {
    let w = cfg.attn_width();

    let (attn_in, attn_norm) = block.attn_norm.forward(&h);
    let q = block.query.forward(&attn_in);
    let k = block.key.forward(&attn_in);
    let v = block.value.forward(&attn_in);
    let mut attn_mix = vec![F::zero(); q.len()];
    let mut attn_probs = Vec::with_capacity(layout.num_shots());
    for (range, keys) in layout.shot_ranges().into_iter().zip(shot_keys) {
        let kb = gather_rows(&k, w, keys);
        let vb = gather_rows(&v, w, keys);
        let out = attend_block(&q[range.start * w..range.end * w], &kb, &vb, cfg.heads, cfg.head_dim);
        attn_mix[range.start * w..range.end * w].copy_from_slice(&out.out);
        attn_probs.push(out.probs);
    }
    add_into(&mut h, &block.attn_out.forward(&attn_mix));

    let (cross_in, cross_norm) = block.cross_norm.forward(&h);
    let cq = block.cross_query.forward(&cross_in);
    let mut cross_mix = vec![F::zero(); cq.len()];
    let (mut ck, mut cv, mut cross_probs) = (Vec::new(), Vec::new(), Vec::new());
    for (range, txt) in layout.shot_ranges().into_iter().zip(text_flat) {
        let kb = block.cross_key.forward(txt);
        let vb = block.cross_value.forward(txt);
        let out = attend_block(&cq[range.start * w..range.end * w], &kb, &vb, cfg.heads, cfg.head_dim);
        cross_mix[range.start * w..range.end * w].copy_from_slice(&out.out);
        ck.push(kb);
        cv.push(vb);
        cross_probs.push(out.probs);
    }
    add_into(&mut h, &block.cross_out.forward(&cross_mix));

    let (mlp_in, mlp_norm) = block.mlp_norm.forward(&h);
    let pre_act = block.mlp_in.forward(&mlp_in);
    let act = silu(&pre_act);
    add_into(&mut h, &block.mlp_out.forward(&act));

    (
        h,
        BlockCache {
            attn_in,
            attn_norm,
            q,
            k,
            v,
            attn_probs,
            attn_mix,
            cross_in,
            cross_norm,
            cq,
            ck,
            cv,
            cross_probs,
            cross_mix,
            mlp_in,
            mlp_norm,
            pre_act,
            act,
        },
    )
}

fn block_backward<F: Real>(
    block: &mut Block<F>,
    cfg: &DenoiserConfig,
    c: &BlockCache<F>,
    dh: Vec<F>,
    layout: &ShotLayout,
    shot_keys: &[Vec<usize>],
    text_flat: &[Vec<F>],
) -> Vec<F> {
    let w = cfg.attn_width();
    let mut dh = dh;

    // MLP residual.
    let d_act = block.mlp_out.backward(&c.act, &dh);
    let d_pre = silu_backward(&c.pre_act, &d_act);
    let d_mlp_in = block.mlp_in.backward(&c.mlp_in, &d_pre);
    add_into(&mut dh, &block.mlp_norm.backward(&c.mlp_norm, &d_mlp_in));

    // Windowed cross-attention residual.
    let d_cross_mix = block.cross_out.backward(&c.cross_mix, &dh);
    let mut d_cq = vec![F::zero(); c.cq.len()];
    for (s, range) in layout.shot_ranges().into_iter().enumerate() {
        let rows = range.start * w..range.end * w;
        let g = attend_block_backward(
            &c.cq[rows.clone()],
            &c.ck[s],
            &c.cv[s],
            &c.cross_probs[s],
            &d_cross_mix[rows.clone()],
            cfg.heads,
            cfg.head_dim,
        );
        d_cq[rows].copy_from_slice(&g.d_queries);
        block.cross_key.backward(&text_flat[s], &g.d_keys);
        block.cross_value.backward(&text_flat[s], &g.d_values);
    }
    let d_cross_in = block.cross_query.backward(&c.cross_in, &d_cq);
    add_into(&mut dh, &block.cross_norm.backward(&c.cross_norm, &d_cross_in));

    // Sparse self-attention residual.
    let d_attn_mix = block.attn_out.backward(&c.attn_mix, &dh);
    let mut dq = vec![F::zero(); c.q.len()];
    let mut dk = vec![F::zero(); c.k.len()];
    let mut dv = vec![F::zero(); c.v.len()];
    for (s, (range, keys)) in layout.shot_ranges().into_iter().zip(shot_keys).enumerate() {
        let rows = range.start * w..range.end * w;
        let kb = gather_rows(&c.k, w, keys);
        let vb = gather_rows(&c.v, w, keys);
        let g = attend_block_backward(
            &c.q[rows.clone()],
            &kb,
            &vb,
            &c.attn_probs[s],
            &d_attn_mix[rows.clone()],
            cfg.heads,
            cfg.head_dim,
        );
        dq[rows].copy_from_slice(&g.d_queries);
        scatter_add_rows(&mut dk, w, keys, &g.d_keys);
        scatter_add_rows(&mut dv, w, keys, &g.d_values);
    }
    let mut d_attn_in = block.query.backward(&c.attn_in, &dq);
    add_into(&mut d_attn_in, &block.key.backward(&c.attn_in, &dk));
    add_into(&mut d_attn_in, &block.value.backward(&c.attn_in, &dv));
    add_into(&mut dh, &block.attn_norm.backward(&c.attn_norm, &d_attn_in));
    dh
}

/// Text tokens per shot, as `f32` vectors.
pub fn text_tokens<F: Real>(shots: &[Vec<TextEmbedding>]) -> Vec<Vec<Vec<F>>> {
    shots
        .iter()
        .map(|seq| {
            seq.iter()
                .map(|e| e.vector.iter().map(|&v| F::of(f64::from(v))).collect())
                .collect()
        })
        .collect()
}
