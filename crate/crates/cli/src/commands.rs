use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use dcdm::attention::{
    count_attention_pairs, dense_attention, oracle_suite, sparse_shot_attention_counted, AttentionInputs,
    ShotLayout, SummaryPolicy,
};
use dcdm::camera::{CameraTemplate, MotionCategory, TemplateSpec};
use dcdm::diffusion::dataset::{canned_prompt, category_conditioning};
use dcdm::diffusion::{
    ddim_sample, estimate_displacement, load_params, mean_displacement, save_params, train_toy, Conditioning,
    DenoiserConfig, DiffusionSchedule, InitialNoise, ToyDatasetConfig, TrainConfig, REFERENCE_FRAMES_PER_SHOT,
    REFERENCE_LR, REFERENCE_SAMPLES, REFERENCE_STEPS, REFERENCE_SUB_STEPS,
};
use dcdm::noise::{generate_camera_noise, BlendConfig, NoiseProvenance, StructuredNoise, DEFAULT_LAMBDA};
use dcdm::prompt::{
    classify_camera_motion, classify_with_endpoint, embed_prompt, extend_prompt, ExtensionMode, LlmEndpointConfig,
    Prompt,
};
use dcdm::tensor::{load_grid, save_grid, GridShape, RngStream};
use dcdm::{Error, Result};

use crate::config::{read_template, RunConfig};
use crate::{parse_shape, NoiseArgs};

pub struct Context {
    pub seed: u64,
    pub config: RunConfig,
}

const DEFAULT_SHAPE: &str = "8x16x16x4";
const CHECK_ABS_TOL: f64 = 1e-5;
const CHECK_SINGLE_SHOT_TOL: f64 = 1e-6;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Context {
    fn endpoint(&self) -> Option<LlmEndpointConfig> {
        self.config.llm.clone().or_else(LlmEndpointConfig::from_env)
    }

    fn shape(&self, flag: Option<GridShape>) -> Result<Option<GridShape>> {
        match (flag, self.config.shape) {
            (Some(s), _) => Ok(Some(s)),
            (None, Some(s)) => s.to_shape().map(Some),
            (None, None) => Ok(None),
        }
    }

    fn blend(&self, a: &NoiseArgs) -> Result<BlendConfig> {
        BlendConfig::new(
            a.lambda.or(self.config.lambda).unwrap_or(DEFAULT_LAMBDA),
            a.warp_mode.or(self.config.warp_mode).unwrap_or_default(),
        )
    }

    /// Flag template, then flag category, then the config template.
    fn template(&self, a: &NoiseArgs, shape: GridShape) -> Result<Option<CameraTemplate>> {
        let spec = if let Some(p) = &a.template {
            let mut spec = read_template(p)?;
            if a.speed.is_some() {
                spec.speed = a.speed;
            }
            Some(spec)
        } else if let Some(m) = a.category {
            Some(TemplateSpec {
                category: Some(m.as_str().to_string()),
                speed: a.speed,
                frames: None,
                intrinsics: None,
                poses: None,
                plane_depth: None,
            })
        } else if let Some(src) = &self.config.template {
            let mut spec = src.spec()?;
            if a.speed.is_some() {
                spec.speed = a.speed;
            }
            Some(spec)
        } else {
            None
        };
        spec.map(|s| s.build(shape.frames, shape.height, shape.width)).transpose()
    }
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    prompt: String,
    /// Skip the endpoint even when one is configured.
    #[arg(long)]
    offline: bool,
}

pub fn extend(ctx: &Context, a: ExtendArgs) -> Result<()> {
    let p = Prompt::new(a.prompt)?;
    let mode = match ctx.endpoint() {
        Some(cfg) if !a.offline => ExtensionMode::Endpoint(cfg),
        _ => ExtensionMode::Offline,
    };
    let ext = extend_prompt(&p, &mode)?;
    if let Some(w) = &ext.warning {
        eprintln!("warning: {w}");
    }
    println!("{}", ext.text);
    Ok(())
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    prompt: String,
    /// Ask the configured endpoint instead of the rule table.
    #[arg(long)]
    llm: bool,
}

pub fn classify(ctx: &Context, a: ClassifyArgs) -> Result<()> {
    let p = Prompt::new(a.prompt)?;
    let m = if a.llm {
        let cfg = ctx
            .endpoint()
            .ok_or_else(|| Error::Config("--llm needs an endpoint (config \"llm\" or DCDM_LLM_ENDPOINT)".into()))?;
        classify_with_endpoint(&p, &cfg)?
    } else {
        classify_camera_motion(&p)
    };
    println!("{}", m.as_str());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenNoiseArgs {
    #[command(flatten)]
    noise: NoiseArgs,
    /// Latent shape as TxHxWxC.
    #[arg(long, value_parser = parse_shape)]
    shape: Option<GridShape>,
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,
}

fn make_noise(ctx: &Context, a: &NoiseArgs, shape: GridShape) -> Result<StructuredNoise> {
    let template = ctx
        .template(a, shape)?
        .ok_or_else(|| Error::Config("no camera template: pass --template or --category".into()))?;
    generate_camera_noise(&template, shape, &ctx.blend(a)?, ctx.seed)
}

fn describe(p: &NoiseProvenance) -> String {
    format!("{p:?}")
}

pub fn gen_noise(ctx: &Context, a: GenNoiseArgs) -> Result<()> {
    let shape = ctx
        .shape(a.shape)?
        .ok_or_else(|| Error::Config("no shape: pass --shape TxHxWxC".into()))?;
    let noise = make_noise(ctx, &a.noise, shape)?;
    save_grid(&noise.grid, &a.output)?;
    log::info!("wrote {} ({})", a.output.display(), describe(&noise.provenance));
    Ok(())
}

#[derive(Debug, Args)]
pub struct AttnCheckArgs {
    /// Number of random layouts to test.
    #[arg(long, default_value_t = 200)]
    trials: usize,
}

pub fn attn_check(ctx: &Context, a: AttnCheckArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Validation("--trials must be ≥ 1".into()));
    }
    let r = oracle_suite(a.trials, ctx.seed)?;
    println!("trials={}", r.trials);
    println!("max_abs_diff={:e}", r.max_abs_diff);
    println!("single_shot_max_abs_diff={:e}", r.max_single_shot_diff);
    println!("count_mismatches={}", r.count_mismatches);
    if r.max_abs_diff > CHECK_ABS_TOL || r.max_single_shot_diff > CHECK_SINGLE_SHOT_TOL || r.count_mismatches > 0 {
        return Err(Error::Numeric(format!(
            "oracle mismatch: max |Δ| {:e} (tol {CHECK_ABS_TOL:e}), single-shot {:e} (tol {CHECK_SINGLE_SHOT_TOL:e}), {} count mismatches",
            r.max_abs_diff, r.max_single_shot_diff, r.count_mismatches
        )));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AttnBenchArgs {
    /// Shot counts N_s, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    shots: Vec<usize>,
    /// Tokens per shot L_shot, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16,64")]
    shot_len: Vec<usize>,
    /// Summary tokens S, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,4")]
    summary: Vec<usize>,
    #[arg(long)]
    tokens_per_frame: Option<usize>,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    head_dim: usize,
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,
}

pub const BENCH_HEADER: &str = "N_s,L_shot,S,sparse_pairs,dense_pairs,ratio,wall_ms_sparse,wall_ms_dense";

pub fn attn_bench(ctx: &Context, a: AttnBenchArgs) -> Result<()> {
    let (shots, lens, summaries) = (a.shots, a.shot_len, a.summary);
    let attn = ctx.config.attention.unwrap_or_default();
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    let mut row = 0u64;
    for &ns in &shots {
        for &l in &lens {
            let tpf = a.tokens_per_frame.or(attn.tokens_per_frame).unwrap_or(l);
            if tpf == 0 || l % tpf != 0 {
                return Err(Error::Layout(format!("L_shot {l} is not a multiple of tokens_per_frame {tpf}")));
            }
            let layout = ShotLayout::new(vec![l; ns], tpf)?;
            for &s in &summaries {
                let policy = SummaryPolicy::new(s);
                let counts = count_attention_pairs(&layout, &policy)?;
                let mut rng = RngStream::new(ctx.seed, "attn-bench", row);
                row += 1;
                let n = layout.total_tokens() * a.heads * a.head_dim;
                let mut draw = || (0..n).map(|_| rng.gaussian()).collect::<Vec<f32>>();
                let inputs = AttentionInputs::new(draw(), draw(), draw(), a.heads, a.head_dim)?;
                let t0 = Instant::now();
                let (_, pairs) = sparse_shot_attention_counted(&inputs, &layout, &policy)?;
                let sparse_ms = t0.elapsed().as_secs_f64() * 1e3;
                let t1 = Instant::now();
                dense_attention(&inputs)?;
                let dense_ms = t1.elapsed().as_secs_f64() * 1e3;
                if pairs != counts.sparse_pairs {
                    return Err(Error::Internal(format!(
                        "counter {pairs} != closed form {} for N_s={ns} L={l} S={s}",
                        counts.sparse_pairs
                    )));
                }
                let _ = writeln!(
                    csv,
                    "{ns},{l},{s},{},{},{},{sparse_ms:.3},{dense_ms:.3}",
                    counts.sparse_pairs, counts.dense_pairs, counts.ratio
                );
            }
        }
    }
    write_file(&a.output, csv.as_bytes())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_shape)]
    shape: Option<GridShape>,
    #[arg(long, default_value_t = REFERENCE_FRAMES_PER_SHOT)]
    frames_per_shot: usize,
    /// Distinct videos in the dataset.
    #[arg(long, default_value_t = REFERENCE_SAMPLES)]
    samples: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Summary tokens per shot.
    #[arg(long)]
    summary: Option<usize>,
    /// Checkpoint output path.
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,
    /// Also write the loss log here.
    #[arg(long, value_name = "PATH")]
    log: Option<PathBuf>,
}

fn default_shape() -> GridShape {
    parse_shape(DEFAULT_SHAPE).expect("valid default shape")
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let shape = ctx.shape(a.shape)?.unwrap_or_else(default_shape);
    let section = ctx.config.train.unwrap_or_default();
    let data = ToyDatasetConfig::new(shape, a.frames_per_shot, a.samples, ctx.seed)?;
    let mut model = DenoiserConfig::toy(shape.channels);
    if let Some(s) = a.summary.or(ctx.config.attention.and_then(|c| c.summary_tokens)) {
        model.summary_tokens = s;
    }
    let cfg = TrainConfig {
        steps: a.steps.or(section.steps).unwrap_or(REFERENCE_STEPS),
        lr: a.lr.or(section.lr).unwrap_or(REFERENCE_LR),
        batch: a.batch,
        seed: ctx.seed,
    };
    let out = train_toy(data, model, &DiffusionSchedule::default(), cfg)?;
    let mut log = String::new();
    for line in &out.log {
        println!("{line}");
        log.push_str(line);
        log.push('\n');
    }
    if let Some(p) = &a.log {
        write_file(p, log.as_bytes())?;
    }
    save_params(&out.params, &a.output)
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Use this .dcdn grid as the initial latent instead of generating one.
    #[arg(long, value_name = "PATH")]
    init: Option<PathBuf>,
    #[arg(long, value_parser = parse_shape)]
    shape: Option<GridShape>,
    #[arg(long, default_value_t = REFERENCE_FRAMES_PER_SHOT)]
    frames_per_shot: usize,
    #[arg(long, default_value_t = REFERENCE_SUB_STEPS)]
    sub_steps: usize,
    /// Prompt per shot (repeat the flag), or one prompt for all shots.
    #[arg(long)]
    prompt: Vec<String>,
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,
}

fn conditioning(ctx: &Context, prompts: &[String], category: Option<MotionCategory>, shots: usize, dim: usize) -> Result<Conditioning> {
    if prompts.is_empty() {
        return match category {
            Some(m) => category_conditioning(m, shots),
            None => conditioning(ctx, &[canned_prompt(MotionCategory::Static).to_string()], None, shots, dim),
        };
    }
    if prompts.len() != 1 && prompts.len() != shots {
        return Err(Error::Layout(format!("{} prompts for {shots} shots", prompts.len())));
    }
    let mode = ctx.endpoint().map_or(ExtensionMode::Offline, ExtensionMode::Endpoint);
    let embedded = prompts
        .iter()
        .map(|p| {
            let ext = extend_prompt(&Prompt::new(p.as_str())?, &mode)?;
            if let Some(w) = &ext.warning {
                eprintln!("warning: {w}");
            }
            embed_prompt(&ext, dim)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Conditioning::new((0..shots).map(|i| vec![embedded[i % embedded.len()].clone()]).collect()))
}

pub fn sample(ctx: &Context, a: SampleArgs) -> Result<()> {
    let params = load_params(&a.model)?;
    let init = match &a.init {
        Some(p) => InitialNoise::Grid(load_grid(p)?),
        None => {
            let shape = ctx.shape(a.shape)?.unwrap_or_else(default_shape);
            match ctx.template(&a.noise, shape)? {
                Some(t) => InitialNoise::Injected(generate_camera_noise(&t, shape, &ctx.blend(&a.noise)?, ctx.seed)?),
                None => InitialNoise::Fresh { shape, seed: ctx.seed },
            }
        }
    };
    let shape = init.shape();
    if a.frames_per_shot == 0 || shape.frames % a.frames_per_shot != 0 {
        return Err(Error::Layout(format!(
            "frames_per_shot {} must divide {} frames",
            a.frames_per_shot, shape.frames
        )));
    }
    let layout = ShotLayout::uniform(shape.frames / a.frames_per_shot, a.frames_per_shot, shape.pixels_per_frame())?;
    let category = a.noise.category.or_else(|| {
        ctx.config
            .template
            .as_ref()
            .and_then(|t| t.spec().ok())
            .and_then(|s| s.category)
            .and_then(|c| c.parse().ok())
    });
    let cond = conditioning(ctx, &a.prompt, category, layout.num_shots(), params.config.text_dim)?;
    let video = ddim_sample(&params, &DiffusionSchedule::default(), init, &cond, &layout, a.sub_steps)?;
    save_grid(&video, &a.output)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Video latent (.dcdn).
    video: PathBuf,
    /// Expected camera motion; enables the sign-agreement line.
    #[arg(long)]
    expect: Option<MotionCategory>,
}

/// Fraction of transitions whose displacement agrees with `m`'s sign
/// convention; `None` for zooms, which have no single direction.
pub fn sign_agreement(d: &[dcdm::diffusion::Displacement], m: MotionCategory) -> Option<f64> {
    let want = m.content_displacement()?;
    let hits = d
        .iter()
        .filter(|v| match want {
            (0, 0) => v.dx == 0 && v.dy == 0,
            (wx, 0) => v.dx.signum() == wx.signum(),
            (0, wy) => v.dy.signum() == wy.signum(),
            _ => false,
        })
        .count();
    Some(hits as f64 / d.len().max(1) as f64)
}

pub fn eval_motion(_ctx: &Context, a: EvalArgs) -> Result<()> {
    let video = load_grid(&a.video)?;
    let d = estimate_displacement(&video)?;
    for (i, v) in d.iter().enumerate() {
        println!(
            "transition={} dx={} dy={} confidence={:.6}{}",
            i + 1,
            v.dx,
            v.dy,
            v.confidence,
            if v.low_confidence { " low_confidence" } else { "" }
        );
    }
    let (mx, my) = mean_displacement(&d);
    println!("mean dx={mx} dy={my}");
    if let Some(m) = a.expect {
        match sign_agreement(&d, m) {
            Some(f) => println!("sign_agreement={f}"),
            None => println!("sign_agreement=n/a"),
        }
    }
    Ok(())
}
