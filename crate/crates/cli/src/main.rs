//! flow4d: phantom data generation, training, generation, completion,
//! evaluation, ablation recipes, and rendering for the cardiac shape
//! pipelines. Progress goes to stderr; artifacts and reports go only
//! under each command's `--out` path, next to a resolved config file
//! that `flow4d rerun` replays bit-exactly.

mod ablate;
mod config;
mod eval;
mod io;
mod render;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use flow4d_core::autoenc::{AutoencHyperparams, AutoencoderModel, Latent, train_autoencoder};
use flow4d_core::cardiacflow::{
    CardiacFlowHyperparams, CardiacFlowModel, FrameEncoding, InitValue, train_cardiacflow,
};
use flow4d_core::checkpoint::Checkpoint;
use flow4d_core::completion::{
    CompletionHyperparams, CompletionModel, MixSpec, SyntheticSource, complete, complete_sequence,
    train_completion,
};
use flow4d_core::fm::{FlowModel, LrfHyperparams, TimeSampler, generate_lrf_one, train_lrf};
use flow4d_core::grid::ShapeSequence;
use flow4d_core::phantom::{
    SliceSimConfig, extract_slices, generate_subject, rasterize_slices, render_sequence,
};
use flow4d_core::rng::rng_from_seed;
use flow4d_core::{Error, Result};
use rand::Rng;

use crate::config::{RunConfig, config_path_for};

#[derive(Parser)]
#[command(name = "flow4d", version, about = "Flow-matching cardiac shape engine")]
struct Cli {
    /// Worker threads for generation/evaluation; 1 runs fully sequential.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Procedural phantom data.
    Phantom {
        #[command(subcommand)]
        cmd: PhantomCmd,
    },
    /// Model training.
    Train {
        #[command(subcommand)]
        cmd: TrainCmd,
    },
    /// Sampling from trained models.
    Generate {
        #[command(subcommand)]
        cmd: GenerateCmd,
    },
    /// Complete sparse multi-view acquisitions.
    Complete(CompleteArgs),
    /// Metric report over prediction/reference directories.
    Eval(EvalArgs),
    /// Ablation recipes.
    Ablate {
        #[command(subcommand)]
        cmd: AblateCmd,
    },
    /// Render grid/sequence slices to portable-pixmap images.
    Render(RenderArgs),
    /// Replay a previously written resolved config.
    Rerun(RerunArgs),
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Generate four-chamber phantom sequences.
    Gen(PhantomGenArgs),
    /// Simulate sparse multi-view acquisitions of existing data.
    Slices(PhantomSlicesArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Grid dims as X,Y,Z.
    #[arg(long, default_value = "32,32,40")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhantomSlicesArgs {
    /// Directory of .f4dgrid/.f4dseq inputs.
    #[arg(long)]
    data: PathBuf,
    /// Fixed corruption level; omit to draw per frame from U[0, lambda-max].
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Shape autoencoder.
    Ae(TrainAeArgs),
    /// Latent rectified flow over autoencoder latents.
    Lrf(TrainLrfArgs),
    /// Periodic one-step sequence generator.
    Cardiacflow(TrainCfArgs),
    /// Label completion from sparse acquisitions.
    Completion(TrainCompletionArgs),
}

#[derive(Args)]
struct TrainAeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 32)]
    latent_dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLrfArgs {
    /// Directory of shapes; latents are produced by encoding them
    /// through --ae and standardizing.
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    ae: PathBuf,
    #[arg(long, default_value = "uniform")]
    sampler: String,
    #[arg(long, default_value_t = 0.1)]
    beta_a: f64,
    #[arg(long, default_value_t = 2.0)]
    beta_b: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCfArgs {
    #[arg(long)]
    seqs: PathBuf,
    #[arg(long)]
    ae: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    beta_a: f64,
    #[arg(long, default_value_t = 2.0)]
    beta_b: f64,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value = "pgk")]
    frame_encoding: String,
    #[arg(long, default_value = "learned")]
    init_value: String,
    #[arg(long, default_value = "beta")]
    time_sampler: String,
    /// Ablation: keep embeddings bit-exactly at initialization.
    #[arg(long, default_value_t = false)]
    freeze_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCompletionArgs {
    #[arg(long)]
    real: PathBuf,
    /// Trained flow checkpoint; required when the synthetic fraction > 0.
    #[arg(long)]
    lrf: Option<PathBuf>,
    #[arg(long)]
    ae: Option<PathBuf>,
    /// real:synthetic fractions.
    #[arg(long, default_value = "0.25:0.75")]
    mix: String,
    #[arg(long, default_value_t = 2.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batches_per_epoch: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GenerateCmd {
    Lrf(GenerateLrfArgs),
    Cardiacflow(GenerateCfArgs),
}

#[derive(Args)]
struct GenerateLrfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ae: PathBuf,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateCfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ae: PathBuf,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    slices: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value = "dsc,hd95,cycledsc,vfid")]
    metrics: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AblateCmd {
    Cardiacflow(AblateCfArgs),
}

#[derive(Args)]
struct AblateCfArgs {
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 16)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value = "32,32,40")]
    dims: String,
    #[arg(long, default_value_t = 40)]
    ae_epochs: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    gen_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// A .f4dgrid or .f4dseq file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "z")]
    axis: String,
    /// Slice index along the axis; defaults to the middle slice.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    let err = || Error::InvalidArgument(format!("dims must be X,Y,Z, got {s:?}"));
    if parts.len() != 3 {
        return Err(err());
    }
    let d: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse().map_err(|_| err()))
        .collect::<Result<_>>()?;
    Ok((d[0], d[1], d[2]))
}

fn parse_sampler(kind: &str, a: f64, b: f64) -> Result<TimeSampler> {
    match kind {
        "uniform" => Ok(TimeSampler::Uniform),
        "beta" => TimeSampler::beta(a, b),
        _ => Err(Error::InvalidArgument(format!(
            "sampler must be uniform or beta, got {kind:?}"
        ))),
    }
}

fn parse_mix(s: &str) -> Result<MixSpec> {
    let err = || Error::InvalidArgument(format!("mix must be REAL:SYNTH, got {s:?}"));
    let (r, syn) = s.split_once(':').ok_or_else(err)?;
    MixSpec::new(
        r.trim().parse().map_err(|_| err())?,
        syn.trim().parse().map_err(|_| err())?,
    )
}

fn load_ae(path: &Path) -> Result<AutoencoderModel> {
    AutoencoderModel::from_checkpoint(&Checkpoint::load(path)?)
}

/// Encoded, standardized latents for every frame in a directory.
fn encode_dir(dir: &Path, ae: &AutoencoderModel) -> Result<Vec<Latent>> {
    io::load_all_frames(dir)?
        .iter()
        .map(|g| Ok(ae.standardize(&ae.encode(g)?)))
        .collect()
}

fn run_phantom_gen(args: &PhantomGenArgs) -> Result<()> {
    let dims = parse_dims(&args.dims)?;
    std::fs::create_dir_all(&args.out)?;
    for i in 0..args.subjects {
        let subject = generate_subject(args.seed.wrapping_add(i as u64), dims);
        let seq = render_sequence(&subject, args.frames, dims)?;
        seq.save(&args.out.join(format!("subject{i:04}.{}", io::SEQ_EXT)))?;
    }
    log::info!("wrote {} phantom sequences to {}", args.subjects, args.out.display());
    let mut cfg = RunConfig::new("phantom gen");
    cfg.set("subjects", args.subjects)
        .set("frames", args.frames)
        .set("dims", &args.dims)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, true))
}

fn run_phantom_slices(args: &PhantomSlicesArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let mut rng = rng_from_seed(args.seed ^ 0x534c4943455f434c);
    for path in io::list_artifacts(&args.data)? {
        let frames = io::load_frames(&path)?;
        let mut sparse_frames = Vec::with_capacity(frames.len());
        for frame in &frames {
            let lambda = args
                .lambda
                .unwrap_or_else(|| rng.random::<f64>() * args.lambda_max);
            let mut cfg = SliceSimConfig::default_for_dims(frame.dims, lambda, rng.random());
            cfg.lambda_max = args.lambda_max;
            sparse_frames.push(rasterize_slices(&extract_slices(frame, &cfg)?, frame.dims));
        }
        let out_path = args.out.join(path.file_name().expect("listed file"));
        if io::is_sequence(&path) {
            ShapeSequence::new(sparse_frames)?.save(&out_path)?;
        } else {
            sparse_frames[0].save(&out_path)?;
        }
    }
    let mut cfg = RunConfig::new("phantom slices");
    cfg.set("data", args.data.display())
        .set("lambda-max", args.lambda_max)
        .set("seed", args.seed)
        .set("out", args.out.display());
    if let Some(l) = args.lambda {
        cfg.set("lambda", l);
    }
    cfg.finish().save(&config_path_for(&args.out, true))
}

fn run_train_ae(args: &TrainAeArgs) -> Result<()> {
    let frames = io::load_all_frames(&args.data)?;
    let hp = AutoencHyperparams {
        latent_dim: args.latent_dim,
        hidden_dim: args.hidden_dim,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        ..Default::default()
    };
    let (model, losses) = train_autoencoder(&frames, &hp, args.seed)?;
    log::info!("autoencoder final loss {:.6}", losses.last().copied().unwrap_or(f64::NAN));
    model.to_checkpoint().save(&args.out)?;
    let mut cfg = RunConfig::new("train ae");
    cfg.set("data", args.data.display())
        .set("latent-dim", args.latent_dim)
        .set("hidden-dim", args.hidden_dim)
        .set("epochs", args.epochs)
        .set("batch-size", args.batch_size)
        .set("learning-rate", args.learning_rate)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, false))
}

fn run_train_lrf(args: &TrainLrfArgs) -> Result<()> {
    let ae = load_ae(&args.ae)?;
    let latents = encode_dir(&args.latents, &ae)?;
    let sampler = parse_sampler(&args.sampler, args.beta_a, args.beta_b)?;
    let hp = LrfHyperparams {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        ..Default::default()
    };
    let (model, losses) = train_lrf(&latents, sampler, &hp, args.seed)?;
    log::info!("lrf final loss {:.6}", losses.last().copied().unwrap_or(f64::NAN));
    model.to_checkpoint("lrf").save(&args.out)?;
    let mut cfg = RunConfig::new("train lrf");
    cfg.set("latents", args.latents.display())
        .set("ae", args.ae.display())
        .set("sampler", &args.sampler)
        .set("beta-a", args.beta_a)
        .set("beta-b", args.beta_b)
        .set("epochs", args.epochs)
        .set("batch-size", args.batch_size)
        .set("learning-rate", args.learning_rate)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, false))
}

fn run_train_cardiacflow(args: &TrainCfArgs) -> Result<()> {
    let ae = load_ae(&args.ae)?;
    let sequences = io::load_all_sequences(&args.seqs)?;
    let latents: Vec<Vec<Latent>> = sequences
        .iter()
        .map(|(_, s)| {
            s.frames
                .iter()
                .map(|f| Ok(ae.standardize(&ae.encode(f)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let hp = CardiacFlowHyperparams {
        sigma: args.sigma,
        embed_dim: args.embed_dim,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        sampler: parse_sampler(&args.time_sampler, args.beta_a, args.beta_b)?,
        frame_encoding: match args.frame_encoding.as_str() {
            "pgk" => FrameEncoding::Pgk,
            "scalar" => FrameEncoding::Scalar,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "frame-encoding must be pgk or scalar, got {other:?}"
                )))
            }
        },
        init_value: match args.init_value.as_str() {
            "learned" => InitValue::Learned,
            "noise" => InitValue::Noise,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "init-value must be learned or noise, got {other:?}"
                )))
            }
        },
        freeze_embeddings: args.freeze_embeddings,
        ..Default::default()
    };
    let (model, losses) = train_cardiacflow(&latents, &hp, args.seed)?;
    log::info!("cardiacflow final loss {:.6}", losses.last().copied().unwrap_or(f64::NAN));
    model.to_checkpoint().save(&args.out)?;
    let mut cfg = RunConfig::new("train cardiacflow");
    cfg.set("seqs", args.seqs.display())
        .set("ae", args.ae.display())
        .set("sigma", args.sigma)
        .set("beta-a", args.beta_a)
        .set("beta-b", args.beta_b)
        .set("embed-dim", args.embed_dim)
        .set("epochs", args.epochs)
        .set("batch-size", args.batch_size)
        .set("learning-rate", args.learning_rate)
        .set("frame-encoding", &args.frame_encoding)
        .set("init-value", &args.init_value)
        .set("time-sampler", &args.time_sampler)
        .set("freeze-embeddings", args.freeze_embeddings)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, false))
}

fn run_train_completion(args: &TrainCompletionArgs) -> Result<()> {
    let real = io::load_all_frames(&args.real)?;
    let mix = parse_mix(&args.mix)?;
    let hp = CompletionHyperparams {
        epochs: args.epochs,
        batches_per_epoch: args.batches_per_epoch,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        ..Default::default()
    };
    let mut slicesim = SliceSimConfig::default_for_dims(real[0].dims, 0.0, args.seed);
    slicesim.lambda_max = args.lambda_max;

    let flow_ae = match (&args.lrf, &args.ae) {
        (Some(lrf), Some(ae)) => Some((
            FlowModel::from_checkpoint(&Checkpoint::load(lrf)?, "lrf")?,
            load_ae(ae)?,
        )),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "--lrf and --ae must be given together".into(),
            ))
        }
    };
    let source = flow_ae.as_ref().map(|(flow, ae)| SyntheticSource {
        flow,
        ae,
        steps: args.steps,
    });
    let (model, losses, draws) =
        train_completion(&real, mix, &slicesim, source.as_ref(), &hp, args.seed)?;
    log::info!(
        "completion final loss {:.6} ({draws} synthetic draws)",
        losses.last().copied().unwrap_or(f64::NAN)
    );
    model.to_checkpoint().save(&args.out)?;
    let mut cfg = RunConfig::new("train completion");
    cfg.set("real", args.real.display())
        .set("mix", &args.mix)
        .set("lambda-max", args.lambda_max)
        .set("epochs", args.epochs)
        .set("batches-per-epoch", args.batches_per_epoch)
        .set("batch-size", args.batch_size)
        .set("learning-rate", args.learning_rate)
        .set("steps", args.steps)
        .set("seed", args.seed)
        .set("out", args.out.display());
    if let Some(p) = &args.lrf {
        cfg.set("lrf", p.display());
    }
    if let Some(p) = &args.ae {
        cfg.set("ae", p.display());
    }
    cfg.finish().save(&config_path_for(&args.out, false))
}

fn run_generate_lrf(args: &GenerateLrfArgs) -> Result<()> {
    let model = FlowModel::from_checkpoint(&Checkpoint::load(&args.model)?, "lrf")?;
    let ae = load_ae(&args.ae)?;
    std::fs::create_dir_all(&args.out)?;
    for i in 0..args.n {
        let grid = generate_lrf_one(&model, &ae, args.steps, args.seed, i as u64)?;
        grid.save(&args.out.join(format!("gen{i:04}.{}", io::GRID_EXT)))?;
    }
    log::info!("wrote {} generated shapes to {}", args.n, args.out.display());
    let mut cfg = RunConfig::new("generate lrf");
    cfg.set("model", args.model.display())
        .set("ae", args.ae.display())
        .set("n", args.n)
        .set("steps", args.steps)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, true))
}

fn run_generate_cardiacflow(args: &GenerateCfArgs) -> Result<()> {
    let model = CardiacFlowModel::from_checkpoint(&Checkpoint::load(&args.model)?)?;
    let ae = load_ae(&args.ae)?;
    std::fs::create_dir_all(&args.out)?;
    for i in 0..args.n {
        let mut rng = flow4d_core::rng::rng_for_stream(args.seed, i as u64);
        let seq = model.generate_sequence(&ae, rng.random(), args.steps)?;
        seq.save(&args.out.join(format!("gen{i:04}.{}", io::SEQ_EXT)))?;
    }
    log::info!("wrote {} generated sequences to {}", args.n, args.out.display());
    let mut cfg = RunConfig::new("generate cardiacflow");
    cfg.set("model", args.model.display())
        .set("ae", args.ae.display())
        .set("n", args.n)
        .set("steps", args.steps)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, true))
}

fn run_complete(args: &CompleteArgs) -> Result<()> {
    let model = CompletionModel::from_checkpoint(&Checkpoint::load(&args.model)?)?;
    std::fs::create_dir_all(&args.out)?;
    for path in io::list_artifacts(&args.slices)? {
        let out_path = args.out.join(path.file_name().expect("listed file"));
        if io::is_sequence(&path) {
            let sparse = io::load_frames(&path)?;
            complete_sequence(&model, &sparse)?.save(&out_path)?;
        } else {
            let sparse = flow4d_core::LabelGrid::load(&path)?;
            complete(&model, &sparse)?.save(&out_path)?;
        }
    }
    let mut cfg = RunConfig::new("complete");
    cfg.set("model", args.model.display())
        .set("slices", args.slices.display())
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, true))
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let pred = io::load_all_sequences(&args.pred)?;
    let reference = io::load_all_sequences(&args.reference)?;
    let metrics = eval::parse_metrics(&args.metrics)?;
    eval::write_report(&pred, &reference, &metrics, &args.out)?;
    let mut cfg = RunConfig::new("eval");
    cfg.set("pred", args.pred.display())
        .set("ref", args.reference.display())
        .set("metrics", &args.metrics)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, false))
}

fn run_ablate_cardiacflow(args: &AblateCfArgs) -> Result<()> {
    let settings = ablate::AblateSettings {
        seeds: args.seeds,
        subjects: args.subjects,
        frames: args.frames,
        dims: parse_dims(&args.dims)?,
        ae_epochs: args.ae_epochs,
        cf_epochs: args.epochs,
        gen_count: args.gen_count,
        seed: args.seed,
    };
    ablate::run_ablation(&settings, &args.out)?;
    let mut cfg = RunConfig::new("ablate cardiacflow");
    cfg.set("seeds", args.seeds)
        .set("subjects", args.subjects)
        .set("frames", args.frames)
        .set("dims", &args.dims)
        .set("ae-epochs", args.ae_epochs)
        .set("epochs", args.epochs)
        .set("gen-count", args.gen_count)
        .set("seed", args.seed)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, false))
}

fn run_render(args: &RenderArgs) -> Result<()> {
    let axis = render::Axis::parse(&args.axis)?;
    std::fs::create_dir_all(&args.out)?;
    let frames = io::load_frames(&args.input)?;
    let stem = io::stem(&args.input);
    let index = args.index.unwrap_or(axis.extent(frames[0].dims) / 2);
    if frames.len() == 1 {
        render::render_slice(&frames[0], axis, index, &args.out.join(format!("{stem}.ppm")))?;
    } else {
        for (f, frame) in frames.iter().enumerate() {
            let name = format!("{stem}_f{:03}.ppm", f + 1);
            render::render_slice(frame, axis, index, &args.out.join(name))?;
        }
    }
    let mut cfg = RunConfig::new("render");
    cfg.set("input", args.input.display())
        .set("axis", &args.axis)
        .set("index", index)
        .set("out", args.out.display());
    cfg.finish().save(&config_path_for(&args.out, true))
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Phantom { cmd: PhantomCmd::Gen(a) } => run_phantom_gen(a),
        Command::Phantom { cmd: PhantomCmd::Slices(a) } => run_phantom_slices(a),
        Command::Train { cmd: TrainCmd::Ae(a) } => run_train_ae(a),
        Command::Train { cmd: TrainCmd::Lrf(a) } => run_train_lrf(a),
        Command::Train { cmd: TrainCmd::Cardiacflow(a) } => run_train_cardiacflow(a),
        Command::Train { cmd: TrainCmd::Completion(a) } => run_train_completion(a),
        Command::Generate { cmd: GenerateCmd::Lrf(a) } => run_generate_lrf(a),
        Command::Generate { cmd: GenerateCmd::Cardiacflow(a) } => run_generate_cardiacflow(a),
        Command::Complete(a) => run_complete(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate { cmd: AblateCmd::Cardiacflow(a) } => run_ablate_cardiacflow(a),
        Command::Render(a) => run_render(a),
        Command::Rerun(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let mut argv = vec!["flow4d".to_string()];
            argv.extend(cfg.argv.iter().cloned());
            let cli = Cli::try_parse_from(&argv)
                .map_err(|e| Error::InvalidArgument(format!("config replay: {e}")))?;
            dispatch(&cli.command)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        std::process::exit(2);
    }
    if let Err(e) = dispatch(&cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
