//! `defence`: batch front end for the de-fencing pipeline.
//!
//! Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Diagnostics, progress and timings go to standard error; `eval`
//! prints its records on standard output.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use defence_core::fusion::{defence_with_masks, DefenceReport};
use defence_core::io::{
    load_mask_sequence, load_pipeline_config, load_scene_spec, load_sequence,
    load_soft_mask_sequence, save_frame, save_mask_sequence, save_sequence, sequence_path,
    PipelineConfig, FRAME_PREFIX,
};
use defence_core::metrics::{format_record, mask_prf, psnr};
use defence_core::refine::refine_frames;
use defence_core::synth::generate_scene;
use defence_core::window::neighbor_window;
use defence_core::{Error, FenceMask, Frame, Result, SoftMask};

#[derive(Parser)]
#[command(
    name = "defence",
    version,
    about = "Remove fences from short video sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine per-frame fence masks using neighbouring frames.
    RefineMasks(RefineArgs),
    /// De-fence frames.
    Defence(DefenceArgs),
    /// Render a synthetic fenced sequence with ground truth.
    Synth(SynthArgs),
    /// Score de-fenced frames against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// Directory of frame_NNNNN.png.
    #[arg(long)]
    frames: PathBuf,
    /// Directory of mask_NNNNN.png holding soft fence scores.
    #[arg(long)]
    soft_masks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Neighbours used for mask refinement (0 only closes each mask).
    #[arg(long)]
    m: Option<usize>,
    /// Pipeline configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
}

#[derive(Args)]
struct RefineArgs {
    #[command(flatten)]
    common: Common,
    /// Threshold on the averaged neighbour score.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct DefenceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mu: Option<f64>,
    /// Neighbours fused per frame.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda_flow: Option<f64>,
    #[arg(long)]
    lambda_fusion: Option<f64>,
    /// Only de-fence this frame.
    #[arg(long)]
    target: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description file.
    #[arg(long)]
    spec: PathBuf,
    /// Receives frames/, clean/ and masks/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// De-fenced frames.
    #[arg(long)]
    result: PathBuf,
    /// Clean frames.
    #[arg(long)]
    truth: PathBuf,
    /// Ground-truth fence masks.
    #[arg(long)]
    masks: PathBuf,
    /// Predicted fence masks, scored against --masks.
    #[arg(long)]
    pred_masks: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::RefineMasks(a) => refine_masks(a),
        Command::Defence(a) => defence(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("defence: {e}");
            ExitCode::from(1)
        }
    }
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => load_pipeline_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = common.m {
        config.refine.m = m;
    }
    Ok(config)
}

fn thread_pool(jobs: Option<u16>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j as usize);
    }
    builder
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))
}

fn load_inputs(common: &Common) -> Result<(Vec<Frame>, Vec<SoftMask>)> {
    let frames = load_sequence(&common.frames)?;
    let softs = load_soft_mask_sequence(&common.soft_masks)?;
    if frames.len() != softs.len() {
        return Err(Error::param(
            "soft-masks",
            format!("{} masks for {} frames", softs.len(), frames.len()),
        ));
    }
    Ok((frames, softs))
}

/// Splits `targets` into about `jobs` contiguous runs.
fn batches(targets: &[usize], jobs: usize) -> Vec<&[usize]> {
    let size = targets.len().div_ceil(jobs.max(1)).max(1);
    targets.chunks(size).collect()
}

fn refine_masks(args: RefineArgs) -> Result<()> {
    let mut config = pipeline_config(&args.common)?;
    if let Some(mu) = args.mu {
        config.refine.mu = mu;
    }
    config.refine.validate()?;
    let pool = thread_pool(args.common.jobs)?;

    let (frames, softs) = load_inputs(&args.common)?;
    let started = Instant::now();
    let all: Vec<usize> = (0..frames.len()).collect();
    let refined = pool.install(|| {
        batches(&all, pool.current_num_threads())
            .into_par_iter()
            .map(|b| refine_frames(&frames, &softs, b, &config.refine))
            .collect::<Result<Vec<_>>>()
    })?;
    let masks: Vec<FenceMask> = refined.into_iter().flatten().collect();
    eprintln!(
        "refined {} masks in {:.3}s",
        masks.len(),
        started.elapsed().as_secs_f64()
    );
    save_mask_sequence(&masks, &args.common.out)
}

fn defence(args: DefenceArgs) -> Result<()> {
    let mut config = pipeline_config(&args.common)?;
    if let Some(mu) = args.mu {
        config.refine.mu = mu;
    }
    if let Some(n) = args.n {
        config.fusion.n = n;
    }
    if let Some(l) = args.lambda_flow {
        config.flow.lambda = l;
    }
    if let Some(l) = args.lambda_fusion {
        config.fusion.lambda_fusion = l;
    }
    config.refine.validate()?;
    config.flow.validate()?;
    config.fusion.validate()?;
    let pool = thread_pool(args.common.jobs)?;

    let (frames, softs) = load_inputs(&args.common)?;
    let len = frames.len();
    let targets: Vec<usize> = match args.target {
        Some(t) if t >= len => return Err(Error::TargetOutOfRange { target: t, len }),
        Some(t) => vec![t],
        None => (0..len).collect(),
    };
    if let Some(&t) = targets
        .iter()
        .find(|&&t| neighbor_window(len, t, config.fusion.n).is_empty())
    {
        return Err(Error::NeighborWindowEmpty { target: t, len });
    }

    // Every frame that takes part in some fusion needs a refined mask.
    let mut needed = vec![false; len];
    for &t in &targets {
        needed[t] = true;
        for k in neighbor_window(len, t, config.fusion.n) {
            needed[k] = true;
        }
    }
    let wanted: Vec<usize> = (0..len).filter(|&i| needed[i]).collect();

    let started = Instant::now();
    let refined = pool.install(|| {
        batches(&wanted, pool.current_num_threads())
            .into_par_iter()
            .map(|b| refine_frames(&frames, &softs, b, &config.refine))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut masks: Vec<Option<FenceMask>> = vec![None; len];
    for (&i, m) in wanted.iter().zip(refined.into_iter().flatten()) {
        masks[i] = Some(m);
    }
    eprintln!(
        "refined {} masks in {:.3}s",
        wanted.len(),
        started.elapsed().as_secs_f64()
    );

    let reports = pool.install(|| {
        targets
            .par_iter()
            .map(|&t| {
                let report = defence_with_masks(&frames, &masks, t, &config.flow, &config.fusion)?;
                log_timings(t, &report);
                Ok(report)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    std::fs::create_dir_all(&args.common.out)?;
    for (&t, report) in targets.iter().zip(&reports) {
        save_frame(
            &report.frame,
            sequence_path(&args.common.out, FRAME_PREFIX, t),
        )?;
    }
    eprintln!(
        "wrote {} frames in {:.3}s",
        targets.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn log_timings(target: usize, report: &DefenceReport) {
    let t = &report.timings;
    eprintln!(
        "frame {target}: flow {:.3}s fusion {:.3}s recovery {:.3}s inpaint {:.3}s ({} holes)",
        t.flow.as_secs_f64(),
        t.fusion.as_secs_f64(),
        t.recovery.as_secs_f64(),
        t.inpaint.as_secs_f64(),
        report.holes.count(),
    );
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = load_scene_spec(&args.spec)?;
    spec.validate()?;
    let scene = generate_scene(&spec)?;
    save_sequence(&scene.fenced_frames, args.out.join("frames"))?;
    save_sequence(&scene.clean_frames, args.out.join("clean"))?;
    save_mask_sequence(&scene.masks, args.out.join("masks"))?;
    eprintln!(
        "wrote {} frames of {}x{} to {}",
        spec.frame_count,
        spec.width,
        spec.height,
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let result = load_sequence(&args.result)?;
    let truth = load_sequence(&args.truth)?;
    let masks = load_mask_sequence(&args.masks)?;
    check_count("result", result.len(), truth.len())?;
    check_count("masks", masks.len(), truth.len())?;

    // Metrics are pooled over the whole sequence by stacking frames.
    let result = stack_frames(&result)?;
    let truth = stack_frames(&truth)?;
    let fence = stack_masks(&masks)?;
    println!("{}", format_record("psnr", psnr(&result, &truth, None)?));
    if !fence.is_empty() {
        println!(
            "{}",
            format_record("psnr_fence", psnr(&result, &truth, Some(&fence))?)
        );
    }
    if let Some(dir) = &args.pred_masks {
        let predicted = load_mask_sequence(dir)?;
        check_count("pred-masks", predicted.len(), masks.len())?;
        let prf = mask_prf(&stack_masks(&predicted)?, &fence)?;
        println!("{}", format_record("precision", prf.precision));
        println!("{}", format_record("recall", prf.recall));
        println!("{}", format_record("f_measure", prf.f_measure));
    }
    Ok(())
}

fn check_count(what: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::param(what, format!("{got} frames, expected {want}")));
    }
    Ok(())
}

fn stack_frames(frames: &[Frame]) -> Result<Frame> {
    let (w, h) = frames[0].dims();
    let mut data = Vec::with_capacity(3 * w * h * frames.len());
    for f in frames {
        defence_core::error::ensure_same_dims((w, h), f.dims())?;
        data.extend_from_slice(f.as_slice());
    }
    Frame::new(w, h * frames.len(), data)
}

fn stack_masks(masks: &[FenceMask]) -> Result<FenceMask> {
    let (w, h) = masks[0].dims();
    let mut bits = Vec::with_capacity(w * h * masks.len());
    for m in masks {
        defence_core::error::ensure_same_dims((w, h), m.dims())?;
        bits.extend_from_slice(m.as_slice());
    }
    FenceMask::new(w, h * masks.len(), bits)
}
