use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vic_core::annotations::derive_flow_for;
use vic_core::dataset::{find_manifests, load_clip, load_dataset, write_clip, ClipData};
use vic_core::density::{gt_bundle, KernelSpec, MapRole};
use vic_core::image::heat_overlay;
use vic_core::inference::{count_oracle, count_video, default_stride, predict_pair, CountOptions, VideoCountResult, DEFAULT_CAP};
use vic_core::metrics::{EvalReport, PairFlow, VideoEvalRecord};
use vic_core::model::{Model, ModelConfig, ModelOutputs, Variant};
use vic_core::synth::{generate, SynthConfig};
use vic_core::training::{train, TrainConfig};
use vic_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "vic", version, about = "Video individual counting with inflow/outflow density maps")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic moving-camera clip with exact identities.
    Synth(SynthArgs),
    /// Write the six ground-truth maps of every stride pair of a clip.
    DeriveGt(DeriveGtArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Count unique people in a clip.
    Count(CountArgs),
    /// Score count results against annotations.
    Eval(EvalArgs),
    /// Render overlays of the six predicted maps of one frame pair.
    Viz(VizArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthesis config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clip_id: Option<String>,
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    n_persons: Option<usize>,
}

#[derive(Args)]
struct DeriveGtArgs {
    /// Clip manifest (or its directory).
    #[arg(long)]
    clip: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory: a clip directory or a directory of clip directories.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; training clips are used when absent.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Training config JSON (same fields as the echoed train.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model config JSON; overrides --preset.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, value_parser = ["tiny", "desk", "full"], default_value = "desk")]
    preset: String,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Start from an existing checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_pairs: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    clip: PathBuf,
    /// Checkpoint directory; required unless --oracle is given.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Pair stride; defaults to one scaled from the clip frame rate.
    #[arg(long)]
    stride: Option<usize>,
    /// Evaluate a final shorter pair when the stride leaves tail frames.
    #[arg(long)]
    tail_pair: bool,
    /// Use the annotated first-frame count instead of the predicted one.
    #[arg(long)]
    gt_first_frame: bool,
    /// Replace predictions by ground-truth maps rasterized from annotations.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_CAP.0)]
    cap_long: usize,
    #[arg(long, default_value_t = DEFAULT_CAP.1)]
    cap_short: usize,
    /// Output file, or a directory receiving `<clip_id>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of count result JSON files.
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory with the matching annotated clips.
    #[arg(long)]
    gt: PathBuf,
    /// Report directory; defaults to the prediction directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Frame indices `a,b`.
    #[arg(long, value_parser = parse_pair)]
    pair: (usize, usize),
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s.to_ascii_uppercase().as_str() {
        "DCFA" => Ok(Variant::Dcfa),
        "SCFA" => Ok(Variant::Scfa),
        "DIRECT" => Ok(Variant::Direct),
        _ => Err(format!("unknown variant {s:?} (DCFA, SCFA or DIRECT)")),
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| anyhow!(Error::Config(format!("{}: {e}", path.display()))))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn manifest_path(p: &Path) -> anyhow::Result<PathBuf> {
    let found = find_manifests(p)?;
    match found.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(Error::Input(format!("{} holds {} clips; pass one clip", p.display(), found.len())).into()),
    }
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut config: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.clip_id {
        config.clip_id = v;
    }
    if let Some(v) = args.n_frames {
        config.n_frames = v;
    }
    if let Some(v) = args.n_persons {
        config.n_persons = v;
    }
    let clip = generate(&config)?;
    let data = ClipData::new(clip.clip, clip.frames)?;
    let manifest = write_clip(&args.out, &data)?;
    write_json(&args.out.join("synth.json"), &config)?;
    log::info!("wrote {} frames to {}", data.len(), manifest.display());
    Ok(())
}

fn derive_gt(args: DeriveGtArgs) -> anyhow::Result<()> {
    let manifest = manifest_path(&args.clip)?;
    let clip = vic_core::dataset::load_annotation(&manifest)?;
    if args.stride == 0 || args.stride >= clip.len() {
        return Err(Error::Parameter(format!(
            "stride {} needs a clip longer than {} frames",
            args.stride,
            clip.len()
        ))
        .into());
    }
    let kernel = KernelSpec::with_sigma(args.sigma);
    kernel.validate()?;
    create_dir(&args.out)?;
    let pairs = vic_core::inference::pair_indices(clip.len(), args.stride, false)?;
    for &(a, b) in &pairs {
        let (fa, fb) = (&clip.frames[a], &clip.frames[b]);
        let flow = derive_flow_for(clip.supervision, fa, fb)?;
        let bundle = gt_bundle(&flow, fa, fb, &kernel, 1)?;
        for (name, map) in bundle.maps() {
            map.save(args.out.join(format!("{a:06}_{b:06}_{name}.vicd")))?;
        }
    }
    write_json(
        &args.out.join("derive_gt.json"),
        &json!({
            "clip": manifest,
            "clip_id": clip.clip_id,
            "stride": args.stride,
            "sigma": args.sigma,
            "pairs": pairs,
        }),
    )?;
    log::info!("wrote {} pairs of maps to {}", pairs.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> anyhow::Result<()> {
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.max_steps {
        config.max_steps = v;
    }
    if let Some(v) = args.lr0 {
        config.lr0 = v;
    }
    if let Some(v) = args.batch_pairs {
        config.batch_pairs = v;
    }
    if let Some(v) = args.crop_size {
        config.crop_size = v;
    }
    if let Some(v) = args.sigma {
        config.sigma = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate()?;

    let mut model = match &args.init {
        Some(dir) => Model::load(dir)?,
        None => {
            let mut mc = match &args.model_config {
                Some(p) => read_json(p)?,
                None => match args.preset.as_str() {
                    "tiny" => ModelConfig::tiny(),
                    "full" => ModelConfig::full(),
                    _ => ModelConfig::desk(),
                },
            };
            if let Some(v) = args.variant {
                mc.dcfa.variant = v;
            }
            Model::new(mc)?
        }
    };
    let train_clips = load_dataset(&args.data)?;
    let val_clips = match &args.val {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    log::info!(
        "training {} parameters on {} clips for {} steps",
        model.param_count(),
        train_clips.len(),
        config.max_steps
    );
    let outcome = train(&mut model, &train_clips, &val_clips, &config, Some(&args.out))?;
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "best_step": outcome.best_step,
            "best_val_miae": outcome.best_val_miae,
            "final_val": outcome.final_val,
            "final_loss": outcome.log.last().map(|l| l.total),
        }),
    )?;
    Ok(())
}

fn count_cmd(args: CountArgs) -> anyhow::Result<()> {
    let manifest = manifest_path(&args.clip)?;
    let options = |fps: f64| CountOptions {
        stride: args.stride.unwrap_or_else(|| default_stride(fps)),
        cap: (args.cap_long, args.cap_short),
        tail_pair: args.tail_pair,
    };
    let (mut result, annotation) = if args.oracle {
        let annotation = vic_core::dataset::load_annotation(&manifest)?;
        let kernel = KernelSpec::with_sigma(args.sigma);
        kernel.validate()?;
        (count_oracle(&annotation, kernel, &options(annotation.fps))?, annotation)
    } else {
        let ckpt = args
            .ckpt
            .as_ref()
            .ok_or_else(|| Error::Parameter("--ckpt is required unless --oracle is given".into()))?;
        let model = Model::load(ckpt)?;
        let clip = load_clip(&manifest)?;
        let opts = options(clip.annotation.fps);
        (count_video(&clip.annotation.clip_id, &clip.frames, &model, &opts)?, clip.annotation)
    };
    if args.gt_first_frame {
        let n = annotation.frames.first().map_or(0, |f| f.points.len());
        result = result.with_first_frame_count(n as f64);
    }
    let out = if args.out.is_dir() {
        args.out.join(format!("{}.json", result.clip_id))
    } else {
        if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        args.out.clone()
    };
    result.save_json(&out)?;
    println!("{}: {:.3}", result.clip_id, result.total);
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> anyhow::Result<()> {
    let mut results: Vec<VideoCountResult> = Vec::new();
    let entries = std::fs::read_dir(&args.pred).map_err(|e| Error::io(&args.pred, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for p in paths {
        match VideoCountResult::load_json(&p) {
            Ok(r) => results.push(r),
            Err(e) => log::debug!("skipping {}: {e}", p.display()),
        }
    }
    if results.is_empty() {
        return Err(Error::Input(format!("no count results in {}", args.pred.display())).into());
    }
    let mut clips = std::collections::HashMap::new();
    for m in find_manifests(&args.gt)? {
        let a = vic_core::dataset::load_annotation(&m)?;
        clips.insert(a.clip_id.clone(), a);
    }
    let mut records = Vec::with_capacity(results.len());
    for r in &results {
        let clip = clips
            .get(&r.clip_id)
            .ok_or_else(|| Error::Input(format!("no annotations for clip {}", r.clip_id)))?;
        if clip.supervision != vic_core::annotations::Supervision::Full {
            return Err(Error::Supervision(format!("clip {} has no identities to count", r.clip_id)).into());
        }
        let mut rec = VideoEvalRecord::new(&r.clip_id, clip.distinct_ids() as u64, r.total, clip.len());
        for p in &r.pairs {
            if p.b >= clip.len() {
                return Err(Error::Input(format!("clip {}: pair ({}, {}) out of range", r.clip_id, p.a, p.b)).into());
            }
            let flow = derive_flow_for(clip.supervision, &clip.frames[p.a], &clip.frames[p.b])?;
            rec.pair_flows.push(PairFlow {
                inflow_pred: p.inflow,
                inflow_true: flow.inflow.len() as f64,
                outflow_pred: p.outflow,
                outflow_true: flow.outflow.len() as f64,
            });
        }
        records.push(rec);
    }
    let report = EvalReport::from_records(records)?;
    let out = args.out.unwrap_or(args.pred);
    create_dir(&out)?;
    report.save_json(out.join("report.json"))?;
    let csv = out.join("report.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    println!("MAE {:.4} RMSE {:.4} WRAE {:.2}%", report.MAE, report.RMSE, report.WRAE);
    Ok(())
}

fn viz(args: VizArgs) -> anyhow::Result<()> {
    let manifest = manifest_path(&args.clip)?;
    let clip = load_clip(&manifest)?;
    let (a, b) = args.pair;
    if a >= clip.len() || b >= clip.len() || a == b {
        return Err(Error::Parameter(format!("pair {a},{b} is not two distinct frames of a {}-frame clip", clip.len())).into());
    }
    let model = Model::load(&args.ckpt)?;
    let pred = predict_pair(&model, &clip.frames[a], &clip.frames[b], DEFAULT_CAP)?;
    let (fa, _) = clip.frames[a].capped(DEFAULT_CAP.0, DEFAULT_CAP.1);
    let (fb, _) = clip.frames[b].capped(DEFAULT_CAP.0, DEFAULT_CAP.1);
    let o = &pred.outputs;
    let zeros = vic_core::autograd::Array::zeros(o.global_a.shape());
    let shared_a = o.shared_a.as_ref().unwrap_or(&zeros);
    let shared_b = o.shared_b.as_ref().unwrap_or(&zeros);
    create_dir(&args.out)?;
    let maps = [
        ("global_a", &o.global_a, &fa, MapRole::Global),
        ("global_b", &o.global_b, &fb, MapRole::Global),
        ("shared_a", shared_a, &fa, MapRole::Shared),
        ("shared_b", shared_b, &fb, MapRole::Shared),
        ("outflow_a", &o.outflow_a, &fa, MapRole::Outflow),
        ("inflow_b", &o.inflow_b, &fb, MapRole::Inflow),
    ];
    for (name, map, frame, role) in maps {
        let density = ModelOutputs::to_density(map, role);
        heat_overlay(frame, density.data()).save_png(args.out.join(format!("{name}.png")))?;
    }
    write_json(
        &args.out.join("viz.json"),
        &json!({
            "clip": manifest,
            "ckpt": args.ckpt,
            "pair": [a, b],
            "inflow_mass": pred.inflow_mass,
            "outflow_mass": pred.outflow_mass,
        }),
    )?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Runtime) | None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_target(false).init();
    let result = match cli.command {
        Command::Synth(a) => synth(a).context("synth"),
        Command::DeriveGt(a) => derive_gt(a).context("derive-gt"),
        Command::Train(a) => train_cmd(a).context("train"),
        Command::Count(a) => count_cmd(a).context("count"),
        Command::Eval(a) => eval_cmd(a).context("eval"),
        Command::Viz(a) => viz(a).context("viz"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
