use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use genhop::dataset::{quantize, DatasetSource};
use genhop::pipeline::{train_with_report, ModelSummary, TrainReport};
use genhop::{Error, GenHopConfig, GenHopModel, ImageTensor, Preset};
use image::{GrayImage, RgbImage};

#[derive(Parser)]
#[command(name = "genhop", version, about = "Train GenHop image models and sample from them")]
struct Cli {
    /// Print a single JSON summary line on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an IDX file or an image directory.
    Train(TrainArgs),
    /// Generate PNG samples and a grid montage from a model.
    Generate(GenerateArgs),
    /// Print a model's configuration, dimensions and sizes.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Hyper-parameter preset: mnist, fashion or celeba.
    #[arg(long, default_value = "mnist")]
    preset: Preset,
    /// IDX file, directory holding train-images-idx3-ubyte[.gz], or image directory.
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_seed: Option<u64>,
    /// Number of seed-space clusters.
    #[arg(long)]
    clusters: Option<usize>,
    /// Spatial PCA threshold on normalized eigenvalues.
    #[arg(long)]
    gamma: Option<f64>,
    /// Upper bound on LLE neighbors (1 to 3).
    #[arg(long)]
    kmax: Option<usize>,
    /// Use at most this many training images.
    #[arg(long)]
    limit: Option<usize>,
    /// Square side that image-directory inputs are cropped and resized to.
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the PNGs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

/// Exit code for unusable paths and configurations.
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, cli.json),
        Command::Generate(a) => cmd_generate(a, cli.json),
        Command::Inspect(a) => cmd_inspect(a, cli.json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Dataset { .. } | Error::InvalidConfig(_) | Error::Io(_))
            );
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("GENHOP_THREADS") else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().with_context(|| format!("GENHOP_THREADS must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        bail!("GENHOP_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn build_config(a: &TrainArgs) -> GenHopConfig {
    let mut cfg = a.preset.config();
    if let Some(s) = a.image_size {
        cfg.image_shape = (s, s, cfg.image_shape.2);
    }
    cfg.train_seed = a.train_seed.unwrap_or(cfg.train_seed);
    cfg.clusters = a.clusters.unwrap_or(cfg.clusters);
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.k_max = a.kmax.unwrap_or(cfg.k_max);
    cfg
}

fn cmd_train(a: &TrainArgs, json: bool) -> anyhow::Result<()> {
    let cfg = build_config(a);
    cfg.validate()?;
    let (h, w, c) = cfg.image_shape;
    let load_start = Instant::now();
    let images = DatasetSource::detect(&a.data, (h, w), c)?.load(a.limit)?;
    let load_secs = load_start.elapsed().as_secs_f64();
    eprintln!("loaded {} images of {h}x{w}x{c} from {} in {load_secs:.2}s", images.len(), a.data.display());

    let (model, report) = train_with_report(&images, &cfg)?;
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print_train_report(&report);
    eprintln!("model written to {}", a.out.display());
    if json {
        let line = serde_json::json!({
            "command": "train",
            "model": a.out,
            "load_seconds": load_secs,
            "report": report,
        });
        println!("{line}");
    }
    Ok(())
}

fn print_train_report(r: &TrainReport) {
    eprintln!("trained on {} images", r.images);
    for t in &r.timings {
        eprintln!("  {:<10} {:>8.3}s", t.stage, t.seconds);
    }
    for line in summary_lines(&r.summary) {
        eprintln!("{line}");
    }
}

fn summary_lines(s: &ModelSummary) -> Vec<String> {
    let c = &s.config;
    let mut out = vec![
        format!("format version {}", s.format_version),
        format!(
            "config: image {:?}, hop1 ({}, {}), hop2 ({}, {}), gamma {}, clusters {}, k_max {}, train seed {}",
            c.image_shape,
            c.hop1.keep_low,
            c.hop1.keep_high,
            c.hop2.keep_low,
            c.hop2.keep_high,
            c.gamma,
            c.clusters,
            c.k_max,
            c.train_seed
        ),
        format!("S1 {:?}, S4 {:?}, hf1 {:?}, hf2 {:?}", s.s1_shape, s.s4_shape, s.hf1_shape, s.hf2_shape),
        format!("seed dimension D4 = {} (per channel {:?})", s.seed_dim, s.retained_per_channel),
        format!("hop-1 energies {}", fmt_list(&s.hop1_energies)),
        format!("hop-2 energy shares {}", fmt_list(&s.hop2_energies)),
        format!("cluster priors {}", fmt_list(&s.cluster_priors)),
    ];
    let books = [
        ("seed codebooks", Some(&s.codebook_s4)),
        ("detail codebooks", Some(&s.codebook_s1)),
        ("color codebooks", s.color_codebook.as_ref()),
    ];
    for (name, b) in books {
        if let Some(b) = b {
            out.push(format!(
                "{name}: {} regions on {:?}, {} entries each, LF dim {}, HF dim {}",
                b.regions, b.grid, b.entries, b.d_lf, b.d_hf
            ));
        }
    }
    out
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn cmd_generate(a: &GenerateArgs, json: bool) -> anyhow::Result<()> {
    let model = GenHopModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let start = Instant::now();
    let images = model.generate(a.count, a.seed)?;
    let secs = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, img) in images.iter().enumerate() {
        write_png(img, &a.out.join(format!("sample_{i:05}.png")))?;
    }
    let grid = if images.is_empty() {
        None
    } else {
        let path = a.out.join("grid.png");
        write_png(&montage(&images), &path)?;
        Some(path)
    };
    eprintln!("generated {} images in {secs:.2}s into {}", images.len(), a.out.display());
    if json {
        let line = serde_json::json!({
            "command": "generate",
            "model": a.model,
            "count": images.len(),
            "seed": a.seed,
            "out": a.out,
            "grid": grid,
            "seconds": secs,
        });
        println!("{line}");
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs, json: bool) -> anyhow::Result<()> {
    let model = GenHopModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let summary = model.summary();
    if json {
        println!("{}", serde_json::json!({ "command": "inspect", "model": a.model, "summary": summary }));
    } else {
        for line in summary_lines(&summary) {
            println!("{line}");
        }
    }
    Ok(())
}

/// Tiles images row-major into a near-square grid.
fn montage(images: &[ImageTensor]) -> ImageTensor {
    let (h, w, c) = images[0].shape();
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    ImageTensor::from_fn(rows * h, cols * w, c, |y, x, ch| {
        images.get((y / h) * cols + x / w).map_or(0.0, |t| t.get(y % h, x % w, ch))
    })
}

fn write_png(t: &ImageTensor, path: &Path) -> anyhow::Result<()> {
    let (h, w, c) = t.shape();
    let bytes = quantize(t);
    let res = match c {
        1 => GrayImage::from_raw(w as u32, h as u32, bytes).map(|i| i.save(path)),
        3 => RgbImage::from_raw(w as u32, h as u32, bytes).map(|i| i.save(path)),
        _ => bail!("cannot write a {c}-channel image as PNG"),
    };
    res.context("image buffer size")?.with_context(|| format!("writing {}", path.display()))
}
