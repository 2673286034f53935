use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pseudolabel::coco;
use pseudolabel::eval::EvalParams;
use pseudolabel::pipeline::{self, PipelineConfig};
use pseudolabel::schedule::{self, ScheduleConfig};
use pseudolabel::{viz, HierLevel, Result};

#[derive(Parser)]
#[command(name = "pseudolabel", version, about = "Hierarchical object pseudo-labels from patch features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster feature maps into leveled mask annotations.
    Generate(GenerateArgs),
    /// Class-agnostic AR/AP of results against ground truth.
    Eval(EvalArgs),
    /// Draw annotation masks over their images.
    Viz(VizArgs),
    /// Write the self-training schedule as CSV.
    ScheduleDump(ScheduleArgs),
    /// Summarize an annotation file.
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory of .fmap / .npy feature files.
    #[arg(long)]
    features: PathBuf,
    /// Directory of RGB images; enables CRF refinement.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Per-image statistics; defaults to <out>.stats.json.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    connectivity: Option<u8>,
    #[arg(long)]
    cover_percent: Option<f64>,
    #[arg(long)]
    no_crf: bool,
    #[arg(long)]
    crf_iterations: Option<usize>,
    #[arg(long)]
    min_area_px: Option<u64>,
    #[arg(long)]
    max_corner_count: Option<usize>,
    #[arg(long)]
    min_crf_iou: Option<f64>,
    #[arg(long)]
    dedup_iou: Option<f64>,
    #[arg(long)]
    npy_patch_size: Option<usize>,
}

impl GenerateArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() { cfg.$field = v; }
            )*};
        }
        set!(thresholds, connectivity, cover_percent, crf_iterations, min_area_px, max_corner_count, min_crf_iou, dedup_iou, npy_patch_size);
        if let Some(w) = self.workers {
            cfg.worker_count = w;
        }
        if self.no_crf {
            cfg.crf_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    max_dets: Vec<usize>,
    /// IoU thresholds; defaults to 0.50:0.05:0.95.
    #[arg(long, value_delimiter = ',')]
    iou_thrs: Option<Vec<f64>>,
    /// Also report recall against each level's ground truth.
    #[arg(long)]
    per_level: bool,
    /// Write the full result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// whole, part or subpart.
    #[arg(long)]
    level: Option<HierLevel>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    annotations: PathBuf,
}

fn generate(args: &GenerateArgs) -> Result<u8> {
    let cfg = args.config()?;
    let out = pipeline::generate(&args.features, args.images.as_deref(), &cfg)?;
    let code = out.exit_code();
    if code == 1 {
        log::error!("all {} images failed", out.stats.failed.len());
        return Ok(1);
    }
    coco::write_json(&args.out, &out.annotations)?;
    let stats_path = args.stats.clone().unwrap_or_else(|| args.out.with_extension("stats.json"));
    fs::write(&stats_path, serde_json::to_string_pretty(&out.stats).map_err(io::Error::from)? + "\n")?;
    eprintln!(
        "{} images, {} annotations, {} skipped",
        out.stats.images.len(),
        out.annotations.annotations.len(),
        out.stats.failed.len()
    );
    Ok(code as u8)
}

fn eval(args: &EvalArgs) -> Result<u8> {
    let mut params = EvalParams {
        max_dets: args.max_dets.clone(),
        ..EvalParams::default()
    };
    if let Some(t) = &args.iou_thrs {
        params.iou_thresholds = t.clone();
    }
    let report = pipeline::run_eval(&args.gt, &args.results, &params, args.per_level)?;
    let mut text = pipeline::format_metrics(&report.result.bbox);
    if let Some(m) = &report.result.segm {
        text += &pipeline::format_metrics(m);
    }
    for lm in &report.per_level {
        text += &format!("[{}]\n{}", lm.level.name(), pipeline::format_metrics(&lm.metrics));
    }
    print!("{text}");
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&report).map_err(io::Error::from)? + "\n")?;
    }
    Ok(0)
}

fn viz(args: &VizArgs) -> Result<u8> {
    let file = coco::read_annotation_file(&args.annotations)?;
    let report = viz::render_all(&file, &args.images, &args.out_dir, args.level)?;
    eprintln!("{} overlays written, {} failed", report.written.len(), report.failed.len());
    Ok(match (report.written.len(), report.failed.len()) {
        (_, 0) => 0,
        (0, _) => 1,
        _ => 2,
    })
}

fn schedule_dump(args: &ScheduleArgs) -> Result<u8> {
    let cfg = match &args.config {
        Some(p) => pipeline::load_schedule_config(p)?,
        None => ScheduleConfig::default(),
    };
    match &args.out {
        Some(p) => schedule::write_schedule_csv(&cfg, io::BufWriter::new(fs::File::create(p)?))?,
        None => schedule::write_schedule_csv(&cfg, io::stdout().lock())?,
    }
    Ok(0)
}

fn stats(path: &Path) -> Result<u8> {
    let file = coco::read_annotation_file(path)?;
    let s = pipeline::annotation_stats(&file);
    let mut out = io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&s).map_err(io::Error::from)?)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Viz(a) => viz(a),
        Command::ScheduleDump(a) => schedule_dump(a),
        Command::Stats(a) => stats(&a.annotations),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
