mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fadsar_core::annotate::export_annotations;
use fadsar_core::ingest::{
    synth_scene, write_json, write_jsonl, write_labels_file, write_predictions_file, write_report, write_scene,
    ClassMix, DatasetManifest, RasterFormat, Split, SynthSpec,
};
use fadsar_core::model::{Confidence, LabelRecord};
use fadsar_core::pipeline::{build_dataset, detect_dataset, tile_dataset, with_workers};
use fadsar_core::preprocess::{EdgePolicy, FusionMethod};
use fadsar_core::score::{format_counts, format_table, score_run};
use fadsar_core::{Error, ErrorClass, Result};
use tracing_subscriber::EnvFilter;

use crate::config::{Overrides, PipelineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "fadsar",
    version,
    about = "SAR vessel and fishing detection data pipeline and scorer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes with known targets
    Synth(SynthArgs),
    /// Cut scenes into normalized 3-channel patches
    Tile(ManifestArgs),
    /// Build box annotations for the emitted patches
    Dataset(DatasetArgs),
    /// Run the threshold reference detector
    Detect(ManifestArgs),
    /// Score a prediction file against labels
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// pad-zero, pad-reflect or drop-partial
    #[arg(long, global = true)]
    edge_policy: Option<EdgePolicy>,
    /// mean-vv-vh, diff-vv-vh, single-aux:<name>, mean-aux[:list], mean-all[:list]
    #[arg(long, global = true)]
    fusion: Option<FusionMethod>,
    #[arg(long, global = true)]
    bbox_size: Option<usize>,
    /// HIGH, MEDIUM or LOW
    #[arg(long, global = true)]
    min_confidence: Option<Confidence>,
    #[arg(long, global = true)]
    match_radius_m: Option<f64>,
    #[arg(long, global = true)]
    shore_km: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let overrides = Overrides {
            patch_size: self.patch_size,
            stride: self.stride,
            edge_policy: self.edge_policy,
            fusion: self.fusion.clone(),
            bbox_size: self.bbox_size,
            min_confidence: self.min_confidence,
            match_radius_m: self.match_radius_m,
            shore_km: self.shore_km,
            workers: self.workers,
            out: self.out.clone(),
        };
        PipelineConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    #[arg(long, default_value_t = 1600)]
    width: usize,
    #[arg(long, default_value_t = 1600)]
    height: usize,
    #[arg(long, default_value_t = 12)]
    targets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// all-fishing or uniform
    #[arg(long, default_value = "all-fishing", value_parser = parse_class_mix)]
    class_mix: ClassMix,
    /// Share of HIGH-confidence labels
    #[arg(long, default_value_t = 1.0)]
    high_fraction: f64,
    #[arg(long)]
    aux_downsample: Option<usize>,
    /// tif or raw
    #[arg(long, default_value = "tif")]
    format: RasterFormat,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to the label file named in the manifest
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    predictions: PathBuf,
    /// Defaults to the label file named in the manifest
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
}

fn parse_class_mix(s: &str) -> std::result::Result<ClassMix, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "all-fishing" => Ok(ClassMix::AllFishing),
        "uniform" => Ok(ClassMix::Uniform),
        _ => Err(format!("unknown class mix `{s}`")),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Schema => 4,
    }
}

fn create_out(config: &PipelineConfig) -> Result<&Path> {
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    Ok(&config.out)
}

fn labels_path(explicit: Option<&Path>, manifest: &DatasetManifest) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| manifest.labels.clone())
        .ok_or_else(|| Error::Config("no label file given and the manifest names none".into()))
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let out = create_out(&config)?;
    let scene_dir = out.join("scenes");
    let mut entries = Vec::with_capacity(args.scenes);
    let mut labels: Vec<LabelRecord> = Vec::new();
    let mut placements = Vec::new();
    for i in 0..args.scenes {
        let spec = SynthSpec {
            scene_id: format!("synth_{i:03}"),
            width: args.width,
            height: args.height,
            n_targets: args.targets,
            class_mix: args.class_mix,
            high_confidence_fraction: args.high_fraction,
            aux_downsample: args.aux_downsample,
            rng_seed: args.seed.wrapping_add(i as u64),
            ..SynthSpec::default()
        };
        let synth = synth_scene(&spec)?;
        entries.push(write_scene(&synth.scene, &scene_dir, args.format)?);
        labels.extend(synth.labels);
        placements.push((spec.scene_id, synth.placements));
    }
    let labels_file = out.join("labels.csv");
    write_labels_file(&labels, &labels_file)?;
    write_json(&placements, &out.join("placements.json"))?;
    let manifest = DatasetManifest {
        split: Split::Train,
        labels: Some(labels_file),
        scenes: entries,
    };
    manifest.save(&out.join("manifest.json"))?;
    println!(
        "wrote {} scene(s) and {} label(s) to {}",
        args.scenes,
        labels.len(),
        out.display()
    );
    Ok(())
}

fn cmd_tile(args: &ManifestArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let out = create_out(&config)?;
    let tiled = with_workers(config.workers, || {
        tile_dataset(&manifest, &config.tiling, &config.fusion, &out.join("patches"))
    })??;
    write_jsonl(&tiled.index, &out.join("patches.jsonl"))?;
    write_jsonl(&tiled.discards, &out.join("discards.jsonl"))?;
    println!("{} patch(es), {} discarded", tiled.index.len(), tiled.discards.len());
    Ok(())
}

fn cmd_dataset(args: &DatasetArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let labels = fadsar_core::ingest::read_labels_file(&labels_path(args.labels.as_deref(), &manifest)?)?;
    let out = create_out(&config)?;
    let built = with_workers(config.workers, || {
        build_dataset(&manifest, &labels, &config.tiling, &config.fusion, &config.annotate)
    })??;
    export_annotations(&built.annotations, &built.patches, &out.join("annotations.json"))?;
    write_jsonl(&built.drop_log, &out.join("drop_log.jsonl"))?;
    write_jsonl(&built.discards, &out.join("discards.jsonl"))?;
    println!(
        "{} annotation(s) on {} patch(es), {} label(s) dropped",
        built.annotations.len(),
        built.patches.len(),
        built.drop_log.len()
    );
    Ok(())
}

fn cmd_detect(args: &ManifestArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let out = create_out(&config)?;
    let found = with_workers(config.workers, || {
        detect_dataset(&manifest, &config.tiling, &config.fusion, &config.refdetect)
    })??;
    write_predictions_file(&found, &out.join("predictions.csv"))?;
    println!("{} detection(s)", found.len());
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let labels = match &args.labels {
        Some(p) => p.clone(),
        None => labels_path(None, &DatasetManifest::load(&args.manifest)?)?,
    };
    let out = create_out(&config)?;
    let report = with_workers(config.workers, || {
        score_run(&args.predictions, &labels, &args.manifest, &config.score)
    })??;
    write_report(&report, &out.join("report.json"))?;
    let name = args
        .predictions
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("predictions");
    print!("{}", format_table(&[(name, &report)]));
    print!("{}", format_counts(&report));
    Ok(())
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("FADSAR_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Tile(a) => cmd_tile(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Score(a) => cmd_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
