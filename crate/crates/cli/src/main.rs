//! `fusepose` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input or failed run,
//! 3 partial failure (some samples failed).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use fusepose::fusion::{cross_fuse, fuse_pair, PairingPolicy};
use fusepose::geometry::CameraModel;
use fusepose::lifter::{run_regimes_on, InputKind};
use fusepose::metrics::{evaluate, MetricOptions};
use fusepose::pipeline::tensor::{read_pose, write_pose, PoseTensor};
use fusepose::pipeline::{
    export_training_set, run_pipeline, run_regimes, GeneratorConfig, Manifest, PipelineConfig,
    PipelineError, SourceDataset,
};
use fusepose::quality::{filter_top, score_sample, QualityReport, ScoreSummary};
use fusepose::skeleton::JointSchema;
use fusepose::synth::{self, CorruptionKnob, DetectorNoiseConfig, GeneratorRequest};
use fusepose::toy::{regime_corpus, write_dataset, ToySpec};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "fusepose", version, about = "Cross-dataset pose fusion, synthesis and evaluation")]
struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured worker count (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output location.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write two procedural source datasets and a matching run config.
    Toy {
        #[arg(long, default_value_t = 2)]
        scenes: usize,
        #[arg(long, default_value_t = 2)]
        motions: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Corruption failure probability of the mock generator.
        #[arg(long, default_value_t = 0.5)]
        failure_prob: f64,
    },
    /// Full chain: fuse, generate, detect, score, filter, write manifest.
    Run,
    /// Align and project every configured pairing without generating.
    Fuse,
    /// Generate frames for one guidance tensor.
    Generate {
        #[arg(long)]
        guidance: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        reference: Vec<PathBuf>,
    },
    /// Detect keypoints in a frame directory.
    Detect {
        #[arg(long)]
        frames: PathBuf,
        /// Schema the detector reports in.
        #[arg(long, default_value = "coco-body")]
        schema: String,
    },
    /// Score detections against guidance on the normalized image plane.
    Score {
        #[arg(long)]
        detected: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        camera: PathBuf,
    },
    /// Keep the best-scoring fraction of a reports file.
    Filter {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
    },
    /// Export a lifter-ready corpus from a manifest.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        channel: Channel,
    },
    /// MPJPE, P-MPJPE, N-MPJPE and velocity error over tensor pairs.
    Eval {
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        /// Compare absolute positions instead of root-relative ones.
        #[arg(long)]
        absolute: bool,
        /// Rigid instead of similarity Procrustes alignment.
        #[arg(long)]
        no_scale: bool,
        #[arg(long)]
        json: bool,
    },
    /// Train/test GT-vs-HPE regime comparison with a ridge lifter.
    Regime {
        #[arg(long, conflicts_with = "toy")]
        train: Option<PathBuf>,
        #[arg(long, conflicts_with = "toy")]
        test: Option<PathBuf>,
        /// Use a procedural corpus of this many sequences instead.
        #[arg(long)]
        toy: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Check a manifest's files, hashes and invariants.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Channel {
    Gt,
    Hpe,
}

impl From<Channel> for InputKind {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Gt => InputKind::Gt,
            Channel::Hpe => InputKind::Hpe,
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_INVALID,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Toy {
            scenes,
            motions,
            frames,
            failure_prob,
        } => toy(cli, *scenes, *motions, *frames, *failure_prob),
        Command::Run => run(cli),
        Command::Fuse => fuse(cli),
        Command::Generate {
            guidance,
            camera,
            reference,
        } => generate(cli, guidance, camera, reference),
        Command::Detect { frames, schema } => detect(cli, frames, schema),
        Command::Score {
            detected,
            truth,
            camera,
        } => score(detected, truth, camera),
        Command::Filter { reports, fraction } => filter(reports, *fraction),
        Command::Export { manifest, channel } => export(cli, manifest, *channel),
        Command::Eval {
            gt,
            pred,
            absolute,
            no_scale,
            json,
        } => eval(gt, pred, *absolute, *no_scale, *json),
        Command::Regime {
            train,
            test,
            toy,
            lambda,
            seeds,
            json,
        } => regime(cli, train.as_deref(), test.as_deref(), *toy, *lambda, seeds, *json),
        Command::Validate { manifest } => validate(manifest),
    }
}

fn require_out(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::usage("--out is required for this command"))
}

/// Loads `--config` (or defaults when absent and `optional`) and applies
/// the global overrides.
fn load_config(cli: &Cli, optional: bool) -> Result<Option<PipelineConfig>, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if optional => return Ok(None),
        None => return Err(Failure::usage("--config is required for this command")),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(Some(cfg))
}

fn guidance_resolver(name: &str) -> Option<Arc<JointSchema>> {
    JointSchema::builtin(name).map(Arc::new)
}

fn toy(cli: &Cli, scenes: usize, motions: usize, frames: usize, failure_prob: f64) -> Outcome {
    let out = require_out(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let mut sources = Vec::new();
    for (i, name) in ["studio", "outdoor"].iter().enumerate() {
        let mut spec = ToySpec::new(name, scenes, motions, seed);
        spec.frames = frames;
        // The second dataset stores mirrored motions to exercise the
        // handedness correction.
        spec.flip_axis = (i == 1).then_some(0);
        let path = write_dataset(&out.join(name), &spec)?;
        sources.push(path.strip_prefix(out).unwrap_or(&path).to_path_buf());
    }
    let mut cfg = PipelineConfig::new(sources);
    cfg.seed = seed;
    cfg.workers = cli.workers.unwrap_or(0);
    cfg.pairing = PairingPolicy::CrossOnly;
    cfg.generator = GeneratorConfig::Mock {
        knob: CorruptionKnob {
            pose_drift_sigma: 40.0,
            drift_correlation: 0.9,
            failure_prob,
        },
    };
    let path = out.join("run.toml");
    fs::write(&path, cfg.to_toml()?)?;
    println!("{}", path.display());
    Ok(0)
}

fn run(cli: &Cli) -> Outcome {
    let cfg = load_config(cli, false)?.expect("required");
    let out = require_out(cli)?;
    let summary = match run_pipeline(&cfg, out) {
        Ok(s) => s,
        Err(PipelineError::AllFailed(n)) => {
            return Err(Failure {
                code: EXIT_INVALID,
                message: format!("all {n} samples failed; see {}", out.join("manifest.json").display()),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let scores: Vec<f64> = summary.manifest.samples.iter().filter_map(|s| s.quality_score).collect();
    let kept: Vec<f64> = summary.manifest.kept().filter_map(|s| s.quality_score).collect();
    println!(
        "attempted {}  completed {}  failed {}  resumed {}  kept {}",
        summary.attempted, summary.completed, summary.failed, summary.resumed, summary.kept
    );
    if let (Some(all), Some(k)) = (ScoreSummary::of(&scores), ScoreSummary::of(&kept)) {
        println!("mean score  unfiltered {:.2}  filtered {:.2}", all.mean, k.mean);
    }
    println!("{}", summary.manifest_path.display());
    Ok(if summary.failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn fuse(cli: &Cli) -> Outcome {
    let cfg = load_config(cli, false)?.expect("required");
    let out = require_out(cli)?;
    let mut scenes = Vec::new();
    let mut motions = Vec::new();
    let mut schema = None;
    for src in &cfg.sources {
        let ds = SourceDataset::load(&cfg.resolve(src))?;
        if !ds.motions.is_empty() {
            schema.get_or_insert(ds.schema.clone());
        }
        scenes.extend(ds.scenes);
        motions.extend(ds.motions);
    }
    let schema = schema.ok_or_else(|| Failure::usage("no source provides motions"))?;
    let mapping = cfg.mapping(schema, cfg.guidance_schema()?)?;
    let pairs = cross_fuse(&scenes, &motions, cfg.pairing)?;
    let mut failed = 0;
    for p in &pairs {
        let dir = out.join(fusepose::pipeline::sample_dir_name(&p.id));
        match fuse_pair(&scenes[p.scene_index], &motions[p.motion_index], &mapping, &cfg.fusion) {
            Ok((f, _)) => {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("camera.json"), f.camera.to_json())?;
                write_pose(&dir.join("gt_3d_world.pseq"), &f.gt_3d_world.into())?;
                write_pose(&dir.join("gt_3d_camera.pseq"), &f.gt_3d_camera.into())?;
                write_pose(&dir.join("guidance_2d.pseq"), &f.guidance_2d.into())?;
                println!("{}\tok", p.id);
            }
            Err(e) => {
                failed += 1;
                println!("{}\tfailed: {e}", p.id);
            }
        }
    }
    Ok(match failed {
        0 => 0,
        n if n == pairs.len() => EXIT_INVALID,
        _ => EXIT_PARTIAL,
    })
}

fn generate(cli: &Cli, guidance: &Path, camera: &Path, reference: &[PathBuf]) -> Outcome {
    let out = require_out(cli)?;
    let cfg = load_config(cli, true)?;
    let guidance = read_pose(guidance)?.into_2d()?;
    let camera = CameraModel::from_file(camera)?;
    let req = GeneratorRequest {
        reference_frame_paths: reference.to_vec(),
        guidance: guidance.clone(),
        output_dir: out.to_path_buf(),
        seed: cli.seed.unwrap_or(0),
        image_width: camera.image_width,
        image_height: camera.image_height,
    };
    let adapter = match &cfg {
        Some(c) => c.generator(guidance.schema().clone())?,
        None => Box::new(synth::MockGenerator::new(guidance.schema().clone(), CorruptionKnob::default())?),
    };
    let dir = synth::generate(&req, adapter.as_ref())?;
    println!("{}", dir.display());
    Ok(0)
}

fn detect(cli: &Cli, frames: &Path, schema: &str) -> Outcome {
    let out = require_out(cli)?;
    let cfg = load_config(cli, true)?;
    let schema = Arc::new(JointSchema::resolve(schema)?);
    let adapter = match &cfg {
        Some(c) => c.detector(schema)?,
        None => Box::new(synth::SyntheticDetector::new(schema, DetectorNoiseConfig::default())?),
    };
    let kps = synth::detect(frames, adapter.as_ref(), cli.seed.unwrap_or(0))?;
    write_pose(out, &PoseTensor::Pose2D(kps))?;
    println!("{}", out.display());
    Ok(0)
}

fn score(detected: &Path, truth: &Path, camera: &Path) -> Outcome {
    let det = fusepose::pipeline::tensor::read_pose_with(detected, guidance_resolver)?.into_2d()?;
    let gt = fusepose::pipeline::tensor::read_pose_with(truth, guidance_resolver)?.into_2d()?;
    let cam = CameraModel::from_file(camera)?;
    let id = detected.display().to_string();
    let report = score_sample(&id, &det, &gt, &cam)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(0)
}

fn filter(reports: &Path, fraction: f64) -> Outcome {
    let text = fs::read_to_string(reports)?;
    let mut rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<QualityReport>)
        .collect::<Result<Vec<_>, _>>()?;
    let kept = filter_top(&mut rows, fraction)?;
    for id in kept {
        println!("{id}");
    }
    Ok(0)
}

fn export(cli: &Cli, manifest: &Path, channel: Channel) -> Outcome {
    let out = require_out(cli)?;
    let index = export_training_set(manifest, channel.into(), out)?;
    println!("exported {} pairs ({}) to {}", index.pairs.len(), index.channel, out.display());
    Ok(0)
}

fn eval(gt: &[PathBuf], pred: &[PathBuf], absolute: bool, no_scale: bool, json: bool) -> Outcome {
    if gt.len() != pred.len() {
        return Err(Failure::usage("--gt and --pred must be given the same number of times"));
    }
    let load = |ps: &[PathBuf]| -> Result<Vec<_>, Failure> {
        ps.iter().map(|p| Ok(read_pose(p)?.into_3d()?)).collect()
    };
    let opts = MetricOptions {
        root_relative: !absolute,
        procrustes_scale: !no_scale,
    };
    let report = evaluate(&load(gt)?, &load(pred)?, opts)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(0)
}

fn regime(
    cli: &Cli,
    train: Option<&Path>,
    test: Option<&Path>,
    toy: Option<usize>,
    lambda: f64,
    seeds: &[u64],
    json: bool,
) -> Outcome {
    let table = match (train, test, toy) {
        (_, _, Some(n)) => {
            let noise = DetectorNoiseConfig {
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let corpus = regime_corpus(n, 16, cli.seed.unwrap_or(0), &noise)?;
            let split = corpus.len() * 4 / 5;
            run_regimes_on(&corpus[..split], &corpus[split..], lambda, seeds)?
        }
        (Some(a), Some(b), None) => run_regimes(a, b, lambda, seeds)?,
        _ => return Err(Failure::usage("give --train and --test manifests, or --toy N")),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.text());
    }
    Ok(0)
}

fn validate(manifest_path: &Path) -> Outcome {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let issues = manifest.validate(root);
    for issue in &issues {
        println!("{issue}");
    }
    if issues.is_empty() {
        println!("ok: {} samples", manifest.samples.len());
        Ok(0)
    } else {
        Ok(EXIT_INVALID)
    }
}
