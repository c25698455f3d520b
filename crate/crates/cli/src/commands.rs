use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use plant_doctor::config::RunConfig;
use plant_doctor::detection::ModelDetector;
use plant_doctor::ingest::{FrameSource, ImageDirSource, IngestError, RawRgbSource};
use plant_doctor::pipeline::{limit_threads, threads_from_env, Analysis, Pipeline, PipelineError};
use plant_doctor::report::{self, compare_annotations, evaluate_mask_dirs, read_csv};
use plant_doctor::segmentation::ModelSegmenter;
use plant_doctor::synthetic::{OracleDetector, OracleSegmenter, Scene, SceneError, SceneSpec};
use plant_doctor::{BackendKind, Detector, Segmenter};

use crate::args::{AnalyzeArgs, CompareArgs, EvalArgs, Geometry, SynthArgs};

const USAGE: u8 = 1;
const INPUT: u8 = 2;
const BACKEND: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: USAGE,
            error: error.into(),
        }
    }

    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: INPUT,
            error: error.into(),
        }
    }

    fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: BACKEND,
            error: error.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) | PipelineError::Tracker(_) => USAGE,
            PipelineError::Ingest(IngestError::InvalidConfig(_)) => USAGE,
            PipelineError::Ingest(_) | PipelineError::Output { .. } => INPUT,
            PipelineError::Backend(_) => BACKEND,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_output(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .context("cannot write to standard output"),
    }
    .map_err(Failure::input)
}

fn build_config(args: &AnalyzeArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    if args.source_fps.is_some() {
        cfg.ingest.source_fps = args.source_fps;
    }
    if let Some(v) = args.target_fps {
        cfg.ingest.target_fps = v;
    }
    if let Some(v) = args.size {
        cfg.ingest.target_size = v;
    }
    if let Some(v) = &args.detector {
        cfg.backends.detector = v.clone();
    }
    if let Some(v) = &args.segmenter {
        cfg.backends.segmenter = v.clone();
    }
    if args.no_merge {
        cfg.merge.enabled = false;
    }
    if let Some(v) = &args.dump_stacks {
        cfg.output.dump_stacks = Some(v.clone());
    }
    if let Some(v) = &args.dump_masks {
        cfg.output.dump_masks = Some(v.clone());
    }
    if let Some(v) = &args.output {
        cfg.output.csv = Some(v.clone());
    }
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

enum Input {
    Frames(PathBuf),
    Raw(Option<PathBuf>, Geometry),
}

/// Resolves the frame source and the default scene file location.
fn resolve_input(args: &AnalyzeArgs) -> Result<(Input, Option<PathBuf>), Failure> {
    let need_geometry = || {
        args.raw_geometry
            .ok_or_else(|| Failure::usage(anyhow!("raw RGB input needs --raw-geometry WxH")))
    };
    if args.input.as_os_str() == "-" {
        return Ok((Input::Raw(None, need_geometry()?), None));
    }
    let path = &args.input;
    if path.is_dir() {
        let frames = path.join("frames");
        let scene = Some(path.join("scene.toml"));
        if frames.is_dir() {
            return Ok((Input::Frames(frames), scene));
        }
        return Ok((Input::Frames(path.clone()), scene));
    }
    if path.is_file() {
        return Ok((Input::Raw(Some(path.clone()), need_geometry()?), None));
    }
    Err(Failure::input(anyhow!(
        "input {} does not exist",
        path.display()
    )))
}

fn load_scene(
    args: &AnalyzeArgs,
    default: Option<PathBuf>,
    cfg: &RunConfig,
) -> Result<Arc<Scene>, Failure> {
    let path = match (&args.scene, default) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) if p.is_file() => p,
        _ => {
            return Err(Failure::usage(anyhow!(
                "the oracle backend needs a scene description: pass --scene or use a directory written by `synth`"
            )))
        }
    };
    let spec = SceneSpec::load(&path).map_err(|e| scene_failure(e, &path))?;
    let size = cfg.ingest.target_size;
    if spec.width != size || spec.height != size {
        return Err(Failure::usage(anyhow!(
            "oracle scene is {}x{} but --size is {size}; the oracle answers in scene coordinates",
            spec.width,
            spec.height
        )));
    }
    Scene::new(spec)
        .map(Arc::new)
        .map_err(|e| scene_failure(e, &path))
}

fn scene_failure(e: SceneError, path: &Path) -> Failure {
    let code = if matches!(e, SceneError::Io(_)) {
        INPUT
    } else {
        USAGE
    };
    Failure {
        code,
        error: anyhow::Error::new(e).context(format!("scene {}", path.display())),
    }
}

fn run_source<S: FrameSource>(pipeline: &Pipeline<'_>, source: S) -> Result<Analysis, Failure> {
    pipeline.run(source).map_err(Failure::from)
}

pub fn analyze(args: AnalyzeArgs) -> CmdResult {
    let cfg = build_config(&args)?;
    if let Some(n) = threads_from_env().map_err(|e| Failure::usage(anyhow!(e)))? {
        limit_threads(n).map_err(|e| Failure::usage(anyhow!(e)))?;
    }
    let (input, default_scene) = resolve_input(&args)?;

    let uses_oracle = cfg.backends.detector == BackendKind::Oracle
        || cfg.backends.segmenter == BackendKind::Oracle;
    let scene = if uses_oracle {
        Some(load_scene(&args, default_scene, &cfg)?)
    } else {
        None
    };
    let detector: Box<dyn Detector> = match &cfg.backends.detector {
        BackendKind::Oracle => Box::new(OracleDetector::new(scene.clone().expect("scene loaded"))),
        BackendKind::Model(p) => Box::new(ModelDetector::load(p).map_err(Failure::backend)?),
    };
    let segmenter: Box<dyn Segmenter> = match &cfg.backends.segmenter {
        BackendKind::Oracle => Box::new(OracleSegmenter::new(scene.expect("scene loaded"))),
        BackendKind::Model(p) => Box::new(ModelSegmenter::load(p).map_err(Failure::backend)?),
    };

    let pipeline = Pipeline::new(&cfg, detector.as_ref(), segmenter.as_ref())?;
    let analysis = match input {
        Input::Frames(dir) => run_source(
            &pipeline,
            ImageDirSource::open(&dir).map_err(Failure::input)?,
        )?,
        Input::Raw(None, g) => {
            let source =
                RawRgbSource::new(io::stdin().lock(), g.width, g.height).map_err(Failure::usage)?;
            run_source(&pipeline, source)?
        }
        Input::Raw(Some(path), g) => {
            let file = File::open(&path)
                .with_context(|| format!("cannot open {}", path.display()))
                .map_err(Failure::input)?;
            let source = RawRgbSource::new(BufReader::new(file), g.width, g.height)
                .map_err(Failure::usage)?;
            run_source(&pipeline, source)?
        }
    };

    write_output(
        cfg.output.csv.as_deref(),
        &report::csv_string(&analysis.reports),
    )?;
    eprintln!("{}", analysis.summary);
    Ok(())
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let spec = SceneSpec::load(&args.spec).map_err(|e| scene_failure(e, &args.spec))?;
    let scene = Scene::new(spec).map_err(|e| scene_failure(e, &args.spec))?;
    for w in scene.warnings() {
        eprintln!("warning: {w}");
    }
    scene
        .write_dir(&args.out)
        .with_context(|| format!("cannot write scene to {}", args.out.display()))
        .map_err(Failure::input)?;
    eprintln!(
        "wrote {} frames and ground truth to {}",
        scene.frame_count(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let eval = evaluate_mask_dirs(&args.pred, &args.truth).map_err(Failure::input)?;
    for name in &eval.missing {
        eprintln!("warning: no prediction for {name}");
    }
    write_output(args.output.as_deref(), &eval.to_tsv())
}

pub fn compare(args: CompareArgs) -> CmdResult {
    let pd = read_csv(&args.pd).map_err(Failure::input)?;
    let manual = read_csv(&args.manual).map_err(Failure::input)?;
    write_output(
        args.output.as_deref(),
        &compare_annotations(&pd, &manual).to_tsv(),
    )
}
