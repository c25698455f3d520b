use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use plant_doctor::BackendKind;

#[derive(Debug, Parser)]
#[command(
    name = "plantdoctor",
    version,
    about = "Per-leaf damage quantification from plant footage"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track leaves through footage and write one CSV row per leaf.
    Analyze(AnalyzeArgs),
    /// Render a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Score predicted masks against reference masks.
    Eval(EvalArgs),
    /// Compare a pipeline CSV with a manually annotated one.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

impl FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<u32>().ok().filter(|&n| n > 0);
        match (parse(w), parse(h)) {
            (Some(width), Some(height)) => Ok(Self { width, height }),
            _ => Err(format!("expected positive WxH, got `{s}`")),
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Frame directory, raw RGB24 file, or `-` for raw RGB24 on stdin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_name = "FPS")]
    pub source_fps: Option<f64>,
    /// Output frame rate [default: 3]
    #[arg(long, value_name = "FPS")]
    pub target_fps: Option<f64>,
    /// Output frame side in pixels [default: 640]
    #[arg(long, value_name = "PX")]
    pub size: Option<u32>,
    /// Frame size of raw RGB24 input.
    #[arg(long, value_name = "WxH")]
    pub raw_geometry: Option<Geometry>,
    /// `oracle` or `model:<path>` [default: oracle]
    #[arg(long, value_parser = BackendKind::from_str)]
    pub detector: Option<BackendKind>,
    /// `oracle` or `model:<path>` [default: oracle]
    #[arg(long, value_parser = BackendKind::from_str)]
    pub segmenter: Option<BackendKind>,
    /// Scene description for the oracle backends; defaults to
    /// `<input>/scene.toml`.
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Keep fragmented tracks separate.
    #[arg(long)]
    pub no_merge: bool,
    #[arg(long, value_name = "DIR")]
    pub dump_stacks: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub dump_masks: Option<PathBuf>,
    /// CSV destination; standard output when omitted.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (TOML).
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub truth: PathBuf,
    /// TSV destination; standard output when omitted.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// CSV produced by `analyze`.
    #[arg(long, value_name = "FILE")]
    pub pd: PathBuf,
    /// Manually annotated CSV with the same columns.
    #[arg(long, value_name = "FILE")]
    pub manual: PathBuf,
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn geometry_parses() {
        assert_eq!(
            "640x480".parse::<Geometry>(),
            Ok(Geometry {
                width: 640,
                height: 480
            })
        );
        assert!("640".parse::<Geometry>().is_err());
        assert!("0x4".parse::<Geometry>().is_err());
    }

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn backend_flags_parse() {
        let cli = Cli::try_parse_from([
            "plantdoctor",
            "analyze",
            "--input",
            "x",
            "--detector",
            "model:net.onnx",
            "--no-merge",
        ])
        .unwrap();
        let Command::Analyze(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.detector, Some(BackendKind::Model("net.onnx".into())));
        assert!(a.no_merge);
        assert!(Cli::try_parse_from([
            "plantdoctor",
            "analyze",
            "--input",
            "x",
            "--detector",
            "yolo"
        ])
        .is_err());
    }
}
