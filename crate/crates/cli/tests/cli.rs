use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const HEADER: &str = "leaf_id,best_frame,leaf_area_px,damage_area_px,damage_ratio_pct";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plantdoctor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn demo_spec() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/demo.toml")
}

fn synth(dir: &Path, spec: &Path) {
    let out = run(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn demo_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &demo_spec());
    dir
}

fn analyze(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["analyze", "--input", dir.to_str().unwrap(), "--size", "320"];
    args.extend_from_slice(extra);
    run(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn synth_writes_frames_and_truth() {
    let dir = demo_dir();
    assert_eq!(fs::read_dir(dir.path().join("frames")).unwrap().count(), 36);
    assert!(dir.path().join("scene.toml").is_file());
    let leaves = fs::read_to_string(dir.path().join("truth/leaves.tsv")).unwrap();
    assert_eq!(leaves.lines().count(), 4);
    assert!(dir.path().join("truth/masks/1_leaf.png").is_file());
}

#[test]
fn analyze_emits_csv_and_summary() {
    let dir = demo_dir();
    let out = analyze(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let csv = stdout(&out);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 4);
    assert!(!csv.contains('\r'));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("leaves found: 3"), "{stderr}");
}

#[test]
fn no_merge_keeps_fragments() {
    let dir = demo_dir();
    let merged = stdout(&analyze(dir.path(), &[]));
    let split = stdout(&analyze(dir.path(), &["--no-merge"]));
    assert_eq!(merged.lines().count() + 1, split.lines().count());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = demo_dir();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(analyze(dir.path(), &["--output", a.to_str().unwrap()])
        .status
        .success());
    assert!(analyze(dir.path(), &["--output", b.to_str().unwrap()])
        .status
        .success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn thread_count_from_environment() {
    let dir = demo_dir();
    let one = bin()
        .args([
            "analyze",
            "--input",
            dir.path().to_str().unwrap(),
            "--size",
            "320",
        ])
        .env("PLANTDOCTOR_THREADS", "1")
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(stdout(&one), stdout(&analyze(dir.path(), &[])));
    let bad = bin()
        .args([
            "analyze",
            "--input",
            dir.path().to_str().unwrap(),
            "--size",
            "320",
        ])
        .env("PLANTDOCTOR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn empty_video_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("empty.toml");
    fs::write(
        &spec,
        "seed = 1\nframe_count = 0\nwidth = 64\nheight = 64\n",
    )
    .unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, &spec);
    let out = run(&[
        "analyze",
        "--input",
        scene.to_str().unwrap(),
        "--size",
        "64",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), format!("{HEADER}\n"));
}

#[test]
fn raw_stdin_matches_directory_input() {
    let dir = demo_dir();
    let mut raw = Vec::new();
    let mut frames: Vec<PathBuf> = fs::read_dir(dir.path().join("frames"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    frames.sort();
    for f in &frames {
        raw.extend_from_slice(image::open(f).unwrap().to_rgb8().as_raw());
    }
    let scene = dir.path().join("scene.toml");
    let mut child = bin()
        .args([
            "analyze",
            "--input",
            "-",
            "--raw-geometry",
            "320x320",
            "--size",
            "320",
            "--scene",
        ])
        .arg(&scene)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&raw).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout(&out), stdout(&analyze(dir.path(), &[])));
}

#[test]
fn stdin_without_geometry_is_usage_error() {
    let out = run(&["analyze", "--input", "-"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_model_is_backend_error() {
    let dir = demo_dir();
    let out = analyze(dir.path(), &["--detector", "model:x.onnx"]);
    assert_eq!(out.status.code(), Some(3));
    let out = analyze(dir.path(), &["--segmenter", "model:x.onnx"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unreadable_input_is_input_error() {
    let out = run(&["analyze", "--input", "/definitely/not/here"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_and_config_are_usage_errors() {
    assert_eq!(run(&["analyze"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let dir = demo_dir();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[tracker]\nmax_ages = 3\n").unwrap();
    assert_eq!(
        analyze(dir.path(), &["--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        analyze(dir.path(), &["--target-fps", "-1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["analyze", "--input", dir.path().to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn flags_override_config_file() {
    let dir = demo_dir();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[merge]\nenabled = true\n[ingest]\ntarget_size = 640\n",
    )
    .unwrap();
    let from_file = analyze(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--no-merge"],
    );
    assert!(
        from_file.status.success(),
        "{}",
        String::from_utf8_lossy(&from_file.stderr)
    );
    assert_eq!(
        stdout(&from_file),
        stdout(&analyze(dir.path(), &["--no-merge"]))
    );
}

#[test]
fn dumps_and_eval_round_trip() {
    let dir = demo_dir();
    let stacks = dir.path().join("stacks");
    let masks = dir.path().join("masks");
    let out = analyze(
        dir.path(),
        &[
            "--dump-stacks",
            stacks.to_str().unwrap(),
            "--dump-masks",
            masks.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let table = fs::read_to_string(stacks.join("1/scores.tsv")).unwrap();
    assert!(table.starts_with("frame\tsimilarity\tsharpness\tscore\n"));
    assert!(masks.join("2_leaf.png").is_file());

    let eval = run(&[
        "eval",
        "--pred",
        masks.to_str().unwrap(),
        "--truth",
        masks.to_str().unwrap(),
    ]);
    assert!(eval.status.success());
    let tsv = stdout(&eval);
    assert!(tsv.starts_with("image\tiou\tdice\tdice_loss\n"));
    assert!(tsv
        .lines()
        .last()
        .unwrap()
        .starts_with("mean\t1.0000\t1.0000\t0.0000"));
}

#[test]
fn compare_reports_differences() {
    let dir = tempfile::tempdir().unwrap();
    let pd = dir.path().join("pd.csv");
    let ma = dir.path().join("ma.csv");
    fs::write(
        &pd,
        format!("{HEADER}\n5,3,10000,124,1.24\n21,1,100,1,1.49\n7,0,,,\n"),
    )
    .unwrap();
    fs::write(
        &ma,
        format!("{HEADER}\n5,3,10000,100,1.00\n21,1,100,1,1.59\n9,2,10,1,10.00\n"),
    )
    .unwrap();
    let out = run(&[
        "compare",
        "--pd",
        pd.to_str().unwrap(),
        "--manual",
        ma.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let tsv = stdout(&out);
    assert!(tsv.contains("5\t1.24\t1.00\t0.24\t24.00\n"), "{tsv}");
    assert!(tsv.contains("21\t1.49\t1.59\t0.10\t6.29\n"), "{tsv}");
    assert!(
        tsv.contains("7\tpipeline\n") && tsv.contains("9\tmanual\n"),
        "{tsv}"
    );

    let missing = run(&[
        "compare",
        "--pd",
        "/no/such.csv",
        "--manual",
        ma.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
