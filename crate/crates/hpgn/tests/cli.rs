//! Black-box checks of the command-line binary: exit codes, file side
//! effects, and output formats, driven through a real child process.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hpgn::img::{load_png, save_png_atomic};
use hpgn::metrics::{psnr, MetricsReport};
use hpgn::synth;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpgn"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

/// Two 24px pairs plus a config small enough that training is near-instant.
fn write_fixture(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    synth::write_pairs(&data, &synth::desk_pairs(2, 24, 9)).unwrap();
    let config = dir.join("tiny.cfg");
    fs::write(
        &config,
        "channels=4\nnum_rmrb=1\nnum_mrb=1\ncrop=16\nbatch=1\nsteps=2\nperceptual=off\n",
    )
    .unwrap();
    (config.display().to_string(), data.display().to_string())
}

#[test]
fn help_prints_usage_and_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for subcommand in ["compress", "inspect-qm", "train", "enhance", "eval", "ablate", "selftest"] {
        assert!(text.contains(subcommand), "help lacks {subcommand}");
    }
    let sub = run(&["enhance", "--help"]);
    assert_eq!(code(&sub), 0);
    assert!(stdout(&sub).contains("--qf"));
}

#[test]
fn unknown_flags_are_rejected_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    save_png_atomic(&synth::scene(24, 1), &input).unwrap();
    let output = dir.path().join("out.png");
    let out = run(&[
        "compress",
        "--in",
        input.to_str().unwrap(),
        "--qf",
        "80",
        "--out",
        output.to_str().unwrap(),
        "--frobnicate",
    ]);
    assert_eq!(code(&out), 1);
    assert!(!output.exists(), "usage error must not write the output");
}

#[test]
fn missing_input_is_a_one_line_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "compress",
        "--in",
        dir.path().join("absent.png").to_str().unwrap(),
        "--qf",
        "80",
        "--out",
        dir.path().join("out.png").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is one line: {err:?}");
    assert!(err.contains("absent.png"));
}

#[test]
fn out_of_range_quality_is_a_usage_error() {
    let out = run(&["inspect-qm", "--qf", "101"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn top_quality_compression_only_costs_the_colorspace() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let image = synth::scene(32, 4);
    save_png_atomic(&image, &input).unwrap();
    let output = dir.path().join("out.png");
    let out = run(&[
        "compress",
        "--in",
        input.to_str().unwrap(),
        "--qf",
        "100",
        "--out",
        output.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let round_tripped = load_png(&output).unwrap();
    let db = psnr(&image, &round_tripped).unwrap();
    assert!(db >= 45.0, "QF 100 round trip lost too much: {db:.2} dB");
}

#[test]
fn inspect_qm_prints_the_base_luma_table() {
    let out = run(&["inspect-qm", "--qf", "50"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let numbers: Vec<u32> =
        text.split_whitespace().map(|t| t.parse().expect("numeric table")).collect();
    assert_eq!(numbers.len(), 64);
    assert_eq!(numbers[0], 16);
    assert_eq!(numbers[63], 99);
    assert_eq!(text.lines().count(), 8);

    let chroma = run(&["inspect-qm", "--qf", "50", "--chroma"]);
    let first: u32 = stdout(&chroma).split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(first, 17);
}

#[test]
fn train_enhance_eval_ablate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = write_fixture(dir.path());
    let ckpt = dir.path().join("model.ckpt");

    let trained = run(&["train", "--config", &config, "--data", &data, "--out", ckpt.to_str().unwrap()]);
    assert_eq!(code(&trained), 0, "train stderr: {}", stderr(&trained));
    assert!(ckpt.exists());

    // Enhancement keeps the input geometry and writes a readable image.
    let low = Path::new(&data).join("low").join("pair000.png");
    let enhanced_path = dir.path().join("enhanced.png");
    let enhanced = run(&[
        "enhance",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        low.to_str().unwrap(),
        "--qf",
        "40",
        "--out",
        enhanced_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&enhanced), 0, "enhance stderr: {}", stderr(&enhanced));
    let produced = load_png(&enhanced_path).unwrap();
    assert_eq!(produced.dimensions(), load_png(&low).unwrap().dimensions());

    // The estimator path announces its choice and still succeeds.
    let auto = run(&[
        "enhance",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        low.to_str().unwrap(),
        "--qf",
        "auto",
        "--out",
        dir.path().join("auto.png").to_str().unwrap(),
    ]);
    assert_eq!(code(&auto), 0);
    assert!(stderr(&auto).contains("estimated qf"));

    let bad_qf = run(&[
        "enhance",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        low.to_str().unwrap(),
        "--qf",
        "brightest",
        "--out",
        dir.path().join("never.png").to_str().unwrap(),
    ]);
    assert_eq!(code(&bad_qf), 1);

    // Evaluation writes a parseable report with one row per pair.
    let report_path = dir.path().join("report.txt");
    let evaluated = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--qf-mode",
        "fixed:50",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&evaluated), 0, "eval stderr: {}", stderr(&evaluated));
    let report = MetricsReport::from_text(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.records.len(), 2);
    assert!(report.records.iter().all(|r| r.qf == 50));

    let bad_mode = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--qf-mode",
        "sometimes",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad_mode), 1);

    // The comparison harness drops a table plus one report per variant.
    let ablate_dir = dir.path().join("ablation");
    let ablated = run(&[
        "ablate",
        "--config",
        &config,
        "--data",
        &data,
        "--out",
        ablate_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&ablated), 0, "ablate stderr: {}", stderr(&ablated));
    let table = fs::read_to_string(ablate_dir.join("table.txt")).unwrap();
    assert_eq!(table.lines().count(), 5);
    for name in ["baseline", "qf_branch", "qm_branch", "full"] {
        let path = ablate_dir.join(format!("{name}.metrics"));
        let text = fs::read_to_string(&path).unwrap();
        assert!(MetricsReport::from_text(&text).is_ok(), "unparseable {name}.metrics");
    }
}

#[test]
fn selftest_reports_every_check() {
    let out = run(&["selftest"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().filter(|l| l.starts_with("ok")).count() >= 8);
    assert!(text.contains("checks passed"));
}
