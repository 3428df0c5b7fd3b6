//! End-to-end tests of the installed binary: each test spawns the real
//! executable, so argument parsing, exit codes, file formats, and printed
//! summaries are exercised exactly as a shell user sees them. Exit code 0
//! is success, 1 a validation failure (bad arguments or unreadable
//! inputs), 2 a runtime failure after validation passed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nntc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nntc"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Fresh per-test scratch directory under the system temp root.
fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nntc-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch dir creates");
    dir
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().expect("UTF-8 path").to_string()
}

// ─── the full pipeline ───────────────────────────────────────────────────

#[test]
fn pipeline_synth_mask_complete_eval() {
    let dir = scratch("pipeline");
    let truth = path(&dir, "truth.nntc");
    let mask = path(&dir, "mask.nntc");
    let recon = path(&dir, "recon.nntc");
    let model = path(&dir, "model.nntcm");
    let report = path(&dir, "report.csv");

    let out = nntc(&["synth", "--shape", "8,8,4", "--rank", "2,2,2", "--seed", "3", "--output", &truth]);
    assert_exit(&out, 0);

    let out = nntc(&["mask", "--input", &truth, "--fraction", "0.5", "--seed", "7", "--output", &mask]);
    assert_exit(&out, 0);

    let out = nntc(&[
        "complete", "--input", &truth, "--mask", &mask, "--truth", &truth,
        "--rank", "3,3,3", "--C", "100", "--max-iters", "25",
        "--output", &recon, "--model-out", &model, "--report", &report,
    ]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    for key in ["status ", "iterations ", "cost ", "grad_norm ", "rmse ", "held_out_rmse "] {
        assert!(text.contains(key), "missing {key:?} in:\n{text}");
    }
    for f in [&recon, &model, &report] {
        assert!(Path::new(f).exists(), "missing output file {f}");
    }
    let header = fs::read_to_string(&report).expect("report reads");
    assert!(header.starts_with("iteration,cost,grad_norm,"), "unexpected report header:\n{header}");

    let out = nntc(&["eval", &truth, &recon, "--mask", &mask]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("rmse "));

    let out = nntc(&["eval", &truth, &recon, "--mask", &mask, "--held-out"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("relative_rmse "));
}

#[test]
fn eval_of_a_file_against_itself_is_exact() {
    let dir = scratch("self-eval");
    let truth = path(&dir, "truth.nntc");
    assert_exit(&nntc(&["synth", "--shape", "6,6,6", "--rank", "2,2,2", "--seed", "4", "--output", &truth]), 0);

    let out = nntc(&["eval", &truth, &truth]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "rmse 0"), "expected exact zero rmse in:\n{text}");
    assert!(text.lines().any(|l| l == "max_abs_error 0"), "expected exact zero max error in:\n{text}");
}

#[test]
fn slices_export_writes_graymaps() {
    let dir = scratch("slices");
    let truth = path(&dir, "truth.nntc");
    let slices = path(&dir, "slices");
    assert_exit(&nntc(&["synth", "--shape", "6,5,3", "--rank", "2,2,2", "--seed", "8", "--output", &truth]), 0);

    let out = nntc(&[
        "complete", "--input", &truth, "--fraction", "0.6", "--rank", "2,2,2",
        "--max-iters", "5", "--slices-out", &slices,
    ]);
    assert_exit(&out, 0);
    for name in ["slice_000.pgm", "slice_002.pgm", "component_1_slice_000.pgm"] {
        assert!(dir.join("slices").join(name).exists(), "missing exported {name}");
    }
}

// ─── determinism ─────────────────────────────────────────────────────────

#[test]
fn identical_invocations_write_identical_artifacts() {
    let dir = scratch("determinism");
    let truth = path(&dir, "truth.nntc");
    assert_exit(&nntc(&["synth", "--shape", "7,6,5", "--rank", "2,2,2", "--seed", "5", "--output", &truth]), 0);

    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let recon = path(&dir, &format!("recon-{tag}.nntc"));
        let model = path(&dir, &format!("model-{tag}.nntcm"));
        let out = nntc(&[
            "complete", "--input", &truth, "--fraction", "0.5", "--seed", "9",
            "--rank", "2,2,2", "--max-iters", "10", "--output", &recon, "--model-out", &model,
        ]);
        assert_exit(&out, 0);
        (fs::read(recon).expect("recon reads"), fs::read(model).expect("model reads"))
    };
    let (recon_a, model_a) = run("a");
    let (recon_b, model_b) = run("b");
    assert_eq!(recon_a, recon_b, "reconstruction files differ between identical runs");
    assert_eq!(model_a, model_b, "model files differ between identical runs");
}

// ─── failure modes and exit codes ────────────────────────────────────────

#[test]
fn bad_fraction_is_a_validation_error() {
    let dir = scratch("bad-fraction");
    let out = nntc(&["mask", "--shape", "6,6", "--fraction", "1.5", "--output", &path(&dir, "m.nntc")]);
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("fraction"));
}

#[test]
fn missing_input_is_a_validation_error() {
    let missing = path(&scratch("missing"), "absent.nntc");
    let out = nntc(&["complete", "--input", &missing]);
    assert_exit(&out, 1);
}

#[test]
fn malformed_input_names_the_offending_line() {
    let dir = scratch("malformed");
    let bad = dir.join("bad.nntc");
    fs::write(&bad, "NNTC 1\ndense\n2 2 2\n1 2 x 4\n").expect("fixture writes");
    let out = nntc(&["eval", bad.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("line 4"), "stderr was:\n{}", stderr(&out));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = nntc(&["frobnicate"]);
    assert_exit(&out, 1);
}

#[test]
fn help_exits_clean() {
    let out = nntc(&["--help"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("complete"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = scratch("unwritable");
    let truth = path(&dir, "truth.nntc");
    assert_exit(&nntc(&["synth", "--shape", "5,5,5", "--rank", "1,1,1", "--seed", "2", "--output", &truth]), 0);
    let gone = path(&dir.join("no-such-dir"), "w.nntc");
    let out = nntc(&[
        "complete", "--input", &truth, "--fraction", "0.5", "--max-iters", "2", "--output", &gone,
    ]);
    assert_exit(&out, 2);
}

// ─── check subcommands ───────────────────────────────────────────────────

#[test]
fn oracle_smoke_run_passes() {
    let out = nntc(&["oracle", "--identity-cases", "3", "--inner-cases", "2", "--nnls-cases", "2"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("identity_max_rel"));
}

#[test]
fn gradcheck_smoke_run_passes() {
    let out = nntc(&["gradcheck", "--cases", "2", "--directions", "2"]);
    assert_exit(&out, 0);
}

#[test]
fn impossible_tolerance_is_a_runtime_error() {
    let out = nntc(&["gradcheck", "--cases", "1", "--directions", "1", "--tol", "1e-30"]);
    assert_exit(&out, 2);
}
