//! Command-line driver for nonnegative low-rank tensor completion.
//!
//! Subcommands:
//! * `complete`: run the solver on an observed tensor and write the
//!   reconstruction, model, CSV report, and graymap slices.
//! * `synth`: draw a synthetic nonnegative low-rank truth tensor.
//! * `mask`: sample a uniform observation mask.
//! * `eval`: RMSE and worst-entry error between two tensor files.
//! * `gradcheck`: finite-difference validation of the outer gradient.
//! * `oracle`: run the solver kernels against independent oracles.
//!
//! Exit codes: 0 on success, 1 when arguments or inputs fail validation,
//! 2 when a run fails after validation. With a fixed `--seed` every
//! subcommand writes byte-identical tensor, mask, and model files; the
//! CSV report's `elapsed_s` column is the one wall-clock exception.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nntc_core::error::{Error, Result};
use nntc_core::eval::{
    gradient_check_suite, held_out_rmse, oracle_suite, rmse, sample_mask,
    synth_nonneg_lowrank, GradientCheckConfig, OracleSuiteConfig, SyntheticSpec,
};
use nntc_core::io::{
    export_component_slices, export_slices, read_mask, read_tensor, write_mask, write_model,
    write_report, write_tensor, TensorData,
};
use nntc_core::tensor::{project_omega, DenseTensor, ObservationMask, Shape, SparseTensor};
use nntc_core::{InnerConfig, Solver, SolverConfig};

// ─── argument surface ───────────────────────────────────────────────────

#[derive(Parser)]
#[command(name = "nntc", version, about = "Nonnegative low-rank tensor completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a partially observed tensor.
    Complete(CompleteArgs),
    /// Draw a synthetic nonnegative low-rank truth tensor.
    Synth(SynthArgs),
    /// Sample a uniform observation mask.
    Mask(MaskArgs),
    /// Compare two tensor files.
    Eval(EvalArgs),
    /// Check the outer gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Check the solver kernels against independent oracles.
    Oracle(OracleArgs),
}

/// Comma-separated positive integers, e.g. `10,10,10`.
#[derive(Clone, Debug)]
struct UsizeList(Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let items: std::result::Result<Vec<usize>, _> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad integer {t:?} in list")))
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err("list must not be empty".to_string());
        }
        Ok(UsizeList(items))
    }
}

/// Comma-separated numbers, e.g. `0.33,0.33,0.34`.
#[derive(Clone, Debug)]
struct F64List(Vec<f64>);

impl FromStr for F64List {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let items: std::result::Result<Vec<f64>, _> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?} in list")))
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err("list must not be empty".to_string());
        }
        Ok(F64List(items))
    }
}

#[derive(Args)]
struct CompleteArgs {
    /// Observed tensor file; a sparse file's support is Ω unless --mask
    /// or --fraction narrows it.
    #[arg(long)]
    input: PathBuf,
    /// Reference tensor; adds per-iteration RMSE to the report and a
    /// held-out summary line.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Observation mask file (sparse format, support = Ω).
    #[arg(long, conflicts_with = "fraction")]
    mask: Option<PathBuf>,
    /// Sample Ω at this fraction from a dense input.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-mode factor ranks, e.g. `3,3,3`.
    #[arg(long)]
    rank: Option<UsizeList>,
    /// Per-mode weights λ, e.g. `0.33,0.33,0.34`.
    #[arg(long)]
    lambda: Option<F64List>,
    /// Data-fit cost parameter.
    #[arg(long = "C", default_value_t = 10.0)]
    c: f64,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-5)]
    tau: f64,
    #[arg(long = "max-iters", default_value_t = 200)]
    max_iters: usize,
    #[arg(long = "inner-cg-tol", default_value_t = 1e-8)]
    inner_cg_tol: f64,
    #[arg(long = "inner-nnls-tol", default_value_t = 1e-8)]
    inner_nnls_tol: f64,
    /// Inner Z/S alternation budget per outer evaluation.
    #[arg(long, default_value_t = 50)]
    alternations: usize,
    /// Where to write the dense reconstruction.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Where to write the model file.
    #[arg(long = "model-out")]
    model_out: Option<PathBuf>,
    /// Where to write the per-iteration CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for graymap slices of the reconstruction and its
    /// per-mode components (order-3 data only).
    #[arg(long = "slices-out")]
    slices_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Tensor dimensions, e.g. `10,10,10`.
    #[arg(long)]
    shape: UsizeList,
    /// Per-mode core ranks, e.g. `2,2,2`.
    #[arg(long)]
    rank: UsizeList,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise level added to the clean tensor.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Where to write the dense truth tensor.
    #[arg(long)]
    output: PathBuf,
    /// Also sample an observation mask at this fraction.
    #[arg(long, requires = "mask_out")]
    fraction: Option<f64>,
    /// Where to write the sampled mask (requires --fraction).
    #[arg(long = "mask-out", requires = "fraction")]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    /// Tensor file whose shape the mask is for.
    #[arg(long, conflicts_with = "shape", required_unless_present = "shape")]
    input: Option<PathBuf>,
    /// Shape to sample over, e.g. `10,10,10`.
    #[arg(long)]
    shape: Option<UsizeList>,
    /// Fraction of entries to observe, in (0, 1].
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the mask.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference tensor file.
    reference: PathBuf,
    /// Estimate tensor file.
    estimate: PathBuf,
    /// Restrict the comparison to this mask's support.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Compare on the complement of the mask instead.
    #[arg(long, requires = "mask")]
    held_out: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 5)]
    directions: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = GradientCheckConfig::default().seed)]
    seed: u64,
    /// Largest acceptable relative mismatch.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long = "identity-cases", default_value_t = 100)]
    identity_cases: usize,
    #[arg(long = "inner-cases", default_value_t = 50)]
    inner_cases: usize,
    #[arg(long = "nnls-cases", default_value_t = 30)]
    nnls_cases: usize,
    #[arg(long, default_value_t = OracleSuiteConfig::default().seed)]
    seed: u64,
    /// Largest acceptable oracle deviation.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

// ─── exit-code plumbing ─────────────────────────────────────────────────

/// A failure tagged with the exit code it deserves: 1 for rejected
/// arguments or inputs, 2 for failures after validation.
enum CliError {
    Validation(Error),
    Runtime(Error),
}

trait Phase<T> {
    /// Tags any error as a validation failure (exit 1).
    fn validation(self) -> std::result::Result<T, CliError>;
    /// Tags errors by kind: structural complaints stay validation
    /// failures, everything that can only happen mid-run exits 2.
    fn runtime(self) -> std::result::Result<T, CliError>;
}

impl<T> Phase<T> for Result<T> {
    fn validation(self) -> std::result::Result<T, CliError> {
        self.map_err(CliError::Validation)
    }

    fn runtime(self) -> std::result::Result<T, CliError> {
        self.map_err(|e| match e {
            Error::InvalidArgument(_)
            | Error::ShapeMismatch(_)
            | Error::ModeOutOfRange { .. }
            | Error::Parse { .. }
            | Error::DenseCapExceeded { .. } => CliError::Validation(e),
            Error::NonFinite(_) | Error::NoConvergence { .. } | Error::Io(_) => {
                CliError::Runtime(e)
            }
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Complete(args) => complete(args),
        Command::Synth(args) => synth(args),
        Command::Mask(args) => mask(args),
        Command::Eval(args) => eval(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Oracle(args) => oracle(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

// ─── complete ───────────────────────────────────────────────────────────

/// Builds (Y_Ω, Ω) from the input tensor and the mask options.
fn observed_data(args: &CompleteArgs) -> Result<(SparseTensor, ObservationMask)> {
    let input = read_tensor(&args.input)?;
    if let Some(fraction) = args.fraction {
        let dense = match &input {
            TensorData::Dense(d) => d,
            TensorData::Sparse(_) => {
                return Err(Error::InvalidArgument(
                    "--fraction samples from a fully known tensor; the input is sparse \
                     (use --mask to narrow a sparse input)"
                        .to_string(),
                ))
            }
        };
        let omega = sample_mask(dense.shape(), fraction, args.seed)?;
        let y = project_omega(dense, &omega)?;
        return Ok((y, omega));
    }
    match (&input, &args.mask) {
        (TensorData::Dense(d), Some(path)) => {
            let omega = read_mask(path)?;
            let y = project_omega(d, &omega)?;
            Ok((y, omega))
        }
        (TensorData::Dense(d), None) => {
            // Fully observed: every entry is a constraint.
            let offsets: Vec<usize> = (0..d.shape().len()).collect();
            let omega = ObservationMask::from_offsets(d.shape().clone(), offsets)?;
            let y = project_omega(d, &omega)?;
            Ok((y, omega))
        }
        (TensorData::Sparse(s), Some(path)) => {
            let omega = read_mask(path)?;
            if omega.shape() != s.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "mask shape {} does not match input shape {}",
                    omega.shape(),
                    s.shape()
                )));
            }
            // Keep the input values on the mask's support; every masked
            // cell must have been observed.
            let mut values = Vec::with_capacity(omega.len());
            let mut have = s.offsets().iter().zip(s.values()).peekable();
            for &want in omega.offsets() {
                while have.peek().is_some_and(|&(&off, _)| off < want) {
                    have.next();
                }
                match have.next() {
                    Some((&off, &v)) if off == want => values.push(v),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "mask selects an entry the sparse input does not observe"
                                .to_string(),
                        ))
                    }
                }
            }
            let y = SparseTensor::on_mask(&omega, values)?;
            Ok((y, omega))
        }
        (TensorData::Sparse(s), None) => {
            let omega =
                ObservationMask::from_offsets(s.shape().clone(), s.offsets().to_vec())?;
            Ok((s.clone(), omega))
        }
    }
}

fn complete(args: CompleteArgs) -> std::result::Result<(), CliError> {
    let (y, omega) = observed_data(&args).validation()?;
    if omega.len() == 0 {
        return Err(Error::InvalidArgument("observation mask is empty".to_string())).validation();
    }
    let truth = match &args.truth {
        Some(path) => {
            let t = read_tensor(path).validation()?.to_dense().validation()?;
            if t.shape() != y.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "truth shape {} does not match input shape {}",
                    t.shape(),
                    y.shape()
                )))
                .validation();
            }
            Some(t)
        }
        None => None,
    };
    if args.slices_out.is_some() && y.shape().order() != 3 {
        return Err(Error::InvalidArgument(format!(
            "--slices-out needs order-3 data, the input has order {}",
            y.shape().order()
        )))
        .validation();
    }

    let cfg = SolverConfig {
        ranks: args.rank.as_ref().map(|r| r.0.clone()),
        lambda: args.lambda.as_ref().map(|l| l.0.clone()),
        c: args.c,
        tau: args.tau,
        max_outer_iters: args.max_iters,
        seed: args.seed,
        inner: InnerConfig {
            cg_tol: args.inner_cg_tol,
            nnls_tol: args.inner_nnls_tol,
            alternations: args.alternations,
            ..SolverConfig::default().inner
        },
        ..SolverConfig::default()
    };

    let mut solver = Solver::new(y, omega.clone(), cfg).runtime()?;
    if let Some(t) = truth.clone() {
        solver.set_truth(t).runtime()?;
    }
    let result = solver.finish().runtime()?;
    let last = result.trace.last().expect("trace always has the initial row");

    println!("status {}", result.status.as_str());
    println!("iterations {}", last.iteration);
    println!("cost {}", last.cost);
    println!("grad_norm {}", last.grad_norm);

    let needs_w = args.output.is_some()
        || args.slices_out.is_some()
        || truth.is_some();
    let w = if needs_w { Some(result.model.reconstruct().runtime()?) } else { None };

    if let (Some(w), Some(t)) = (&w, &truth) {
        println!("rmse {}", rmse(w, t).runtime()?);
        if let Some(held) = held_out_rmse(w, t, &omega).runtime()? {
            println!("held_out_rmse {held}");
        }
    }
    if let Some(path) = &args.output {
        let w = w.as_ref().expect("reconstruction materialized above");
        write_tensor(&TensorData::Dense(w.clone()), path).runtime()?;
        println!("wrote reconstruction {}", path.display());
    }
    if let Some(path) = &args.model_out {
        write_model(&result.model, path).runtime()?;
        println!("wrote model {}", path.display());
    }
    if let Some(path) = &args.report {
        write_report(&result.trace, path).runtime()?;
        println!("wrote report {}", path.display());
    }
    if let Some(dir) = &args.slices_out {
        let w = w.as_ref().expect("reconstruction materialized above");
        let frames = export_slices(w, 2, dir).runtime()?;
        let components = export_component_slices(&result.model, 2, dir).runtime()?;
        println!(
            "wrote {} slice frames and {} component frames to {}",
            frames.len(),
            components.len(),
            dir.display()
        );
    }
    Ok(())
}

// ─── synth / mask ───────────────────────────────────────────────────────

fn synth(args: SynthArgs) -> std::result::Result<(), CliError> {
    if args.shape.0.len() != args.rank.0.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks for {} dimensions",
            args.rank.0.len(),
            args.shape.0.len()
        )))
        .validation();
    }
    let spec = SyntheticSpec {
        dims: args.shape.0.clone(),
        core_rank: args.rank.0.clone(),
        seed: args.seed,
        noise_sigma: args.noise,
    };
    let truth = synth_nonneg_lowrank(&spec).validation()?;
    write_tensor(&TensorData::Dense(truth.clone()), &args.output).runtime()?;
    println!("wrote truth {}", args.output.display());
    if let (Some(fraction), Some(path)) = (args.fraction, &args.mask_out) {
        let omega = sample_mask(truth.shape(), fraction, args.seed).validation()?;
        write_mask(&omega, path).runtime()?;
        println!("wrote mask {} ({} of {} entries)", path.display(), omega.len(), truth.shape().len());
    }
    Ok(())
}

fn mask(args: MaskArgs) -> std::result::Result<(), CliError> {
    let shape = match (&args.input, &args.shape) {
        (Some(path), None) => read_tensor(path).validation()?.shape().clone(),
        (None, Some(list)) => Shape::new(list.0.clone()).validation()?,
        _ => unreachable!("clap enforces exactly one of --input/--shape"),
    };
    let omega = sample_mask(&shape, args.fraction, args.seed).validation()?;
    write_mask(&omega, &args.output).runtime()?;
    println!("wrote mask {} ({} of {} entries)", args.output.display(), omega.len(), shape.len());
    Ok(())
}

// ─── eval ───────────────────────────────────────────────────────────────

fn rmse_on_offsets(a: &DenseTensor, b: &DenseTensor, offsets: &[usize]) -> (f64, f64) {
    let (av, bv) = (a.values(), b.values());
    let mut sum = 0.0f64;
    let mut worst = 0.0f64;
    for &off in offsets {
        let d = av[off] - bv[off];
        sum += d * d;
        worst = worst.max(d.abs());
    }
    ((sum / offsets.len().max(1) as f64).sqrt(), worst)
}

fn eval(args: EvalArgs) -> std::result::Result<(), CliError> {
    let a = read_tensor(&args.reference).validation()?.to_dense().validation()?;
    let b = read_tensor(&args.estimate).validation()?.to_dense().validation()?;
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "cannot compare shapes {} and {}",
            a.shape(),
            b.shape()
        )))
        .validation();
    }
    let offsets: Vec<usize> = match &args.mask {
        Some(path) => {
            let omega = read_mask(path).validation()?;
            if omega.shape() != a.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "mask shape {} does not match tensor shape {}",
                    omega.shape(),
                    a.shape()
                )))
                .validation();
            }
            if args.held_out {
                let mut on = omega.offsets().iter().peekable();
                (0..a.shape().len())
                    .filter(|off| {
                        while let Some(&&next) = on.peek() {
                            if next < *off {
                                on.next();
                            } else {
                                return next != *off;
                            }
                        }
                        true
                    })
                    .collect()
            } else {
                omega.offsets().to_vec()
            }
        }
        None => (0..a.shape().len()).collect(),
    };
    if offsets.is_empty() {
        return Err(Error::InvalidArgument("no entries to compare on".to_string())).validation();
    }
    let (err, worst) = rmse_on_offsets(&a, &b, &offsets);
    let scale = {
        let sum: f64 = offsets.iter().map(|&o| a.values()[o] * a.values()[o]).sum();
        (sum / offsets.len() as f64).sqrt()
    };
    println!("entries {}", offsets.len());
    println!("rmse {err}");
    if scale > 0.0 {
        println!("relative_rmse {}", err / scale);
    }
    println!("max_abs_error {worst}");
    Ok(())
}

// ─── gradcheck / oracle ─────────────────────────────────────────────────

fn gradcheck(args: GradcheckArgs) -> std::result::Result<(), CliError> {
    let cfg = GradientCheckConfig {
        cases: args.cases,
        directions_per_case: args.directions,
        step: args.step,
        seed: args.seed,
    };
    let report = gradient_check_suite(&cfg).runtime()?;
    println!("cases {}", report.cases);
    println!("directions_per_case {}", report.directions_per_case);
    println!("max_rel_error {}", report.max_rel_error);
    println!("worst_case {}", report.worst_case);
    if report.max_rel_error > args.tol {
        return Err(Error::InvalidArgument(format!(
            "gradient mismatch {} exceeds tolerance {}",
            report.max_rel_error, args.tol
        )))
        .map_err(CliError::Runtime);
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> std::result::Result<(), CliError> {
    let cfg = OracleSuiteConfig {
        identity_cases: args.identity_cases,
        inner_cases: args.inner_cases,
        nnls_cases: args.nnls_cases,
        seed: args.seed,
    };
    let report = oracle_suite(&cfg).runtime()?;
    println!("identity_cases {}", report.identity_cases);
    println!("identity_max_rel {}", report.identity_max_rel);
    println!("inner_cases {}", report.inner_cases);
    println!("inner_max_rel {}", report.inner_max_rel);
    println!("nnls_cases {}", report.nnls_cases);
    println!("nnls_max_abs {}", report.nnls_max_abs);
    println!("nnls_min_entry {}", report.nnls_min_entry);
    let mut failures = Vec::new();
    if report.identity_max_rel > args.tol {
        failures.push(format!("identity deviation {}", report.identity_max_rel));
    }
    if report.inner_max_rel > args.tol {
        failures.push(format!("inner deviation {}", report.inner_max_rel));
    }
    if report.nnls_max_abs > args.tol {
        failures.push(format!("nnls deviation {}", report.nnls_max_abs));
    }
    if report.nnls_min_entry < 0.0 {
        failures.push(format!("negative nnls entry {}", report.nnls_min_entry));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(Error::InvalidArgument(format!(
            "oracle deviations exceed tolerance {}: {}",
            args.tol,
            failures.join(", ")
        ))))
    }
}
