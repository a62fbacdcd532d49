//! Command-line front end: synthesize, unmix, evaluate and self-test.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::mixmodel::{AbundanceMatrix, EndmemberMatrix};
use crate::prism::LayoutMode;
use crate::protocol::{
    lins_protocol, read_cube, read_matrix_csv, score, synth_reference, write_cube,
    write_matrix_csv, write_pgm, FieldConfig, MetricsReport, SampleType,
};
use crate::selftest;
use crate::solver::{nmf_baseline, prime, vca_baseline, PrimeConfig};

#[derive(Debug, Parser)]
#[command(name = "prime", version, about = "Underdetermined multispectral unmixing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a reference scene and its multispectral observation.
    Synth(SynthArgs),
    /// Estimate endmembers and abundances from a multispectral cube.
    Unmix(UnmixArgs),
    /// Score estimates against ground truth.
    Eval(EvalArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long = "h", default_value_t = 64)]
    pub height: usize,
    #[arg(long = "w", default_value_t = 64)]
    pub width: usize,
    /// Reference (hyperspectral) band count.
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub gamma: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = FieldConfig::default().blur_radius)]
    pub blur_radius: usize,
    #[arg(long, default_value_t = FieldConfig::default().sharpness)]
    pub sharpness: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Prime,
    Vca,
    Nmf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Prime => "prime",
            Method::Vca => "vca",
            Method::Nmf => "nmf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Auto,
    Valid,
    Same,
}

impl From<LayoutArg> for LayoutMode {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Auto => LayoutMode::Auto,
            LayoutArg::Valid => LayoutMode::Valid,
            LayoutArg::Same => LayoutMode::Same,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct UnmixArgs {
    #[arg(long, value_enum, default_value = "prime")]
    pub method: Method,
    /// Base path of the multispectral cube (without `.json` / `.bin`).
    #[arg(long)]
    pub msi: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with solver settings; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub no_hi: bool,
    #[arg(long)]
    pub no_ss: bool,
    #[arg(long)]
    pub no_cg: bool,
    #[arg(long)]
    pub outer: Option<usize>,
    #[arg(long)]
    pub epochs_first: Option<usize>,
    #[arg(long)]
    pub epochs_rest: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub nmf_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    /// Relative change of the virtual cube below which iterations stop.
    #[arg(long)]
    pub early_stop: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directories written by `unmix`, one report row each.
    #[arg(long, required = true, num_args = 1..)]
    pub est: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    /// Only run suites whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `run.json` and the result table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Provenance record written by every subcommand.
fn write_run_record(
    dir: &Path,
    invocation: &[String],
    subcommand: &str,
    seed: u64,
    config: serde_json::Value,
) -> Result<()> {
    write_json(
        &dir.join("run.json"),
        &json!({
            "invocation": invocation,
            "subcommand": subcommand,
            "seed": seed,
            "config": config,
            "defaults": PrimeConfig::new(0),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}

pub fn cmd_synth(args: &SynthArgs, invocation: &[String]) -> Result<()> {
    if args.m < args.n {
        return Err(Error::InvalidArgument(format!(
            "reference band count M={} must be at least N={}",
            args.m, args.n
        )));
    }
    let field = FieldConfig {
        blur_radius: args.blur_radius,
        sharpness: args.sharpness,
    };
    let r = synth_reference(args.seed, args.height, args.width, args.m, args.n, &field)?;
    let (zm, b_gt) = lins_protocol(&r.endmembers, &r.abundances, args.gamma)?;
    let out = &args.out;
    create_dir(out)?;
    write_cube(&out.join("reference"), &r.cube, SampleType::F64le)?;
    write_cube(&out.join("zm"), &zm, SampleType::F64le)?;
    write_cube(&out.join("s_gt"), &r.abundances.to_cube(), SampleType::F64le)?;
    write_matrix_csv(&out.join("b_gt.csv"), b_gt.matrix())?;
    write_matrix_csv(&out.join("a_ref.csv"), r.endmembers.matrix())?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "reference": "reference",
            "msi": "zm",
            "abundances": "s_gt",
            "endmembers": "b_gt.csv",
            "reference_endmembers": "a_ref.csv",
            "pure_pixels": r.pure_pixels,
            "height": args.height,
            "width": args.width,
            "m": args.m,
            "p": zm.bands(),
            "n": args.n,
            "gamma": args.gamma,
            "seed": args.seed,
        }),
    )?;
    write_run_record(out, invocation, "synth", args.seed, serde_json::to_value(args)?)
}

/// Solver settings from defaults, then the optional config file, then flags.
pub fn prime_config(args: &UnmixArgs) -> Result<PrimeConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_json::<PrimeConfig>(path)?,
        None => PrimeConfig::new(args.n),
    };
    cfg.n = args.n;
    cfg.seed = args.seed;
    cfg.hi &= !args.no_hi;
    cfg.ss &= !args.no_ss;
    cfg.cg &= !args.no_cg;
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                cfg.$field = v.into();
            }
        )*};
    }
    take!(outer, epochs_first, epochs_rest, lambda, alpha, p, lr, eta, r, nmf_iters, layout);
    if args.early_stop.is_some() {
        cfg.early_stop = args.early_stop;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    method: Method,
    seed: u64,
    seconds: f64,
}

fn write_estimates(out: &Path, b: &EndmemberMatrix, s: &AbundanceMatrix) -> Result<()> {
    write_matrix_csv(&out.join("b_est.csv"), b.matrix())?;
    write_cube(&out.join("s_est"), &s.to_cube(), SampleType::F64le)?;
    for k in 0..s.sources() {
        let row: Vec<f64> = s.matrix().row(k).iter().copied().collect();
        write_pgm(&out.join(format!("abundance_{}.pgm", k + 1)), &row, s.height(), s.width())?;
    }
    Ok(())
}

pub fn cmd_unmix(args: &UnmixArgs, invocation: &[String]) -> Result<()> {
    let zm = read_cube(&args.msi)?;
    let cfg = prime_config(args)?;
    create_dir(&args.out)?;
    let clock = Instant::now();
    let diag_path = args.out.join("diagnostics.csv");
    let mut diag = csv::Writer::from_path(&diag_path)?;
    let (b, s) = match args.method {
        Method::Prime => {
            let res = prime(&zm, &cfg)?;
            diag.write_record([
                "iteration",
                "epochs",
                "prism_loss_start",
                "prism_loss",
                "cycle",
                "anchor",
                "tv_spatial",
                "tv_spectral",
                "zh_change",
                "observation_residual",
                "prism_residual",
                "unmixing_residual",
                "simplex_volume",
                "abundance_l1",
                "seconds",
            ])?;
            for d in &res.diagnostics {
                let l = &d.prism_loss;
                let mut row = vec![d.iteration.to_string(), d.epochs.to_string()];
                row.extend(
                    [
                        d.prism_loss_start,
                        l.total,
                        l.cycle,
                        l.anchor,
                        l.tv_spatial,
                        l.tv_spectral,
                        d.zh_change,
                        d.observation_residual,
                        d.prism_residual,
                        d.unmixing_residual,
                        d.simplex_volume,
                        d.abundance_l1,
                        d.seconds,
                    ]
                    .iter()
                    .map(|v| format!("{v:?}")),
                );
                diag.write_record(&row)?;
            }
            write_cube(&args.out.join("zh"), &res.virtual_cube, SampleType::F64le)?;
            (res.endmembers, res.abundances)
        }
        Method::Vca => {
            diag.write_record(["iteration"])?;
            vca_baseline(&zm, args.n, args.seed)?
        }
        Method::Nmf => {
            diag.write_record(["iteration", "objective"])?;
            nmf_baseline(&zm, &cfg)?
        }
    };
    diag.flush().map_err(|e| Error::io(&diag_path, e))?;
    let seconds = clock.elapsed().as_secs_f64();
    write_estimates(&args.out, &b, &s)?;
    write_json(
        &args.out.join("timing.json"),
        &Timing {
            method: args.method,
            seed: args.seed,
            seconds,
        },
    )?;
    write_run_record(
        &args.out,
        invocation,
        "unmix",
        args.seed,
        json!({"method": args.method, "msi": args.msi, "solver": cfg}),
    )
}

/// Scores one estimate directory against a ground-truth directory and
/// returns the report row with the matched signature table
/// (`band, gt1..gtN, est1..estN`).
pub fn evaluate_dir(gt: &Path, est: &Path) -> Result<(MetricsReport, DMatrix<f64>)> {
    let b_gt = EndmemberMatrix::new(read_matrix_csv(&gt.join("b_gt.csv"))?)?;
    let s_gt = AbundanceMatrix::from_cube(&read_cube(&gt.join("s_gt"))?)?;
    let b_est = EndmemberMatrix::new(read_matrix_csv(&est.join("b_est.csv"))?)?;
    let s_est = AbundanceMatrix::from_cube(&read_cube(&est.join("s_est"))?)?;
    if b_est.matrix().shape() != b_gt.matrix().shape() || s_est.matrix().shape() != s_gt.matrix().shape() {
        return Err(Error::Dimension {
            context: "eval",
            detail: format!(
                "estimate B {:?}, S {:?} vs ground truth B {:?}, S {:?}",
                b_est.matrix().shape(),
                s_est.matrix().shape(),
                b_gt.matrix().shape(),
                s_gt.matrix().shape()
            ),
        });
    }
    let (order, sam, rmse) = score(&b_est, &s_est, &b_gt, &s_gt)?;
    let timing_path = est.join("timing.json");
    let (method, seed, seconds) = if timing_path.exists() {
        let t: Timing = read_json(&timing_path)?;
        (t.method.name().to_string(), t.seed, t.seconds)
    } else {
        let label = est.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (label, 0, 0.0)
    };
    let matched = b_est.permuted(&order);
    let n = b_gt.sources();
    let signatures = DMatrix::from_fn(b_gt.bands(), 2 * n, |r, c| {
        if c < n {
            b_gt.matrix()[(r, c)]
        } else {
            matched.matrix()[(r, c - n)]
        }
    });
    Ok((
        MetricsReport {
            method,
            seed,
            sam,
            rmse,
            seconds,
        },
        signatures,
    ))
}

fn write_signatures(path: &Path, sig: &DMatrix<f64>) -> Result<()> {
    let n = sig.ncols() / 2;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["band".to_string()];
    header.extend((1..=n).map(|k| format!("gt{k}")));
    header.extend((1..=n).map(|k| format!("est{k}")));
    w.write_record(&header)?;
    for r in 0..sig.nrows() {
        let mut row = vec![r.to_string()];
        row.extend((0..sig.ncols()).map(|c| format!("{:?}", sig[(r, c)])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_eval(args: &EvalArgs, invocation: &[String]) -> Result<Vec<MetricsReport>> {
    create_dir(&args.out)?;
    let report_path = args.out.join("report.csv");
    let mut report = csv::Writer::from_path(&report_path)?;
    let mut rows = Vec::with_capacity(args.est.len());
    for (i, est) in args.est.iter().enumerate() {
        let (row, sig) = evaluate_dir(&args.gt, est)?;
        let label = est.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_signatures(&args.out.join(format!("signatures_{}_{label}.csv", i + 1)), &sig)?;
        report.serialize(&row)?;
        rows.push(row);
    }
    report.flush().map_err(|e| Error::io(&report_path, e))?;
    write_run_record(
        &args.out,
        invocation,
        "eval",
        0,
        json!({"gt": args.gt, "est": args.est}),
    )?;
    Ok(rows)
}

/// Prints the result table; returns whether every check passed.
pub fn cmd_selftest(args: &SelftestArgs, invocation: &[String]) -> Result<bool> {
    let results = selftest::run(args.filter.as_deref(), args.seed);
    println!("{:<10} {:<32} {:<6} {:>8}  detail", "suite", "check", "status", "seconds");
    for r in &results {
        println!(
            "{:<10} {:<32} {:<6} {:>8.3}  {}",
            r.suite,
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("selftest.json"), &results)?;
        write_run_record(out, invocation, "selftest", args.seed, json!({"filter": args.filter}))?;
    }
    Ok(failed == 0 && !results.is_empty())
}

/// Entry point of the `prime` binary; returns the process exit code.
pub fn run(cli: Cli, invocation: &[String]) -> i32 {
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a, invocation).map(|_| true),
        Command::Unmix(a) => cmd_unmix(a, invocation).map(|_| true),
        Command::Eval(a) => cmd_eval(a, invocation).map(|rows| {
            for r in rows {
                println!("{:<8} seed {:<4} SAM {:>9.4}  RMSE {:.4}  {:.3} s", r.method, r.seed, r.sam, r.rmse, r.seconds);
            }
            true
        }),
        Command::Selftest(a) => cmd_selftest(a, invocation),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
