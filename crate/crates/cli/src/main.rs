//! `kct`: simulate optimizers, decompose trajectory ensembles, and compare
//! their Koopman spectra from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kct_core::compare::{
    semi_conjugacy, shuffle_control, window_distance_matrix, EigenvalueSet, DEFAULT_SHUFFLES,
};
use kct_core::io::{
    export_matrix, load_ensemble, load_spectrum, read_csv_trajectory, save_comparison, save_ensemble,
    save_spectrum, write_atomic, write_csv_trajectory, TrajectoryFormat,
};
use kct_core::optimizers::{
    default_initial_conditions, run, Algorithm, InitialConditions, Objective, ObjectiveKind,
    OptimizerConfig,
};
use kct_core::spectral::{dmd_rrr, DecompositionConfig, SpectralDecomposition};
use kct_core::trajectory::{delay_embed, pca_reduce, window, WindowSpec};
use kct_core::{Error, ErrorClass};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "kct", version, about = "Koopman spectral comparison of iterative processes")]
struct Cli {
    /// Seed for every randomized step; recorded in the outputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (simulate, pca) or file (dmd, compare, window, semi).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress tables and summaries on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an optimizer from a grid of initial conditions.
    Simulate(SimulateArgs),
    /// Delay-embed an ensemble and compute its Koopman spectrum.
    Dmd(DmdArgs),
    /// Wasserstein distance between two spectra, with the shuffle control.
    Compare(CompareArgs),
    /// Pairwise spectral distances between time windows of one ensemble.
    Window(WindowArgs),
    /// Project an ensemble onto its leading principal components.
    Pca(PcaArgs),
    /// Test whether one spectrum is contained in another.
    Semi(SemiArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Omd,
    Ogd,
    Bm,
}

impl From<OptimizerArg> for Algorithm {
    fn from(a: OptimizerArg) -> Self {
        match a {
            OptimizerArg::Omd => Algorithm::Omd,
            OptimizerArg::Ogd => Algorithm::Ogd,
            OptimizerArg::Bm => Algorithm::Bm,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Tan,
    Quartic,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Tan => ObjectiveKind::SumTan,
            ObjectiveArg::Quartic => ObjectiveKind::SumQuartic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    optimizer: OptimizerArg,
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// `builtin` for the built-in 5x5 grids, or a CSV file with one initial
    /// condition per row (bisection rows hold `a` followed by `b`).
    #[arg(long, default_value = "builtin")]
    grid: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long, default_value_t = 4)]
    delays: usize,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Drop modes whose residual exceeds this value.
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long, default_value_t = 1e-12)]
    svd_rel_tol: f64,
    /// Skip unit-norm scaling of snapshot columns.
    #[arg(long)]
    no_scale: bool,
}

impl DecomposeArgs {
    fn config(&self) -> DecompositionConfig {
        DecompositionConfig {
            rank: self.rank,
            svd_rel_tol: self.svd_rel_tol,
            residual_tol: self.residual_tol,
            scale_columns: !self.no_scale,
        }
    }
}

#[derive(Args, Debug)]
struct DmdArgs {
    /// Ensemble manifest.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    decompose: DecomposeArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SHUFFLES)]
    shuffles: usize,
}

#[derive(Args, Debug)]
struct WindowArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Defaults to the window length (non-overlapping windows).
    #[arg(long)]
    stride: Option<usize>,
    /// Write log10 distances (floored at 1e-16).
    #[arg(long)]
    log10: bool,
    #[command(flatten)]
    decompose: DecomposeArgs,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    components: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct SemiArgs {
    #[arg(long)]
    big: PathBuf,
    #[arg(long)]
    small: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }
}

fn format_of(arg: FormatArg) -> TrajectoryFormat {
    match arg {
        FormatArg::Csv => TrajectoryFormat::Csv,
        FormatArg::Binary => TrajectoryFormat::Binary,
    }
}

const BUILTIN_GRID: &str = "builtin";
/// Older spelling of `builtin`, still accepted.
const BUILTIN_GRID_ALIAS: &str = "paper";

fn load_grid(path: &Path, algorithm: Algorithm, dim: usize) -> Result<InitialConditions, Failure> {
    // rows of the file become columns here
    let m = read_csv_trajectory(path)?;
    let rows: Vec<Vec<f64>> = m.column_iter().map(|c| c.iter().copied().collect()).collect();
    let width = m.nrows();
    match algorithm {
        Algorithm::Bm if width == 2 * dim => Ok(InitialConditions::Brackets(
            rows.into_iter()
                .map(|r| (r[..dim].to_vec(), r[dim..].to_vec()))
                .collect(),
        )),
        Algorithm::Omd | Algorithm::Ogd if width == dim => Ok(InitialConditions::Points(rows)),
        _ => Err(Failure::Usage(format!(
            "grid file {} has {width} columns; {algorithm} in dimension {dim} needs {}",
            path.display(),
            if algorithm == Algorithm::Bm { 2 * dim } else { dim }
        ))),
    }
}

fn simulate(ctx: &Ctx, args: &SimulateArgs) -> CmdResult {
    let algorithm = Algorithm::from(args.optimizer);
    let kind = ObjectiveKind::from(args.objective);
    if algorithm == Algorithm::Bm && kind == ObjectiveKind::SumQuartic {
        return Err(Failure::Usage(
            "bisection on the quartic objective is not supported: it violates the bracket \
             assumption f(a) < 0 (the quartic is non-negative everywhere)"
                .into(),
        ));
    }
    let dim = 2;
    let mut cfg = OptimizerConfig::with_defaults(algorithm, Objective::of_kind(kind, dim)?, args.eta, args.steps);
    cfg.inits = match args.grid.as_str() {
        BUILTIN_GRID | BUILTIN_GRID_ALIAS => default_initial_conditions(algorithm),
        file => load_grid(Path::new(file), algorithm, dim)?,
    };
    let result = run(&cfg)?;
    let ens = result
        .trajectory
        .with_meta("seed", ctx.seed.to_string())
        .with_meta("grid", args.grid.clone());

    let dir = ctx.out_or("simulation");
    let manifest = save_ensemble(&ens, &dir, format_of(args.format))?;
    // one column per trajectory, one row per step
    let losses = DMatrix::from_fn(result.losses.len(), args.steps, |k, t| result.losses[k][t]);
    write_csv_trajectory(&dir.join("losses.csv"), &losses)?;
    ctx.say(format!(
        "{algorithm} on {kind}: {} trajectories x {} steps -> {}",
        ens.len(),
        ens.length(),
        manifest.display()
    ));
    Ok(())
}

fn print_spectrum(ctx: &Ctx, dec: &SpectralDecomposition) {
    if ctx.quiet {
        return;
    }
    if let Some(label) = dec.window_label() {
        println!("window {label}");
    }
    println!("{:>4}  {:>22}  {:>22}  {:>12}  {:>10}", "#", "re", "im", "|lambda|", "residual");
    for (i, (l, r)) in dec.eigenvalues.iter().zip(&dec.residuals).enumerate() {
        println!("{i:>4}  {:>22.15e}  {:>22.15e}  {:>12.9}  {r:>10.3e}", l.re, l.im, l.norm());
    }
}

fn dmd(ctx: &Ctx, args: &DmdArgs) -> CmdResult {
    let ens = load_ensemble(&args.input)?;
    let pair = delay_embed(&ens, args.decompose.delays)?;
    let mut dec = dmd_rrr(&pair, &args.decompose.config())?;
    dec.meta.insert("seed".into(), ctx.seed.to_string());
    dec.meta.insert("input".into(), args.input.display().to_string());
    save_spectrum(&dec, &ctx.out_or("spectrum.json"))?;
    print_spectrum(ctx, &dec);
    Ok(())
}

fn eigenvalue_set(path: &Path) -> Result<EigenvalueSet, Failure> {
    let dec = load_spectrum(path)?;
    Ok(EigenvalueSet::from_decomposition(&dec, path.display().to_string())?)
}

fn compare(ctx: &Ctx, args: &CompareArgs) -> CmdResult {
    let (a, b) = (eigenvalue_set(&args.a)?, eigenvalue_set(&args.b)?);
    let mut cmp = shuffle_control(&a, &b, args.shuffles, ctx.seed)?;
    cmp.meta.insert("seed".into(), ctx.seed.to_string());
    save_comparison(&cmp, &ctx.out_or("comparison.json"))?;
    let shuffle = cmp.shuffle.as_ref().expect("shuffle control ran");
    ctx.say(format!(
        "omega = {:.6e}  shuffles with omega' >= omega: {}/{} ({:.2})",
        cmp.distance, shuffle.count_ge, shuffle.n_shuff, shuffle.frac_ge
    ));
    Ok(())
}

fn window_cmd(ctx: &Ctx, args: &WindowArgs) -> CmdResult {
    let ens = load_ensemble(&args.input)?;
    let spec = WindowSpec::new(args.window, args.stride.unwrap_or(args.window));
    let cfg = args.decompose.config();
    let specs: Vec<SpectralDecomposition> = window(&ens, spec)?
        .par_iter()
        .map(|w| delay_embed(w, args.decompose.delays).and_then(|pair| dmd_rrr(&pair, &cfg)))
        .collect::<Result<_, Error>>()?;
    let matrix = window_distance_matrix(&specs)?;
    let out = ctx.out_or("matrix.csv");
    export_matrix(&matrix.distances, &matrix.labels, &out, args.log10)?;
    ctx.say(format!(
        "{} windows of {} steps -> {}",
        specs.len(),
        args.window,
        out.display()
    ));
    Ok(())
}

fn pca(ctx: &Ctx, args: &PcaArgs) -> CmdResult {
    let ens = load_ensemble(&args.input)?;
    let reduced = pca_reduce(&ens, args.components)?;
    let dir = ctx.out_or("pca");
    let ensemble = reduced.ensemble.with_meta("seed", ctx.seed.to_string());
    save_ensemble(&ensemble, &dir, format_of(args.format))?;
    let cumulative: Vec<f64> = reduced
        .explained_variance
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let report = json!({
        "components": args.components,
        "source_dim": ens.state_dim(),
        "explained_variance": reduced.explained_variance,
        "cumulative": cumulative,
        "singular_values": reduced.singular_values[..args.components],
        "seed": ctx.seed,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_atomic(&dir.join("explained_variance.json"), text.as_bytes())?;
    ctx.say(format!(
        "{} -> {} dims, explained variance {:.6}",
        ens.state_dim(),
        args.components,
        cumulative.last().copied().unwrap_or(0.0)
    ));
    Ok(())
}

fn semi(ctx: &Ctx, args: &SemiArgs) -> CmdResult {
    let (big, small) = (eigenvalue_set(&args.big)?, eigenvalue_set(&args.small)?);
    let verdict = semi_conjugacy(&big, &small, args.tol)?;
    if let Some(out) = &ctx.out {
        let report = json!({
            "subset": verdict.subset,
            "tol": args.tol,
            "max_residual": verdict.max_residual,
            "matched_pairs": verdict.matched_pairs,
            "pair_distances": verdict.pair_distances,
            "seed": ctx.seed,
        });
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        write_atomic(out, text.as_bytes())?;
    }
    ctx.say(format!("subset: {}  (max matched distance {:.3e})", verdict.subset, verdict.max_residual));
    if !ctx.quiet {
        for (&(s, b), d) in verdict.matched_pairs.iter().zip(&verdict.pair_distances) {
            let (ls, lb) = (small.values()[s], big.values()[b]);
            println!("  small[{s}] {:.9}{:+.9}i  <->  big[{b}] {:.9}{:+.9}i  ({d:.3e})", ls.re, ls.im, lb.re, lb.im);
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("KCT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("KCT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn dispatch(cli: &Cli) -> CmdResult {
    configure_threads()?;
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.clone(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Dmd(a) => dmd(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Window(a) => window_cmd(&ctx, a),
        Command::Pca(a) => pca(&ctx, a),
        Command::Semi(a) => semi(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
