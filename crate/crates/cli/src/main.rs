use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use afree::constraint::{DifferentialOperator, KernelProjector, random_test_field};
use afree::experiment::{self, auto_levels, potential_kind, synthetic_field, write_rows_csv, ExperimentConfig};
use afree::extension::{
    box_div, extend, verify_ext_conditions, verify_pointwise_maximal_bound, zero_extend, DomainMask, ExtensionMode,
    DIV_TOL,
};
use afree::holefill::{calibrate, derive_constants, geometric_grid, higher_norm, verify_decay, HoleFillingParams};
use afree::maximal::{maximal, weak_type_check_with};
use afree::minimise::{
    compare_sweep, compare_truncation_mean_with, minimise, Budget, IntegrandConfig,
};
use afree::truncation::{lipschitz_truncate, naive_cut_project, verify_tp, PotentialKind};
use afree::{Error, Field, TorusGrid};

/// Experiments on A-free fields: maximal functions, A-free truncation,
/// minimisers, hole filling and extension from cubes.
#[derive(Parser)]
#[command(name = "afree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximal function of |u| and the weak-type ratio per level.
    Maximal(MaximalArgs),
    /// Truncates a field at one level.
    Truncate(TruncateArgs),
    /// Checks the truncation contract over a grid of levels.
    VerifyTp(VerifyTpArgs),
    /// Minimises an integral functional over A-free fields with fixed mean.
    Minimize(MinimizeArgs),
    /// Compares a minimiser with its truncations.
    Compare(CompareArgs),
    /// Fits the reverse estimate and checks shell decay.
    HoleFill(HoleFillArgs),
    /// Extends a cube field to the torus.
    Extend(ExtendArgs),
    /// Runs an experiment described by a JSON config.
    Run(RunArgs),
    /// Writes plot-ready text files from a report bundle.
    EmitPlotdata(PlotArgs),
}

/// Input field: a binary file or a synthetic source on a given grid.
#[derive(Args)]
struct FieldArgs {
    /// Field in the binary layout.
    #[arg(long, conflicts_with = "source")]
    field: Option<PathBuf>,
    /// Synthetic field: zero, random, concentrating:K, sharp-peak, two-plateau.
    #[arg(long)]
    source: Option<String>,
    /// Grid as DIM,RESOLUTION for synthetic sources.
    #[arg(long, default_value = "2,32")]
    grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MaximalArgs {
    #[command(flatten)]
    input: FieldArgs,
    /// Levels as START,RATIO,COUNT.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TruncateArgs {
    #[command(flatten)]
    input: FieldArgs,
    #[arg(long)]
    lambda: f64,
    /// Potential kind: gradient or stream2d.
    #[arg(long, default_value = "gradient")]
    kind: String,
    /// Cut at the level and project instead of truncating the potential.
    #[arg(long)]
    naive: bool,
    /// Operator used by the projection of the naive cut.
    #[arg(long)]
    operator: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyTpArgs {
    #[command(flatten)]
    input: FieldArgs,
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long, default_value = "gradient")]
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MinimizeArgs {
    /// Integrand name (power:P, heterogeneous:P, quasiconformal:K) or JSON file.
    #[arg(long)]
    integrand: String,
    #[arg(long, default_value = "div2@box")]
    operator: String,
    #[arg(long, default_value = "2,32")]
    grid: String,
    /// Mean constraint, comma separated; defaults to the first unit vector.
    #[arg(long)]
    mean: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    integrand: String,
    #[arg(long, default_value = "div2@box")]
    operator: String,
    /// The minimiser, in the binary layout.
    #[arg(long)]
    field: PathBuf,
    /// Compare under a mean constraint instead of plain truncation.
    #[arg(long)]
    mean: Option<String>,
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HoleFillArgs {
    #[command(flatten)]
    input: FieldArgs,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long = "R", default_value_t = 2.0)]
    r: f64,
    /// Fixed constant; fitted when absent.
    #[arg(long = "C", requires = "lambda0")]
    c: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Exponent gain for the higher norm; defaults to half of the guaranteed one.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtendArgs {
    /// Cube field in the binary layout.
    #[arg(long)]
    field: PathBuf,
    /// Domain mask on the torus grid (run-length JSON); defaults to the cube.
    #[arg(long)]
    domain: Option<PathBuf>,
    #[arg(long, default_value = "reflect")]
    mode: String,
    /// Check divergence, the pointwise maximal bound and the level-set condition.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Output directory; defaults to BUNDLE/plots.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number '{t}' in '{s}'")))
        .collect()
}

fn parse_grid(s: &str) -> Result<TorusGrid> {
    let v = parse_list(s)?;
    if v.len() != 2 || v.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
        bail!("grid must be DIM,RESOLUTION, got '{s}'");
    }
    Ok(TorusGrid::new(v[0] as usize, v[1] as usize)?)
}

fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let v = parse_list(s)?;
    if v.len() != 3 || v[2].fract() != 0.0 || v[2] < 1.0 {
        bail!("lambda grid must be START,RATIO,COUNT, got '{s}'");
    }
    if !(v[0] > 0.0 && v[1] > 1.0) {
        bail!("lambda grid needs START > 0 and RATIO > 1");
    }
    Ok(geometric_grid(v[0], v[1], v[2] as usize))
}

fn levels_or(spec: &Option<String>, top: f64, count: usize) -> Result<Vec<f64>> {
    match spec {
        Some(s) => parse_levels(s),
        None => Ok(auto_levels(top, count)),
    }
}

fn load_field(a: &FieldArgs) -> Result<Field> {
    match (&a.field, &a.source) {
        (Some(p), _) => Field::read_binary(p).with_context(|| format!("reading {}", p.display())),
        (None, Some(name)) => Ok(synthetic_field(name, parse_grid(&a.grid)?, a.seed)?),
        (None, None) => bail!("give --field or --source"),
    }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn status(pass: bool) -> &'static str {
    if pass { "PASS" } else { "FAIL" }
}

fn cmd_maximal(a: MaximalArgs) -> Result<bool> {
    let u = load_field(&a.input)?;
    prepare(&a.out)?;
    let mu = maximal(&u);
    mu.as_field().write_binary(&a.out.join("maximal.bin"), None)?;
    let lambdas = levels_or(&a.lambda_grid, mu.max(), 16)?;
    let rep = weak_type_check_with(&u, &mu, &lambdas)?;
    rep.write_csv(&a.out.join("weak_type.csv"))?;
    write_json(&a.out.join("weak_type.json"), &rep)?;
    println!("max Mu = {}  fitted c(n) = {}  {}", mu.max(), rep.c_fit, status(rep.pass));
    Ok(rep.pass)
}

fn cmd_truncate(a: TruncateArgs) -> Result<bool> {
    let u = load_field(&a.input)?;
    prepare(&a.out)?;
    let res = if a.naive {
        let name = a.operator.as_deref().unwrap_or("curl2");
        naive_cut_project(&u, &DifferentialOperator::load(name)?, a.lambda)?
    } else {
        lipschitz_truncate(&u, a.lambda, a.kind.parse::<PotentialKind>()?)?
    };
    res.field().write_binary(&a.out.join("truncated.bin"), Some(json!({ "lambda": a.lambda })))?;
    write_json(&a.out.join("truncation.json"), &res)?;
    println!(
        "lambda = {}  linf_ratio = {}  bad measure = {}  residual = {:e}",
        res.lambda, res.linf_ratio, res.bad_measure, res.residual
    );
    Ok(true)
}

fn cmd_verify_tp(a: VerifyTpArgs) -> Result<bool> {
    let u = load_field(&a.input)?;
    prepare(&a.out)?;
    let kind: PotentialKind = a.kind.parse()?;
    let lambdas = match &a.lambda_grid {
        Some(s) => parse_levels(s)?,
        None if u.linf() > 0.0 => afree::samples::tp_lambda_window(&u, &maximal(&u), 10),
        None => vec![1.0],
    };
    let rep = verify_tp(&u, &lambdas, kind)?;
    write_rows_csv(&a.out.join("tp.csv"), &rep.rows)?;
    write_json(&a.out.join("tp.json"), &rep)?;
    println!("max linf_ratio = {}  uniformity = {}  {}", rep.max_linf_ratio, rep.uniformity, status(rep.pass));
    Ok(rep.pass)
}

fn unit_mean(m: usize) -> Vec<f64> {
    (0..m).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
}

fn parse_mean(s: &Option<String>, m: usize) -> Result<Vec<f64>> {
    let mean = match s {
        Some(s) => parse_list(s)?,
        None => unit_mean(m),
    };
    if mean.len() != m {
        bail!("mean has {} entries, the operator acts on {m} channels", mean.len());
    }
    Ok(mean)
}

fn cmd_minimize(a: MinimizeArgs) -> Result<bool> {
    let grid = parse_grid(&a.grid)?;
    let op = DifferentialOperator::load(&a.operator)?;
    let f = IntegrandConfig::load(&a.integrand, grid.dim)?.build(grid.dim, op.m)?;
    let mean = parse_mean(&a.mean, op.m)?;
    prepare(&a.out)?;
    let mut init = random_test_field(&op, grid, a.seed, 3)?.scaled(0.2);
    init.add_constant(&mean);
    let init = KernelProjector::new(&op, grid)?.project(&init)?;
    let budget = Budget { max_iters: a.max_iters, tol: a.tol, ..Budget::default() };
    let run = minimise(f.as_ref(), &op, Some(&mean), &init, &budget)?;
    run.field().write_binary(
        &a.out.join("minimiser.bin"),
        Some(json!({ "integrand": f.name(), "operator": op.name })),
    )?;
    write_json(&a.out.join("minimiser.json"), &run)?;
    println!(
        "I = {}  iterations = {}  gradient = {:e}  kernel residual = {:e}  {}",
        run.objective,
        run.iterations,
        run.projected_grad_norm,
        run.kernel_residual,
        if run.converged { "converged" } else { "NOT converged" }
    );
    Ok(run.converged)
}

fn cmd_compare(a: CompareArgs) -> Result<bool> {
    let u = Field::read_binary(&a.field).with_context(|| format!("reading {}", a.field.display()))?;
    let op = DifferentialOperator::load(&a.operator)?;
    let kind = potential_kind(&op)?;
    let f = IntegrandConfig::load(&a.integrand, u.grid.dim)?.build(u.grid.dim, op.m)?;
    prepare(&a.out)?;
    let mu = maximal(&u);
    let lambdas = levels_or(&a.lambda_grid, 1.2 * mu.max(), 16)?;
    match &a.mean {
        None => {
            let rep = compare_sweep(f.as_ref(), &u, &lambdas, kind)?;
            write_rows_csv(&a.out.join("compare.csv"), &rep.rows)?;
            write_json(&a.out.join("compare.json"), &rep)?;
            println!(
                "minimality {}  truncation bound above lambda0 {}",
                status(rep.minimal_all),
                status(rep.upper_above_lambda0 && rep.level_above_lambda0)
            );
            Ok(rep.pass)
        }
        Some(m) => {
            let u0 = parse_mean(&Some(m.clone()), op.m)?;
            let rows = lambdas
                .iter()
                .map(|&l| compare_truncation_mean_with(f.as_ref(), &u, &mu, &u0, l, kind))
                .collect::<afree::Result<Vec<_>>>()?;
            write_rows_csv(&a.out.join("compare_mean.csv"), &rows)?;
            let pass = rows.iter().all(|r| r.mean_gap_holds && r.shift_holds && r.pi_chain_holds);
            let worst = rows.iter().map(|r| r.pi_residual).fold(0.0, f64::max);
            println!("mean-constrained comparison {}  max Pi residual {worst:e}", status(pass));
            Ok(pass)
        }
    }
}

fn cmd_hole_fill(a: HoleFillArgs) -> Result<bool> {
    let u = load_field(&a.input)?;
    prepare(&a.out)?;
    let params = match (a.c, a.lambda0) {
        (Some(c), Some(l0)) => HoleFillingParams::new(a.p, c, a.r, l0)?,
        _ => {
            let lambdas = levels_or(&a.lambda_grid, u.linf(), 16)?;
            let cal = calibrate(&u, a.p, a.r, &lambdas)?;
            cal.fit.write_csv(&a.out.join("fit.csv"))?;
            write_json(&a.out.join("calibration.json"), &cal)?;
            cal.params
        }
    };
    let report = verify_decay(&u, &params, &derive_constants(&params)?);
    report.write_shell_csv(&a.out.join("shells.csv"))?;
    let eps = a.eps.unwrap_or(report.eps0 / 2.0);
    let hn = higher_norm(&u, &params, &report, eps)?;
    write_json(&a.out.join("holefill.json"), &json!({ "report": report, "higher_norm": hn }))?;
    println!(
        "C = {}  lambda0 = {}  S = {}  decay = {}  eps0 = {}  decay check {}  higher norm {}",
        params.c,
        params.lambda0,
        report.s,
        report.decay,
        report.eps0,
        status(report.pass),
        status(hn.ok)
    );
    Ok(report.pass && hn.ok)
}

fn cmd_extend(a: ExtendArgs) -> Result<bool> {
    let u = Field::read_binary(&a.field).with_context(|| format!("reading {}", a.field.display()))?;
    let mode: ExtensionMode = a.mode.parse()?;
    prepare(&a.out)?;
    let eu = extend(&u, mode)?;
    eu.write_binary(&a.out.join("extension.bin"), Some(json!({ "mode": a.mode })))?;
    if !a.verify {
        println!("extended {}^{} cube to {}^{} torus", u.grid.resolution, u.grid.dim, eu.grid.resolution, eu.grid.dim);
        return Ok(true);
    }
    let mask = match &a.domain {
        Some(p) => DomainMask::read(p)?,
        None => DomainMask::cube(eu.grid)?,
    };
    let u0 = zero_extend(&u)?;
    let mu = maximal(&eu);
    let lambdas = levels_or(&a.lambda_grid, mu.max(), 16)?;
    let mut rep = verify_ext_conditions(&box_div(u.grid.dim), &u0, &eu, &mask, &lambdas)?;
    let bound = verify_pointwise_maximal_bound(&u, &eu)?;
    rep.pointwise_bound_ok = bound.pointwise_bound_ok;
    rep.write_ratio_csv(&mask, &a.out.join("c3_map.csv"))?;
    write_json(&a.out.join("extension.json"), &rep)?;
    let pass = rep.residual <= DIV_TOL && rep.pointwise_bound_ok;
    println!(
        "divergence residual {:e}  C3 = {:?}  (C1, C2) = {:?}  pointwise bound {}",
        rep.residual,
        rep.pointwise_constant,
        rep.level_set_constants.map(|e| (e.c1, e.c2)),
        status(rep.pointwise_bound_ok)
    );
    Ok(pass)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let summary = experiment::run(&cfg)?;
    for s in &summary.suites {
        let label = serde_json::to_value(s.status)?;
        println!("{:<22} {} {}", s.name, label.as_str().unwrap_or("?"), s.reason.as_deref().unwrap_or(""));
    }
    println!("bundle: {}", cfg.output_dir.display());
    Ok(ExitCode::from(summary.exit_code() as u8))
}

fn cmd_plot(a: PlotArgs) -> Result<bool> {
    let out = a.out.unwrap_or_else(|| a.bundle.join("plots"));
    for p in experiment::emit_plotdata(&a.bundle, &out)? {
        println!("{}", p.display());
    }
    Ok(true)
}

/// Numerical failures exit with 1, everything else (bad flags, unreadable
/// files, invalid parameters) with 2.
fn failure_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::NotAMinimiser { .. } | Error::DegenerateStep(_) | Error::BadIntegrand { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        cmd => match cmd {
            Command::Maximal(a) => cmd_maximal(a),
            Command::Truncate(a) => cmd_truncate(a),
            Command::VerifyTp(a) => cmd_verify_tp(a),
            Command::Minimize(a) => cmd_minimize(a),
            Command::Compare(a) => cmd_compare(a),
            Command::HoleFill(a) => cmd_hole_fill(a),
            Command::Extend(a) => cmd_extend(a),
            Command::EmitPlotdata(a) => cmd_plot(a),
            Command::Run(_) => unreachable!(),
        }
        .map(|pass| ExitCode::from(if pass { 0 } else { 1 })),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}
