//! Declarative experiment runs and their report bundles.
//!
//! A run reads one JSON config, executes a pipeline, and writes fields,
//! per-level CSV tables, JSON reports and a `summary.json` that lists every
//! suite with its status. Relative paths in the config are resolved against
//! the directory of the config file. The environment variable
//! `AFREE_OUTPUT_DIR` overrides `output_dir`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constraint::{random_test_field, DifferentialOperator, KernelProjector};
use crate::error::{Error, Result};
use crate::extension::{domain_pipeline, minimise_on_cube, zero_extend, DomainMask};
use crate::field::{Field, TorusGrid};
use crate::holefill::{
    calibrate, derive_constants, geometric_grid, higher_norm, verify_decay, HigherNorm, HoleFillingParams,
    HoleFillingReport, ReverseFit,
};
use crate::maximal::maximal;
use crate::minimise::{
    check_growth, compare_sweep, compare_truncation_mean_with, minimise, Budget, Integrand, IntegrandConfig,
};
use crate::samples::{concentrating_gradient, plateau, random_smooth, tp_lambda_window};
use crate::truncation::{verify_tp, PotentialKind};

pub const OUTPUT_DIR_ENV: &str = "AFREE_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    TpVerify,
    Thm1,
    Thm3,
    Domain,
    HolefillOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

impl LambdaGrid {
    pub fn levels(&self) -> Vec<f64> {
        geometric_grid(self.start, self.ratio, self.count)
    }
}

/// Every tolerance a run uses. Reports echo the effective values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack in energy comparisons.
    pub energy: f64,
    /// Relative slack in the shell decay test.
    pub decay: f64,
    /// Constraint residual accepted for computed fields.
    pub residual: f64,
    /// Projected-gradient stopping tolerance of the minimiser.
    pub descent: f64,
    pub max_iters: usize,
    /// Largest accepted spread of `‖ũ‖_∞ / λ` across truncated levels.
    pub uniformity: f64,
    /// Mean-value identity residual for quasiaffine forms.
    pub identity: f64,
    /// Objective reached by the quasiconformal descent.
    pub objective: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            energy: crate::minimise::ENERGY_TOL,
            decay: crate::holefill::DECAY_TOL,
            residual: 1e-8,
            descent: 1e-10,
            max_iters: 20000,
            uniformity: 2.0,
            identity: 1e-8,
            objective: 1e-8,
        }
    }
}

/// An integrand given by name (`heterogeneous:4`), by JSON file, or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntegrandSource {
    Named(String),
    Inline(IntegrandConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    /// Operator name (`div2@box`) or JSON file.
    #[serde(default)]
    pub operator: Option<String>,
    #[serde(default)]
    pub integrand: Option<IntegrandSource>,
    pub grid: GridSpec,
    #[serde(default)]
    pub lambda_grid: Option<LambdaGrid>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Mean constraint of the minimiser.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    /// Input field in the binary layout.
    #[serde(default)]
    pub field: Option<PathBuf>,
    /// Synthetic input: `zero`, `random`, `concentrating:K`, `sharp-peak` or `two-plateau`.
    #[serde(default)]
    pub source: Option<String>,
    /// Fixed hole-filling parameters; fitted when absent.
    #[serde(default)]
    pub holefill: Option<HoleFillingParams>,
    /// Exponent used when fitting hole-filling parameters without an integrand.
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default = "default_r")]
    pub reverse_r: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_r() -> f64 {
    2.0
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

impl ExperimentConfig {
    /// Reads and validates a config. Relative paths become absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.output_dir = match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => resolve(&base, &cfg.output_dir),
        };
        cfg.field = cfg.field.map(|f| resolve(&base, &f));
        if let Some(op) = &cfg.operator {
            if op.ends_with(".json") {
                cfg.operator = Some(resolve(&base, Path::new(op)).display().to_string());
            }
        }
        if let Some(IntegrandSource::Named(name)) = &cfg.integrand {
            if name.ends_with(".json") {
                cfg.integrand = Some(IntegrandSource::Named(resolve(&base, Path::new(name)).display().to_string()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        TorusGrid::new(self.grid.dim, self.grid.resolution)?;
        if let Some(l) = &self.lambda_grid {
            if !(l.start > 0.0 && l.ratio > 1.0 && l.count >= 1 && l.start.is_finite() && l.ratio.is_finite()) {
                return Err(Error::InvalidInput("lambda grid needs start > 0, ratio > 1 and count ≥ 1".into()));
            }
        }
        if let Some(f) = &self.field {
            if !f.exists() {
                return Err(Error::InvalidInput(format!("field file {} does not exist", f.display())));
            }
        }
        for file in [self.operator.as_deref(), self.named_integrand()].into_iter().flatten() {
            if file.ends_with(".json") && !Path::new(file).exists() {
                return Err(Error::InvalidInput(format!("file {file} does not exist")));
            }
        }
        if let Some(h) = &self.holefill {
            h.validate()?;
        }
        if !(self.reverse_r >= 1.0) {
            return Err(Error::InvalidInput("reverse_r must be at least 1".into()));
        }
        self.operator()?;
        self.integrand_config()?;
        Ok(())
    }

    fn named_integrand(&self) -> Option<&str> {
        match &self.integrand {
            Some(IntegrandSource::Named(s)) => Some(s),
            _ => None,
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.dim, self.grid.resolution)
    }

    fn default_operator(&self) -> &'static str {
        match self.pipeline {
            Pipeline::Thm3 => "curl2:2@box",
            Pipeline::TpVerify => "curl2@box",
            _ => "div2@box",
        }
    }

    pub fn operator(&self) -> Result<DifferentialOperator> {
        DifferentialOperator::load(self.operator.as_deref().unwrap_or(self.default_operator()))
    }

    pub fn integrand_config(&self) -> Result<IntegrandConfig> {
        let n = self.grid.dim;
        match &self.integrand {
            Some(IntegrandSource::Inline(c)) => Ok(c.clone()),
            Some(IntegrandSource::Named(s)) => IntegrandConfig::load(s, n),
            None => IntegrandConfig::load(
                match self.pipeline {
                    Pipeline::Thm3 => "quasiconformal:2",
                    _ => "heterogeneous:4",
                },
                n,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuiteStatus {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "SKIPPED")]
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub status: SuiteStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pipeline: Pipeline,
    pub seed: u64,
    pub grid: GridSpec,
    pub tolerances: Tolerances,
    pub suites: Vec<Suite>,
    pub eps0: Option<f64>,
    pub pass: bool,
}

impl Summary {
    /// 0 when every suite passed or was skipped, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass { 0 } else { 1 }
    }
}

#[derive(Default)]
struct Suites(Vec<Suite>);

impl Suites {
    fn check(&mut self, name: &str, ok: bool, reason: impl Into<String>) {
        let reason = reason.into();
        self.0.push(Suite {
            name: name.into(),
            status: if ok { SuiteStatus::Pass } else { SuiteStatus::Fail },
            reason: if reason.is_empty() { None } else { Some(reason) },
        });
    }
    fn skip(&mut self, name: &str, reason: impl Into<String>) {
        self.0.push(Suite { name: name.into(), status: SuiteStatus::Skipped, reason: Some(reason.into()) });
    }
}

/// Writes rows as CSV, flattening nested objects into `outer.inner` columns.
pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    flatten(&key, x, out);
                }
            }
            serde_json::Value::Null => out.push((prefix.into(), String::new())),
            serde_json::Value::String(s) => out.push((prefix.into(), s.clone())),
            other => out.push((prefix.into(), other.to_string())),
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    for (i, row) in rows.iter().enumerate() {
        let mut cols = Vec::new();
        flatten("", &serde_json::to_value(row)?, &mut cols);
        if i == 0 {
            w.write_record(cols.iter().map(|c| &c.0))?;
        }
        w.write_record(cols.iter().map(|c| &c.1))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    Ok(std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?)
}

/// Truncation potential matching `op`: stream functions for 2D divergence,
/// gradients for curl.
pub fn potential_kind(op: &DifferentialOperator) -> Result<PotentialKind> {
    let base = op.name.trim_end_matches("@box");
    if base.starts_with("div2") && op.m == 2 {
        Ok(PotentialKind::Stream2d)
    } else if base.starts_with("curl") {
        Ok(PotentialKind::Gradient)
    } else {
        Err(Error::IncompatibleOperator(format!("no truncation for operator '{}'", op.name)))
    }
}

/// Synthetic fields by name.
pub fn synthetic_field(name: &str, grid: TorusGrid, seed: u64) -> Result<Field> {
    let (base, arg) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let arg_usize = || -> Result<usize> {
        arg.map_or(Ok(0), |a| a.parse().map_err(|_| Error::InvalidInput(format!("bad argument in '{name}'"))))
    };
    Ok(match base {
        "zero" => Field::zeros(grid, grid.dim),
        "random" => random_smooth(grid, grid.dim, seed, 3),
        "concentrating" if grid.dim == 2 => concentrating_gradient(grid, arg_usize()?),
        "sharp-peak" => crate::samples::sharp_peak_gradient(grid),
        "two-plateau" => plateau(grid, 1.0, 4.0, 1, 10),
        _ => return Err(Error::InvalidInput(format!("unknown source '{name}'"))),
    })
}

fn input_field(cfg: &ExperimentConfig, default: &str) -> Result<Field> {
    let grid = cfg.grid()?;
    match (&cfg.field, &cfg.source) {
        (Some(path), _) => Field::read_binary(path),
        (None, Some(src)) => synthetic_field(src, grid, cfg.seed),
        (None, None) => synthetic_field(default, grid, cfg.seed),
    }
}

/// `count` geometric levels from `0.05 top` to `1.2 top`.
pub fn auto_levels(top: f64, count: usize) -> Vec<f64> {
    if top > 0.0 {
        geometric_grid(0.05 * top, (24.0f64).powf(1.0 / (count - 1) as f64), count)
    } else {
        vec![1.0]
    }
}

/// Hole filling with fitted or fixed parameters, plus the higher norm at
/// `ε₀/2` and on a grid of exponents.
fn holefill_stage(
    cfg: &ExperimentConfig,
    u: &Field,
    p: f64,
    r: f64,
    lambdas: &[f64],
    suites: &mut Suites,
    tag: &str,
) -> Result<Option<f64>> {
    let out = &cfg.output_dir;
    let params = match cfg.holefill {
        Some(h) => {
            suites.skip(&format!("reverse-fit{tag}"), "parameters fixed by the config");
            h
        }
        None => match calibrate(u, p, r, lambdas) {
            Ok(cal) => {
                cal.fit.write_csv(&out.join(format!("fit{tag}.csv")))?;
                write_json(&out.join(format!("calibration{tag}.json")), &cal)?;
                suites.check(
                    &format!("reverse-fit{tag}"),
                    cal.fit.c_fit.is_finite() && !cal.fit.fail,
                    format!("C_fit = {}", cal.fit.c_fit),
                );
                cal.params
            }
            Err(Error::DegenerateInput(msg)) => {
                suites.check(&format!("reverse-fit{tag}"), true, format!("trivial: {msg}"));
                suites.skip(&format!("decay{tag}"), "zero field");
                suites.skip(&format!("higher-norm{tag}"), "zero field");
                return Ok(None);
            }
            Err(e) => return Err(e),
        },
    };
    let base: HoleFillingReport = derive_constants(&params)?;
    let report = verify_decay(u, &params, &base);
    report.write_shell_csv(&out.join(format!("shells{tag}.csv")))?;
    write_json(&out.join(format!("holefill{tag}.json")), &report)?;
    suites.check(
        &format!("decay{tag}"),
        report.pass,
        match report.violating_shell {
            Some(s) => format!("shell {s} exceeds decay^r ‖u‖_p^p"),
            None => String::new(),
        },
    );
    let half = higher_norm(u, &params, &report, report.eps0 / 2.0)?;
    suites.check(
        &format!("higher-norm{tag}"),
        half.ok && half.value.is_finite(),
        format!("value {} against majorant {}", half.value, half.shell_majorant.min(half.series_majorant)),
    );
    let sweep: Vec<HigherNorm> = (1..=10)
        .map(|k| higher_norm(u, &params, &report, report.eps0 * k as f64 / 10.0))
        .collect::<Result<_>>()?;
    write_json(&out.join(format!("higher_norm{tag}.json")), &sweep)?;
    Ok(Some(report.eps0))
}

fn budget(cfg: &ExperimentConfig) -> Budget {
    Budget { tol: cfg.tolerances.descent, max_iters: cfg.tolerances.max_iters, ..Budget::default() }
}

fn build_integrand(cfg: &ExperimentConfig, m: usize) -> Result<Arc<dyn Integrand>> {
    cfg.integrand_config()?.build(cfg.grid.dim, m)
}

fn run_tp(cfg: &ExperimentConfig, s: &mut Suites) -> Result<Option<f64>> {
    let op = cfg.operator()?;
    let kind = potential_kind(&op)?;
    let u = input_field(cfg, "concentrating:0")?;
    u.write_binary(&cfg.output_dir.join("field.bin"), None)?;
    let lambdas = match (&cfg.lambda_grid, u.linf() > 0.0) {
        (Some(l), _) => l.levels(),
        (None, true) => tp_lambda_window(&u, &maximal(&u), 10),
        (None, false) => vec![1.0],
    };
    let rep = verify_tp(&u, &lambdas, kind)?;
    write_rows_csv(&cfg.output_dir.join("tp.csv"), &rep.rows)?;
    write_json(&cfg.output_dir.join("tp.json"), &rep)?;
    let t = &cfg.tolerances;
    s.check("tp-linf", rep.max_linf_ratio <= rep.budget, format!("max ratio {} budget {}", rep.max_linf_ratio, rep.budget));
    s.check("tp-inclusion", rep.rows.iter().all(|r| r.inclusion_violations == 0), "");
    s.check("tp-kernel", rep.rows.iter().all(|r| r.residual <= t.residual), "");
    s.check("tp-uniform", rep.uniformity <= t.uniformity, format!("spread {}", rep.uniformity));
    Ok(None)
}

fn run_thm1(cfg: &ExperimentConfig, s: &mut Suites) -> Result<Option<f64>> {
    let grid = cfg.grid()?;
    let op = cfg.operator()?;
    let kind = potential_kind(&op)?;
    let f = build_integrand(cfg, op.m)?;
    let spec = f.spec();
    let mean = cfg.mean.clone().unwrap_or_else(|| (0..op.m).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect());
    let growth = check_growth(f.as_ref(), 2000, 4.0, cfg.seed)?;
    s.check("growth", growth.pass, format!("{} violations", growth.violations.len()));
    let run = minimise(f.as_ref(), &op, Some(&mean), &Field::constant(grid, &mean), &budget(cfg))?;
    let u = run.field().clone();
    u.write_binary(&cfg.output_dir.join("minimiser.bin"), Some(serde_json::json!({ "integrand": f.name() })))?;
    write_json(&cfg.output_dir.join("minimiser.json"), &run)?;
    s.check(
        "minimiser",
        run.converged && run.kernel_residual <= cfg.tolerances.residual,
        format!("{} iterations, gradient {:e}", run.iterations, run.projected_grad_norm),
    );
    let lambdas = match &cfg.lambda_grid {
        Some(l) => l.levels(),
        None => auto_levels(1.2 * maximal(&u).max(), 16),
    };
    match compare_sweep(f.as_ref(), &u, &lambdas, kind) {
        Ok(rep) => {
            write_rows_csv(&cfg.output_dir.join("compare.csv"), &rep.rows)?;
            s.check("minimality", rep.minimal_all, "");
            s.check("truncation-bound", rep.upper_above_lambda0 && rep.level_above_lambda0, "");
        }
        Err(Error::NotAMinimiser { deficit }) => {
            s.check("minimality", false, format!("competitor lowers the energy by {deficit:e}"));
            s.skip("truncation-bound", "minimality failed");
        }
        Err(e) => return Err(e),
    }
    holefill_stage(cfg, &u, spec.p, cfg.reverse_r, &lambdas, s, "")
}

fn run_thm3(cfg: &ExperimentConfig, s: &mut Suites) -> Result<Option<f64>> {
    let grid = cfg.grid()?;
    let op = cfg.operator()?;
    let kind = potential_kind(&op)?;
    let f = build_integrand(cfg, op.m)?;
    let spec = f.spec();
    let u0 = match &cfg.mean {
        Some(m) => m.clone(),
        None if op.m == 4 => vec![0.8, -0.6, 0.6, 0.8],
        None => return Err(Error::InvalidInput("thm3 needs a mean constraint for this operator".into())),
    };
    let growth = check_growth(f.as_ref(), 2000, 3.0, cfg.seed)?;
    s.check("growth", growth.pass, format!("measured L = {}", growth.measured_l));
    let proj = KernelProjector::new(&op, grid)?;
    let mut init = random_test_field(&op, grid, cfg.seed, 3)?.scaled(0.2);
    init.add_constant(&u0);
    let init = proj.project(&init)?;
    let run = minimise(f.as_ref(), &op, Some(&u0), &init, &budget(cfg))?;
    let u = run.field().clone();
    u.write_binary(&cfg.output_dir.join("minimiser.bin"), Some(serde_json::json!({ "integrand": f.name() })))?;
    write_json(&cfg.output_dir.join("minimiser.json"), &run)?;
    s.check("descent", run.objective <= cfg.tolerances.objective, format!("I = {:e}", run.objective));
    let mu = maximal(&u);
    let lambdas = match &cfg.lambda_grid {
        Some(l) => l.levels(),
        None => auto_levels(1.2 * mu.max(), 12),
    };
    let mut rows = Vec::new();
    let mut minimal = true;
    for &l in &lambdas {
        match compare_truncation_mean_with(f.as_ref(), &u, &mu, &u0, l, kind) {
            Ok(r) => rows.push(r),
            Err(Error::NotAMinimiser { .. }) => minimal = false,
            Err(e) => return Err(e),
        }
    }
    write_rows_csv(&cfg.output_dir.join("compare_mean.csv"), &rows)?;
    s.check("mean-minimality", minimal && rows.iter().all(|r| r.mean_gap_holds), "");
    s.check("mean-shift", rows.iter().all(|r| r.shift_holds), "");
    s.check("pi-chain", rows.iter().all(|r| r.pi_chain_holds), "");
    let worst = rows.iter().map(|r| r.pi_residual).fold(0.0, f64::max);
    if spec.pi.is_some() {
        s.check("pi-identity", worst <= cfg.tolerances.identity, format!("max residual {worst:e}"));
    } else {
        s.skip("pi-identity", "integrand has no quasiaffine term");
    }
    Ok(None)
}

fn run_domain(cfg: &ExperimentConfig, s: &mut Suites) -> Result<Option<f64>> {
    let torus = cfg.grid()?;
    if torus.dim != 2 || torus.resolution % 4 != 0 {
        return Err(Error::InvalidGrid("the domain pipeline needs a 2D grid with resolution divisible by 4".into()));
    }
    let cube = TorusGrid::new(2, torus.resolution / 2)?;
    let base = build_integrand(cfg, 2)?;
    let forcing = random_smooth(cube, 2, cfg.seed, 2);
    let cm = minimise_on_cube(base, Some(&forcing), cube, &budget(cfg))?;
    cm.u.write_binary(&cfg.output_dir.join("minimiser.bin"), None)?;
    cm.eu.write_binary(&cfg.output_dir.join("extension.bin"), None)?;
    s.check(
        "minimiser",
        cm.run.converged && cm.symmetry_defect <= cfg.tolerances.residual,
        format!("symmetry defect {:e}", cm.symmetry_defect),
    );
    let mask = DomainMask::cube(torus)?;
    mask.write(&cfg.output_dir.join("domain.mask.json"))?;
    let u0 = zero_extend(&cm.u)?;
    let lambdas = match &cfg.lambda_grid {
        Some(l) => l.levels(),
        None => geometric_grid(0.05 * maximal(&cm.eu).max(), 1.25, 16),
    };
    let rep = domain_pipeline(cm.integrand.as_ref(), &mask, &u0, &cm.eu, &lambdas)?;
    write_json(&cfg.output_dir.join("domain.json"), &rep)?;
    rep.extension.write_ratio_csv(&mask, &cfg.output_dir.join("c3_map.csv"))?;
    write_rows_csv(&cfg.output_dir.join("domain_rows.csv"), &rep.rows)?;
    let ext = &rep.extension;
    s.check("extension-residual", ext.residual <= cfg.tolerances.residual, format!("{:e}", ext.residual));
    s.check("pointwise-bound", ext.pointwise_bound_ok, format!("C3 = {:?}", ext.pointwise_constant));
    s.check("minimality", rep.rows.iter().all(|r| r.minimal), "");
    s.check("truncation-bound", rep.rows.iter().all(|r| !r.above_lambda0 || r.holds), "");
    for name in ["pointwise", "level-set"] {
        match rep.routes.iter().find(|r| r.route == name) {
            Some(r) => s.check(&format!("decay:{name}"), r.pass, r.note.clone().unwrap_or_default()),
            None => s.skip(&format!("decay:{name}"), "condition not satisfied by the measured constants"),
        }
    }
    let eps0 = rep.routes.first().and_then(|r| r.holefill.as_ref()).map(|h| h.eps0);
    if let Some(route) = rep.routes.first() {
        if let (Some(cal), Some(hf)) = (&route.calibration, &route.holefill) {
            cal.fit.write_csv(&cfg.output_dir.join("fit.csv"))?;
            hf.write_shell_csv(&cfg.output_dir.join("shells.csv"))?;
            write_json(&cfg.output_dir.join("holefill.json"), hf)?;
            let sweep: Vec<HigherNorm> = (1..=10)
                .map(|k| higher_norm(&u0, &cal.params, hf, hf.eps0 * k as f64 / 10.0))
                .collect::<Result<_>>()?;
            write_json(&cfg.output_dir.join("higher_norm.json"), &sweep)?;
        }
    }
    Ok(eps0)
}

fn run_holefill(cfg: &ExperimentConfig, s: &mut Suites) -> Result<Option<f64>> {
    let u = input_field(cfg, "two-plateau")?;
    let p = cfg.holefill.map(|h| h.p).or(cfg.p).unwrap_or(2.0);
    let lambdas = match &cfg.lambda_grid {
        Some(l) => l.levels(),
        None => auto_levels(u.linf(), 16),
    };
    holefill_stage(cfg, &u, p, cfg.reverse_r, &lambdas, s, "")
}

/// Runs the configured pipeline and writes its bundle into `output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<Summary> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let mut suites = Suites::default();
    let eps0 = match cfg.pipeline {
        Pipeline::TpVerify => run_tp(cfg, &mut suites)?,
        Pipeline::Thm1 => run_thm1(cfg, &mut suites)?,
        Pipeline::Thm3 => run_thm3(cfg, &mut suites)?,
        Pipeline::Domain => run_domain(cfg, &mut suites)?,
        Pipeline::HolefillOnly => run_holefill(cfg, &mut suites)?,
    };
    let pass = suites.0.iter().all(|s| s.status != SuiteStatus::Fail);
    let summary = Summary {
        pipeline: cfg.pipeline,
        seed: cfg.seed,
        grid: cfg.grid,
        tolerances: cfg.tolerances,
        suites: suites.0,
        eps0,
        pass,
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes whitespace-separated plot files from a bundle into `out`.
///
/// * `lambda_cfit.dat` from `fit.csv`,
/// * `shells.dat` from `holefill.json`, with the `decay^r ‖u‖_p^p` overlay,
/// * `higher_norm.dat` from `higher_norm.json`,
/// * `c3_map.csv` copied from a domain bundle.
pub fn emit_plotdata(bundle: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    if !bundle.join("summary.json").is_file() {
        return Err(Error::InvalidInput(format!("no report bundle at {}", bundle.display())));
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let fit = bundle.join("fit.csv");
    if fit.is_file() {
        let mut rd = csv::Reader::from_path(&fit)?;
        let mut text = String::from(
            "# reverse estimate: ratio = int_{|u|>=R lambda}|u|^p / (lambda^(p-1) int_{|u|>=lambda}|u|); C_fit is its maximum\n# lambda ratio\n",
        );
        for row in rd.deserialize::<crate::holefill::FitRow>() {
            let row = row?;
            text.push_str(&format!("{} {}\n", row.lambda, row.ratio));
        }
        let path = out.join("lambda_cfit.dat");
        std::fs::write(&path, text)?;
        written.push(path);
    }
    let hf = bundle.join("holefill.json");
    if hf.is_file() {
        let rep: HoleFillingReport = serde_json::from_str(&std::fs::read_to_string(&hf)?)?;
        let mut text = String::from(
            "# shell decay: int_{S^r lambda0 <= |u| <= S^(r+1) lambda0}|u|^p <= decay^r ||u||_p^p\n# r integral bound\n",
        );
        for row in &rep.shell_table {
            text.push_str(&format!("{} {} {}\n", row.r, row.integral, row.bound));
        }
        let path = out.join("shells.dat");
        std::fs::write(&path, text)?;
        written.push(path);
    }
    let hn = bundle.join("higher_norm.json");
    if hn.is_file() {
        let rows: Vec<HigherNorm> = serde_json::from_str(&std::fs::read_to_string(&hn)?)?;
        let mut text = String::from(
            "# higher integrability: int_{|u|>=lambda0}|u|^(p+eps) against its shell and series majorants\n# eps value shell_majorant series_majorant\n",
        );
        for h in &rows {
            text.push_str(&format!("{} {} {} {}\n", h.eps, h.value, h.shell_majorant, h.series_majorant));
        }
        let path = out.join("higher_norm.dat");
        std::fs::write(&path, text)?;
        written.push(path);
    }
    let c3 = bundle.join("c3_map.csv");
    if c3.is_file() {
        let path = out.join("c3_map.csv");
        std::fs::copy(&c3, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Reverse fit recorded in a bundle, if any.
pub fn read_fit(bundle: &Path) -> Result<Option<ReverseFit>> {
    let path = bundle.join("calibration.json");
    if !path.is_file() {
        return Ok(None);
    }
    let cal: crate::holefill::Calibration = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(Some(cal.fit))
}
