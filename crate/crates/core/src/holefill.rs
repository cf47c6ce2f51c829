//! Hole filling: from a reverse estimate
//!
//! `∫_{|u| ≥ Rλ} |u|^p ≤ C λ^{p-1} ∫_{|u| ≥ λ} |u|`   (for λ ≥ λ₀)
//!
//! to geometric decay of `|u|^p` over the shells `{S^r λ₀ ≤ |u| ≤ S^{r+1} λ₀}`
//! and a finite `L^{p+ε}` bound for `ε < ε₀`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{integrate, Field};

/// Relative slack allowed when comparing shell integrals with their bounds.
pub const DECAY_TOL: f64 = 1e-9;

/// Smallest constant handed to [`derive_constants`] by [`calibrate`]; keeps
/// `2C ≥ 1` so the iteration step never collapses to one when `R = 1`.
pub const C_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleFillingParams {
    pub p: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub lambda0: f64,
}

impl HoleFillingParams {
    pub fn new(p: f64, c: f64, r: f64, lambda0: f64) -> Result<Self> {
        let s = Self { p, c, r, lambda0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidInput(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidInput(format!("C must be positive, got {}", self.c)));
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::InvalidInput(format!("R must be at least 1, got {}", self.r)));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda0 must be positive, got {}", self.lambda0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellRow {
    pub r: usize,
    pub lo: f64,
    pub hi: f64,
    pub integral: f64,
    /// Ratio to the previous shell's integral (absent for `r = 0` or after an empty shell).
    pub ratio_prev: Option<f64>,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleFillingReport {
    pub params: HoleFillingParams,
    #[serde(rename = "S")]
    pub s: f64,
    pub decay: f64,
    pub eps0: f64,
    pub lp_norm_p: Option<f64>,
    pub shell_table: Vec<ShellRow>,
    pub violating_shell: Option<usize>,
    pub lp_eps_estimate: Option<HigherNorm>,
    pub pass: bool,
}

impl HoleFillingReport {
    /// Writes the shell table with columns `r, lo, hi, integral, ratio_prev, bound, ok`.
    pub fn write_shell_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "lo", "hi", "integral", "ratio_prev", "bound", "ok"])?;
        for row in &self.shell_table {
            w.write_record([
                row.r.to_string(),
                row.lo.to_string(),
                row.hi.to_string(),
                row.integral.to_string(),
                row.ratio_prev.map(|v| v.to_string()).unwrap_or_default(),
                row.bound.to_string(),
                row.ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `S = max{(2C)^{1/(p-1)}, R}`, `decay = 2C/(2C+1)` and
/// `ε₀ = ln((2C+1)/(2C)) / (p ln S)`.
pub fn derive_constants(params: &HoleFillingParams) -> Result<HoleFillingReport> {
    params.validate()?;
    let HoleFillingParams { p, c, r, .. } = *params;
    let s = (2.0 * c).powf(1.0 / (p - 1.0)).max(r);
    if s <= 1.0 {
        return Err(Error::DegenerateStep(s));
    }
    let decay = 2.0 * c / (2.0 * c + 1.0);
    let eps0 = ((2.0 * c + 1.0) / (2.0 * c)).ln() / (p * s.ln());
    Ok(HoleFillingReport {
        params: *params,
        s,
        decay,
        eps0,
        lp_norm_p: None,
        shell_table: Vec::new(),
        violating_shell: None,
        lp_eps_estimate: None,
        pass: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// `{|u| ≥ λ}` is empty, so the level carries no information.
    Empty,
    /// Zero divisor with a nonzero left-hand side.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub lambda: f64,
    pub lhs: f64,
    pub divisor: f64,
    pub ratio: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseFit {
    pub c_fit: f64,
    pub lambda0: f64,
    pub rows: Vec<FitRow>,
    pub fail: bool,
}

impl ReverseFit {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One level of the reverse estimate: `∫_{|u| ≥ Rλ}|u|^p` against
/// `λ^{p-1} ∫_{|u| ≥ λ}|u|`.
pub fn reverse_row(norms: &[f64], cell: f64, p: f64, r: f64, lambda: f64) -> FitRow {
    let (mut lhs, mut mass, mut hit) = (0.0, 0.0, false);
    for &a in norms {
        if a >= r * lambda {
            lhs += a.powf(p);
        }
        if a >= lambda {
            mass += a;
            hit = true;
        }
    }
    let lhs = lhs * cell;
    let divisor = lambda.powf(p - 1.0) * mass * cell;
    let (ratio, status) = if !hit {
        (0.0, FitStatus::Empty)
    } else if divisor > 0.0 {
        (lhs / divisor, FitStatus::Ok)
    } else if lhs > 0.0 {
        (f64::INFINITY, FitStatus::Fail)
    } else {
        (0.0, FitStatus::Ok)
    };
    FitRow { lambda, lhs, divisor, ratio, status }
}

/// Fits the smallest `C` for which the reverse estimate holds on `lambdas`.
///
/// `lambda0` is the smallest grid level at which the running maximum of the
/// ratio (taken in increasing λ) is within 5% of `c_fit`.
pub fn fit_reverse_estimate(u: &Field, p: f64, r: f64, lambdas: &[f64]) -> Result<ReverseFit> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) || lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("lambda grid must be positive and strictly increasing".into()));
    }
    if !(p > 1.0) || !(r >= 1.0) {
        return Err(Error::InvalidInput(format!("need p > 1 and R >= 1, got p = {p}, R = {r}")));
    }
    let norms = u.norms();
    if norms.iter().all(|&a| a == 0.0) {
        return Err(Error::DegenerateInput("all-zero field".into()));
    }
    let cell = u.grid.cell_measure();
    let rows: Vec<FitRow> = crate::par::map_slice(lambdas, |&l| reverse_row(&norms, cell, p, r, l));
    let fail = rows.iter().any(|row| row.status == FitStatus::Fail);
    let c_fit = rows
        .iter()
        .filter(|row| row.status != FitStatus::Empty)
        .map(|row| row.ratio)
        .fold(0.0, f64::max);
    let mut running = 0.0f64;
    let mut lambda0 = lambdas[0];
    for row in &rows {
        if row.status != FitStatus::Empty {
            running = running.max(row.ratio);
        }
        if running >= c_fit / 1.05 {
            lambda0 = row.lambda;
            break;
        }
    }
    Ok(ReverseFit { c_fit, lambda0, rows, fail })
}

/// Geometric grid `start · ratio^j`, `j = 0..count`.
pub fn geometric_grid(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| start * ratio.powi(j as i32)).collect()
}

/// Geometric grid from `lambda0` with ratio `S^{1/4}` up to `top`, so each
/// shell is subdivided into four levels.
pub fn shell_grid(lambda0: f64, s: f64, top: f64) -> Vec<f64> {
    let q = s.powf(0.25);
    let mut out = vec![lambda0];
    while let Some(&last) = out.last() {
        let next = last * q;
        if next > top || !(q > 1.0) {
            break;
        }
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: HoleFillingParams,
    pub fit: ReverseFit,
    /// Ratios at the levels `S^j λ₀` used by the shell argument.
    pub ladder: Vec<FitRow>,
    pub rounds: usize,
}

/// Fits `C` and `λ₀` on `lambdas`, then repeatedly adds the ladder levels
/// `S^j λ₀` (which the shell argument actually uses) to the fit until `C`
/// no longer changes.
pub fn calibrate(u: &Field, p: f64, r: f64, lambdas: &[f64]) -> Result<Calibration> {
    let fit = fit_reverse_estimate(u, p, r, lambdas)?;
    if fit.fail {
        return Err(Error::DegenerateInput("reverse estimate has a zero divisor with nonzero mass".into()));
    }
    let norms = u.norms();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let cell = u.grid.cell_measure();
    let mut c = fit.c_fit.max(C_FLOOR);
    let mut ladder = Vec::new();
    let mut rounds = 0;
    while rounds < 64 {
        rounds += 1;
        let params = HoleFillingParams::new(p, c, r, fit.lambda0)?;
        let s = derive_constants(&params)?.s;
        ladder = ladder_levels(fit.lambda0, s, top)
            .into_iter()
            .map(|l| reverse_row(&norms, cell, p, r, l))
            .collect();
        let worst = ladder
            .iter()
            .filter(|row| row.status == FitStatus::Ok)
            .map(|row| row.ratio)
            .fold(0.0, f64::max);
        if worst <= c {
            break;
        }
        c = worst;
    }
    Ok(Calibration { params: HoleFillingParams::new(p, c, r, fit.lambda0)?, fit, ladder, rounds })
}

fn ladder_levels(lambda0: f64, s: f64, top: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut l = lambda0;
    while l <= top && out.len() < 4096 {
        out.push(l);
        l *= s;
    }
    out
}

/// Fills the shell table of `report` for `u` and sets `pass`.
pub fn verify_decay(u: &Field, params: &HoleFillingParams, report: &HoleFillingReport) -> HoleFillingReport {
    let p = params.p;
    let norms = u.norms();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let total = integrate(u, p, |_| true);
    let mut out = report.clone();
    out.params = *params;
    out.lp_norm_p = Some(total);
    out.shell_table.clear();
    out.violating_shell = None;
    let mut prev: Option<f64> = None;
    let mut r = 0usize;
    loop {
        let lo = params.lambda0 * report.s.powi(r as i32);
        if lo > top || !lo.is_finite() {
            break;
        }
        let hi = lo * report.s;
        let integral = integrate(u, p, |i| norms[i] >= lo && norms[i] <= hi);
        let bound = report.decay.powi(r as i32) * total;
        let ok = integral <= bound * (1.0 + DECAY_TOL);
        if !ok && out.violating_shell.is_none() {
            out.violating_shell = Some(r);
        }
        out.shell_table.push(ShellRow {
            r,
            lo,
            hi,
            integral,
            ratio_prev: prev.filter(|&v| v > 0.0).map(|v| integral / v),
            bound,
            ok,
        });
        prev = Some(integral);
        r += 1;
    }
    out.pass = out.violating_shell.is_none();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HigherNorm {
    pub eps: f64,
    /// `∫_{|u| ≥ λ₀} |u|^{p+ε}` by quadrature.
    pub value: f64,
    /// `Σ_r (S^{r+1}λ₀)^ε ∫_{shell r} |u|^p` over the measured shells.
    pub shell_majorant: f64,
    /// `Σ_r (S^{r+1}λ₀)^ε decay^r ‖u‖_p^p`, infinite when the series diverges.
    pub series_majorant: f64,
    pub out_of_guarantee: bool,
    pub ok: bool,
}

/// Quadrature of `∫_{|u| ≥ λ₀}|u|^{p+ε}` together with the two majorants of
/// the shell argument.
pub fn higher_norm(u: &Field, params: &HoleFillingParams, report: &HoleFillingReport, eps: f64) -> Result<HigherNorm> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let p = params.p;
    let l0 = params.lambda0;
    let s = report.s;
    let norms = u.norms();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let value = integrate(u, p + eps, |i| norms[i] >= l0);
    let total = integrate(u, p, |_| true);
    let mut shell_majorant = 0.0;
    let mut r = 0i32;
    loop {
        let lo = l0 * s.powi(r);
        if lo > top {
            break;
        }
        let hi = lo * s;
        shell_majorant += hi.powf(eps) * integrate(u, p, |i| norms[i] >= lo && norms[i] <= hi);
        r += 1;
    }
    let q = report.decay * s.powf(eps);
    let series_majorant = if q < 1.0 { (l0 * s).powf(eps) * total / (1.0 - q) } else { f64::INFINITY };
    let tol = 1.0 + DECAY_TOL;
    Ok(HigherNorm {
        eps,
        value,
        shell_majorant,
        series_majorant,
        out_of_guarantee: eps >= report.eps0,
        ok: value.is_finite() && value <= shell_majorant * tol && value <= series_majorant * tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbedRow {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// The absorbed form `∫_{|u| ≥ Sλ}|u|^p ≤ 2C/(2C+1) ∫_{|u| ≥ λ}|u|^p` at each level.
pub fn check_absorbed(u: &Field, report: &HoleFillingReport, lambdas: &[f64]) -> Vec<AbsorbedRow> {
    let p = report.params.p;
    let norms = u.norms();
    lambdas
        .iter()
        .map(|&lambda| {
            let lhs = integrate(u, p, |i| norms[i] >= report.s * lambda);
            let rhs = report.decay * integrate(u, p, |i| norms[i] >= lambda);
            AbsorbedRow { lambda, lhs, rhs, holds: lhs <= rhs * (1.0 + DECAY_TOL) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TorusGrid;
    use crate::samples::plateau;
    use proptest::prelude::*;

    fn two_plateau() -> Field {
        plateau(TorusGrid::new(2, 10).unwrap(), 1.0, 4.0, 1, 10)
    }

    #[test]
    fn constants() {
        let rep = derive_constants(&HoleFillingParams::new(2.0, 2.0, 2.0, 1.0).unwrap()).unwrap();
        assert_eq!(rep.s, 4.0);
        assert!((rep.decay - 0.8).abs() < 1e-15);
        assert!((rep.eps0 - 1.25f64.ln() / (2.0 * 4f64.ln())).abs() < 1e-15);
        let rep = derive_constants(&HoleFillingParams::new(2.0, 0.5, 3.0, 1.0).unwrap()).unwrap();
        assert_eq!((rep.s, rep.decay), (3.0, 0.5));
        assert!((rep.eps0 - 2f64.ln() / (2.0 * 3f64.ln())).abs() < 1e-15);
        assert!(matches!(
            derive_constants(&HoleFillingParams::new(2.0, 0.25, 1.0, 1.0).unwrap()),
            Err(Error::DegenerateStep(_))
        ));
        assert!(HoleFillingParams::new(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn reverse_fit_examples() {
        let u = two_plateau();
        let fit = fit_reverse_estimate(&u, 2.0, 2.0, &[1.5]).unwrap();
        assert!((fit.rows[0].lhs - 1.6).abs() < 1e-12);
        assert!((fit.rows[0].divisor - 0.6).abs() < 1e-12);
        assert!((fit.c_fit - 8.0 / 3.0).abs() < 1e-12);
        let one = Field::constant(TorusGrid::new(2, 4).unwrap(), &[1.0]);
        let fit = fit_reverse_estimate(&one, 2.0, 2.0, &[0.9]).unwrap();
        assert_eq!(fit.rows[0].ratio, 0.0);
        let zero = Field::zeros(TorusGrid::new(2, 4).unwrap(), 1);
        assert!(matches!(fit_reverse_estimate(&zero, 2.0, 2.0, &[1.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn engineered_layers_decay() {
        // Layers with |u| = S^r λ0 on mass decay^r / (S^r λ0)^p.
        let (p, c, s, l0) = (2.0, 2.0, 4.0, 1.0);
        let decay = 2.0 * c / (2.0 * c + 1.0);
        let g = TorusGrid::new(2, 64).unwrap();
        let cell = g.cell_measure();
        let mut vals = vec![0.0; g.len()];
        let mut at = 0;
        for r in 0..4 {
            let lvl: f64 = l0 * f64::powi(s, r);
            let cells = ((f64::powi(decay, r) / lvl.powf(p)) / cell * 0.2).round() as usize;
            for v in vals.iter_mut().skip(at).take(cells) {
                *v = lvl;
            }
            at += cells;
        }
        let u = Field::new(g, 1, vals).unwrap();
        let params = HoleFillingParams::new(p, c, 2.0, l0).unwrap();
        let rep = verify_decay(&u, &params, &derive_constants(&params).unwrap());
        assert!(rep.pass);
        for row in rep.shell_table.iter().skip(1) {
            if let Some(q) = row.ratio_prev {
                assert!(q <= decay, "{q}");
            }
        }
    }

    #[test]
    fn huge_plateau_fails() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = plateau(g, 0.0, 100.0, 1, 2);
        let params = HoleFillingParams::new(2.0, 2.0, 2.0, 1.0).unwrap();
        let rep = verify_decay(&u, &params, &derive_constants(&params).unwrap());
        assert!(!rep.pass);
        assert_eq!(rep.violating_shell, Some(3));
    }

    #[test]
    fn bounded_field_has_empty_shells() {
        let u = Field::constant(TorusGrid::new(2, 4).unwrap(), &[0.5]);
        let params = HoleFillingParams::new(2.0, 2.0, 2.0, 1.0).unwrap();
        let rep = verify_decay(&u, &params, &derive_constants(&params).unwrap());
        assert!(rep.pass && rep.shell_table.is_empty());
        let h = higher_norm(&u, &params, &rep, 0.01).unwrap();
        assert_eq!(h.value, 0.0);
    }

    #[test]
    fn higher_norm_matches_cell_sum() {
        let u = two_plateau();
        let params = HoleFillingParams::new(2.0, 8.0 / 3.0, 2.0, 1.5).unwrap();
        let rep = verify_decay(&u, &params, &derive_constants(&params).unwrap());
        let eps = rep.eps0 / 2.0;
        let h = higher_norm(&u, &params, &rep, eps).unwrap();
        let brute: f64 = (0..u.grid.len())
            .map(|i| u.at(i)[0].abs())
            .filter(|&a| a >= 1.5)
            .map(|a| a.powf(2.0 + eps))
            .sum::<f64>()
            / u.grid.len() as f64;
        assert!((h.value - brute).abs() <= 1e-12 * brute);
        assert!(h.ok && !h.out_of_guarantee);
        let h0 = higher_norm(&u, &params, &rep, 1e-6).unwrap();
        let base = integrate(&u, 2.0, |i| u.norm_at(i) >= 1.5);
        assert!((h0.value - base).abs() <= 1e-5 * base);
    }

    #[test]
    fn calibration_makes_ladder_consistent() {
        let g = TorusGrid::new(2, 32).unwrap();
        let u = crate::samples::random_smooth(g, 2, 11, 4);
        let top = u.linf();
        let grid = geometric_grid(top / 64.0, 1.25, 30);
        let cal = calibrate(&u, 2.0, 2.0, &grid).unwrap();
        assert!(cal.params.c >= cal.fit.c_fit);
        assert!(cal.ladder.iter().all(|r| r.ratio <= cal.params.c));
        let rep = derive_constants(&cal.params).unwrap();
        let rep = verify_decay(&u, &cal.params, &rep);
        assert!(rep.pass);
        let ladder: Vec<f64> = cal.ladder.iter().map(|r| r.lambda).collect();
        assert!(check_absorbed(&u, &rep, &ladder).iter().all(|r| r.holds));
    }

    proptest! {
        #[test]
        fn monotone_constants(c in 0.6f64..10.0, dc in 0.01f64..5.0, r in 1.0f64..4.0, p in 1.05f64..4.0) {
            let a = derive_constants(&HoleFillingParams::new(p, c, r, 1.0).unwrap()).unwrap();
            let b = derive_constants(&HoleFillingParams::new(p, c + dc, r, 1.0).unwrap()).unwrap();
            let d = derive_constants(&HoleFillingParams::new(p, c, r + 1.0, 1.0).unwrap()).unwrap();
            prop_assert!(b.eps0 <= a.eps0 && b.decay > a.decay && d.eps0 <= a.eps0);
            prop_assert!(a.s >= r && a.decay > 0.0 && a.decay < 1.0 && a.eps0 > 0.0);
            if r <= (2.0 * c).powf(1.0 / (p - 1.0)) {
                prop_assert!((a.s.powf(p - 1.0) - 2.0 * c).abs() <= 1e-9 * 2.0 * c);
            }
        }

        #[test]
        fn scale_covariance(seed in 0u64..1000, t in 0.1f64..10.0) {
            let g = TorusGrid::new(2, 8).unwrap();
            let u = crate::samples::random_smooth(g, 1, seed, 3);
            let grid = geometric_grid(u.linf() / 16.0, 1.3, 10);
            let a = fit_reverse_estimate(&u, 2.0, 2.0, &grid).unwrap();
            let tu = u.scaled(t);
            let tg: Vec<f64> = grid.iter().map(|l| l * t).collect();
            let b = fit_reverse_estimate(&tu, 2.0, 2.0, &tg).unwrap();
            prop_assert!((a.c_fit - b.c_fit).abs() <= 1e-9 * (1.0 + a.c_fit));
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                prop_assert!((rb.lhs - t * t * ra.lhs).abs() <= 1e-9 * (1.0 + rb.lhs));
            }
        }
    }
}
