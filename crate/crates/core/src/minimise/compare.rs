use serde::{Deserialize, Serialize};

use super::{evaluate_i, Integrand};
use crate::error::{Error, Result};
use crate::field::{integrate, Field};
use crate::holefill::{reverse_row, FitRow};
use crate::maximal::{maximal, MaximalField};
use crate::truncation::{lipschitz_truncate_with, PotentialKind, TruncationResult, TruncationStatus};

/// Relative tolerance for the energy comparisons.
pub const ENERGY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub lambda: f64,
    pub status: TruncationStatus,
    /// `ũ` has the mean of `u`, so it competes with `u`.
    pub admissible: bool,
    /// Measured `‖ũ‖_∞ / λ`, used as `C(A)`.
    pub c_a: f64,
    /// Measure of `E = {Mu ≥ λ} ∪ {u ≠ ũ}`.
    pub measure_e: f64,
    pub i_u: f64,
    pub i_trunc: f64,
    /// `I(ũ) - I(u)`.
    pub energy_gap: f64,
    pub minimal_holds: bool,
    /// `-∫_E |u|^p + |E| (C^p λ^p ν + c)`.
    pub gap_bound: f64,
    pub gap_bound_holds: bool,
    pub upper_lhs: f64,
    pub upper_rhs: f64,
    pub upper_holds: bool,
    /// `c^{1/p} / (C ν^{1/p})` with the measured `C`.
    pub lambda0: f64,
    pub above_lambda0: bool,
    /// `∫_{|u| ≥ λ} |u|^p` against `2 λ^p ν C^p |E|`.
    pub level_lhs: f64,
    pub level_rhs: f64,
    pub level_holds: bool,
    /// Measured weak-type quotient `λ |{Mu ≥ λ}| / ∫_{|u| ≥ λ/2} |u|`.
    pub weak_type_ratio: f64,
    /// Reverse-estimate quotient at this level with `R = 2`.
    pub reverse_estimate: FitRow,
}

fn tol_for(i_u: f64) -> f64 {
    ENERGY_TOL * (1.0 + i_u.abs())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

struct Common {
    trunc: TruncationResult,
    e_mask: Vec<bool>,
    measure_e: f64,
    c_a: f64,
    up_e: f64,
    level_lhs: f64,
    mass_lambda: f64,
    weak_type_ratio: f64,
    reverse_estimate: FitRow,
}

fn common(f: &dyn Integrand, u: &Field, mu: &MaximalField, lambda: f64, kind: PotentialKind) -> Result<Common> {
    let p = f.spec().p;
    let trunc = lipschitz_truncate_with(u, mu, lambda, kind)?;
    let norms = u.norms();
    let cell = u.grid.cell_measure();
    let e_mask: Vec<bool> = (0..u.grid.len()).map(|i| mu.values[i] >= lambda || trunc.bad_set[i]).collect();
    let measure_e = e_mask.iter().filter(|b| **b).count() as f64 * cell;
    let up_e = integrate(u, p, |i| e_mask[i]);
    let level_lhs = integrate(u, p, |i| norms[i] >= lambda);
    let mass_lambda = integrate(u, 1.0, |i| norms[i] >= lambda);
    let half_mass = integrate(u, 1.0, |i| norms[i] >= lambda / 2.0);
    let weak_type_ratio = if half_mass > 0.0 { lambda * mu.superlevel_measure(lambda) / half_mass } else { 0.0 };
    let reverse_estimate = reverse_row(&norms, cell, p, 2.0, lambda);
    Ok(Common {
        c_a: trunc.linf_ratio,
        trunc,
        e_mask,
        measure_e,
        up_e,
        level_lhs,
        mass_lambda,
        weak_type_ratio,
        reverse_estimate,
    })
}

/// Truncates a minimiser at `lambda` and evaluates both sides of the
/// minimality and truncation estimates.
pub fn compare_truncation(f: &dyn Integrand, u: &Field, lambda: f64, kind: PotentialKind) -> Result<CompareRow> {
    compare_truncation_with(f, u, &maximal(u), lambda, kind)
}

pub fn compare_truncation_with(
    f: &dyn Integrand,
    u: &Field,
    mu: &MaximalField,
    lambda: f64,
    kind: PotentialKind,
) -> Result<CompareRow> {
    let spec = f.spec();
    let p = spec.p;
    let cm = common(f, u, mu, lambda, kind)?;
    let ut = cm.trunc.field();
    let mean_u = u.mean();
    let mean_t = ut.mean();
    let admissible = mean_u
        .iter()
        .zip(&mean_t)
        .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    let i_u = evaluate_i(f, u)?;
    let i_trunc = evaluate_i(f, ut)?;
    let gap = i_trunc - i_u;
    let tol = tol_for(i_u);
    if admissible && gap < -tol {
        return Err(Error::NotAMinimiser { deficit: -gap });
    }
    let cp = cm.c_a.powf(p);
    let top = cp * lambda.powf(p) * spec.nu;
    let gap_bound = -cm.up_e + cm.measure_e * (top + spec.c);
    let upper_rhs = (top + spec.c) * cm.measure_e;
    let lambda0 = if spec.c == 0.0 {
        0.0
    } else if cm.c_a > 0.0 {
        spec.c.powf(1.0 / p) / (cm.c_a * spec.nu.powf(1.0 / p))
    } else {
        f64::INFINITY
    };
    let level_rhs = 2.0 * top * cm.measure_e;
    Ok(CompareRow {
        lambda,
        status: cm.trunc.status,
        admissible,
        c_a: cm.c_a,
        measure_e: cm.measure_e,
        i_u,
        i_trunc,
        energy_gap: gap,
        minimal_holds: !admissible || gap >= -tol,
        gap_bound,
        gap_bound_holds: gap <= gap_bound + tol,
        upper_lhs: cm.up_e,
        upper_rhs,
        upper_holds: cm.up_e <= upper_rhs + tol,
        lambda0,
        above_lambda0: lambda > lambda0,
        level_lhs: cm.level_lhs,
        level_rhs,
        level_holds: cm.level_lhs <= level_rhs + tol,
        weak_type_ratio: cm.weak_type_ratio,
        reverse_estimate: cm.reverse_estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Minimality holds on every admissible row.
    pub minimal_all: bool,
    /// The truncation bound holds on every admissible row above its `λ₀`.
    pub upper_above_lambda0: bool,
    pub level_above_lambda0: bool,
    pub pass: bool,
}

/// [`compare_truncation`] over a list of levels.
pub fn compare_sweep(f: &dyn Integrand, u: &Field, lambdas: &[f64], kind: PotentialKind) -> Result<CompareReport> {
    let mu = maximal(u);
    let rows = lambdas
        .iter()
        .map(|&l| compare_truncation_with(f, u, &mu, l, kind))
        .collect::<Result<Vec<_>>>()?;
    let minimal_all = rows.iter().all(|r| r.minimal_holds);
    let counted = || rows.iter().filter(|r| r.admissible && r.above_lambda0);
    let upper_above_lambda0 = counted().all(|r| r.upper_holds && r.gap_bound_holds);
    let level_above_lambda0 = counted().all(|r| r.level_holds);
    Ok(CompareReport {
        pass: minimal_all && upper_above_lambda0 && level_above_lambda0,
        rows,
        minimal_all,
        upper_above_lambda0,
        level_above_lambda0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCompareRow {
    pub lambda: f64,
    pub status: TruncationStatus,
    pub c_a: f64,
    pub measure_e: f64,
    /// `|u₀ - ∫ũ|`.
    pub shift: f64,
    /// `∫ |u - ũ|`, which bounds the shift.
    pub l1_change: f64,
    pub i_u: f64,
    pub i_trunc: f64,
    pub i_bar: f64,
    /// `I(ū) - I(u) ≥ 0`.
    pub mean_gap: f64,
    pub mean_gap_holds: bool,
    /// `I(ū) - I(ũ)`.
    pub shift_lhs: f64,
    /// `L ∫(1 + |ū|^{p-1} + |ũ|^{p-1}) · |shift|`.
    pub shift_majorant: f64,
    /// `(1 + λ^{p-1}) ∫_{|u| ≥ λ} |u|`.
    pub shift_scale: f64,
    /// `max(shift_lhs, 0) / shift_scale`: the measured constant.
    pub shift_constant: f64,
    pub shift_holds: bool,
    /// `Π(u₀) - Π(∫ũ)`.
    pub pi_mean_gap: f64,
    /// `∫_{u ≠ ũ} Π(u) - Π(ũ)`.
    pub pi_local_gap: f64,
    pub pi_residual: f64,
    pub pi_chain_lhs: f64,
    pub pi_chain_mid: f64,
    pub pi_chain_rhs: f64,
    pub pi_chain_holds: bool,
    pub reverse_estimate: FitRow,
}

/// Mean-constrained comparison: `ū = ũ + (u₀ - ∫ũ)` competes with `u`.
pub fn compare_truncation_mean(
    f: &dyn Integrand,
    u: &Field,
    u0: &[f64],
    lambda: f64,
    kind: PotentialKind,
) -> Result<MeanCompareRow> {
    compare_truncation_mean_with(f, u, &maximal(u), u0, lambda, kind)
}

pub fn compare_truncation_mean_with(
    f: &dyn Integrand,
    u: &Field,
    mu: &MaximalField,
    u0: &[f64],
    lambda: f64,
    kind: PotentialKind,
) -> Result<MeanCompareRow> {
    if u0.len() != u.channels {
        return Err(Error::InvalidInput("mean constraint has the wrong length".into()));
    }
    let spec = f.spec();
    let p = spec.p;
    let cm = common(f, u, mu, lambda, kind)?;
    let ut = cm.trunc.field();
    let mean_t = ut.mean();
    let shift_v: Vec<f64> = u0.iter().zip(&mean_t).map(|(a, b)| a - b).collect();
    let shift = norm(&shift_v);
    let mut ubar = ut.clone();
    ubar.add_constant(&shift_v);
    let cell = u.grid.cell_measure();
    let l1_change = (0..u.grid.len())
        .map(|i| norm(&u.at(i).iter().zip(ut.at(i)).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .sum::<f64>()
        * cell;
    let i_u = evaluate_i(f, u)?;
    let i_trunc = evaluate_i(f, ut)?;
    let i_bar = evaluate_i(f, &ubar)?;
    let tol = tol_for(i_u);
    let mean_gap = i_bar - i_u;
    if mean_gap < -tol {
        return Err(Error::NotAMinimiser { deficit: -mean_gap });
    }
    let weight: f64 = (0..u.grid.len())
        .map(|i| 1.0 + norm(ubar.at(i)).powf(p - 1.0) + norm(ut.at(i)).powf(p - 1.0))
        .sum::<f64>()
        * cell;
    let shift_lhs = i_bar - i_trunc;
    let shift_majorant = spec.l * weight * shift;
    let shift_scale = (1.0 + lambda.powf(p - 1.0)) * cm.mass_lambda;
    let shift_constant = if shift_scale > 0.0 { shift_lhs.max(0.0) / shift_scale } else { 0.0 };

    let (pi_mean_gap, pi_local_gap, pi_chain_lhs, pi_chain_mid, pi_chain_rhs) = match &spec.pi {
        Some(pi) => {
            let mean_gap = pi.eval(u0) - pi.eval(&mean_t);
            let mut local = 0.0;
            let mut on_e_u = 0.0;
            let mut on_e_t = 0.0;
            for i in 0..u.grid.len() {
                let (a, b) = (pi.eval(u.at(i)), pi.eval(ut.at(i)));
                if u.at(i) != ut.at(i) {
                    local += a - b;
                }
                if cm.e_mask[i] {
                    on_e_u += a;
                    on_e_t += b;
                }
            }
            let (local, on_e_u, on_e_t) = (local * cell, on_e_u * cell, on_e_t * cell);
            let alpha = spec.alpha;
            let rhs = cm.measure_e * (cm.c_a * lambda).powf(p) + (1.0 + norm(u0).powf(p - 1.0)) * cm.mass_lambda;
            (mean_gap, local, alpha * on_e_u, alpha * (on_e_t + mean_gap), alpha * rhs)
        }
        None => (0.0, 0.0, 0.0, 0.0, 0.0),
    };
    let pi_residual = (pi_mean_gap - pi_local_gap).abs();
    Ok(MeanCompareRow {
        lambda,
        status: cm.trunc.status,
        c_a: cm.c_a,
        measure_e: cm.measure_e,
        shift,
        l1_change,
        i_u,
        i_trunc,
        i_bar,
        mean_gap,
        mean_gap_holds: mean_gap >= -tol,
        shift_lhs,
        shift_majorant,
        shift_scale,
        shift_constant,
        shift_holds: shift_lhs <= shift_majorant + tol && shift <= l1_change + 1e-12 * (1.0 + shift),
        pi_mean_gap,
        pi_local_gap,
        pi_residual,
        pi_chain_lhs,
        pi_chain_mid,
        pi_chain_rhs,
        pi_chain_holds: pi_chain_lhs <= pi_chain_mid + tol && pi_chain_mid <= pi_chain_rhs + tol,
        reverse_estimate: cm.reverse_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::from_name;
    use crate::constraint::random_test_field;
    use crate::field::TorusGrid;
    use crate::minimise::{minimise, BlockPattern, Budget, Heterogeneous, PowerLaw, Quasiconformal};

    #[test]
    fn constant_minimiser_untouched() {
        let g = TorusGrid::new(2, 8).unwrap();
        let u = Field::constant(g, &[1.0, 0.0]);
        let f = PowerLaw { p: 2.0, m: 2 };
        let row = compare_truncation(&f, &u, 2.0, PotentialKind::Stream2d).unwrap();
        assert_eq!(row.status, TruncationStatus::Untouched);
        assert_eq!(row.energy_gap, 0.0);
        assert!(row.minimal_holds && row.upper_holds);
        let m = compare_truncation_mean(&f, &u, &[1.0, 0.0], 2.0, PotentialKind::Stream2d).unwrap();
        assert_eq!((m.shift, m.mean_gap, m.shift_lhs), (0.0, 0.0, 0.0));
    }

    #[test]
    fn non_minimiser_detected() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("div2@box").unwrap();
        let mut u = random_test_field(&op, g, 2, 3).unwrap().scaled(3.0);
        u.add_constant(&[0.2, 0.0]);
        let f = PowerLaw { p: 2.0, m: 2 };
        let lam = 0.3 * u.linf();
        assert!(matches!(compare_truncation(&f, &u, lam, PotentialKind::Stream2d), Err(Error::NotAMinimiser { .. })));
    }

    #[test]
    fn heterogeneous_sweep_and_paths_agree() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("div2@box").unwrap();
        let f = Heterogeneous::new(2.0, 2, BlockPattern::checker(2, 4, 1.0, 4.0), None).unwrap();
        let budget = Budget { tol: 1e-11, max_iters: 20000, ..Budget::default() };
        let run = minimise(&f, &op, Some(&[1.0, 0.0]), &Field::constant(g, &[1.0, 0.0]), &budget).unwrap();
        assert!(run.converged);
        let u = run.field();
        let top = maximal(u).max();
        let lambdas: Vec<f64> = (0..8).map(|j| 0.2 * (1.2 * top / 0.2f64).powf(j as f64 / 7.0)).collect();
        let rep = compare_sweep(&f, u, &lambdas, PotentialKind::Stream2d).unwrap();
        assert!(rep.pass, "{:?}", rep.rows.iter().map(|r| (r.minimal_holds, r.upper_holds, r.energy_gap)).collect::<Vec<_>>());
        for (row, &l) in rep.rows.iter().zip(&lambdas) {
            let m = compare_truncation_mean(&f, u, &[1.0, 0.0], l, PotentialKind::Stream2d).unwrap();
            assert_eq!(m.reverse_estimate, row.reverse_estimate);
            assert!(m.mean_gap_holds && m.shift_holds);
        }
    }

    #[test]
    fn quasiconformal_pi_identity_on_rough_fields() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("curl2:2@box").unwrap();
        let f = Quasiconformal { n: 2, k: 2.0 };
        let u0 = [0.8, -0.6, 0.6, 0.8];
        // Not a minimiser, but the mean-value identity holds for any box gradient.
        let mut u = random_test_field(&op, g, 4, 3).unwrap().scaled(0.2);
        u.add_constant(&u0);
        let proj = crate::constraint::KernelProjector::new(&op, g).unwrap();
        let u = proj.project(&u).unwrap();
        let mu = maximal(&u);
        let lam = 0.8 * mu.max();
        let cm = common(&f, &u, &mu, lam, PotentialKind::Gradient).unwrap();
        let ut = cm.trunc.field();
        let pi = f.spec().pi.unwrap();
        let lhs = pi.eval(&u0) - pi.eval(&ut.mean());
        let rhs: f64 = (0..g.len()).map(|i| pi.eval(u.at(i)) - pi.eval(ut.at(i))).sum::<f64>() * g.cell_measure();
        assert!((lhs - rhs).abs() <= 1e-10, "{lhs} {rhs}");
    }
}
