//! Lipschitz truncation of curl-free and planar divergence-free fields.
//!
//! A curl-free field is written as `u = ū + Dψ` with `D` the box gradient of
//! a periodic vertex potential `ψ` (a 2D divergence-free field is rotated by a
//! quarter turn first). On the good set `G = {Mu < λ}` the lifted potential
//! `ū·x + ψ` is kept, and it is re-extended off `G` as the midpoint of the
//! lower and upper McShane envelopes with slope `L = c_L λ`. The box gradient
//! of the result is the truncated field `ũ`; it is `L`-bounded per component
//! and has the same mean as `u`.
//!
//! To make the discrete curl of `ũ` vanish exactly in floating point, the new
//! potential and the mean are rounded to a dyadic lattice fine enough that
//! every stencil sum is exact. This needs `N` to be a power of two.

use serde::{Deserialize, Serialize};

use crate::constraint::{axis_symbols, box_diff, curl, div, project_kernel, residual_norm, DifferentialOperator, Scheme};
use crate::error::{Error, Result};
use crate::fft::{frequency, touches_nyquist, FftNd};
use crate::field::{Field, TorusGrid};
use crate::maximal::{maximal, MaximalField};
use crate::par;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    /// Curl-free fields, row-wise for matrix-valued fields.
    Gradient,
    /// Divergence-free vector fields in two dimensions.
    Stream2d,
}

impl std::str::FromStr for PotentialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "stream2d" => Ok(Self::Stream2d),
            _ => Err(Error::InvalidInput(format!("unknown kind '{s}'"))),
        }
    }
}

/// Lipschitz constant factor `c_L = 2^n n`.
pub fn lipschitz_factor(n: usize) -> f64 {
    (1u64 << n) as f64 * n as f64
}

fn rows_of(u: &Field, kind: PotentialKind) -> Result<usize> {
    let n = u.grid.dim;
    match kind {
        PotentialKind::Stream2d => {
            if n != 2 || u.channels != 2 {
                return Err(Error::IncompatibleOperator(
                    "stream functions need a 2-channel field on a 2D grid".into(),
                ));
            }
            Ok(1)
        }
        PotentialKind::Gradient => {
            if !u.channels.is_multiple_of(n) {
                return Err(Error::IncompatibleOperator(format!(
                    "{} channels cannot be split into rows of length {n}",
                    u.channels
                )));
            }
            Ok(u.channels / n)
        }
    }
}

/// The constraint whose kernel `kind` describes, or `None` in one dimension
/// (where every field is a gradient up to its mean).
pub fn kernel_operator(kind: PotentialKind, n: usize, rows: usize, scheme: Scheme) -> Option<DifferentialOperator> {
    match kind {
        PotentialKind::Stream2d => Some(div(2, 1).with_scheme(scheme)),
        PotentialKind::Gradient if n >= 2 => Some(curl(n, rows).with_scheme(scheme)),
        PotentialKind::Gradient => None,
    }
}

/// Maximum bound `c_L √(n · rows)` on `‖ũ‖_∞ / λ`.
pub fn linf_budget(n: usize, rows: usize) -> f64 {
    lipschitz_factor(n) * ((n * rows) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Potential {
    /// One potential per row. For the box scheme values sit on vertices
    /// `i / N`; for the spectral scheme they are sampled like `u`.
    pub values: Field,
    pub mean: Vec<f64>,
}

fn rotate(u: &Field) -> Field {
    let mut w = u.clone();
    for i in 0..u.grid.len() {
        let c = u.at(i);
        let (a, b) = (c[0], c[1]);
        w.at_mut(i).copy_from_slice(&[b, -a]);
    }
    w
}

fn rotate_back(w: &Field) -> Field {
    let mut u = w.clone();
    for i in 0..w.grid.len() {
        let c = w.at(i);
        let (a, b) = (c[0], c[1]);
        u.at_mut(i).copy_from_slice(&[-b, a]);
    }
    u
}

/// Scalar potential of the zero-mean gradient components `comps[j]`.
fn potential_from(grid: TorusGrid, comps: &[Vec<f64>], scheme: Scheme) -> Vec<f64> {
    let fft = FftNd::new(grid);
    let spectra: Vec<Vec<Complex64>> = comps.iter().map(|c| fft.forward_scalar(c)).collect();
    let out = par::map_range(grid.len(), |idx| {
        if idx == 0 || (scheme == Scheme::Spectral && touches_nyquist(&grid, idx)) {
            return Complex64::default();
        }
        let g = axis_symbols(scheme, &frequency(&grid, idx), grid.resolution);
        let norm2: f64 = g.iter().map(|s| s.norm_sqr()).sum();
        if norm2 <= 1e-20 {
            return Complex64::default();
        }
        let mut acc = Complex64::default();
        for (j, s) in g.iter().enumerate() {
            acc += s.conj() * spectra[j][idx];
        }
        acc / norm2
    });
    fft.inverse_scalar(out)
}

/// Recovers the potential of a curl-free (or, rotated, 2D div-free) field.
///
/// Fields with nonzero mean are accepted only with `subtract_mean`; the mean
/// is returned alongside the potential.
pub fn recover_potential(u: &Field, kind: PotentialKind, scheme: Scheme, subtract_mean: bool) -> Result<Potential> {
    let rows = rows_of(u, kind)?;
    let n = u.grid.dim;
    if let Some(op) = kernel_operator(kind, n, rows, scheme) {
        let residual = residual_norm(&op, u)?;
        if residual > 1e-8 {
            return Err(Error::NotInKernel { residual });
        }
    }
    let w = match kind {
        PotentialKind::Stream2d => rotate(u),
        PotentialKind::Gradient => u.clone(),
    };
    let mean = w.mean();
    let mag = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !subtract_mean && mag > 1e-12 * (1.0 + u.linf()) {
        return Err(Error::MeanMismatch { mean: mag });
    }
    let mut pots = Vec::with_capacity(rows);
    for r in 0..rows {
        let comps: Vec<Vec<f64>> = (0..n)
            .map(|j| w.channel(r * n + j).into_iter().map(|v| v - mean[r * n + j]).collect())
            .collect();
        pots.push(potential_from(u.grid, &comps, scheme));
    }
    let mean = match kind {
        PotentialKind::Stream2d => u.mean(),
        PotentialKind::Gradient => mean,
    };
    Ok(Potential { values: Field::from_channels(u.grid, &pots), mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationStatus {
    /// `Mu < λ` everywhere: `ũ = u`.
    Untouched,
    Truncated,
    /// No good cells, or the mean alone exceeds the slope budget: `ũ` is constant.
    Trivial,
    NaiveCut,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationResult {
    #[serde(skip)]
    pub truncated: Option<Field>,
    pub lambda: f64,
    #[serde(skip)]
    pub bad_set: Vec<bool>,
    pub bad_cells: usize,
    pub bad_measure: f64,
    pub linf_ratio: f64,
    /// `‖Aũ‖_2 / ‖ũ‖_2` for the discrete constraint.
    pub residual: f64,
    /// `max |Aũ|`.
    pub max_abs_residual: f64,
    pub inclusion_violations: usize,
    pub budget: f64,
    pub status: TruncationStatus,
}

impl TruncationResult {
    pub fn field(&self) -> &Field {
        self.truncated.as_ref().expect("truncated field present")
    }
}

/// Offsets sorted by Euclidean length up to `radius` cells.
fn sorted_offsets(n: usize, radius: f64) -> Vec<(Vec<i64>, f64)> {
    let r = radius.ceil() as i64;
    let side = (2 * r + 1) as usize;
    let mut out = Vec::new();
    for pos in 0..side.pow(n as u32) {
        let mut rem = pos;
        let mut d = vec![0i64; n];
        for a in (0..n).rev() {
            d[a] = (rem % side) as i64 - r;
            rem /= side;
        }
        let len = (d.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
        if len <= radius {
            out.push((d, len));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

const MAX_OFFSETS: usize = 40_000_000;

/// Midpoint of the lower and upper McShane envelopes of the lifted
/// potential `ū·x + ψ` restricted to `mask`, with `ū·x` removed again.
fn mcshane_midpoint(grid: TorusGrid, psi: &[f64], mask: &[bool], mean: &[f64], slope: f64) -> Result<Vec<f64>> {
    let n = grid.dim;
    let h = grid.spacing();
    let mbar = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gap = slope - mbar;
    let (mut pmax, mut pmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for (v, &m) in psi.iter().zip(mask) {
        if m {
            pmax = pmax.max(*v);
            pmin = pmin.min(*v);
        }
    }
    let d0 = grid.resolution as f64 * (n as f64).sqrt() / 2.0;
    let radius = ((pmax - pmin) / h + (slope + mbar) * d0) / gap + 1.0;
    let estimate = (2.0 * radius + 1.0).powi(n as i32);
    if estimate > MAX_OFFSETS as f64 {
        return Err(Error::DegenerateInput(format!(
            "mean {mbar:.3e} too close to the slope budget {slope:.3e} for an envelope search"
        )));
    }
    let offsets = sorted_offsets(n, radius);
    let nn = grid.resolution as i64;
    Ok(par::map_range(grid.len(), |x| {
        let c = grid.coords(x);
        let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut lo_done, mut up_done) = (false, false);
        for (d, len) in &offsets {
            let rho = len * h;
            if !lo_done && pmax - gap * rho < lower {
                lo_done = true;
            }
            if !up_done && pmin + gap * rho > upper {
                up_done = true;
            }
            if lo_done && up_done {
                break;
            }
            let mut y = 0usize;
            let mut tilt = 0.0;
            for a in 0..n {
                y = y * grid.resolution + (c[a] as i64 + d[a]).rem_euclid(nn) as usize;
                tilt += mean[a] * d[a] as f64;
            }
            if !mask[y] {
                continue;
            }
            let base = psi[y] + tilt * h;
            lower = lower.max(base - slope * rho);
            upper = upper.min(base + slope * rho);
        }
        0.5 * (lower + upper)
    }))
}

/// Rounds `psi` (shifted to be centered) and `mean` onto a dyadic lattice so
/// that box differences of `mean + Dψ` are exact.
fn quantize(grid: TorusGrid, psi: &mut [f64], mean: &mut [f64]) -> f64 {
    let n = grid.dim as i32;
    let (mx, mn) = psi.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    let center = 0.5 * (mx + mn);
    psi.iter_mut().for_each(|v| *v -= center);
    let amax = psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mmax = mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = amax.max(mmax / grid.resolution as f64);
    if scale == 0.0 {
        return 0.0;
    }
    let e = scale.log2().floor() as i32 + 1;
    let q = 2f64.powi(e - (51 - 2 * n));
    psi.iter_mut().for_each(|v| *v = (*v / q).round() * q);
    let unit = q * grid.resolution as f64 / 2f64.powi(n - 1);
    mean.iter_mut().for_each(|v| *v = (*v / unit).round() * unit);
    q
}

fn dilated_bad(grid: TorusGrid, mu: &MaximalField, lambda: f64) -> Vec<bool> {
    let n = grid.dim;
    let stencil: Vec<Vec<i64>> = (0..3usize.pow(n as u32))
        .map(|p| {
            let mut rem = p;
            let mut d = vec![0i64; n];
            for a in (0..n).rev() {
                d[a] = (rem % 3) as i64 - 1;
                rem /= 3;
            }
            d
        })
        .collect();
    par::map_range(grid.len(), |i| stencil.iter().any(|d| mu.values[grid.offset(i, d)] >= lambda))
}

fn finish(
    u: &Field,
    mu: &MaximalField,
    truncated: Field,
    lambda: f64,
    tol: f64,
    op: Option<&DifferentialOperator>,
    budget: f64,
    status: TruncationStatus,
) -> Result<TruncationResult> {
    let grid = u.grid;
    let bad_set: Vec<bool> = (0..grid.len())
        .map(|i| {
            let d: f64 = u.at(i).iter().zip(truncated.at(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.sqrt() > tol
        })
        .collect();
    let allowed = dilated_bad(grid, mu, lambda);
    let inclusion_violations = bad_set.iter().zip(&allowed).filter(|(b, a)| **b && !**a).count();
    let bad_cells = bad_set.iter().filter(|b| **b).count();
    let (residual, max_abs_residual) = match op {
        Some(op) => {
            let au = op.apply(&truncated)?;
            (au.lp_norm(2.0) / (truncated.lp_norm(2.0) + 1e-300), au.values.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        }
        None => (0.0, 0.0),
    };
    Ok(TruncationResult {
        linf_ratio: truncated.linf() / lambda,
        truncated: Some(truncated),
        lambda,
        bad_set,
        bad_cells,
        bad_measure: bad_cells as f64 * grid.cell_measure(),
        residual,
        max_abs_residual,
        inclusion_violations,
        budget,
        status,
    })
}

/// Truncates `u` at level `lambda`.
pub fn lipschitz_truncate(u: &Field, lambda: f64, kind: PotentialKind) -> Result<TruncationResult> {
    lipschitz_truncate_with(u, &maximal(u), lambda, kind)
}

/// As [`lipschitz_truncate`] with a precomputed maximal function.
pub fn lipschitz_truncate_with(u: &Field, mu: &MaximalField, lambda: f64, kind: PotentialKind) -> Result<TruncationResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let grid = u.grid;
    let n = grid.dim;
    let rows = rows_of(u, kind)?;
    let op = kernel_operator(kind, n, rows, Scheme::Box);
    let budget = linf_budget(n, rows);
    let pot = recover_potential(u, kind, Scheme::Box, true)?;
    let w = match kind {
        PotentialKind::Stream2d => rotate(u),
        PotentialKind::Gradient => u.clone(),
    };
    let wmean = w.mean();
    // The potential must reproduce u; checkerboard content is invisible to D.
    let mut recon_err: f64 = 0.0;
    for r in 0..rows {
        let psi = pot.values.channel(r);
        for j in 0..n {
            let d = box_diff(&grid, &psi, j);
            for (i, dv) in d.iter().enumerate() {
                recon_err = recon_err.max((dv + wmean[r * n + j] - w.at(i)[r * n + j]).abs());
            }
        }
    }
    let ulinf = u.linf();
    if recon_err > 1e-8 * (1.0 + ulinf) {
        return Err(Error::NotInKernel { residual: recon_err / (1.0 + ulinf) });
    }
    let base_tol = 1e-12 * ulinf.max(1.0);

    let good: Vec<bool> = mu.values.iter().map(|&m| m < lambda).collect();
    if good.iter().all(|g| *g) {
        return finish(u, mu, u.clone(), lambda, base_tol, op.as_ref(), budget, TruncationStatus::Untouched);
    }
    let slope = lipschitz_factor(n) * lambda * (1.0 - 1e-9);
    let row_mean_norm = |r: usize| (0..n).map(|j| wmean[r * n + j].powi(2)).sum::<f64>().sqrt();
    if good.iter().all(|g| !*g) || (0..rows).any(|r| row_mean_norm(r) >= slope) {
        let mean = u.mean();
        let mag = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = if mag <= slope * ((n * rows) as f64).sqrt() {
            Field::constant(grid, &mean)
        } else {
            Field::zeros(grid, u.channels)
        };
        return finish(u, mu, t, lambda, base_tol, op.as_ref(), budget, TruncationStatus::Trivial);
    }

    // Vertices that are a corner of some good cell.
    let mut vmask = vec![false; grid.len()];
    let corners: Vec<Vec<i64>> = (0..1usize << n)
        .map(|m| (0..n).map(|a| ((m >> (n - 1 - a)) & 1) as i64).collect())
        .collect();
    for (i, g) in good.iter().enumerate() {
        if *g {
            for s in &corners {
                vmask[grid.offset(i, s)] = true;
            }
        }
    }

    let mut out = Field::zeros(grid, u.channels);
    let mut qmax: f64 = 0.0;
    for r in 0..rows {
        let psi = pot.values.channel(r);
        let mut mean_r: Vec<f64> = wmean[r * n..(r + 1) * n].to_vec();
        let mut new_psi = mcshane_midpoint(grid, &psi, &vmask, &mean_r, slope)?;
        let q = quantize(grid, &mut new_psi, &mut mean_r);
        qmax = qmax.max(q);
        for j in 0..n {
            let d = box_diff(&grid, &new_psi, j);
            for (i, dv) in d.iter().enumerate() {
                out.at_mut(i)[r * n + j] = mean_r[j] + dv;
            }
        }
    }
    let out = match kind {
        PotentialKind::Stream2d => rotate_back(&out),
        PotentialKind::Gradient => out,
    };
    let tol = base_tol + 2.0 * qmax * grid.resolution as f64;
    finish(u, mu, out, lambda, tol, op.as_ref(), budget, TruncationStatus::Truncated)
}

/// Negative control: zero `u` where `|u| > λ`, then project onto `ker op`.
pub fn naive_cut_project(u: &Field, op: &DifferentialOperator, lambda: f64) -> Result<TruncationResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let mut cut = u.clone();
    for i in 0..u.grid.len() {
        if u.norm_at(i) > lambda {
            cut.at_mut(i).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let projected = project_kernel(op, &cut)?;
    let mu = maximal(u);
    let tol = 1e-12 * u.linf().max(1.0);
    let budget = f64::INFINITY;
    finish(u, &mu, projected, lambda, tol, Some(op), budget, TruncationStatus::NaiveCut)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpRow {
    pub lambda: f64,
    pub linf_ratio: f64,
    pub inclusion_violations: usize,
    pub residual: f64,
    pub max_abs_residual: f64,
    pub bad_measure: f64,
    pub status: TruncationStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpReport {
    pub rows: Vec<TpRow>,
    pub budget: f64,
    pub max_linf_ratio: f64,
    /// max/min linf_ratio over rows that were actually truncated.
    pub uniformity: f64,
    pub pass: bool,
}

/// Runs [`lipschitz_truncate`] at every level and checks the L∞ budget and the bad-set inclusion.
pub fn verify_tp(u: &Field, lambdas: &[f64], kind: PotentialKind) -> Result<TpReport> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty lambda list".into()));
    }
    let mu = maximal(u);
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut budget = 0.0;
    for &l in lambdas {
        let t = lipschitz_truncate_with(u, &mu, l, kind)?;
        budget = t.budget;
        rows.push(TpRow {
            lambda: l,
            linf_ratio: t.linf_ratio,
            inclusion_violations: t.inclusion_violations,
            residual: t.residual,
            max_abs_residual: t.max_abs_residual,
            bad_measure: t.bad_measure,
            status: t.status,
        });
    }
    let max_linf_ratio = rows.iter().map(|r| r.linf_ratio).fold(0.0, f64::max);
    let active: Vec<f64> = rows
        .iter()
        .filter(|r| r.status == TruncationStatus::Truncated)
        .map(|r| r.linf_ratio)
        .collect();
    let uniformity = if active.is_empty() {
        1.0
    } else {
        active.iter().copied().fold(0.0, f64::max) / active.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let pass = max_linf_ratio <= budget
        && rows.iter().all(|r| r.inclusion_violations == 0 && r.residual <= 1e-8);
    Ok(TpReport { rows, budget, max_linf_ratio, uniformity, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::{box_gradient, box_rot, concentrating_gradient, vertex_potential};
    use std::f64::consts::PI;

    fn g(n: usize) -> TorusGrid {
        TorusGrid::new(2, n).unwrap()
    }

    #[test]
    fn spectral_recovery_of_gradient_and_stream() {
        let grid = g(32);
        let u = Field::from_fn(grid, 2, |x, o| {
            o[0] = 2.0 * PI * (2.0 * PI * x[0]).cos();
            o[1] = 0.0;
        });
        let p = recover_potential(&u, PotentialKind::Gradient, Scheme::Spectral, false).unwrap();
        let expect = Field::from_fn(grid, 1, |x, o| o[0] = (2.0 * PI * x[0]).sin());
        assert!(p.values.l2_distance(&expect) < 1e-10);

        let s = Field::from_fn(grid, 2, |x, o| {
            let (a, b) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
            o[0] = -2.0 * PI * a.sin() * b.cos();
            o[1] = 2.0 * PI * a.cos() * b.sin();
        });
        let p = recover_potential(&s, PotentialKind::Stream2d, Scheme::Spectral, false).unwrap();
        let expect = Field::from_fn(grid, 1, |x, o| o[0] = (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        assert!(p.values.l2_distance(&expect) < 1e-10);

        let z = recover_potential(&Field::zeros(grid, 2), PotentialKind::Gradient, Scheme::Box, false).unwrap();
        assert_eq!(z.values.linf(), 0.0);
        let shifted = Field::constant(grid, &[1.0, 0.0]);
        assert!(matches!(
            recover_potential(&shifted, PotentialKind::Gradient, Scheme::Box, false),
            Err(Error::MeanMismatch { .. })
        ));
        let bad = Field::from_fn(grid, 2, |x, o| {
            o[0] = (2.0 * PI * x[1]).sin();
            o[1] = 0.0;
        });
        assert!(matches!(
            recover_potential(&bad, PotentialKind::Gradient, Scheme::Spectral, false),
            Err(Error::NotInKernel { .. })
        ));
    }

    #[test]
    fn box_recovery_roundtrip() {
        let grid = g(16);
        let v = vertex_potential(grid, |x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos() + 0.3 * (2.0 * PI * x[1]).sin());
        let u = box_gradient(grid, &v);
        let p = recover_potential(&u, PotentialKind::Gradient, Scheme::Box, false).unwrap();
        let mean_v = v.iter().sum::<f64>() / v.len() as f64;
        for (a, b) in p.values.values.iter().zip(&v) {
            assert!((a - (b - mean_v)).abs() < 1e-12);
        }
    }

    #[test]
    fn untouched_above_max() {
        let grid = g(16);
        let u = concentrating_gradient(grid, 0);
        let mu = maximal(&u);
        let t = lipschitz_truncate_with(&u, &mu, mu.max() * 1.01, PotentialKind::Gradient).unwrap();
        assert_eq!(t.status, TruncationStatus::Untouched);
        assert_eq!(t.field(), &u);
        assert_eq!(t.bad_cells, 0);
        let z = lipschitz_truncate(&Field::zeros(grid, 2), 1.0, PotentialKind::Gradient).unwrap();
        assert_eq!(z.field().linf(), 0.0);
    }

    #[test]
    fn single_mode_contract() {
        let grid = g(32);
        let a = 0.5;
        let v = vertex_potential(grid, |x| a * (2.0 * PI * x[0]).sin());
        let u = box_gradient(grid, &v);
        let lam = PI * a;
        let t = lipschitz_truncate(&u, lam, PotentialKind::Gradient).unwrap();
        assert!(t.linf_ratio <= t.budget);
        assert_eq!(t.inclusion_violations, 0);
        assert_eq!(t.max_abs_residual, 0.0);
    }

    #[test]
    fn concentrating_family_contract() {
        let grid = g(32);
        let u = concentrating_gradient(grid, 3);
        let mu = maximal(&u);
        let lams: Vec<f64> = (0..6).map(|k| mu.max() * 0.05 * 1.6f64.powi(k)).collect();
        let rep = verify_tp(&u, &lams, PotentialKind::Gradient).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.rows.iter().all(|r| r.max_abs_residual == 0.0));
        assert!(rep.rows.iter().any(|r| r.status == TruncationStatus::Truncated));
    }

    #[test]
    fn stream_contract_with_mean() {
        let grid = g(32);
        let psi = crate::samples::dipole_potential(grid, &[0.4, 0.6], 0.05, 1.0);
        let mut u = box_rot(grid, &psi);
        u.add_constant(&[0.25, -0.5]);
        let mu = maximal(&u);
        let t = lipschitz_truncate_with(&u, &mu, 0.3 * mu.max(), PotentialKind::Stream2d).unwrap();
        assert_eq!(t.status, TruncationStatus::Truncated);
        assert_eq!(t.max_abs_residual, 0.0);
        assert_eq!(t.inclusion_violations, 0);
        let m = t.field().mean();
        assert!((m[0] - 0.25).abs() < 1e-12 && (m[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn naive_control_basics() {
        let grid = g(16);
        let op = curl(2, 1);
        let u = concentrating_gradient(grid, 0);
        let small = u.scaled(1e-3);
        let t = naive_cut_project(&crate::constraint::project_kernel(&op, &small).unwrap(), &op, 10.0).unwrap();
        assert!(t.residual <= 1e-10);
        let z = naive_cut_project(&Field::zeros(grid, 2), &op, 1.0).unwrap();
        assert_eq!(z.field().linf(), 0.0);
    }
}
