//! Discrete periodic Hardy–Littlewood maximal function.
//!
//! `Mu(x)` is the largest average of `|u|` over the periodic grid balls
//! `{y : dist(x, y) <= r}` for integer radii `r = 0, 1, ..., N/2` measured in
//! cells. Offsets are taken in `(-N/2, N/2]^n`, so each cell is counted once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, TorusGrid};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
    pub radii_max: usize,
}

impl MaximalField {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn as_field(&self) -> Field {
        Field { grid: self.grid, channels: 1, values: self.values.clone() }
    }

    /// Measure of `{Mu >= lambda}`.
    pub fn superlevel_measure(&self, lambda: f64) -> f64 {
        self.values.iter().filter(|&&v| v >= lambda).count() as f64 * self.grid.cell_measure()
    }
}

/// Ball offsets sorted by radius class, with the cumulative count at the
/// end of each class.
struct BallOffsets {
    /// Offsets into the `(2N)^n` tiled array.
    tiled: Vec<usize>,
    /// `ends[r]` = number of offsets with class `<= r`.
    ends: Vec<usize>,
}

fn isqrt_ceil(d2: u64) -> u64 {
    let mut r = (d2 as f64).sqrt() as u64;
    while r * r < d2 {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= d2 {
        r -= 1;
    }
    r
}

fn isqrt_floor(d2: u64) -> u64 {
    let mut r = (d2 as f64).sqrt() as u64;
    while r * r > d2 {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= d2 {
        r += 1;
    }
    r
}

fn ball_offsets(grid: &TorusGrid) -> BallOffsets {
    let nn = grid.resolution as i64;
    let half = nn / 2;
    let rmax = half as u64;
    let side = (2 * nn) as usize;
    let mut list: Vec<(u64, Vec<i64>)> = Vec::new();
    for idx in 0..grid.len() {
        let d: Vec<i64> = grid
            .coords(idx)
            .into_iter()
            .map(|c| if (c as i64) <= half { c as i64 } else { c as i64 - nn })
            .collect();
        let d2: u64 = d.iter().map(|v| (v * v) as u64).sum();
        let class = isqrt_ceil(d2);
        if class <= rmax {
            list.push((class, d));
        }
    }
    list.sort();
    let mut ends = vec![0; rmax as usize + 1];
    for (class, _) in &list {
        ends[*class as usize] += 1;
    }
    for r in 1..ends.len() {
        ends[r] += ends[r - 1];
    }
    let tiled = list
        .iter()
        .map(|(_, d)| d.iter().fold(0usize, |acc, &v| acc * side + (v + half) as usize))
        .collect();
    BallOffsets { tiled, ends }
}

/// `a` tiled onto `(2N)^n` so that `T[x + d + N/2] = a[(x + d) mod N]` for
/// `x in [0,N)^n`, `d in (-N/2, N/2]^n`.
fn tile(grid: &TorusGrid, a: &[f64]) -> Vec<f64> {
    let n = grid.dim;
    let nn = grid.resolution;
    let side = 2 * nn;
    let total = side.pow(n as u32);
    par::map_range(total, |z| {
        let mut rem = z;
        let mut src = 0usize;
        let mut mul = 1usize;
        for _ in 0..n {
            let c = rem % side;
            rem /= side;
            src += ((c + nn - nn / 2) % nn) * mul;
            mul *= nn;
        }
        a[src]
    })
}

fn tiled_base(grid: &TorusGrid, idx: usize) -> usize {
    let side = 2 * grid.resolution;
    grid.coords(idx).into_iter().fold(0, |acc, c| acc * side + c)
}

/// Maximal function of a nonnegative scalar array by direct summation over
/// all balls.
pub fn maximal_direct(grid: TorusGrid, a: &[f64]) -> MaximalField {
    let offs = ball_offsets(&grid);
    let t = tile(&grid, a);
    let values = par::map_range(grid.len(), |idx| {
        let base = tiled_base(&grid, idx);
        let mut sum = 0.0;
        let mut best: f64 = 0.0;
        let mut k = 0;
        for &end in &offs.ends {
            while k < end {
                sum += t[base + offs.tiled[k]];
                k += 1;
            }
            if end > 0 {
                best = best.max(sum / end as f64);
            }
        }
        best
    });
    MaximalField { grid, values, radii_max: grid.resolution / 2 }
}

/// Two-dimensional maximal function with per-radius pruning: a box-sum
/// upper bound from a summed-area table skips radii that cannot beat the
/// running maximum; the remaining balls are summed exactly by rows.
pub fn maximal_pruned_2d(grid: TorusGrid, a: &[f64]) -> MaximalField {
    assert_eq!(grid.dim, 2, "pruned maximal function is two-dimensional");
    let nn = grid.resolution;
    let half = (nn / 2) as i64;
    let side = 2 * nn;
    let t = tile(&grid, a);
    // Row prefix sums and summed-area table on the tiled array.
    let mut row_prefix = vec![0.0; side * (side + 1)];
    for y in 0..side {
        for x in 0..side {
            row_prefix[y * (side + 1) + x + 1] = row_prefix[y * (side + 1) + x] + t[y * side + x];
        }
    }
    let mut sat = vec![0.0; (side + 1) * (side + 1)];
    for y in 0..side {
        for x in 0..side {
            sat[(y + 1) * (side + 1) + x + 1] = t[y * side + x] + sat[y * (side + 1) + x + 1]
                + sat[(y + 1) * (side + 1) + x]
                - sat[y * (side + 1) + x];
        }
    }
    let offs = ball_offsets(&grid);
    let clamp = |lo: i64, hi: i64| (lo.max(-half + 1), hi.min(half));
    let values = par::map_range(grid.len(), |idx| {
        let c = grid.coords(idx);
        let (cy, cx) = (c[0] as i64 + half, c[1] as i64 + half);
        let mut best = a[idx];
        for r in 1..=half {
            let count = offs.ends[r as usize] as f64;
            let (lo, hi) = clamp(-r, r);
            let (y0, y1, x0, x1) = ((cy + lo) as usize, (cy + hi + 1) as usize, (cx + lo) as usize, (cx + hi + 1) as usize);
            let s = side + 1;
            let boxsum = sat[y1 * s + x1] - sat[y0 * s + x1] - sat[y1 * s + x0] + sat[y0 * s + x0];
            if boxsum.max(0.0) * (1.0 + 1e-12) / count <= best {
                continue;
            }
            let mut sum = 0.0;
            for dy in lo..=hi {
                let w = isqrt_floor((r * r - dy * dy) as u64) as i64;
                let (xl, xh) = clamp(-w, w);
                let row = (cy + dy) as usize * s;
                sum += row_prefix[row + (cx + xh + 1) as usize] - row_prefix[row + (cx + xl) as usize];
            }
            best = best.max(sum / count);
        }
        best
    });
    MaximalField { grid, values, radii_max: nn / 2 }
}

/// Maximal function of a nonnegative scalar array on `grid`.
pub fn maximal_scalar(grid: TorusGrid, a: &[f64]) -> MaximalField {
    if grid.dim == 2 && grid.resolution > 64 {
        maximal_pruned_2d(grid, a)
    } else {
        maximal_direct(grid, a)
    }
}

/// `Mu` for the pointwise Euclidean magnitude of `u`.
pub fn maximal(u: &Field) -> MaximalField {
    maximal_scalar(u.grid, &u.norms())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Skipped,
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakTypeRow {
    pub lambda: f64,
    pub measure_mu_set: f64,
    pub integral_half_level: f64,
    pub ratio: f64,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakTypeReport {
    pub rows: Vec<WeakTypeRow>,
    /// Largest finite ratio.
    pub c_fit: f64,
    pub pass: bool,
}

impl WeakTypeReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda", "measure_Mu_set", "integral_half_level", "ratio"])?;
        for r in &self.rows {
            w.write_record([
                r.lambda.to_string(),
                r.measure_mu_set.to_string(),
                r.integral_half_level.to_string(),
                r.ratio.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weak-type ratios `|{Mu >= λ}| λ / ∫_{|u| >= λ/2} |u|` over `lambdas`.
pub fn weak_type_check(u: &Field, lambdas: &[f64]) -> Result<WeakTypeReport> {
    weak_type_check_with(u, &maximal(u), lambdas)
}

pub fn weak_type_check_with(u: &Field, mu: &MaximalField, lambdas: &[f64]) -> Result<WeakTypeReport> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty lambda list".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {l}")));
    }
    let norms = u.norms();
    let w = u.grid.cell_measure();
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let measure = mu.superlevel_measure(lambda);
        let mut s = 0.0;
        for &r in &norms {
            if r >= lambda / 2.0 {
                s += r;
            }
        }
        let denom = s * w;
        let num = measure * lambda;
        let (ratio, status) = if denom > 0.0 {
            (num / denom, RowStatus::Ok)
        } else if num > 0.0 {
            (f64::INFINITY, RowStatus::Infinite)
        } else {
            (0.0, RowStatus::Skipped)
        };
        rows.push(WeakTypeRow { lambda, measure_mu_set: measure, integral_half_level: denom, ratio, status });
    }
    let c_fit = rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok)
        .map(|r| r.ratio)
        .fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.status != RowStatus::Infinite);
    Ok(WeakTypeReport { rows, c_fit, pass })
}
