//! Periodic grids, sampled fields and level-set statistics.
//!
//! Cells are indexed row-major with the last axis fastest. Cell `i` has
//! center `(i + 0.5) / N` along each axis and measure `N^-n`. Field values
//! are stored point-major, channel-minor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub dim: usize,
    pub resolution: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if resolution < 4 || !resolution.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "resolution must be even and at least 4, got {resolution}"
            )));
        }
        let cells = (resolution as u128).checked_pow(dim as u32);
        if cells.is_none_or(|c| c > (1u128 << 40)) {
            return Err(Error::InvalidGrid("grid too large".into()));
        }
        Ok(Self { dim, resolution })
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_measure(&self) -> f64 {
        (self.resolution as f64).powi(-(self.dim as i32))
    }

    /// Stride of `axis` in the linear index.
    pub fn stride(&self, axis: usize) -> usize {
        self.resolution.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let n = self.resolution;
        let mut c = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            c[a] = idx % n;
            idx /= n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .fold(0, |acc, &c| acc * self.resolution + c % self.resolution)
    }

    /// Index of the cell `idx + delta` with periodic wrap-around.
    pub fn offset(&self, idx: usize, delta: &[i64]) -> usize {
        let n = self.resolution as i64;
        let c = self.coords(idx);
        let mut out = 0usize;
        for a in 0..self.dim {
            let v = (c[a] as i64 + delta[a]).rem_euclid(n);
            out = out * self.resolution + v as usize;
        }
        out
    }

    /// Cell center of `idx` in `[0,1)^n`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        self.coords(idx)
            .into_iter()
            .map(|c| (c as f64 + 0.5) * h)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: TorusGrid,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: TorusGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("field needs at least one channel".into()));
        }
        if values.len() != grid.len() * channels {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.len() * channels,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at offset {i}")));
        }
        Ok(Self { grid, channels, values })
    }

    pub fn zeros(grid: TorusGrid, channels: usize) -> Self {
        Self { grid, channels, values: vec![0.0; grid.len() * channels] }
    }

    pub fn constant(grid: TorusGrid, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(grid.len() * value.len());
        for _ in 0..grid.len() {
            values.extend_from_slice(value);
        }
        Self { grid, channels: value.len(), values }
    }

    /// Samples `f(x, out)` at every cell center.
    pub fn from_fn<F>(grid: TorusGrid, channels: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Sync + Send,
    {
        let mut values = vec![0.0; grid.len() * channels];
        par::for_each_chunk_mut(&mut values, channels, |i, out| f(&grid.point(i), out));
        Self { grid, channels, values }
    }

    pub fn at(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    /// Euclidean channel norm at one cell.
    pub fn norm_at(&self, idx: usize) -> f64 {
        self.at(idx).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Pointwise magnitudes `|u(x)|`.
    pub fn norms(&self) -> Vec<f64> {
        par::map_range(self.grid.len(), |i| self.norm_at(i))
    }

    /// Extracts one channel as a scalar array.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn set_channel(&mut self, c: usize, data: &[f64]) {
        for (i, v) in data.iter().enumerate() {
            self.values[i * self.channels + c] = *v;
        }
    }

    pub fn from_channels(grid: TorusGrid, chans: &[Vec<f64>]) -> Self {
        let mut f = Field::zeros(grid, chans.len());
        for (c, data) in chans.iter().enumerate() {
            f.set_channel(c, data);
        }
        f
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.channels];
        for i in 0..self.grid.len() {
            for (acc, v) in m.iter_mut().zip(self.at(i)) {
                *acc += v;
            }
        }
        let w = self.grid.cell_measure();
        m.iter_mut().for_each(|v| *v *= w);
        m
    }

    pub fn linf(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.norm_at(i)).fold(0.0, f64::max)
    }

    /// `(∫|u|^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        integrate(self, p, |_| true).powf(1.0 / p)
    }

    pub fn add_constant(&mut self, c: &[f64]) {
        for chunk in self.values.chunks_mut(self.channels) {
            for (v, a) in chunk.iter_mut().zip(c) {
                *v += a;
            }
        }
    }

    pub fn scaled(&self, t: f64) -> Field {
        Field {
            grid: self.grid,
            channels: self.channels,
            values: self.values.iter().map(|v| v * t).collect(),
        }
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &Field) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field {
            grid: self.grid,
            channels: self.channels,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + t * b).collect(),
        }
    }

    /// `(∫|u - v|^2)^{1/2}`.
    pub fn l2_distance(&self, other: &Field) -> f64 {
        self.axpy(-1.0, other).lp_norm(2.0)
    }

    /// Writes the flat binary layout and a JSON sidecar next to it.
    pub fn write_binary(&self, path: &Path, meta: Option<serde_json::Value>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for h in [self.grid.dim, self.grid.resolution, self.channels] {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let sidecar = FieldSidecar {
            dim: self.grid.dim,
            resolution: self.grid.resolution,
            channels: self.channels,
            layout: "u64 LE header (dim, resolution, channels); f64 LE values, point-major, channel-minor".into(),
            meta: meta.unwrap_or(serde_json::Value::Null),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Field> {
        let mut r = BufReader::new(File::open(path)?);
        let mut buf = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut buf)?;
            *h = u64::from_le_bytes(buf) as usize;
        }
        let grid = TorusGrid::new(header[0], header[1])?;
        let count = grid.len() * header[2];
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|_| Error::Format("truncated payload".into()))?;
            values.push(f64::from_le_bytes(buf));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Field::new(grid, header[2], values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldSidecar {
    dim: usize,
    resolution: usize,
    channels: usize,
    layout: String,
    meta: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetStats {
    pub lambda: f64,
    pub measure: f64,
    pub integral_u: f64,
    pub integral_up: f64,
}

/// `N^-n Σ_{x in region} |f(x)|^p`, summed in index order.
pub fn integrate<R>(f: &Field, p_exp: f64, region: R) -> f64
where
    R: Fn(usize) -> bool,
{
    let mut s = 0.0;
    for i in 0..f.grid.len() {
        if region(i) {
            s += f.norm_at(i).powf(p_exp);
        }
    }
    s * f.grid.cell_measure()
}

fn stats_where<R: Fn(f64) -> bool>(u: &Field, lambda: f64, p_exp: f64, keep: R) -> LevelSetStats {
    let mut count = 0usize;
    let (mut s1, mut sp) = (0.0, 0.0);
    for i in 0..u.grid.len() {
        let r = u.norm_at(i);
        if keep(r) {
            count += 1;
            s1 += r;
            sp += r.powf(p_exp);
        }
    }
    let w = u.grid.cell_measure();
    LevelSetStats {
        lambda,
        measure: count as f64 * w,
        integral_u: s1 * w,
        integral_up: sp * w,
    }
}

/// Statistics over `{|u| >= lambda}`.
pub fn superlevel_stats(u: &Field, lambda: f64, p_exp: f64) -> Result<LevelSetStats> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    Ok(stats_where(u, lambda, p_exp, |r| r >= lambda))
}

/// Statistics over the half-open shell `{lo <= |u| < hi}`; `hi` may be infinite.
pub fn shell_stats(u: &Field, lo: f64, hi: f64, p_exp: f64) -> Result<LevelSetStats> {
    if !(lo > 0.0) || !(lo < hi) {
        return Err(Error::InvalidShell { lo, hi });
    }
    Ok(stats_where(u, lo, p_exp, |r| r >= lo && r < hi))
}

/// CSV table with columns `lambda, measure, integral_u, integral_up`.
pub fn write_stats_csv(path: &Path, rows: &[LevelSetStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn plateau(grid: TorusGrid, high: f64, frac_num: usize, frac_den: usize) -> Field {
        let n = grid.len();
        let cut = n * frac_num / frac_den;
        Field::new(grid, 1, (0..n).map(|i| if i < cut { high } else { 0.0 }).collect()).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(2, 3).is_err());
        assert!(TorusGrid::new(2, 2).is_err());
        assert!(TorusGrid::new(0, 8).is_err());
        let g = TorusGrid::new(3, 8).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(g.index(&g.coords(77)), 77);
        assert_eq!(g.offset(g.index(&[0, 0, 7]), &[0, 0, 1]), 0);
    }

    #[test]
    fn integrate_examples() {
        let g = TorusGrid::new(2, 8).unwrap();
        let c = Field::constant(g, &[2.0, 0.0]);
        assert_eq!(integrate(&c, 2.0, |_| true), 4.0);
        assert_eq!(integrate(&Field::zeros(g, 3), 1.5, |_| true), 0.0);
        assert_eq!(integrate(&c, 2.0, |_| false), 0.0);
        let g1 = TorusGrid::new(1, 64).unwrap();
        let s = Field::from_fn(g1, 1, |x, o| o[0] = (2.0 * PI * x[0]).sin());
        assert!((integrate(&s, 2.0, |_| true) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn superlevel_examples() {
        let g = TorusGrid::new(2, 8).unwrap();
        let one = Field::constant(g, &[1.0]);
        let empty = superlevel_stats(&one, 2.0, 2.0).unwrap();
        assert_eq!((empty.measure, empty.integral_u, empty.integral_up), (0.0, 0.0, 0.0));
        let full = superlevel_stats(&one, 0.5, 2.0).unwrap();
        assert_eq!((full.measure, full.integral_u), (1.0, 1.0));
        let b = plateau(g, 3.0, 1, 4);
        let s = superlevel_stats(&b, 1.0, 2.0).unwrap();
        assert_eq!((s.measure, s.integral_u, s.integral_up), (0.25, 0.75, 2.25));
        assert!(superlevel_stats(&b, 0.0, 2.0).is_err());
    }

    #[test]
    fn shell_examples() {
        let g = TorusGrid::new(2, 8).unwrap();
        let z = shell_stats(&Field::constant(g, &[1.0]), 2.0, 4.0, 1.0).unwrap();
        assert_eq!(z.measure, 0.0);
        let t = shell_stats(&Field::constant(g, &[3.0]), 2.0, 4.0, 1.0).unwrap();
        assert_eq!(t.measure, 1.0);
        let n = g.len();
        let two = Field::new(g, 1, (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 5.0 }).collect()).unwrap();
        let s = shell_stats(&two, 2.0, 8.0, 1.0).unwrap();
        assert_eq!((s.measure, s.integral_u), (0.5, 2.5));
        assert!(matches!(shell_stats(&two, 4.0, 4.0, 1.0), Err(Error::InvalidShell { .. })));
        let inf = shell_stats(&two, 2.0, f64::INFINITY, 1.0).unwrap();
        assert_eq!(inf, superlevel_stats(&two, 2.0, 1.0).unwrap());
    }

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = TorusGrid::new(2, 4).unwrap();
        let f = Field::from_fn(g, 2, |x, o| {
            o[0] = x[0];
            o[1] = -x[1] * 3.5;
        });
        let p = dir.path().join("u.bin");
        f.write_binary(&p, None).unwrap();
        assert_eq!(Field::read_binary(&p).unwrap(), f);
        assert!(sidecar_path(&p).exists());
        let csvp = dir.path().join("s.csv");
        write_stats_csv(&csvp, &[superlevel_stats(&f, 0.1, 2.0).unwrap()]).unwrap();
        let text = std::fs::read_to_string(csvp).unwrap();
        assert!(text.starts_with("lambda,measure,integral_u,integral_up"));
    }

    fn arb_field() -> impl Strategy<Value = Field> {
        prop::collection::vec(-5.0f64..5.0, 64 * 2).prop_map(|v| {
            Field::new(TorusGrid::new(2, 8).unwrap(), 2, v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn shells_are_additive(u in arb_field(), a in 0.1f64..2.0, d1 in 0.1f64..2.0, d2 in 0.1f64..3.0) {
            let (b, c) = (a + d1, a + d1 + d2);
            let s1 = shell_stats(&u, a, b, 2.0).unwrap();
            let s2 = shell_stats(&u, b, c, 2.0).unwrap();
            let s = shell_stats(&u, a, c, 2.0).unwrap();
            prop_assert_eq!(s1.measure + s2.measure, s.measure);
            prop_assert!((s1.integral_up + s2.integral_up - s.integral_up).abs() <= 1e-12 * (1.0 + s.integral_up));
        }

        #[test]
        fn superlevel_monotone_and_chebyshev(u in arb_field(), l1 in 0.05f64..4.0, dl in 0.0f64..3.0, p in 1.0f64..4.0) {
            let a = superlevel_stats(&u, l1, p).unwrap();
            let b = superlevel_stats(&u, l1 + dl, p).unwrap();
            prop_assert!(b.measure <= a.measure);
            prop_assert!(b.integral_up <= a.integral_up);
            prop_assert!(a.integral_u >= l1 * a.measure * (1.0 - 1e-15));
            let total = integrate(&u, p, |_| true);
            prop_assert!(a.measure <= total * l1.powf(-p) * (1.0 + 1e-12));
        }
    }
}
