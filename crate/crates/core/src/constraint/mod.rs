//! Constant-coefficient homogeneous differential operators.
//!
//! An operator `A u = Σ_{|α|=k} A_α ∂^α u` is stored as a table of
//! multi-indices and `l × m` real matrices. Two discretizations are offered:
//!
//! * [`Scheme::Spectral`] differentiates through the FFT with symbol
//!   `Σ A_α (2πiξ)^α`. Nyquist coefficients are dropped.
//! * [`Scheme::Box`] replaces `∂_j` by the box difference `D_j`: a forward
//!   difference along axis `j` averaged over the unit cube in the remaining
//!   axes. Its symbol is `(e_j - 1) N Π_{k≠j} (1 + e_k) / 2` with
//!   `e_j = exp(2πiξ_j/N)`. Box differences commute, act as real stencils and
//!   map vertex potentials to cell fields, so `curl ∘ D = 0` and
//!   `div ∘ rot = 0` hold in exact arithmetic.

mod builtin;
mod projector;
mod quasiaffine;

pub use builtin::{coupled, curl, div, from_name};
pub use projector::{project_kernel, random_test_field, KernelProjector};
pub use quasiaffine::{check_quasiaffine, det, QuasiaffineForm, QuasiaffineKind, QuasiaffineReport};

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{frequency, touches_nyquist, FftNd};
use crate::field::{Field, TorusGrid};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Unit multi-index `e_j` in `n` dimensions.
    pub fn unit(n: usize, j: usize) -> Self {
        let mut e = vec![0; n];
        e[j] = 1;
        MultiIndex(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Spectral,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub alpha: MultiIndex,
    /// `l × m` matrix as rows.
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialOperator {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: u32,
    #[serde(default)]
    pub scheme: Scheme,
    pub coefficients: Vec<Coefficient>,
}

/// Symbol of a single operator at one frequency.
#[derive(Debug, Clone)]
pub struct SymbolMatrix {
    pub frequency: Vec<i64>,
    pub matrix: DMatrix<Complex64>,
}

impl DifferentialOperator {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        l: usize,
        coefficients: Vec<Coefficient>,
    ) -> Result<Self> {
        let k = coefficients
            .first()
            .map(|c| c.alpha.order())
            .ok_or_else(|| Error::IncompatibleOperator("no coefficients".into()))?;
        let op = Self { name: name.into(), n, m, l, k, scheme: Scheme::Spectral, coefficients };
        op.validate()?;
        Ok(op)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::IncompatibleOperator(s));
        if self.n == 0 || self.m == 0 || self.l == 0 || self.k == 0 {
            return bad("n, m, l and k must be positive".into());
        }
        let mut nonzero = false;
        for c in &self.coefficients {
            if c.alpha.0.len() != self.n {
                return bad(format!("multi-index {:?} has wrong length", c.alpha.0));
            }
            if c.alpha.order() != self.k {
                return bad(format!("multi-index {:?} is not of order {}", c.alpha.0, self.k));
            }
            if c.matrix.len() != self.l || c.matrix.iter().any(|r| r.len() != self.m) {
                return bad(format!("coefficient for {:?} is not {}x{}", c.alpha.0, self.l, self.m));
            }
            if c.matrix.iter().flatten().any(|v| !v.is_finite()) {
                return bad("non-finite coefficient".into());
            }
            nonzero |= c.matrix.iter().flatten().any(|&v| v != 0.0);
        }
        if !nonzero {
            return bad("all coefficients vanish".into());
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let op: Self = serde_json::from_str(s)?;
        op.validate()?;
        Ok(op)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Built-in name (see [`from_name`]) or a path to a JSON definition.
    pub fn load(spec: &str) -> Result<Self> {
        match from_name(spec) {
            Ok(op) => Ok(op),
            Err(e) => {
                let p = Path::new(spec);
                if p.exists() {
                    Self::from_json_file(p)
                } else {
                    Err(e)
                }
            }
        }
    }

    /// Largest coefficient norm times `(2π)^k`; reference scale for rank cutoffs.
    pub fn scale_ref(&self) -> f64 {
        let mut s: f64 = 0.0;
        for c in &self.coefficients {
            let fro: f64 = c.matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            s = s.max(fro);
        }
        s * (2.0 * PI).powi(self.k as i32)
    }

    /// Per-axis derivative symbols at `xi` for the operator's scheme.
    pub fn axis_symbols(&self, xi: &[i64], resolution: usize) -> Vec<Complex64> {
        axis_symbols(self.scheme, xi, resolution)
    }

    /// `A[ξ] = Σ A_α Π_j s_j(ξ)^{α_j}` with `s_j = 2πiξ_j` (spectral) or the box symbol.
    pub fn symbol(&self, xi: &[i64], resolution: usize) -> SymbolMatrix {
        let s = self.axis_symbols(xi, resolution);
        let mut mat = DMatrix::<Complex64>::zeros(self.l, self.m);
        for c in &self.coefficients {
            let mut w = Complex64::new(1.0, 0.0);
            for (j, &a) in c.alpha.0.iter().enumerate() {
                w *= s[j].powu(a);
            }
            for (r, row) in c.matrix.iter().enumerate() {
                for (col, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        mat[(r, col)] += w * v;
                    }
                }
            }
        }
        SymbolMatrix { frequency: xi.to_vec(), matrix: mat }
    }

    /// Formal adjoint with coefficients `(-1)^k A_α^T`. Its spectral symbol is
    /// `A[ξ]^H`, so `<Au, φ> = <u, A*φ>` holds for the spectral scheme.
    pub fn adjoint(&self) -> Result<Self> {
        if self.scheme == Scheme::Box {
            return Err(Error::IncompatibleOperator(
                "the adjoint of a box operator is not a forward box operator".into(),
            ));
        }
        let sign = if self.k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let coefficients = self
            .coefficients
            .iter()
            .map(|c| Coefficient {
                alpha: c.alpha.clone(),
                matrix: (0..self.m)
                    .map(|j| (0..self.l).map(|i| sign * c.matrix[i][j]).collect())
                    .collect(),
            })
            .collect();
        Ok(Self {
            name: format!("{}*", self.name),
            n: self.n,
            m: self.l,
            l: self.m,
            k: self.k,
            scheme: self.scheme,
            coefficients,
        })
    }

    fn check_field(&self, u: &Field) -> Result<()> {
        if u.channels != self.m || u.grid.dim != self.n {
            return Err(Error::IncompatibleOperator(format!(
                "operator expects {} channels on a {}-dimensional grid, field has {} channels on {} dimensions",
                self.m, self.n, u.channels, u.grid.dim
            )));
        }
        Ok(())
    }

    /// `A u` as an `l`-channel field.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        self.check_field(u)?;
        Ok(match self.scheme {
            Scheme::Spectral => self.apply_spectral(u),
            Scheme::Box => self.apply_box(u),
        })
    }

    fn apply_spectral(&self, u: &Field) -> Field {
        let grid = u.grid;
        let fft = FftNd::new(grid);
        let uh = fft.forward_field(u);
        let out: Vec<Vec<Complex64>> = {
            let cols = par::map_range(grid.len(), |idx| {
                let mut o = vec![Complex64::default(); self.l];
                if touches_nyquist(&grid, idx) {
                    return o;
                }
                let sym = self.symbol(&frequency(&grid, idx), grid.resolution).matrix;
                for r in 0..self.l {
                    for c in 0..self.m {
                        o[r] += sym[(r, c)] * uh[c][idx];
                    }
                }
                o
            });
            (0..self.l).map(|r| cols.iter().map(|o| o[r]).collect()).collect()
        };
        fft.inverse_field(out)
    }

    fn apply_box(&self, u: &Field) -> Field {
        let grid = u.grid;
        let chans: Vec<Vec<f64>> = (0..self.m).map(|c| u.channel(c)).collect();
        let mut out = vec![vec![0.0; grid.len()]; self.l];
        for coef in &self.coefficients {
            for c in 0..self.m {
                if coef.matrix.iter().all(|row| row[c] == 0.0) {
                    continue;
                }
                let mut d = chans[c].clone();
                for (axis, &a) in coef.alpha.0.iter().enumerate() {
                    for _ in 0..a {
                        d = box_diff(&grid, &d, axis);
                    }
                }
                for (r, row) in coef.matrix.iter().enumerate() {
                    let w = row[c];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, v) in out[r].iter_mut().zip(&d) {
                        *o += w * v;
                    }
                }
            }
        }
        Field::from_channels(grid, &out)
    }
}

pub fn axis_symbols(scheme: Scheme, xi: &[i64], resolution: usize) -> Vec<Complex64> {
    let n = xi.len();
    match scheme {
        Scheme::Spectral => xi.iter().map(|&x| Complex64::new(0.0, 2.0 * PI * x as f64)).collect(),
        Scheme::Box => {
            let nn = resolution as f64;
            let e: Vec<Complex64> = xi
                .iter()
                .map(|&x| Complex64::from_polar(1.0, 2.0 * PI * x as f64 / nn))
                .collect();
            (0..n)
                .map(|j| {
                    let mut s = (e[j] - 1.0) * nn;
                    for (k, ek) in e.iter().enumerate() {
                        if k != j {
                            s *= (ek + 1.0) * 0.5;
                        }
                    }
                    s
                })
                .collect()
        }
    }
}

/// Box difference `D_axis f` of a scalar array: value at index `i` uses the
/// unit cube of indices `i .. i+1`.
pub fn box_diff(grid: &TorusGrid, f: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.dim;
    let corners: Vec<(Vec<i64>, f64)> = (0..1usize << n)
        .map(|mask| {
            let s: Vec<i64> = (0..n).map(|a| ((mask >> (n - 1 - a)) & 1) as i64).collect();
            let sign = if s[axis] == 1 { 1.0 } else { -1.0 };
            (s, sign)
        })
        .collect();
    let scale = grid.resolution as f64 / (1u64 << (n - 1)) as f64;
    par::map_range(grid.len(), |i| {
        let mut acc = 0.0;
        for (s, sign) in &corners {
            acc += sign * f[grid.offset(i, s)];
        }
        acc * scale
    })
}

/// `‖Au‖_2 / (‖u‖_2 + floor)`.
pub fn residual_norm(op: &DifferentialOperator, u: &Field) -> Result<f64> {
    let au = op.apply(u)?;
    Ok(au.lp_norm(2.0) / (u.lp_norm(2.0) + 1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(2, n).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        for name in ["div2", "curl2", "curl2:2", "div2@box", "curl2:2@box", "plap-coupled"] {
            let op = from_name(name).unwrap();
            let c: Vec<f64> = (0..op.m).map(|i| i as f64 - 0.7).collect();
            let au = op.apply(&Field::constant(grid(8), &c)).unwrap();
            assert!(au.linf() < 1e-14, "{name}");
        }
    }

    #[test]
    fn stream_function_is_div_free() {
        let op = from_name("div2").unwrap();
        let u = Field::from_fn(grid(16), 2, |x, o| {
            let (a, b) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
            o[0] = -2.0 * PI * a.sin() * b.cos();
            o[1] = 2.0 * PI * a.cos() * b.sin();
        });
        assert!(residual_norm(&op, &u).unwrap() <= 1e-10);
    }

    #[test]
    fn gradient_is_curl_free() {
        let op = from_name("curl2").unwrap();
        let u = Field::from_fn(grid(16), 2, |x, o| {
            o[0] = 0.0;
            o[1] = -2.0 * PI * (2.0 * PI * x[1]).sin();
        });
        assert!(op.apply(&u).unwrap().linf() <= 1e-12);
    }

    #[test]
    fn divergence_of_sine() {
        let op = from_name("div2").unwrap();
        let u = Field::from_fn(grid(32), 2, |x, o| {
            o[0] = (2.0 * PI * x[0]).sin();
            o[1] = 0.0;
        });
        assert!((residual_norm(&op, &u).unwrap() - 2.0 * PI).abs() < 1e-10);
        let wrong = Field::zeros(grid(8), 3);
        assert!(matches!(op.apply(&wrong), Err(Error::IncompatibleOperator(_))));
    }

    #[test]
    fn box_symbol_matches_stencil() {
        let g = grid(8);
        let op = from_name("div2@box").unwrap();
        let xi = [2i64, -1];
        let phase = |x: &[f64]| 2.0 * PI * (xi[0] as f64 * x[0] + xi[1] as f64 * x[1]);
        let u = Field::from_fn(g, 2, |x, o| {
            o[0] = phase(x).cos();
            o[1] = 0.0;
        });
        let au = op.apply(&u).unwrap();
        let s = op.symbol(&xi, 8).matrix[(0, 0)];
        let expect = Field::from_fn(g, 1, |x, o| {
            o[0] = (s * Complex64::from_polar(1.0, phase(x))).re;
        });
        assert!(au.l2_distance(&expect) < 1e-12);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let op = from_name("curl3").unwrap();
        let s = serde_json::to_string(&op).unwrap();
        assert_eq!(DifferentialOperator::from_json_str(&s).unwrap(), op);
        let bad = r#"{"n":2,"m":2,"l":1,"k":1,"coefficients":[{"alpha":[1,1],"matrix":[[1,0]]}]}"#;
        assert!(DifferentialOperator::from_json_str(bad).is_err());
        let ok = r#"{"n":2,"m":2,"l":1,"k":1,"scheme":"box","coefficients":[{"alpha":[1,0],"matrix":[[1,0]]},{"alpha":[0,1],"matrix":[[0,1]]}]}"#;
        assert_eq!(DifferentialOperator::from_json_str(ok).unwrap().scheme, Scheme::Box);
    }

    proptest! {
        #[test]
        fn symbol_homogeneity(x0 in -5i64..5, x1 in -5i64..5, t in 1i64..4) {
            for name in ["div2", "curl2:2", "plap-coupled"] {
                let op = from_name(name).unwrap();
                let a = op.symbol(&[x0, x1], 64).matrix;
                let b = op.symbol(&[t * x0, t * x1], 64).matrix;
                let scale = (t as f64).powi(op.k as i32);
                let diff = (&b - &a * Complex64::new(scale, 0.0)).norm();
                prop_assert!(diff <= 1e-10 * (1.0 + b.norm()));
            }
        }

        #[test]
        fn adjoint_duality(s1 in 0u64..1000, s2 in 0u64..1000) {
            for name in ["div2", "curl2:2", "curl3"] {
                let op = from_name(name).unwrap();
                let gg = TorusGrid::new(op.n, if op.n == 3 { 8 } else { 16 }).unwrap();
                let u = crate::samples::random_smooth(gg, op.m, s1, 2);
                let phi = crate::samples::random_smooth(gg, op.l, s2, 2);
                let au = op.apply(&u).unwrap();
                let adj = op.adjoint().unwrap().apply(&phi).unwrap();
                let lhs: f64 = au.values.iter().zip(&phi.values).map(|(a, b)| a * b).sum();
                let rhs: f64 = u.values.iter().zip(&adj.values).map(|(a, b)| a * b).sum();
                let w = gg.cell_measure();
                prop_assert!((lhs - rhs).abs() * w <= 1e-10 * (1.0 + (lhs * w).abs()));
            }
        }
    }
}
