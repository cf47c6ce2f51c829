use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DifferentialOperator, Scheme};
use crate::error::{Error, Result};
use crate::fft::{freq_index, frequency, touches_nyquist, FftNd};
use crate::field::{Field, TorusGrid};
use crate::par;

/// Relative singular-value cutoff for the rank of `A[ξ]`.
pub const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Entry {
    Keep,
    Zero,
    Project(DMatrix<Complex64>),
}

/// Cached per-frequency orthogonal projectors onto `ker A[ξ]`.
///
/// The mean (ξ = 0) is kept. Coefficients are dropped where no real
/// projection exists: Nyquist frequencies for the spectral scheme, and
/// nonzero frequencies where the symbol vanishes (these are the checkerboard
/// modes of the box scheme).
#[derive(Debug, Clone)]
pub struct KernelProjector {
    grid: TorusGrid,
    m: usize,
    entries: Vec<Entry>,
    pub rank_cutoff: f64,
}

impl KernelProjector {
    pub fn new(op: &DifferentialOperator, grid: TorusGrid) -> Result<Self> {
        if grid.dim != op.n {
            return Err(Error::IncompatibleOperator(format!(
                "operator acts in {} dimensions, grid has {}",
                op.n, grid.dim
            )));
        }
        let scale_ref = op.scale_ref();
        let entries = par::map_range(grid.len(), |idx| {
            if idx == 0 {
                return Entry::Keep;
            }
            if op.scheme == Scheme::Spectral && touches_nyquist(&grid, idx) {
                return Entry::Zero;
            }
            let a = op.symbol(&frequency(&grid, idx), grid.resolution).matrix;
            let svd = a.svd(false, true);
            let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
            if smax <= RANK_CUTOFF * scale_ref {
                return Entry::Zero;
            }
            let vt = svd.v_t.expect("requested V^*");
            let mut p = DMatrix::<Complex64>::identity(op.m, op.m);
            for (i, &s) in svd.singular_values.iter().enumerate() {
                if s > RANK_CUTOFF * smax {
                    let r = vt.row(i);
                    for a in 0..op.m {
                        for b in 0..op.m {
                            p[(a, b)] -= r[a].conj() * r[b];
                        }
                    }
                }
            }
            Entry::Project(p)
        });
        Ok(Self { grid, m: op.m, entries, rank_cutoff: RANK_CUTOFF })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Projects one coefficient vector at linear spectral index `idx`.
    pub fn project_coefficient(&self, idx: usize, c: &[Complex64]) -> Vec<Complex64> {
        match &self.entries[idx] {
            Entry::Keep => c.to_vec(),
            Entry::Zero => vec![Complex64::default(); c.len()],
            Entry::Project(p) => (0..self.m)
                .map(|a| (0..self.m).map(|b| p[(a, b)] * c[b]).sum())
                .collect(),
        }
    }

    /// Projects a field; the mean is preserved.
    pub fn project(&self, u: &Field) -> Result<Field> {
        if u.grid != self.grid || u.channels != self.m {
            return Err(Error::IncompatibleOperator(
                "field does not match the projector's grid or channel count".into(),
            ));
        }
        let fft = FftNd::new(self.grid);
        let uh = fft.forward_field(u);
        let cols = par::map_range(self.grid.len(), |idx| {
            let c: Vec<Complex64> = (0..self.m).map(|ch| uh[ch][idx]).collect();
            self.project_coefficient(idx, &c)
        });
        let spectra = (0..self.m).map(|ch| cols.iter().map(|c| c[ch]).collect()).collect();
        Ok(fft.inverse_field(spectra))
    }
}

/// One-shot projection onto the kernel of `op`, keeping the mean.
pub fn project_kernel(op: &DifferentialOperator, u: &Field) -> Result<Field> {
    if u.channels != op.m {
        return Err(Error::IncompatibleOperator(format!(
            "operator expects {} channels, field has {}",
            op.m, u.channels
        )));
    }
    KernelProjector::new(op, u.grid)?.project(u)
}

/// Random zero-mean real field in the kernel of `op`, with frequencies in
/// `[-band, band]^n`.
///
/// Gaussian coefficients are drawn in lexicographic frequency order, so the
/// same seed and band give the same trigonometric polynomial on every grid
/// finer than `2 band`.
pub fn random_test_field(
    op: &DifferentialOperator,
    grid: TorusGrid,
    seed: u64,
    band: usize,
) -> Result<Field> {
    let proj = KernelProjector::new(op, grid)?;
    random_test_field_with(&proj, seed, band)
}

pub fn random_test_field_with(proj: &KernelProjector, seed: u64, band: usize) -> Result<Field> {
    let grid = proj.grid;
    let m = proj.m;
    if 2 * band >= grid.resolution {
        return Err(Error::InvalidInput(format!(
            "band {band} must be below N/2 = {}",
            grid.resolution / 2
        )));
    }
    let n = grid.dim;
    let side = 2 * band + 1;
    let count = side.pow(n as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(count * m);
    for _ in 0..count * m {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        z.push(Complex64::new(re, im));
    }
    let local = |xi: &[i64]| -> usize {
        xi.iter().fold(0usize, |acc, &k| acc * side + (k + band as i64) as usize)
    };
    let mut spectra = vec![vec![Complex64::default(); grid.len()]; m];
    for pos in 0..count {
        let mut rem = pos;
        let mut xi = vec![0i64; n];
        for a in (0..n).rev() {
            xi[a] = (rem % side) as i64 - band as i64;
            rem /= side;
        }
        if xi.iter().all(|&k| k == 0) {
            continue;
        }
        let neg: Vec<i64> = xi.iter().map(|k| -k).collect();
        let (p, q) = (local(&xi), local(&neg));
        let c: Vec<Complex64> = (0..m).map(|ch| (z[p * m + ch] + z[q * m + ch].conj()) * 0.5).collect();
        let gidx = grid.index(&xi.iter().map(|&k| freq_index(k, grid.resolution)).collect::<Vec<_>>());
        let pc = proj.project_coefficient(gidx, &c);
        for ch in 0..m {
            spectra[ch][gidx] = pc[ch];
        }
    }
    let fft = FftNd::new(grid);
    Ok(fft.inverse_field(spectra))
}

#[cfg(test)]
mod tests {
    use super::super::{from_name, residual_norm};
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn gradients_project_to_zero_under_div() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = Field::from_fn(g, 2, |x, o| {
            let (a, b) = (2.0 * PI * x[0], 2.0 * PI * 2.0 * x[1]);
            o[0] = 2.0 * PI * a.cos() * b.sin();
            o[1] = 4.0 * PI * a.sin() * b.cos();
        });
        let p = project_kernel(&from_name("div2").unwrap(), &u).unwrap();
        assert!(p.linf() < 1e-12);
    }

    #[test]
    fn random_fields_are_free_and_seeded() {
        for name in ["div2", "curl2:2", "div2@box", "curl2:2@box", "plap-coupled", "curl3"] {
            let op = from_name(name).unwrap();
            let g = TorusGrid::new(op.n, if op.n == 3 { 8 } else { 16 }).unwrap();
            let a = random_test_field(&op, g, 7, 3).unwrap();
            let b = random_test_field(&op, g, 8, 3).unwrap();
            assert!(residual_norm(&op, &a).unwrap() <= 1e-10, "{name}");
            assert!(a.mean().iter().all(|v| v.abs() <= 1e-12));
            assert!(a.l2_distance(&b) > 0.0);
            assert_eq!(a, random_test_field(&op, g, 7, 3).unwrap());
        }
        let op = from_name("div2").unwrap();
        let g = TorusGrid::new(2, 8).unwrap();
        assert!(random_test_field(&op, g, 1, 0).unwrap().linf() == 0.0);
        assert!(random_test_field(&op, g, 1, 4).is_err());
    }

    #[test]
    fn band_limited_field_is_grid_independent() {
        let op = from_name("div2").unwrap();
        let a = random_test_field(&op, TorusGrid::new(2, 16).unwrap(), 3, 3).unwrap();
        let b = random_test_field(&op, TorusGrid::new(2, 32).unwrap(), 3, 3).unwrap();
        // Cell centers of the coarse grid are not fine-grid centers; compare means of squares.
        let ia = crate::field::integrate(&a, 2.0, |_| true);
        let ib = crate::field::integrate(&b, 2.0, |_| true);
        assert!((ia - ib).abs() < 1e-12 * (1.0 + ia));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projection_idempotent_and_mean_preserving(seed in 0u64..10_000) {
            for name in ["div2", "curl2:2@box", "plap-coupled"] {
                let op = from_name(name).unwrap();
                let g = TorusGrid::new(2, 8).unwrap();
                let u = crate::samples::random_smooth(g, op.m, seed, 3);
                let proj = KernelProjector::new(&op, g).unwrap();
                let p1 = proj.project(&u).unwrap();
                let p2 = proj.project(&p1).unwrap();
                prop_assert!(p1.l2_distance(&p2) <= 1e-12 * (1.0 + p1.lp_norm(2.0)));
                prop_assert!(residual_norm(&op, &p1).unwrap() <= 1e-10);
                for (a, b) in u.mean().iter().zip(p1.mean()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
