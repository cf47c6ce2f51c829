//! Multi-dimensional FFT on the periodic grid.
//!
//! The forward transform is normalized by `N^-n`, so coefficient 0 is the
//! mean and `inverse(forward(x)) == x`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::{Field, TorusGrid};
use crate::par;

pub struct FftNd {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftNd {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.resolution);
        let inv = planner.plan_fft_inverse(grid.resolution);
        Self { grid, fwd, inv }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.resolution;
        let total = self.grid.len();
        assert_eq!(data.len(), total);
        for axis in 0..self.grid.dim {
            let stride = self.grid.stride(axis);
            let block = stride * n;
            let lines = total / n;
            // Gather every line along `axis` into contiguous rows.
            let mut rows = vec![Complex64::default(); total];
            for line in 0..lines {
                let (outer, inner) = (line / stride, line % stride);
                let base = outer * block + inner;
                for k in 0..n {
                    rows[line * n + k] = data[base + k * stride];
                }
            }
            par::for_each_chunk_mut(&mut rows, n, |_, row| plan.process(row));
            for line in 0..lines {
                let (outer, inner) = (line / stride, line % stride);
                let base = outer * block + inner;
                for k in 0..n {
                    data[base + k * stride] = rows[line * n + k];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
        let s = self.grid.cell_measure();
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
    }

    /// Coefficients of every channel, channel-major.
    pub fn forward_field(&self, u: &Field) -> Vec<Vec<Complex64>> {
        (0..u.channels)
            .map(|c| {
                let mut d: Vec<Complex64> =
                    u.channel(c).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
                self.forward(&mut d);
                d
            })
            .collect()
    }

    /// Real parts of the inverse transforms, assembled into a field.
    pub fn inverse_field(&self, spectra: Vec<Vec<Complex64>>) -> Field {
        let chans: Vec<Vec<f64>> = spectra
            .into_iter()
            .map(|mut d| {
                self.inverse(&mut d);
                d.into_iter().map(|c| c.re).collect()
            })
            .collect();
        Field::from_channels(self.grid, &chans)
    }

    pub fn forward_scalar(&self, v: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut d);
        d
    }

    pub fn inverse_scalar(&self, mut d: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut d);
        d.into_iter().map(|c| c.re).collect()
    }
}

/// Signed frequency of DFT index `i` on `n` points (`n/2` maps to `+n/2`).
pub fn freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

pub fn freq_index(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

/// Signed frequency vector of linear spectral index `idx`.
pub fn frequency(grid: &TorusGrid, idx: usize) -> Vec<i64> {
    grid.coords(idx).into_iter().map(|c| freq(c, grid.resolution)).collect()
}

/// True if any component sits at the Nyquist index `N/2`.
pub fn touches_nyquist(grid: &TorusGrid, idx: usize) -> bool {
    grid.coords(idx).into_iter().any(|c| c == grid.resolution / 2)
}

/// Index of `-ξ`.
pub fn negated_index(grid: &TorusGrid, idx: usize) -> usize {
    let n = grid.resolution;
    let c: Vec<usize> = grid.coords(idx).into_iter().map(|c| (n - c) % n).collect();
    grid.index(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::integrate;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn roundtrip_and_mean() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = Field::from_fn(g, 1, |x, o| o[0] = 1.5 + (2.0 * PI * (x[0] + 2.0 * x[1])).cos());
        let fft = FftNd::new(g);
        let c = fft.forward_scalar(&f.values);
        assert!((c[0].re - 1.5).abs() < 1e-14);
        // cos(2π(ξ·x)) with half-cell phase: |coefficient| = 1/2 at ±(1,2).
        assert!((c[g.index(&[1, 2])].norm() - 0.5).abs() < 1e-14);
        let back = fft.inverse_scalar(c);
        for (a, b) in back.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn frequencies() {
        assert_eq!(freq(0, 8), 0);
        assert_eq!(freq(4, 8), 4);
        assert_eq!(freq(5, 8), -3);
        assert_eq!(freq_index(-3, 8), 5);
        let g = TorusGrid::new(2, 8).unwrap();
        assert_eq!(negated_index(&g, g.index(&[1, 7])), g.index(&[7, 1]));
        assert!(touches_nyquist(&g, g.index(&[4, 0])));
    }

    proptest! {
        #[test]
        fn quadrature_exact_for_low_degree(a0 in -3.0f64..3.0, a1 in -2.0f64..2.0, b in -2.0f64..2.0,
                                          k1 in 1i64..4, k2 in -3i64..4) {
            let g = TorusGrid::new(2, 8).unwrap();
            let f = Field::from_fn(g, 1, |x, o| {
                o[0] = a0 + a1 * (2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1])).sin()
                    + b * (2.0 * PI * k1 as f64 * x[1]).cos();
            });
            let mut s = 0.0;
            for v in &f.values { s += v; }
            s *= g.cell_measure();
            prop_assert!((s - a0).abs() <= 1e-13 * (1.0 + a0.abs() + a1.abs() + b.abs()));
            let _ = integrate(&f, 1.0, |_| true);
        }
    }
}
