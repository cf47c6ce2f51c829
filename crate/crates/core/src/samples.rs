//! Deterministic test fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraint::box_diff;
use crate::field::{Field, TorusGrid};

/// Unconstrained random real trigonometric polynomial with frequencies in
/// `[-band, band]^n` and unit-order amplitudes.
pub fn random_smooth(grid: TorusGrid, channels: usize, seed: u64, band: usize) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.dim;
    let side = 2 * band + 1;
    let modes: Vec<(Vec<f64>, Vec<(f64, f64)>)> = (0..side.pow(n as u32))
        .map(|pos| {
            let mut rem = pos;
            let mut xi = vec![0.0; n];
            for a in (0..n).rev() {
                xi[a] = (rem % side) as f64 - band as f64;
                rem /= side;
            }
            let amps = (0..channels)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            (xi, amps)
        })
        .collect();
    Field::from_fn(grid, channels, |x, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (xi, amps) in &modes {
            let ph = 2.0 * PI * xi.iter().zip(x).map(|(k, t)| k * t).sum::<f64>();
            let (s, c) = ph.sin_cos();
            for (o, (a, b)) in out.iter_mut().zip(amps) {
                *o += a * c + b * s;
            }
        }
    })
}

/// Vertex potential `v` sampled at vertex positions `i / N`.
pub fn vertex_potential<F: Fn(&[f64]) -> f64 + Sync + Send>(grid: TorusGrid, v: F) -> Vec<f64> {
    let h = grid.spacing();
    crate::par::map_range(grid.len(), |i| {
        let x: Vec<f64> = grid.coords(i).into_iter().map(|c| c as f64 * h).collect();
        v(&x)
    })
}

/// Box gradient of a vertex potential: an exactly box-curl-free cell field.
pub fn box_gradient(grid: TorusGrid, v: &[f64]) -> Field {
    let chans: Vec<Vec<f64>> = (0..grid.dim).map(|a| box_diff(&grid, v, a)).collect();
    Field::from_channels(grid, &chans)
}

/// Box rotated gradient `(-D_2 ψ, D_1 ψ)`: an exactly box-div-free 2D field.
pub fn box_rot(grid: TorusGrid, psi: &[f64]) -> Field {
    let d1 = box_diff(&grid, psi, 0);
    let d2: Vec<f64> = box_diff(&grid, psi, 1).into_iter().map(|v| -v).collect();
    Field::from_channels(grid, &[d2, d1])
}

/// Periodic dipole-type potential concentrating at `center` with width `delta`:
/// `δ t_1 / (ρ² + δ²)` where `t_1 = sin(2π(x_1 - c_1)) / 2π` and
/// `ρ² = Σ_j sin²(π(x_j - c_j)) / π²`.
pub fn dipole_potential(grid: TorusGrid, center: &[f64], delta: f64, amplitude: f64) -> Vec<f64> {
    let c = center.to_vec();
    vertex_potential(grid, move |x| {
        let rho2: f64 = x.iter().zip(&c).map(|(xi, ci)| ((PI * (xi - ci)).sin() / PI).powi(2)).sum();
        let t1 = (2.0 * PI * (x[0] - c[0])).sin() / (2.0 * PI);
        amplitude * delta * t1 / (rho2 + delta * delta)
    })
}

/// Concentrating curl-free family member `k`: box gradient of a dipole
/// potential whose width shrinks with `k`.
pub fn concentrating_gradient(grid: TorusGrid, k: usize) -> Field {
    let delta = 0.05 * 0.88f64.powi(k as i32);
    let center: Vec<f64> = (0..grid.dim).map(|a| 0.31 + 0.07 * ((k + a) % 5) as f64).collect();
    box_gradient(grid, &dipole_potential(grid, &center, delta, 1.0))
}

/// Gradient of a narrow radial Gaussian bump centred in the torus.
pub fn sharp_peak_gradient(grid: TorusGrid) -> Field {
    let delta = 0.04;
    box_gradient(
        grid,
        &vertex_potential(grid, move |x| {
            let rho2: f64 = x.iter().map(|xi| ((PI * (xi - 0.5)).sin() / PI).powi(2)).sum();
            (-rho2 / (delta * delta)).exp()
        }),
    )
}

/// Scalar field equal to `high` on the first `num/den` of cells, `low` elsewhere.
pub fn plateau(grid: TorusGrid, low: f64, high: f64, num: usize, den: usize) -> Field {
    let n = grid.len();
    let cut = n * num / den;
    let values = (0..n).map(|i| if i < cut { high } else { low }).collect();
    Field { grid, channels: 1, values }
}

/// Geometric grid of `count` levels between twice the median of `Mu` and
/// `‖u‖_∞ / (2 c_L)`: the range where truncation is active but the good set
/// still covers most of the torus.
pub fn tp_lambda_window(u: &Field, mu: &crate::maximal::MaximalField, count: usize) -> Vec<f64> {
    let mut s = mu.values.clone();
    s.sort_by(f64::total_cmp);
    let lo = 2.0 * s[s.len() / 2];
    let hi = u.linf() / (2.0 * crate::truncation::lipschitz_factor(u.grid.dim));
    let hi = hi.max(lo);
    if count <= 1 {
        return vec![lo];
    }
    (0..count).map(|j| lo * (hi / lo).powf(j as f64 / (count - 1) as f64)).collect()
}
