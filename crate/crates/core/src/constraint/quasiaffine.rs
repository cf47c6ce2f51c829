use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::projector::{random_test_field_with, KernelProjector};
use super::DifferentialOperator;
use crate::error::{Error, Result};
use crate::field::TorusGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuasiaffineKind {
    /// `scale · det W` for `W` the `n × n` matrix stored row-major.
    Det { n: usize, scale: f64 },
    Linear { m: usize, index: usize },
    /// `|w|^2`: homogeneous but not quasiaffine; kept as a control.
    SquaredNorm { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiaffineForm {
    pub name: String,
    pub degree: u32,
    pub kind: QuasiaffineKind,
    /// Largest sampled `|Π(w)| / |w|^degree`.
    pub sampled_sup: f64,
    pub normalization_ok: bool,
}

impl QuasiaffineForm {
    fn finish(name: &str, degree: u32, kind: QuasiaffineKind) -> Self {
        let mut f = Self {
            name: name.into(),
            degree,
            kind,
            sampled_sup: 0.0,
            normalization_ok: false,
        };
        let m = f.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut sup: f64 = 0.0;
        let mut w = vec![0.0; m];
        for _ in 0..4096 {
            w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let r = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 1e-6 {
                sup = sup.max(f.eval(&w).abs() / r.powi(degree as i32));
            }
        }
        f.sampled_sup = sup;
        f.normalization_ok = sup <= 1.0 + 1e-12;
        f
    }

    /// Determinant of `n × n` matrices scaled by `n^{n/2}`, the sharp
    /// Hadamard constant, so that `|Π(W)| ≤ |W|^n` with equality at the identity.
    pub fn det(n: usize) -> Self {
        let scale = (n as f64).powf(n as f64 / 2.0);
        Self::finish("det", n as u32, QuasiaffineKind::Det { n, scale })
    }

    pub fn linear(m: usize, index: usize) -> Self {
        Self::finish("linear", 1, QuasiaffineKind::Linear { m, index })
    }

    pub fn squared_norm(m: usize) -> Self {
        Self::finish("squared-norm", 2, QuasiaffineKind::SquaredNorm { m })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            QuasiaffineKind::Det { n, .. } => n * n,
            QuasiaffineKind::Linear { m, .. } | QuasiaffineKind::SquaredNorm { m } => m,
        }
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        match self.kind {
            QuasiaffineKind::Det { n, scale } => scale * det(n, w),
            QuasiaffineKind::Linear { index, .. } => w[index],
            QuasiaffineKind::SquaredNorm { .. } => w.iter().map(|v| v * v).sum(),
        }
    }
}

pub fn det(n: usize, w: &[f64]) -> f64 {
    match n {
        1 => w[0],
        2 => w[0] * w[3] - w[1] * w[2],
        3 => {
            w[0] * (w[4] * w[8] - w[5] * w[7]) - w[1] * (w[3] * w[8] - w[5] * w[6])
                + w[2] * (w[3] * w[7] - w[4] * w[6])
        }
        _ => DMatrix::from_row_slice(n, n, w).determinant(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiaffineReport {
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares `Π(w0)` with `∫ Π(w0 + ψ)` over `trials` random zero-mean
/// A-free fields `ψ` of unit L² norm and frequencies up to `band`.
pub fn check_quasiaffine(
    pi: &QuasiaffineForm,
    op: &DifferentialOperator,
    grid: TorusGrid,
    w0: &[f64],
    trials: usize,
    band: usize,
    seed: u64,
) -> Result<QuasiaffineReport> {
    let half = grid.resolution / 2;
    if band * pi.degree as usize >= half {
        return Err(Error::AliasingRisk { band, degree: pi.degree, half });
    }
    if pi.dim() != op.m || w0.len() != op.m {
        return Err(Error::IncompatibleOperator(format!(
            "form acts on R^{}, operator on R^{}, base point has {} entries",
            pi.dim(),
            op.m,
            w0.len()
        )));
    }
    let proj = KernelProjector::new(op, grid)?;
    let base = pi.eval(w0);
    let mut deviations = Vec::with_capacity(trials);
    let mut w = vec![0.0; op.m];
    for t in 0..trials {
        let psi = random_test_field_with(&proj, seed.wrapping_add(t as u64), band)?;
        let norm = psi.lp_norm(2.0);
        let s = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        let mut acc = 0.0;
        for i in 0..grid.len() {
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = w0[k] + s * psi.at(i)[k];
            }
            acc += pi.eval(&w);
        }
        deviations.push((base - acc * grid.cell_measure()).abs());
    }
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let tolerance = 1e-8;
    Ok(QuasiaffineReport { deviations, max_deviation, tolerance, pass: max_deviation <= tolerance })
}

#[cfg(test)]
mod tests {
    use super::super::from_name;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn det_is_null_lagrangian_on_gradients() {
        let g = TorusGrid::new(2, 16).unwrap();
        let pi = QuasiaffineForm::det(2);
        assert!(pi.normalization_ok);
        assert_eq!(pi.eval(&[1.0, 0.0, 0.0, 1.0]), 2.0);
        for name in ["curl2:2", "curl2:2@box"] {
            let r = check_quasiaffine(&pi, &from_name(name).unwrap(), g, &[1.0, 0.0, 0.0, 1.0], 5, 3, 1).unwrap();
            assert!(r.pass, "{name}: {}", r.max_deviation);
        }
    }

    #[test]
    fn linear_and_control() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("div2").unwrap();
        let lin = check_quasiaffine(&QuasiaffineForm::linear(2, 0), &op, g, &[0.3, 0.1], 5, 3, 2).unwrap();
        assert!(lin.max_deviation <= 1e-12);
        let sq = check_quasiaffine(&QuasiaffineForm::squared_norm(2), &op, g, &[0.3, 0.1], 1, 3, 2).unwrap();
        assert!(sq.max_deviation > 1e-3);
        assert!(matches!(
            check_quasiaffine(&QuasiaffineForm::det(2), &from_name("curl2:2").unwrap(), g, &[1.0, 0.0, 0.0, 1.0], 1, 4, 0),
            Err(Error::AliasingRisk { .. })
        ));
    }

    proptest! {
        #[test]
        fn homogeneity(w in prop::collection::vec(-2.0f64..2.0, 9), t in -3.0f64..3.0) {
            for pi in [QuasiaffineForm::det(3), QuasiaffineForm::squared_norm(9), QuasiaffineForm::linear(9, 4)] {
                let tw: Vec<f64> = w.iter().map(|v| v * t).collect();
                let lhs = pi.eval(&tw);
                let rhs = t.powi(pi.degree as i32) * pi.eval(&w);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn det_normalization(w in prop::collection::vec(-2.0f64..2.0, 4)) {
            let pi = QuasiaffineForm::det(2);
            let r2: f64 = w.iter().map(|v| v * v).sum();
            prop_assert!(pi.eval(&w).abs() <= r2 * (1.0 + 1e-12));
        }
    }
}
