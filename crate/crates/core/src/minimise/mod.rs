//! Integral functionals `I(u) = ∫ f(x, u)` over A-free fields: integrands
//! with their growth envelopes, projected descent, and the comparison of a
//! minimiser with its truncations.

mod compare;
pub mod integrands;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraint::KernelProjector;
use crate::constraint::QuasiaffineForm;
use crate::constraint::DifferentialOperator;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::par;

pub use compare::{
    compare_sweep, compare_truncation, compare_truncation_mean, compare_truncation_mean_with, compare_truncation_with,
    CompareReport, CompareRow, MeanCompareRow, ENERGY_TOL,
};
pub use integrands::{
    BlockPattern, Heterogeneous, IntegrandConfig, LinearPerturbation, PLaplaceCoupled, PowerLaw, Quasiconformal,
};

/// Growth envelope `|w|^p - αΠ(w) ≤ f(x, w) ≤ ν|w|^p + c` and continuity
/// modulus `|f(x,w) - f(x,w')| ≤ L(1 + |w|^{p-1} + |w'|^{p-1})|w - w'|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    pub p: f64,
    pub nu: f64,
    pub c: f64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub pi: Option<QuasiaffineForm>,
}

impl GrowthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !(self.nu >= 1.0) || !(self.c >= 0.0) || !(self.alpha >= 0.0) || !(self.l >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid growth spec {self:?}")));
        }
        if self.alpha > 0.0 {
            match &self.pi {
                Some(pi) if (pi.degree as f64 - self.p).abs() < 1e-12 => {}
                _ => {
                    return Err(Error::InvalidInput(
                        "alpha > 0 needs a quasiaffine form of degree p".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    fn pi_at(&self, w: &[f64]) -> f64 {
        self.pi.as_ref().map_or(0.0, |pi| pi.eval(w))
    }
}

/// A measurable integrand `f(x, w)` with a subgradient selection in `w`.
pub trait Integrand: Send + Sync + std::fmt::Debug {
    fn name(&self) -> String;
    fn channels(&self) -> usize;
    fn spec(&self) -> GrowthSpec;
    fn eval(&self, x: &[f64], w: &[f64]) -> f64;
    fn subgrad(&self, x: &[f64], w: &[f64], out: &mut [f64]);
}

/// `I(u) = ∫ f(x, u(x)) dx` by the cell-centre rule.
pub fn evaluate_i(f: &dyn Integrand, u: &Field) -> Result<f64> {
    let vals = par::map_range(u.grid.len(), |i| f.eval(&u.grid.point(i), u.at(i)));
    let mut s = 0.0;
    for (cell, v) in vals.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::BadIntegrand { cell });
        }
        s += v;
    }
    Ok(s * u.grid.cell_measure())
}

fn subgrad_field(f: &dyn Integrand, u: &Field) -> Field {
    let m = u.channels;
    let rows = par::map_range(u.grid.len(), |i| {
        let mut out = vec![0.0; m];
        f.subgrad(&u.grid.point(i), u.at(i), &mut out);
        out
    });
    Field { grid: u.grid, channels: m, values: rows.concat() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthViolation {
    pub bound: String,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: usize,
    /// `min (f - (|w|^p - αΠ(w)))` over samples.
    pub lower_slack: f64,
    /// `min (ν|w|^p + c - f)` over samples.
    pub upper_slack: f64,
    /// Smallest sampled `|w|^p - αΠ(w)`; negative values break the coercivity defect bound.
    pub defect_min: f64,
    /// Largest sampled continuity quotient (the measured `L`).
    pub measured_l: f64,
    pub violations: Vec<GrowthViolation>,
    pub pass: bool,
}

/// Samples `(x, w, w')` with `|w|, |w'| ≤ radius` and checks the envelopes
/// (and the continuity bound when `L > 0`).
pub fn check_growth(f: &dyn Integrand, samples: usize, radius: f64, seed: u64) -> Result<GrowthReport> {
    if samples == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let spec = f.spec();
    let m = f.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut w: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let r = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let target = radius * rng.random::<f64>().powf(1.0 / m as f64);
        w.iter_mut().for_each(|v| *v *= target / r);
        w
    };
    let tol = |scale: f64| 1e-12 * (1.0 + scale);
    let mut rep = GrowthReport {
        samples,
        lower_slack: f64::INFINITY,
        upper_slack: f64::INFINITY,
        defect_min: f64::INFINITY,
        measured_l: 0.0,
        violations: Vec::new(),
        pass: true,
    };
    for _ in 0..samples {
        // Torus points in up to three dimensions; integrands read the leading coordinates.
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let w = draw(&mut rng);
        let w2 = draw(&mut rng);
        let fw = f.eval(&x, &w);
        let r = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rp = r.powf(spec.p);
        let lower = rp - spec.alpha * spec.pi_at(&w);
        let upper = spec.nu * rp + spec.c;
        rep.defect_min = rep.defect_min.min(lower);
        rep.lower_slack = rep.lower_slack.min(fw - lower);
        rep.upper_slack = rep.upper_slack.min(upper - fw);
        if fw < lower - tol(rp) {
            rep.violations.push(GrowthViolation { bound: "lower".into(), x: x.clone(), w: w.clone(), excess: lower - fw });
        }
        if fw > upper + tol(rp) {
            rep.violations.push(GrowthViolation { bound: "upper".into(), x: x.clone(), w: w.clone(), excess: fw - upper });
        }
        let dist = w.iter().zip(&w2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist > 0.0 {
            let r2 = w2.iter().map(|v| v * v).sum::<f64>().sqrt();
            let weight = (1.0 + r.powf(spec.p - 1.0) + r2.powf(spec.p - 1.0)) * dist;
            let q = (fw - f.eval(&x, &w2)).abs() / weight;
            rep.measured_l = rep.measured_l.max(q);
            if spec.l > 0.0 && q > spec.l * (1.0 + 1e-12) {
                rep.violations.push(GrowthViolation { bound: "continuity".into(), x, w, excess: q - spec.l });
            }
        }
    }
    rep.pass = rep.violations.is_empty();
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_iters: usize,
    /// Stop when the projected-gradient L² norm is below `tol (1 + |I|)`.
    pub tol: f64,
    pub initial_step: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_iters: 2000, tol: 1e-6, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimiserRun {
    #[serde(skip)]
    pub final_field: Option<Field>,
    pub objective: f64,
    pub iterations: usize,
    pub projected_grad_norm: f64,
    /// `‖A u‖₂ / max(‖u‖₂, 1)`.
    pub kernel_residual: f64,
    pub mean_error: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

impl MinimiserRun {
    pub fn field(&self) -> &Field {
        self.final_field.as_ref().expect("final field present")
    }
}

fn set_mean(u: &mut Field, target: &[f64]) {
    let m = u.mean();
    let shift: Vec<f64> = target.iter().zip(&m).map(|(t, c)| t - c).collect();
    u.add_constant(&shift);
}

/// Projected gradient descent with Armijo backtracking on `I`.
///
/// The iterate stays in the kernel of `op` with the prescribed mean (or the
/// mean of `init` when `mean` is `None`). Once the predicted decrease drops
/// below the rounding level of `I`, steps are accepted when they shrink the
/// projected gradient, so the history is monotone only up to rounding.
pub fn minimise(
    f: &dyn Integrand,
    op: &DifferentialOperator,
    mean: Option<&[f64]>,
    init: &Field,
    budget: &Budget,
) -> Result<MinimiserRun> {
    if init.channels != op.m || f.channels() != op.m {
        return Err(Error::IncompatibleOperator(format!(
            "operator has {} channels, integrand {}, field {}",
            op.m,
            f.channels(),
            init.channels
        )));
    }
    let target = match mean {
        Some(m) if m.len() == op.m && m.iter().all(|v| v.is_finite()) => m.to_vec(),
        Some(_) => return Err(Error::InvalidInput("mean constraint has the wrong length".into())),
        None => init.mean(),
    };
    let proj = KernelProjector::new(op, init.grid)?;
    let mut u = proj.project(init)?;
    set_mean(&mut u, &target);
    let mut obj = evaluate_i(f, &u)?;
    let mut history = vec![obj];
    let mut tau = budget.initial_step;
    let mut gnorm;
    let mut converged = false;
    let mut iterations = 0;
    let zero = vec![0.0; op.m];
    let projected = |u: &Field| -> Result<Field> {
        let mut pg = proj.project(&subgrad_field(f, u))?;
        set_mean(&mut pg, &zero);
        Ok(pg)
    };
    let mut pg = projected(&u)?;
    while iterations < budget.max_iters {
        gnorm = pg.lp_norm(2.0);
        if gnorm <= budget.tol * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let g2 = gnorm * gnorm;
        let mut accepted = false;
        while tau > 1e-30 {
            let cand = u.axpy(-tau, &pg);
            let val = evaluate_i(f, &cand)?;
            if val <= obj - 1e-4 * tau * g2 && val < obj {
                pg = projected(&cand)?;
                u = cand;
                obj = val;
                accepted = true;
                break;
            }
            // Below the resolution of `I` the decrease test is meaningless;
            // fall back to requiring a smaller projected gradient.
            if tau * g2 <= 1e-12 * (1.0 + obj.abs()) && val <= obj + 1e-14 * (1.0 + obj.abs()) {
                let pc = projected(&cand)?;
                if pc.lp_norm(2.0) < gnorm {
                    pg = pc;
                    u = cand;
                    obj = val;
                    accepted = true;
                    break;
                }
            }
            tau *= 0.5;
        }
        history.push(obj);
        if !accepted {
            break;
        }
        tau = (tau * 2.0).min(1e6);
    }
    gnorm = pg.lp_norm(2.0);
    converged = converged || gnorm <= budget.tol * (1.0 + obj.abs());
    let kernel_residual = op.apply(&u)?.lp_norm(2.0) / u.lp_norm(2.0).max(1.0);
    let mean_error = u.mean().iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(MinimiserRun {
        final_field: Some(u),
        objective: obj,
        iterations,
        projected_grad_norm: gnorm,
        kernel_residual,
        mean_error,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::from_name;
    use crate::constraint::random_test_field;
    use crate::field::TorusGrid;
    use std::sync::Arc;

    #[test]
    fn evaluation_examples() {
        let g = TorusGrid::new(2, 4).unwrap();
        let u = Field::constant(g, &[2.0, 0.0]);
        assert!((evaluate_i(&PowerLaw { p: 2.0, m: 2 }, &u).unwrap() - 4.0).abs() < 1e-14);
        let qc = Quasiconformal { n: 2, k: 2.0 };
        assert!(qc.eval(&[0.3], &[1.0, 0.0, 0.0, 1.0]).abs() < 1e-14);
        let pl = PLaplaceCoupled { n: 2, p: 3.0 };
        let e = [0.7f64, -1.3];
        let r = (e[0] * e[0] + e[1] * e[1]).sqrt();
        let w = [e[0], e[1], r * e[0], r * e[1]];
        assert!(pl.eval(&[0.0], &w).abs() < 1e-12);
        #[derive(Debug)]
        struct Nan;
        impl Integrand for Nan {
            fn name(&self) -> String { "nan".into() }
            fn channels(&self) -> usize { 2 }
            fn spec(&self) -> GrowthSpec { PowerLaw { p: 2.0, m: 2 }.spec() }
            fn eval(&self, _: &[f64], _: &[f64]) -> f64 { f64::NAN }
            fn subgrad(&self, _: &[f64], _: &[f64], _: &mut [f64]) {}
        }
        assert!(matches!(evaluate_i(&Nan, &u), Err(Error::BadIntegrand { cell: 0 })));
    }

    #[test]
    fn subgradients_match_finite_differences() {
        let fs: Vec<Arc<dyn Integrand>> = vec![
            Arc::new(PowerLaw { p: 3.0, m: 3 }),
            Arc::new(Heterogeneous::new(2.5, 3, BlockPattern::checker(2, 2, 1.0, 3.0), Some(BlockPattern::constant(2, 0.7))).unwrap()),
            Arc::new(Quasiconformal { n: 3, k: 2.0 }),
            Arc::new(PLaplaceCoupled { n: 2, p: 2.5 }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in fs {
            let m = f.channels();
            for _ in 0..20 {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                let w: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut g = vec![0.0; m];
                f.subgrad(&x, &w, &mut g);
                for k in 0..m {
                    let h = 1e-6;
                    let mut a = w.clone();
                    let mut b = w.clone();
                    a[k] += h;
                    b[k] -= h;
                    let fd = (f.eval(&x, &a) - f.eval(&x, &b)) / (2.0 * h);
                    if f.eval(&x, &w) > 1e-6 || f.name().starts_with("power") {
                        assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{} {k}: {fd} vs {}", f.name(), g[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn growth_checks() {
        let ok = check_growth(&PowerLaw { p: 2.0, m: 2 }, 500, 3.0, 1).unwrap();
        assert!(ok.pass && ok.lower_slack >= -1e-12);
        let qc = check_growth(&Quasiconformal { n: 2, k: 2.0 }, 2000, 3.0, 2).unwrap();
        assert!(qc.pass, "{:?}", qc.violations.first());
        assert!(qc.defect_min >= -1e-12);
        assert!(qc.measured_l <= 4.0);
        #[derive(Debug)]
        struct Doubled;
        impl Integrand for Doubled {
            fn name(&self) -> String { "2|w|^2".into() }
            fn channels(&self) -> usize { 2 }
            fn spec(&self) -> GrowthSpec { PowerLaw { p: 2.0, m: 2 }.spec() }
            fn eval(&self, _: &[f64], w: &[f64]) -> f64 { 2.0 * (w[0] * w[0] + w[1] * w[1]) }
            fn subgrad(&self, _: &[f64], w: &[f64], o: &mut [f64]) { o[0] = 4.0 * w[0]; o[1] = 4.0 * w[1]; }
        }
        let bad = check_growth(&Doubled, 100, 2.0, 3).unwrap();
        assert!(!bad.pass && bad.violations.iter().any(|v| v.bound == "upper"));
        let het = Heterogeneous::new(2.0, 2, BlockPattern::seeded(2, 3, 1.0, 4.0, 9), Some(BlockPattern::constant(2, 0.5))).unwrap();
        assert!(check_growth(&het, 1000, 5.0, 4).unwrap().pass);
        let g = crate::samples::random_smooth(TorusGrid::new(2, 8).unwrap(), 2, 5, 2);
        for p in [1.5, 2.0, 3.0] {
            let forced = LinearPerturbation::new(Arc::new(PowerLaw { p, m: 2 }), g.clone()).unwrap();
            let rep = check_growth(&forced, 1000, 4.0, 6).unwrap();
            assert!(rep.pass, "p = {p}: {:?}", rep.violations.first());
        }
    }

    #[test]
    fn constants_minimise_quadratic() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("div2@box").unwrap();
        let f = PowerLaw { p: 2.0, m: 2 };
        let init = random_test_field(&op, g, 5, 4).unwrap();
        let run = minimise(&f, &op, Some(&[1.0, 0.0]), &init, &Budget::default()).unwrap();
        assert!(run.converged);
        assert!((run.objective - 1.0).abs() < 1e-10);
        assert!(run.field().values.chunks(2).all(|w| (w[0] - 1.0).abs() < 1e-6 && w[1].abs() < 1e-6));
        assert!(run.history.windows(2).all(|h| h[1] <= h[0] + 1e-13 * (1.0 + h[0].abs())));
        let run = minimise(&f, &op, Some(&[0.0, 0.0]), &init, &Budget::default()).unwrap();
        assert!(run.objective < 1e-12 && run.kernel_residual <= 1e-8 && run.mean_error <= 1e-8);
    }

    #[test]
    fn quasiconformal_descends_to_conformal_matrix() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("curl2:2@box").unwrap();
        let f = Quasiconformal { n: 2, k: 2.0 };
        let u0 = [0.8, -0.6, 0.6, 0.8];
        let init = random_test_field(&op, g, 8, 3).unwrap();
        let budget = Budget { tol: 1e-9, ..Budget::default() };
        let run = minimise(&f, &op, Some(&u0), &init, &budget).unwrap();
        assert!(run.objective <= 1e-8, "{}", run.objective);
        assert!(run.history.windows(2).all(|h| h[1] <= h[0] + 1e-13 * (1.0 + h[0].abs())));
        assert!(run.kernel_residual <= 1e-8);
    }

    #[test]
    fn heterogeneous_minimiser_is_stationary() {
        let g = TorusGrid::new(2, 16).unwrap();
        let op = from_name("div2@box").unwrap();
        let f = Heterogeneous::new(2.0, 2, BlockPattern::checker(2, 4, 1.0, 4.0), None).unwrap();
        let init = Field::constant(g, &[1.0, 0.0]);
        let budget = Budget { tol: 1e-10, max_iters: 5000, ..Budget::default() };
        let run = minimise(&f, &op, Some(&[1.0, 0.0]), &init, &budget).unwrap();
        assert!(run.converged);
        assert!(run.objective < evaluate_i(&f, &init).unwrap());
        let u = run.field();
        assert!(u.values.chunks(2).any(|w| (w[0] - 1.0).abs() > 1e-3));
    }
}
