use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GrowthSpec, Integrand};
use crate::constraint::{det, QuasiaffineForm};
use crate::error::{Error, Result};
use crate::field::Field;

fn norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `|w|^p` with its gradient `p |w|^{p-2} w` (zero at the origin).
fn power_grad(w: &[f64], p: f64, scale: f64, out: &mut [f64]) {
    let r = norm(w);
    let k = if r > 0.0 { scale * p * r.powf(p - 2.0) } else { 0.0 };
    for (o, v) in out.iter_mut().zip(w) {
        *o = k * v;
    }
}

/// Piecewise-constant coefficient on a `blocks^n` partition of the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPattern {
    pub dim: usize,
    pub blocks: usize,
    /// Row-major over blocks, last axis fastest.
    pub values: Vec<f64>,
}

impl BlockPattern {
    pub fn new(dim: usize, blocks: usize, values: Vec<f64>) -> Result<Self> {
        if blocks == 0 || values.len() != blocks.pow(dim as u32) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "block pattern needs {} finite values",
                blocks.pow(dim as u32)
            )));
        }
        Ok(Self { dim, blocks, values })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self { dim, blocks: 1, values: vec![value] }
    }

    /// Alternates `lo` and `hi` between neighbouring blocks.
    pub fn checker(dim: usize, blocks: usize, lo: f64, hi: f64) -> Self {
        let values = (0..blocks.pow(dim as u32))
            .map(|b| {
                let mut rem = b;
                let mut parity = 0;
                for _ in 0..dim {
                    parity += rem % blocks;
                    rem /= blocks;
                }
                if parity % 2 == 0 { lo } else { hi }
            })
            .collect();
        Self { dim, blocks, values }
    }

    /// Independent uniform values in `[lo, hi]`.
    pub fn seeded(dim: usize, blocks: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..blocks.pow(dim as u32)).map(|_| rng.random_range(lo..=hi)).collect();
        Self { dim, blocks, values }
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        for &xa in x.iter().take(self.dim) {
            let f = xa.rem_euclid(1.0);
            let b = ((f * self.blocks as f64).floor() as usize).min(self.blocks - 1);
            idx = idx * self.blocks + b;
        }
        self.values[idx]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `f(w) = |w|^p`.
#[derive(Debug, Clone)]
pub struct PowerLaw {
    pub p: f64,
    pub m: usize,
}

impl Integrand for PowerLaw {
    fn name(&self) -> String {
        format!("power(p={})", self.p)
    }
    fn channels(&self) -> usize {
        self.m
    }
    fn spec(&self) -> GrowthSpec {
        GrowthSpec { p: self.p, nu: 1.0, c: 0.0, alpha: 0.0, l: self.p, pi: None }
    }
    fn eval(&self, _x: &[f64], w: &[f64]) -> f64 {
        norm(w).powf(self.p)
    }
    fn subgrad(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        power_grad(w, self.p, 1.0, out)
    }
}

/// `f(x, w) = a(x) |w|^p + b(x) (1 - cos w_1)` with piecewise-constant `a ≥ 1`, `b ≥ 0`.
#[derive(Debug, Clone)]
pub struct Heterogeneous {
    pub p: f64,
    pub m: usize,
    pub a: BlockPattern,
    pub b: Option<BlockPattern>,
}

impl Heterogeneous {
    pub fn new(p: f64, m: usize, a: BlockPattern, b: Option<BlockPattern>) -> Result<Self> {
        if a.min() < 1.0 {
            return Err(Error::InvalidInput("coefficient a must be at least 1".into()));
        }
        if b.as_ref().is_some_and(|b| b.min() < 0.0) {
            return Err(Error::InvalidInput("coefficient b must be nonnegative".into()));
        }
        Ok(Self { p, m, a, b })
    }
}

impl Integrand for Heterogeneous {
    fn name(&self) -> String {
        "heterogeneous".into()
    }
    fn channels(&self) -> usize {
        self.m
    }
    fn spec(&self) -> GrowthSpec {
        let bmax = self.b.as_ref().map_or(0.0, |b| b.max());
        GrowthSpec {
            p: self.p,
            nu: self.a.max(),
            c: 2.0 * bmax,
            alpha: 0.0,
            l: (self.p * self.a.max()).max(bmax),
            pi: None,
        }
    }
    fn eval(&self, x: &[f64], w: &[f64]) -> f64 {
        let extra = self.b.as_ref().map_or(0.0, |b| b.at(x) * (1.0 - w[0].cos()));
        self.a.at(x) * norm(w).powf(self.p) + extra
    }
    fn subgrad(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        power_grad(w, self.p, self.a.at(x), out);
        if let Some(b) = &self.b {
            out[0] += b.at(x) * w[0].sin();
        }
    }
}

/// `f(A) = max{0, |A|^n - K det A}` on `n × n` matrices (row-major).
#[derive(Debug, Clone)]
pub struct Quasiconformal {
    pub n: usize,
    pub k: f64,
}

impl Integrand for Quasiconformal {
    fn name(&self) -> String {
        format!("quasiconformal(n={}, K={})", self.n, self.k)
    }
    fn channels(&self) -> usize {
        self.n * self.n
    }
    fn spec(&self) -> GrowthSpec {
        let n = self.n as f64;
        let hadamard = n.powf(n / 2.0);
        GrowthSpec {
            p: n,
            nu: 1.0 + self.k / hadamard,
            c: 0.0,
            alpha: self.k / hadamard,
            l: n + self.k,
            pi: Some(QuasiaffineForm::det(self.n)),
        }
    }
    fn eval(&self, _x: &[f64], w: &[f64]) -> f64 {
        (norm(w).powi(self.n as i32) - self.k * det(self.n, w)).max(0.0)
    }
    fn subgrad(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        if norm(w).powi(n as i32) - self.k * det(n, w) <= 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        power_grad(w, n as f64, 1.0, out);
        let cof = cofactor(n, w);
        for (o, c) in out.iter_mut().zip(cof) {
            *o -= self.k * c;
        }
    }
}

/// Cofactor matrix (gradient of the determinant), row-major.
pub fn cofactor(n: usize, w: &[f64]) -> Vec<f64> {
    match n {
        1 => vec![1.0],
        2 => vec![w[3], -w[2], -w[1], w[0]],
        _ => {
            let mut out = vec![0.0; n * n];
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for i in 0..n {
                for j in 0..n {
                    let mut k = 0;
                    for a in (0..n).filter(|&a| a != i) {
                        for b in (0..n).filter(|&b| b != j) {
                            minor[k] = w[a * n + b];
                            k += 1;
                        }
                    }
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    out[i * n + j] = sign * det(n - 1, &minor);
                }
            }
            out
        }
    }
}

/// `f(ε, σ) = |ε|^p / p + |σ|^q / q - ε·σ` with `q = p'`, for `w = (ε, σ)`.
///
/// Nonnegative by Young's inequality but not `p`-coercive in `σ`; it is used
/// for evaluation and the Fenchel identity, not with the growth checks.
#[derive(Debug, Clone)]
pub struct PLaplaceCoupled {
    pub n: usize,
    pub p: f64,
}

impl PLaplaceCoupled {
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

impl Integrand for PLaplaceCoupled {
    fn name(&self) -> String {
        format!("plap-coupled(p={})", self.p)
    }
    fn channels(&self) -> usize {
        2 * self.n
    }
    fn spec(&self) -> GrowthSpec {
        GrowthSpec { p: self.p, nu: 1.0, c: 0.0, alpha: 0.0, l: 0.0, pi: None }
    }
    fn eval(&self, _x: &[f64], w: &[f64]) -> f64 {
        let (e, s) = w.split_at(self.n);
        let dot: f64 = e.iter().zip(s).map(|(a, b)| a * b).sum();
        norm(e).powf(self.p) / self.p + norm(s).powf(self.q()) / self.q() - dot
    }
    fn subgrad(&self, _x: &[f64], w: &[f64], out: &mut [f64]) {
        let (e, s) = w.split_at(self.n);
        let (oe, os) = out.split_at_mut(self.n);
        power_grad(e, self.p, 1.0 / self.p, oe);
        power_grad(s, self.q(), 1.0 / self.q(), os);
        for i in 0..self.n {
            oe[i] -= s[i];
            os[i] -= e[i];
        }
    }
}

/// Forced integrand `2 f(x, w) + g(x)·w + K` with `K = (p-1)(‖g‖_∞/p)^{p/(p-1)}`.
///
/// Doubling `f` and adding `K` keeps the lower bound `|w|^p - αΠ(w) ≤ ·`
/// intact, since `|w|^p + g·w + K ≥ 0` by Young's inequality. Minimisers are
/// those of `f + g·w/2`.
#[derive(Debug, Clone)]
pub struct LinearPerturbation {
    pub base: Arc<dyn Integrand>,
    pub g: Field,
    g_max: f64,
    shift: f64,
}

impl LinearPerturbation {
    pub fn new(base: Arc<dyn Integrand>, g: Field) -> Result<Self> {
        if g.channels != base.channels() {
            return Err(Error::InvalidInput("forcing field has the wrong channel count".into()));
        }
        let p = base.spec().p;
        let g_max = g.linf();
        let shift = (p - 1.0) * (g_max / p).powf(p / (p - 1.0));
        Ok(Self { base, g, g_max, shift })
    }

    fn cell(&self, x: &[f64]) -> usize {
        let n = self.g.grid.resolution;
        let coords: Vec<usize> = x
            .iter()
            .take(self.g.grid.dim)
            .map(|&xa| ((xa.rem_euclid(1.0) * n as f64).floor() as usize).min(n - 1))
            .collect();
        self.g.grid.index(&coords)
    }
}

impl Integrand for LinearPerturbation {
    fn name(&self) -> String {
        format!("{}+linear", self.base.name())
    }
    fn channels(&self) -> usize {
        self.base.channels()
    }
    fn spec(&self) -> GrowthSpec {
        let b = self.base.spec();
        GrowthSpec {
            nu: 2.0 * b.nu + 1.0,
            c: 2.0 * (b.c + self.shift),
            alpha: 2.0 * b.alpha,
            l: 2.0 * b.l + self.g_max,
            ..b
        }
    }
    fn eval(&self, x: &[f64], w: &[f64]) -> f64 {
        let g = self.g.at(self.cell(x));
        2.0 * self.base.eval(x, w) + g.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.shift
    }
    fn subgrad(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        self.base.subgrad(x, w, out);
        for (o, g) in out.iter_mut().zip(self.g.at(self.cell(x))) {
            *o = 2.0 * *o + g;
        }
    }
}

/// Integrand description for JSON files and the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntegrandConfig {
    Power { p: f64 },
    Heterogeneous { p: f64, a: BlockPattern, b: Option<BlockPattern> },
    Quasiconformal { k: f64 },
    PlapCoupled { p: f64 },
}

impl IntegrandConfig {
    /// Parses `power[:p]`, `heterogeneous[:nu]`, `quasiconformal[:K]` or
    /// `plap-coupled[:p]`, or reads a JSON file.
    pub fn load(spec: &str, n: usize) -> Result<Self> {
        let path = std::path::Path::new(spec);
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(path)?;
            return Ok(serde_json::from_str(&text)?);
        }
        let (name, arg) = match spec.split_once(':') {
            Some((a, b)) => {
                let v: f64 = b.parse().map_err(|_| Error::InvalidInput(format!("bad parameter in '{spec}'")))?;
                (a, Some(v))
            }
            None => (spec, None),
        };
        Ok(match name {
            "power" => Self::Power { p: arg.unwrap_or(2.0) },
            "heterogeneous" => {
                let nu = arg.unwrap_or(4.0);
                Self::Heterogeneous { p: 2.0, a: BlockPattern::checker(n, 4, 1.0, nu), b: None }
            }
            "quasiconformal" => Self::Quasiconformal { k: arg.unwrap_or(2.0) },
            "plap-coupled" => Self::PlapCoupled { p: arg.unwrap_or(3.0) },
            _ => return Err(Error::InvalidInput(format!("unknown integrand '{spec}'"))),
        })
    }

    /// Builds the integrand for fields with `m` channels on an `n`-torus.
    pub fn build(&self, n: usize, m: usize) -> Result<Arc<dyn Integrand>> {
        Ok(match self {
            Self::Power { p } => Arc::new(PowerLaw { p: *p, m }),
            Self::Heterogeneous { p, a, b } => Arc::new(Heterogeneous::new(*p, m, a.clone(), b.clone())?),
            Self::Quasiconformal { k } => {
                if m != n * n {
                    return Err(Error::IncompatibleOperator(format!(
                        "quasiconformal integrand needs {} channels, operator has {m}",
                        n * n
                    )));
                }
                Arc::new(Quasiconformal { n, k: *k })
            }
            Self::PlapCoupled { p } => {
                if m != 2 * n {
                    return Err(Error::IncompatibleOperator("plap-coupled needs 2n channels".into()));
                }
                Arc::new(PLaplaceCoupled { n, p: *p })
            }
        })
    }
}
