use super::{Coefficient, DifferentialOperator, MultiIndex, Scheme};
use crate::error::{Error, Result};

fn unit_coefficients(n: usize, l: usize, m: usize) -> Vec<Coefficient> {
    (0..n)
        .map(|j| Coefficient { alpha: MultiIndex::unit(n, j), matrix: vec![vec![0.0; m]; l] })
        .collect()
}

/// Row-wise divergence of `rows × n` matrix fields (`rows = 1`: vector fields).
pub fn div(n: usize, rows: usize) -> DifferentialOperator {
    let (m, l) = (rows * n, rows);
    let mut coefs = unit_coefficients(n, l, m);
    for (j, c) in coefs.iter_mut().enumerate() {
        for r in 0..rows {
            c.matrix[r][r * n + j] = 1.0;
        }
    }
    let name = if rows == 1 { format!("div{n}") } else { format!("div{n}:{rows}") };
    DifferentialOperator::new(name, n, m, l, coefs).expect("valid built-in")
}

/// Row-wise curl: component `(r, a<b)` is `∂_a u_{r,b} - ∂_b u_{r,a}`.
pub fn curl(n: usize, rows: usize) -> DifferentialOperator {
    assert!(n >= 2, "curl needs at least two dimensions");
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let (m, l) = (rows * n, rows * pairs.len());
    let mut coefs = unit_coefficients(n, l, m);
    for r in 0..rows {
        for (q, &(a, b)) in pairs.iter().enumerate() {
            let out = r * pairs.len() + q;
            coefs[a].matrix[out][r * n + b] = 1.0;
            coefs[b].matrix[out][r * n + a] = -1.0;
        }
    }
    let name = if rows == 1 { format!("curl{n}") } else { format!("curl{n}:{rows}") };
    DifferentialOperator::new(name, n, m, l, coefs).expect("valid built-in")
}

/// `A(ε, σ) = (curl ε, div σ)` on `m = 2n` channels.
pub fn coupled(n: usize) -> DifferentialOperator {
    let c = curl(n, 1);
    let d = div(n, 1);
    let (m, l) = (2 * n, c.l + 1);
    let mut coefs = unit_coefficients(n, l, m);
    for j in 0..n {
        for i in 0..c.l {
            for k in 0..n {
                coefs[j].matrix[i][k] = c.coefficients[j].matrix[i][k];
            }
        }
        coefs[j].matrix[c.l][n + j] = d.coefficients[j].matrix[0][j];
    }
    DifferentialOperator::new("plap-coupled", n, m, l, coefs).expect("valid built-in")
}

/// Parses `div2`, `div3`, `curl2`, `curl3` or `plap-coupled`, optionally
/// followed by `:R` (row count for matrix fields) and `@box` (box scheme).
pub fn from_name(spec: &str) -> Result<DifferentialOperator> {
    let (base, scheme) = match spec.strip_suffix("@box") {
        Some(b) => (b, Scheme::Box),
        None => (spec, Scheme::Spectral),
    };
    let (base, rows) = match base.split_once(':') {
        Some((b, r)) => {
            let rows: usize = r
                .parse()
                .ok()
                .filter(|&r| r >= 1)
                .ok_or_else(|| Error::InvalidInput(format!("bad row count in '{spec}'")))?;
            (b, rows)
        }
        None => (base, 1),
    };
    let op = match base {
        "div2" => div(2, rows),
        "div3" => div(3, rows),
        "curl2" => curl(2, rows),
        "curl3" => curl(3, rows),
        "plap-coupled" if rows == 1 => coupled(2),
        _ => return Err(Error::InvalidInput(format!("unknown operator '{spec}'"))),
    };
    let mut op = op.with_scheme(scheme);
    op.name = spec.to_string();
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let c = from_name("curl3:3@box").unwrap();
        assert_eq!((c.n, c.m, c.l, c.scheme), (3, 9, 9, Scheme::Box));
        let p = from_name("plap-coupled").unwrap();
        assert_eq!((p.n, p.m, p.l), (2, 4, 2));
        assert!(from_name("grad2").is_err());
        assert!(from_name("div2:0").is_err());
    }
}
