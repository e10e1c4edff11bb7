//! Polynomial bases on the reference triangle, stored as coefficient vectors
//! over the centred monomials `u^a v^b`, `a + b <= degree`, with
//! `u = S (xi - 1/3)` and `v = S (eta - 1/3)`. Centring keeps the monomial
//! Gram matrix well conditioned up to moderate degrees.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use super::quadrature::{quadrature_rule, RefDomain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// L2-orthonormal on the reference triangle.
    Orthonormal,
    /// Nodal basis on the equispaced lattice.
    Lagrange,
}

/// Value, gradient and Hessian `[xx, xy, yy]` of one function at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub degree: usize,
    pub kind: BasisKind,
    monomials: Vec<(i32, i32)>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: Vec<Vec<f64>>,
    /// Lattice nodes `(i, j)` with reference coordinates `(i/p, j/p)`; Lagrange only.
    pub nodes: Vec<(usize, usize)>,
}

pub fn dim_p(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

fn monomials(degree: usize) -> Vec<(i32, i32)> {
    let mut m = Vec::with_capacity(dim_p(degree));
    for d in 0..=degree as i32 {
        for b in 0..=d {
            m.push((d - b, b));
        }
    }
    m
}

const CENTRE: f64 = 1.0 / 3.0;
const S: f64 = 1.5;

fn pow(x: f64, n: i32) -> f64 {
    if n < 0 {
        0.0
    } else {
        x.powi(n)
    }
}

impl ReferenceBasis {
    pub fn new(kind: BasisKind, degree: usize) -> Result<Self> {
        let monos = monomials(degree);
        let n = monos.len();
        match kind {
            BasisKind::Orthonormal => {
                // Gram matrix of the centred monomials by an exact rule
                let rule = quadrature_rule(RefDomain::Triangle, 2 * degree)?;
                let mut g = vec![0.0; n * n];
                for (xi, w) in rule.points.iter().zip(&rule.weights) {
                    let vals: Vec<f64> = monos
                        .iter()
                        .map(|&(a, b)| pow(S * (xi[0] - CENTRE), a) * pow(S * (xi[1] - CENTRE), b))
                        .collect();
                    for i in 0..n {
                        for j in 0..n {
                            g[i * n + j] += w * vals[i] * vals[j];
                        }
                    }
                }
                let gram = |u: &[f64], v: &[f64]| -> f64 {
                    let mut s = 0.0;
                    for i in 0..n {
                        if u[i] == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            s += u[i] * v[j] * g[i * n + j];
                        }
                    }
                    s
                };
                let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(n);
                for k in 0..n {
                    let mut v = vec![0.0; n];
                    v[k] = 1.0;
                    // two passes of modified Gram-Schmidt
                    for _ in 0..2 {
                        for q in &coeffs {
                            let r = gram(q, &v);
                            v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= r * qi);
                        }
                    }
                    let nrm = gram(&v, &v).sqrt();
                    v.iter_mut().for_each(|vi| *vi /= nrm);
                    coeffs.push(v);
                }
                Ok(ReferenceBasis {
                    degree,
                    kind,
                    monomials: monos,
                    coeffs,
                    nodes: Vec::new(),
                })
            }
            BasisKind::Lagrange => {
                if degree == 0 {
                    return Err(Error::SpaceConfig("Lagrange basis needs degree >= 1".into()));
                }
                let nodes = lattice_nodes(degree);
                let p = degree as f64;
                // V[node][mono]; coefficient matrix C solves C V^T = I
                let vt = Mat::<f64>::from_fn(n, n, |m, k| {
                    let (i, j) = nodes[k];
                    let (a, b) = monos[m];
                    pow(S * (i as f64 / p - CENTRE), a) * pow(S * (j as f64 / p - CENTRE), b)
                });
                let inv = vt.partial_piv_lu().inverse();
                let coeffs = (0..n).map(|k| (0..n).map(|m| inv[(k, m)]).collect()).collect();
                Ok(ReferenceBasis {
                    degree,
                    kind,
                    monomials: monos,
                    coeffs,
                    nodes,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Evaluates all basis functions up to the requested derivative order.
    pub fn eval(&self, xi: [f64; 2], order: usize) -> Result<Vec<Jet>> {
        if order > 2 {
            return Err(Error::DerivativeOrder(order));
        }
        Ok(self.eval_all(xi))
    }

    /// Values, gradients and Hessians of all basis functions at `xi`.
    pub fn eval_all(&self, xi: [f64; 2]) -> Vec<Jet> {
        let (x, y) = (S * (xi[0] - CENTRE), S * (xi[1] - CENTRE));
        let (s1, s2) = (S, S * S);
        let mono: Vec<Jet> = self
            .monomials
            .iter()
            .map(|&(a, b)| {
                let (af, bf) = (a as f64, b as f64);
                Jet {
                    value: pow(x, a) * pow(y, b),
                    grad: [s1 * af * pow(x, a - 1) * pow(y, b), s1 * bf * pow(x, a) * pow(y, b - 1)],
                    hess: [
                        s2 * af * (af - 1.0) * pow(x, a - 2) * pow(y, b),
                        s2 * af * bf * pow(x, a - 1) * pow(y, b - 1),
                        s2 * bf * (bf - 1.0) * pow(x, a) * pow(y, b - 2),
                    ],
                }
            })
            .collect();
        self.coeffs
            .iter()
            .map(|c| {
                let mut j = Jet::default();
                for (ci, m) in c.iter().zip(&mono) {
                    j.value += ci * m.value;
                    j.grad[0] += ci * m.grad[0];
                    j.grad[1] += ci * m.grad[1];
                    j.hess[0] += ci * m.hess[0];
                    j.hess[1] += ci * m.hess[1];
                    j.hess[2] += ci * m.hess[2];
                }
                j
            })
            .collect()
    }
}

/// Lattice `(i, j)`, `i + j <= p`: vertices first (in local vertex order), then
/// edge interiors (local edge order, running counterclockwise), then interior nodes.
pub fn lattice_nodes(p: usize) -> Vec<(usize, usize)> {
    let mut nodes = vec![(0, 0), (p, 0), (0, p)];
    // edge 0: v1 -> v2, edge 1: v2 -> v0, edge 2: v0 -> v1
    for t in 1..p {
        nodes.push((p - t, t));
    }
    for t in 1..p {
        nodes.push((0, p - t));
    }
    for t in 1..p {
        nodes.push((t, 0));
    }
    for j in 1..p {
        for i in 1..p - j {
            nodes.push((i, j));
        }
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::quadrature::{quadrature_rule, RefDomain};

    #[test]
    fn orthonormal_on_reference() {
        for p in 0..=5 {
            let b = ReferenceBasis::new(BasisKind::Orthonormal, p).unwrap();
            let q = quadrature_rule(RefDomain::Triangle, 2 * p).unwrap();
            let n = b.len();
            let mut g = vec![0.0; n * n];
            for (x, w) in q.points.iter().zip(&q.weights) {
                let v = b.eval_all(*x);
                for i in 0..n {
                    for j in 0..n {
                        g[i * n + j] += w * v[i].value * v[j].value;
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    // monomial Gram-Schmidt loses digits as the degree grows
                    let tol = if p <= 3 { 1e-13 } else { 1e-10 };
                    assert!((g[i * n + j] - e).abs() < tol, "p={p} ({i},{j}) {}", g[i * n + j]);
                }
            }
        }
    }

    #[test]
    fn lagrange_is_nodal() {
        for p in 1..=4 {
            let b = ReferenceBasis::new(BasisKind::Lagrange, p).unwrap();
            assert_eq!(b.nodes.len(), dim_p(p));
            for (k, &(i, j)) in b.nodes.iter().enumerate() {
                let v = b.eval_all([i as f64 / p as f64, j as f64 / p as f64]);
                for (m, jet) in v.iter().enumerate() {
                    let e = if m == k { 1.0 } else { 0.0 };
                    assert!((jet.value - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn order_three_rejected() {
        let b = ReferenceBasis::new(BasisKind::Lagrange, 2).unwrap();
        assert!(matches!(b.eval([0.2, 0.2], 3), Err(Error::DerivativeOrder(3))));
    }
}
