//! Gauss rules on the unit segment and collapsed (Duffy) Gauss rules on the
//! reference triangle with vertices (0,0), (1,0), (0,1).

use crate::error::{Error, Result};

/// Largest exactness degree accepted by [`quadrature_rule`].
pub const MAX_EXACTNESS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefDomain {
    Segment,
    Triangle,
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Reference coordinates; segment rules only use the first component.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

pub fn quadrature_rule(domain: RefDomain, exactness: usize) -> Result<QuadratureRule> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::QuadratureDegree {
            requested: exactness,
            max: MAX_EXACTNESS,
        });
    }
    Ok(match domain {
        RefDomain::Segment => {
            let n = exactness / 2 + 1;
            let (x, w) = gauss_legendre(n);
            QuadratureRule {
                points: x.into_iter().map(|t| [t, 0.0]).collect(),
                weights: w,
                exactness,
            }
        }
        RefDomain::Triangle => {
            // the collapse adds one degree in the first direction
            let n = (exactness + 3) / 2;
            let (x, w) = gauss_legendre(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for (s, ws) in x.iter().zip(&w) {
                for (t, wt) in x.iter().zip(&w) {
                    points.push([*s, t * (1.0 - s)]);
                    weights.push(ws * wt * (1.0 - s));
                }
            }
            QuadratureRule {
                points,
                weights,
                exactness,
            }
        }
    })
}
