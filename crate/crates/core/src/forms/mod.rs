//! Lifting operators, the lifted Hessian and Laplacian, the stabilisation form
//! `S_k` (facewise and lifted), the jump penalty `J_k`, and the mesh-dependent
//! norm and jump seminorm.
//!
//! Jumps follow the face normal: `[v] = v_minus - v_plus` on interior faces,
//! where the normal points out of the minus side, and `[v] = v_minus` on the
//! boundary. Averages are one half of the sum on interior faces and the
//! interior trace on the boundary.

mod assembly;

pub use assembly::{frozen_jacobian, nonlinear_residual, Discretization, FgSample};

use serde::{Deserialize, Serialize};

use crate::cordes::Sym2;
use crate::error::{Error, Result};
use crate::fespace::{Continuity, DiscreteFunction, FeSpace, Jet, SpaceConfig};
use crate::mesh::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormParams {
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl FormParams {
    /// `theta = 1/2`, `sigma = 10 p^2`, and `rho = 10 p^4` for DG or `0` for C0.
    pub fn defaults(config: &SpaceConfig) -> Self {
        let p = config.p as f64;
        FormParams {
            theta: 0.5,
            sigma: 10.0 * p * p,
            rho: match config.continuity {
                Continuity::Dg => 10.0 * p.powi(4),
                Continuity::C0 => 0.0,
            },
        }
    }

    pub fn validate(&self, continuity: Continuity) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::FormParams(format!("theta = {} not in [0, 1]", self.theta)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::FormParams(format!("sigma = {} must be positive", self.sigma)));
        }
        match continuity {
            Continuity::Dg if !(self.rho > 0.0) => {
                Err(Error::FormParams(format!("rho = {} must be positive for DG", self.rho)))
            }
            Continuity::C0 if !(self.rho >= 0.0) => {
                Err(Error::FormParams(format!("rho = {} must be nonnegative", self.rho)))
            }
            _ => Ok(()),
        }
    }
}

/// Jump of the value, jump of the gradient and average of the Hessian at one
/// face quadrature point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaceData {
    pub jump: f64,
    pub jump_grad: [f64; 2],
    pub avg_hess: Sym2,
}

impl FaceData {
    /// Contribution of a single-sided jet: sign `+1` on the minus side,
    /// `-1` on the plus side; average weight `1/2` inside, `1` on the boundary.
    pub fn one_sided(j: &Jet, sign: f64, weight: f64) -> Self {
        FaceData {
            jump: sign * j.value,
            jump_grad: [sign * j.grad[0], sign * j.grad[1]],
            avg_hess: Sym2::from_array(j.hess).scale(weight),
        }
    }

    pub fn from_traces(minus: &Jet, plus: Option<&Jet>) -> Self {
        match plus {
            None => FaceData::one_sided(minus, 1.0, 1.0),
            Some(p) => FaceData {
                jump: minus.value - p.value,
                jump_grad: [minus.grad[0] - p.grad[0], minus.grad[1] - p.grad[1]],
                avg_hess: Sym2::new(
                    0.5 * (minus.hess[0] + p.hess[0]),
                    0.5 * (minus.hess[1] + p.hess[1]),
                    0.5 * (minus.hess[2] + p.hess[2]),
                ),
            },
        }
    }
}

fn bilinear(m: &Sym2, a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * (m.xx * b[0] + m.xy * b[1]) + a[1] * (m.xy * b[0] + m.yy * b[1])
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Face integrand of `S_k`. The tangential Laplacian of a trace on a flat face
/// is `t^T H t`, and the tangential derivative of the normal derivative is `t^T H n`.
pub(crate) fn stab_face_kernel(n: [f64; 2], w: &FaceData, v: &FaceData, interior: bool) -> f64 {
    let t = [-n[1], n[0]];
    let mixed = -bilinear(&w.avg_hess, t, n) * dot2(t, v.jump_grad) - bilinear(&v.avg_hess, t, n) * dot2(t, w.jump_grad);
    if interior {
        bilinear(&w.avg_hess, t, t) * dot2(v.jump_grad, n) + bilinear(&v.avg_hess, t, t) * dot2(w.jump_grad, n) + mixed
    } else {
        mixed
    }
}

/// Face integrand of a jump penalty with gradient weight `a / h` and value weight `b / h^3`.
pub(crate) fn penalty_face_kernel(h: f64, a: f64, b: f64, w: &FaceData, v: &FaceData, interior: bool) -> f64 {
    let value = b / h.powi(3) * w.jump * v.jump;
    if interior {
        a / h * dot2(w.jump_grad, v.jump_grad) + value
    } else {
        value
    }
}

/// `(x, weight, data)` of a function at the quadrature points of face `f`.
pub fn face_traces(space: &FeSpace, f: usize, u: &DiscreteFunction) -> Vec<(Point2, f64, FaceData)> {
    let face = &space.mesh.faces[f];
    let local: Vec<(usize, Vec<f64>)> = face
        .sides()
        .map(|s| (s.element, space.local_coeffs(s.element, &u.coeffs)))
        .collect();
    space
        .face_points(f)
        .into_iter()
        .map(|(x, w)| {
            let jets: Vec<Jet> = local
                .iter()
                .map(|(k, c)| space.eval_local(*k, space.geometry[*k].inverse_map(x), c))
                .collect();
            (x, w, FaceData::from_traces(&jets[0], jets.get(1)))
        })
        .collect()
}

/// Matrix-valued lifting of face data, per adjacent element, in the orthonormal
/// `P_q` basis. Components are stored row-major: `(0,0), (0,1), (1,0), (1,1)`.
pub type MatrixCoeffs = [Vec<f64>; 4];

/// Scalar lifting `r^F(g)`: for each element adjacent to face `f`, the
/// coefficients of the `P_q` function with `int r phi = int_F g {phi}`.
pub fn lift_face_scalar(space: &FeSpace, f: usize, g: &dyn Fn(Point2) -> f64) -> Vec<(usize, Vec<f64>)> {
    let face = &space.mesh.faces[f];
    let weight = if face.is_boundary() { 1.0 } else { 0.5 };
    let nl = space.nlift();
    let pts = space.face_points(f);
    face.sides()
        .map(|s| {
            let k = s.element;
            let mut c = vec![0.0; nl];
            for (x, w) in &pts {
                let gx = g(*x);
                let psi = space.lift_values(k, space.geometry[k].inverse_map(*x));
                c.iter_mut().zip(&psi).for_each(|(ci, p)| *ci += weight * w * gx * p);
            }
            (k, c)
        })
        .collect()
}

/// Matrix lifting `r^F(w)`: lifts `w (x) n` on interior faces and `w_T (x) n`
/// on boundary faces.
pub fn lift_face(space: &FeSpace, f: usize, w: &dyn Fn(Point2) -> [f64; 2]) -> Vec<(usize, MatrixCoeffs)> {
    let face = &space.mesh.faces[f];
    let n = face.normal;
    let boundary = face.is_boundary();
    let vector = |x: Point2| {
        let mut v = w(x);
        if boundary {
            let vn = dot2(v, n);
            v = [v[0] - vn * n[0], v[1] - vn * n[1]];
        }
        v
    };
    let comps: Vec<Vec<(usize, Vec<f64>)>> = (0..4)
        .map(|c| {
            let (a, b) = (c / 2, c % 2);
            lift_face_scalar(space, f, &|x| vector(x)[a] * n[b])
        })
        .collect();
    (0..comps[0].len())
        .map(|s| {
            let k = comps[0][s].0;
            (k, std::array::from_fn(|c| comps[c][s].1.clone()))
        })
        .collect()
}

/// Piecewise Hessian and lifted gradient jumps of a function, both in `P_q`.
#[derive(Debug, Clone)]
pub struct LiftedHessianField {
    pub hessian: Vec<MatrixCoeffs>,
    pub lifting: Vec<MatrixCoeffs>,
}

impl LiftedHessianField {
    /// `H_k v = hess v - r_k([grad v])` on element `k`.
    pub fn lifted_hessian(&self, k: usize) -> MatrixCoeffs {
        std::array::from_fn(|c| {
            self.hessian[k][c]
                .iter()
                .zip(&self.lifting[k][c])
                .map(|(h, r)| h - r)
                .collect()
        })
    }

    /// `Delta_k v = Tr H_k v` on element `k`.
    pub fn lifted_laplacian(&self, k: usize) -> Vec<f64> {
        let h = self.lifted_hessian(k);
        h[0].iter().zip(&h[3]).map(|(a, b)| a + b).collect()
    }

    pub fn lifting_trace(&self, k: usize) -> Vec<f64> {
        let r = &self.lifting[k];
        r[0].iter().zip(&r[3]).map(|(a, b)| a + b).collect()
    }

    /// Evaluates `P_q` coefficients on element `k` at reference point `xi`.
    pub fn eval(space: &FeSpace, k: usize, xi: [f64; 2], coeffs: &[f64]) -> f64 {
        space.lift_values(k, xi).iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

/// Lifted Hessian of `v`, using the lifting degree of the space.
pub fn lifted_hessian(space: &FeSpace, v: &DiscreteFunction) -> LiftedHessianField {
    let nl = space.nlift();
    let ne = space.num_elements();
    let mut hessian: Vec<MatrixCoeffs> = Vec::with_capacity(ne);
    for k in 0..ne {
        let local = space.local_coeffs(k, &v.coeffs);
        let mut h: MatrixCoeffs = std::array::from_fn(|_| vec![0.0; nl]);
        for (xi, _, w) in space.element_points(k) {
            let hv = space.eval_local(k, xi, &local).hess;
            let comp = [hv[0], hv[1], hv[1], hv[2]];
            let psi = space.lift_values(k, xi);
            for c in 0..4 {
                for (m, p) in psi.iter().enumerate() {
                    h[c][m] += w * comp[c] * p;
                }
            }
        }
        hessian.push(h);
    }
    let mut lifting: Vec<MatrixCoeffs> = (0..ne).map(|_| std::array::from_fn(|_| vec![0.0; nl])).collect();
    let mesh = &space.mesh;
    for (f, face) in mesh.faces.iter().enumerate() {
        let sides: Vec<(usize, Vec<f64>)> = face
            .sides()
            .map(|s| (s.element, space.local_coeffs(s.element, &v.coeffs)))
            .collect();
        let jump_grad = |x: Point2| {
            let jets: Vec<Jet> = sides
                .iter()
                .map(|(k, c)| space.eval_local(*k, space.geometry[*k].inverse_map(x), c))
                .collect();
            FaceData::from_traces(&jets[0], jets.get(1)).jump_grad
        };
        for (k, r) in lift_face(space, f, &jump_grad) {
            for c in 0..4 {
                lifting[k][c].iter_mut().zip(&r[c]).for_each(|(a, b)| *a += b);
            }
        }
    }
    LiftedHessianField { hessian, lifting }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabMode {
    Facewise,
    Lifted,
}

fn mat_dot(a: &MatrixCoeffs, b: &MatrixCoeffs) -> f64 {
    (0..4).map(|c| a[c].iter().zip(&b[c]).map(|(x, y)| x * y).sum::<f64>()).sum()
}

fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The stabilisation form `S_k(w, v)`.
pub fn stab_form(space: &FeSpace, w: &DiscreteFunction, v: &DiscreteFunction, mode: StabMode) -> f64 {
    match mode {
        StabMode::Facewise => {
            let mut total = 0.0;
            for k in 0..space.num_elements() {
                let (lw, lv) = (space.local_coeffs(k, &w.coeffs), space.local_coeffs(k, &v.coeffs));
                for (xi, _, wt) in space.element_points(k) {
                    let hw = Sym2::from_array(space.eval_local(k, xi, &lw).hess);
                    let hv = Sym2::from_array(space.eval_local(k, xi, &lv).hess);
                    total += wt * (hw.contract(&hv) - hw.trace() * hv.trace());
                }
            }
            for (f, face) in space.mesh.faces.iter().enumerate() {
                let tw = face_traces(space, f, w);
                let tv = face_traces(space, f, v);
                for ((_, wt, dw), (_, _, dv)) in tw.iter().zip(&tv) {
                    total += wt * stab_face_kernel(face.normal, dw, dv, !face.is_boundary());
                }
            }
            total
        }
        StabMode::Lifted => {
            let lw = lifted_hessian(space, w);
            let lv = lifted_hessian(space, v);
            (0..space.num_elements())
                .map(|k| {
                    let (hw, hv) = (lw.lifted_hessian(k), lv.lifted_hessian(k));
                    let (dw, dv) = (lw.lifted_laplacian(k), lv.lifted_laplacian(k));
                    let (tw, tv) = (lw.lifting_trace(k), lv.lifting_trace(k));
                    mat_dot(&hw, &hv) - vec_dot(&dw, &dv) + vec_dot(&tw, &tv)
                        - mat_dot(&lw.lifting[k], &lv.lifting[k])
                })
                .sum()
        }
    }
}

/// Per-face contributions of `J_k^{sigma,rho}(w, v)`.
pub fn jump_penalty_face_terms(space: &FeSpace, w: &DiscreteFunction, v: &DiscreteFunction, params: &FormParams) -> Vec<f64> {
    (0..space.mesh.faces.len())
        .map(|f| {
            let face = &space.mesh.faces[f];
            let h = space.mesh.face_length(f);
            let tw = face_traces(space, f, w);
            let tv = face_traces(space, f, v);
            tw.iter()
                .zip(&tv)
                .map(|((_, wt, dw), (_, _, dv))| {
                    wt * penalty_face_kernel(h, params.sigma, params.rho, dw, dv, !face.is_boundary())
                })
                .sum()
        })
        .collect()
}

pub fn jump_penalty_form(space: &FeSpace, w: &DiscreteFunction, v: &DiscreteFunction, params: &FormParams) -> f64 {
    jump_penalty_face_terms(space, w, v, params).iter().sum()
}

/// `|v|_J`.
pub fn jump_seminorm(space: &FeSpace, v: &DiscreteFunction) -> f64 {
    let unit = FormParams {
        theta: 0.0,
        sigma: 1.0,
        rho: 1.0,
    };
    jump_penalty_form(space, v, v, &unit).max(0.0).sqrt()
}

/// Volume part of `||v||_k^2`: integral of `|hess v|^2 + |grad v|^2 + v^2`.
pub fn volume_norm_sq(space: &FeSpace, v: &DiscreteFunction) -> f64 {
    let mut total = 0.0;
    for k in 0..space.num_elements() {
        let local = space.local_coeffs(k, &v.coeffs);
        for (xi, _, w) in space.element_points(k) {
            let j = space.eval_local(k, xi, &local);
            total += w * (Sym2::from_array(j.hess).frobenius_sq() + dot2(j.grad, j.grad) + j.value * j.value);
        }
    }
    total
}

/// `||v||_k`.
pub fn norm_k(space: &FeSpace, v: &DiscreteFunction) -> f64 {
    (volume_norm_sq(space, v) + jump_seminorm(space, v).powi(2)).sqrt()
}

#[cfg(test)]
mod tests;
