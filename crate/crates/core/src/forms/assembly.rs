//! Global assembly of `A_k`: residual vector, frozen-control Jacobian, and the
//! Gram matrix of the `||.||_k` inner product.
//!
//! The lifted Laplacian of every local basis function is precomputed in the
//! orthonormal `P_q` basis of its support (the element and its face
//! neighbours), so `int F_gamma[u] Delta_k phi` reduces to `P_q` moments of
//! `F_gamma[u]`.

use rayon::prelude::*;

use super::{penalty_face_kernel, stab_face_kernel, FaceData, FormParams};
use crate::cordes::{ControlProblem, Sym2};
use crate::error::Result;
use crate::fespace::{DiscreteFunction, FeSpace, Jet};
use crate::solver::{SparseBuilder, SparseMatrix};

/// `F_gamma[u]` and the frozen derivative `gamma * a` at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct FgSample {
    pub value: f64,
    pub gamma_a: Sym2,
}

pub struct Discretization<'a> {
    pub space: &'a FeSpace,
    pub problem: &'a ControlProblem,
    pub params: FormParams,
    ref_jets: Vec<Vec<Jet>>,
    ref_lift: Vec<Vec<f64>>,
    /// Per element `K`: `(M, block)` with `block[i * nlift + m]` the `m`-th
    /// `P_q(M)` coefficient of the lifted Laplacian of basis function `i` of `K`.
    lifted_laplacian: Vec<Vec<(usize, Vec<f64>)>>,
    /// Matrix of `theta S_k + J_k`.
    pub linear: SparseMatrix,
    /// Matrix of the `||.||_k` inner product.
    pub gram: SparseMatrix,
}

impl<'a> Discretization<'a> {
    pub fn new(space: &'a FeSpace, problem: &'a ControlProblem, params: FormParams) -> Result<Self> {
        params.validate(space.config.continuity)?;
        problem.controls.validate()?;
        let ref_jets: Vec<Vec<Jet>> = space.element_rule.points.iter().map(|xi| space.basis.eval_all(*xi)).collect();
        let ref_lift: Vec<Vec<f64>> = space
            .element_rule
            .points
            .iter()
            .map(|xi| space.lift_basis.eval_all(*xi).iter().map(|j| j.value).collect())
            .collect();
        let mut d = Discretization {
            space,
            problem,
            params,
            ref_jets,
            ref_lift,
            lifted_laplacian: Vec::new(),
            linear: SparseMatrix::identity(0),
            gram: SparseMatrix::identity(0),
        };
        d.lifted_laplacian = (0..space.num_elements()).map(|k| d.build_lifted_laplacian(k)).collect();
        let (linear, gram) = d.build_linear();
        d.linear = linear;
        d.gram = gram;
        Ok(d)
    }

    fn phys_jets(&self, k: usize, q: usize) -> Vec<Jet> {
        let g = &self.space.geometry[k];
        let s = self.space.basis_scale(k);
        self.ref_jets[q].iter().map(|r| g.push_forward(r, s)).collect()
    }

    fn build_lifted_laplacian(&self, k: usize) -> Vec<(usize, Vec<f64>)> {
        let sp = self.space;
        let (nb, nl) = (sp.nloc(), sp.nlift());
        let det = sp.geometry[k].det;
        let ls = sp.lift_scale(k);
        let mut own = vec![0.0; nb * nl];
        for (q, w) in sp.element_rule.weights.iter().enumerate() {
            let jets = self.phys_jets(k, q);
            for (i, j) in jets.iter().enumerate() {
                let lap = j.hess[0] + j.hess[2];
                for m in 0..nl {
                    own[i * nl + m] += w * det * lap * ls * self.ref_lift[q][m];
                }
            }
        }
        let mut blocks = vec![(k, own)];
        let mesh = &sp.mesh;
        for &f in &mesh.element_faces[k] {
            let face = &mesh.faces[f];
            let Some(plus) = face.plus else { continue };
            let (n_out, other) = if face.minus.element == k {
                (face.normal, plus.element)
            } else {
                ([-face.normal[0], -face.normal[1]], face.minus.element)
            };
            let mut nb_block = vec![0.0; nb * nl];
            for (x, w) in sp.face_points(f) {
                let jets = sp.jets(k, sp.geometry[k].inverse_map(x));
                let psi_k = sp.lift_values(k, sp.geometry[k].inverse_map(x));
                let psi_o = sp.lift_values(other, sp.geometry[other].inverse_map(x));
                for (i, j) in jets.iter().enumerate() {
                    let g = j.grad[0] * n_out[0] + j.grad[1] * n_out[1];
                    for m in 0..nl {
                        blocks[0].1[i * nl + m] -= 0.5 * w * g * psi_k[m];
                        nb_block[i * nl + m] -= 0.5 * w * g * psi_o[m];
                    }
                }
            }
            blocks.push((other, nb_block));
        }
        blocks
    }

    fn build_linear(&self) -> (SparseMatrix, SparseMatrix) {
        let sp = self.space;
        let nb = sp.nloc();
        let theta = self.params.theta;
        let mut lin = SparseBuilder::new(sp.dim);
        let mut gram = SparseBuilder::new(sp.dim);
        for k in 0..sp.num_elements() {
            let mut bl = vec![0.0; nb * nb];
            let mut bg = vec![0.0; nb * nb];
            let det = sp.geometry[k].det;
            for (q, w) in sp.element_rule.weights.iter().enumerate() {
                let wt = w * det;
                let jets = self.phys_jets(k, q);
                for i in 0..nb {
                    let hi = Sym2::from_array(jets[i].hess);
                    for j in 0..nb {
                        let hj = Sym2::from_array(jets[j].hess);
                        bl[i * nb + j] += wt * theta * (hi.contract(&hj) - hi.trace() * hj.trace());
                        bg[i * nb + j] += wt
                            * (hi.contract(&hj)
                                + jets[i].grad[0] * jets[j].grad[0]
                                + jets[i].grad[1] * jets[j].grad[1]
                                + jets[i].value * jets[j].value);
                    }
                }
            }
            lin.add_block(sp.dofs(k), sp.dofs(k), &bl);
            gram.add_block(sp.dofs(k), sp.dofs(k), &bg);
        }

        let (sigma, rho) = (self.params.sigma, self.params.rho);
        for (f, face) in sp.mesh.faces.iter().enumerate() {
            let interior = !face.is_boundary();
            let h = sp.mesh.face_length(f);
            let weight = if interior { 0.5 } else { 1.0 };
            let sides: Vec<(usize, f64)> = face
                .sides()
                .enumerate()
                .map(|(s, side)| (side.element, if s == 0 { 1.0 } else { -1.0 }))
                .collect();
            let pts = sp.face_points(f);
            // data[side][qp][basis]
            let data: Vec<Vec<Vec<FaceData>>> = sides
                .iter()
                .map(|&(k, sign)| {
                    pts.iter()
                        .map(|(x, _)| {
                            sp.jets(k, sp.geometry[k].inverse_map(*x))
                                .iter()
                                .map(|j| FaceData::one_sided(j, sign, weight))
                                .collect()
                        })
                        .collect()
                })
                .collect();
            for (a, &(ka, _)) in sides.iter().enumerate() {
                for (b, &(kb, _)) in sides.iter().enumerate() {
                    let mut bl = vec![0.0; nb * nb];
                    let mut bg = vec![0.0; nb * nb];
                    for (q, (_, w)) in pts.iter().enumerate() {
                        for i in 0..nb {
                            let test = &data[a][q][i];
                            for j in 0..nb {
                                let trial = &data[b][q][j];
                                bl[i * nb + j] += w
                                    * (theta * stab_face_kernel(face.normal, trial, test, interior)
                                        + penalty_face_kernel(h, sigma, rho, trial, test, interior));
                                bg[i * nb + j] += w * penalty_face_kernel(h, 1.0, 1.0, trial, test, interior);
                            }
                        }
                    }
                    lin.add_block(sp.dofs(ka), sp.dofs(kb), &bl);
                    gram.add_block(sp.dofs(ka), sp.dofs(kb), &bg);
                }
            }
        }
        (lin.build(), gram.build())
    }

    /// `F_gamma[u]` with its optimal-control derivative at every element quadrature point.
    pub fn evaluate_fg(&self, u: &DiscreteFunction) -> Result<Vec<Vec<FgSample>>> {
        let sp = self.space;
        (0..sp.num_elements())
            .into_par_iter()
            .map(|k| {
                let local = sp.local_coeffs(k, &u.coeffs);
                let g = &sp.geometry[k];
                let s = sp.basis_scale(k);
                sp.element_rule
                    .points
                    .iter()
                    .enumerate()
                    .map(|(q, xi)| {
                        let r = crate::fespace::combine(&self.ref_jets[q], &local);
                        let hess = Sym2::from_array(g.push_forward(&r, s).hess);
                        let fg = self.problem.f_gamma_eval(g.map(*xi), &hess)?;
                        Ok(FgSample {
                            value: fg.value,
                            gamma_a: fg.gamma_a,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// `P_q` moments `int_K F_gamma psi_m` per element.
    fn moments(&self, fg: &[Vec<FgSample>]) -> Vec<Vec<f64>> {
        let sp = self.space;
        let nl = sp.nlift();
        (0..sp.num_elements())
            .map(|k| {
                let scale = sp.geometry[k].det * sp.lift_scale(k);
                let mut m = vec![0.0; nl];
                for (q, w) in sp.element_rule.weights.iter().enumerate() {
                    let v = w * scale * fg[k][q].value;
                    m.iter_mut().zip(&self.ref_lift[q]).for_each(|(mi, p)| *mi += v * p);
                }
                m
            })
            .collect()
    }

    /// Component `i` is `A_k(u; phi_i)`.
    pub fn residual(&self, u: &DiscreteFunction) -> Result<Vec<f64>> {
        let fg = self.evaluate_fg(u)?;
        Ok(self.residual_with(u, &fg))
    }

    pub fn residual_with(&self, u: &DiscreteFunction, fg: &[Vec<FgSample>]) -> Vec<f64> {
        let sp = self.space;
        let (nb, nl) = (sp.nloc(), sp.nlift());
        let mom = self.moments(fg);
        let mut r = self.linear.mul_vec(&u.coeffs);
        for k in 0..sp.num_elements() {
            for (i, dof) in sp.dofs(k).iter().enumerate() {
                let Some(gi) = dof else { continue };
                let mut acc = 0.0;
                for (m_el, block) in &self.lifted_laplacian[k] {
                    acc += block[i * nl..(i + 1) * nl].iter().zip(&mom[*m_el]).map(|(a, b)| a * b).sum::<f64>();
                }
                r[*gi] += acc;
            }
            debug_assert_eq!(sp.dofs(k).len(), nb);
        }
        r
    }

    /// Jacobian of the residual with controls frozen at the optimisers recorded in `fg`.
    pub fn jacobian_with(&self, fg: &[Vec<FgSample>]) -> SparseMatrix {
        let sp = self.space;
        let (nb, nl) = (sp.nloc(), sp.nlift());
        // mom[M][m * nb + j] = int_M psi_m (gamma a : hess phi_j)
        let mom: Vec<Vec<f64>> = (0..sp.num_elements())
            .into_par_iter()
            .map(|k| {
                let det = sp.geometry[k].det;
                let ls = sp.lift_scale(k);
                let mut out = vec![0.0; nl * nb];
                for (q, w) in sp.element_rule.weights.iter().enumerate() {
                    let jets = self.phys_jets(k, q);
                    let ga = fg[k][q].gamma_a;
                    for (j, jet) in jets.iter().enumerate() {
                        let lj = w * det * ls * ga.contract(&Sym2::from_array(jet.hess));
                        for m in 0..nl {
                            out[m * nb + j] += lj * self.ref_lift[q][m];
                        }
                    }
                }
                out
            })
            .collect();
        let mut b = SparseBuilder::new(sp.dim);
        let mut block = vec![0.0; nb * nb];
        for k in 0..sp.num_elements() {
            for (m_el, lap) in &self.lifted_laplacian[k] {
                block.iter_mut().for_each(|v| *v = 0.0);
                let mm = &mom[*m_el];
                for i in 0..nb {
                    for m in 0..nl {
                        let l = lap[i * nl + m];
                        if l == 0.0 {
                            continue;
                        }
                        for j in 0..nb {
                            block[i * nb + j] += l * mm[m * nb + j];
                        }
                    }
                }
                b.add_block(sp.dofs(k), sp.dofs(*m_el), &block);
            }
        }
        let nonlinear = b.build();
        nonlinear.add_scaled(1.0, &self.linear)
    }

    pub fn jacobian(&self, u: &DiscreteFunction) -> Result<SparseMatrix> {
        Ok(self.jacobian_with(&self.evaluate_fg(u)?))
    }

    /// `||v||_k^2` through the Gram matrix.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        self.gram.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Lifted Laplacian of global basis function combination `v`, as `P_q`
    /// coefficients per element.
    pub fn lifted_laplacian_of(&self, v: &DiscreteFunction) -> Vec<Vec<f64>> {
        let sp = self.space;
        let nl = sp.nlift();
        let mut out = vec![vec![0.0; nl]; sp.num_elements()];
        for k in 0..sp.num_elements() {
            let local = sp.local_coeffs(k, &v.coeffs);
            for (m_el, block) in &self.lifted_laplacian[k] {
                for (i, c) in local.iter().enumerate() {
                    for m in 0..nl {
                        out[*m_el][m] += c * block[i * nl + m];
                    }
                }
            }
        }
        out
    }
}

/// `A_k(u; phi_i)` for every global basis function.
pub fn nonlinear_residual(
    space: &FeSpace,
    problem: &ControlProblem,
    u: &DiscreteFunction,
    params: FormParams,
) -> Result<Vec<f64>> {
    Discretization::new(space, problem, params)?.residual(u)
}

pub fn frozen_jacobian(
    space: &FeSpace,
    problem: &ControlProblem,
    u: &DiscreteFunction,
    params: FormParams,
) -> Result<SparseMatrix> {
    Discretization::new(space, problem, params)?.jacobian(u)
}
