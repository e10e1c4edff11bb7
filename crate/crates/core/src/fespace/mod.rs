//! Discontinuous (`s = 0`) and continuous (`s = 1`, zero boundary values)
//! piecewise polynomial spaces on a [`MeshLevel`].
//!
//! DG spaces use an L2-orthonormal basis on every element; C0 spaces use the
//! Lagrange basis with shared interface nodes and boundary nodes removed.
//! Local coefficients of element `k` are the coefficients in its local basis;
//! `dof_map` sends them to global indices (or nowhere, for removed nodes).

pub mod basis;
pub mod quadrature;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use basis::{dim_p, BasisKind, Jet, ReferenceBasis};
pub use quadrature::{quadrature_rule, QuadratureRule, RefDomain};

use crate::error::{Error, Result};
use crate::mesh::{MeshLevel, Point2};
use crate::solver::{linear_solve, SparseBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Continuity {
    /// Discontinuous Galerkin, `s = 0`.
    Dg,
    /// Continuous with homogeneous Dirichlet condition, `s = 1`.
    #[serde(alias = "c0ip")]
    C0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub p: usize,
    pub continuity: Continuity,
    /// Degree of the lifting space.
    pub q: usize,
    /// Quadrature exactness on elements and faces; `None` selects `2p + 2`.
    pub quad_degree: Option<usize>,
}

impl SpaceConfig {
    pub fn new(p: usize, continuity: Continuity) -> Self {
        SpaceConfig {
            p,
            continuity,
            q: p,
            quad_degree: None,
        }
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = q;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::SpaceConfig(format!("polynomial degree p = {} < 2", self.p)));
        }
        if self.q + 2 < self.p {
            return Err(Error::SpaceConfig(format!(
                "lifting degree q = {} < p - 2 = {}",
                self.q,
                self.p - 2
            )));
        }
        Ok(())
    }

    /// Quadrature exactness actually used; never below what polynomial terms need.
    pub fn quadrature_exactness(&self) -> usize {
        let min = (2 * self.p + 2).max(self.p + self.q);
        self.quad_degree.map_or(min, |d| d.max(min))
    }
}

/// Affine map `x = origin + jac * xi` of the reference triangle onto an element.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub origin: Point2,
    pub jac: [[f64; 2]; 2],
    pub inv: [[f64; 2]; 2],
    pub det: f64,
}

impl ElementGeometry {
    pub fn new(p: [Point2; 3]) -> Self {
        let jac = [[p[1].x - p[0].x, p[2].x - p[0].x], [p[1].y - p[0].y, p[2].y - p[0].y]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        ElementGeometry {
            origin: p[0],
            jac,
            inv,
            det,
        }
    }

    pub fn map(&self, xi: [f64; 2]) -> Point2 {
        Point2::new(
            self.origin.x + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin.y + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        )
    }

    pub fn inverse_map(&self, x: Point2) -> [f64; 2] {
        let [dx, dy] = x.sub(self.origin);
        [self.inv[0][0] * dx + self.inv[0][1] * dy, self.inv[1][0] * dx + self.inv[1][1] * dy]
    }

    /// Pushes a reference jet forward to physical derivatives, scaling by `scale`.
    pub fn push_forward(&self, r: &Jet, scale: f64) -> Jet {
        let g = &self.inv;
        let grad = [
            g[0][0] * r.grad[0] + g[1][0] * r.grad[1],
            g[0][1] * r.grad[0] + g[1][1] * r.grad[1],
        ];
        let h = [[r.hess[0], r.hess[1]], [r.hess[1], r.hess[2]]];
        let phys = |i: usize, j: usize| -> f64 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    s += g[k][i] * h[k][l] * g[l][j];
                }
            }
            s
        };
        Jet {
            value: scale * r.value,
            grad: [scale * grad[0], scale * grad[1]],
            hess: [scale * phys(0, 0), scale * phys(0, 1), scale * phys(1, 1)],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeSpace {
    pub mesh: Arc<MeshLevel>,
    pub config: SpaceConfig,
    pub basis: ReferenceBasis,
    /// Orthonormal basis of the lifting space `P_q`.
    pub lift_basis: ReferenceBasis,
    pub geometry: Vec<ElementGeometry>,
    /// Global index of local basis function `i` of element `k` at `k * nloc + i`.
    dof_map: Vec<Option<usize>>,
    pub dim: usize,
    pub element_rule: QuadratureRule,
    pub face_rule: QuadratureRule,
}

/// Coefficient vector of a function in an [`FeSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFunction {
    pub coeffs: Vec<f64>,
}

impl DiscreteFunction {
    pub fn zeros(space: &FeSpace) -> Self {
        DiscreteFunction {
            coeffs: vec![0.0; space.dim],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        DiscreteFunction { coeffs }
    }
}

pub fn build_space(mesh: Arc<MeshLevel>, config: SpaceConfig) -> Result<FeSpace> {
    config.validate()?;
    let p = config.p;
    let basis = match config.continuity {
        Continuity::Dg => ReferenceBasis::new(BasisKind::Orthonormal, p)?,
        Continuity::C0 => ReferenceBasis::new(BasisKind::Lagrange, p)?,
    };
    let lift_basis = ReferenceBasis::new(BasisKind::Orthonormal, config.q)?;
    let geometry: Vec<ElementGeometry> = (0..mesh.num_elements())
        .map(|k| ElementGeometry::new(mesh.element_points(k)))
        .collect();
    let nloc = basis.len();
    let (dof_map, dim) = match config.continuity {
        Continuity::Dg => {
            let n = mesh.num_elements() * nloc;
            ((0..n).map(Some).collect(), n)
        }
        Continuity::C0 => c0_dof_map(&mesh, &basis),
    };
    let exact = config.quadrature_exactness();
    Ok(FeSpace {
        element_rule: quadrature_rule(RefDomain::Triangle, exact)?,
        face_rule: quadrature_rule(RefDomain::Segment, exact)?,
        mesh,
        config,
        basis,
        lift_basis,
        geometry,
        dof_map,
        dim,
    })
}

/// Lagrange nodes are identified by their integer barycentric weights on global
/// vertex ids, which does not depend on the element the node is seen from.
fn c0_dof_map(mesh: &MeshLevel, basis: &ReferenceBasis) -> (Vec<Option<usize>>, usize) {
    let p = basis.degree;
    let mut boundary_vertices: HashSet<usize> = HashSet::new();
    let mut boundary_edges: HashSet<(usize, usize)> = HashSet::new();
    for f in mesh.faces.iter().filter(|f| f.is_boundary()) {
        boundary_vertices.extend(f.vertices);
        let [a, b] = f.vertices;
        boundary_edges.insert((a.min(b), a.max(b)));
    }
    let mut ids: HashMap<Vec<(usize, usize)>, Option<usize>> = HashMap::new();
    let mut next = 0;
    let mut map = Vec::with_capacity(mesh.num_elements() * basis.len());
    for el in &mesh.elements {
        for &(i, j) in &basis.nodes {
            let weights = [(el.vertices[0], p - i - j), (el.vertices[1], i), (el.vertices[2], j)];
            let mut key: Vec<(usize, usize)> = weights.into_iter().filter(|w| w.1 > 0).collect();
            key.sort_unstable();
            let id = *ids.entry(key.clone()).or_insert_with(|| {
                let on_boundary = match key.as_slice() {
                    [(v, _)] => boundary_vertices.contains(v),
                    [(a, _), (b, _)] => boundary_edges.contains(&(*a, *b)),
                    _ => false,
                };
                if on_boundary {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            });
            map.push(id);
        }
    }
    (map, next)
}

impl FeSpace {
    pub fn nloc(&self) -> usize {
        self.basis.len()
    }

    pub fn nlift(&self) -> usize {
        self.lift_basis.len()
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    pub fn dofs(&self, k: usize) -> &[Option<usize>] {
        let n = self.nloc();
        &self.dof_map[k * n..(k + 1) * n]
    }

    /// Scale turning the reference basis into the physical basis on element `k`.
    pub fn basis_scale(&self, k: usize) -> f64 {
        match self.basis.kind {
            BasisKind::Orthonormal => 1.0 / self.geometry[k].det.sqrt(),
            BasisKind::Lagrange => 1.0,
        }
    }

    pub fn lift_scale(&self, k: usize) -> f64 {
        1.0 / self.geometry[k].det.sqrt()
    }

    /// Physical jets of the local basis of element `k` at reference point `xi`.
    pub fn jets(&self, k: usize, xi: [f64; 2]) -> Vec<Jet> {
        let g = &self.geometry[k];
        let s = self.basis_scale(k);
        self.basis.eval_all(xi).iter().map(|r| g.push_forward(r, s)).collect()
    }

    /// Values of the orthonormal `P_q` basis of element `k` at `xi`.
    pub fn lift_values(&self, k: usize, xi: [f64; 2]) -> Vec<f64> {
        let s = self.lift_scale(k);
        self.lift_basis.eval_all(xi).iter().map(|j| s * j.value).collect()
    }

    pub fn local_coeffs(&self, k: usize, coeffs: &[f64]) -> Vec<f64> {
        self.dofs(k).iter().map(|d| d.map_or(0.0, |g| coeffs[g])).collect()
    }

    pub fn eval_local(&self, k: usize, xi: [f64; 2], local: &[f64]) -> Jet {
        combine(&self.jets(k, xi), local)
    }

    pub fn eval(&self, k: usize, xi: [f64; 2], u: &DiscreteFunction) -> Jet {
        self.eval_local(k, xi, &self.local_coeffs(k, &u.coeffs))
    }

    /// Element quadrature points of `k` in physical space with physical weights.
    pub fn element_points(&self, k: usize) -> impl Iterator<Item = ([f64; 2], Point2, f64)> + '_ {
        let g = self.geometry[k];
        self.element_rule
            .points
            .iter()
            .zip(&self.element_rule.weights)
            .map(move |(xi, w)| (*xi, g.map(*xi), w * g.det))
    }

    /// Face quadrature points in physical space with physical weights.
    pub fn face_points(&self, f: usize) -> Vec<(Point2, f64)> {
        let [a, b] = self.mesh.face_points(f);
        let len = a.dist(b);
        self.face_rule
            .points
            .iter()
            .zip(&self.face_rule.weights)
            .map(|(t, w)| (Point2::new(a.x + t[0] * (b.x - a.x), a.y + t[0] * (b.y - a.y)), w * len))
            .collect()
    }

    pub fn eval_shape(&self, k: usize, xi: [f64; 2], order: usize) -> Result<Vec<Jet>> {
        if order > 2 {
            return Err(Error::DerivativeOrder(order));
        }
        Ok(self.jets(k, xi))
    }

    /// L2 projection of `f` onto the space.
    pub fn project_l2(&self, f: &dyn Fn(Point2) -> f64) -> Result<DiscreteFunction> {
        let n = self.nloc();
        match self.config.continuity {
            Continuity::Dg => {
                let mut coeffs = vec![0.0; self.dim];
                for k in 0..self.num_elements() {
                    for (xi, x, w) in self.element_points(k) {
                        let fx = f(x);
                        for (i, jet) in self.jets(k, xi).iter().enumerate() {
                            coeffs[k * n + i] += w * fx * jet.value;
                        }
                    }
                }
                Ok(DiscreteFunction { coeffs })
            }
            Continuity::C0 => {
                let (mass, rhs) = self.mass_system(f);
                let coeffs = linear_solve(&mass, &rhs)?;
                Ok(DiscreteFunction { coeffs })
            }
        }
    }

    /// Global mass matrix and load vector of `f`.
    pub fn mass_system(&self, f: &dyn Fn(Point2) -> f64) -> (crate::solver::SparseMatrix, Vec<f64>) {
        let n = self.nloc();
        let mut b = SparseBuilder::new(self.dim);
        let mut rhs = vec![0.0; self.dim];
        for k in 0..self.num_elements() {
            let dofs = self.dofs(k);
            let mut local = vec![0.0; n * n];
            for (xi, x, w) in self.element_points(k) {
                let jets = self.jets(k, xi);
                let fx = f(x);
                for i in 0..n {
                    if let Some(gi) = dofs[i] {
                        rhs[gi] += w * fx * jets[i].value;
                    }
                    for j in 0..n {
                        local[i * n + j] += w * jets[i].value * jets[j].value;
                    }
                }
            }
            b.add_block(dofs, dofs, &local);
        }
        (b.build(), rhs)
    }

    /// Interpolation (C0) or projection (DG) of an arbitrary pointwise function,
    /// exact when `f` restricted to each element is a polynomial of degree `p`.
    pub fn interpolate_local(&self, f: &dyn Fn(usize, Point2) -> f64) -> DiscreteFunction {
        let n = self.nloc();
        let mut coeffs = vec![0.0; self.dim];
        match self.config.continuity {
            Continuity::Dg => {
                for k in 0..self.num_elements() {
                    for (xi, x, w) in self.element_points(k) {
                        let fx = f(k, x);
                        for (i, jet) in self.jets(k, xi).iter().enumerate() {
                            coeffs[k * n + i] += w * fx * jet.value;
                        }
                    }
                }
            }
            Continuity::C0 => {
                let p = self.config.p as f64;
                for k in 0..self.num_elements() {
                    let g = &self.geometry[k];
                    for (i, &(a, b)) in self.basis.nodes.iter().enumerate() {
                        if let Some(gi) = self.dofs(k)[i] {
                            coeffs[gi] = f(k, g.map([a as f64 / p, b as f64 / p]));
                        }
                    }
                }
            }
        }
        DiscreteFunction { coeffs }
    }

    /// Transfers `u` from `coarse` to this space. Every element of this mesh must
    /// descend (through `parent`) from an element of `coarse`.
    pub fn transfer_from(&self, coarse: &FeSpace, u: &DiscreteFunction) -> DiscreteFunction {
        let parents: Vec<usize> = self
            .mesh
            .elements
            .iter()
            .map(|e| e.parent.expect("element without parent in transfer"))
            .collect();
        self.interpolate_local(&|k, x| {
            let pk = parents[k];
            let xi = coarse.geometry[pk].inverse_map(x);
            coarse.eval(pk, xi, u).value
        })
    }

    /// Per-element samples on the degree-`p` lattice, one `f <element> <values...>` line each.
    pub fn export_samples(&self, u: &DiscreteFunction) -> String {
        let mut s = String::new();
        let p = self.config.p;
        let nodes = basis::lattice_nodes(p);
        for k in 0..self.num_elements() {
            let local = self.local_coeffs(k, &u.coeffs);
            let _ = write!(s, "f {k}");
            for &(a, b) in &nodes {
                let v = self.eval_local(k, [a as f64 / p as f64, b as f64 / p as f64], &local).value;
                let _ = write!(s, " {v:.17e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn export_coeffs_csv(&self, u: &DiscreteFunction) -> String {
        let mut s = String::from("index,coeff\n");
        for (i, c) in u.coeffs.iter().enumerate() {
            let _ = writeln!(s, "{i},{c:.17e}");
        }
        s
    }
}

pub fn combine(jets: &[Jet], local: &[f64]) -> Jet {
    let mut out = Jet::default();
    for (j, c) in jets.iter().zip(local) {
        out.value += c * j.value;
        out.grad[0] += c * j.grad[0];
        out.grad[1] += c * j.grad[1];
        out.hess[0] += c * j.hess[0];
        out.hess[1] += c * j.hess[1];
        out.hess[2] += c * j.hess[2];
    }
    out
}
