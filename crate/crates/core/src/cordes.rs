//! Control sets, coefficient fields, the Cordes condition and pointwise
//! evaluation of the renormalised operator `F_gamma`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Point2;

/// Symmetric 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2::new(a, 0.0, b)
    }

    /// Rejects matrices with `a12 != a21`.
    pub fn from_matrix(m: [[f64; 2]; 2]) -> Result<Self> {
        let tol = 1e-14 * (m[0][1].abs() + m[1][0].abs()).max(1.0);
        if (m[0][1] - m[1][0]).abs() > tol {
            return Err(Error::NonSymmetric(m[0][1], m[1][0]));
        }
        Ok(Sym2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]))
    }

    pub fn from_array(h: [f64; 3]) -> Self {
        Sym2::new(h[0], h[1], h[2])
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Frobenius inner product.
    pub fn contract(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.contract(self)
    }

    pub fn scale(&self, t: f64) -> Sym2 {
        Sym2::new(t * self.xx, t * self.xy, t * self.yy)
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * self.trace();
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        [m - d, m + d]
    }

    /// `R(theta)^T diag(1, eps) R(theta)` with `R` the counterclockwise rotation.
    pub fn rotated_anisotropy(theta: f64, eps: f64) -> Sym2 {
        let (s, c) = theta.sin_cos();
        // R = [[c, -s], [s, c]]; R^T D R
        Sym2::new(c * c + eps * s * s, -c * s + eps * s * c, s * s + eps * c * c)
    }
}

/// Renormalisation factor `Tr a / |a|^2`.
pub fn gamma_eval(a: &Sym2) -> Result<f64> {
    let f = a.frobenius_sq();
    if f == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(a.trace() / f)
}

/// A control: a label and a parameter vector the coefficient field may read.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Control {
    pub label: String,
    pub params: Vec<f64>,
}

impl Control {
    pub fn new(label: impl Into<String>, params: Vec<f64>) -> Self {
        Control {
            label: label.into(),
            params,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Control::new(format!("{v}"), vec![v])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlSet {
    pub alphas: Vec<Control>,
    pub betas: Vec<Control>,
}

impl ControlSet {
    pub fn singleton() -> Self {
        ControlSet {
            alphas: vec![Control::scalar(0.0)],
            betas: vec![Control::scalar(0.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() {
            return Err(Error::EmptyControls);
        }
        Ok(())
    }
}

/// Diffusion matrix and source term indexed by controls. Implementations are
/// expected to be continuous in `x` for fixed controls.
pub trait CoefficientField: Send + Sync {
    fn diffusion(&self, x: Point2, alpha: &Control, beta: &Control) -> Sym2;
    fn source(&self, x: Point2, alpha: &Control, beta: &Control) -> f64;
}

/// Exact solution with derivatives, for manufactured problems.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: Point2) -> f64;
    fn gradient(&self, x: Point2) -> [f64; 2];
    fn hessian(&self, x: Point2) -> Sym2;
}

#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    /// Convex polygon, counterclockwise.
    pub domain: Vec<Point2>,
    pub controls: ControlSet,
    pub coeffs: Arc<dyn CoefficientField>,
    /// Declared Cordes parameter in (0, 1].
    pub nu: f64,
    pub exact: Option<Arc<dyn ExactSolution>>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("controls", &self.controls)
            .field("nu", &self.nu)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

/// `F_gamma` at a point with the controls attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseFG {
    pub value: f64,
    pub opt_alpha: usize,
    pub opt_beta: usize,
    /// `gamma * a` at the optimal controls: the derivative of `F_gamma` in `M`
    /// with the controls frozen.
    pub gamma_a: Sym2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CordesReport {
    pub nu_est: f64,
    pub pass: bool,
    pub worst_point: Point2,
    pub min_eigenvalue: f64,
}

impl ControlProblem {
    /// Exact inf over alphas of sup over betas of `gamma (a : M - f)`. Ties go to
    /// the lowest index.
    pub fn f_gamma_eval(&self, x: Point2, m: &Sym2) -> Result<PointwiseFG> {
        self.controls.validate()?;
        self.inf_sup(x, m, true)
    }

    /// The unrenormalised operator `F`.
    pub fn f_eval(&self, x: Point2, m: &Sym2) -> Result<PointwiseFG> {
        self.controls.validate()?;
        self.inf_sup(x, m, false)
    }

    fn inf_sup(&self, x: Point2, m: &Sym2, renormalise: bool) -> Result<PointwiseFG> {
        let mut best: Option<PointwiseFG> = None;
        for (ia, alpha) in self.controls.alphas.iter().enumerate() {
            let mut inner: Option<PointwiseFG> = None;
            for (ib, beta) in self.controls.betas.iter().enumerate() {
                let a = self.coeffs.diffusion(x, alpha, beta);
                let g = if renormalise { gamma_eval(&a)? } else { 1.0 };
                let v = g * (a.contract(m) - self.coeffs.source(x, alpha, beta));
                if inner.is_none_or(|c| v > c.value) {
                    inner = Some(PointwiseFG {
                        value: v,
                        opt_alpha: ia,
                        opt_beta: ib,
                        gamma_a: a.scale(g),
                    });
                }
            }
            let inner = inner.expect("nonempty beta set");
            if best.is_none_or(|b| inner.value < b.value) {
                best = Some(inner);
            }
        }
        Ok(best.expect("nonempty alpha set"))
    }

    /// Samples every control pair at every point: estimates the Cordes parameter
    /// as `min (Tr a)^2 / |a|^2 - 1` and checks positive definiteness.
    pub fn verify_ellipticity_cordes(&self, points: &[Point2]) -> Result<CordesReport> {
        if points.is_empty() {
            return Err(Error::config("samples", "no sample points"));
        }
        self.controls.validate()?;
        let mut nu_est = f64::INFINITY;
        let mut worst_point = points[0];
        let mut min_eig = f64::INFINITY;
        let mut eig_point = points[0];
        for &x in points {
            for alpha in &self.controls.alphas {
                for beta in &self.controls.betas {
                    let a = self.coeffs.diffusion(x, alpha, beta);
                    let lam = a.eigenvalues()[0];
                    if lam < min_eig {
                        min_eig = lam;
                        eig_point = x;
                    }
                    let f = a.frobenius_sq();
                    let nu = if f > 0.0 { a.trace().powi(2) / f - 1.0 } else { f64::NEG_INFINITY };
                    if nu < nu_est {
                        nu_est = nu;
                        worst_point = x;
                    }
                }
            }
        }
        let elliptic = min_eig > 0.0;
        Ok(CordesReport {
            nu_est,
            pass: elliptic && nu_est >= self.nu - 1e-12,
            worst_point: if elliptic { worst_point } else { eig_point },
            min_eigenvalue: min_eig,
        })
    }

    /// Uniform grid of sample points over the bounding box, kept if inside the domain.
    pub fn sample_points(&self, n: usize) -> Vec<Point2> {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.domain {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let mut out = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let p = Point2::new(
                    x0 + (x1 - x0) * i as f64 / n as f64,
                    y0 + (y1 - y0) * j as f64 / n as f64,
                );
                if self.contains(p) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn contains(&self, p: Point2) -> bool {
        let n = self.domain.len();
        (0..n).all(|i| {
            let (a, b) = (self.domain[i], self.domain[(i + 1) % n]);
            (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= -1e-14
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(Sym2);

    impl CoefficientField for Constant {
        fn diffusion(&self, _: Point2, _: &Control, _: &Control) -> Sym2 {
            self.0
        }
        fn source(&self, _: Point2, _: &Control, _: &Control) -> f64 {
            0.0
        }
    }

    fn constant(a: Sym2, nu: f64) -> ControlProblem {
        ControlProblem {
            name: "constant".into(),
            domain: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            controls: ControlSet::singleton(),
            coeffs: Arc::new(Constant(a)),
            nu,
            exact: None,
        }
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_eval(&Sym2::IDENTITY).unwrap(), 1.0);
        assert!((gamma_eval(&Sym2::diag(2.0, 1.0)).unwrap() - 0.6).abs() < 1e-15);
        let a = Sym2::new(1.3, 0.2, 0.7);
        let t = 3.5;
        assert!((gamma_eval(&a.scale(t)).unwrap() - gamma_eval(&a).unwrap() / t).abs() < 1e-14);
        assert!(matches!(gamma_eval(&Sym2::default()), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn cordes_estimates() {
        let pts = constant(Sym2::IDENTITY, 1.0).sample_points(4);
        let r = constant(Sym2::IDENTITY, 1.0).verify_ellipticity_cordes(&pts).unwrap();
        assert!(r.pass && (r.nu_est - 1.0).abs() < 1e-15);
        let r = constant(Sym2::diag(1.0, 0.1), 0.19).verify_ellipticity_cordes(&pts).unwrap();
        assert!((r.nu_est - 0.2 / 1.01).abs() < 1e-14);
        assert!(r.pass);
        let r = constant(Sym2::diag(1.0, 0.0), 0.01).verify_ellipticity_cordes(&pts).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn non_symmetric_rejected() {
        assert!(matches!(
            Sym2::from_matrix([[1.0, 0.5], [0.2, 1.0]]),
            Err(Error::NonSymmetric(_, _))
        ));
    }

    #[test]
    fn singleton_identity_value() {
        let p = constant(Sym2::IDENTITY, 1.0);
        let v = p.f_gamma_eval(Point2::new(0.3, 0.3), &Sym2::IDENTITY).unwrap();
        assert_eq!(v.value, 2.0);
        assert_eq!((v.opt_alpha, v.opt_beta), (0, 0));
    }

    #[test]
    fn empty_controls_rejected() {
        let mut p = constant(Sym2::IDENTITY, 1.0);
        p.controls.betas.clear();
        assert!(matches!(
            p.f_gamma_eval(Point2::new(0.0, 0.0), &Sym2::IDENTITY),
            Err(Error::EmptyControls)
        ));
    }

    #[test]
    fn rotation_preserves_cordes_ratio() {
        for k in 0..8 {
            let a = Sym2::rotated_anisotropy(k as f64 * 0.4, 0.1);
            let nu = a.trace().powi(2) / a.frobenius_sq() - 1.0;
            assert!((nu - 0.2 / 1.01).abs() < 1e-13);
            let [l0, l1] = a.eigenvalues();
            assert!((l0 - 0.1).abs() < 1e-13 && (l1 - 1.0).abs() < 1e-13);
        }
    }
}
