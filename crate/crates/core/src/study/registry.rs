//! Built-in benchmark problems and configurable coefficient families, all
//! with manufactured solution `u = sin(pi x) sin(pi y)` on the unit square.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cordes::{CoefficientField, Control, ControlProblem, ControlSet, ExactSolution, Sym2};
use crate::error::{Error, Result};
use crate::mesh::Point2;

pub struct SinSin;

impl ExactSolution for SinSin {
    fn value(&self, x: Point2) -> f64 {
        (PI * x.x).sin() * (PI * x.y).sin()
    }

    fn gradient(&self, x: Point2) -> [f64; 2] {
        let (sx, cx) = (PI * x.x).sin_cos();
        let (sy, cy) = (PI * x.y).sin_cos();
        [PI * cx * sy, PI * sx * cy]
    }

    fn hessian(&self, x: Point2) -> Sym2 {
        let (sx, cx) = (PI * x.x).sin_cos();
        let (sy, cy) = (PI * x.y).sin_cos();
        let p2 = PI * PI;
        Sym2::new(-p2 * sx * sy, p2 * cx * cy, -p2 * sx * sy)
    }
}

/// Sign-changing switching function `cos(pi x) cos(pi y)`.
pub fn switch_g(x: Point2) -> f64 {
    (PI * x.x).cos() * (PI * x.y).cos()
}

/// Controls `alpha = (matrix index, s)` with `s` in {0, 1} and `beta` in {0, 1};
/// `a^alpha = matrices[i]` and `f = a : D^2 u - (s - beta) g`, so that
/// `inf_alpha sup_beta (s - beta) g = 0` makes `u` the exact solution.
struct SwitchField {
    matrices: Vec<Sym2>,
    switching: bool,
}

impl SwitchField {
    fn matrix(&self, alpha: &Control) -> Sym2 {
        self.matrices[alpha.params[0] as usize]
    }
}

impl CoefficientField for SwitchField {
    fn diffusion(&self, _x: Point2, alpha: &Control, _beta: &Control) -> Sym2 {
        self.matrix(alpha)
    }

    fn source(&self, x: Point2, alpha: &Control, beta: &Control) -> f64 {
        let lu = self.matrix(alpha).contract(&SinSin.hessian(x));
        if self.switching {
            lu - (alpha.params[1] - beta.params[0]) * switch_g(x)
        } else {
            lu
        }
    }
}

fn unit_square() -> Vec<Point2> {
    vec![
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ]
}

fn cordes_nu(matrices: &[Sym2]) -> f64 {
    matrices
        .iter()
        .map(|a| a.trace().powi(2) / a.frobenius_sq() - 1.0)
        .fold(f64::INFINITY, f64::min)
}

/// Builds a manufactured problem over `matrices`. With `switching` every
/// matrix appears with both switch values and `beta` ranges over {0, 1}.
pub fn manufactured(name: &str, labels: &[String], matrices: Vec<Sym2>, switching: bool) -> ControlProblem {
    let (alphas, betas) = if switching {
        let alphas = labels
            .iter()
            .enumerate()
            .flat_map(|(i, l)| (0..2).map(move |s| Control::new(format!("{l},s={s}"), vec![i as f64, s as f64])))
            .collect();
        (alphas, vec![Control::scalar(0.0), Control::scalar(1.0)])
    } else {
        let alphas = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Control::new(l.clone(), vec![i as f64, 0.0]))
            .collect();
        (alphas, vec![Control::scalar(0.0)])
    };
    ControlProblem {
        name: name.to_string(),
        domain: unit_square(),
        controls: ControlSet { alphas, betas },
        nu: cordes_nu(&matrices),
        coeffs: Arc::new(SwitchField { matrices, switching }),
        exact: Some(Arc::new(SinSin)),
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub problem: ControlProblem,
    pub notes: &'static str,
}

pub const ANISOTROPY_EPS: f64 = 0.1;
pub const ANISOTROPY_ANGLES: usize = 4;

pub fn poisson_singleton() -> ControlProblem {
    manufactured("poisson_singleton", &["I".to_string()], vec![Sym2::IDENTITY], false)
}

pub fn two_control_switch() -> ControlProblem {
    manufactured("two_control_switch", &["I".to_string()], vec![Sym2::IDENTITY], true)
}

pub fn rotated_anisotropic() -> ControlProblem {
    let angles: Vec<f64> = (0..ANISOTROPY_ANGLES).map(|i| i as f64 * PI / ANISOTROPY_ANGLES as f64).collect();
    let labels: Vec<String> = angles.iter().map(|t| format!("theta={t:.6}")).collect();
    let matrices = angles.iter().map(|&t| Sym2::rotated_anisotropy(t, ANISOTROPY_EPS)).collect();
    manufactured("rotated_anisotropic", &labels, matrices, true)
}

pub fn registry() -> Vec<BenchmarkProblem> {
    vec![
        BenchmarkProblem {
            problem: poisson_singleton(),
            notes: "a = I, single control, f = Laplacian of u",
        },
        BenchmarkProblem {
            problem: two_control_switch(),
            notes: "A = B = {0, 1}, a = I, f = Laplacian of u - (alpha - beta) cos(pi x) cos(pi y)",
        },
        BenchmarkProblem {
            problem: rotated_anisotropic(),
            notes: "a = R(theta)^T diag(1, 0.1) R(theta) over 4 angles, each with switch s in {0, 1}; beta in {0, 1}",
        },
    ]
}

pub fn lookup(name: &str) -> Result<ControlProblem> {
    registry()
        .into_iter()
        .map(|b| b.problem)
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownProblem(name.to_string()))
}

/// A user problem assembled from a built-in coefficient family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CustomProblem {
    /// Constant matrices given as `[a11, a12, a22]`.
    ConstantMatrices {
        name: String,
        matrices: Vec<[f64; 3]>,
        #[serde(default = "yes")]
        switching: bool,
    },
    /// `R(theta)^T diag(1, epsilon) R(theta)` over the given angles.
    RotatedAnisotropy {
        name: String,
        angles: Vec<f64>,
        epsilon: f64,
        #[serde(default = "yes")]
        switching: bool,
    },
}

fn yes() -> bool {
    true
}

impl CustomProblem {
    pub fn build(&self) -> Result<ControlProblem> {
        let (name, labels, matrices, switching) = match self {
            CustomProblem::ConstantMatrices {
                name,
                matrices,
                switching,
            } => {
                let labels: Vec<String> = (0..matrices.len()).map(|i| format!("a{i}")).collect();
                (name, labels, matrices.iter().map(|m| Sym2::from_array(*m)).collect::<Vec<_>>(), *switching)
            }
            CustomProblem::RotatedAnisotropy {
                name,
                angles,
                epsilon,
                switching,
            } => {
                if !(*epsilon > 0.0) {
                    return Err(Error::config("problem.epsilon", "must be positive"));
                }
                let labels: Vec<String> = angles.iter().map(|t| format!("theta={t}")).collect();
                let m = angles.iter().map(|&t| Sym2::rotated_anisotropy(t, *epsilon)).collect();
                (name, labels, m, *switching)
            }
        };
        if matrices.is_empty() {
            return Err(Error::config("problem", "no matrices given"));
        }
        for (i, m) in matrices.iter().enumerate() {
            if !(m.eigenvalues()[0] > 0.0) {
                return Err(Error::config("problem", format!("matrix {i} is not positive definite")));
            }
        }
        Ok(manufactured(name, &labels, matrices, switching))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_solution_derivatives() {
        let h = 1e-5;
        let x = Point2::new(0.31, 0.67);
        let g = SinSin.gradient(x);
        let fd = [
            (SinSin.value(Point2::new(x.x + h, x.y)) - SinSin.value(Point2::new(x.x - h, x.y))) / (2.0 * h),
            (SinSin.value(Point2::new(x.x, x.y + h)) - SinSin.value(Point2::new(x.x, x.y - h))) / (2.0 * h),
        ];
        assert!((g[0] - fd[0]).abs() < 1e-8 && (g[1] - fd[1]).abs() < 1e-8);
        let hx = (SinSin.gradient(Point2::new(x.x, x.y + h))[0] - SinSin.gradient(Point2::new(x.x, x.y - h))[0]) / (2.0 * h);
        assert!((SinSin.hessian(x).xy - hx).abs() < 1e-7);
    }

    #[test]
    fn manufactured_solutions_solve_the_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for b in registry() {
            let p = &b.problem;
            let ex = p.exact.as_ref().unwrap();
            for _ in 0..100 {
                let x = Point2::new(rng.random(), rng.random());
                let v = p.f_gamma_eval(x, &ex.hessian(x)).unwrap().value;
                assert!(v.abs() < 1e-10, "{}: {v}", p.name);
            }
        }
    }

    #[test]
    fn brute_force_switch_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let g = switch_g(Point2::new(rng.random(), rng.random()));
            let v = [0.0, 1.0]
                .iter()
                .map(|a| [0.0, 1.0].iter().map(|b| (a - b) * g).fold(f64::NEG_INFINITY, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn registry_passes_cordes() {
        for b in registry() {
            let pts = b.problem.sample_points(6);
            let r = b.problem.verify_ellipticity_cordes(&pts).unwrap();
            assert!(r.pass, "{}", b.problem.name);
        }
        assert_eq!(two_control_switch().nu, 1.0);
        assert!((rotated_anisotropic().nu - 0.2 / 1.01).abs() < 1e-12);
    }

    #[test]
    fn switching_controls_are_active() {
        let p = two_control_switch();
        let ex = SinSin;
        let a = Point2::new(0.2, 0.2);
        let b = Point2::new(0.2, 0.8);
        let ca = p.f_gamma_eval(a, &ex.hessian(a)).unwrap();
        let cb = p.f_gamma_eval(b, &ex.hessian(b)).unwrap();
        assert_ne!((ca.opt_alpha, ca.opt_beta), (cb.opt_alpha, cb.opt_beta));
    }

    #[test]
    fn custom_families() {
        let c: CustomProblem = toml::from_str(
            "family = \"rotated_anisotropy\"\nname = \"r\"\nangles = [0.0, 0.7]\nepsilon = 0.3\n",
        )
        .unwrap();
        let p = c.build().unwrap();
        assert_eq!(p.controls.alphas.len(), 4);
        assert!((p.nu - 0.6 / 1.09).abs() < 1e-12);
        let bad = CustomProblem::ConstantMatrices {
            name: "bad".into(),
            matrices: vec![[1.0, 0.0, -1.0]],
            switching: false,
        };
        assert!(bad.build().is_err());
    }
}
