use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cordes::{CoefficientField, Control, ControlProblem, ControlSet};
use crate::fespace::build_space;
use crate::mesh::{unit_square_mesh, MeshLevel};

fn space(mesh: MeshLevel, p: usize, c: Continuity) -> FeSpace {
    build_space(Arc::new(mesh), SpaceConfig::new(p, c)).unwrap()
}

fn random(space: &FeSpace, rng: &mut ChaCha8Rng) -> DiscreteFunction {
    DiscreteFunction::from_coeffs((0..space.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// `a = I` for the first alpha, `diag(1, 1/2)` for the second, source `alpha + x y`.
struct TwoMatrices;

impl CoefficientField for TwoMatrices {
    fn diffusion(&self, _x: Point2, alpha: &Control, _beta: &Control) -> Sym2 {
        if alpha.params[0] == 0.0 {
            Sym2::IDENTITY
        } else {
            Sym2::diag(1.0, 0.5)
        }
    }

    fn source(&self, x: Point2, alpha: &Control, beta: &Control) -> f64 {
        alpha.params[0] + beta.params[0] + x.x * x.y
    }
}

fn two_matrix_problem() -> ControlProblem {
    ControlProblem {
        name: "two_matrices".into(),
        domain: vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ],
        controls: ControlSet {
            alphas: vec![Control::scalar(0.0), Control::scalar(1.0)],
            betas: vec![Control::scalar(0.0), Control::scalar(0.5)],
        },
        coeffs: Arc::new(TwoMatrices),
        nu: 0.5,
        exact: None,
    }
}

struct Laplace;

impl CoefficientField for Laplace {
    fn diffusion(&self, _x: Point2, _a: &Control, _b: &Control) -> Sym2 {
        Sym2::IDENTITY
    }

    fn source(&self, x: Point2, _a: &Control, _b: &Control) -> f64 {
        (3.0 * x.x).sin() + x.y
    }
}

fn laplace_problem() -> ControlProblem {
    ControlProblem {
        coeffs: Arc::new(Laplace),
        controls: ControlSet::singleton(),
        nu: 1.0,
        ..two_matrix_problem()
    }
}

#[test]
fn stabilisation_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mesh = unit_square_mesh(1).unwrap();
    for _level in 0..3 {
        for c in [Continuity::Dg, Continuity::C0] {
            for p in [2, 3] {
                let sp = space(mesh.clone(), p, c);
                let w = random(&sp, &mut rng);
                let v = random(&sp, &mut rng);
                let a = stab_form(&sp, &w, &v, StabMode::Facewise);
                let b = stab_form(&sp, &w, &v, StabMode::Lifted);
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{c:?} p={p}: {a} vs {b}");
            }
        }
        let marked: Vec<usize> = (0..mesh.num_elements()).step_by(2).collect();
        mesh = mesh.refine(&marked).unwrap();
    }
}

#[test]
fn stabilisation_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sp = space(unit_square_mesh(2).unwrap(), 2, Continuity::Dg);
    let w = random(&sp, &mut rng);
    let v = random(&sp, &mut rng);
    let a = stab_form(&sp, &w, &v, StabMode::Facewise);
    let b = stab_form(&sp, &v, &w, StabMode::Facewise);
    assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
}

#[test]
fn lifting_adjoint_identity() {
    // int_Omega r^F(g) phi = int_F g {phi} for every piecewise P_q phi
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sp = space(unit_square_mesh(2).unwrap().refine(&[0, 3]).unwrap(), 3, Continuity::Dg);
    let nl = sp.nlift();
    let g = |x: Point2| (2.0 * x.x).cos() + x.y * x.y;
    for f in 0..sp.mesh.faces.len() {
        let face = &sp.mesh.faces[f];
        let phi: Vec<Vec<f64>> = (0..sp.num_elements())
            .map(|_| (0..nl).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let lifted = lift_face_scalar(&sp, f, &g);
        let mut lhs = 0.0;
        for (k, c) in &lifted {
            for (xi, _, w) in sp.element_points(*k) {
                lhs += w * LiftedHessianField::eval(&sp, *k, xi, c) * LiftedHessianField::eval(&sp, *k, xi, &phi[*k]);
            }
        }
        let weight = if face.is_boundary() { 1.0 } else { 0.5 };
        let mut rhs = 0.0;
        for (x, w) in sp.face_points(f) {
            for s in face.sides() {
                let k = s.element;
                rhs += weight * w * g(x) * LiftedHessianField::eval(&sp, k, sp.geometry[k].inverse_map(x), &phi[k]);
            }
        }
        assert!((lhs - rhs).abs() < 1e-11, "face {f}: {lhs} vs {rhs}");
    }
}

#[test]
fn boundary_lifting_is_trace_free() {
    let sp = space(unit_square_mesh(2).unwrap(), 2, Continuity::Dg);
    for (f, face) in sp.mesh.faces.iter().enumerate() {
        if !face.is_boundary() {
            continue;
        }
        for (_, r) in lift_face(&sp, f, &|x| [1.0 + x.x, x.y - 2.0]) {
            for m in 0..sp.nlift() {
                assert!((r[0][m] + r[3][m]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn constant_lifting_on_two_triangles() {
    // q = 0 on the unit square split by its diagonal: each side gets
    // 1/2 * |F| * (1/sqrt(|K|)) / sqrt(|K|) = 1/2 * sqrt(2) * 2 = sqrt(2).
    let mesh = Arc::new(unit_square_mesh(1).unwrap());
    let sp = build_space(mesh, SpaceConfig::new(2, Continuity::Dg).with_q(0)).unwrap();
    let f = sp.mesh.faces.iter().position(|f| !f.is_boundary()).unwrap();
    let lifted = lift_face_scalar(&sp, f, &|_| 1.0);
    assert_eq!(lifted.len(), 2);
    for (k, c) in lifted {
        let value = LiftedHessianField::eval(&sp, k, [0.2, 0.3], &c);
        assert!((value - 2f64.sqrt()).abs() < 1e-13, "{value}");
    }
}

#[test]
fn unit_jump_penalty() {
    let sp = space(unit_square_mesh(1).unwrap(), 2, Continuity::Dg);
    let v = sp.interpolate_local(&|k, _| if k == 0 { 1.0 } else { 0.0 });
    let params = FormParams {
        theta: 0.0,
        sigma: 1.0,
        rho: 1.0,
    };
    let terms = jump_penalty_face_terms(&sp, &v, &v, &params);
    for (f, t) in terms.iter().enumerate() {
        let face = &sp.mesh.faces[f];
        let touches = face.sides().any(|s| s.element == 0);
        let h = sp.mesh.face_length(f);
        // int_F 1 / h^3 = h^-2
        let expected = if touches { 1.0 / (h * h) } else { 0.0 };
        assert!((t - expected).abs() < 1e-12, "face {f}: {t} vs {expected}");
    }
}

#[test]
fn norm_of_half_x_squared() {
    // volume: 1 + 1/3 + 1/20; boundary jumps: y = 0 and y = 1 give 1/20 each, x = 1 gives 1/4
    let sp = space(unit_square_mesh(1).unwrap(), 2, Continuity::Dg);
    let v = sp.interpolate_local(&|_, x| 0.5 * x.x * x.x);
    let expected = 1.0 + 1.0 / 3.0 + 1.0 / 20.0 + 0.1 + 0.25;
    assert!((norm_k(&sp, &v).powi(2) - expected).abs() < 1e-12);
    let problem = laplace_problem();
    let disc = Discretization::new(&sp, &problem, FormParams::defaults(&sp.config)).unwrap();
    assert!((disc.norm_sq(&v.coeffs) - expected).abs() < 1e-12);
}

fn flip_interior_normals(mesh: &MeshLevel) -> MeshLevel {
    let mut m = mesh.clone();
    for face in m.faces.iter_mut() {
        if let Some(plus) = face.plus {
            face.plus = Some(face.minus);
            face.minus = plus;
            face.normal = [-face.normal[0], -face.normal[1]];
        }
    }
    m
}

#[test]
fn forms_do_not_depend_on_normal_orientation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mesh = unit_square_mesh(2).unwrap().refine(&[1]).unwrap();
    let a = space(mesh.clone(), 2, Continuity::Dg);
    let b = space(flip_interior_normals(&mesh), 2, Continuity::Dg);
    let w = random(&a, &mut rng);
    let v = random(&a, &mut rng);
    let params = FormParams::defaults(&a.config);
    for mode in [StabMode::Facewise, StabMode::Lifted] {
        let (sa, sb) = (stab_form(&a, &w, &v, mode), stab_form(&b, &w, &v, mode));
        assert!((sa - sb).abs() < 1e-10 * sa.abs().max(1.0));
    }
    let (ja, jb) = (jump_penalty_form(&a, &w, &v, &params), jump_penalty_form(&b, &w, &v, &params));
    assert!((ja - jb).abs() < 1e-10 * ja.abs().max(1.0));
    let problem = two_matrix_problem();
    let ra = Discretization::new(&a, &problem, params).unwrap().residual(&w).unwrap();
    let rb = Discretization::new(&b, &problem, params).unwrap().residual(&w).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
    }
}

#[test]
fn residual_matches_function_level_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let problem = two_matrix_problem();
    for c in [Continuity::Dg, Continuity::C0] {
        let sp = space(unit_square_mesh(2).unwrap(), 2, c);
        let params = FormParams::defaults(&sp.config);
        let disc = Discretization::new(&sp, &problem, params).unwrap();
        let u = random(&sp, &mut rng);
        let r = disc.residual(&u).unwrap();
        for i in (0..sp.dim).step_by(3) {
            let mut e = vec![0.0; sp.dim];
            e[i] = 1.0;
            let phi = DiscreteFunction::from_coeffs(e);
            let lap = lifted_hessian(&sp, &phi);
            let mut volume = 0.0;
            for k in 0..sp.num_elements() {
                let lu = sp.local_coeffs(k, &u.coeffs);
                let dk = lap.lifted_laplacian(k);
                for (xi, x, w) in sp.element_points(k) {
                    let h = Sym2::from_array(sp.eval_local(k, xi, &lu).hess);
                    let fg = problem.f_gamma_eval(x, &h).unwrap().value;
                    volume += w * fg * LiftedHessianField::eval(&sp, k, xi, &dk);
                }
            }
            let expected = volume
                + params.theta * stab_form(&sp, &u, &phi, StabMode::Lifted)
                + jump_penalty_form(&sp, &u, &phi, &params);
            assert!((r[i] - expected).abs() < 1e-9 * expected.abs().max(1.0), "{c:?} {i}: {} vs {expected}", r[i]);
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let problem = two_matrix_problem();
    let sp = space(unit_square_mesh(2).unwrap(), 2, Continuity::Dg);
    let disc = Discretization::new(&sp, &problem, FormParams::defaults(&sp.config)).unwrap();
    let u = random(&sp, &mut rng);
    let d: Vec<f64> = (0..sp.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let jd = disc.jacobian(&u).unwrap().mul_vec(&d);
    let eps = 1e-6;
    let shifted = |t: f64| DiscreteFunction::from_coeffs(u.coeffs.iter().zip(&d).map(|(a, b)| a + t * b).collect());
    let rp = disc.residual(&shifted(eps)).unwrap();
    let rm = disc.residual(&shifted(-eps)).unwrap();
    let scale = jd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..sp.dim {
        let fd = (rp[i] - rm[i]) / (2.0 * eps);
        assert!((fd - jd[i]).abs() < 1e-5 * scale, "{i}: {fd} vs {}", jd[i]);
    }
}

#[test]
fn laplace_residual_is_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let problem = laplace_problem();
    let sp = space(unit_square_mesh(2).unwrap(), 3, Continuity::Dg);
    let disc = Discretization::new(&sp, &problem, FormParams::defaults(&sp.config)).unwrap();
    let u = random(&sp, &mut rng);
    let v = random(&sp, &mut rng);
    let sum = DiscreteFunction::from_coeffs(u.coeffs.iter().zip(&v.coeffs).map(|(a, b)| a + b).collect());
    let r0 = disc.residual(&DiscreteFunction::zeros(&sp)).unwrap();
    let (ru, rv, rs) = (disc.residual(&u).unwrap(), disc.residual(&v).unwrap(), disc.residual(&sum).unwrap());
    for i in 0..sp.dim {
        assert!((rs[i] - ru[i] - rv[i] + r0[i]).abs() < 1e-9 * rs[i].abs().max(1.0));
    }
}

#[test]
fn rejects_bad_parameters() {
    let cfg = SpaceConfig::new(2, Continuity::Dg);
    let mut p = FormParams::defaults(&cfg);
    assert!(p.validate(Continuity::Dg).is_ok());
    p.rho = 0.0;
    assert!(p.validate(Continuity::Dg).is_err());
    assert!(p.validate(Continuity::C0).is_ok());
    p.theta = 1.5;
    assert!(p.validate(Continuity::C0).is_err());
}
