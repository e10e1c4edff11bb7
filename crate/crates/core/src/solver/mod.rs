//! Semismooth Newton with frozen controls for `A_k(u; v) = 0`, with a damped
//! preconditioned fixed-point fallback.

mod sparse;

pub use sparse::{dot, linear_solve, norm, Factorization, SparseBuilder, SparseMatrix};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cordes::ControlProblem;
use crate::error::{Error, Result};
use crate::fespace::{DiscreteFunction, FeSpace};
use crate::forms::{Discretization, FormParams};

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Tolerance on the residual measured in the dual of `||.||_k`, relative to
    /// `max(1, ||R(0)||_*)` so that it stays above round-off on fine meshes.
    pub tol: f64,
    pub max_newton: usize,
    /// Backtracking factor of the line search.
    pub damping: f64,
    pub max_backtracks: usize,
    /// Fixed-point step; `None` derives it from sampled monotonicity and Lipschitz constants.
    pub fallback_tau: Option<f64>,
    pub max_fallback: usize,
    pub initial_guess: Option<DiscreteFunction>,
    /// Random pairs used to check strong monotonicity before solving (0 skips the check).
    pub monotonicity_samples: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_newton: 50,
            damping: 0.5,
            max_backtracks: 10,
            fallback_tau: None,
            max_fallback: 500,
            initial_guess: None,
            monotonicity_samples: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub newton_iters: usize,
    pub fallback_iters: usize,
    pub final_residual: f64,
    /// `max(1, ||R(0)||_*)`, the scale of the stopping test.
    pub residual_scale: f64,
    /// Stopped at the round-off floor, above `tol` but below `sqrt(tol)` (relative).
    pub stagnated: bool,
    pub residual_history: Vec<f64>,
    /// Smallest sampled ratio `(R(w) - R(v)) . (w - v) / ||w - v||_k^2`.
    pub monotonicity_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Smallest observed strong-monotonicity ratio.
    pub c: f64,
    /// Largest observed ratio `||R(w) - R(v)||_* / ||w - v||_k`.
    pub lipschitz: f64,
    pub samples: usize,
}

/// Dual norm `sqrt(r . G^{-1} r)` with `G` the Gram matrix of `||.||_k`.
pub struct DualNorm {
    lu: Factorization,
}

impl DualNorm {
    pub fn new(disc: &Discretization) -> Result<Self> {
        Ok(DualNorm {
            lu: disc.gram.factorize()?,
        })
    }

    pub fn riesz(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.lu.solve(r)
    }

    pub fn eval(&self, r: &[f64]) -> Result<f64> {
        Ok(dot(r, &self.riesz(r)?).max(0.0).sqrt())
    }
}

pub fn random_function(space: &FeSpace, rng: &mut impl Rng) -> DiscreteFunction {
    DiscreteFunction::from_coeffs((0..space.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Samples `samples` random pairs `(w, v)` and records the monotonicity and
/// Lipschitz ratios of the discrete operator.
pub fn sample_monotonicity(
    disc: &Discretization,
    dual: &DualNorm,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<MonotonicityReport> {
    let mut c = f64::INFINITY;
    let mut lip: f64 = 0.0;
    for _ in 0..samples {
        let w = random_function(disc.space, rng);
        let v = random_function(disc.space, rng);
        let rw = disc.residual(&w)?;
        let rv = disc.residual(&v)?;
        let z: Vec<f64> = w.coeffs.iter().zip(&v.coeffs).map(|(a, b)| a - b).collect();
        let dr: Vec<f64> = rw.iter().zip(&rv).map(|(a, b)| a - b).collect();
        let nz = disc.norm_sq(&z);
        c = c.min(dot(&dr, &z) / nz);
        lip = lip.max(dual.eval(&dr)? / nz.sqrt());
    }
    Ok(MonotonicityReport {
        c,
        lipschitz: lip,
        samples,
    })
}

pub fn solve_discrete(
    space: &FeSpace,
    problem: &ControlProblem,
    params: FormParams,
    opts: &SolveOptions,
) -> Result<(DiscreteFunction, SolveStats)> {
    let disc = Discretization::new(space, problem, params)?;
    solve_with(&disc, opts)
}

fn axpy(u: &DiscreteFunction, t: f64, d: &[f64]) -> DiscreteFunction {
    DiscreteFunction::from_coeffs(u.coeffs.iter().zip(d).map(|(a, b)| a + t * b).collect())
}

pub fn solve_with(disc: &Discretization, opts: &SolveOptions) -> Result<(DiscreteFunction, SolveStats)> {
    if !(opts.tol > 0.0) {
        return Err(Error::config("tol", "tolerance must be positive"));
    }
    let dual = DualNorm::new(disc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = SolveStats::default();
    let mut report = None;
    if opts.monotonicity_samples > 0 {
        let r = sample_monotonicity(disc, &dual, opts.monotonicity_samples, &mut rng)?;
        stats.monotonicity_c = Some(r.c);
        if !(r.c > 0.0) {
            return Err(Error::NotMonotone { c: r.c });
        }
        report = Some(r);
    }

    let mut u = match &opts.initial_guess {
        Some(g) if g.coeffs.len() == disc.space.dim => g.clone(),
        Some(_) => return Err(Error::config("initial_guess", "dimension mismatch")),
        None => DiscreteFunction::zeros(disc.space),
    };
    let mut fg = disc.evaluate_fg(&u)?;
    let mut r = disc.residual_with(&u, &fg);
    let mut nr = dual.eval(&r)?;
    stats.residual_history.push(nr);
    let r0 = if opts.initial_guess.is_some() {
        dual.eval(&disc.residual(&DiscreteFunction::zeros(disc.space))?)?
    } else {
        nr
    };
    stats.residual_scale = r0.max(1.0);
    let tol = opts.tol * stats.residual_scale;

    while nr > tol {
        if stats.newton_iters + stats.fallback_iters >= opts.max_newton + opts.max_fallback
            || stats.newton_iters >= opts.max_newton
        {
            stats.final_residual = nr;
            return Err(Error::NoConvergence(Box::new(stats)));
        }
        let jac = disc.jacobian_with(&fg);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut accepted = false;
        if let Ok(delta) = linear_solve(&jac, &neg) {
            let mut step = 1.0;
            for _ in 0..=opts.max_backtracks {
                let cand = axpy(&u, step, &delta);
                let fgc = disc.evaluate_fg(&cand)?;
                let rc = disc.residual_with(&cand, &fgc);
                let nc = dual.eval(&rc)?;
                if nc < nr {
                    (u, fg, r, nr) = (cand, fgc, rc, nc);
                    accepted = true;
                    break;
                }
                step *= opts.damping;
            }
        }
        if accepted {
            stats.newton_iters += 1;
            stats.residual_history.push(nr);
            continue;
        }
        if nr <= tol.sqrt() * stats.residual_scale.sqrt() {
            // no step reduces an already tiny residual: round-off floor
            stats.stagnated = true;
            break;
        }

        // Newton stalled: one accepted step of u <- u - tau G^{-1} R(u).
        let mut tau = match (opts.fallback_tau, report) {
            (Some(t), _) => t,
            (None, Some(rep)) => rep.c / (rep.lipschitz * rep.lipschitz),
            (None, None) => {
                let rep = sample_monotonicity(disc, &dual, 3, &mut rng)?;
                report = Some(rep);
                rep.c / (rep.lipschitz * rep.lipschitz)
            }
        };
        let dir = dual.riesz(&r)?;
        let mut moved = false;
        for _ in 0..30 {
            let cand = axpy(&u, -tau, &dir);
            let fgc = disc.evaluate_fg(&cand)?;
            let rc = disc.residual_with(&cand, &fgc);
            let nc = dual.eval(&rc)?;
            if nc < nr {
                (u, fg, r, nr) = (cand, fgc, rc, nc);
                moved = true;
                break;
            }
            tau *= 0.5;
        }
        stats.fallback_iters += 1;
        if !moved {
            stats.final_residual = nr;
            return Err(Error::NoConvergence(Box::new(stats)));
        }
        stats.residual_history.push(nr);
        if stats.fallback_iters >= opts.max_fallback {
            stats.final_residual = nr;
            return Err(Error::NoConvergence(Box::new(stats)));
        }
    }
    stats.final_residual = nr;
    Ok((u, stats))
}
