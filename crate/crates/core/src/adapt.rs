//! A posteriori estimators, marking, and the solve-estimate-mark-refine loop.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cordes::{ControlProblem, ExactSolution, Sym2};
use crate::error::{Error, Result};
use crate::fespace::{build_space, quadrature_rule, DiscreteFunction, FeSpace, RefDomain, SpaceConfig};
use crate::forms::{face_traces, jump_seminorm, FormParams};
use crate::mesh::MeshLevel;
use crate::solver::{solve_discrete, SolveOptions, SolveStats};

/// Squared estimator contributions of one element.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementEstimate {
    pub element: usize,
    pub residual_sq: f64,
    pub gradjump_sq: f64,
    pub valjump_sq: f64,
}

impl ElementEstimate {
    pub fn eta_sq(&self) -> f64 {
        self.residual_sq + self.gradjump_sq + self.valjump_sq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub per_element: Vec<ElementEstimate>,
    pub total: f64,
}

impl EstimatorReport {
    pub fn from_elements(per_element: Vec<ElementEstimate>) -> Self {
        let total = per_element.iter().map(|e| e.eta_sq()).sum::<f64>().sqrt();
        EstimatorReport { per_element, total }
    }

    /// Square roots of the summed residual, gradient-jump and value-jump parts.
    pub fn parts(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for e in &self.per_element {
            s[0] += e.residual_sq;
            s[1] += e.gradjump_sq;
            s[2] += e.valjump_sq;
        }
        s.map(f64::sqrt)
    }

    pub fn eta(&self) -> Vec<f64> {
        self.per_element.iter().map(|e| e.eta_sq().sqrt()).collect()
    }

    /// Smallest element id attaining the largest estimator.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for e in &self.per_element {
            let v = e.eta_sq();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((e.element, v));
            }
        }
        best.map(|b| b.0)
    }
}

/// Element-wise estimator: `int_K F_gamma[u]^2` plus face jump terms weighted
/// by one half on interior faces (shared by the two neighbours) and one on the boundary.
pub fn estimate(space: &FeSpace, problem: &ControlProblem, u: &DiscreteFunction) -> Result<EstimatorReport> {
    let residual: Vec<f64> = (0..space.num_elements())
        .into_par_iter()
        .map(|k| {
            let local = space.local_coeffs(k, &u.coeffs);
            let mut s = 0.0;
            for (xi, x, w) in space.element_points(k) {
                let h = Sym2::from_array(space.eval_local(k, xi, &local).hess);
                s += w * problem.f_gamma_eval(x, &h)?.value.powi(2);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut per_element: Vec<ElementEstimate> = residual
        .into_iter()
        .enumerate()
        .map(|(element, residual_sq)| ElementEstimate {
            element,
            residual_sq,
            ..Default::default()
        })
        .collect();
    for (f, face) in space.mesh.faces.iter().enumerate() {
        let interior = !face.is_boundary();
        let h = space.mesh.face_length(f);
        let delta = if interior { 0.5 } else { 1.0 };
        let (mut g, mut v) = (0.0, 0.0);
        for (_, w, d) in face_traces(space, f, u) {
            if interior {
                g += w * (d.jump_grad[0].powi(2) + d.jump_grad[1].powi(2));
            }
            v += w * d.jump * d.jump;
        }
        for s in face.sides() {
            let e = &mut per_element[s.element];
            e.gradjump_sq += delta * g / h;
            e.valjump_sq += delta * v / h.powi(3);
        }
    }
    Ok(EstimatorReport::from_elements(per_element))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarkStrategy {
    /// All elements with `eta_K >= fraction * max eta`.
    Max { fraction: f64 },
    /// Minimal set carrying `theta` of the total squared estimator.
    Doerfler { theta: f64 },
}

impl Default for MarkStrategy {
    fn default() -> Self {
        MarkStrategy::Doerfler { theta: 0.5 }
    }
}

impl MarkStrategy {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            MarkStrategy::Max { fraction } => ("mark.fraction", fraction),
            MarkStrategy::Doerfler { theta } => ("mark.theta", theta),
        };
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::config(name, format!("{v} not in (0, 1]")));
        }
        Ok(())
    }
}

impl fmt::Display for MarkStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkStrategy::Max { fraction } => write!(f, "max:{fraction}"),
            MarkStrategy::Doerfler { theta } => write!(f, "doerfler:{theta}"),
        }
    }
}

impl FromStr for MarkStrategy {
    type Err = Error;

    /// Parses `max:<fraction>` or `doerfler:<theta>`; the value defaults to 0.5.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').unwrap_or((s, "0.5"));
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::config("mark", format!("bad parameter `{value}`")))?;
        let m = match kind.trim() {
            "max" => MarkStrategy::Max { fraction: v },
            "doerfler" | "dorfler" | "bulk" => MarkStrategy::Doerfler { theta: v },
            other => return Err(Error::config("mark", format!("unknown strategy `{other}`"))),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Marked element ids in increasing order. The result always contains the
/// smallest id attaining the maximum estimator.
pub fn mark(report: &EstimatorReport, strategy: MarkStrategy) -> Result<Vec<usize>> {
    strategy.validate()?;
    let top = report.argmax().ok_or(Error::EmptyReport)?;
    let mut order: Vec<(usize, f64)> = report.per_element.iter().map(|e| (e.element, e.eta_sq())).collect();
    let mut out = match strategy {
        MarkStrategy::Max { fraction } => {
            let max = order.iter().map(|e| e.1).fold(0.0, f64::max).sqrt();
            order
                .iter()
                .filter(|e| e.1.sqrt() >= fraction * max)
                .map(|e| e.0)
                .collect::<Vec<_>>()
        }
        MarkStrategy::Doerfler { theta } => {
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let target = theta * report.per_element.iter().map(|e| e.eta_sq()).sum::<f64>();
            let mut acc = 0.0;
            let mut out = Vec::new();
            for (id, v) in order {
                if !out.is_empty() && acc >= target {
                    break;
                }
                out.push(id);
                acc += v;
            }
            out
        }
    };
    if !out.contains(&top) {
        out.push(top);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// `||u - u_h||_k` for a known solution, with volume quadrature exactness `2p + 4`.
pub fn error_norm_k(space: &FeSpace, exact: &dyn ExactSolution, u: &DiscreteFunction) -> Result<f64> {
    let rule = quadrature_rule(RefDomain::Triangle, 2 * space.config.p + 4)?;
    let volume: f64 = (0..space.num_elements())
        .into_par_iter()
        .map(|k| {
            let g = &space.geometry[k];
            let local = space.local_coeffs(k, &u.coeffs);
            let mut s = 0.0;
            for (xi, w) in rule.points.iter().zip(&rule.weights) {
                let x = g.map(*xi);
                let j = space.eval_local(k, *xi, &local);
                let e = exact.value(x) - j.value;
                let gr = exact.gradient(x);
                let eg = [gr[0] - j.grad[0], gr[1] - j.grad[1]];
                let eh = exact.hessian(x).sub(&Sym2::from_array(j.hess));
                s += w * g.det * (eh.frobenius_sq() + eg[0] * eg[0] + eg[1] * eg[1] + e * e);
            }
            s
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    // the exact solution is smooth and vanishes on the boundary, so its jumps are zero
    Ok((volume + jump_seminorm(space, u).powi(2)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxDofs,
    EtaTol,
    MaxIters,
    ZeroEstimator,
}

#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    pub space: SpaceConfig,
    pub params: FormParams,
    pub strategy: MarkStrategy,
    /// Refine every element instead of marking.
    pub uniform: bool,
    /// Bisection rounds per level in uniform mode; two rounds halve `h`.
    pub uniform_rounds: usize,
    /// Do not solve on a space with more degrees of freedom than this.
    pub max_dofs: Option<usize>,
    pub eta_tol: Option<f64>,
    pub max_iters: usize,
    pub solve: SolveOptions,
}

impl AdaptiveConfig {
    pub fn new(space: SpaceConfig) -> Self {
        AdaptiveConfig {
            space,
            params: FormParams::defaults(&space),
            strategy: MarkStrategy::default(),
            uniform: false,
            uniform_rounds: 2,
            max_dofs: None,
            eta_tol: None,
            max_iters: 30,
            solve: SolveOptions::default(),
        }
    }
}

/// One iteration of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub iter: usize,
    pub ndofs: usize,
    pub nelements: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub eta_total: f64,
    pub eta_residual: f64,
    pub eta_gradjump: f64,
    pub eta_valjump: f64,
    pub err_norm_k: Option<f64>,
    pub newton_iters: usize,
    pub fallback_iters: usize,
    pub final_residual: f64,
    pub stagnated: bool,
    pub marked: usize,
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    ndofs: usize,
    h_min: f64,
    h_max: f64,
    eta_total: f64,
    eta_residual: f64,
    eta_gradjump: f64,
    eta_valjump: f64,
    err_norm_k: Option<f64>,
    newton_iters: usize,
    marked: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveTrace {
    pub records: Vec<LevelRecord>,
    pub stop: Option<StopReason>,
}

impl AdaptiveTrace {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(TraceRow {
                iter: r.iter,
                ndofs: r.ndofs,
                h_min: r.h_min,
                h_max: r.h_max,
                eta_total: r.eta_total,
                eta_residual: r.eta_residual,
                eta_gradjump: r.eta_gradjump,
                eta_valjump: r.eta_valjump,
                err_norm_k: r.err_norm_k,
                newton_iters: r.newton_iters,
                marked: r.marked,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything produced in one iteration, handed to the observer of [`adaptive_solve_with`].
pub struct LevelState<'a> {
    pub record: &'a LevelRecord,
    pub space: &'a FeSpace,
    pub solution: &'a DiscreteFunction,
    pub report: &'a EstimatorReport,
    pub marked: &'a [usize],
    pub stats: &'a SolveStats,
}

pub fn adaptive_solve(problem: &ControlProblem, mesh: MeshLevel, config: &AdaptiveConfig) -> Result<AdaptiveTrace> {
    adaptive_solve_with(problem, mesh, config, &mut |_| Ok(()))
}

/// Runs the loop from `mesh`. On a solver failure the error carries the trace
/// of the completed iterations.
pub fn adaptive_solve_with(
    problem: &ControlProblem,
    mesh: MeshLevel,
    config: &AdaptiveConfig,
    observer: &mut dyn FnMut(&LevelState) -> Result<()>,
) -> Result<AdaptiveTrace> {
    config.space.validate()?;
    config.params.validate(config.space.continuity)?;
    config.strategy.validate()?;
    let mut trace = AdaptiveTrace::default();
    let abort = |trace: &AdaptiveTrace, e: Error| Error::Aborted {
        trace: Box::new(trace.clone()),
        source: Box::new(e),
    };
    let mut space = build_space(Arc::new(mesh), config.space)?;
    let mut previous: Option<(FeSpace, DiscreteFunction)> = None;
    for iter in 0.. {
        let mut opts = config.solve.clone();
        if let Some((coarse, u)) = &previous {
            opts.initial_guess = Some(space.transfer_from(coarse, u));
        }
        let (u, stats) = solve_discrete(&space, problem, config.params, &opts).map_err(|e| abort(&trace, e))?;
        let report = estimate(&space, problem, &u).map_err(|e| abort(&trace, e))?;
        let err = match &problem.exact {
            Some(ex) => Some(error_norm_k(&space, ex.as_ref(), &u)?),
            None => None,
        };
        let marked = if config.uniform {
            (0..space.num_elements()).collect()
        } else {
            mark(&report, config.strategy)?
        };
        let sizes = space.mesh.sizes();
        let [eta_residual, eta_gradjump, eta_valjump] = report.parts();
        let record = LevelRecord {
            iter,
            ndofs: space.dim,
            nelements: space.num_elements(),
            h_min: sizes.h_element.iter().copied().fold(f64::INFINITY, f64::min),
            h_max: sizes.h_element.iter().copied().fold(0.0, f64::max),
            eta_total: report.total,
            eta_residual,
            eta_gradjump,
            eta_valjump,
            err_norm_k: err,
            newton_iters: stats.newton_iters,
            fallback_iters: stats.fallback_iters,
            final_residual: stats.final_residual,
            stagnated: stats.stagnated,
            marked: marked.len(),
        };
        observer(&LevelState {
            record: &record,
            space: &space,
            solution: &u,
            report: &report,
            marked: &marked,
            stats: &stats,
        })?;
        trace.records.push(record);

        let stop = if report.total == 0.0 {
            Some(StopReason::ZeroEstimator)
        } else if config.eta_tol.is_some_and(|t| report.total <= t) {
            Some(StopReason::EtaTol)
        } else if iter + 1 >= config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if stop.is_some() {
            trace.stop = stop;
            break;
        }
        let next_mesh = if config.uniform {
            space.mesh.refine_uniform(config.uniform_rounds)?
        } else {
            space.mesh.refine(&marked)?
        };
        let next = build_space(Arc::new(next_mesh), config.space)?;
        if config.max_dofs.is_some_and(|m| next.dim > m) {
            trace.stop = Some(StopReason::MaxDofs);
            break;
        }
        previous = Some((std::mem::replace(&mut space, next), u));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cordes::{CoefficientField, Control, ControlSet};
    use crate::fespace::Continuity;
    use crate::mesh::{unit_square_mesh, Point2};
    use proptest::prelude::*;

    fn report(eta_sq: &[f64]) -> EstimatorReport {
        EstimatorReport::from_elements(
            eta_sq
                .iter()
                .enumerate()
                .map(|(element, &r)| ElementEstimate {
                    element,
                    residual_sq: r,
                    ..Default::default()
                })
                .collect(),
        )
    }

    struct Constant(f64);

    impl CoefficientField for Constant {
        fn diffusion(&self, _: Point2, _: &Control, _: &Control) -> Sym2 {
            Sym2::IDENTITY
        }
        fn source(&self, _: Point2, _: &Control, _: &Control) -> f64 {
            self.0
        }
    }

    fn constant_source(f: f64) -> ControlProblem {
        ControlProblem {
            name: "constant".into(),
            domain: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            controls: ControlSet::singleton(),
            coeffs: Arc::new(Constant(f)),
            nu: 1.0,
            exact: None,
        }
    }

    #[test]
    fn max_marking_with_unit_fraction() {
        let r = report(&[9.0, 1.0, 4.0]);
        assert_eq!(mark(&r, MarkStrategy::Max { fraction: 1.0 }).unwrap(), vec![0]);
    }

    #[test]
    fn doerfler_takes_the_largest() {
        let r = report(&[9.0, 1.0, 4.0]);
        assert_eq!(mark(&r, MarkStrategy::Doerfler { theta: 0.5 }).unwrap(), vec![0]);
        assert_eq!(mark(&r, MarkStrategy::Doerfler { theta: 0.9 }).unwrap(), vec![0, 2]);
    }

    #[test]
    fn ties_go_to_the_lowest_id() {
        let r = report(&[1.0, 4.0, 4.0, 4.0]);
        assert_eq!(r.argmax(), Some(1));
        assert_eq!(mark(&r, MarkStrategy::Doerfler { theta: 0.3 }).unwrap(), vec![1]);
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(matches!(mark(&report(&[]), MarkStrategy::default()), Err(Error::EmptyReport)));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("max:0.25".parse::<MarkStrategy>().unwrap(), MarkStrategy::Max { fraction: 0.25 });
        assert_eq!("doerfler".parse::<MarkStrategy>().unwrap(), MarkStrategy::Doerfler { theta: 0.5 });
        assert!("doerfler:1.5".parse::<MarkStrategy>().is_err());
        assert!("greedy:0.5".parse::<MarkStrategy>().is_err());
    }

    proptest! {
        #[test]
        fn argmax_is_always_marked(eta in prop::collection::vec(0.0f64..10.0, 1..40), t in 0.01f64..1.0, doerfler: bool) {
            let r = report(&eta);
            let s = if doerfler { MarkStrategy::Doerfler { theta: t } } else { MarkStrategy::Max { fraction: t } };
            let m = mark(&r, s).unwrap();
            prop_assert!(m.contains(&r.argmax().unwrap()));
            if doerfler {
                let sum: f64 = m.iter().map(|&i| eta[i]).sum();
                prop_assert!(sum >= t * eta.iter().sum::<f64>() - 1e-12);
            }
        }
    }

    #[test]
    fn unit_source_on_zero_function() {
        // F_gamma[0] = -1, so eta_K^2 = |K| and the total is 1 on the unit square
        let sp = build_space(Arc::new(unit_square_mesh(3).unwrap()), SpaceConfig::new(2, Continuity::Dg)).unwrap();
        let r = estimate(&sp, &constant_source(1.0), &DiscreteFunction::zeros(&sp)).unwrap();
        for e in &r.per_element {
            assert!((e.eta_sq() - sp.mesh.area(e.element)).abs() < 1e-14);
        }
        assert!((r.total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn parts_sum_to_total() {
        let sp = build_space(Arc::new(unit_square_mesh(2).unwrap()), SpaceConfig::new(2, Continuity::Dg)).unwrap();
        let u = sp.interpolate_local(&|k, x| (k as f64) * x.x + x.y * x.y);
        let r = estimate(&sp, &constant_source(0.3), &u).unwrap();
        let p = r.parts();
        let sum = p.iter().map(|v| v * v).sum::<f64>();
        assert!((sum - r.total * r.total).abs() <= 1e-12 * sum);
        assert!(p[1] > 0.0 && p[2] > 0.0);
    }

    #[test]
    fn zero_source_stops_after_one_iteration() {
        let cfg = AdaptiveConfig::new(SpaceConfig::new(2, Continuity::Dg));
        let trace = adaptive_solve(&constant_source(0.0), unit_square_mesh(2).unwrap(), &cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].eta_total, 0.0);
        assert_eq!(trace.stop, Some(StopReason::ZeroEstimator));
    }

    #[test]
    fn marked_elements_are_refined() {
        let mut cfg = AdaptiveConfig::new(SpaceConfig::new(2, Continuity::Dg));
        cfg.max_iters = 3;
        let mut meshes: Vec<(Arc<MeshLevel>, Vec<usize>)> = Vec::new();
        adaptive_solve_with(&constant_source(1.0), unit_square_mesh(2).unwrap(), &cfg, &mut |s| {
            meshes.push((s.space.mesh.clone(), s.marked.to_vec()));
            Ok(())
        })
        .unwrap();
        for pair in meshes.windows(2) {
            let (coarse, marked) = &pair[0];
            let fine = &pair[1].0;
            for &k in marked {
                let children = fine.elements.iter().filter(|e| e.parent == Some(k)).count();
                assert!(children >= 2, "element {k} of level {} not refined", coarse.index);
            }
        }
    }

    #[test]
    fn trace_csv_has_the_documented_columns() {
        let mut cfg = AdaptiveConfig::new(SpaceConfig::new(2, Continuity::Dg));
        cfg.max_iters = 2;
        let trace = adaptive_solve(&constant_source(1.0), unit_square_mesh(1).unwrap(), &cfg).unwrap();
        let csv = trace.to_csv().unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "iter,ndofs,h_min,h_max,eta_total,eta_residual,eta_gradjump,eta_valjump,err_norm_k,newton_iters,marked"
        );
        assert_eq!(csv.lines().count(), 3);
        assert!(trace.records[1].ndofs > trace.records[0].ndofs);
    }
}
