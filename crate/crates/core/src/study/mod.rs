//! Batch studies: configuration, the uniform/adaptive driver and its output files.
//!
//! A study writes into its output directory:
//! `trace.csv`, `trace.json`, `summary.json`, and per level `mesh_<k>.txt`
//! (optionally `mesh_<k>.vtk` with the element estimator as cell data).

pub mod cli;
pub mod registry;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_solve_with, AdaptiveConfig, AdaptiveTrace, LevelRecord, MarkStrategy, StopReason};
use crate::cordes::ControlProblem;
use crate::error::{Error, Result};
use crate::fespace::{Continuity, SpaceConfig};
use crate::forms::FormParams;
use crate::mesh::{convex_polygon_mesh, unit_square_mesh, MeshLevel, Point2};
use crate::solver::SolveOptions;

pub use registry::{lookup, registry, BenchmarkProblem, CustomProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    /// Registry key; ignored when `custom` is present.
    pub name: String,
    pub custom: Option<CustomProblem>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            name: "poisson_singleton".into(),
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub p: usize,
    pub continuity: Continuity,
    /// Lifting degree; defaults to `p`.
    pub q: Option<usize>,
    pub quad_degree: Option<usize>,
}

impl Default for SpaceSection {
    fn default() -> Self {
        SpaceSection {
            p: 2,
            continuity: Continuity::Dg,
            q: None,
            quad_degree: None,
        }
    }
}

/// Unset values fall back to `theta = 1/2`, `sigma = 10 p^2`, `rho = 10 p^4` (DG) or 0 (C0).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormsSection {
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_newton: usize,
    pub damping: f64,
    pub monotonicity_samples: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverSection {
            tol: d.tol,
            max_newton: d.max_newton,
            damping: d.damping,
            monotonicity_samples: d.monotonicity_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub uniform: bool,
    /// `max:<fraction>` or `doerfler:<theta>`.
    pub mark: String,
    pub max_dofs: Option<usize>,
    pub eta_tol: Option<f64>,
    pub max_iters: usize,
    /// Subdivisions per side of the initial unit-square mesh.
    pub initial_n: usize,
    /// Bisection rounds per uniform level.
    pub uniform_rounds: usize,
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            uniform: false,
            mark: "doerfler:0.5".into(),
            max_dofs: Some(50_000),
            eta_tol: None,
            max_iters: 30,
            initial_n: 2,
            uniform_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub meshes: bool,
    pub vtk: bool,
    /// Also write `solution_<k>.csv` with the coefficient vector.
    pub solutions: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            meshes: true,
            vtk: false,
            solutions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, threads: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub problem: ProblemSection,
    pub space: SpaceSection,
    pub forms: FormsSection,
    pub solver: SolverSection,
    pub adapt: AdaptSection,
    pub output: OutputSection,
    pub run: RunSection,
}

impl StudyConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn build_problem(&self) -> Result<ControlProblem> {
        match &self.problem.custom {
            Some(c) => c.build(),
            None => lookup(&self.problem.name),
        }
    }

    pub fn space_config(&self) -> Result<SpaceConfig> {
        let s = &self.space;
        let cfg = SpaceConfig {
            p: s.p,
            continuity: s.continuity,
            q: s.q.unwrap_or(s.p),
            quad_degree: s.quad_degree,
        };
        cfg.validate().map_err(|e| Error::config("space", e.to_string()))?;
        Ok(cfg)
    }

    pub fn form_params(&self) -> Result<FormParams> {
        let space = self.space_config()?;
        let d = FormParams::defaults(&space);
        let p = FormParams {
            theta: self.forms.theta.unwrap_or(d.theta),
            sigma: self.forms.sigma.unwrap_or(d.sigma),
            rho: self.forms.rho.unwrap_or(d.rho),
        };
        p.validate(space.continuity).map_err(|e| Error::config("forms", e.to_string()))?;
        Ok(p)
    }

    pub fn strategy(&self) -> Result<MarkStrategy> {
        self.adapt.mark.parse()
    }

    /// Checks every field and assembles the driver configuration.
    pub fn adaptive_config(&self) -> Result<AdaptiveConfig> {
        let space = self.space_config()?;
        let params = self.form_params()?;
        let strategy = self.strategy()?;
        let a = &self.adapt;
        if a.max_iters == 0 {
            return Err(Error::config("adapt.max_iters", "must be at least 1"));
        }
        if a.initial_n == 0 {
            return Err(Error::config("adapt.initial_n", "must be at least 1"));
        }
        if a.uniform && a.uniform_rounds == 0 {
            return Err(Error::config("adapt.uniform_rounds", "must be at least 1"));
        }
        if a.eta_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("adapt.eta_tol", "must be positive"));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if !(s.damping > 0.0 && s.damping < 1.0) {
            return Err(Error::config("solver.damping", "must lie in (0, 1)"));
        }
        if self.run.threads == 0 {
            return Err(Error::config("run.threads", "must be at least 1"));
        }
        Ok(AdaptiveConfig {
            space,
            params,
            strategy,
            uniform: a.uniform,
            uniform_rounds: a.uniform_rounds,
            max_dofs: a.max_dofs,
            eta_tol: a.eta_tol,
            max_iters: a.max_iters,
            solve: SolveOptions {
                tol: s.tol,
                max_newton: s.max_newton,
                damping: s.damping,
                monotonicity_samples: s.monotonicity_samples,
                seed: self.run.seed,
                ..SolveOptions::default()
            },
        })
    }
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub r2: f64,
}

pub fn loglog_fit(x: &[f64], y: &[f64]) -> Option<Fit> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(Fit { slope, r2 })
}

/// Fits over the last three levels; `None` with fewer than four levels.
pub fn tail_fit(records: &[LevelRecord], x: impl Fn(&LevelRecord) -> f64, y: impl Fn(&LevelRecord) -> Option<f64>) -> Option<Fit> {
    if records.len() < 4 {
        return None;
    }
    let tail = &records[records.len() - 3..];
    let ys: Option<Vec<f64>> = tail.iter().map(&y).collect();
    loglog_fit(&tail.iter().map(x).collect::<Vec<_>>(), &ys?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryParams {
    pub p: usize,
    pub q: usize,
    pub continuity: Continuity,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub mode: String,
    pub mark: Option<String>,
    pub max_dofs: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub iter: usize,
    pub ndofs: usize,
    pub h_max: f64,
    pub eta_total: f64,
    pub err_norm_k: Option<f64>,
    /// `eta / ||u - u_h||_k`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub problem: String,
    pub params: SummaryParams,
    pub levels: Vec<LevelSummary>,
    pub stop: Option<StopReason>,
    /// Slope of `log ||u - u_h||_k` against `log ndofs`.
    pub slope_error: Option<Fit>,
    /// Slope of `log eta` against `log ndofs`.
    pub slope_eta: Option<Fit>,
    /// Slope of `log ||u - u_h||_k` against `log h_max`.
    pub slope_error_h: Option<Fit>,
    pub slope_eta_h: Option<Fit>,
    /// Largest observed `||u - u_h||_k / eta`.
    pub c_rel_obs: Option<f64>,
    /// Largest observed `eta / ||u - u_h||_k`.
    pub c_eff_obs: Option<f64>,
}

impl StudySummary {
    pub fn from_trace(problem: &str, params: SummaryParams, trace: &AdaptiveTrace) -> Self {
        let r = &trace.records;
        let levels: Vec<LevelSummary> = r
            .iter()
            .map(|l| LevelSummary {
                iter: l.iter,
                ndofs: l.ndofs,
                h_max: l.h_max,
                eta_total: l.eta_total,
                err_norm_k: l.err_norm_k,
                ratio: l.err_norm_k.filter(|e| *e > 0.0).map(|e| l.eta_total / e),
            })
            .collect();
        let ratios: Option<Vec<f64>> = levels.iter().map(|l| l.ratio).collect();
        let ratios = ratios.filter(|v| !v.is_empty());
        StudySummary {
            problem: problem.to_string(),
            params,
            stop: trace.stop,
            slope_error: tail_fit(r, |l| l.ndofs as f64, |l| l.err_norm_k),
            slope_eta: tail_fit(r, |l| l.ndofs as f64, |l| Some(l.eta_total)),
            slope_error_h: tail_fit(r, |l| l.h_max, |l| l.err_norm_k),
            slope_eta_h: tail_fit(r, |l| l.h_max, |l| Some(l.eta_total)),
            c_rel_obs: ratios.as_ref().map(|v| v.iter().map(|x| 1.0 / x).fold(0.0, f64::max)),
            c_eff_obs: ratios.as_ref().map(|v| v.iter().copied().fold(0.0, f64::max)),
            levels,
        }
    }

    /// `max ratio / min ratio` of `eta / ||u - u_h||_k` over all levels.
    pub fn ratio_spread(&self) -> Option<f64> {
        let r: Option<Vec<f64>> = self.levels.iter().map(|l| l.ratio).collect();
        let r = r?;
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        (min > 0.0).then(|| max / min)
    }
}

fn is_unit_square(domain: &[Point2]) -> bool {
    let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    domain.len() == 4 && domain.iter().zip(sq).all(|(p, (x, y))| p.x == x && p.y == y)
}

/// Structured `n x n` mesh on the unit square; other convex domains get a fan
/// triangulation bisected `n - 1` times.
pub fn initial_mesh(problem: &ControlProblem, n: usize) -> Result<MeshLevel> {
    if is_unit_square(&problem.domain) {
        unit_square_mesh(n)
    } else {
        convex_polygon_mesh(&problem.domain)?.refine_uniform(n.saturating_sub(1))
    }
}

fn write_level_files(out: &OutputSection, state: &crate::adapt::LevelState) -> Result<()> {
    let k = state.record.iter;
    if out.meshes {
        fs::write(out.dir.join(format!("mesh_{k}.txt")), state.space.mesh.to_text())?;
    }
    if out.vtk {
        let eta = state.report.eta();
        state
            .space
            .mesh
            .write_vtk(&out.dir.join(format!("mesh_{k}.vtk")), Some(("eta", &eta)))?;
    }
    if out.solutions {
        fs::write(
            out.dir.join(format!("solution_{k}.csv")),
            state.space.export_coeffs_csv(state.solution),
        )?;
    }
    Ok(())
}

/// Runs the configured study and writes its outputs. Solver failures still
/// leave the trace of the completed levels on disk.
pub fn run_study(config: &StudyConfig) -> Result<StudySummary> {
    let adaptive = config.adaptive_config()?;
    let problem = config.build_problem()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.threads)
        .build()
        .map_err(|e| Error::config("run.threads", e.to_string()))?;
    pool.install(|| run_with(config, &problem, &adaptive))
}

fn run_with(config: &StudyConfig, problem: &ControlProblem, adaptive: &AdaptiveConfig) -> Result<StudySummary> {
    let cordes = problem.verify_ellipticity_cordes(&problem.sample_points(16))?;
    if !cordes.pass {
        return Err(Error::config(
            "problem",
            format!(
                "`{}` fails the Cordes check (estimated nu = {:.4}, declared {:.4}, min eigenvalue {:.3e})",
                problem.name, cordes.nu_est, problem.nu, cordes.min_eigenvalue
            ),
        ));
    }
    let out = &config.output;
    fs::create_dir_all(&out.dir)?;
    let mesh = initial_mesh(problem, config.adapt.initial_n)?;
    let result = adaptive_solve_with(problem, mesh, adaptive, &mut |s| write_level_files(out, s));
    let trace = match result {
        Ok(t) => t,
        Err(Error::Aborted { trace, source }) => {
            fs::write(out.dir.join("trace.csv"), trace.to_csv()?)?;
            fs::write(out.dir.join("trace.json"), trace.to_json()?)?;
            return Err(Error::Aborted { trace, source });
        }
        Err(e) => return Err(e),
    };
    fs::write(out.dir.join("trace.csv"), trace.to_csv()?)?;
    fs::write(out.dir.join("trace.json"), trace.to_json()?)?;
    let params = SummaryParams {
        p: adaptive.space.p,
        q: adaptive.space.q,
        continuity: adaptive.space.continuity,
        theta: adaptive.params.theta,
        sigma: adaptive.params.sigma,
        rho: adaptive.params.rho,
        mode: if adaptive.uniform { "uniform" } else { "adaptive" }.into(),
        mark: (!adaptive.uniform).then(|| adaptive.strategy.to_string()),
        max_dofs: adaptive.max_dofs,
        seed: config.run.seed,
    };
    let summary = StudySummary::from_trace(&problem.name, params, &trace);
    fs::write(out.dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = StudyConfig::default();
        let back = StudyConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn sections_parse() {
        let c = StudyConfig::from_toml_str(
            r#"
[problem]
name = "two_control_switch"

[space]
p = 3
continuity = "c0"

[forms]
sigma = 50.0

[adapt]
uniform = true
max_iters = 4
"#,
        )
        .unwrap();
        assert_eq!(c.space.p, 3);
        assert_eq!(c.space.continuity, Continuity::C0);
        let a = c.adaptive_config().unwrap();
        assert_eq!(a.params.sigma, 50.0);
        assert_eq!(a.params.rho, 0.0);
        assert!(a.uniform);
    }

    #[test]
    fn field_level_errors() {
        let err = StudyConfig::from_toml_str("[space]\npp = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "config"), "{err}");
        let mut c = StudyConfig::default();
        c.space.p = 1;
        assert!(matches!(c.adaptive_config(), Err(Error::Config { ref field, .. }) if field == "space"));
        let mut c = StudyConfig::default();
        c.adapt.mark = "max:2".into();
        assert!(matches!(c.adaptive_config(), Err(Error::Config { ref field, .. }) if field == "mark.fraction"));
        let mut c = StudyConfig::default();
        c.problem.name = "nope".into();
        assert!(matches!(c.build_problem(), Err(Error::UnknownProblem(_))));
    }

    #[test]
    fn slopes() {
        let f = loglog_fit(&[1.0, 2.0, 4.0], &[1.0, 0.25, 0.0625]).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.r2 - 1.0).abs() < 1e-14);
        assert!(loglog_fit(&[1.0, 2.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn short_studies_have_no_slope() {
        let rec = |i: usize| LevelRecord {
            iter: i,
            ndofs: 10 << i,
            nelements: 1,
            h_min: 1.0,
            h_max: 1.0 / (1 << i) as f64,
            eta_total: 1.0 / (1 << i) as f64,
            eta_residual: 0.0,
            eta_gradjump: 0.0,
            eta_valjump: 0.0,
            err_norm_k: Some(0.5 / (1 << i) as f64),
            newton_iters: 1,
            fallback_iters: 0,
            final_residual: 0.0,
            stagnated: false,
            marked: 1,
        };
        let three = AdaptiveTrace {
            records: (0..3).map(rec).collect(),
            stop: None,
        };
        let params = SummaryParams {
            p: 2,
            q: 2,
            continuity: Continuity::Dg,
            theta: 0.5,
            sigma: 40.0,
            rho: 160.0,
            mode: "uniform".into(),
            mark: None,
            max_dofs: None,
            seed: 0,
        };
        let s = StudySummary::from_trace("x", params.clone(), &three);
        assert!(s.slope_error.is_none() && s.slope_eta_h.is_none());
        let four = AdaptiveTrace {
            records: (0..4).map(rec).collect(),
            stop: None,
        };
        let s = StudySummary::from_trace("x", params, &four);
        assert!((s.slope_error_h.unwrap().slope - 1.0).abs() < 1e-12);
        assert!((s.c_eff_obs.unwrap() - 2.0).abs() < 1e-12);
        assert!((s.ratio_spread().unwrap() - 1.0).abs() < 1e-12);
    }
}
