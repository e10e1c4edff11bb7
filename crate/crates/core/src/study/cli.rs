//! Command-line flags layered over an optional TOML configuration file.

use std::path::PathBuf;

use clap::Parser;

use super::StudyConfig;
use crate::error::{Error, Result};
use crate::fespace::Continuity;

#[derive(Debug, Clone, Parser)]
#[command(name = "cordes-dg", version, about = "Adaptive DG / C0-IP solver for HJB and Isaacs equations")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registry problem key.
    #[arg(long)]
    pub problem: Option<String>,
    /// Polynomial degree (>= 2).
    #[arg(long)]
    pub p: Option<usize>,
    /// Lifting degree (defaults to p).
    #[arg(long)]
    pub q: Option<usize>,
    /// `dg` or `c0ip`.
    #[arg(long)]
    pub cont: Option<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// `max:<fraction>` or `doerfler:<theta>`.
    #[arg(long)]
    pub mark: Option<String>,
    #[arg(long)]
    pub max_dofs: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub eta_tol: Option<f64>,
    /// Subdivisions per side of the initial mesh.
    #[arg(long)]
    pub initial_n: Option<usize>,
    /// Refine every element instead of marking.
    #[arg(long)]
    pub uniform: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default 1 for reproducible output).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write `mesh_<k>.vtk`.
    #[arg(long)]
    pub vtk: bool,
    /// Print the problem registry and exit.
    #[arg(long)]
    pub list_problems: bool,
}

pub fn parse_continuity(s: &str) -> Result<Continuity> {
    match s {
        "dg" => Ok(Continuity::Dg),
        "c0" | "c0ip" => Ok(Continuity::C0),
        other => Err(Error::config("cont", format!("expected `dg` or `c0ip`, got `{other}`"))),
    }
}

impl Cli {
    /// The file configuration (or defaults) with every given flag applied.
    pub fn study_config(&self) -> Result<StudyConfig> {
        let mut c = match &self.config {
            Some(path) => StudyConfig::from_file(path)?,
            None => StudyConfig::default(),
        };
        if let Some(v) = &self.problem {
            c.problem.name = v.clone();
            c.problem.custom = None;
        }
        if let Some(v) = self.p {
            c.space.p = v;
        }
        if let Some(v) = self.q {
            c.space.q = Some(v);
        }
        if let Some(v) = &self.cont {
            c.space.continuity = parse_continuity(v)?;
        }
        if let Some(v) = self.theta {
            c.forms.theta = Some(v);
        }
        if let Some(v) = self.sigma {
            c.forms.sigma = Some(v);
        }
        if let Some(v) = self.rho {
            c.forms.rho = Some(v);
        }
        if let Some(v) = &self.mark {
            c.adapt.mark = v.clone();
        }
        if let Some(v) = self.max_dofs {
            c.adapt.max_dofs = Some(v);
        }
        if let Some(v) = self.max_iters {
            c.adapt.max_iters = v;
        }
        if let Some(v) = self.eta_tol {
            c.adapt.eta_tol = Some(v);
        }
        if let Some(v) = self.initial_n {
            c.adapt.initial_n = v;
        }
        if self.uniform {
            c.adapt.uniform = true;
        }
        if let Some(v) = &self.out {
            c.output.dir = v.clone();
        }
        if let Some(v) = self.seed {
            c.run.seed = v;
        }
        if let Some(v) = self.threads {
            c.run.threads = v;
        }
        if self.vtk {
            c.output.vtk = true;
        }
        c.adaptive_config()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::parse_from([
            "cordes-dg",
            "--problem",
            "two_control_switch",
            "--p",
            "3",
            "--cont",
            "c0ip",
            "--mark",
            "max:0.3",
            "--uniform",
            "--seed",
            "9",
        ]);
        let c = cli.study_config().unwrap();
        assert_eq!(c.problem.name, "two_control_switch");
        assert_eq!(c.space.p, 3);
        assert_eq!(c.space.continuity, Continuity::C0);
        assert_eq!(c.adapt.mark, "max:0.3");
        assert!(c.adapt.uniform);
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.run.threads, 1);
    }

    #[test]
    fn bad_flags_name_the_field() {
        let cli = Cli::parse_from(["cordes-dg", "--cont", "cg"]);
        assert!(matches!(cli.study_config(), Err(Error::Config { ref field, .. }) if field == "cont"));
        let cli = Cli::parse_from(["cordes-dg", "--theta", "2"]);
        assert!(matches!(cli.study_config(), Err(Error::Config { ref field, .. }) if field == "forms"));
    }
}
