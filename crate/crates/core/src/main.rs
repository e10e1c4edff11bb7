use std::process::ExitCode;

use clap::Parser;
use cordes_dg::study::{cli::Cli, registry, run_study};
use cordes_dg::Error;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_problems {
        for b in registry() {
            println!("{:<22} nu = {:.5}  {}", b.problem.name, b.problem.nu, b.notes);
        }
        return ExitCode::SUCCESS;
    }
    let config = match cli.study_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_study(&config) {
        Ok(s) => {
            for l in &s.levels {
                let err = l.err_norm_k.map_or("n/a".to_string(), |e| format!("{e:.4e}"));
                println!("level {:>2}  ndofs {:>7}  eta {:.4e}  err {}", l.iter, l.ndofs, l.eta_total, err);
            }
            let slope = |f: Option<cordes_dg::study::Fit>| f.map_or("n/a".to_string(), |f| format!("{:.3} (R2 {:.3})", f.slope, f.r2));
            println!("slope err vs ndofs: {}", slope(s.slope_error));
            println!("slope eta vs ndofs: {}", slope(s.slope_eta));
            println!("slope err vs h:     {}", slope(s.slope_error_h));
            println!("outputs in {}", config.output.dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config { .. }) | Err(e @ Error::UnknownProblem(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
