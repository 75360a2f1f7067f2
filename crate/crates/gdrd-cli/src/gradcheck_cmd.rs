//! `gradcheck`: finite-difference verification of every analytic gradient,
//! over single primitives and the full loss compositions. Exit code 0 iff
//! every requested case passes; failures exit 1 with the offending cases
//! and their worst relative errors listed.

use clap::Args;
use gdrd_core::gradcheck::{case_names, is_negative_control, run_all, run_case, CaseOutcome};
use gdrd_core::tensor::finite_diff::{DEFAULT_EPS, DEFAULT_TOL};

use crate::error::{usage, CliError};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check every registered case.
    #[arg(long, conflicts_with = "case")]
    pub all: bool,

    /// One case name (run with `--all` to see every name).
    #[arg(value_name = "CASE")]
    pub case: Option<String>,

    /// Seed for probe generation.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Relative-error tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,

    /// Finite-difference step.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
}

fn print_outcome(outcome: &CaseOutcome) {
    let verdict = if outcome.pass { "pass" } else { "FAIL" };
    let control = if outcome.negative_control {
        "  (negative control: must be rejected)"
    } else {
        ""
    };
    println!(
        "{:<22} max_rel_err {:>12.3e}  {}{}",
        outcome.name, outcome.max_rel_err, verdict, control
    );
}

pub fn run(args: &GradcheckArgs) -> Result<(), CliError> {
    if args.eps <= 0.0 || args.tol <= 0.0 {
        return Err(usage("--eps and --tol must be positive"));
    }
    let outcomes: Vec<CaseOutcome> = if args.all {
        run_all(&[args.seed], args.eps, args.tol)?
    } else {
        let Some(name) = &args.case else {
            return Err(usage(format!(
                "pass --all or one case name; cases: {}",
                case_names().join(", ")
            )));
        };
        let report = run_case(name, args.seed, args.eps, args.tol)?;
        let negative_control = is_negative_control(name);
        let pass = if negative_control {
            !report.pass
        } else {
            report.pass
        };
        vec![CaseOutcome {
            name: case_names()
                .into_iter()
                .find(|n| n == name)
                .expect("run_case validated the name"),
            max_rel_err: report.max_rel_err,
            pass,
            negative_control,
        }]
    };

    for outcome in &outcomes {
        print_outcome(outcome);
    }
    let failures: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{} (max_rel_err {:.3e})", o.name, o.max_rel_err))
        .collect();
    if failures.is_empty() {
        println!("{} case(s) passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed: {}",
            failures.join(", ")
        )))
    }
}
