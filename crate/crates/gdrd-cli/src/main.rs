//! `gdrd`: train and evaluate a low-resolution face recognition student
//! distilled from generative and discriminative teachers.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or precondition
//! error, 3 numerical abort.

mod ablate_cmd;
mod error;
mod eval_cmd;
mod gradcheck_cmd;
mod meta;
mod opts;
mod synth_cmd;
mod train_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gdrd", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face dataset with paired teacher features.
    Synth(synth_cmd::SynthArgs),
    /// Stage 1: distill the generative teacher into the backbone.
    TrainBackbone(train_cmd::TrainBackboneArgs),
    /// Stage 2: train the head on labels and the discriminative teacher.
    TrainHead(train_cmd::TrainHeadArgs),
    /// Pair-verification accuracy of a trained checkpoint.
    EvalVerify(eval_cmd::EvalVerifyArgs),
    /// Gallery/probe rank-k retrieval accuracy.
    EvalRetrieve(eval_cmd::EvalRetrieveArgs),
    /// Identification accuracy with a refitted final classifier.
    EvalIdentify(eval_cmd::EvalIdentifyArgs),
    /// Train and compare the four distillation arms over several seeds.
    Ablate(ablate_cmd::AblateArgs),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(gradcheck_cmd::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => synth_cmd::run(args),
        Command::TrainBackbone(args) => train_cmd::run_backbone(args),
        Command::TrainHead(args) => train_cmd::run_head(args),
        Command::EvalVerify(args) => eval_cmd::run_verify(args),
        Command::EvalRetrieve(args) => eval_cmd::run_retrieve(args),
        Command::EvalIdentify(args) => eval_cmd::run_identify(args),
        Command::Ablate(args) => ablate_cmd::run(args),
        Command::Gradcheck(args) => gradcheck_cmd::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
