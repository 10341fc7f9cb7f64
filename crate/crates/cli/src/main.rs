mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use run::Failure;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = match cli.command {
        Command::Generate(a) => ("generate", commands::generate(a)),
        Command::Validate(a) => ("validate", commands::validate(a)),
        Command::Train(a) => ("train", commands::train(a)),
        Command::Eval(a) => ("eval", commands::eval(a)),
        Command::Predict(a) => ("predict", commands::predict(a)),
        Command::Gradcheck(a) => ("gradcheck", commands::gradcheck(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            if let Failure::Usage(_) = failure {
                let mut root = Cli::command();
                root.build();
                if let Some(sub) = root.find_subcommand_mut(name) {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            ExitCode::from(failure.code())
        }
    }
}
