//! `engine`: exact mirror-symmetry computations for toric orbifolds from a
//! JSON description of a stacky fan.
//!
//! Exit codes: 0 success, 2 invalid input, 3 domain obstruction, 4 parse
//! error.  Argument errors from the flag parser also exit with 2.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use toricgw_cli::{output, run_str, CliError, CommandFlags};
use toricgw::qnum::parse_rational;

#[derive(Parser)]
#[command(
    name = "engine",
    about = "Exact Givental-style mirror computations for simplicial toric orbifolds",
    after_help = "Commands: validate, box, mori, degrees, ifunction, sharp, mirror-map,\n\
                  jfunction, qproduct, twist, ci, qperiod, birkhoff"
)]
struct Args {
    /// What to compute.
    command: String,
    /// Path to the JSON input document.
    input: PathBuf,
    /// Override the policy's Q-degree cutoff (an exact rational).
    #[arg(long)]
    cutoff: Option<String>,
    /// Override the policy's divisor-variable order.
    #[arg(long)]
    t_order: Option<u32>,
    /// Command-specific mode (sharp: shape, direct or lemma).
    #[arg(long)]
    mode: Option<String>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, default_value = "json", value_parser = ["json", "text"])]
    format: String,
}

fn run(args: &Args) -> Result<String, CliError> {
    let cutoff = match &args.cutoff {
        None => None,
        Some(text) => Some(parse_rational(text).map_err(|e| CliError::Parse(e.to_string()))?),
    };
    let flags = CommandFlags { cutoff, t_order: args.t_order, mode: args.mode.clone() };
    let text = fs::read_to_string(&args.input).map_err(|e| {
        CliError::Parse(format!("cannot read {}: {e}", args.input.display()))
    })?;
    let doc = run_str(&args.command, &text, &flags)?;
    Ok(match args.format.as_str() {
        "text" => output::render_text(&doc),
        _ => {
            let mut s = serde_json::to_string_pretty(&doc).expect("output serializes");
            s.push('\n');
            s
        }
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(rendered) => {
            if let Some(path) = &args.out {
                if let Err(e) = fs::write(path, &rendered) {
                    eprintln!("error[io]: cannot write {}: {e}", path.display());
                    return ExitCode::from(3);
                }
            } else {
                print!("{rendered}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            if args.format == "text" {
                eprintln!("error[{}]: {err}", err.code());
            } else {
                let doc = json!({ "error": { "code": err.code(), "message": err.to_string() } });
                eprintln!("{doc}");
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
