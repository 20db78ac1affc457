use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratmix_cli::emit::{summary, write_outcome};
use ratmix_cli::ops::execute;
use ratmix_cli::spec::{Emit, ExperimentSpec, Mode, Plan, Settings};
use ratmix_core::{Error, Result};

/// Numerical experiments on weighted ergodic averages, renewal sequences
/// and null-recurrent Markov shifts.
#[derive(Parser, Debug)]
#[command(name = "ratmix", version)]
struct Cli {
    /// Horizon N.
    #[arg(long = "N", global = true)]
    horizon: Option<u64>,
    /// Evaluation grid: `dyadic` or `linear:<step>`.
    #[arg(long, global = true)]
    grid: Option<String>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// `rational` (exact, N <= 512) or `float`.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// `report` or `plot-data`.
    #[arg(long, global = true)]
    emit: Option<Emit>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Weights(OpArgs),
    Sets(OpArgs),
    Renewal(OpArgs),
    Chain(OpArgs),
    Mixing(OpArgs),
    Affine(OpArgs),
    /// Run every step of a JSON spec file.
    Run { spec: PathBuf },
}

macro_rules! op_args {
    ($($field:ident => $flag:literal),* $(,)?) => {
        #[derive(Args, Debug)]
        struct OpArgs {
            #[arg(long)]
            op: String,
            /// Output file stem (defaults to `<command>-<op>`).
            #[arg(long)]
            name: Option<String>,
            $(#[arg(long = $flag)] $field: Option<String>,)*
            /// Extra input as `key=value`.
            #[arg(short = 'D', value_name = "KEY=VALUE")]
            define: Vec<String>,
        }

        impl OpArgs {
            fn inputs(&self) -> Result<Vec<(String, String)>> {
                let mut out = Vec::new();
                $(if let Some(v) = &self.$field { out.push(($flag.to_string(), v.clone())); })*
                for d in &self.define {
                    let (k, v) = d
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("-D expects key=value, got '{d}'")))?;
                    out.push((k.to_string(), v.to_string()));
                }
                Ok(out)
            }
        }
    };
}

op_args! {
    weight => "weight", set => "set", family => "family", params => "params",
    lifetime => "lifetime", kind => "kind", chain => "chain", s => "s", t => "t",
    pairs => "pairs", basket => "basket", a => "a", b => "b", union => "union",
    eps => "eps", k => "k", theta => "theta", gamma => "gamma", p => "p",
    cutoff => "cutoff", x => "x", y => "y", steps => "steps", interval => "interval",
    samples => "samples", seed => "seed", cells => "cells", word_len => "word-len",
    max_len => "max-len",
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Runs the requested steps; `Ok(false)` when some check failed.
fn run(cli: Cli) -> Result<bool> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    let mut outer = Settings {
        horizon: cli.horizon,
        grid: cli.grid.clone(),
        tol: cli.tol,
        mode: cli.mode,
        emit: cli.emit,
        ..Settings::default()
    };
    let specs = match &cli.command {
        Command::Run { spec } => {
            let text = std::fs::read_to_string(spec)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", spec.display())))?;
            Plan::from_json(&text)?.resolve(&outer)?
        }
        Command::Weights(a) => single("weights", a, &mut outer)?,
        Command::Sets(a) => single("sets", a, &mut outer)?,
        Command::Renewal(a) => single("renewal", a, &mut outer)?,
        Command::Chain(a) => single("chain", a, &mut outer)?,
        Command::Mixing(a) => single("mixing", a, &mut outer)?,
        Command::Affine(a) => single("affine", a, &mut outer)?,
    };
    let mut ok = true;
    for spec in &specs {
        let outcome = execute(spec)?;
        write_outcome(&cli.out, spec, &outcome)?;
        print!("{}", summary(spec, &outcome));
        ok &= outcome.report.all_passed();
    }
    Ok(ok)
}

fn single(command: &str, args: &OpArgs, outer: &mut Settings) -> Result<Vec<ExperimentSpec>> {
    outer.inputs.extend(args.inputs()?);
    Ok(vec![ExperimentSpec::new(command, &args.op, args.name.clone(), outer.clone())?])
}
