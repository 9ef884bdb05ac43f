use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_admm_cli::commands::{self, CompareArgs, Exit, PlotArgs, RunArgs};
use adaptive_admm_cli::config::Format;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "admm-sim", version, about = "Adaptive-gain consensus ADMM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Trace path; overrides `output.trace`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Overrides `run.adaptive`.
        #[arg(long, value_enum)]
        adaptive: Option<Switch>,
    },
    /// Compare fixed and adaptive gains across network sizes.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated agent counts, e.g. `5,10,25`.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Seeds per size.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Table path; overrides `output.table`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Extract (iteration, residual) series from one or more traces.
    Plotdata {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Series label per trace, in order. Defaults to the file stems.
        #[arg(long = "label")]
        labels: Vec<String>,
        /// Output path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Exit::Failure as u8) } else { ExitCode::SUCCESS };
        }
    };
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let result = match cli.command {
        Command::Run { config, out, format, adaptive } => {
            let adaptive = adaptive.map(|s| matches!(s, Switch::On));
            commands::run(&RunArgs { config, out, format, adaptive }, &mut stdout)
        }
        Command::Compare { config, sizes, seeds, out, format } => {
            commands::compare(&CompareArgs { config, sizes, seeds, out, format }, &mut stdout, &mut stderr)
        }
        Command::Plotdata { traces, labels, out, format } => {
            commands::plotdata(&PlotArgs { traces, labels, out, format }, &mut stdout)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Exit::Failure as u8)
        }
    }
}
