use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use syk_reservoir::harness::{self, Command, ExperimentConfig, RunManifest};

#[derive(Parser)]
#[command(version, about = "SYK spectra and quantum reservoir computing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment configuration; subcommand defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    realizations: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Full-size runs (eight modes, long splits, 500 realizations).
    #[arg(long, global = true)]
    paper_mode: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Spacing-ratio statistics, optionally swept over kappa.
    Levels,
    /// Spectral form factor and plateau time.
    Sff,
    /// Train and score readouts on benchmark tasks.
    Qrc,
    /// Distance between trajectories from different initial states.
    Esp,
    /// Occupation traces over a short input window.
    Trace,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Levels => Command::Levels,
            Cmd::Sff => Command::Sff,
            Cmd::Qrc => Command::Qrc,
            Cmd::Esp => Command::Esp,
            Cmd::Trace => Command::Trace,
        }
    }
}

fn run(cli: &Cli) -> syk_reservoir::Result<RunManifest> {
    let cmd = Command::from(cli.command);
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_for(cmd),
    };
    if cli.paper_mode {
        cfg.apply_paper_mode(cmd);
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(k) = cli.realizations {
        cfg.realizations = k;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.output_dir = Some(cli.out.clone().or(cfg.output_dir).unwrap_or_else(|| PathBuf::from("out")));
    Ok(match cmd {
        Command::Levels => harness::run_levels(&cfg)?.manifest,
        Command::Sff => harness::run_sff(&cfg)?.manifest,
        Command::Qrc => harness::run_qrc_sweep(&cfg)?.manifest,
        Command::Esp => harness::run_esp(&cfg)?.manifest,
        Command::Trace => harness::run_trace(&cfg)?.manifest,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) => {
            let dir = m.config.output_dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default();
            eprintln!("{}: wrote {} files to {dir} in {:.1}s", m.command, m.files.len(), m.wall_time_s);
            if m.complete {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: some grid points have no successful realization", m.command);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
