use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use ma_isac::harness::{
    aggregate, emit_beampattern, emit_crb_sweep, run_experiment, summary_path, write_aggregates, write_results,
    ConfigDoc, SweepKind,
};
use ma_isac::model::sample_scene;
use ma_isac::{Error, Scheme, XiMode};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Emit {
    Results,
    Beampattern,
    Crb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepArg {
    Snr,
    Xmax,
    Weight,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    StandardFp,
    PaperLiteral,
}

/// Monte Carlo driver for movable-antenna ISAC beamforming.
#[derive(Debug, Parser)]
#[command(name = "ma-isac", version)]
struct Cli {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme to run (repeatable): SPGA_FP, DGA_FP, FP_FPA, SPGA_RBF, DGA_RBF, RBF_FPA.
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    #[arg(long, value_enum)]
    sweep: Option<SweepArg>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum, default_value = "results")]
    emit: Emit,
    /// Worker threads for Monte Carlo trials.
    #[arg(long)]
    workers: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Json(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(cli: &Cli) -> Result<ConfigDoc, Failure> {
    let mut doc = match &cli.config {
        Some(path) => ConfigDoc::from_path(path)?,
        None => ConfigDoc::default(),
    };
    let e = &mut doc.experiment;
    if !cli.schemes.is_empty() {
        e.schemes = cli.schemes.iter().map(|s| s.parse::<Scheme>()).collect::<Result<_, _>>()?;
    }
    if let Some(s) = cli.sweep {
        e.sweep = Some(match s {
            SweepArg::Snr => SweepKind::Snr,
            SweepArg::Xmax => SweepKind::Xmax,
            SweepArg::Weight => SweepKind::Weight,
        });
    }
    if let Some(t) = cli.trials {
        e.n_trials = t;
    }
    if let Some(s) = cli.seed {
        e.base_seed = s;
    }
    if let Some(o) = &cli.out {
        e.output = Some(o.clone());
    }
    if let Some(w) = cli.workers {
        e.workers = Some(w);
    }
    if let Some(m) = cli.mode {
        doc.xi_mode = match m {
            ModeArg::StandardFp => XiMode::StandardFp,
            ModeArg::PaperLiteral => XiMode::PaperLiteral,
        };
    }
    Ok(doc)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let doc = load(cli)?;
    let spec = doc.experiment_spec()?;
    match cli.emit {
        Emit::Results => {
            let rows = run_experiment(&spec)?;
            let summary = aggregate(&rows);
            if let Some(out) = &spec.output {
                write_results(out, &rows)?;
                write_aggregates(&summary_path(out), &summary)?;
            }
            println!("{:>10}  {:<9} {:>5} {:>12} {:>10}", "sweep", "scheme", "ok", "objective", "std");
            for a in &summary {
                let sweep = a.sweep_value.map_or_else(|| "-".to_string(), |v| format!("{v}"));
                println!(
                    "{sweep:>10}  {:<9} {:>5} {:>12.4} {:>10.4}",
                    a.scheme, a.n_ok, a.objective_bits_mean, a.objective_bits_std
                );
            }
            let failed: usize = summary.iter().map(|a| a.n_failed).sum();
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} trials failed")));
            }
        }
        Emit::Beampattern | Emit::Crb => {
            let out = spec
                .output
                .clone()
                .ok_or_else(|| Failure::Config("--out is required for beampattern and crb output".into()))?;
            let scheme = spec.schemes[0];
            let seed = spec.base_seed;
            let scene = sample_scene(&spec.base, seed);
            let step = doc.experiment.angle_step_deg;
            let (solved, rows) = if matches!(cli.emit, Emit::Beampattern) {
                emit_beampattern(&scene, &spec.base, scheme, seed, step, &out)?
            } else {
                emit_crb_sweep(&scene, &spec.base, scheme, seed, step, &out)?
            };
            println!(
                "{scheme}: objective {:.4} bits after {} iterations, {} rows written to {}",
                solved.metrics.objective_bits,
                solved.iterations,
                rows.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
