use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use helmstab::born::ExtractionMode;
use helmstab::experiments::{configure_threads, execute, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "helmstab",
    version,
    about = "Increasing-stability laboratory for the Helmholtz inverse problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Constant-q DN entries against the separable solution.
    CheckDn(Flags),
    /// Boundary pairing against the volume integral.
    CheckIdentity(Flags),
    /// CGO remainder decay and residuals.
    CheckCgo(Flags),
    /// Fourier samples for the first (k, noise) cell.
    Extract(Flags),
    /// Reconstruction for the first (k, noise) cell.
    Reconstruct(Flags),
    /// Stability sweep over every (k, noise) cell.
    Sweep(Flags),
}

#[derive(Args, Clone)]
struct Flags {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated frequencies.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<f64>>,
    /// Comma-separated noise targets.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    points_per_axis: Option<usize>,
    #[arg(long)]
    modes_per_face: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ExtractionMode>,
}

fn parse_mode(s: &str) -> Result<ExtractionMode, String> {
    match s {
        "oracle" => Ok(ExtractionMode::Oracle),
        "blind" => Ok(ExtractionMode::Blind),
        _ => Err(format!("unknown mode {s:?} (oracle or blind)")),
    }
}

impl Flags {
    fn config(&self) -> helmstab::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(k) = &self.k {
            cfg.k = k.clone();
        }
        if let Some(n) = &self.noise {
            cfg.noise = n.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(d) = self.dim {
            cfg.dim = d;
        }
        if let Some(n) = self.points_per_axis {
            cfg.points_per_axis = n;
        }
        if let Some(m) = self.modes_per_face {
            cfg.modes_per_face = m;
        }
        if let Some(m) = self.mode {
            cfg.extraction.mode = m;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Sub::CheckDn(f) => (Command::CheckDn, f),
        Sub::CheckIdentity(f) => (Command::CheckIdentity, f),
        Sub::CheckCgo(f) => (Command::CheckCgo, f),
        Sub::Extract(f) => (Command::Extract, f),
        Sub::Reconstruct(f) => (Command::Reconstruct, f),
        Sub::Sweep(f) => (Command::Sweep, f),
    };
    let run = || -> helmstab::Result<bool> {
        configure_threads()?;
        let cfg = flags.config()?;
        let manifest = execute(command, &cfg)?;
        // A closed pipe (`| head`) must not turn a finished run into a panic.
        let mut stdout = std::io::stdout().lock();
        for gate in &manifest.gates {
            let _ = writeln!(
                stdout,
                "{} {}: {}",
                if gate.passed { "PASS" } else { "FAIL" },
                gate.name,
                gate.detail
            );
        }
        let _ = writeln!(stdout, "outputs written to {}", cfg.out.display());
        Ok(manifest.passed())
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
