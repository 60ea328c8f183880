use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use microcavity::bistability::SweepDirection;
use microcavity::config::{ConfigError, RunConfig};
use microcavity::correlator::{
    cross_correlate, cross_correlate_brute_force, Binning, CorrelationHistogram, CorrelatorError,
    FitError,
};
use microcavity::figures::{
    self, analyze_peak, cavity_report, lineshape_run, write_lineshift_csv, PipelineError,
};
use microcavity::tagsim::{read_tags, simulate_stream, write_tags, TagIoError};

#[derive(Parser)]
#[command(
    name = "microcavity",
    version,
    about = "Microcavity photon-pair source modelling and coincidence analysis"
)]
struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set sim.seed=7
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Do not echo the resolved configuration to stderr
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derived cavity properties and the mode table
    Cavity {
        /// Also write the mode table as CSV
        #[arg(long)]
        modes: Option<PathBuf>,
    },
    /// Nonlinear lineshape scans and extracted lineshifts
    Lineshape {
        #[arg(long)]
        direction: Option<SweepDirection>,
        /// Input powers in W, comma separated
        #[arg(long, value_delimiter = ',')]
        powers: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulated time tags of both channels with a truth sidecar
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Coincidence histogram of two tag files
    Correlate {
        tags_a: PathBuf,
        tags_b: PathBuf,
        /// Bin width in s
        #[arg(long)]
        bin: Option<f64>,
        /// Half window in s
        #[arg(long)]
        window: Option<f64>,
        /// Fit the coincidence peak and estimate the CAR
        #[arg(long)]
        fit: bool,
        /// Write the key=value report here as well as to stdout
        #[arg(long)]
        report: Option<PathBuf>,
        /// Histogram CSV path; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
        /// All-pairs reference correlator
        #[arg(long)]
        brute_force: bool,
    },
    /// End-to-end figure analog as CSV (and SVG with output.svg=true)
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(figures::FIGURES))]
        figure: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Data(String),
    Convergence(String),
    /// The reader of stdout went away; not an error.
    ClosedOutput,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Convergence(_) => 4,
            Failure::ClosedOutput => 0,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Convergence(m) => m,
            Failure::ClosedOutput => "",
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            Failure::ClosedOutput
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<TagIoError> for Failure {
    fn from(e: TagIoError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<CorrelatorError> for Failure {
    fn from(e: CorrelatorError) -> Self {
        match e {
            CorrelatorError::ZeroBinWidth | CorrelatorError::WindowTooSmall { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonConvergence { .. } | FitError::Singular => {
                Failure::Convergence(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Fit(f) => f.into(),
            PipelineError::Correlator(c) => c.into(),
            PipelineError::Cavity(_)
            | PipelineError::Lineshape(_)
            | PipelineError::Rate(_)
            | PipelineError::Sim(_) => Failure::Config(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::ClosedOutput) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load_with_overrides(cli.config.as_deref(), &cli.overrides)?;
    if let Command::Lineshape {
        direction, powers, ..
    } = &cli.command
    {
        if let Some(d) = direction {
            cfg.lineshape.direction = *d;
        }
        if let Some(p) = powers {
            cfg.lineshape.powers = p.clone();
        }
    }
    if let Command::Correlate { bin, window, .. } = &cli.command {
        if let Some(b) = bin {
            cfg.correlator.bin_width = *b;
        }
        if let Some(w) = window {
            cfg.correlator.window = *w;
        }
    }
    let resolved = cfg.to_config_string();
    if !cli.quiet {
        eprint!("# resolved configuration\n{resolved}");
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::Cavity { modes } => {
            let report = cavity_report(&cfg)?;
            out.write_all(report.to_key_values().as_bytes())?;
            for m in &report.modes {
                let offset = m
                    .control_offset
                    .map_or("uncompensatable".into(), |o| o.to_string());
                writeln!(out, "mode.{}.plus_hz={}", m.order, m.plus_hz)?;
                writeln!(out, "mode.{}.minus_hz={}", m.order, m.minus_hz)?;
                writeln!(out, "mode.{}.control_offset={offset}", m.order)?;
            }
            if let Some(path) = modes {
                let mut buf = Vec::new();
                report.write_modes_csv(&mut buf)?;
                fs::write(path, buf)?;
            }
        }
        Command::Lineshape { out: dir, .. } => {
            fs::create_dir_all(&dir)?;
            let run = lineshape_run(&cfg)?;
            for (i, scan) in run.scans.iter().enumerate() {
                let mut buf = Vec::new();
                scan.write_csv(&mut buf)?;
                fs::write(dir.join(format!("scan_{i}.csv")), buf)?;
            }
            let mut buf = Vec::new();
            write_lineshift_csv(&run.points, &mut buf)?;
            fs::write(dir.join("lineshift.csv"), buf)?;
            let report = run.report();
            fs::write(dir.join("report.txt"), &report)?;
            fs::write(dir.join("resolved_config.txt"), &resolved)?;
            out.write_all(report.as_bytes())?;
        }
        Command::Simulate { out: dir } => {
            fs::create_dir_all(&dir)?;
            let (plus, minus, truth) =
                simulate_stream(&cfg.sim).map_err(|e| Failure::Config(e.to_string()))?;
            write_tags(&plus, &dir.join("plus.tags"))?;
            write_tags(&minus, &dir.join("minus.tags"))?;
            let mut sidecar = truth.to_key_values();
            sidecar.push_str(&format!(
                "plus.tags={}\nminus.tags={}\n",
                plus.len(),
                minus.len()
            ));
            fs::write(dir.join("truth.txt"), &sidecar)?;
            fs::write(dir.join("resolved_config.txt"), &resolved)?;
            out.write_all(sidecar.as_bytes())?;
        }
        Command::Correlate {
            tags_a,
            tags_b,
            fit,
            report,
            out: csv,
            brute_force,
            ..
        } => {
            let hist = correlate_files(&tags_a, &tags_b, cfg.correlator.binning()?, brute_force)?;
            let mut buf = Vec::new();
            hist.write_csv(&mut buf)?;
            match &csv {
                Some(path) => fs::write(path, &buf)?,
                None if !fit => out.write_all(&buf)?,
                None => {}
            }
            if fit {
                let text = analyze_peak(&hist, &cfg)?.report(&cfg).to_key_values();
                out.write_all(text.as_bytes())?;
                if let Some(path) = report {
                    fs::write(path, &text)?;
                }
            }
        }
        Command::Reproduce { figure, out: dir } => {
            let report = figures::reproduce(&figure, &cfg, &dir)?;
            out.write_all(report.as_bytes())?;
        }
    }
    Ok(())
}

fn correlate_files(
    a: &Path,
    b: &Path,
    binning: Binning,
    brute_force: bool,
) -> Result<CorrelationHistogram, Failure> {
    let label = |p: &Path, e: TagIoError| Failure::Data(format!("{}: {e}", p.display()));
    let a_tags = read_tags(a).map_err(|e| label(a, e))?;
    let b_tags = read_tags(b).map_err(|e| label(b, e))?;
    let hist = if brute_force {
        cross_correlate_brute_force(&a_tags.tags, &b_tags.tags, binning)?
    } else {
        cross_correlate(&a_tags.tags, &b_tags.tags, binning)?
    };
    Ok(hist)
}
