use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use hdcca::cli_io::{
    cmd_analyze, cmd_master_check, cmd_pca, cmd_simulate, format_spike_table, load_preset, preset_names,
    AnalyzeFlags, CliError, ConfigError, Orientation, OutputFormat, SimConfig, SimulateFlags, SimulateOutcome,
};
use hdcca::inference::AnalyzeOptions;

#[derive(Parser)]
#[command(name = "hdcca", version, about = "Spike detection and angle estimation for high-dimensional CCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    /// Each row is a variable, each column a sample.
    Variables,
    /// Each row is a sample, each column a variable.
    Samples,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Variables => Orientation::RowsAreVariables,
            OrientationArg::Samples => Orientation::RowsAreSamples,
        }
    }
}

#[derive(clap::Args)]
struct DemeanArgs {
    /// Subtract each variable's mean across samples.
    #[arg(long, overrides_with = "no_demean")]
    demean: bool,
    #[arg(long = "no-demean", action = ArgAction::SetTrue)]
    no_demean: bool,
}

impl DemeanArgs {
    fn enabled(&self) -> bool {
        self.demean && !self.no_demean
    }
}

#[derive(Subcommand)]
enum Command {
    /// Detect spikes and estimate signal strength and angles for two panels.
    Analyze {
        u: PathBuf,
        v: PathBuf,
        #[command(flatten)]
        demean: DemeanArgs,
        #[arg(long, value_enum, default_value = "variables")]
        orientation: OrientationArg,
        #[arg(long, default_value_t = 5.0)]
        gate_multiplier: f64,
        #[arg(long)]
        bins: Option<usize>,
        /// Also write the PCA spectrum of both panels.
        #[arg(long)]
        pca: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Run a simulation config or a named preset.
    Simulate {
        /// Path to a key = value simulation config.
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// List the available presets and exit.
        #[arg(long)]
        list_presets: bool,
    },
    /// Compare master-equation roots with a direct eigensolve.
    MasterCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 9)]
        m: usize,
        #[arg(long, default_value_t = 40)]
        s: usize,
        /// Force two equal noise cosines.
        #[arg(long)]
        repeated: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// PCA spectrum of one panel.
    Pca {
        data: PathBuf,
        #[command(flatten)]
        demean: DemeanArgs,
        #[arg(long, value_enum, default_value = "variables")]
        orientation: OrientationArg,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn configure_threads() {
    if let Some(n) = std::env::var("HDCCA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze {
            u,
            v,
            demean,
            orientation,
            gate_multiplier,
            bins,
            pca,
            out_dir,
            format,
        } => {
            let flags = AnalyzeFlags {
                orientation: orientation.into(),
                options: AnalyzeOptions {
                    demean: demean.enabled(),
                    gate_multiplier,
                    bins,
                },
                pca,
                out_dir: out_dir.clone(),
                format: format.into(),
            };
            let report = cmd_analyze(&u, &v, &flags)?;
            print!("{}", format_spike_table(&report.spikes));
            for note in &report.notes {
                println!("note: {note}");
            }
            println!("wrote {}", out_dir.display());
        }
        Command::Simulate {
            spec,
            preset,
            seed,
            replications,
            bins,
            out_dir,
            format,
            list_presets,
        } => {
            if list_presets {
                for name in preset_names() {
                    println!("{name}");
                }
                return Ok(());
            }
            let config = match (spec, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                    SimConfig::parse(&text)?
                }
                (None, Some(name)) => load_preset(&name)?,
                (None, None) => return Err(ConfigError::Missing("spec path or --preset").into()),
            };
            let flags = SimulateFlags {
                seed,
                replications,
                bins,
                out_dir: out_dir.clone(),
                format: Some(format.into()),
            };
            match cmd_simulate(&config, &flags)? {
                SimulateOutcome::Curve(points) => {
                    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "rho_sq", "x_theory", "x_mean", "y_theory", "y_mean");
                    for p in points {
                        println!(
                            "{:>8.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
                            p.rho_sq, p.theta_x_theory, p.theta_x.mean, p.theta_y_theory, p.theta_y.mean
                        );
                    }
                }
                SimulateOutcome::Summary(sum) => {
                    println!(
                        "{:>6} {:>6} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9}",
                        "signal", "r", "z_rho", "lambda", "x_theory", "x_mean", "y_theory", "y_mean"
                    );
                    for (q, s) in sum.signals.iter().enumerate() {
                        println!(
                            "{:>6} {:>6.2} {:>8.2} {:>8.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2}",
                            q + 1,
                            s.strength,
                            s.theory.map_or(f64::NAN, |t| t.z_rho),
                            s.lambda.mean,
                            s.theta_x_theory,
                            s.theta_x.mean,
                            s.theta_y_theory,
                            s.theta_y.mean
                        );
                    }
                }
            }
            println!("wrote {}", out_dir.display());
        }
        Command::MasterCheck {
            seed,
            k,
            m,
            s,
            repeated,
            format,
        } => {
            let report = cmd_master_check(seed, k, m, s, repeated)?;
            match OutputFormat::from(format) {
                OutputFormat::Json => {
                    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
                    println!("{text}");
                }
                OutputFormat::Csv => {
                    println!("K={} M={} S={} seed={}", report.k, report.m, report.s, report.seed);
                    println!("root count: {} of {}", report.root_count, report.k);
                    println!("max |master root - eigensolve|: {:e}", report.max_discrepancy);
                    println!("interlacing: {}", if report.interlacing { "ok" } else { "violated" });
                    for c2 in &report.repeated_cosines_sq {
                        println!("repeated squared cosine {c2:.6} handled");
                    }
                    if !report.pinned.is_empty() {
                        println!("roots pinned at a noise cosine: {:?}", report.pinned);
                    }
                }
            }
        }
        Command::Pca {
            data,
            demean,
            orientation,
            out_dir,
        } => {
            let spectrum = cmd_pca(&data, orientation.into(), demean.enabled(), &out_dir)?;
            for (i, ev) in spectrum.iter().enumerate() {
                println!("{:>4} {:.6}", i + 1, ev);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
