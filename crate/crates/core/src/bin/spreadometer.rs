use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spreadometer::designs::{read_sample_ids, DesignSpec, RngStream, SampleSelection, Sampler};
use spreadometer::frame::{load_population, write_points_csv, ColumnSchema, PopulationFrame};
use spreadometer::genpop::ProcessSpec;
use spreadometer::simharness::{run_experiment, ExperimentConfig};
use spreadometer::{BalanceReport, Error, Result, WeightsMatrix};

#[derive(Debug, Parser)]
#[command(name = "spreadometer", version, about = "Spatial balance of survey samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Process {
    Csr,
    Aggregated,
    Regular,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Design {
    Srs,
    Lpm,
    Kclust,
    Umes,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an artificial population as `id,x,y` CSV.
    Generate {
        process: Process,
        /// Number of units (aggregated: 10 per cluster).
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one sample and write the selected ids.
    Sample {
        #[arg(long)]
        population: PathBuf,
        #[arg(long, value_enum)]
        design: Design,
        /// Sample size; required unless the population has a `pi` column.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute B, I_M and I_B for a sample and print them as JSON.
    Measure {
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        /// Sample size for probabilities when the population has no `pi` column
        /// (defaults to the number of selected ids).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run a simulation experiment from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Replications, overriding the config.
        #[arg(long)]
        reps: Option<usize>,
        /// Directory receiving report.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_frame(path: &Path, n: Option<usize>) -> Result<PopulationFrame> {
    load_population(File::open(path)?, &ColumnSchema::default())?.into_frame_auto(n)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { process, n, seed, out } => {
            let spec = match process {
                Process::Csr => ProcessSpec::csr(n),
                Process::Regular => ProcessSpec::regular(n),
                Process::Aggregated => {
                    if n % 10 != 0 {
                        return Err(Error::Domain(format!(
                            "aggregated populations have 10 units per cluster; {n} is not a multiple of 10"
                        )));
                    }
                    ProcessSpec::Aggregated {
                        clusters: n / 10,
                        per_cluster: 10,
                        radius: 0.03,
                        side: 1.0,
                    }
                }
            };
            let points = spec.generate(&mut RngStream::new(seed, 0).rng())?;
            write_points_csv(&points, output(&out)?)
        }
        Command::Sample {
            population,
            design,
            n,
            k,
            grid,
            seed,
            out,
        } => {
            let frame = load_frame(&population, n)?;
            let spec = match design {
                Design::Srs => DesignSpec::Srs,
                Design::Lpm => DesignSpec::Lpm,
                Design::Kclust => DesignSpec::Kclust { k, grid },
                Design::Umes => DesignSpec::Umes,
            };
            let sample = Sampler::prepare(&spec, &frame)?
                .draw(&frame, &mut RngStream::new(seed, 0).rng())?;
            sample.write_csv(&frame, output(&out)?)
        }
        Command::Measure { population, sample, n } => {
            let ids = read_sample_ids(File::open(&sample)?)?;
            let table = load_population(File::open(&population)?, &ColumnSchema::default())?;
            // without a pi column the probabilities follow from the sample size
            let n = if table.pi.is_some() { n } else { n.or(Some(ids.len())) };
            let frame = table.into_frame_auto(n)?;
            let selection = SampleSelection::from_ids(&frame, &ids)?;
            let w = WeightsMatrix::build(&frame)?;
            let report = BalanceReport::compute(&frame, &selection, &w)?;
            println!("{}", report.to_json()?);
            Ok(())
        }
        Command::Simulate { config, seed, reps, out } => {
            let mut config = ExperimentConfig::from_toml_file(&config)?;
            config.seed = seed;
            if let Some(reps) = reps {
                config.replications = reps;
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                config.output.csv = Some(dir.join("report.csv"));
                config.output.json = Some(dir.join("report.json"));
            }
            let report = run_experiment(&config)?;
            report.write_outputs(&config.output)?;
            print!("{}", report.render_tables());
            Ok(())
        }
    }
}

fn init_threads() {
    if let Some(threads) = std::env::var("SPREADOMETER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("cannot cap worker threads: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind_name());
            ExitCode::from(1)
        }
    }
}
