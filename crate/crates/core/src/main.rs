//! Command-line harness: instance generation, batch experiments, scaling
//! fits, coefficient scans, and spectral-gap scans. Exits 0 on success;
//! on failure prints one machine-readable `error: {...}` line to stderr
//! and exits nonzero.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use rapidquench::bench::{
    config_from_manifest, dyn_scan_csv, fit_kappa, run_experiment, ExperimentConfig,
};
use rapidquench::dyncoeff::SampleMode;
use rapidquench::error::{Error, Result};
use rapidquench::ising::{
    make_sk_instance, make_two_qubit_problem, Driver, InstanceFile, IsingProblem,
    ProblemHamiltonian,
};
use rapidquench::spectral::gap_scan;

#[derive(Parser)]
#[command(name = "rapidquench", version, about = "Rapid-quench annealing simulator and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded spin-glass instances as JSON files.
    GenInstances {
        /// Qubit count.
        #[arg(long)]
        n: usize,
        /// Number of instances.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Coupling/field scale.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Seed of the first instance; subsequent instances increment it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a batch experiment from a config file or a previous manifest.
    Run {
        /// Flat key = value config file.
        #[arg(long, conflicts_with = "from_manifest")]
        config: Option<PathBuf>,
        /// Manifest JSON from a previous run (byte-identical reproduction).
        #[arg(long)]
        from_manifest: Option<PathBuf>,
        /// key=value overrides applied after the file (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Fit the scaling exponent kappa in p ~ 2^(kappa n) from a CSV.
    Fit {
        /// CSV with an `n` column and a probability column
        /// (`p`, `p_final`, or `mean_p`); rows are averaged per size.
        #[arg(long)]
        input: PathBuf,
    },
    /// Sweep the average dynamic coefficient over hopping rates.
    DynScan {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0.05)]
        gamma_min: f64,
        #[arg(long, default_value_t = 5.0)]
        gamma_max: f64,
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Pair sampling: exact enumeration unless set.
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan the spectral gap and the average coefficient along the schedule.
    GapScan {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Problem selection shared by the scan subcommands.
#[derive(Args)]
struct ProblemArgs {
    /// Load an instance JSON file.
    #[arg(long, conflicts_with_all = ["n", "two_qubit"])]
    instance: Option<PathBuf>,
    /// Generate a spin-glass instance of this size instead.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the built-in two-qubit example problem.
    #[arg(long)]
    two_qubit: bool,
    /// Bias the driver toward the instance optimum with this angle (radians).
    #[arg(long)]
    biased_theta: Option<f64>,
}

impl ProblemArgs {
    fn build(&self) -> Result<(IsingProblem, Driver)> {
        let problem = if let Some(path) = &self.instance {
            let file: InstanceFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            IsingProblem::try_from(&file)?
        } else if self.two_qubit {
            make_two_qubit_problem()
        } else if let Some(n) = self.n {
            make_sk_instance(n, self.sigma, self.seed)?
        } else {
            return Err(Error::Config(
                "select a problem with --instance, --n, or --two-qubit".into(),
            ));
        };
        let n = problem.n();
        let driver = match self.biased_theta {
            Some(theta) => {
                let diag = problem.diagonal()?;
                let optimum = diag
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j as u64)
                    .unwrap();
                Driver::biased_toward(n, optimum, theta)
            }
            None => Driver::transverse(n),
        };
        Ok((problem, driver))
    }
}

fn write_or_print(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenInstances {
            n,
            count,
            sigma,
            seed,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            for i in 0..count {
                let problem = make_sk_instance(n, sigma, seed + i as u64)?;
                let file = InstanceFile::from(&problem);
                let path = out.join(format!("{}.json", file.id));
                std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Run {
            config,
            from_manifest,
            sets,
        } => {
            let mut cfg = match (&config, &from_manifest) {
                (Some(path), None) => ExperimentConfig::from_file(path)?,
                (None, Some(path)) => config_from_manifest(path)?,
                _ => {
                    return Err(Error::Config(
                        "provide exactly one of --config or --from-manifest".into(),
                    ))
                }
            };
            for kv in &sets {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad --set '{kv}', need KEY=VALUE")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            let out = run_experiment(&cfg)?;
            println!("{}", out.manifest_path.display());
            for f in &out.manifest.files {
                println!("{f}");
            }
            Ok(())
        }
        Command::Fit { input } => {
            let text = std::fs::read_to_string(&input)?;
            let mut lines = text.lines();
            let header: Vec<&str> = lines
                .next()
                .ok_or_else(|| Error::Config("empty CSV".into()))?
                .split(',')
                .map(str::trim)
                .collect();
            let n_col = header
                .iter()
                .position(|&h| h == "n")
                .ok_or_else(|| Error::Config("CSV has no 'n' column".into()))?;
            let p_col = header
                .iter()
                .position(|&h| h == "p" || h == "p_final" || h == "mean_p")
                .ok_or_else(|| Error::Config("CSV has no probability column".into()))?;
            let mut per_size: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for line in lines.filter(|l| !l.trim().is_empty()) {
                let fields: Vec<&str> = line.split(',').collect();
                let n: usize = fields
                    .get(n_col)
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad 'n' in row '{line}'")))?;
                let p: f64 = fields
                    .get(p_col)
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad probability in row '{line}'")))?;
                let e = per_size.entry(n).or_insert((0.0, 0));
                e.0 += p;
                e.1 += 1;
            }
            let sizes: Vec<usize> = per_size.keys().copied().collect();
            let probs: Vec<f64> = per_size.values().map(|(s, c)| s / *c as f64).collect();
            let fit = fit_kappa(&sizes, &probs)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "kappa": fit.kappa,
                    "intercept": fit.intercept,
                    "kappa_stderr": fit.kappa_stderr,
                    "sizes": fit.sizes,
                    "mean_probs": fit.probs,
                }))?
            );
            Ok(())
        }
        Command::DynScan {
            problem,
            gamma_min,
            gamma_max,
            points,
            samples,
            sample_seed,
            out,
        } => {
            if points < 2 || !(0.0 < gamma_min && gamma_min < gamma_max) {
                return Err(Error::Config("need points >= 2 and 0 < gamma_min < gamma_max".into()));
            }
            let (prob, driver) = problem.build()?;
            let mode = match samples {
                Some(n_samples) => SampleMode::Sampled {
                    n_samples,
                    seed: sample_seed,
                },
                None => SampleMode::Exact,
            };
            let gammas: Vec<f64> = (0..points)
                .map(|i| gamma_min + (gamma_max - gamma_min) * i as f64 / (points - 1) as f64)
                .collect();
            let csv = dyn_scan_csv(&prob, &driver, &gammas, mode)?;
            write_or_print(out.as_ref(), &csv)
        }
        Command::GapScan {
            problem,
            points,
            out,
        } => {
            if points < 2 {
                return Err(Error::Config("need points >= 2".into()));
            }
            let (prob, driver) = problem.build()?;
            let grid: Vec<f64> = (0..points)
                .map(|i| i as f64 / (points - 1) as f64)
                .collect();
            let scan = gap_scan(&prob, &driver, &grid)?;
            write_or_print(out.as_ref(), &scan.to_csv())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!(
            "error: {}",
            serde_json::json!({ "kind": e.kind(), "message": e.to_string() })
        );
        std::process::exit(1);
    }
}
