use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wgf_harness::config::{resolve, Experiment, RawConfig};
use wgf_harness::experiment::{fd_oracle_table, run_experiment};
use wgf_harness::io::write_table;
use wgf_harness::{init_thread_pool, HarnessError};

#[derive(Parser)]
#[command(name = "wgf", about = "Projected Wasserstein gradient flows on ReLU pushforward maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV tables.
    Run {
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Final-time error for several network sizes and update subsets.
    SweepN {
        /// Experiment whose dynamics are swept.
        #[arg(long, default_value = "linear-quartic")]
        base: Experiment,
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        subsets: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Reference solvers.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Finite-difference Fokker–Planck solve, written to density.csv.
    Fpk {
        potential: Potential,
        #[arg(long)]
        fd_points: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        fd_lo: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        fd_hi: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Potential {
    Quadratic,
    Quartic,
    Sextic,
}

#[derive(Args)]
struct Common {
    /// Flat TOML file with any of the configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// a, b or both.
    #[arg(long)]
    subset: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Divide the particle count by 100.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    particles: Option<usize>,
    /// empirical or analytic.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    bound: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu0: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    diffusion: Option<f64>,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    t0: Option<f64>,
}

impl Common {
    fn raw(&self) -> Result<RawConfig, HarnessError> {
        let file = match &self.config {
            Some(p) => RawConfig::from_file(p)?,
            None => RawConfig::default(),
        };
        Ok(file.merge(RawConfig {
            n: self.n,
            subset: self.subset.clone(),
            dt: self.dt,
            steps: self.steps,
            seed: self.seed,
            desk_scale: self.desk_scale.then_some(true),
            output_dir: self.out.clone(),
            particles: self.particles,
            metric: self.metric.clone(),
            bound: self.bound,
            beta: self.beta,
            mu0: self.mu0,
            gamma0: self.gamma0,
            sigma0: self.sigma0,
            diffusion: self.diffusion,
            chi: self.chi,
            t0: self.t0,
            ..Default::default()
        }))
    }
}

/// Like `println!`, but a closed stdout is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    init_thread_pool()?;
    match cli.command {
        Command::Run { experiment, common } => {
            if experiment == Experiment::SweepN {
                return Err(HarnessError::Config("use `wgf sweep-n` for sweeps".into()));
            }
            let raw = common.raw()?.merge(RawConfig { experiment: Some(experiment), ..Default::default() });
            let cfg = resolve(&raw)?;
            let out = run_experiment(&cfg)?;
            if let Some(e) = out.errors.last() {
                say!("{} N={} subset={} t={} error={:e}", e.experiment, e.n, e.subset, e.t, e.error);
            }
            say!("wrote {}", cfg.output_dir.display());
        }
        Command::SweepN { base, ns, subsets, common } => {
            let raw = common.raw()?.merge(RawConfig {
                experiment: Some(Experiment::SweepN),
                sweep_base: Some(base),
                sweep_ns: ns,
                sweep_subsets: subsets,
                ..Default::default()
            });
            let cfg = resolve(&raw)?;
            let out = run_experiment(&cfg)?;
            for e in &out.errors {
                say!("{} N={} subset={} error={:e}", e.experiment, e.n, e.subset, e.error);
            }
            say!("wrote {}", cfg.output_dir.display());
        }
        Command::Oracle { which: OracleCommand::Fpk { potential, fd_points, fd_lo, fd_hi, common } } => {
            let experiment = match potential {
                Potential::Quadratic => Experiment::FpkQuadratic,
                Potential::Quartic => Experiment::FpkQuartic,
                Potential::Sextic => Experiment::FpkSextic,
            };
            let raw = common.raw()?.merge(RawConfig {
                experiment: Some(experiment),
                fd_points,
                fd_lo,
                fd_hi,
                ..Default::default()
            });
            let cfg = resolve(&raw)?;
            let rows = fd_oracle_table(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_table(&cfg.output_dir, &rows)?;
            say!("wrote {}", cfg.output_dir.join("density.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wgf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
