use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stiefel_filter::antidev::InterpolationScheme;
use stiefel_filter::filters::ResamplePolicy;
use stiefel_filter::harness::experiment::{run_estimators, simulate_repeat, summarize, Experiment};
use stiefel_filter::harness::io::{read_dataset, write_dataset, Sidecar};
use stiefel_filter::harness::repro::{run_repro, Figure};
use stiefel_filter::harness::sweep::run_sweep;
use stiefel_filter::harness::verify::verify;
use stiefel_filter::harness::{Estimator, ScenarioConfig};
use stiefel_filter::simulate::{multiple_of, ModelSpec};
use stiefel_filter::{Error, Result};

#[derive(Parser)]
#[command(name = "stiefel-filter", version, about = "Angular velocity estimation from Stiefel observations")]
struct Cli {
    /// Worker threads; changes speed only, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate truth and observations for every repeat.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the configured estimators on a simulated dataset directory.
    Filter {
        /// Directory written by `simulate` (one repeat).
        #[arg(long)]
        observations: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a canned scenario: fig4, fig5, fig7, fig8 or thm1_rate.
    Repro {
        figure: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute every aggregate under a result directory from its CSVs.
    Verify { dir: PathBuf },
    /// Run one scenario for several sampling periods.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated sampling periods.
        #[arg(long = "delta-ts", value_delimiter = ',', required = true)]
        delta_ts: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Overrides applied on top of `--config` (or the built-in defaults).
#[derive(Args, Default)]
struct ScenarioArgs {
    /// JSON scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// constant, brownian or stair (stair needs a schedule from --config).
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "sigma-b")]
    sigma_b: Option<f64>,
    /// Observation noise; also used by the filters.
    #[arg(long = "sigma-w")]
    sigma_w: Option<f64>,
    #[arg(long = "h-sim")]
    h_sim: Option<f64>,
    #[arg(long = "delta-t")]
    delta_t: Option<f64>,
    /// Horizon in seconds.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Number of particles.
    #[arg(long, alias = "N")]
    particles: Option<usize>,
    #[arg(long)]
    scheme: Option<InterpolationScheme>,
    /// Comma-separated list, e.g. `particle,kalman:linear,kalman_reference`.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated initial velocity coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long = "prior-variance")]
    prior_variance: Option<f64>,
    #[arg(long = "ess-fraction")]
    ess_fraction: Option<f64>,
    /// Resample every M steps instead of on low ESS.
    #[arg(long = "resample-every")]
    resample_every: Option<usize>,
}

impl ScenarioArgs {
    fn apply(&self, mut c: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        let sigma_b = self.sigma_b.or(match &c.model {
            ModelSpec::Brownian { sigma_b, .. } => Some(*sigma_b),
            _ => None,
        });
        match self.model.as_deref() {
            None => {
                if let (Some(s), ModelSpec::Brownian { sigma_b, .. }) = (self.sigma_b, &mut c.model) {
                    *sigma_b = s;
                }
            }
            Some("constant") => c.model = ModelSpec::Constant,
            Some("brownian") => {
                c.model = ModelSpec::Brownian {
                    sigma_b: sigma_b.unwrap_or(1.0),
                    drift: None,
                }
            }
            Some("stair") => {
                if !matches!(c.model, ModelSpec::Stair { .. }) {
                    return Err(Error::InvalidConfig("a stair model needs a schedule in --config".into()));
                }
            }
            Some(other) => return Err(Error::InvalidConfig(format!("unknown model {other:?}"))),
        }
        if let Some(v) = self.sigma_w {
            c.sigma_w = v;
            c.filter.sigma_w = v;
        }
        if let Some(v) = self.h_sim {
            c.grid.h_sim = v;
        }
        if let Some(v) = self.delta_t {
            c.grid.delta_t = v;
        }
        if let Some(v) = self.horizon {
            c.grid.horizon = v;
        }
        if let Some(v) = self.particles {
            c.particles = v;
        }
        if let Some(v) = self.scheme {
            c.scheme = v;
        }
        if let Some(v) = &self.estimators {
            c.estimators = v.clone();
        }
        if let Some(v) = self.repeats {
            c.repeats = v;
        }
        if let Some(v) = &self.x0 {
            c.x0 = v.clone();
        }
        if let Some(v) = self.prior_variance {
            c.filter.prior.variance = v;
        }
        if let Some(v) = self.ess_fraction {
            c.filter.ess_fraction = v;
        }
        if let Some(m) = self.resample_every {
            c.filter.resample_policy = ResamplePolicy::EveryMSteps { m };
        }
        Ok(c)
    }

    fn resolve(&self) -> Result<ScenarioConfig> {
        let base = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        self.apply(base)
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn simulate(scenario: &ScenarioArgs, out: &Path) -> Result<()> {
    let config = scenario.resolve()?;
    let (grid, model) = config.validate()?;
    for r in 0..config.repeats as u64 {
        let data = simulate_repeat(&config, &grid, &model, r)?;
        let dir = out.join(format!("repeat_{r:03}"));
        let sidecar = Sidecar {
            config: config.clone(),
            repeat: r,
        };
        write_dataset(&dir, &sidecar, &data)?;
        // a closed stdout must not stop the remaining repeats
        let _ = writeln!(std::io::stdout(), "{}", dir.display());
    }
    Ok(())
}

fn filter(observations: &Path, scenario: &ScenarioArgs, out: &Path) -> Result<()> {
    let (sidecar, data) = read_dataset(observations)?;
    let base = match &scenario.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => sidecar.config.clone(),
    };
    let config = scenario.apply(base)?;
    let (grid, model) = config.validate()?;
    if config.n != data.stream.n || config.k != data.stream.k {
        return Err(Error::DimensionMismatch(format!(
            "config is V({}, {}) but the observations are V({}, {})",
            config.n, config.k, data.stream.n, data.stream.k
        )));
    }
    if multiple_of(data.stream.delta_t, grid.delta_t) != Some(1) {
        return Err(Error::GridMismatch(format!(
            "config delta_t={} but the observations are sampled every {}",
            grid.delta_t, data.stream.delta_t
        )));
    }
    let records = run_estimators(&config, &model, &data, sidecar.repeat)?;
    let report = summarize(&config, &records, data.stream.delta_t);
    let exp = Experiment { report, records };
    exp.write(out)?;
    print_json(&exp.report.aggregate)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { scenario, out } => simulate(&scenario, &out),
        Command::Filter {
            observations,
            scenario,
            out,
        } => filter(&observations, &scenario, &out),
        Command::Repro { figure, seed, out } => {
            let summary = run_repro(figure.parse::<Figure>()?, seed, &out)?;
            print_json(&summary)
        }
        Command::Verify { dir } => {
            let summary = verify(&dir)?;
            print_json(&summary)
        }
        Command::Sweep {
            scenario,
            delta_ts,
            out,
        } => {
            let config = scenario.resolve()?;
            let sweep = run_sweep(&config, &delta_ts)?;
            sweep.write(&out)?;
            print_json(&sweep.report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
