use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use skylink::netsim::in_pool;
use skylink::scenario::{
    run_scenario, sweep, write_distribution_csv, write_scenario_csv, write_sweep_csv,
    write_validity_csv, BuiltScenario, ScenarioConfig, SweepSpec, TransmittanceSource,
    TRANSMITTANCE_DIR_ENV,
};

/// Free-space and fiber quantum channel simulator for balloon-based QKD
/// networks.
#[derive(Debug, Parser)]
#[command(name = "skylink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build one channel and dump its mean and efficiency distributions.
    Channel(Common),
    /// Run a network scenario: one row per link plus the end-to-end row.
    Scenario(Common),
    /// Sweep one parameter of a channel or network scenario.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key to sweep; overrides the config's `sweep.parameter`.
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated values; overrides the config's `sweep.values`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,
    },
    /// Print the validity checks of every channel in the scenario.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario configuration (strict JSON). Omitted keys take baseline values.
    #[arg(long)]
    config: PathBuf,
    /// Photons, pairs or rounds per run.
    #[arg(long)]
    photons: Option<u64>,
    #[arg(long)]
    repeats: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Transmittance table overriding the config. Without it, `builtin`
    /// sources read from the transmittance directory when set.
    #[arg(long)]
    transmittance: Option<PathBuf>,
    /// Directory of transmittance_<nm>nm.csv tables.
    #[arg(long, env = TRANSMITTANCE_DIR_ENV)]
    transmittance_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(p) = self.photons {
            cfg.photons = p;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = &self.transmittance {
            cfg.transmittance = TransmittanceSource::Table(t.clone());
        } else if let (Some(dir), TransmittanceSource::Builtin) =
            (&self.transmittance_dir, &cfg.transmittance)
        {
            let path = dir.join(format!("transmittance_{}nm.csv", cfg.wavelength_nm.round()));
            cfg.transmittance = TransmittanceSource::Table(path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Channel(common) => {
            let cfg = common.load()?;
            if cfg.channel.is_none() {
                bail!("`channel` needs a config with a `channel` section");
            }
            let built = in_pool(common.workers, || BuiltScenario::build(&cfg))??;
            let ch = &built.hops[0].channel;
            eprintln!(
                "{} mean efficiency {:.6} (atm {:.4}, collection {:.4}, coupling {:.4}, p_det {})",
                ch.kind,
                ch.mean_efficiency(),
                ch.eta_atm,
                ch.collection.mean(),
                ch.coupling.mean(),
                ch.detector_eff
            );
            let mut out = common.output()?;
            write_distribution_csv(&mut out, &cfg, ch)?;
            out.flush()?;
        }
        Command::Scenario(common) => {
            let cfg = common.load()?;
            let outcome = in_pool(common.workers, || run_scenario(&cfg))??;
            let mut out = common.output()?;
            write_scenario_csv(&mut out, &cfg, &outcome)?;
            out.flush()?;
        }
        Command::Sweep {
            common,
            parameter,
            values,
        } => {
            let cfg = common.load()?;
            let mut spec = cfg.sweep.clone().unwrap_or(SweepSpec {
                parameter: String::new(),
                values: Vec::new(),
            });
            if let Some(p) = parameter {
                spec.parameter = p;
            }
            if let Some(v) = values {
                spec.values = v;
            }
            if spec.parameter.is_empty() {
                bail!("no sweep parameter: add a `sweep` section or pass --parameter");
            }
            let rows = in_pool(common.workers, || sweep(&cfg, &spec))??;
            let mut out = common.output()?;
            write_sweep_csv(&mut out, &cfg, &spec, &rows)?;
            out.flush()?;
        }
        Command::Validate(common) => {
            let cfg = common.load()?;
            let mut out = common.output()?;
            write_validity_csv(&mut out, &cfg)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
