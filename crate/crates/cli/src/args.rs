use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ovlink_core::{DetectorKind, ExperimentConfig, Profile, Scenario};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "ovlink",
    version,
    about = "Link-level simulator for overlapping unsynchronized channels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a single operating point.
    Simulate(ConfigArgs),
    /// Simulate the full grid and write figure data.
    Sweep(ConfigArgs),
    /// Closed-form and semi-analytic predictions, no link simulation.
    Predict(ConfigArgs),
    /// Throughput-optimal pilot density.
    OptimizePilot(OptimizeArgs),
    /// Re-run the operating point behind one row of a previous sweep.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

/// Flags mirroring the experiment configuration. Anything given here
/// overrides the profile or the config file.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON or TOML configuration file; unset fields take desk defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base profile when no config file is given.
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    pub profile: ProfileArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// interference-free | interference-present (aliases: if, ip).
    #[arg(long = "scenario", value_delimiter = ',')]
    pub scenarios: Vec<Scenario>,
    #[arg(long)]
    pub n_r: Option<usize>,
    #[arg(long = "alpha", value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long = "snr-db", value_delimiter = ',', allow_negative_numbers = true)]
    pub snr_db: Vec<f64>,
    #[arg(long)]
    pub n_p: Option<usize>,
    #[arg(long = "n-d", value_delimiter = ',')]
    pub n_d: Vec<usize>,
    /// Interferer to desired bandwidth ratio M.
    #[arg(long)]
    pub bandwidth_ratio: Option<usize>,
    /// Number of interference coefficients L.
    #[arg(long)]
    pub eic_len: Option<usize>,
    /// Carrier offset times the desired symbol period.
    #[arg(long, allow_negative_numbers = true)]
    pub freq_offset: Option<f64>,
    #[arg(long)]
    pub roll_off: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub inr_db: Option<f64>,
    /// s-map | i-map | odd | iterative.
    #[arg(long = "detector", value_delimiter = ',')]
    pub detectors: Vec<DetectorKind>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let cfg = self.build()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// For commands that only run the I-MAP link or no simulation at all:
    /// unless detectors were given explicitly, S-MAP limits do not apply.
    pub fn resolve_imap(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.build()?;
        if self.detectors.is_empty() {
            cfg.detectors = vec![DetectorKind::IMap];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::profile(self.profile.into()),
        };
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        fn set_list<T: Clone>(dst: &mut Vec<T>, src: &[T]) {
            if !src.is_empty() {
                *dst = src.to_vec();
            }
        }
        set(&mut cfg.master_seed, &self.seed);
        set(&mut cfg.trials, &self.trials);
        set_list(&mut cfg.scenarios, &self.scenarios);
        set(&mut cfg.n_r, &self.n_r);
        set_list(&mut cfg.alphas, &self.alphas);
        set_list(&mut cfg.snr_db, &self.snr_db);
        set(&mut cfg.n_p, &self.n_p);
        set_list(&mut cfg.n_d, &self.n_d);
        set(&mut cfg.bandwidth_ratio, &self.bandwidth_ratio);
        set(&mut cfg.eic_len, &self.eic_len);
        set(&mut cfg.freq_offset, &self.freq_offset);
        set(&mut cfg.roll_off, &self.roll_off);
        set(&mut cfg.inr_db, &self.inr_db);
        set_list(&mut cfg.detectors, &self.detectors);
        set(&mut cfg.max_iters, &self.max_iters);
        if self.out.is_some() {
            cfg.output = self.out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResidualArg {
    /// Residual power measured by a short link simulation per n_d.
    Measured,
    /// High-SNR closed form, no simulation.
    Floor,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = ResidualArg::Measured)]
    pub residual: ResidualArg,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Directory written by `sweep` (holds manifest.json and metrics.csv).
    pub dir: PathBuf,
    /// Zero-based row of metrics.csv.
    #[arg(long)]
    pub row: usize,
    /// Where to write the per-trial records as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
