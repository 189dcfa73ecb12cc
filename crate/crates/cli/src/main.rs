use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcdown::harness::{run_command, Command, RunConfig};
use vcdown::{Error, Result};

#[derive(Parser)]
#[command(name = "vcdown", version, about = "Varying-coefficient GP downscaling emulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate coarse/fine datasets from presets or an explicit scenario.
    Simulate(Flags),
    /// Fit a model to coarse and fine CSV files.
    Fit(Flags),
    /// Predict the fine field after the training periods.
    Predict(Flags),
    /// Score a prediction file against gridded truth or stations.
    Evaluate(Flags),
    /// Run the scenario x model x replication study.
    Study(Flags),
    /// Time exact and tapered likelihoods over grid sizes and taper ranges.
    Bench(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Preset family or scenario, repeatable (e.g. sim2-res1, simA-res2-exp).
    #[arg(long)]
    preset: Vec<String>,
    /// Model, repeatable: m0, m1, m2, m3.
    #[arg(long)]
    model: Vec<String>,
    /// exact or tapered.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    taper_range: Option<f64>,
    /// ml or mcmc.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Interval level.
    #[arg(long)]
    level: Option<f64>,
    /// Last training period; later periods are predicted or held out.
    #[arg(long)]
    train_end: Option<i64>,
    #[arg(long)]
    coarse: Option<PathBuf>,
    #[arg(long)]
    fine: Option<PathBuf>,
    /// Saved fit (fit.toml) to predict from.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    prediction: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    stations: Option<PathBuf>,
}

impl Flags {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        c.seed = self.seed.or(c.seed);
        if let Some(v) = self.out {
            c.out = v;
        }
        if !self.preset.is_empty() {
            c.presets = self.preset;
            c.scenario = None;
        }
        if !self.model.is_empty() {
            c.models = self.model;
        }
        if let Some(v) = self.backend {
            c.backend = v;
        }
        if let Some(m) = self.method {
            c.method = match m.as_str() {
                "ml" => vcdown::harness::Method::Ml,
                "mcmc" => vcdown::harness::Method::Mcmc,
                other => return Err(Error::Config(format!("unknown method '{other}' (expected ml or mcmc)"))),
            };
        }
        c.taper_range = self.taper_range.or(c.taper_range);
        c.replications = self.replications.or(c.replications);
        c.workers = self.workers.or(c.workers);
        c.train_end = self.train_end.or(c.train_end);
        if let Some(v) = self.level {
            c.level = v;
        }
        for (slot, v) in [
            (&mut c.coarse, self.coarse),
            (&mut c.fine, self.fine),
            (&mut c.fit, self.fit),
            (&mut c.prediction, self.prediction),
            (&mut c.truth, self.truth),
            (&mut c.stations, self.stations),
        ] {
            if v.is_some() {
                *slot = v;
            }
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Fit(f) => (Command::Fit, f),
        Cmd::Predict(f) => (Command::Predict, f),
        Cmd::Evaluate(f) => (Command::Evaluate, f),
        Cmd::Study(f) => (Command::Study, f),
        Cmd::Bench(f) => (Command::Bench, f),
    };
    match flags.into_config().and_then(|cfg| run_command(command, &cfg)) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            // One machine-readable line: error=<kind> command=<name> message=<text>
            eprintln!(
                "error={} command={} message={}",
                e.kind(),
                command.as_str(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::FAILURE
        }
    }
}
