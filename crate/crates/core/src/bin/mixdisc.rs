use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixdisc::error::Result;
use mixdisc::experiment::{
    cmd_diagnose, cmd_fit, cmd_report, cmd_simulate, ExperimentConfig, ExperimentKind, ModelVariant,
};

#[derive(Parser)]
#[command(name = "mixdisc", about = "Mixture calibration and model-deficiency diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the baseline and the k-cluster mixture, write deficiency reports.
    Fit(Opts),
    /// Correlate cluster assignments of a previous fit with the weather.
    Diagnose(Opts),
    /// Forward thermal run with the configured parameters.
    Simulate(Opts),
    /// Recompute deficiency reports from a residual CSV.
    Report(Opts),
}

#[derive(Args)]
struct Opts {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
    #[arg(long, value_enum)]
    experiment: Option<Kind>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Residual CSV for `report`.
    #[arg(long)]
    residuals: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Illustrative,
    ThermalSynthetic,
    ThermalData,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Affine,
    Quadratic,
    ThermalBase,
    ThermalNoIrradiation,
    ThermalHumidity,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(kind) = self.experiment {
            c.kind = match kind {
                Kind::Illustrative => ExperimentKind::Illustrative,
                Kind::ThermalSynthetic => ExperimentKind::ThermalSynthetic,
                Kind::ThermalData => ExperimentKind::ThermalData,
            };
            if self.model.is_none() && c.kind != ExperimentKind::Illustrative && c.model.is_illustrative() {
                c.model = ModelVariant::ThermalBase;
            }
        }
        if let Some(m) = self.model {
            c.model = match m {
                Model::Affine => ModelVariant::Affine,
                Model::Quadratic => ModelVariant::Quadratic,
                Model::ThermalBase => ModelVariant::ThermalBase,
                Model::ThermalNoIrradiation => ModelVariant::ThermalNoIrradiation,
                Model::ThermalHumidity => ModelVariant::ThermalHumidity,
            };
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(k) = self.k {
            c.mixture.k = k;
        }
        if let Some(out) = &self.out {
            c.out_dir = out.clone();
        }
        if let Some(r) = &self.residuals {
            c.residuals_path = Some(r.clone());
        }
        c.svg |= self.svg;
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(o) => {
            let out = cmd_fit(&o.config()?)?;
            print!("{}", out.summary);
        }
        Command::Diagnose(o) => {
            let c = o.config()?;
            cmd_diagnose(&c)?;
            print!("{}", std::fs::read_to_string(c.out_dir.join("diagnose.txt"))?);
        }
        Command::Simulate(o) => {
            let c = o.config()?;
            let series = cmd_simulate(&c)?;
            println!(
                "wrote {} steps for {} sensors to {}",
                series.first().map_or(0, Vec::len),
                series.len(),
                c.out_dir.join("sensors.csv").display()
            );
        }
        Command::Report(o) => {
            for (label, r) in cmd_report(&o.config()?)? {
                println!("{label}: {r}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
