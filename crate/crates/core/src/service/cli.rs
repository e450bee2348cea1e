use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tracing::info;

use super::config::AppConfig;
use super::http::{router, AppState};
use crate::artifact::Artifact;
use crate::error::{Error, Result};
use crate::eval::{full_report, write_generated_csv};
use crate::generator::{generate, GenerationRequest, MAX_COUNT};
use crate::pipeline::train_pipeline;
use crate::profile_store::{
    enforce_k_anonymity, ingest_csv, split_holdout, write_csv, Condition, EnergyRating, PropertyType,
};
use crate::simdata::{default_label_mix, generate_cohort, CohortSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "loadsynth", version, about = "Conditional synthetic daily load profiles")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated labelled cohort as CSV.
    Simdata {
        /// Training CSV (defaults to `data_path`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Holdout CSV (defaults to `holdout_path`); 0 holdout fraction writes none.
        #[arg(long)]
        holdout_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
        #[arg(long, default_value_t = 600)]
        households: usize,
        #[arg(long, default_value_t = 60)]
        days: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Train the CVAE and latent mixture and write the model artifact.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Generate profiles matching a label condition into a CSV file.
    Generate {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        has_ev: Option<bool>,
        #[arg(long)]
        has_heat_pump: Option<bool>,
        #[arg(long)]
        smart_tariff: Option<bool>,
        #[arg(long)]
        property_type: Option<PropertyType>,
        #[arg(long)]
        energy_rating: Option<EnergyRating>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=MAX_COUNT as u64))]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the evaluation report for a trained artifact.
    Evaluate {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the generation API.
    Serve {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        address: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::GuardRefused(_) => EXIT_REFUSED,
        Error::MissingFile(_)
        | Error::ChecksumMismatch
        | Error::Artifact(_)
        | Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::MalformedRow { .. }
        | Error::UnknownEnumValue { .. }
        | Error::Csv(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    match cli.command {
        Command::Simdata { out, holdout_out, holdout_fraction, households, days, noise } => {
            let spec = CohortSpec {
                n_households: households,
                days_per_household: days,
                label_mix: default_label_mix(),
                noise_scale: noise,
                seed,
            };
            let data = generate_cohort(&spec)?;
            let out = out.unwrap_or(cfg.data_path);
            if holdout_fraction > 0.0 {
                let (train, holdout) = split_holdout(&data, holdout_fraction, seed)?;
                write_dataset(&out, &train)?;
                write_dataset(&holdout_out.unwrap_or(cfg.holdout_path), &holdout)?;
            } else {
                write_dataset(&out, &data)?;
            }
            Ok(())
        }
        Command::Train { data, artifact } => {
            let data = ingest_csv(data.unwrap_or(cfg.data_path.clone()))?;
            let trained = train_pipeline(&data, &cfg.pipeline_config(seed))?;
            let path = artifact.unwrap_or(cfg.artifact_path);
            Artifact::new(trained.model, trained.mixture)?.save(&path)?;
            info!(path = %path.display(), "artifact written");
            Ok(())
        }
        Command::Generate { artifact, has_ev, has_heat_pump, smart_tariff, property_type, energy_rating, count, out } => {
            let a = Artifact::load(artifact.unwrap_or(cfg.artifact_path.clone()))?;
            let condition = Condition { has_ev, has_heat_pump, smart_tariff, property_type, energy_rating };
            let req = GenerationRequest { condition, count: count as usize, seed };
            let result = generate(&a.model, &a.mixture, &req, &cfg.guards.guard_config())?;
            write_generated_csv(BufWriter::new(File::create(&out)?), &result)?;
            info!(path = %out.display(), count, "profiles written");
            Ok(())
        }
        Command::Evaluate { artifact, data, holdout, out } => {
            let a = Artifact::load(artifact.unwrap_or(cfg.artifact_path.clone()))?;
            let train = ingest_csv(data.unwrap_or(cfg.data_path.clone()))?;
            let train = enforce_k_anonymity(&train, cfg.guards.k, cfg.pipeline.k_policy)?;
            let holdout = ingest_csv(holdout.unwrap_or(cfg.holdout_path.clone()))?;
            let mut eval_cfg = cfg.eval.clone();
            eval_cfg.k_anonymity = cfg.guards.k;
            let report = full_report(&a.model, &a.mixture, &train, &holdout, &eval_cfg, seed)?;
            let dir = out.unwrap_or(cfg.report_dir);
            report.write_files(&dir)?;
            info!(dir = %dir.display(), ratio = report.tstr.ratio, p = report.mmd.p_value, "report written");
            Ok(())
        }
        Command::Serve { artifact, address, port } => {
            if cfg.server.tokens.is_empty() {
                return Err(Error::Config("server.tokens must list at least one API token".into()));
            }
            let a = Artifact::load(artifact.unwrap_or(cfg.artifact_path.clone()))?;
            let state = Arc::new(AppState::new(a, cfg.guards.guard_config(), cfg.server.tokens.clone(), seed));
            let addr = format!("{}:{}", address.unwrap_or(cfg.server.address), port.unwrap_or(cfg.server.port));
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                info!(%addr, "serving");
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok(())
            })
        }
    }
}

fn write_dataset(path: &PathBuf, d: &crate::profile_store::Dataset) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_csv(BufWriter::new(File::create(path)?), d.records())?;
    info!(path = %path.display(), profiles = d.len(), "dataset written");
    Ok(())
}
