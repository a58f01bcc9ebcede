//! `cim` binary: generate, fit, score, dim, study, and catalog subcommands.
//!
//! All numerics live in the library; this is a thin shell that parses
//! flags, reads and writes the documented file formats, and maps failures
//! to exit codes (0 success, 1 computational failure, 2 usage error).
//! Diagnostics go to stderr; data only to the --out targets.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cim_core::catalog::{catalog, forward_sample, forward_sample_full, reference_params};
use cim_core::dimension::{regular_dimension, DimensionOptions};
use cim_core::em::{em_fit, EmOptions, FitMode, Init};
use cim_core::io;
use cim_core::model::{DirichletPrior, MechParams, ModelParams, ModelStructure};
use cim_core::scoring::{model_posteriors, score_fitted, Criterion, ScoredModel};
use cim_core::study::{render_report, run_study, StudyConfig};

#[derive(Parser)]
#[command(
    name = "cim",
    version,
    about = "Causal interaction models: sampling, EM learning, and Bayesian structure scoring",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-sample a dataset from a parameterized model.
    Generate {
        /// Model specification file (JSON, must include params).
        #[arg(long)]
        model: PathBuf,
        /// Number of cases.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also emit the latent mechanism values as extra columns.
        #[arg(long)]
        emit_latent: bool,
    },
    /// Fit parameters by EM; writes the fitted model and an objective trace.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        em: EmFlags,
        /// Fitted model output (JSON); the trace lands next to it as
        /// <out with .trace.csv extension>.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit and score every candidate model in a directory.
    Score {
        /// Directory of candidate model files (*.json), scored in name order.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// cs (adjusted Cheeseman-Stutz), cs-raw, or bic.
        #[arg(long, default_value = "cs")]
        criterion: String,
        #[command(flatten)]
        em: EmFlags,
        #[command(flatten)]
        dim: DimFlags,
        /// Output scores CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Model dimension by Jacobian rank.
    Dim {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        dim: DimFlags,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output report CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulation study described by a config file.
    Study {
        /// Study configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (study_scores.csv, study_posteriors.csv, report.txt).
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the five study models with seeded reference parameters.
    Catalog {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (f1.json .. f5.json).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EmFlags {
    /// ml or map.
    #[arg(long, default_value = "map")]
    mode: String,
    /// Dirichlet/Gamma hyperparameter file (JSON); default is the unit prior.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DimFlags {
    /// Interior points sampled for the rank computation.
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    #[arg(long, default_value_t = 1e-7)]
    rank_tol: f64,
}

fn parse_mode(mode: &str) -> Result<FitMode, String> {
    match mode {
        "ml" => Ok(FitMode::Ml),
        "map" => Ok(FitMode::Map),
        other => Err(format!("unknown mode '{}' (expected ml or map)", other)),
    }
}

fn clamp_spec(params: &ModelParams) -> Option<Vec<Vec<Option<usize>>>> {
    let spec: Vec<Vec<Option<usize>>> = params
        .mechanisms
        .iter()
        .map(|m| match m {
            MechParams::Table { clamps, .. } => clamps.clone(),
            MechParams::Rates(_) => Vec::new(),
        })
        .collect();
    spec.iter()
        .any(|c| c.iter().any(Option::is_some))
        .then_some(spec)
}

fn load_prior(
    structure: &ModelStructure,
    path: &Option<PathBuf>,
) -> Result<DirichletPrior, cim_core::Error> {
    let prior = match path {
        Some(p) => io::read_prior(p)?,
        None => DirichletPrior::unit(structure),
    };
    prior.check_against(structure)?;
    Ok(prior)
}

fn em_options(flags: &EmFlags, init: Init, seed: u64) -> Result<EmOptions, String> {
    Ok(EmOptions {
        mode: parse_mode(&flags.mode)?,
        tol: flags.tol,
        max_iter: flags.max_iter,
        restarts: flags.restarts,
        seed,
        init,
    })
}

fn write_trace(path: &Path, fit: &cim_core::em::FitResult, flags: &EmFlags) -> std::io::Result<()> {
    let mut out = format!("# format: {}\n", io::FORMAT_VERSION);
    out.push_str(&format!(
        "# mode: {}, seed: {}, restarts: {}, best_restart: {}, converged: {}\n",
        flags.mode, flags.seed, flags.restarts, fit.best_restart, fit.converged
    ));
    out.push_str("iteration,objective\n");
    for (i, g) in fit.trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i, g));
    }
    std::fs::write(path, out)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate {
            model,
            n,
            seed,
            out,
            emit_latent,
        } => {
            let (structure, params) = io::read_model(&model).map_err(|e| e.to_string())?;
            let params = params
                .ok_or_else(|| format!("{}: model file carries no parameters", model.display()))?;
            if emit_latent {
                let (data, latents) =
                    forward_sample_full(&structure, &params, n, seed).map_err(|e| e.to_string())?;
                let names: Vec<String> = (1..=structure.mechanisms.len())
                    .map(|i| format!("X{}", i))
                    .collect();
                io::write_dataset(&out, &data, Some((&names, &latents)))
                    .map_err(|e| e.to_string())?;
            } else {
                let data =
                    forward_sample(&structure, &params, n, seed).map_err(|e| e.to_string())?;
                io::write_dataset(&out, &data, None).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Command::Fit {
            model,
            data,
            em,
            out,
        } => {
            let (structure, params) = io::read_model(&model).map_err(|e| e.to_string())?;
            let dataset = io::read_dataset(&data).map_err(|e| e.to_string())?;
            let prior = load_prior(&structure, &em.prior).map_err(|e| e.to_string())?;
            let init = match params.as_ref().and_then(clamp_spec) {
                Some(spec) => Init::RandomClamped(spec),
                None => Init::Random,
            };
            let opts = em_options(&em, init, em.seed)?;
            let fit = em_fit(&structure, &dataset, &prior, &opts).map_err(|e| e.to_string())?;
            io::write_model(&out, &structure, Some(&fit.params)).map_err(|e| e.to_string())?;
            let trace_path = out.with_extension("trace.csv");
            write_trace(&trace_path, &fit, &em).map_err(|e| e.to_string())?;
            eprintln!(
                "fit: converged={} iterations={} objective={}",
                fit.converged,
                fit.iterations,
                fit.final_objective()
            );
            Ok(())
        }
        Command::Score {
            models,
            data,
            criterion,
            em,
            dim,
            out,
        } => {
            let criterion = Criterion::parse(&criterion)
                .ok_or_else(|| format!("unknown criterion '{}'", criterion))?;
            let dataset = io::read_dataset(&data).map_err(|e| e.to_string())?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&models)
                .map_err(|e| format!("{}: {}", models.display(), e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().map_or(false, |x| x == "json"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(format!("{}: no model files", models.display()));
            }
            let mut entries = Vec::new();
            let mut scores = Vec::new();
            for (idx, file) in files.iter().enumerate() {
                let (structure, params) = io::read_model(file).map_err(|e| e.to_string())?;
                let id = file
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("model{}", idx));
                let prior = load_prior(&structure, &em.prior).map_err(|e| e.to_string())?;
                let clamps = params.as_ref().and_then(clamp_spec);
                let init = match &clamps {
                    Some(spec) => Init::RandomClamped(spec.clone()),
                    None => Init::Random,
                };
                let seed = em.seed.wrapping_add(7919 * idx as u64);
                let opts = em_options(&em, init, seed)?;
                let fit = em_fit(&structure, &dataset, &prior, &opts).map_err(|e| e.to_string())?;
                let report = regular_dimension(
                    &id,
                    &structure,
                    clamps.as_deref(),
                    &DimensionOptions {
                        n_points: dim.points,
                        seed,
                        fd_step: dim.fd_step,
                        rank_tol: dim.rank_tol,
                    },
                )
                .map_err(|e| e.to_string())?;
                let score = score_fitted(
                    &structure,
                    &dataset,
                    &fit.params,
                    &prior,
                    criterion,
                    report.dim,
                    report.dim_unadjusted,
                )
                .map_err(|e| e.to_string())?;
                scores.push(score);
                entries.push(ScoredModel {
                    model_id: id,
                    n: dataset.len(),
                    criterion,
                    log_score: score,
                    dim: report.dim,
                    dim_unadjusted: report.dim_unadjusted,
                    posterior: 0.0,
                });
            }
            for (entry, posterior) in entries.iter_mut().zip(model_posteriors(&scores)) {
                entry.posterior = posterior;
            }
            io::write_score_report(&out, &entries).map_err(|e| e.to_string())?;
            Ok(())
        }
        Command::Dim {
            model,
            dim,
            seed,
            out,
        } => {
            let (structure, params) = io::read_model(&model).map_err(|e| e.to_string())?;
            let id = model
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let clamps = params.as_ref().and_then(clamp_spec);
            let report = regular_dimension(
                &id,
                &structure,
                clamps.as_deref(),
                &DimensionOptions {
                    n_points: dim.points,
                    seed,
                    fd_step: dim.fd_step,
                    rank_tol: dim.rank_tol,
                },
            )
            .map_err(|e| e.to_string())?;
            io::write_dimension_report(&out, &report).map_err(|e| e.to_string())?;
            eprintln!(
                "dim: d={} d_unadjusted={} ranks={:?} sv_gap={:.3e}",
                report.dim, report.dim_unadjusted, report.point_ranks, report.sv_gap
            );
            Ok(())
        }
        Command::Study { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| format!("{}: {}", config.display(), e))?;
            let config: StudyConfig =
                serde_json_from(&text).map_err(|e| format!("study config: {}", e))?;
            let result = run_study(&config).map_err(|e| e.to_string())?;
            render_report(&result, &out).map_err(|e| e.to_string())?;
            Ok(())
        }
        Command::Catalog { seed, out } => {
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            for entry in catalog() {
                let params = reference_params(&entry, seed);
                let path = out.join(format!("{}.json", entry.id.to_lowercase()));
                io::write_model(&path, &entry.structure, Some(&params))
                    .map_err(|e| e.to_string())?;
            }
            Ok(())
        }
    }
}

fn serde_json_from(text: &str) -> Result<StudyConfig, String> {
    // serde_json lives behind cim-core; round-trip through its config parser
    cim_core::study::parse_config(text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not configure {} workers: {}", jobs, e);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.jobs.is_some() {
        eprintln!("warning: sequential build, --jobs ignored");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {}", message);
            ExitCode::from(1)
        }
    }
}
