//! Command-line surface. Flags override values from `--config` (or from
//! the configuration embedded in `--manifest`).

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pfgmm_core::select::LambdaPolicy;
use pfgmm_core::sim::{EndoSet, Endogeneity, Estimator};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "pfgmm", version, about = "Fixed-effects selection in linear mixed models with endogenous covariates")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest.json.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to the file, then PFGMM_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Without a subcommand the mode comes from the configuration.
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo study on the built-in simulation design.
    Simulate(SimulateArgs),
    /// Fit one estimator to a grouped CSV (group_id, y, x_1.., z_1..).
    Fit(FitArgs),
    /// Reproduce one of the standard tables or figures.
    Benchmark(BenchmarkArgs),
    /// Render the CSV outputs of an earlier run as markdown.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EndoKind {
    None,
    Level1,
    Level2Intercept,
    Level2Slope,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated: mple, pls, pfgmm, pfgmm+2mle, pfgmm+2reml.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<Estimator>>,
    #[arg(long, value_enum)]
    pub endo: Option<EndoKind>,
    /// rho_e (level 1) or rho_b (level 2).
    #[arg(long)]
    pub strength: Option<f64>,
    /// Endogenous set, 1-4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub set: Option<u8>,
    /// AR(1) correlation among the covariates.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// e.g. `scad:lambda=0.1,a=3.7`.
    #[arg(long)]
    pub penalty: Option<String>,
    /// Fixed lambda for PFGMM and PLS.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub estimator: Option<Estimator>,
    #[arg(long)]
    pub penalty: Option<String>,
    /// Fixed lambda.
    #[arg(long, conflicts_with_all = ["exbic", "bic"])]
    pub lambda: Option<f64>,
    /// ExBIC over an increasing grid (PFGMM).
    #[arg(long, value_delimiter = ',', conflicts_with = "bic")]
    pub exbic: Option<Vec<f64>>,
    /// BIC over an increasing grid (MPLE); `--bic` alone uses the automatic grid.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub bic: Option<Vec<f64>>,
    /// Skip the sandwich standard errors.
    #[arg(long)]
    pub no_se: bool,
}

#[derive(Debug, Args, Default)]
pub struct BenchmarkArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with = "figure")]
    pub table: Option<u8>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub figure: Option<u8>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {
    /// Directory of the run to summarize.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

fn endo_set(k: u8) -> EndoSet {
    match k {
        1 => EndoSet::Set1,
        2 => EndoSet::Set2,
        3 => EndoSet::Set3,
        _ => EndoSet::Set4,
    }
}

fn current_set(endo: &Endogeneity) -> EndoSet {
    match endo {
        Endogeneity::None => EndoSet::Set1,
        Endogeneity::Level1 { set, .. } | Endogeneity::Level2Intercept { set, .. } | Endogeneity::Level2Slope { set, .. } => set.clone(),
    }
}

fn current_strength(endo: &Endogeneity) -> f64 {
    match endo {
        Endogeneity::None => 0.0,
        Endogeneity::Level1 { rho_e: r, .. } | Endogeneity::Level2Intercept { rho_b: r, .. } | Endogeneity::Level2Slope { rho_b: r, .. } => *r,
    }
}

impl Cli {
    /// Base configuration (file, manifest or defaults) with every flag
    /// applied, before resolution.
    pub fn to_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, &self.manifest) {
            (Some(path), _) => RunConfig::from_path(path)?,
            (None, Some(path)) => Manifest::read(path)?.config,
            (None, None) => RunConfig::default(),
        };
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(CliError::Config("--threads must be positive".into()));
            }
            cfg.threads = t;
        }
        match &self.command {
            None => {}
            Some(Command::Simulate(a)) => {
                cfg.mode = Mode::Simulate;
                let sim = cfg.sim.get_or_insert_with(Default::default);
                if let Some(r) = a.reps {
                    sim.reps = r;
                }
                if let Some(r) = a.rho {
                    sim.rho = r;
                }
                if let Some(g) = a.groups {
                    sim.groups = g;
                }
                if let Some(m) = a.group_size {
                    sim.group_size = m;
                }
                if let Some(p) = a.p {
                    sim.p = p;
                }
                if a.endo.is_some() || a.strength.is_some() || a.set.is_some() {
                    let set = a.set.map_or_else(|| current_set(&sim.endo), endo_set);
                    let strength = a.strength.unwrap_or_else(|| current_strength(&sim.endo));
                    let kind = a.endo.unwrap_or(match sim.endo {
                        Endogeneity::None => EndoKind::Level1,
                        Endogeneity::Level1 { .. } => EndoKind::Level1,
                        Endogeneity::Level2Intercept { .. } => EndoKind::Level2Intercept,
                        Endogeneity::Level2Slope { .. } => EndoKind::Level2Slope,
                    });
                    sim.endo = match kind {
                        EndoKind::None => Endogeneity::None,
                        EndoKind::Level1 => Endogeneity::Level1 { rho_e: strength, set },
                        EndoKind::Level2Intercept => Endogeneity::Level2Intercept { rho_b: strength, set },
                        EndoKind::Level2Slope => Endogeneity::Level2Slope { rho_b: strength, set },
                    };
                }
                if let Some(e) = &a.estimators {
                    cfg.estimators = e.clone();
                }
                if let Some(p) = &a.penalty {
                    cfg.study.penalty = p.clone();
                }
                if let Some(l) = a.lambda {
                    cfg.study.pfgmm_lambda = LambdaPolicy::Fixed { value: l };
                    cfg.study.pls_lambda = LambdaPolicy::Fixed { value: l };
                }
            }
            Some(Command::Fit(a)) => {
                cfg.mode = Mode::Fit;
                if let Some(d) = &a.data {
                    cfg.data = Some(d.clone());
                }
                if let Some(e) = a.estimator {
                    cfg.estimators = vec![e];
                }
                if let Some(p) = &a.penalty {
                    cfg.study.penalty = p.clone();
                }
                let policy = match (a.lambda, &a.exbic, &a.bic) {
                    (Some(v), _, _) => Some(LambdaPolicy::Fixed { value: v }),
                    (_, Some(g), _) => Some(LambdaPolicy::Exbic { grid: g.clone() }),
                    (_, _, Some(g)) => Some(LambdaPolicy::Bic { grid: g.clone() }),
                    _ => None,
                };
                if let Some(pol) = policy {
                    match cfg.estimators.first() {
                        Some(Estimator::Mple) => cfg.study.mple_lambda = pol,
                        Some(Estimator::Pls) => cfg.study.pls_lambda = pol,
                        _ => cfg.study.pfgmm_lambda = pol,
                    }
                }
                if a.no_se {
                    cfg.study.standard_errors = false;
                }
            }
            Some(Command::Benchmark(a)) => {
                cfg.mode = Mode::Benchmark;
                if a.table.is_some() || a.figure.is_some() {
                    cfg.benchmark.table = a.table;
                    cfg.benchmark.figure = a.figure;
                }
                if let Some(r) = a.reps {
                    cfg.sim.get_or_insert_with(Default::default).reps = r;
                }
            }
            Some(Command::Report(a)) => {
                cfg.mode = Mode::Report;
                if let Some(i) = &a.input {
                    cfg.report.input = Some(i.clone());
                }
            }
        }
        Ok(cfg)
    }
}
