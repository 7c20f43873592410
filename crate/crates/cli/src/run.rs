use crate::bench;
use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, MANIFEST_FILE};
use pfgmm_core::sim::{fit_estimator, run_study, write_aggregate_csv, write_rep_csv, StudyOutput};
use pfgmm_core::Dataset;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// Set when every replication failed; artifacts are still written.
    pub failure: Option<CliError>,
}

/// Executes a resolved configuration and writes its artifacts and manifest
/// into `config.output`.
pub fn run(config: &RunConfig) -> CliResult<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(&config.output)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let (outputs, failure) = pool.install(|| match config.mode {
        Mode::Simulate => simulate(config),
        Mode::Fit => fit(config).map(|o| (o, None)),
        Mode::Benchmark => benchmark(config),
        Mode::Report => report(config).map(|o| (o, None)),
    })?;
    let manifest = Manifest::new(config, start.elapsed().as_secs_f64(), outputs);
    if config.mode != Mode::Report {
        manifest.write(&config.output)?;
    }
    Ok(RunOutcome { manifest, failure })
}

fn all_failed(outputs: &[StudyOutput]) -> Option<CliError> {
    let ok: usize = outputs.iter().map(|o| o.reps.len()).sum();
    let failed: usize = outputs.iter().map(|o| o.failures.len()).sum();
    (ok == 0 && failed > 0).then(|| {
        let first = outputs.iter().flat_map(|o| o.failures.first()).next().map_or(String::new(), |f| f.message.clone());
        CliError::Numerical(format!("all {failed} fits failed; first: {first}"))
    })
}

fn simulate(config: &RunConfig) -> CliResult<(Vec<String>, Option<CliError>)> {
    let sim = config.sim();
    let out = run_study(sim, &config.estimators, &config.study).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = &config.output;
    let file = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_rep_csv(&out, sim.beta0.len(), sim.q, file("reps.csv")?).map_err(CliError::from_fit)?;
    write_aggregate_csv(&out, file("summary.csv")?).map_err(CliError::from_fit)?;
    let mut w = file("failures.csv")?;
    writeln!(w, "rep,estimator,message")?;
    for f in &out.failures {
        writeln!(w, "{},{},\"{}\"", f.rep, f.estimator.name(), f.message.replace(['"', '\n'], " "))?;
    }
    w.flush()?;
    let failure = all_failed(std::slice::from_ref(&out));
    Ok((vec!["reps.csv".into(), "summary.csv".into(), "failures.csv".into()], failure))
}

fn benchmark(config: &RunConfig) -> CliResult<(Vec<String>, Option<CliError>)> {
    let base = config.sim();
    let (scenarios, estimators) = match (config.benchmark.table, config.benchmark.figure) {
        (Some(t), _) => (bench::table_scenarios(t, base), bench::table_estimators(t)),
        (_, Some(f)) => (bench::figure_scenarios(f, base), bench::figure_estimators()),
        _ => return Err(CliError::Config("benchmark needs a table or a figure".into())),
    };
    let outputs = bench::run_scenarios(&scenarios, &estimators, &config.study)?;
    let files = match (config.benchmark.table, config.benchmark.figure) {
        (Some(t), _) => bench::write_table(&config.output, t, &scenarios, &outputs)?,
        (_, Some(f)) => bench::write_figure(&config.output, f, &scenarios, &outputs)?,
        _ => unreachable!(),
    };
    Ok((files, all_failed(&outputs)))
}

#[derive(Debug, Serialize)]
struct Criterion {
    name: &'static str,
    value: f64,
}

#[derive(Debug, Serialize)]
struct StandardError {
    /// 1-based coefficient index.
    index: usize,
    estimate: f64,
    se: f64,
}

#[derive(Debug, Serialize)]
struct Eta {
    theta: Vec<f64>,
    sigma2: f64,
}

#[derive(Debug, Serialize)]
struct FitReport {
    estimator: String,
    n: usize,
    p: usize,
    q: usize,
    groups: usize,
    lambda: f64,
    converged: bool,
    criterion: Option<Criterion>,
    /// 1-based indices of the nonzero coefficients.
    active_set: Vec<usize>,
    beta_hat: Vec<f64>,
    eta: Eta,
    standard_errors: Option<Vec<StandardError>>,
}

pub const FIT_FILE: &str = "fit.json";

fn fit(config: &RunConfig) -> CliResult<Vec<String>> {
    let path = config.data.as_ref().expect("validated");
    let ds = Dataset::from_csv_path(path).map_err(CliError::from_data)?;
    let estimator = config.estimators[0];
    let res = fit_estimator(&ds, estimator, &config.study).map_err(CliError::from_fit)?;
    let criterion = res.criterion.map(|value| Criterion {
        name: match estimator {
            pfgmm_core::sim::Estimator::Pfgmm => "exbic",
            _ => "bic",
        },
        value,
    });
    let report = FitReport {
        estimator: estimator.name().into(),
        n: ds.n(),
        p: ds.p(),
        q: ds.q(),
        groups: ds.num_groups(),
        lambda: res.lambda,
        converged: res.converged,
        criterion,
        active_set: res.active_set.indices().iter().map(|j| j + 1).collect(),
        beta_hat: res.beta.iter().copied().collect(),
        eta: Eta { theta: res.theta.iter().copied().collect(), sigma2: res.sigma2 },
        standard_errors: res.standard_errors.map(|v| {
            v.into_iter().map(|(j, se)| StandardError { index: j + 1, estimate: res.beta[j], se }).collect()
        }),
    };
    std::fs::write(config.output.join(FIT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(vec![FIT_FILE.into()])
}

pub const REPORT_FILE: &str = "report.md";

/// Renders the CSV outputs of an earlier run as markdown tables.
fn report(config: &RunConfig) -> CliResult<Vec<String>> {
    let input = config.report.input.as_ref().unwrap_or(&config.output);
    let manifest = Manifest::read(&input.join(MANIFEST_FILE))?;
    let mut md = String::new();
    md.push_str(&format!("# Run report: {}\n\n", manifest.mode));
    md.push_str(&format!(
        "- version {} (core {})\n- seed {}\n- threads {}\n- wall time {:.1} s\n\n",
        manifest.version, manifest.core_version, manifest.seed, manifest.threads, manifest.wall_time_seconds
    ));
    for name in &manifest.outputs {
        let path = input.join(name);
        if name.ends_with(".csv") {
            md.push_str(&format!("## {name}\n\n"));
            md.push_str(&csv_to_markdown(&path)?);
            md.push('\n');
        } else {
            md.push_str(&format!("## {name}\n\nSee `{}`.\n\n", path.display()));
        }
    }
    std::fs::write(config.output.join(REPORT_FILE), md)?;
    Ok(vec![REPORT_FILE.into()])
}

fn csv_to_markdown(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return Ok("(empty)\n".into()) };
    let ncol = header.split(',').count();
    let mut md = format!("| {} |\n|{}\n", header.split(',').collect::<Vec<_>>().join(" | "), "---|".repeat(ncol));
    let mut rows = 0;
    for line in lines {
        let cells: Vec<String> = line
            .split(',')
            .map(|c| match c.parse::<f64>() {
                Ok(v) if c.contains('.') => format!("{v:.3}"),
                _ => c.to_string(),
            })
            .collect();
        md.push_str(&format!("| {} |\n", cells.join(" | ")));
        rows += 1;
    }
    if rows == 0 {
        md.push_str("(no rows)\n");
    }
    Ok(md)
}
