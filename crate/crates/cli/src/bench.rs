//! Scenario grids behind `benchmark --table` and `benchmark --figure`.

use crate::error::{CliError, CliResult};
use crate::svg::{self, Panel, Series};
use pfgmm_core::sim::{run_study, EndoSet, Endogeneity, Estimator, RepSummary, SimConfig, StudyOutput, StudySettings};
use std::io::Write;
use std::path::Path;

/// Endogeneity strength used for every table scenario.
pub const TABLE_RHO: f64 = 6.0;
/// Endogeneity strengths on the figure x-axis.
pub const FIGURE_LEVELS: [f64; 5] = [0.0, 0.2, 0.5, 1.5, 6.0];

const SETS: [EndoSet; 4] = [EndoSet::Set1, EndoSet::Set2, EndoSet::Set3, EndoSet::Set4];

#[derive(Debug, Clone)]
pub struct Scenario {
    /// `none`, `level1`, `level2_intercept` or `level2_slope`.
    pub block: &'static str,
    /// `None` or `Set k`.
    pub endogenous: String,
    /// x-axis value for figures.
    pub level: f64,
    pub sim: SimConfig,
}

fn with_endo(base: &SimConfig, endo: Endogeneity) -> SimConfig {
    SimConfig { endo, ..base.clone() }
}

fn set_label(k: usize) -> String {
    format!("Set {}", k + 1)
}

fn endo_for(block: &str, level: f64, set: EndoSet) -> Endogeneity {
    match block {
        "level1" => Endogeneity::Level1 { rho_e: level, set },
        "level2_intercept" => Endogeneity::Level2Intercept { rho_b: level, set },
        "level2_slope" => Endogeneity::Level2Slope { rho_b: level, set },
        _ => Endogeneity::None,
    }
}

pub fn table_scenarios(table: u8, base: &SimConfig) -> Vec<Scenario> {
    let none = Scenario { block: "none", endogenous: "None".into(), level: 0.0, sim: with_endo(base, Endogeneity::None) };
    let sets = |block: &'static str| {
        SETS.iter().enumerate().map(move |(k, set)| Scenario {
            block,
            endogenous: set_label(k),
            level: TABLE_RHO,
            sim: with_endo(base, endo_for(block, TABLE_RHO, set.clone())),
        })
    };
    match table {
        1 => std::iter::once(none)
            .chain(sets("level1"))
            .chain(sets("level2_intercept"))
            .chain(sets("level2_slope"))
            .collect(),
        2 => vec![none],
        3 => sets("level1").collect(),
        _ => vec![],
    }
}

pub fn table_estimators(table: u8) -> Vec<Estimator> {
    match table {
        1 => vec![Estimator::Mple],
        _ => vec![Estimator::Pls, Estimator::Pfgmm, Estimator::Pfgmm2Mle, Estimator::Pfgmm2Reml],
    }
}

/// Figure 1: level-1, correlated covariates; 2: level-1, independent
/// covariates; 3: level-2 intercept; 4: level-2 slope.
pub fn figure_scenarios(figure: u8, base: &SimConfig) -> Vec<Scenario> {
    let (block, rho) = match figure {
        1 => ("level1", 0.5),
        2 => ("level1", 0.0),
        3 => ("level2_intercept", 0.5),
        4 => ("level2_slope", 0.5),
        _ => return vec![],
    };
    let mut out = Vec::new();
    for (k, set) in SETS.iter().enumerate() {
        for &level in &FIGURE_LEVELS {
            out.push(Scenario {
                block,
                endogenous: set_label(k),
                level,
                sim: SimConfig { rho, ..with_endo(base, endo_for(block, level, set.clone())) },
            });
        }
    }
    out
}

pub fn figure_estimators() -> Vec<Estimator> {
    vec![Estimator::Pfgmm, Estimator::Pls]
}

pub fn figure_title(figure: u8) -> &'static str {
    match figure {
        1 => "Estimated active set size, level-1 endogeneity, correlated covariates",
        2 => "Estimated active set size, level-1 endogeneity, independent covariates",
        3 => "Estimated active set size, endogenous random intercept",
        _ => "Estimated active set size, endogenous random slope",
    }
}

/// Runs every scenario; a scenario whose configuration is invalid aborts
/// the benchmark.
pub fn run_scenarios(
    scenarios: &[Scenario],
    estimators: &[Estimator],
    st: &StudySettings,
) -> CliResult<Vec<StudyOutput>> {
    scenarios
        .iter()
        .map(|sc| run_study(&sc.sim, estimators, st).map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

fn f6(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// Mean, SD and MSE against `truth` (`None` leaves the MSE blank).
fn stats(values: &[f64], truth: Option<f64>) -> [String; 3] {
    if values.is_empty() {
        return [String::new(), String::new(), String::new()];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let mse = truth.map(|t| values.iter().map(|v| (v - t).powi(2)).sum::<f64>() / n);
    [f6(mean), f6(sd), mse.map_or(String::new(), f6)]
}

/// One table column: a per-rep value and its true value, if any.
type Column<'a> = (String, Box<dyn Fn(&RepSummary) -> f64 + 'a>, Option<f64>);

fn table_columns(table: u8, sim: &SimConfig) -> Vec<Column<'static>> {
    let mut cols: Vec<Column<'static>> = Vec::new();
    if table == 1 {
        cols.push(("S_size".into(), Box::new(|r| r.active_size as f64), None));
        cols.push(("TP".into(), Box::new(|r| r.true_positives as f64), None));
        cols.push(("PE".into(), Box::new(|r| r.pe), None));
    }
    for (j, &b) in sim.beta0.iter().enumerate() {
        cols.push((format!("beta_{}", j + 1), Box::new(move |r| r.beta_s[j]), Some(b)));
    }
    cols.push(("beta_N".into(), Box::new(|r| r.beta_n), Some(0.0)));
    let sigma = ("sigma2".to_string(), Box::new(|r: &RepSummary| r.sigma2) as Box<dyn Fn(&RepSummary) -> f64>, Some(sim.sigma2_0));
    let thetas: Vec<Column<'static>> = sim
        .theta0
        .iter()
        .enumerate()
        .map(|(k, &t)| (format!("theta{}", k + 1), Box::new(move |r: &RepSummary| r.theta[k]) as Box<dyn Fn(&RepSummary) -> f64>, Some(t)))
        .collect();
    if table == 1 {
        cols.push(sigma);
        cols.extend(thetas);
    } else {
        cols.extend(thetas);
        cols.push(sigma);
    }
    cols
}

/// Writes `table{k}.csv` (Mean/SD/MSE rows per scenario and method),
/// `table{k}_reps.csv` and `table{k}_failures.csv`.
pub fn write_table(dir: &Path, table: u8, scenarios: &[Scenario], outputs: &[StudyOutput]) -> CliResult<Vec<String>> {
    let Some(first) = scenarios.first() else { return Ok(vec![]) };
    let cols = table_columns(table, &first.sim);
    let name = format!("table{table}.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
    let mut header = vec!["block", "endogenous", "method", "stat"].into_iter().map(String::from).collect::<Vec<_>>();
    header.extend(cols.iter().map(|c| c.0.clone()));
    writeln!(w, "{}", header.join(","))?;
    for (sc, out) in scenarios.iter().zip(outputs) {
        for agg in &out.aggregates {
            let reps: Vec<&RepSummary> = out.reps.iter().filter(|r| r.estimator == agg.estimator).collect();
            let cells: Vec<[String; 3]> = cols
                .iter()
                .map(|(_, f, truth)| stats(&reps.iter().map(|r| f(r)).collect::<Vec<_>>(), *truth))
                .collect();
            for (s, stat) in ["Mean", "SD", "MSE"].iter().enumerate() {
                let mut row = vec![sc.block.to_string(), sc.endogenous.clone(), agg.estimator.name().to_string(), stat.to_string()];
                row.extend(cells.iter().map(|c| c[s].clone()));
                writeln!(w, "{}", row.join(","))?;
            }
        }
    }
    w.flush()?;
    let reps_name = format!("table{table}_reps.csv");
    write_reps(&dir.join(&reps_name), scenarios, outputs)?;
    let fail_name = format!("table{table}_failures.csv");
    write_failures(&dir.join(&fail_name), scenarios, outputs)?;
    Ok(vec![name, reps_name, fail_name])
}

fn write_reps(path: &Path, scenarios: &[Scenario], outputs: &[StudyOutput]) -> CliResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let Some(first) = scenarios.first() else { return Ok(()) };
    let s = first.sim.beta0.len();
    let q = first.sim.q;
    let mut header = ["block", "endogenous", "level", "rep", "estimator", "S_size", "TP", "PE"].map(String::from).to_vec();
    header.extend((1..=s).map(|j| format!("beta_{j}")));
    header.extend(["beta_N".to_string(), "sigma2".into()]);
    header.extend((1..=q).map(|k| format!("theta{k}")));
    writeln!(w, "{}", header.join(","))?;
    for (sc, out) in scenarios.iter().zip(outputs) {
        for r in &out.reps {
            let mut row = vec![sc.block.to_string(), sc.endogenous.clone(), f6(sc.level), r.rep.to_string(), r.estimator.name().into()];
            row.extend([r.active_size.to_string(), r.true_positives.to_string(), f6(r.pe)]);
            row.extend(r.beta_s.iter().map(|v| f6(*v)));
            row.extend([f6(r.beta_n), f6(r.sigma2)]);
            row.extend(r.theta.iter().map(|v| f6(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_failures(path: &Path, scenarios: &[Scenario], outputs: &[StudyOutput]) -> CliResult<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "block,endogenous,level,rep,estimator,message")?;
    for (sc, out) in scenarios.iter().zip(outputs) {
        for f in &out.failures {
            let msg = f.message.replace(['"', '\n'], " ");
            writeln!(w, "{},{},{},{},{},\"{}\"", sc.block, sc.endogenous, f6(sc.level), f.rep, f.estimator.name(), msg)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `figure{k}.csv` and `figure{k}.svg`: mean active-set size per
/// set, endogeneity level and estimator, with standard errors.
pub fn write_figure(dir: &Path, figure: u8, scenarios: &[Scenario], outputs: &[StudyOutput]) -> CliResult<Vec<String>> {
    let csv_name = format!("figure{figure}.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(&csv_name))?);
    writeln!(w, "endogenous,level,estimator,S_size_mean,S_size_sd,S_size_se,TP_mean,reps_ok,reps_failed")?;
    let mut panels: Vec<Panel> = Vec::new();
    for (sc, out) in scenarios.iter().zip(outputs) {
        if panels.last().is_none_or(|p| p.title != sc.endogenous) {
            panels.push(Panel {
                title: sc.endogenous.clone(),
                categories: vec![],
                series: out.aggregates.iter().map(|a| Series { name: a.estimator.name().to_uppercase(), values: vec![] }).collect(),
            });
        }
        let panel = panels.last_mut().expect("pushed above");
        panel.categories.push(format!("{}", sc.level));
        for (k, a) in out.aggregates.iter().enumerate() {
            let se = if a.reps_ok > 0 { a.active_size.sd / (a.reps_ok as f64).sqrt() } else { f64::NAN };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                sc.endogenous,
                f6(sc.level),
                a.estimator.name(),
                f6(a.active_size.mean),
                f6(a.active_size.sd),
                f6(se),
                f6(a.true_positives.mean),
                a.reps_ok,
                a.reps_failed
            )?;
            panel.series[k].values.push((a.active_size.mean, se));
        }
    }
    w.flush()?;
    let x_label = if figure <= 2 { "rho_e" } else { "rho_b" };
    let svg_name = format!("figure{figure}.svg");
    std::fs::write(dir.join(&svg_name), svg::bar_chart(figure_title(figure), x_label, &panels))?;
    let reps_name = format!("figure{figure}_reps.csv");
    write_reps(&dir.join(&reps_name), scenarios, outputs)?;
    Ok(vec![csv_name, svg_name, reps_name])
}
