//! Run configuration: a TOML file, optionally overridden by flags.
//!
//! Grammar (every key optional; `manifest.json` echoes the resolved values):
//!
//! ```toml
//! mode = "simulate"            # simulate | fit | benchmark | report
//! seed = 1
//! threads = 0                  # 0: flag, then PFGMM_THREADS, then all cores
//! output = "out"
//! estimators = ["pfgmm", "pls"]
//! data = "user.csv"            # fit only; excludes [sim]
//!
//! [sim]                        # simulate / benchmark only
//! reps = 100
//! p = 300
//! [sim.endo]
//! kind = "level1"              # none | level1 | level2_intercept | level2_slope
//! rho_e = 6.0
//! set = "set1"                 # set1..set4 or { custom = [6, 7] }
//!
//! [study]
//! penalty = "scad:lambda=0.1,a=3.7"
//! [study.pfgmm_lambda]
//! policy = "fixed"             # fixed | bic | exbic
//! value = 0.1
//!
//! [benchmark]
//! table = 1                    # or figure = 1..4
//!
//! [report]
//! input = "out"
//! ```

use crate::error::{CliError, CliResult};
use pfgmm_core::sim::{Estimator, SimConfig, StudySettings};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Simulate,
    Fit,
    Benchmark,
    Report,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Fit => "fit",
            Mode::Benchmark => "benchmark",
            Mode::Report => "report",
        }
    }
}

/// What `benchmark` reproduces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub table: Option<u8>,
    pub figure: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSpec {
    /// Run directory holding `manifest.json`; defaults to `output`.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub threads: usize,
    pub output: PathBuf,
    pub estimators: Vec<Estimator>,
    pub data: Option<PathBuf>,
    pub sim: Option<SimConfig>,
    pub study: StudySettings,
    pub benchmark: BenchmarkSpec,
    pub report: ReportSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Simulate,
            seed: 1,
            threads: 0,
            output: PathBuf::from("out"),
            estimators: vec![Estimator::Pfgmm],
            data: None,
            sim: None,
            study: StudySettings::default(),
            benchmark: BenchmarkSpec::default(),
            report: ReportSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills every implicit value so that the manifest records the full
    /// effective configuration, then validates it.
    pub fn resolve(mut self, env_threads: Option<&str>) -> CliResult<Self> {
        if self.threads == 0 {
            self.threads = match env_threads {
                Some(v) => v
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&t| t > 0)
                    .ok_or_else(|| CliError::Config(format!("PFGMM_THREADS must be a positive integer, got `{v}`")))?,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
        }
        match self.mode {
            Mode::Simulate | Mode::Benchmark => {
                let mut sim = self.sim.take().unwrap_or_default();
                sim.seed = self.seed;
                self.sim = Some(sim);
            }
            Mode::Fit | Mode::Report => {}
        }
        if self.mode == Mode::Report && self.report.input.is_none() {
            self.report.input = Some(self.output.clone());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        let cfg = |m: String| Err(CliError::Config(m));
        if self.threads == 0 {
            return cfg("threads must be positive".into());
        }
        for pol in [&self.study.mple_lambda, &self.study.pls_lambda, &self.study.pfgmm_lambda] {
            pol.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.study
            .penalty
            .parse::<pfgmm_core::Penalty>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match self.mode {
            Mode::Simulate | Mode::Benchmark => {
                if self.data.is_some() {
                    return cfg(format!("`data` cannot be combined with mode {}", self.mode.name()));
                }
                let sim = self.sim.as_ref().expect("resolved");
                sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
                if sim.reps == 0 {
                    return cfg("reps must be positive".into());
                }
            }
            Mode::Fit => {
                if self.data.is_none() {
                    return cfg("fit needs `data`".into());
                }
                if self.sim.is_some() {
                    return cfg("fit takes `data` or `[sim]`, not both".into());
                }
                if self.estimators.len() != 1 {
                    return cfg("fit takes exactly one estimator".into());
                }
            }
            Mode::Report => {}
        }
        if matches!(self.mode, Mode::Simulate | Mode::Fit) && self.estimators.is_empty() {
            return cfg("no estimators requested".into());
        }
        if self.mode == Mode::Benchmark {
            match (self.benchmark.table, self.benchmark.figure) {
                (Some(1..=3), None) | (None, Some(1..=4)) => {}
                (Some(_), Some(_)) => return cfg("choose either a table or a figure".into()),
                (None, None) => return cfg("benchmark needs `table` (1-3) or `figure` (1-4)".into()),
                _ => return cfg("table must be 1-3 and figure 1-4".into()),
            }
        }
        Ok(())
    }

    pub fn sim(&self) -> &SimConfig {
        self.sim.as_ref().expect("simulation settings resolved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
            mode = "simulate"
            seed = 7
            threads = 2
            estimators = ["pfgmm", "pfgmm+2mle"]
            [sim]
            reps = 3
            [sim.endo]
            kind = "level1"
            rho_e = 6.0
            set = "set4"
            [study.pfgmm_lambda]
            policy = "exbic"
            grid = [0.05, 0.1, 0.2]
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap().resolve(None).unwrap();
        assert_eq!(cfg.sim().seed, 7);
        assert_eq!(cfg.estimators, vec![Estimator::Pfgmm, Estimator::Pfgmm2Mle]);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        let unsorted = "[study.pfgmm_lambda]\npolicy = \"exbic\"\ngrid = [0.2, 0.1]";
        let err = RunConfig::from_toml_str(unsorted).unwrap().resolve(Some("1")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let both = RunConfig { mode: Mode::Simulate, data: Some("x.csv".into()), ..RunConfig::default() };
        assert!(both.resolve(Some("1")).is_err());
        let fit = RunConfig { mode: Mode::Fit, ..RunConfig::default() };
        assert!(fit.resolve(Some("1")).is_err());
        assert!(RunConfig::default().resolve(Some("zero")).is_err());
    }

    #[test]
    fn thread_fallback_order() {
        let cfg = RunConfig::default().resolve(Some("3")).unwrap();
        assert_eq!(cfg.threads, 3);
        let cfg = RunConfig { threads: 2, ..RunConfig::default() }.resolve(Some("3")).unwrap();
        assert_eq!(cfg.threads, 2);
    }
}
