//! Experiment spec files (TOML) and their validation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use srsi::gp::mle::MleOptions;
use srsi::input_model::{parse_counts, parse_observations, DivergenceKind, ObservationSet};
use srsi::procedure::{RunConfig, Variant, XhatRule};
use srsi::simulators::ambulance::{counts_to_observations, parse_frequency_map};
use srsi::simulators::{
    generate_real_world_data, synthetic_frequency_map, AmbulanceConfig, AmbulanceProblem, DataRecipe, Mm1kConfig,
    Mm1kProblem, SimulationProblem,
};

/// A problem in the spec: a message plus, when known, the line it refers to.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path.display(), l, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub reclassify: ReclassifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSection {
    Mm1k(Mm1kConfig),
    Ambulance(AmbulanceConfig),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Draw synthetic real-world data with the run seed.
    #[default]
    Generate,
    /// Read observations from `files`.
    Files,
    /// Use the frequency map itself as the observed calls (ambulance only).
    Map,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    #[default]
    Observations,
    Counts,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: Option<DataSource>,
    /// Sample size per source when generating queue data.
    pub m: Option<usize>,
    /// Number of calls when generating ambulance data.
    pub calls: Option<usize>,
    #[serde(default)]
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub format: FileFormat,
    pub frequency_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum XhatSpec {
    Rule(String),
    Label(i64),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSection {
    pub restarts: Option<usize>,
    pub per_dimension_lambda: Option<bool>,
    pub max_evaluations: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub variant: Option<String>,
    pub seed: Option<u64>,
    pub models: Option<usize>,
    pub n0: Option<usize>,
    pub initial_reps: Option<usize>,
    pub reps: Option<usize>,
    pub reps_schedule: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub xhat: Option<XhatSpec>,
    pub map_replications: Option<usize>,
    pub budget: Option<u64>,
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub checkpoints: Vec<u64>,
    pub kappa: Option<f64>,
    pub divergence: Option<DivergenceKind>,
    #[serde(default)]
    pub parametric_sources: Vec<usize>,
    pub refresh_every: Option<usize>,
    #[serde(default)]
    pub mle: MleSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub runs: Option<u64>,
    pub first_seed: Option<u64>,
    pub variants: Option<Vec<String>>,
    #[serde(default)]
    pub budgets: Vec<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReclassifySection {
    pub alphas: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A parsed spec together with its source text, for diagnostics.
pub struct Spec {
    pub path: PathBuf,
    pub text: String,
    pub file: SpecFile,
}

pub enum Problem {
    Mm1k(Mm1kProblem),
    Ambulance(AmbulanceProblem),
}

impl Problem {
    pub fn as_dyn(&self) -> &dyn SimulationProblem {
        match self {
            Problem::Mm1k(p) => p,
            Problem::Ambulance(p) => p,
        }
    }
}

pub const DEFAULT_ALPHAS: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.25];
pub const DEFAULT_DELTAS: [f64; 4] = [0.0, 0.5, 1.0, 1.5];
pub const DEFAULT_CALLS: usize = 331;
pub const DEFAULT_SAMPLE_SIZE: usize = 100;
pub const DEFAULT_BENCHMARK_RUNS: u64 = 20;

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Spec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: format!("cannot read spec: {e}"),
        })?;
        let file: SpecFile = toml::from_str(&text).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of_offset(&text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let spec = Spec {
            path: path.to_path_buf(),
            text,
            file,
        };
        spec.check_problem()?;
        Ok(spec)
    }

    /// Error pointing at the first line that assigns `key`.
    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let line = self.text.lines().position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        });
        ConfigError {
            path: self.path.clone(),
            line: line.map(|l| l + 1),
            message: message.into(),
        }
    }

    fn check_problem(&self) -> Result<(), ConfigError> {
        let result = match &self.file.problem {
            ProblemSection::Mm1k(c) => c.validate(),
            ProblemSection::Ambulance(c) => c.validate(),
        };
        result.map_err(|e| self.error("kind", e.to_string()))
    }

    /// Paths in the spec are relative to the spec file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    fn read(&self, key: &str, p: &Path) -> Result<String, ConfigError> {
        let full = self.resolve(p);
        fs::read_to_string(&full).map_err(|e| self.error(key, format!("cannot read data file {}: {e}", full.display())))
    }

    pub fn frequency_map(&self) -> Result<Vec<usize>, ConfigError> {
        let cells = match &self.file.problem {
            ProblemSection::Ambulance(c) => c.neighborhoods(),
            ProblemSection::Mm1k(_) => return Err(self.error("frequency_map", "frequency maps apply to the ambulance problem")),
        };
        match &self.file.data.frequency_map {
            Some(p) => {
                let text = self.read("frequency_map", p)?;
                parse_frequency_map(&text, cells).map_err(|e| self.error("frequency_map", e.to_string()))
            }
            None if cells == 36 => Ok(synthetic_frequency_map()),
            None => Err(self.error(
                "grid_side",
                "the built-in frequency map is 6x6; supply data.frequency_map for other grids",
            )),
        }
    }

    /// Checks that every referenced file exists, before any simulation.
    pub fn check_files(&self) -> Result<(), ConfigError> {
        let data = &self.file.data;
        let source = self.data_source();
        if source == DataSource::Files {
            let want = match self.file.problem {
                ProblemSection::Mm1k(_) => 2,
                ProblemSection::Ambulance(_) => 1,
            };
            if data.files.len() != want {
                return Err(self.error("files", format!("expected {want} data file(s), got {}", data.files.len())));
            }
            for f in &data.files {
                let full = self.resolve(f);
                if !full.is_file() {
                    return Err(self.error("files", format!("data file not found: {}", full.display())));
                }
            }
        }
        if let Some(f) = &data.frequency_map {
            let full = self.resolve(f);
            if !full.is_file() {
                return Err(self.error("frequency_map", format!("frequency map not found: {}", full.display())));
            }
        }
        if source == DataSource::Map && matches!(self.file.problem, ProblemSection::Mm1k(_)) {
            return Err(self.error("source", "source = \"map\" applies to the ambulance problem"));
        }
        Ok(())
    }

    pub fn data_source(&self) -> DataSource {
        self.file.data.source.unwrap_or(match self.file.problem {
            ProblemSection::Mm1k(_) => DataSource::Generate,
            ProblemSection::Ambulance(_) => DataSource::Map,
        })
    }

    pub fn data_recipe(&self) -> Result<DataRecipe, ConfigError> {
        let data = &self.file.data;
        match &self.file.problem {
            ProblemSection::Mm1k(c) => {
                let m = data.m.unwrap_or(DEFAULT_SAMPLE_SIZE);
                if m < 1 {
                    return Err(self.error("m", "m must be at least 1"));
                }
                Ok(DataRecipe::Mm1k { config: c.clone(), m })
            }
            ProblemSection::Ambulance(_) => {
                let calls = data.calls.unwrap_or(DEFAULT_CALLS);
                if calls < 1 {
                    return Err(self.error("calls", "calls must be at least 1"));
                }
                Ok(DataRecipe::Ambulance {
                    frequency_map: self.frequency_map()?,
                    calls,
                })
            }
        }
    }

    /// Observations for the given run seed.
    pub fn observations(&self, seed: u64) -> Result<Vec<ObservationSet>, ConfigError> {
        let data = &self.file.data;
        match self.data_source() {
            DataSource::Generate => {
                let recipe = self.data_recipe()?;
                generate_real_world_data(&recipe, seed).map_err(|e| self.error("source", e.to_string()))
            }
            DataSource::Map => {
                let counts = self.frequency_map()?;
                Ok(vec![counts_to_observations(&counts).map_err(|e| self.error("frequency_map", e.to_string()))?])
            }
            DataSource::Files => data
                .files
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let text = self.read("files", f)?;
                    let parsed = match data.format {
                        FileFormat::Observations => parse_observations(i, &text),
                        FileFormat::Counts => parse_counts(i, &text),
                    };
                    parsed.map_err(|e| {
                        let full = self.resolve(f);
                        ConfigError {
                            path: full,
                            line: match &e {
                                srsi::input_model::InputError::Parse { line, .. } => Some(*line),
                                _ => None,
                            },
                            message: e.to_string(),
                        }
                    })
                })
                .collect(),
        }
    }

    pub fn problem(&self, seed: u64) -> Result<Problem, ConfigError> {
        let data = self.observations(seed)?;
        match &self.file.problem {
            ProblemSection::Mm1k(c) => Mm1kProblem::new(c.clone(), data)
                .map(Problem::Mm1k)
                .map_err(|e| self.error("files", e.to_string())),
            ProblemSection::Ambulance(c) => {
                let set = data.into_iter().next().ok_or_else(|| self.error("files", "no location data"))?;
                AmbulanceProblem::new(c.clone(), set)
                    .map(Problem::Ambulance)
                    .map_err(|e| self.error("files", e.to_string()))
            }
        }
    }

    fn labels(&self) -> Vec<String> {
        match &self.file.problem {
            ProblemSection::Mm1k(c) => c.capacities().iter().map(|k| k.to_string()).collect(),
            ProblemSection::Ambulance(c) => (1..=c.neighborhoods()).map(|n| n.to_string()).collect(),
        }
    }

    pub fn solution_index(&self, key: &str, label: &str) -> Result<usize, ConfigError> {
        self.labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| self.error(key, format!("no solution labelled {label}")))
    }

    /// Run settings with problem-specific defaults filled in. CLI overrides
    /// are applied by the caller.
    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let r = &self.file.run;
        let base = match self.file.problem {
            ProblemSection::Mm1k(_) => RunConfig::default(),
            ProblemSection::Ambulance(_) => RunConfig {
                models: 150,
                n0: 108,
                initial_reps: 2,
                reps: 2,
                alpha: 0.1,
                delta: 1.0,
                max_iterations: Some(100),
                ..RunConfig::default()
            },
        };
        let variant = match &r.variant {
            Some(v) => Variant::parse(v)
                .ok_or_else(|| self.error("variant", format!("unknown variant {v:?} (srsi, srsi-m, srsi-v, nmc)")))?,
            None => base.variant,
        };
        let map_reps = r.map_replications.unwrap_or(100);
        let xhat = match &r.xhat {
            None => XhatRule::MapOptimum { replications: map_reps },
            Some(XhatSpec::Rule(s)) if s == "map-optimum" => XhatRule::MapOptimum { replications: map_reps },
            Some(XhatSpec::Rule(s)) => XhatRule::Explicit(self.solution_index("xhat", s)?),
            Some(XhatSpec::Label(l)) => XhatRule::Explicit(self.solution_index("xhat", &l.to_string())?),
        };
        let defaults = MleOptions::default();
        let config = RunConfig {
            variant,
            seed: r.seed.unwrap_or(base.seed),
            models: r.models.unwrap_or(base.models),
            n0: r.n0.unwrap_or(base.n0),
            initial_reps: r.initial_reps.unwrap_or(base.initial_reps),
            reps: r.reps.unwrap_or(base.reps),
            reps_schedule: r.reps_schedule.clone(),
            alpha: r.alpha.unwrap_or(base.alpha),
            delta: r.delta.unwrap_or(base.delta),
            xhat,
            // an explicit budget alone stops on budget
            max_iterations: match (r.max_iterations, r.budget) {
                (Some(m), _) => Some(m),
                (None, Some(_)) => None,
                (None, None) => base.max_iterations,
            },
            budget: r.budget,
            checkpoints: r.checkpoints.clone(),
            kappa: r.kappa.unwrap_or(base.kappa),
            divergence: r.divergence.unwrap_or(base.divergence),
            parametric_sources: r.parametric_sources.clone(),
            mle: MleOptions {
                restarts: r.mle.restarts.unwrap_or(defaults.restarts),
                per_dimension_lambda: r.mle.per_dimension_lambda.unwrap_or(defaults.per_dimension_lambda),
                max_evaluations: r.mle.max_evaluations.unwrap_or(defaults.max_evaluations),
                ..defaults
            },
            refresh_every: r.refresh_every.unwrap_or(base.refresh_every),
        };
        Ok(config)
    }

    /// Maps a validation failure onto the key it concerns.
    pub fn validate_run(&self, config: &RunConfig) -> Result<(), ConfigError> {
        config.validate().map_err(|e| {
            let msg = e.to_string();
            let key = [
                "alpha",
                "delta",
                "n0",
                "initial_reps",
                "reps",
                "budget",
                "models",
                "kappa",
                "max_iterations",
                "map_replications",
                "parametric",
            ]
            .into_iter()
            .find(|k| msg.contains(k))
            .unwrap_or("run");
            let key = if key == "parametric" { "parametric_sources" } else { key };
            self.error(key, msg)
        })?;
        let nx = match &self.file.problem {
            ProblemSection::Mm1k(c) => c.capacities().len(),
            ProblemSection::Ambulance(c) => c.neighborhoods(),
        };
        if config.variant != Variant::Nmc && config.n0 > nx * config.models {
            return Err(self.error("n0", format!("n0 = {} exceeds |X| * B = {}", config.n0, nx * config.models)));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.file.output.dir.as_ref().map_or_else(|| PathBuf::from("srsi-out"), |d| self.resolve(d))
    }
}
