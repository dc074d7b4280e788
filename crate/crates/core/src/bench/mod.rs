//! Experiment harness: the approach × situation × command × repetition grid,
//! its metrics, and the reports built from them.

mod report;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{emit_report, read_csv, write_csv, ReportError, ReportFormat, CSV_HEADER};
pub use stats::{mann_whitney, mean, sample_sd, stars, MannWhitney, PMethod, SummaryCell};

use crate::fixtures;
use crate::kb::{load_ontology, OntologyStore};
use crate::llm::{BackendSelector, GenerationParams, Script, Session, ENDPOINT_ENV};
use crate::prompts::{build_system_prompt, LocationOutputSchema, TemplateSet};
use crate::resolve::{Approach, EpisodeLog, EpisodeResult, Planner, Situation};
use crate::simworld::{load_world, PerceptionModel, WorldState};
use crate::verify::VerificationConfig;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("fixture {what}: {message}")]
    Fixture { what: &'static str, message: String },
}

/// Where the model replies come from. Relative paths resolve against the
/// experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Script(PathBuf),
    Endpoint {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_seconds: f64,
    },
}

fn default_timeout() -> f64 {
    120.0
}

/// Optional fixture overrides; missing entries use the built-in household.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixturePaths {
    pub ontology: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub approaches: Vec<Approach>,
    pub situations: Vec<Situation>,
    pub commands: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub detect_prob: f64,
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub fixtures: FixturePaths,
    #[serde(default)]
    pub verification: Option<VerificationConfig>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| BenchError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Invalid(m.to_string()));
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1");
        }
        if self.commands.is_empty() {
            return fail("commands must be non-empty");
        }
        if self.approaches.is_empty() || self.situations.is_empty() {
            return fail("approaches and situations must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.detect_prob) {
            return fail("detect_prob must lie in [0, 1]");
        }
        if let Some(v) = &self.verification {
            v.validate().map_err(BenchError::Invalid)?;
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.approaches.len() * self.situations.len() * self.commands.len() * self.repetitions
    }
}

/// One cell of the grid. `index` is the position in canonical order and
/// seeds the episode's perception stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeKey {
    pub index: usize,
    pub approach: Approach,
    pub situation: Situation,
    pub command: usize,
    pub rep: usize,
}

/// A validated spec with everything loaded.
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub store: OntologyStore,
    pub world: WorldState,
    pub templates: TemplateSet,
    pub schema: LocationOutputSchema,
    pub backend: BackendSelector,
    pub params: GenerationParams,
    system_prompt: String,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("spec", &self.spec)
            .field("backend", &self.backend)
            .finish()
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Experiment {
    /// The built-in household experiment with the scripted backend.
    pub fn builtin() -> Self {
        let spec = ExperimentSpec::from_json(fixtures::EXPERIMENT_JSON).expect("built-in spec");
        Self::assemble(
            spec,
            fixtures::ontology(),
            fixtures::world(),
            fixtures::templates(),
            BackendSelector::Scripted(fixtures::bench_script()),
        )
        .expect("built-in fixtures agree")
    }

    /// Loads a spec file. [`ENDPOINT_ENV`] overrides the spec's backend.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let spec = ExperimentSpec::from_json(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_spec(spec, base)
    }

    pub fn from_spec(spec: ExperimentSpec, base: &Path) -> Result<Self, BenchError> {
        spec.validate()?;
        let resolve = |p: &PathBuf| base.join(p);
        let fixture_err = |what: &'static str| {
            move |e: &dyn fmt::Display| BenchError::Fixture {
                what,
                message: e.to_string(),
            }
        };
        let store = match &spec.fixtures.ontology {
            Some(p) => {
                load_ontology(&read(&resolve(p))?).map_err(|e| fixture_err("ontology")(&e))?
            }
            None => fixtures::ontology(),
        };
        let world = match &spec.fixtures.world {
            Some(p) => load_world(&read(&resolve(p))?).map_err(|e| fixture_err("world")(&e))?,
            None => fixtures::world(),
        };
        let templates = match &spec.fixtures.templates {
            Some(p) => TemplateSet::from_json(&read(&resolve(p))?)
                .map_err(|e| fixture_err("templates")(&e))?,
            None => fixtures::templates(),
        };
        let configured = match &spec.backend {
            None => BackendSelector::Scripted(fixtures::bench_script()),
            Some(BackendSpec::Script(p)) => BackendSelector::Scripted(Arc::new(
                Script::from_json(&read(&resolve(p))?).map_err(|e| fixture_err("script")(&e))?,
            )),
            Some(BackendSpec::Endpoint {
                url,
                timeout_seconds,
            }) => BackendSelector::Http {
                endpoint: url.clone(),
                timeout: Duration::from_secs_f64(*timeout_seconds),
            },
        };
        let backend = match (std::env::var(ENDPOINT_ENV), configured) {
            (Ok(_), BackendSelector::Scripted(script)) => BackendSelector::from_env(script),
            (_, selector) => selector,
        };
        Self::assemble(spec, store, world, templates, backend)
    }

    fn assemble(
        spec: ExperimentSpec,
        store: OntologyStore,
        world: WorldState,
        templates: TemplateSet,
        backend: BackendSelector,
    ) -> Result<Self, BenchError> {
        world
            .check_against(&store)
            .map_err(|e| BenchError::Fixture {
                what: "world",
                message: e.to_string(),
            })?;
        let schema = LocationOutputSchema::default();
        let system_prompt = build_system_prompt(&store, &schema);
        Ok(Self {
            spec,
            store,
            world,
            templates,
            schema,
            backend,
            params: GenerationParams::default(),
            system_prompt,
        })
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn planner(&self) -> Planner<'_> {
        let mut planner = Planner::new(&self.store, &self.templates, &self.schema);
        if let Some(v) = self.spec.verification {
            planner.verification = v;
        }
        planner
    }

    /// All grid cells in canonical order.
    pub fn keys(&self) -> Vec<EpisodeKey> {
        let s = &self.spec;
        let mut keys = Vec::with_capacity(s.grid_size());
        for &approach in &s.approaches {
            for &situation in &s.situations {
                for command in 0..s.commands.len() {
                    for rep in 0..s.repetitions {
                        keys.push(EpisodeKey {
                            index: keys.len(),
                            approach,
                            situation,
                            command,
                            rep,
                        });
                    }
                }
            }
        }
        keys
    }

    /// Runs one isolated episode: fresh session, memory, robot and user.
    pub fn run_episode(&self, key: EpisodeKey) -> EpisodeRun {
        let config = key.approach.config(key.situation);
        let session = if config.use_llm {
            match Session::new(
                self.backend.create(),
                self.system_prompt.clone(),
                self.params,
                config.use_memory,
            ) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("cannot open model session: {e}");
                    None
                }
            }
        } else {
            None
        };
        let mut user = self.world.user();
        let mut perception =
            PerceptionModel::for_episode(self.spec.detect_prob, self.spec.seed, key.index as u64);
        let command = &self.spec.commands[key.command];
        let result = self.planner().run_episode(
            &self.world,
            session,
            &mut user,
            &mut perception,
            config,
            command,
        );
        EpisodeRun {
            key,
            record: MetricsRecord::from_result(key, &result),
            log: result.log,
        }
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub key: EpisodeKey,
    pub record: MetricsRecord,
    pub log: EpisodeLog,
}

impl EpisodeRun {
    /// File name for the episode log.
    pub fn log_name(&self) -> String {
        format!(
            "{:04}_{}_{}_c{}_r{}.ndjson",
            self.key.index,
            self.record.approach.as_key(),
            self.record.situation,
            self.key.command,
            self.key.rep
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub approach: Approach,
    pub situation: Situation,
    pub command: String,
    pub rep: usize,
    pub success: bool,
    pub time_s: f64,
    pub inquiries: usize,
    pub visits: usize,
    pub llm_calls: usize,
    pub llm_time_s: f64,
    pub tokens: usize,
}

impl MetricsRecord {
    pub fn from_result(key: EpisodeKey, r: &EpisodeResult) -> Self {
        Self {
            approach: key.approach,
            situation: key.situation,
            command: r.command.clone(),
            rep: key.rep,
            success: r.success,
            time_s: r.completion_time,
            inquiries: r.inquiries.len(),
            visits: r.visits,
            llm_calls: r.llm_calls,
            llm_time_s: r.llm_time,
            tokens: r.generated_tokens,
        }
    }
}

/// Runs every grid cell. With the `parallel` feature and `parallelism`
/// other than 1, episodes run on a rayon pool of that many threads (0 picks
/// the default). Output is always in canonical order.
pub fn run_grid(experiment: &Experiment, parallelism: usize) -> Vec<EpisodeRun> {
    let keys = experiment.keys();
    #[cfg(feature = "parallel")]
    if parallelism != 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .expect("thread pool");
        return pool.install(|| {
            keys.par_iter()
                .map(|&k| experiment.run_episode(k))
                .collect()
        });
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    keys.iter().map(|&k| experiment.run_episode(k)).collect()
}

pub fn run_experiment(experiment: &Experiment, parallelism: usize) -> Vec<MetricsRecord> {
    run_grid(experiment, parallelism)
        .into_iter()
        .map(|r| r.record)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    SuccessRate,
    /// Completion time over successful episodes only.
    Time,
    Inquiries,
    Visits,
    LlmCalls,
    LlmTime,
    Tokens,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Self::SuccessRate,
        Self::Time,
        Self::Inquiries,
        Self::Visits,
        Self::LlmCalls,
        Self::LlmTime,
        Self::Tokens,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Self::SuccessRate => "Task completion rate",
            Self::Time => "Task completion time (s, successful episodes)",
            Self::Inquiries => "Number of user inquiries",
            Self::Visits => "Number of furniture pieces visited",
            Self::LlmCalls => "Number of inquiries to the model",
            Self::LlmTime => "Model time (s)",
            Self::Tokens => "Generated tokens",
        }
    }

    /// The record's value, or `None` when it does not contribute.
    pub fn value(self, r: &MetricsRecord) -> Option<f64> {
        Some(match self {
            Self::SuccessRate => f64::from(u8::from(r.success)),
            Self::Time if !r.success => return None,
            Self::Time => r.time_s,
            Self::Inquiries => r.inquiries as f64,
            Self::Visits => r.visits as f64,
            Self::LlmCalls => r.llm_calls as f64,
            Self::LlmTime => r.llm_time_s,
            Self::Tokens => r.tokens as f64,
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "success" | "success_rate" => Self::SuccessRate,
            "time" | "time_s" => Self::Time,
            "inquiries" => Self::Inquiries,
            "visits" => Self::Visits,
            "llm_calls" => Self::LlmCalls,
            "llm_time" | "llm_time_s" => Self::LlmTime,
            "tokens" => Self::Tokens,
            other => return Err(format!("unknown metric {other:?}")),
        })
    }
}

pub type Cell = (Approach, Situation);

fn cell_values(records: &[MetricsRecord], cell: Cell, metric: Metric) -> Vec<f64> {
    records
        .iter()
        .filter(|r| (r.approach, r.situation) == cell)
        .filter_map(|r| metric.value(r))
        .collect()
}

/// Mean, sample SD and n per (approach, situation). Cells without
/// contributing records are absent.
pub fn summarize(records: &[MetricsRecord], metric: Metric) -> BTreeMap<Cell, SummaryCell> {
    let mut groups: BTreeMap<Cell, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = metric.value(r) {
            groups.entry((r.approach, r.situation)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .filter_map(|(cell, values)| SummaryCell::from_values(&values).map(|s| (cell, s)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Significance {
    /// One of the cells has fewer than two values.
    NotComputable,
    Tested(MannWhitney),
}

impl Significance {
    pub fn p(&self) -> Option<f64> {
        match self {
            Self::NotComputable => None,
            Self::Tested(t) => Some(t.p),
        }
    }

    pub fn stars(&self) -> &'static str {
        self.p().map_or("", stars)
    }
}

/// Two-sided Mann–Whitney U between two cells of one metric.
pub fn significance(records: &[MetricsRecord], a: Cell, b: Cell, metric: Metric) -> Significance {
    let va = cell_values(records, a, metric);
    let vb = cell_values(records, b, metric);
    mann_whitney(&va, &vb).map_or(Significance::NotComputable, Significance::Tested)
}
