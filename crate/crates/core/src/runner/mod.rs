//! Experiment planning, resumable execution, and analysis of the stored results.

pub mod analyze;
pub mod config;
pub mod report;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_corpus_with, Corpus, CorpusError, LoadOptions, NewsItem};
use crate::modelio::{Client, CompletionRecord, EndpointConfig, ModelIoError, SampleFailure, Transport};
use crate::parse::extract_rating;
use crate::persona::{Condition, PersonaError, PersonaSet};
use crate::promptgen::{ImageSource, Modality, PromptBuilder, PromptError, Templates};
use crate::stats::{CellKey, ObservationCell};

pub use analyze::{analyze_cells, NewsMeta, RunMetadata, Stat, StatReport};
pub use config::{ConditionSelector, RunConfig};
pub use report::{render_text, write_report};
pub use store::EndpointStore;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error("plan: {0}")]
    Plan(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("store: {0}")]
    Store(String),
}

impl RunError {
    pub(crate) fn io(path: &Path, message: String) -> RunError {
        RunError::Io {
            path: path.to_path_buf(),
            message,
        }
    }
}

/// One (endpoint, condition, modality, news) cell of the experiment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorkKey {
    pub endpoint: usize,
    pub condition: Condition,
    pub modality: Modality,
    pub news_id: String,
}

impl WorkKey {
    /// Identifier within one endpoint's store.
    pub fn cell_id(&self) -> String {
        format!("{}|{}|{}", self.modality, self.condition.label(), self.news_id)
    }
}

/// Run metadata persisted next to the endpoint stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub harness_version: String,
    pub corpus: PathBuf,
    pub corpus_provenance: String,
    pub endpoints: Vec<EndpointConfig>,
    pub conditions: Vec<String>,
    pub modalities: Vec<Modality>,
    pub seed: Option<u64>,
    /// Request settings the harness fixes on its own.
    pub conventions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSummary {
    pub name: String,
    pub cells_completed: usize,
    pub cells_failed: usize,
    pub records_written: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteSummary {
    pub cells_planned: usize,
    pub endpoints: Vec<EndpointSummary>,
    /// Execution stopped early on request.
    pub interrupted: bool,
}

#[derive(Default)]
pub struct ExecuteOptions<'a> {
    /// Stop after this many cells are committed or failed.
    pub stop_after_cells: Option<usize>,
    pub cancel: Option<Arc<AtomicBool>>,
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

pub struct Runner {
    cfg: RunConfig,
    endpoints: Vec<EndpointConfig>,
    conditions: Vec<Condition>,
    corpus: Corpus,
    builder: PromptBuilder,
    clients: Vec<Client>,
}

impl Runner {
    pub fn new(cfg: RunConfig) -> Result<Runner, RunError> {
        Runner::build(cfg, None)
    }

    /// Remote endpoints go through `transport` instead of real HTTP.
    pub fn with_transport(cfg: RunConfig, transport: Arc<dyn Transport>) -> Result<Runner, RunError> {
        Runner::build(cfg, Some(transport))
    }

    fn build(cfg: RunConfig, transport: Option<Arc<dyn Transport>>) -> Result<Runner, RunError> {
        cfg.validate()?;
        let endpoints = cfg.effective_endpoints();
        let conditions = cfg.conditions.resolve()?;
        let corpus = load_corpus_with(
            &cfg.corpus,
            &LoadOptions {
                validate_images: cfg.validate_images,
            },
        )?;
        let mut personas = match &cfg.persona_file {
            Some(p) => PersonaSet::from_path(p)?,
            None => PersonaSet::bundled(),
        };
        personas.normalize_grammar = cfg.normalize_grammar;
        let templates = match &cfg.template_dir {
            Some(d) => Templates::from_dir(d)?,
            None => Templates::bundled(),
        };
        let builder = PromptBuilder::new(templates, personas, ImageSource::Directory(corpus.base_dir.clone()))
            .with_blank_size(cfg.blank_size, cfg.blank_size)?;
        let clients = endpoints
            .iter()
            .map(|e| match &transport {
                Some(t) => Client::with_transport(e.clone(), t.clone()),
                None => Client::new(e.clone()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Runner {
            cfg,
            endpoints,
            conditions,
            corpus,
            builder,
            clients,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    /// Every cell in deterministic order (endpoint, modality, condition, news),
    /// minus cells already committed when resuming.
    pub fn plan(&self) -> Result<Vec<WorkKey>, RunError> {
        if self.cfg.modalities.contains(&Modality::ImageText) && !self.corpus.all_have_images() {
            return Err(RunError::Plan(
                "image modality requested but some corpus items have no image".into(),
            ));
        }
        let mut out = Vec::new();
        for (ei, e) in self.endpoints.iter().enumerate() {
            let done = self.committed(&e.name)?;
            for &modality in &self.cfg.modalities {
                for condition in &self.conditions {
                    for item in &self.corpus.items {
                        let key = WorkKey {
                            endpoint: ei,
                            condition: *condition,
                            modality,
                            news_id: item.id.clone(),
                        };
                        if !done.contains(&key.cell_id()) {
                            out.push(key);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn committed(&self, endpoint: &str) -> Result<std::collections::HashSet<String>, RunError> {
        let dir = self.cfg.output_dir.join(endpoint);
        if !dir.join(store::INDEX_FILE).exists() {
            return Ok(Default::default());
        }
        let (entries, _) = store::read_index(&dir.join(store::INDEX_FILE))?;
        let entries: std::collections::HashSet<String> = entries.into_iter().map(|e| e.0).collect();
        if !entries.is_empty() && !self.cfg.resume {
            return Err(RunError::Plan(format!(
                "{} already holds results; enable resume or pick another output_dir",
                dir.display()
            )));
        }
        Ok(entries)
    }

    pub fn manifest(&self) -> RunManifest {
        let mut conventions = BTreeMap::new();
        conventions.insert("top_p".into(), "provider default".into());
        conventions.insert("system_prompt".into(), "none".into());
        conventions.insert("max_tokens".into(), "per endpoint, default 1024".into());
        RunManifest {
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            corpus: self.cfg.corpus.clone(),
            corpus_provenance: self.corpus.provenance.clone(),
            endpoints: self.endpoints.clone(),
            conditions: self.conditions.iter().map(|c| c.label()).collect(),
            modalities: self.cfg.modalities.clone(),
            seed: self.cfg.seed,
            conventions,
        }
    }

    /// Runs the plan on a worker pool; a single writer commits cells in plan
    /// order so the store layout does not depend on scheduling.
    pub fn execute(&self, plan: &[WorkKey], opts: &ExecuteOptions) -> Result<ExecuteSummary, RunError> {
        std::fs::create_dir_all(&self.cfg.output_dir).map_err(|e| RunError::io(&self.cfg.output_dir, e.to_string()))?;
        let manifest_path = self.cfg.output_dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        std::fs::write(&manifest_path, body + "\n").map_err(|e| RunError::io(&manifest_path, e.to_string()))?;

        let mut stores = self
            .endpoints
            .iter()
            .map(|e| EndpointStore::open(&self.cfg.output_dir, &e.name))
            .collect::<Result<Vec<_>, _>>()?;
        let mut summary = ExecuteSummary {
            cells_planned: plan.len(),
            endpoints: self
                .endpoints
                .iter()
                .map(|e| EndpointSummary {
                    name: e.name.clone(),
                    ..Default::default()
                })
                .collect(),
            interrupted: false,
        };
        let items: HashMap<&str, &NewsItem> = self.corpus.items.iter().map(|i| (i.id.as_str(), i)).collect();
        let stop = AtomicBool::new(false);
        let cancelled = || opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
        let limit = opts.stop_after_cells.unwrap_or(usize::MAX);

        let (job_tx, job_rx) = crossbeam_channel::bounded::<usize>(self.cfg.workers * 4);
        let (res_tx, res_rx) = crossbeam_channel::unbounded::<(usize, CellResult)>();
        let mut outcome: Result<(), RunError> = Ok(());
        std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..plan.len() {
                    if stop.load(Ordering::SeqCst) || job_tx.send(i).is_err() {
                        break;
                    }
                }
                drop(job_tx);
            });
            for _ in 0..self.cfg.workers {
                let job_rx = job_rx.clone();
                let res_tx = res_tx.clone();
                let (stop, items) = (&stop, &items);
                s.spawn(move || {
                    for i in job_rx {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        let r = self.run_cell(&plan[i], items);
                        if res_tx.send((i, r)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(job_rx);
            drop(res_tx);

            let mut pending: BTreeMap<usize, CellResult> = BTreeMap::new();
            let mut next = 0;
            let mut done = 0;
            'recv: for (i, r) in res_rx.iter() {
                pending.insert(i, r);
                while let Some(r) = pending.remove(&next) {
                    if done >= limit || cancelled() {
                        summary.interrupted = true;
                        break 'recv;
                    }
                    let key = &plan[next];
                    let st = &mut stores[key.endpoint];
                    let es = &mut summary.endpoints[key.endpoint];
                    let res = match r {
                        CellResult::Done(records) => {
                            es.cells_completed += 1;
                            es.records_written += records.len();
                            st.commit_cell(&key.cell_id(), &records)
                        }
                        CellResult::Failed(f) => {
                            es.cells_failed += 1;
                            st.record_failure(&key.cell_id(), f)
                        }
                    };
                    if let Err(e) = res {
                        outcome = Err(e);
                        break 'recv;
                    }
                    next += 1;
                    done += 1;
                    if let Some(p) = opts.progress {
                        p(done, plan.len());
                    }
                }
            }
            stop.store(true, Ordering::SeqCst);
            // Unblock the feeder and let workers drain.
            for _ in res_rx.iter() {}
        });
        outcome?;
        Ok(summary)
    }

    fn run_cell(&self, key: &WorkKey, items: &HashMap<&str, &NewsItem>) -> CellResult {
        let client = &self.clients[key.endpoint];
        let record_key = |k: u32| crate::modelio::RecordKey {
            model: client.config().name.clone(),
            condition_label: key.condition.label(),
            news_id: key.news_id.clone(),
            modality: key.modality,
            sample_index: k,
        };
        let whole_cell = |error: String| {
            CellResult::Failed(
                (0..client.config().completions_per_item)
                    .map(|k| SampleFailure {
                        key: record_key(k),
                        attempts: 0,
                        error: error.clone(),
                        permanent: true,
                    })
                    .collect(),
            )
        };
        let Some(item) = items.get(key.news_id.as_str()) else {
            return whole_cell(format!("news item {} not in corpus", key.news_id));
        };
        let bundle = match self.builder.build(item, &key.condition, key.modality) {
            Ok(b) => b,
            Err(e) => return whole_cell(e.to_string()),
        };
        let outcomes = client.complete(&bundle, item);
        if outcomes.iter().all(|o| o.is_ok()) {
            CellResult::Done(outcomes.into_iter().map(|o| o.unwrap()).collect())
        } else {
            CellResult::Failed(outcomes.into_iter().filter_map(|o| o.err()).collect())
        }
    }

    /// Plan then execute.
    pub fn run(&self, opts: &ExecuteOptions) -> Result<ExecuteSummary, RunError> {
        let plan = self.plan()?;
        self.execute(&plan, opts)
    }
}

enum CellResult {
    Done(Vec<CompletionRecord>),
    Failed(Vec<SampleFailure>),
}

/// Groups records into cells, re-parsing every raw response. Samples are
/// ordered by index within a cell.
pub fn cells_from_records(records: &[CompletionRecord]) -> Vec<ObservationCell> {
    let mut groups: BTreeMap<CellKey, Vec<(u32, &str)>> = BTreeMap::new();
    for r in records {
        let key = CellKey {
            model: r.key.model.clone(),
            condition_label: r.key.condition_label.clone(),
            news_id: r.key.news_id.clone(),
            modality: r.key.modality,
        };
        groups.entry(key).or_default().push((r.key.sample_index, &r.raw_text));
    }
    groups
        .into_iter()
        .map(|(key, mut samples)| {
            samples.sort_by_key(|s| s.0);
            let ratings = samples.iter().map(|(_, t)| extract_rating(t)).collect();
            ObservationCell::from_ratings(key, ratings)
        })
        .collect()
}

pub fn load_manifest(store: &Path) -> Result<RunManifest, RunError> {
    let path = store.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| RunError::io(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| RunError::Store(format!("{}: {e}", path.display())))
}

/// Reads every committed record of a store and runs the full analysis.
pub fn analyze_store(store: &Path) -> Result<StatReport, RunError> {
    let manifest = load_manifest(store)?;
    let corpus = load_corpus_with(&manifest.corpus, &LoadOptions::default())?;
    let news: BTreeMap<String, NewsMeta> = corpus.items.iter().map(|i| (i.id.clone(), NewsMeta::from(i))).collect();
    let mut records = Vec::new();
    for e in &manifest.endpoints {
        records.extend(store::read_records(store, &e.name)?);
    }
    let cells = cells_from_records(&records);
    let mut meta = RunMetadata::default();
    meta.extra.insert("corpus_provenance".into(), manifest.corpus_provenance.clone().into());
    meta.extra.insert("conventions".into(), serde_json::to_value(&manifest.conventions).unwrap());
    let mut failed = 0usize;
    for e in &manifest.endpoints {
        failed += store::read_failures(store, &e.name)?.len();
    }
    meta.extra.insert("failure_entries".into(), failed.into());
    Ok(analyze_cells(&cells, &news, meta))
}
