use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::modelio::{EndpointConfig, Protocol};
use crate::persona::{enumerate_conditions, Condition};
use crate::promptgen::{Modality, DEFAULT_BLANK_SIZE};
use crate::rng::derive_seed;

/// Which of the 25 conditions to run: `"all"`, `"personality"`,
/// `"demographic"`, or an explicit list of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionSelector {
    Named(String),
    List(Vec<String>),
}

impl Default for ConditionSelector {
    fn default() -> Self {
        ConditionSelector::Named("all".into())
    }
}

impl ConditionSelector {
    /// Selected conditions in canonical order.
    pub fn resolve(&self) -> Result<Vec<Condition>, RunError> {
        let all = enumerate_conditions();
        match self {
            ConditionSelector::Named(n) => match n.as_str() {
                "all" => Ok(all),
                "personality" => Ok(all.into_iter().filter(|c| c.is_personality_run()).collect()),
                "demographic" => Ok(all.into_iter().filter(|c| !c.is_personality_run()).collect()),
                other => ConditionSelector::List(vec![other.to_string()]).resolve(),
            },
            ConditionSelector::List(labels) => {
                let mut wanted = BTreeSet::new();
                for l in labels {
                    let c = Condition::from_label(l)
                        .ok_or_else(|| RunError::Config(format!("unknown condition label {l:?}")))?;
                    wanted.insert(c);
                }
                if wanted.is_empty() {
                    return Err(RunError::Config("condition list is empty".into()));
                }
                Ok(all.into_iter().filter(|c| wanted.contains(c)).collect())
            }
        }
    }
}

fn default_modalities() -> Vec<Modality> {
    vec![Modality::TextOnly, Modality::ImageText]
}
fn default_true() -> bool {
    true
}
fn default_workers() -> usize {
    4
}
fn default_blank() -> u32 {
    DEFAULT_BLANK_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub endpoints: Vec<EndpointConfig>,
    #[serde(default)]
    pub conditions: ConditionSelector,
    #[serde(default = "default_modalities")]
    pub modalities: Vec<Modality>,
    /// Overrides every endpoint's completions_per_item when set.
    #[serde(default, alias = "m")]
    pub completions_per_item: Option<u32>,
    /// Overrides every endpoint's temperature when set.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_true")]
    pub resume: bool,
    /// Mixed into each mock endpoint's seed when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_blank")]
    pub blank_size: u32,
    #[serde(default)]
    pub normalize_grammar: bool,
    #[serde(default)]
    pub persona_file: Option<PathBuf>,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default)]
    pub validate_images: bool,
}

impl RunConfig {
    /// A config with defaults for everything but the required fields.
    pub fn new(corpus: PathBuf, output_dir: PathBuf, endpoints: Vec<EndpointConfig>) -> RunConfig {
        RunConfig {
            corpus,
            output_dir,
            endpoints,
            conditions: ConditionSelector::default(),
            modalities: default_modalities(),
            completions_per_item: None,
            temperature: None,
            resume: true,
            seed: None,
            workers: default_workers(),
            blank_size: default_blank(),
            normalize_grammar: false,
            persona_file: None,
            template_dir: None,
            validate_images: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e.to_string()))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.corpus);
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.persona_file.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.template_dir.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.endpoints.is_empty() {
            return Err(RunError::Config("at least one endpoint is required".into()));
        }
        if self.modalities.is_empty() {
            return Err(RunError::Config("at least one modality is required".into()));
        }
        let distinct: BTreeSet<_> = self.modalities.iter().collect();
        if distinct.len() != self.modalities.len() {
            return Err(RunError::Config("modalities contain duplicates".into()));
        }
        let names: BTreeSet<_> = self.endpoints.iter().map(|e| e.name.as_str()).collect();
        if names.len() != self.endpoints.len() {
            return Err(RunError::Config("endpoint names must be unique".into()));
        }
        if self.completions_per_item == Some(0) {
            return Err(RunError::Config("completions_per_item must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(RunError::Config("workers must be at least 1".into()));
        }
        if self.blank_size == 0 {
            return Err(RunError::Config("blank_size must be positive".into()));
        }
        self.conditions.resolve()?;
        for e in self.effective_endpoints() {
            e.validate()?;
        }
        Ok(())
    }

    /// Endpoints with the run-level overrides applied.
    pub fn effective_endpoints(&self) -> Vec<EndpointConfig> {
        self.endpoints
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if let Some(m) = self.completions_per_item {
                    e.completions_per_item = m;
                }
                if let Some(t) = self.temperature {
                    e.temperature = t;
                }
                if e.model.is_empty() {
                    e.model = e.name.clone();
                }
                if e.protocol == Protocol::Mock {
                    let mut p = e.mock.clone().unwrap_or_default();
                    if let Some(s) = self.seed {
                        p.seed = derive_seed(s, &e.name, p.seed);
                    }
                    e.mock = Some(p);
                }
                e
            })
            .collect()
    }
}
