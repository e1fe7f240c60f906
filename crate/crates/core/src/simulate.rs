//! Synthetic experiments through the mock respondent, to check that the
//! pipeline recovers effects injected into the policy.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NewsItem, Topic, Veracity};
use crate::modelio::{mock_respond, Client, EndpointConfig, MockPolicy};
use crate::persona::{Condition, PersonaSet};
use crate::promptgen::{make_blank_image, ImageSource, Modality, PromptBuilder, PromptBundle, PromptMeta, Templates};
use crate::rng::derive_seed;
use crate::runner::analyze::{analyze_cells, NewsMeta, RunMetadata, StatReport};
use crate::runner::{cells_from_records, ConditionSelector};
use crate::stats::{binarize, paired_wilcoxon, ObservationCell};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("scenario: {0}")]
    Spec(String),
    #[error("scenario file {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    pub value: f64,
    pub tol: f64,
}

impl Tolerance {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.value).abs() <= self.tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expected {
    pub wilcoxon_r_range: Option<[f64; 2]>,
    pub interaction_sign: Option<Sign>,
    pub increase_false_pct: Option<Tolerance>,
    pub increase_true_pct: Option<Tolerance>,
}

fn default_n_news() -> usize {
    200
}
fn default_m() -> u32 {
    10
}
fn default_models() -> Vec<String> {
    vec!["mock".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub policy: MockPolicy,
    #[serde(default = "default_n_news")]
    pub n_news: usize,
    #[serde(default)]
    pub conditions: ConditionSelector,
    #[serde(default = "default_m", alias = "m")]
    pub completions_per_item: u32,
    #[serde(default)]
    pub seed: u64,
    /// Each model gets its own mock stream.
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default)]
    pub expected: Expected,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            policy: MockPolicy::default(),
            n_news: default_n_news(),
            conditions: ConditionSelector::default(),
            completions_per_item: default_m(),
            seed: 0,
            models: default_models(),
            expected: Expected::default(),
        }
    }
}

/// Mean yes-propensities implied by the policy, averaged over conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Implied {
    pub rate_text_false: f64,
    pub rate_image_false: f64,
    pub rate_text_true: f64,
    pub rate_image_true: f64,
    pub incr_false_pct: f64,
    pub incr_true_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub cells: Vec<ObservationCell>,
    pub report: StatReport,
    pub implied: Implied,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub delta: f64,
    pub rejection_rate: f64,
    pub replicates: usize,
}

const MODALITIES: [Modality; 2] = [Modality::TextOnly, Modality::ImageText];

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<ScenarioSpec, SimulateError> {
        toml::from_str(text).map_err(|e| SimulateError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ScenarioSpec, SimulateError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimulateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        ScenarioSpec::from_toml(&text)
    }

    pub fn validate(&self) -> Result<Vec<Condition>, SimulateError> {
        let spec = |m: String| Err(SimulateError::Spec(m));
        if self.n_news < 4 || !self.n_news.is_multiple_of(2) {
            return spec(format!("n_news must be even and at least 4, got {}", self.n_news));
        }
        if self.completions_per_item < 1 {
            return spec("completions_per_item must be at least 1".into());
        }
        if self.models.is_empty() {
            return spec("at least one model is required".into());
        }
        self.policy.validate().map_err(SimulateError::Spec)?;
        let conditions = self.conditions.resolve().map_err(|e| SimulateError::Spec(e.to_string()))?;
        let e = &self.expected;
        for t in [e.increase_false_pct, e.increase_true_pct].into_iter().flatten() {
            if t.tol.is_nan() || t.tol <= 0.0 {
                return spec("tolerances must be positive".into());
            }
        }
        if let Some([lo, hi]) = e.wilcoxon_r_range {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return spec("wilcoxon_r_range must be [low, high]".into());
            }
        }
        let props = self.propensities(&conditions);
        let spread = props.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - props.iter().cloned().fold(f64::INFINITY, f64::min);
        let wants_effect = e.interaction_sign.is_some()
            || e.wilcoxon_r_range.is_some_and(|[lo, _]| lo > 0.0)
            || [e.increase_false_pct, e.increase_true_pct]
                .into_iter()
                .flatten()
                .any(|t| !t.contains(0.0));
        if spread == 0.0 && wants_effect {
            return spec("every cell has the same propensity, so no expected effect can appear".into());
        }
        Ok(conditions)
    }

    fn propensities(&self, conditions: &[Condition]) -> Vec<f64> {
        let mut out = Vec::new();
        for c in conditions {
            for m in MODALITIES {
                for v in [Veracity::True, Veracity::False] {
                    out.push(self.policy.propensity(m, v, Some(c)));
                }
            }
        }
        out
    }

    pub fn implied(&self, conditions: &[Condition]) -> Implied {
        let avg = |m: Modality, v: Veracity| {
            conditions.iter().map(|c| self.policy.propensity(m, v, Some(c))).sum::<f64>() / conditions.len() as f64
        };
        let (tf, imf) = (avg(Modality::TextOnly, Veracity::False), avg(Modality::ImageText, Veracity::False));
        let (tt, imt) = (avg(Modality::TextOnly, Veracity::True), avg(Modality::ImageText, Veracity::True));
        let pct = |a: f64, b: f64| if a > 0.0 { 100.0 * (b - a) / a } else { f64::NAN };
        Implied {
            rate_text_false: tf,
            rate_image_false: imf,
            rate_text_true: tt,
            rate_image_true: imt,
            incr_false_pct: pct(tf, imf),
            incr_true_pct: pct(tt, imt),
        }
    }

    fn policy_for(&self, model: &str, seed: u64) -> MockPolicy {
        MockPolicy {
            seed: derive_seed(seed, model, 0),
            ..self.policy.clone()
        }
    }
}

/// Balanced stand-in corpus: first half true, second half false, topics and
/// person flags cycled. Text is placeholder only.
pub fn synthetic_corpus(n_news: usize) -> Vec<NewsItem> {
    let date = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
    (0..n_news)
        .map(|i| {
            let veracity = if i < n_news / 2 { Veracity::True } else { Veracity::False };
            let mut topics = vec![Topic::ALL[i % Topic::ALL.len()]];
            if i % 5 == 0 {
                topics.push(Topic::ALL[(i / 5 + 3) % Topic::ALL.len()]);
                topics.dedup();
            }
            NewsItem {
                id: format!("syn-{:04}", i + 1),
                headline: format!("Synthetic claim {}", i + 1),
                body: "Placeholder text.".into(),
                source: "Synthetic".into(),
                claim_date: date,
                medium: "a post".into(),
                veracity,
                topics,
                image_ref: None,
                person_present: i % 2 == 0,
                article_url: None,
            }
        })
        .collect()
}

fn news_meta(items: &[NewsItem]) -> BTreeMap<String, NewsMeta> {
    items.iter().map(|i| (i.id.clone(), NewsMeta::from(i))).collect()
}

/// Runs the whole prompt, mock, parse, aggregate and analysis chain in memory.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioOutcome, SimulateError> {
    let conditions = spec.validate()?;
    let items = synthetic_corpus(spec.n_news);
    let image = Arc::new(make_blank_image(8, 8).map_err(|e| SimulateError::Spec(e.to_string()))?);
    let builder = PromptBuilder::new(Templates::bundled(), PersonaSet::bundled(), ImageSource::Fixed(image));

    let mut records = Vec::new();
    for model in &spec.models {
        let mut ep = EndpointConfig::mock(model, spec.policy_for(model, spec.seed));
        ep.completions_per_item = spec.completions_per_item;
        let client = Client::new(ep).map_err(|e| SimulateError::Spec(e.to_string()))?;
        // Prompts are independent, so build and sample them in parallel chunks
        // and concatenate in a fixed order.
        let mut keys: Vec<(Modality, &Condition, &NewsItem)> = Vec::new();
        for m in MODALITIES {
            for c in &conditions {
                keys.extend(items.iter().map(|n| (m, c, n)));
            }
        }
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16);
        let chunk = keys.len().div_ceil(threads).max(1);
        let parts: Vec<Vec<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = keys
                .chunks(chunk)
                .map(|part| {
                    let (builder, client) = (&builder, &client);
                    s.spawn(move || {
                        let mut out = Vec::new();
                        for (m, c, n) in part {
                            let b = builder.build(n, c, *m).expect("synthetic prompts always build");
                            out.extend(client.complete(&b, n).into_iter().map(|o| o.expect("mock never fails")));
                        }
                        out
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        records.extend(parts.into_iter().flatten());
    }
    let cells = cells_from_records(&records);
    let mut meta = RunMetadata {
        synthetic: true,
        ..Default::default()
    };
    meta.extra.insert("scenario".into(), serde_json::to_value(spec).expect("spec serializes"));
    let report = analyze_cells(&cells, &news_meta(&items), meta);
    let implied = spec.implied(&conditions);
    let checks = evaluate_checks(spec, &report, &implied);
    Ok(ScenarioOutcome {
        cells,
        report,
        implied,
        checks,
    })
}

fn evaluate_checks(spec: &ScenarioSpec, report: &StatReport, implied: &Implied) -> Vec<Check> {
    let pooled = report
        .table1
        .iter()
        .find(|r| r.model == crate::runner::analyze::POOLED)
        .expect("pooled row is always present");
    let mut checks = Vec::new();
    let e = &spec.expected;
    let missing = |name: &str| Check {
        name: name.into(),
        passed: false,
        detail: "statistic unavailable".into(),
    };
    if let Some([lo, hi]) = e.wilcoxon_r_range {
        checks.push(match pooled.wilcoxon.ok() {
            Some(w) => Check {
                name: "wilcoxon_r_range".into(),
                passed: w.r_effect >= lo && w.r_effect <= hi,
                detail: format!("r = {:.4}, expected [{lo}, {hi}]", w.r_effect),
            },
            None => missing("wilcoxon_r_range"),
        });
    }
    if let Some(sign) = e.interaction_sign {
        checks.push(match pooled.lmm.ok() {
            Some(l) => Check {
                name: "interaction_sign".into(),
                passed: match sign {
                    Sign::Positive => l.beta_interaction > 0.0,
                    Sign::Negative => l.beta_interaction < 0.0,
                },
                detail: format!("beta3 = {:.4} (p = {:.3e})", l.beta_interaction, l.p_interaction),
            },
            None => missing("interaction_sign"),
        });
    }
    for (name, tol, got, implied) in [
        ("increase_false_pct", e.increase_false_pct, &pooled.incr_false_pct, implied.incr_false_pct),
        ("increase_true_pct", e.increase_true_pct, &pooled.incr_true_pct, implied.incr_true_pct),
    ] {
        if let Some(t) = tol {
            checks.push(match got.ok() {
                Some(v) => Check {
                    name: name.into(),
                    passed: t.contains(*v),
                    detail: format!("{v:.2}% (implied {implied:.2}%), expected {} ± {}", t.value, t.tol),
                },
                None => missing(name),
            });
        }
    }
    checks
}

/// Pooled Wilcoxon p-value of one replicate, skipping prompt rendering (the
/// mock only reads the prompt's key).
fn replicate_p(spec: &ScenarioSpec, conditions: &[Condition], items: &[NewsItem], seed: u64) -> Option<f64> {
    let mut pairs = Vec::new();
    for model in &spec.models {
        let policy = spec.policy_for(model, seed);
        for c in conditions {
            let label = c.label();
            for n in items {
                let mut rates = [0.0; 2];
                for (slot, m) in MODALITIES.iter().enumerate() {
                    let bundle = PromptBundle {
                        user_text: String::new(),
                        image: None,
                        meta: PromptMeta {
                            news_id: n.id.clone(),
                            condition_label: label.clone(),
                            modality: *m,
                        },
                    };
                    let ratings: Vec<_> = (0..spec.completions_per_item)
                        .map(|k| crate::parse::extract_rating(&mock_respond(&bundle, &policy, n, k)))
                        .collect();
                    rates[slot] = binarize(&ratings).ok()?.rate;
                }
                pairs.push((rates[1], rates[0]));
            }
        }
    }
    paired_wilcoxon(&pairs).ok().map(|w| w.p)
}

/// Share of replicates whose pooled Wilcoxon test rejects at 0.05, for each
/// `delta_image`. A zero row is always included.
pub fn power_curve(spec: &ScenarioSpec, deltas: &[f64], replicates: usize) -> Result<Vec<PowerRow>, SimulateError> {
    if replicates < 20 {
        return Err(SimulateError::Spec("power curves need at least 20 replicates".into()));
    }
    let mut ds: Vec<f64> = deltas.to_vec();
    if !ds.contains(&0.0) {
        ds.push(0.0);
    }
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    let items = synthetic_corpus(spec.n_news);
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16);
    let mut rows = Vec::new();
    for d in ds {
        let s = ScenarioSpec {
            policy: MockPolicy {
                delta_image: d,
                ..spec.policy.clone()
            },
            expected: Expected::default(),
            ..spec.clone()
        };
        let conditions = s.validate()?;
        let seeds: Vec<u64> = (0..replicates as u64).map(|i| derive_seed(spec.seed, "replicate", i)).collect();
        let chunk = seeds.len().div_ceil(threads);
        let rejected: usize = std::thread::scope(|sc| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| {
                    let (s, conditions, items) = (&s, &conditions, &items);
                    sc.spawn(move || {
                        part.iter()
                            .filter(|&&seed| replicate_p(s, conditions, items, seed).is_some_and(|p| p < 0.05))
                            .count()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
        });
        rows.push(PowerRow {
            delta: d,
            rejection_rate: rejected as f64 / replicates as f64,
            replicates,
        });
    }
    Ok(rows)
}
