//! From observation cells to the four report tables plus the blank-image control.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{NewsItem, Topic, Veracity};
use crate::persona::{Condition, Party, Trait};
use crate::promptgen::Modality;
use crate::stats::lmm::LmmObs;
use crate::stats::{
    anova_eta, fit_lmm, ks_normality, paired_wilcoxon, per_item_kappa, point_biserial, relative_increase, stars,
    CorrelationResult, KsResult, LmmData, LmmFit, ObservationCell, StatsError, WilcoxonResult,
};

pub const POOLED: &str = "All";

/// A table entry, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat<T> {
    Ok(T),
    Unavailable { reason: String },
}

impl<T> Stat<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Stat::Ok(v) => Some(v),
            Stat::Unavailable { .. } => None,
        }
    }

    fn unavailable(reason: impl Into<String>) -> Stat<T> {
        Stat::Unavailable { reason: reason.into() }
    }
}

impl<T> From<Result<T, StatsError>> for Stat<T> {
    fn from(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(v) => Stat::Ok(v),
            Err(e) => Stat::unavailable(e.to_string()),
        }
    }
}

/// The attributes of a news item the analysis uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsMeta {
    pub veracity: Veracity,
    pub topics: Vec<Topic>,
    pub person_present: bool,
}

impl From<&NewsItem> for NewsMeta {
    fn from(n: &NewsItem) -> Self {
        NewsMeta {
            veracity: n.veracity,
            topics: n.topics.clone(),
            person_present: n.person_present,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmSummary {
    pub beta_interaction: f64,
    pub p_interaction: f64,
    pub fit: LmmFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub model: String,
    pub n_pairs: usize,
    pub wilcoxon: Stat<WilcoxonResult>,
    /// Mean yes-rates over paired cells, text then image.
    pub rates_false: Stat<(f64, f64)>,
    pub rates_true: Stat<(f64, f64)>,
    pub incr_false_pct: Stat<f64>,
    pub incr_true_pct: Stat<f64>,
    pub lmm: Stat<LmmSummary>,
    pub ks: Stat<KsResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Traits,
    Party,
    Veracity,
    Topic,
    ImgContent,
}

impl Factor {
    pub const ALL: [Factor; 5] = [Factor::Traits, Factor::Party, Factor::Veracity, Factor::Topic, Factor::ImgContent];

    pub fn label(self) -> &'static str {
        match self {
            Factor::Traits => "Traits",
            Factor::Party => "Party",
            Factor::Veracity => "Veracity",
            Factor::Topic => "Topic",
            Factor::ImgContent => "Img. content",
        }
    }

    /// Multi-level factors are summarized by eta, binary ones by point-biserial r.
    pub fn method(self) -> &'static str {
        match self {
            Factor::Traits | Factor::Topic => "eta",
            _ => "point_biserial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub model: String,
    pub factor: Factor,
    pub method: String,
    pub result: Stat<CorrelationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub model: String,
    #[serde(rename = "trait")]
    pub trait_kind: Trait,
    pub modality: Modality,
    pub result: Stat<CorrelationResult>,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub mean: f64,
    pub std: f64,
    pub n_items: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table6Row {
    pub model: String,
    pub veracity: Veracity,
    pub modality: Modality,
    pub kappa: Stat<KappaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlankRow {
    pub model: String,
    /// "all", "true" or "false" news.
    pub subset: String,
    pub result: Stat<CorrelationResult>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub synthetic: bool,
    pub models: Vec<String>,
    pub n_cells: usize,
    /// Cells without a single valid rating; excluded everywhere.
    pub n_cells_undefined: usize,
    pub n_ratings: usize,
    pub n_invalid: usize,
    pub notes: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub table3: Vec<Table3Row>,
    pub table6: Vec<Table6Row>,
    pub blank_control: Vec<BlankRow>,
    pub run_metadata: RunMetadata,
}

struct Group<'a> {
    name: String,
    cells: Vec<&'a ObservationCell>,
    pooled: bool,
}

/// Runs every analysis per model and on the pooled cells.
pub fn analyze_cells(
    cells: &[ObservationCell],
    news: &BTreeMap<String, NewsMeta>,
    mut metadata: RunMetadata,
) -> StatReport {
    let mut sorted: Vec<&ObservationCell> = cells.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let models: BTreeSet<&str> = sorted.iter().map(|c| c.key.model.as_str()).collect();
    let mut groups: Vec<Group> = models
        .iter()
        .map(|m| Group {
            name: m.to_string(),
            cells: sorted.iter().copied().filter(|c| c.key.model == *m).collect(),
            pooled: false,
        })
        .collect();
    groups.push(Group {
        name: POOLED.to_string(),
        cells: sorted.clone(),
        pooled: true,
    });

    metadata.models = models.iter().map(|m| m.to_string()).collect();
    metadata.n_cells = cells.len();
    metadata.n_cells_undefined = cells.iter().filter(|c| c.yes_rate.is_none()).count();
    metadata.n_ratings = cells.iter().map(|c| c.ratings.len()).sum();
    metadata.n_invalid = cells.iter().map(|c| c.n_invalid).sum();
    let note = "Traits and Topic rows report the correlation ratio eta from one-way ANOVA";
    if !metadata.notes.iter().any(|n| n == note) {
        metadata.notes.push(note.to_string());
    }

    let mut report = StatReport {
        table1: Vec::new(),
        table2: Vec::new(),
        table3: Vec::new(),
        table6: Vec::new(),
        blank_control: Vec::new(),
        run_metadata: metadata,
    };
    let has_blank = sorted.iter().any(|c| c.key.modality == Modality::BlankImage);
    for g in &groups {
        report.table1.push(table1_row(g, news));
        report.table2.extend(table2_rows(g, news));
        report.table3.extend(table3_rows(g));
        report.table6.extend(table6_rows(g, news));
        if has_blank {
            report.blank_control.extend(blank_rows(g, news));
        }
    }
    report
}

fn veracity_of(news: &BTreeMap<String, NewsMeta>, id: &str) -> Option<Veracity> {
    news.get(id).map(|n| n.veracity)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// (model, condition, news) -> (text, image) yes-rates.
type PairSlots<'a> = BTreeMap<(&'a str, &'a str, &'a str), (Option<f64>, Option<f64>)>;

fn table1_row(g: &Group, news: &BTreeMap<String, NewsMeta>) -> Table1Row {
    let mut slots: PairSlots = BTreeMap::new();
    for c in &g.cells {
        let k = (c.key.model.as_str(), c.key.condition_label.as_str(), c.key.news_id.as_str());
        match c.key.modality {
            Modality::TextOnly => slots.entry(k).or_default().0 = c.yes_rate,
            Modality::ImageText => slots.entry(k).or_default().1 = c.yes_rate,
            Modality::BlankImage => {}
        }
    }
    let mut pairs = Vec::new();
    let mut by_veracity: BTreeMap<Veracity, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((_, _, id), v) in &slots {
        if let (Some(t), Some(i), Some(ver)) = (v.0, v.1, veracity_of(news, id)) {
            pairs.push((i, t));
            let e = by_veracity.entry(ver).or_default();
            e.0.push(t);
            e.1.push(i);
        }
    }
    let n_pairs = pairs.len();
    let no_pairs = "no cell has both text-only and image-text ratings";
    let rates = |v: Veracity| match by_veracity.get(&v) {
        Some((t, i)) if !t.is_empty() => Stat::Ok((mean(t), mean(i))),
        _ => Stat::unavailable(no_pairs),
    };
    let rates_false = rates(Veracity::False);
    let rates_true = rates(Veracity::True);
    let incr = |r: &Stat<(f64, f64)>| match r {
        Stat::Ok((t, i)) => relative_increase(*t, *i).into(),
        Stat::Unavailable { reason } => Stat::unavailable(reason.clone()),
    };
    let (wilcoxon, ks) = if pairs.is_empty() {
        (Stat::unavailable(no_pairs), Stat::unavailable(no_pairs))
    } else {
        let diffs: Vec<f64> = pairs.iter().map(|(i, t)| i - t).collect();
        (paired_wilcoxon(&pairs).into(), ks_normality(&diffs).into())
    };
    Table1Row {
        model: g.name.clone(),
        n_pairs,
        wilcoxon,
        incr_false_pct: incr(&rates_false),
        incr_true_pct: incr(&rates_true),
        rates_false,
        rates_true,
        lmm: lmm_for(g, news),
        ks,
    }
}

fn lmm_for(g: &Group, news: &BTreeMap<String, NewsMeta>) -> Stat<LmmSummary> {
    let mut news_idx: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cond_idx: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut obs = Vec::new();
    for c in &g.cells {
        let image = match c.key.modality {
            Modality::TextOnly => false,
            Modality::ImageText => true,
            Modality::BlankImage => continue,
        };
        let (Some(y), Some(ver)) = (c.yes_rate, veracity_of(news, &c.key.news_id)) else {
            continue;
        };
        let n = news_idx.len();
        let news_i = *news_idx.entry(c.key.news_id.as_str()).or_insert(n);
        // Pooled fits give each (model, profile) its own intercept.
        let model = if g.pooled { c.key.model.as_str() } else { "" };
        let n = cond_idx.len();
        let cond_i = *cond_idx.entry((model, c.key.condition_label.as_str())).or_insert(n);
        obs.push(LmmObs {
            y,
            image,
            false_news: ver == Veracity::False,
            news: news_i,
            condition: cond_i,
        });
    }
    let fit = match LmmData::new(&obs).and_then(|d| fit_lmm(&d)) {
        Ok(f) => f,
        Err(e) => return Stat::unavailable(e.to_string()),
    };
    if !fit.converged {
        return Stat::unavailable(format!(
            "optimizer did not converge (projected gradient norm {:.3e})",
            fit.projected_gradient_norm
        ));
    }
    Stat::Ok(LmmSummary {
        beta_interaction: fit.beta.interaction,
        p_interaction: fit.p_wald.interaction,
        fit,
    })
}

fn text_or_image(c: &ObservationCell) -> bool {
    matches!(c.key.modality, Modality::TextOnly | Modality::ImageText)
}

fn table2_rows(g: &Group, news: &BTreeMap<String, NewsMeta>) -> Vec<Table2Row> {
    let cells: Vec<(&ObservationCell, f64, &NewsMeta)> = g
        .cells
        .iter()
        .filter(|c| text_or_image(c))
        .filter_map(|c| Some((*c, c.yes_rate?, news.get(&c.key.news_id)?)))
        .collect();
    Factor::ALL
        .iter()
        .map(|&factor| {
            let result: Stat<CorrelationResult> = match factor {
                Factor::Traits => {
                    let mut levels: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                    for (c, y, _) in &cells {
                        if Condition::from_label(&c.key.condition_label).is_some_and(|k| k.is_personality_run()) {
                            levels.entry(c.key.condition_label.clone()).or_default().push(*y);
                        }
                    }
                    anova_eta(&levels).into()
                }
                Factor::Party => {
                    let data: Vec<(bool, f64)> = cells
                        .iter()
                        .filter_map(|(c, y, _)| {
                            let d = Condition::from_label(&c.key.condition_label)?.demographic()?;
                            Some((d.party == Party::Republican, *y))
                        })
                        .collect();
                    point_biserial(&data).into()
                }
                Factor::Veracity => {
                    let data: Vec<(bool, f64)> =
                        cells.iter().map(|(_, y, n)| (n.veracity == Veracity::False, *y)).collect();
                    point_biserial(&data).into()
                }
                Factor::Topic => {
                    let mut levels: BTreeMap<Topic, Vec<f64>> = BTreeMap::new();
                    for (_, y, n) in &cells {
                        for t in &n.topics {
                            levels.entry(*t).or_default().push(*y);
                        }
                    }
                    anova_eta(&levels).into()
                }
                Factor::ImgContent => {
                    let data: Vec<(bool, f64)> = cells.iter().map(|(_, y, n)| (n.person_present, *y)).collect();
                    point_biserial(&data).into()
                }
            };
            Table2Row {
                model: g.name.clone(),
                factor,
                method: factor.method().to_string(),
                result,
            }
        })
        .collect()
}

fn table3_rows(g: &Group) -> Vec<Table3Row> {
    let mut rows = Vec::new();
    for modality in [Modality::ImageText, Modality::TextOnly] {
        let mut baseline = Vec::new();
        let mut by_trait: BTreeMap<Trait, Vec<f64>> = BTreeMap::new();
        for c in g.cells.iter().filter(|c| c.key.modality == modality) {
            let Some(y) = c.yes_rate else { continue };
            match Condition::from_label(&c.key.condition_label) {
                Some(Condition::NoPersona) => baseline.push(y),
                Some(Condition::Trait { persona }) => by_trait.entry(persona).or_default().push(y),
                _ => {}
            }
        }
        if baseline.is_empty() && by_trait.is_empty() {
            continue;
        }
        for t in Trait::ALL {
            let data: Vec<(bool, f64)> = baseline
                .iter()
                .map(|y| (false, *y))
                .chain(by_trait.get(&t).into_iter().flatten().map(|y| (true, *y)))
                .collect();
            let result: Stat<CorrelationResult> = point_biserial(&data).into();
            let s = result.ok().map(|r| stars(r.p)).unwrap_or("");
            rows.push(Table3Row {
                model: g.name.clone(),
                trait_kind: t,
                modality,
                stars: s.to_string(),
                result,
            });
        }
    }
    rows
}

fn table6_rows(g: &Group, news: &BTreeMap<String, NewsMeta>) -> Vec<Table6Row> {
    let mut rows = Vec::new();
    for veracity in [Veracity::False, Veracity::True] {
        for modality in [Modality::ImageText, Modality::TextOnly] {
            // One table per (model, news item): a row per condition.
            let mut items: BTreeMap<String, Vec<[u32; 5]>> = BTreeMap::new();
            for c in g
                .cells
                .iter()
                .filter(|c| c.key.modality == modality && veracity_of(news, &c.key.news_id) == Some(veracity))
            {
                let id = format!("{}|{}", c.key.model, c.key.news_id);
                items.entry(id).or_default().push(c.level_counts());
            }
            if items.is_empty() {
                continue;
            }
            let k = per_item_kappa(items.iter().map(|(id, rows)| (id.as_str(), rows)));
            let kappa = if k.n_items == 0 {
                Stat::unavailable("no news item has two conditions with two or more valid ratings")
            } else {
                Stat::Ok(KappaSummary {
                    mean: k.mean,
                    std: k.std,
                    n_items: k.n_items,
                    n_excluded: k.n_excluded,
                })
            };
            rows.push(Table6Row {
                model: g.name.clone(),
                veracity,
                modality,
                kappa,
            });
        }
    }
    rows
}

/// Blank image versus text only, no-persona cells, label 1 = blank.
fn blank_rows(g: &Group, news: &BTreeMap<String, NewsMeta>) -> Vec<BlankRow> {
    let data: Vec<(bool, f64, Option<Veracity>)> = g
        .cells
        .iter()
        .filter(|c| c.key.condition_label == "none")
        .filter(|c| matches!(c.key.modality, Modality::TextOnly | Modality::BlankImage))
        .filter_map(|c| {
            Some((
                c.key.modality == Modality::BlankImage,
                c.yes_rate?,
                veracity_of(news, &c.key.news_id),
            ))
        })
        .collect();
    [("all", None), ("true", Some(Veracity::True)), ("false", Some(Veracity::False))]
        .into_iter()
        .map(|(subset, v)| {
            let sel: Vec<(bool, f64)> = data
                .iter()
                .filter(|(_, _, ver)| v.is_none() || *ver == v)
                .map(|(b, y, _)| (*b, *y))
                .collect();
            BlankRow {
                model: g.name.clone(),
                subset: subset.to_string(),
                result: point_biserial(&sel).into(),
            }
        })
        .collect()
}
