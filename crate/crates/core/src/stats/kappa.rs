use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const LIKERT_LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub per_item_kappa: BTreeMap<String, f64>,
    pub mean: f64,
    /// Population standard deviation over items.
    pub std: f64,
    pub n_items: usize,
    /// Items left out for having fewer than two valid ratings.
    pub n_excluded: usize,
}

/// Fleiss' kappa over an items x categories count table.
///
/// Items may have different rater counts; items with fewer than two raters
/// must be filtered out by the caller. When expected agreement is 1 (every
/// rating in one category) kappa is 1.
pub fn fleiss_kappa_table(table: &[[u32; LIKERT_LEVELS]]) -> f64 {
    let mut p_bar = 0.0;
    let mut totals = [0f64; LIKERT_LEVELS];
    let mut grand = 0.0;
    for row in table {
        let n: f64 = row.iter().map(|&c| c as f64).sum();
        let sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
        p_bar += (sq - n) / (n * (n - 1.0));
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += c as f64;
        }
        grand += n;
    }
    p_bar /= table.len() as f64;
    let p_e: f64 = totals.iter().map(|t| (t / grand) * (t / grand)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return 1.0;
    }
    (p_bar - p_e) / (1.0 - p_e)
}

/// Kappa computed separately for every item, then summarized as mean and
/// population standard deviation.
///
/// Each item is its own table: one row per subject (here, the persona
/// conditions a news item was shown under), counting the item's M completions
/// over the five levels. Rows with fewer than two ratings are dropped. An item
/// needs two usable rows, since a single-row table always yields -1/(n - 1).
pub fn per_item_kappa<'a, I, R>(items: I) -> KappaResult
where
    I: IntoIterator<Item = (&'a str, R)>,
    R: AsRef<[[u32; LIKERT_LEVELS]]>,
{
    let mut per_item = BTreeMap::new();
    let mut n_excluded = 0;
    for (id, rows) in items {
        let kept: Vec<[u32; LIKERT_LEVELS]> = rows
            .as_ref()
            .iter()
            .copied()
            .filter(|r| r.iter().sum::<u32>() >= 2)
            .collect();
        if kept.len() < 2 {
            n_excluded += 1;
            continue;
        }
        per_item.insert(id.to_string(), fleiss_kappa_table(&kept));
    }
    let values: Vec<f64> = per_item.values().copied().collect();
    let (mean, std) = if values.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = values.iter().sum::<f64>() / values.len() as f64;
        let v = values.iter().map(|k| (k - m) * (k - m)).sum::<f64>() / values.len() as f64;
        (m, v.sqrt())
    };
    KappaResult {
        n_items: values.len(),
        per_item_kappa: per_item,
        mean,
        std,
        n_excluded,
    }
}

/// Fleiss' kappa of the pooled table, skipping items with fewer than two ratings.
pub fn fleiss_kappa(table: &[[u32; LIKERT_LEVELS]]) -> Option<f64> {
    let kept: Vec<[u32; LIKERT_LEVELS]> = table
        .iter()
        .copied()
        .filter(|r| r.iter().sum::<u32>() >= 2)
        .collect();
    (!kept.is_empty()).then(|| fleiss_kappa_table(&kept))
}
