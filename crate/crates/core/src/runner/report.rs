//! Report rendering: aligned text tables, one CSV per table, and report.json.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::analyze::{Stat, StatReport};
use super::RunError;

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn fmt_r(r: f64) -> String {
    format!("{r:.3}")
}

fn na<T>(s: &Stat<T>, f: impl Fn(&T) -> String) -> String {
    s.ok().map(f).unwrap_or_else(|| "n/a".to_string())
}

fn csv_num<T>(s: &Stat<T>, f: impl Fn(&T) -> f64) -> String {
    s.ok().map(|v| f(v).to_string()).unwrap_or_else(|| "NA".to_string())
}

/// Left-aligned first column, right-aligned rest.
fn render(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(header.to_vec()));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn table1_rows(report: &StatReport) -> Vec<Vec<String>> {
    report
        .table1
        .iter()
        .map(|row| {
            vec![
                row.model.clone(),
                na(&row.wilcoxon, |w| fmt_r(w.r_effect)),
                na(&row.wilcoxon, |w| fmt_p(w.p)),
                na(&row.incr_false_pct, |v| format!("{v:.2}%")),
                na(&row.incr_true_pct, |v| format!("{v:.2}%")),
                na(&row.lmm, |l| fmt_r(l.beta_interaction)),
                na(&row.lmm, |l| fmt_p(l.p_interaction)),
            ]
        })
        .collect()
}

pub fn render_text(report: &StatReport) -> String {
    let mut out = String::new();
    if report.run_metadata.synthetic {
        out.push_str("[synthetic run]\n\n");
    }
    out.push_str(&render(
        "Table 1: image effect (Wilcoxon), relative increase, modality x veracity interaction",
        &["Model", "r", "p", "incr. false", "incr. true", "beta", "p"],
        &table1_rows(report),
    ));

    let rows: Vec<Vec<String>> = report
        .table2
        .iter()
        .map(|row| {
            vec![
                row.model.clone(),
                row.factor.label().to_string(),
                row.method.clone(),
                na(&row.result, |r| fmt_r(r.r)),
                na(&row.result, |r| fmt_p(r.p)),
            ]
        })
        .collect();
    out.push('\n');
    out.push_str(&render("Table 2: factors", &["Model", "Factor", "Method", "r", "p"], &rows));

    let rows: Vec<Vec<String>> = report
        .table3
        .iter()
        .map(|row| {
            vec![
                row.model.clone(),
                row.trait_kind.to_string(),
                row.modality.to_string(),
                na(&row.result, |r| format!("{}{}", fmt_r(r.r), row.stars)),
            ]
        })
        .collect();
    out.push('\n');
    out.push_str(&render(
        "Table 3: each trait vs. no persona (* p<.05, ** p<.01, *** p<.001)",
        &["Model", "Trait", "Modality", "r"],
        &rows,
    ));

    let rows: Vec<Vec<String>> = report
        .table6
        .iter()
        .map(|row| {
            vec![
                row.model.clone(),
                row.veracity.to_string(),
                row.modality.to_string(),
                na(&row.kappa, |k| format!("{:.3} ± {:.3}", k.mean, k.std)),
            ]
        })
        .collect();
    out.push('\n');
    out.push_str(&render("Table 6: Fleiss' kappa", &["Model", "Veracity", "Modality", "kappa"], &rows));

    if !report.blank_control.is_empty() {
        let rows: Vec<Vec<String>> = report
            .blank_control
            .iter()
            .map(|row| {
                vec![
                    row.model.clone(),
                    row.subset.clone(),
                    na(&row.result, |r| fmt_r(r.r)),
                    na(&row.result, |r| fmt_p(r.p)),
                ]
            })
            .collect();
        out.push('\n');
        out.push_str(&render("Blank image vs. text only (no persona)", &["Model", "News", "r", "p"], &rows));
    }

    let unavailable = collect_unavailable(report);
    if !unavailable.is_empty() {
        out.push_str("\nUnavailable entries:\n");
        for u in unavailable {
            out.push_str("  ");
            out.push_str(&u);
            out.push('\n');
        }
    }
    out
}

fn collect_unavailable(report: &StatReport) -> Vec<String> {
    let mut out = Vec::new();
    let mut push = |what: String, reason: Option<&String>| {
        if let Some(r) = reason {
            out.push(format!("{what}: {r}"));
        }
    };
    fn reason<T>(s: &Stat<T>) -> Option<&String> {
        match s {
            Stat::Unavailable { reason } => Some(reason),
            Stat::Ok(_) => None,
        }
    }
    for r in &report.table1 {
        push(format!("table1 {} wilcoxon", r.model), reason(&r.wilcoxon));
        push(format!("table1 {} lmm", r.model), reason(&r.lmm));
        push(format!("table1 {} incr_false", r.model), reason(&r.incr_false_pct));
        push(format!("table1 {} incr_true", r.model), reason(&r.incr_true_pct));
    }
    for r in &report.table2 {
        push(format!("table2 {} {}", r.model, r.factor.label()), reason(&r.result));
    }
    for r in &report.table3 {
        push(format!("table3 {} {} {}", r.model, r.trait_kind, r.modality), reason(&r.result));
    }
    for r in &report.table6 {
        push(format!("table6 {} {} {}", r.model, r.veracity, r.modality), reason(&r.kappa));
    }
    out
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::io(path, e.to_string()))?;
    w.write_record(header).map_err(|e| RunError::io(path, e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| RunError::io(path, e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::io(path, e.to_string()))
}

/// Writes report.txt, report.json and the table CSVs into `dir`.
pub fn write_report(report: &StatReport, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e.to_string()))?;
    let txt = dir.join("report.txt");
    fs::write(&txt, render_text(report)).map_err(|e| RunError::io(&txt, e.to_string()))?;
    let json = dir.join("report.json");
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json, body + "\n").map_err(|e| RunError::io(&json, e.to_string()))?;

    let rows = report
        .table1
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                csv_num(&r.wilcoxon, |w| w.r_effect),
                csv_num(&r.wilcoxon, |w| w.p),
                csv_num(&r.incr_false_pct, |v| *v),
                csv_num(&r.incr_true_pct, |v| *v),
                csv_num(&r.lmm, |l| l.beta_interaction),
                csv_num(&r.lmm, |l| l.p_interaction),
            ]
        })
        .collect();
    write_csv(
        &dir.join("table1.csv"),
        &["model", "r", "p", "incr_false_pct", "incr_true_pct", "beta_interaction", "p_interaction"],
        rows,
    )?;
    let rows = report
        .table2
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.factor.label().to_string(),
                r.method.clone(),
                csv_num(&r.result, |c| c.r),
                csv_num(&r.result, |c| c.p),
                csv_num(&r.result, |c| c.n as f64),
            ]
        })
        .collect();
    write_csv(&dir.join("table2.csv"), &["model", "factor", "method", "r", "p", "n"], rows)?;
    let rows = report
        .table3
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.trait_kind.to_string(),
                r.modality.to_string(),
                csv_num(&r.result, |c| c.r),
                csv_num(&r.result, |c| c.p),
                r.stars.clone(),
            ]
        })
        .collect();
    write_csv(&dir.join("table3.csv"), &["model", "trait", "modality", "r", "p", "stars"], rows)?;
    let rows = report
        .table6
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.veracity.to_string(),
                r.modality.to_string(),
                csv_num(&r.kappa, |k| k.mean),
                csv_num(&r.kappa, |k| k.std),
                csv_num(&r.kappa, |k| k.n_items as f64),
            ]
        })
        .collect();
    write_csv(
        &dir.join("table6.csv"),
        &["model", "veracity", "modality", "kappa_mean", "kappa_std", "n_items"],
        rows,
    )?;
    if !report.blank_control.is_empty() {
        let rows = report
            .blank_control
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.subset.clone(),
                    csv_num(&r.result, |c| c.r),
                    csv_num(&r.result, |c| c.p),
                ]
            })
            .collect();
        write_csv(&dir.join("blank_control.csv"), &["model", "news", "r", "p"], rows)?;
    }
    Ok(())
}
