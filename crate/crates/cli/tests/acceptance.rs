//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass a substring to run only matching criteria.

#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Stdio;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use reshare_core::runner::analyze::POOLED;
use reshare_core::runner::ConditionSelector;
use reshare_core::simulate::{run_scenario, ScenarioSpec};
use reshare_core::stats::lmm::LmmObs;
use reshare_core::stats::{
    fit_lmm, fleiss_kappa_table, paired_wilcoxon, per_item_kappa, r_from_f, r_from_t, LmmData, WilcoxonMethod,
};
use reshare_core::MockPolicy;

use common::{bundled_corpus, run_bin, FakeChatServer, Frac};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        (1, "effect-size conversion", effect_sizes),
        (2, "wilcoxon oracle equivalence", wilcoxon),
        (3, "mixed model oracle equivalence and recovery", lmm),
        (4, "fleiss kappa", kappa),
        (5, "rating parser fixtures", parser),
        (6, "corpus statistics table", corpus_table),
        (7, "end-to-end effect recovery", recovery),
        (8, "well-formed report from a live-style endpoint", live_report),
        (9, "kill and resume equivalence", resume),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| name.contains(x.as_str()) || *x == id.to_string()) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        if !out.passed {
            failed += 1;
        }
        println!(
            "{} [{id}] {name}: {} ({:.1}s)",
            if out.passed { "PASS" } else { "FAIL" },
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------

fn effect_sizes() -> Outcome {
    let rf = r_from_f(29.15, 1, 313).unwrap();
    let rt = r_from_t(4.5, 292).unwrap();
    let ok = (0.289..=0.295).contains(&rf) && (0.253..=0.257).contains(&rt);
    outcome(ok, format!("r_from_f(29.15, 1, 313) = {rf:.4}, r_from_t(4.5, 292) = {rt:.4}"))
}

// 2 ------------------------------------------------------------------------

/// Two-sided p by enumerating all 2^n sign patterns over doubled midranks.
fn enumeration_p(diffs: &[i64]) -> Option<f64> {
    let nz: Vec<i64> = diffs.iter().copied().filter(|&d| d != 0).collect();
    let n = nz.len();
    if n < 2 {
        return None;
    }
    // doubled midrank of |d|: (#smaller) * 2 + (#equal) + 1
    let ranks2: Vec<i64> = nz
        .iter()
        .map(|d| {
            let smaller = nz.iter().filter(|e| e.abs() < d.abs()).count() as i64;
            let equal = nz.iter().filter(|e| e.abs() == d.abs()).count() as i64;
            2 * smaller + equal + 1
        })
        .collect();
    let observed: i64 = nz.iter().zip(&ranks2).filter(|(d, _)| **d > 0).map(|(_, r)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: i64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks2[i]).sum();
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    Some((2.0 * le.min(ge) as f64 / total).min(1.0))
}

/// Frozen from tests/oracles/wilcoxon_normal.py (50-digit mpmath):
/// (dataset, pairs used, W+, z, p).
#[allow(clippy::excessive_precision)]
const NORMAL_REFERENCE: [(i64, usize, f64, f64, f64); 6] = [
    (0, 96, 2253.0, -0.27435097502726502836, 0.78381491427125241062),
    (1, 96, 2730.5, 1.4722505034021196815, 0.1409532439844377404),
    (2, 95, 3019.5, 2.7474029188472992872, 0.0060069289285371208073),
    (3, 96, 3399.0, 3.9170767952224611954, 0.000089629202956038145395),
    (4, 96, 3731.0, 5.1307592666384616326, 2.885757810785838095e-7),
    (5, 96, 3920.0, 5.8216192706043738921, 5.828019221504497198e-9),
];

fn wilcoxon() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut checked = 0;
    let mut worst = 0f64;
    while checked < 500 {
        let n = rng.random_range(2..=12usize);
        // Coarse grids give ties and zeros; fine grids give distinct values.
        let grid = if rng.random::<bool>() { 5 } else { 1_000_000 };
        let ab: Vec<(i64, i64)> = (0..n)
            .map(|_| (rng.random_range(0..=grid), rng.random_range(0..=grid)))
            .collect();
        let diffs: Vec<i64> = ab.iter().map(|(a, b)| a - b).collect();
        let Some(oracle) = enumeration_p(&diffs) else {
            continue;
        };
        let pairs: Vec<(f64, f64)> = ab
            .iter()
            .map(|&(a, b)| (a as f64 / grid as f64, b as f64 / grid as f64))
            .collect();
        let r = paired_wilcoxon(&pairs).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        worst = worst.max((r.p - oracle).abs());
        checked += 1;
    }
    let mut worst_normal = 0f64;
    for (j, n_used, w, _z, p) in NORMAL_REFERENCE {
        let pairs: Vec<(f64, f64)> = (0..100i64)
            .map(|i| (((37 * i + 11 * j) % 23 - 11 + j) as f64 / 10.0, 0.0))
            .collect();
        let r = paired_wilcoxon(&pairs).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApprox);
        assert_eq!(r.n_pairs_used, n_used);
        assert_eq!(r.w_plus, w);
        worst_normal = worst_normal.max((r.p - p).abs());
    }
    outcome(
        worst <= 1e-12 && worst_normal <= 1e-9,
        format!(
            "{checked} exact cases, max |p - enumeration| = {worst:.1e}; n = 100 normal cases, max |p - reference| = {worst_normal:.1e}"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn random_design(rng: &mut ChaCha8Rng) -> Vec<LmmObs> {
    loop {
        let n_news = rng.random_range(2..=6usize);
        let n_cond = rng.random_range(2..=4usize);
        let false_news: Vec<bool> = (0..n_news).map(|i| i == 0 || (i > 1 && rng.random::<bool>())).collect();
        let keep = if rng.random::<bool>() { 1.0 } else { 0.8 };
        let u: Vec<f64> = (0..n_news).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let v: Vec<f64> = (0..n_cond).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut obs = Vec::new();
        for news in 0..n_news {
            for condition in 0..n_cond {
                for image in [false, true] {
                    if rng.random::<f64>() >= keep {
                        continue;
                    }
                    let fal = false_news[news];
                    let y = 0.45
                        + if image { 0.03 } else { 0.0 }
                        + if image && fal { 0.08 } else { 0.0 }
                        + u[news]
                        + v[condition]
                        + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    obs.push(LmmObs {
                        y,
                        image,
                        false_news: fal,
                        news,
                        condition,
                    });
                }
            }
        }
        let covers = |f: &dyn Fn(&LmmObs) -> usize, n: usize| (0..n).all(|k| obs.iter().any(|o| f(o) == k));
        if covers(&|o| o.news, n_news) && covers(&|o| o.condition, n_cond) && LmmData::new(&obs).is_ok() {
            return obs;
        }
    }
}

/// Dense GLS: beta = (X' V^-1 X)^-1 X' V^-1 y with V built element by element.
fn dense_gls(obs: &[LmmObs], vn: f64, vc: f64, vr: f64) -> ([f64; 4], [f64; 4]) {
    let n = obs.len();
    let x = DMatrix::from_fn(n, 4, |i, j| {
        let o = &obs[i];
        let (img, fal) = (o.image as u8 as f64, o.false_news as u8 as f64);
        [1.0, img, fal, img * fal][j]
    });
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.y));
    let v = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (&obs[i], &obs[j]);
        let mut s = 0.0;
        if a.news == b.news {
            s += vn;
        }
        if a.condition == b.condition {
            s += vc;
        }
        if i == j {
            s += vr;
        }
        s
    });
    let vinv = v.try_inverse().expect("V is positive definite");
    let xtvx = x.transpose() * &vinv * &x;
    let cov = xtvx.try_inverse().expect("X'V^-1X invertible");
    let beta = &cov * x.transpose() * &vinv * y;
    (
        std::array::from_fn(|i| beta[i]),
        std::array::from_fn(|i| cov[(i, i)].sqrt()),
    )
}

fn simulate_large(seed: u64) -> Vec<LmmObs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_news, n_cond) = (200, 25);
    let u: Vec<f64> = (0..n_news).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let v: Vec<f64> = (0..n_cond).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut obs = Vec::with_capacity(n_news * n_cond * 2);
    for news in 0..n_news {
        let fal = news >= n_news / 2;
        for condition in 0..n_cond {
            for image in [false, true] {
                let mean = 0.45
                    + if image { 0.02 } else { 0.0 }
                    + if fal { -0.04 } else { 0.0 }
                    + if image && fal { 0.05 } else { 0.0 };
                obs.push(LmmObs {
                    y: mean + u[news] + v[condition] + 0.1 * rng.sample::<f64, _>(StandardNormal),
                    image,
                    false_news: fal,
                    news,
                    condition,
                });
            }
        }
    }
    obs
}

fn lmm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_gls = 0f64;
    let mut worst_grad = 0f64;
    let mut worst_fd = 0f64;
    for _ in 0..50 {
        let obs = random_design(&mut rng);
        let data = LmmData::new(&obs).unwrap();
        // Some designs get a zero component to cover the boundary.
        let vn = if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.001..0.05) };
        let vc = if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.001..0.05) };
        let vr = rng.random_range(0.002..0.05);
        let (beta, se) = dense_gls(&obs, vn, vc, vr);
        let est = data.gls_at(vn, vc, vr).unwrap();
        for (a, b) in est.beta.to_array().iter().zip(&beta).chain(est.se.to_array().iter().zip(&se)) {
            worst_gls = worst_gls.max((a - b).abs());
        }

        let fit = fit_lmm(&data).unwrap();
        let theta = [fit.var_news / fit.var_resid, fit.var_condition / fit.var_resid];
        let g = data.gradient(theta).unwrap();
        let projected: f64 = (0..2)
            .map(|i| if theta[i] <= 0.0 && g[i] > 0.0 { 0.0 } else { g[i] })
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        worst_grad = worst_grad.max(projected);
        // Cross-check the analytic gradient by central differences away from the bound.
        for i in 0..2 {
            if theta[i] > 1e-4 {
                let h = 1e-6 * theta[i].max(1.0);
                let (mut up, mut dn) = (theta, theta);
                up[i] += h;
                dn[i] -= h;
                let fd = (data.criterion(up).unwrap() - data.criterion(dn).unwrap()) / (2.0 * h);
                worst_fd = worst_fd.max((fd - g[i]).abs());
            }
        }
    }

    let reps = 200u64;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16);
    let seeds: Vec<u64> = (0..reps).map(|r| 9000 + r).collect();
    let chunk = seeds.len().div_ceil(threads);
    let results: Vec<(bool, bool)> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let data = LmmData::new(&simulate_large(seed)).unwrap();
                            let fit = fit_lmm(&data).unwrap();
                            let half = 1.959963984540054 * fit.se.interaction;
                            let covered = (fit.beta.interaction - 0.05).abs() <= half;
                            (covered, fit.converged && fit.projected_gradient_norm < 1e-6)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let coverage = results.iter().filter(|r| r.0).count() as f64 / reps as f64;
    let stationary = results.iter().filter(|r| r.1).count();
    let ok = worst_gls < 1e-6 && worst_grad < 1e-6 && coverage >= 0.90;
    outcome(
        ok,
        format!(
            "max |GLS - dense oracle| = {worst_gls:.1e}, max projected gradient = {worst_grad:.1e} \
             (analytic vs FD {worst_fd:.1e}), beta3 coverage {:.1}% over {reps} replicates \
             ({stationary} stationary)",
            100.0 * coverage
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn fleiss_oracle(table: &[[i128; 5]]) -> Frac {
    let mut p_bar = Frac::int(0);
    let mut totals = [0i128; 5];
    let mut grand = 0i128;
    for row in table {
        let n: i128 = row.iter().sum();
        let agree: i128 = row.iter().map(|c| c * (c - 1)).sum();
        p_bar = p_bar.add(Frac::new(agree, n * (n - 1)));
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c;
        }
        grand += n;
    }
    let p_bar = p_bar.div(Frac::int(table.len() as i128));
    let p_e = totals
        .iter()
        .fold(Frac::int(0), |acc, &t| acc.add(Frac::new(t * t, grand * grand)));
    p_bar.sub(p_e).div(Frac::int(1).sub(p_e))
}

fn kappa() -> Outcome {
    // Unanimity, per item and for a whole table.
    let unanimous = per_item_kappa([
        ("a", vec![[10, 0, 0, 0, 0], [0, 0, 10, 0, 0], [0, 0, 0, 0, 10]]),
        ("b", vec![[0, 10, 0, 0, 0], [0, 10, 0, 0, 0]]),
    ]);
    let unanimity_ok = unanimous.mean == 1.0
        && unanimous.per_item_kappa.values().all(|&k| k == 1.0)
        && fleiss_kappa_table(&[[0, 0, 10, 0, 0], [0, 0, 10, 0, 0]]) == 1.0;

    // Uniform random ratings: 2000 items x 10 raters, 200 seeded tables.
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let reps = 200;
    let ks: Vec<f64> = (0..reps)
        .map(|_| {
            let table: Vec<[u32; 5]> = (0..2000)
                .map(|_| {
                    let mut row = [0u32; 5];
                    for _ in 0..10 {
                        row[rng.random_range(0..5)] += 1;
                    }
                    row
                })
                .collect();
            fleiss_kappa_table(&table)
        })
        .collect();
    let mean = ks.iter().sum::<f64>() / reps as f64;
    let sd = (ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let se = sd / (reps as f64).sqrt();
    let mc_ok = mean.abs() < 3.0 * se;

    let hand = [[6, 4, 0, 0, 0], [0, 0, 0, 5, 5]];
    let exact = fleiss_oracle(&hand.map(|r| r.map(|c| c as i128)));
    let got = fleiss_kappa_table(&hand);
    let hand_ok = (got - exact.to_f64()).abs() <= 1e-12;

    outcome(
        unanimity_ok && mc_ok && hand_ok,
        format!(
            "unanimity -> {}; random mean {mean:.5} (SE {se:.5}); hand table {got:.15} vs exact {}/{}",
            unanimous.mean, exact.num, exact.den
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn parser() -> Outcome {
    let out = run_bin(&["parse-check"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let re = regex::Regex::new(r"(\d+)/(\d+) fixtures passed").unwrap();
    let counts = re.captures(&stdout).map(|c| (c[1].parse::<usize>().unwrap(), c[2].parse::<usize>().unwrap()));
    let fixtures = reshare_core::parse::bundled_fixtures();
    let has_multi = fixtures
        .iter()
        .any(|f| f.expected == reshare_core::Rating::Invalid(reshare_core::InvalidReason::MultipleDistinct));
    let ok = out.status.success() && counts.is_some_and(|(a, b)| a == b && b == fixtures.len()) && has_multi;
    outcome(
        ok,
        format!(
            "{} (multi-rating transcript present: {has_multi})",
            stdout.lines().last().unwrap_or("no output")
        ),
    )
}

// 6 ------------------------------------------------------------------------

const DISTRIBUTION: [(&str, u32, u32, u32); 11] = [
    ("Economy", 24, 17, 41),
    ("Environment", 17, 19, 36),
    ("Foreign", 15, 16, 31),
    ("Health", 23, 20, 43),
    ("Law", 24, 18, 42),
    ("Politics", 22, 21, 43),
    ("Society", 24, 16, 40),
    ("Technology", 15, 14, 29),
    ("Image shows people", 51, 51, 102),
    ("Image shows no people", 49, 49, 98),
    ("Total", 100, 100, 200),
];

fn corpus_table() -> Outcome {
    let corpus = bundled_corpus();
    let out = run_bin(&["corpus-stats", "--corpus", corpus.to_str().unwrap()]);
    if !out.status.success() {
        return outcome(false, String::from_utf8_lossy(&out.stderr).to_string());
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let mut rows: BTreeMap<String, (u32, u32, u32)> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 {
            continue;
        }
        let nums: Vec<u32> = parts[parts.len() - 3..].iter().filter_map(|s| s.parse().ok()).collect();
        if nums.len() == 3 {
            rows.insert(parts[..parts.len() - 3].join(" "), (nums[0], nums[1], nums[2]));
        }
    }
    let mismatches: Vec<String> = DISTRIBUTION
        .iter()
        .filter(|(label, t, f, a)| rows.get(*label) != Some(&(*t, *f, *a)))
        .map(|(label, ..)| format!("{label}: got {:?}", rows.get(*label)))
        .collect();
    let ok = mismatches.is_empty() && rows.len() == DISTRIBUTION.len();
    outcome(
        ok,
        if ok {
            format!("all {} rows match", DISTRIBUTION.len())
        } else {
            format!("mismatches: {}", mismatches.join("; "))
        },
    )
}

// 7 ------------------------------------------------------------------------

fn recovery() -> Outcome {
    let spec = ScenarioSpec {
        policy: MockPolicy {
            base_yes: 0.45,
            delta_image: 0.03,
            delta_false_image: 0.09,
            ..Default::default()
        },
        n_news: 200,
        conditions: ConditionSelector::default(),
        completions_per_item: 10,
        seed: 7,
        ..Default::default()
    };
    let out = run_scenario(&spec).unwrap();
    let row = out.report.table1.iter().find(|r| r.model == POOLED).unwrap();
    let w = row.wilcoxon.ok().expect("wilcoxon");
    let l = row.lmm.ok().expect("lmm");
    let (inc_f, inc_t) = (*row.incr_false_pct.ok().unwrap(), *row.incr_true_pct.ok().unwrap());
    let (tf, imf) = *row.rates_false.ok().unwrap();
    let (tt, imt) = *row.rates_true.ok().unwrap();
    let (d_false, d_true) = (imf - tf, imt - tt);
    let ok = w.p < 0.001
        && w.z > 0.0
        && l.beta_interaction > 0.0
        && l.p_interaction < 0.01
        && inc_f > inc_t
        && (d_false - 0.12).abs() <= 0.03
        && (d_true - 0.03).abs() <= 0.03;
    outcome(
        ok,
        format!(
            "wilcoxon z = {:.2}, p = {:.1e}; beta3 = {:.4} (p = {:.1e}); increases {inc_f:.2}% false vs {inc_t:.2}% true; \
             yes-rate deltas {:.3} false (injected 0.120), {:.3} true (injected 0.030)",
            w.z, w.p, l.beta_interaction, l.p_interaction, d_false, d_true
        ),
    )
}

// 8 ------------------------------------------------------------------------

const TABLE_HEADERS: [(&str, &str); 5] = [
    ("table1.csv", "model,r,p,incr_false_pct,incr_true_pct,beta_interaction,p_interaction"),
    ("table2.csv", "model,factor,method,r,p,n"),
    ("table3.csv", "model,trait,modality,r,p,stars"),
    ("table6.csv", "model,veracity,modality,kappa_mean,kappa_std,n_items"),
    ("blank_control.csv", "model,news,r,p"),
];

fn live_report() -> Outcome {
    let server = FakeChatServer::start();
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let cfg = format!(
        r#"
corpus = "{corpus}"
output_dir = "{store}"
modalities = ["text", "image", "blank"]
m = 2
workers = 8

[[endpoints]]
name = "local-chat"
protocol = "openai-chat"
base_url = "{url}"
model = "chat-model-under-test"
auth_env = "RESHARE_ACCEPTANCE_KEY"
max_parallel = 16
[endpoints.retry]
max_attempts = 4
backoff_base_ms = 5
"#,
        corpus = bundled_corpus().display(),
        store = store.display(),
        url = server.base_url(),
    );
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, cfg).unwrap();
    let out = common::bin()
        .args(["run", "--config", cfg_path.to_str().unwrap(), "--analyze"])
        .env("RESHARE_ACCEPTANCE_KEY", "sk-local-test")
        .output()
        .unwrap();
    if !out.status.success() {
        return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let report_dir = store.join("report");
    let mut problems = Vec::new();
    for (file, header) in TABLE_HEADERS {
        match fs::read_to_string(report_dir.join(file)) {
            Ok(t) if t.lines().next() == Some(header) => {}
            Ok(t) => problems.push(format!("{file} header {:?}", t.lines().next())),
            Err(e) => problems.push(format!("{file}: {e}")),
        }
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    let rows = |t: &str| report[t].as_array().map(|a| a.len()).unwrap_or(0);
    // one model plus the pooled group
    let expected = [("table1", 2), ("table2", 10), ("table3", 32), ("table6", 8), ("blank_control", 6)];
    for (t, n) in expected {
        if rows(t) != n {
            problems.push(format!("{t} has {} rows, expected {n}", rows(t)));
        }
    }
    let unavailable = report.to_string().matches("\"unavailable\"").count();
    if unavailable > 0 {
        problems.push(format!("{unavailable} unavailable entries"));
    }
    let meta = &report["run_metadata"];
    let n_ratings = meta["n_ratings"].as_u64().unwrap_or(0);
    if n_ratings != 200 * 25 * 3 * 2 {
        problems.push(format!("n_ratings = {n_ratings}"));
    }
    if !report_dir.join("report.txt").exists() || !store.join("run.json").exists() {
        problems.push("report.txt or run.json missing".into());
    }
    let auth_ok = server.auth_headers.lock().unwrap().contains("Bearer sk-local-test");
    if !auth_ok {
        problems.push("bearer token never reached the server".into());
    }
    let requests = server.requests.load(Ordering::SeqCst);
    let images = server.image_requests.load(Ordering::SeqCst);
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{requests} HTTP requests ({images} with images, 429s retried), {n_ratings} ratings, all five tables complete"
            )
        } else {
            problems.join("; ")
        },
    )
}

// 9 ------------------------------------------------------------------------

fn mock_config(dir: &Path) -> std::path::PathBuf {
    let cfg = format!(
        r#"
corpus = "{corpus}"
output_dir = "{out}"
modalities = ["text", "image", "blank"]
m = 10
seed = 11
workers = 4

[[endpoints]]
name = "mock-a"
protocol = "mock"
[endpoints.mock]
delta_image = 0.03
delta_false_image = 0.09
invalid_rate = 0.02

[[endpoints]]
name = "mock-b"
protocol = "mock"
"#,
        corpus = bundled_corpus().display(),
        out = dir.join("store").display(),
    );
    let p = dir.join("run.toml");
    fs::write(&p, cfg).unwrap();
    p
}

/// Store files with timestamps blanked out.
fn normalized_store(store: &Path) -> BTreeMap<String, Vec<u8>> {
    let ts = regex::bytes::Regex::new(r#""created_at":"[^"]*""#).unwrap();
    let mut out = BTreeMap::new();
    for ep in ["mock-a", "mock-b"] {
        for f in ["completions.ndjson", "index", "failures.ndjson"] {
            let bytes = fs::read(store.join(ep).join(f)).unwrap_or_default();
            out.insert(format!("{ep}/{f}"), ts.replace_all(&bytes, &b"\"created_at\":\"\""[..]).into_owned());
        }
    }
    out.insert("run.json".into(), fs::read(store.join("run.json")).unwrap_or_default());
    out
}

fn committed_cells(store: &Path) -> usize {
    ["mock-a", "mock-b"]
        .iter()
        .map(|ep| fs::read_to_string(store.join(ep).join("index")).unwrap_or_default().lines().count())
        .sum()
}

fn resume() -> Outcome {
    let total_cells = 2 * 200 * 25 * 3;
    let reference = tempfile::tempdir().unwrap();
    let cfg = mock_config(reference.path());
    let start = Instant::now();
    let out = run_bin(&["run", "--config", cfg.to_str().unwrap()]);
    let full = start.elapsed();
    if !out.status.success() {
        return outcome(false, format!("reference run failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let expected = normalized_store(&reference.path().join("store"));

    let seed = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap()
        .as_nanos() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let work = tempfile::tempdir().unwrap();
    let cfg = mock_config(work.path());
    let store = work.path().join("store");
    let mut kills = Vec::new();
    // Two kills at random points, then a clean finish.
    for _ in 0..2 {
        let before = committed_cells(&store);
        let remaining = full.as_secs_f64() * (total_cells - before) as f64 / total_cells as f64;
        let wait = Duration::from_secs_f64(remaining * rng.random_range(0.1..0.8));
        let mut child = common::bin()
            .args(["run", "--config", cfg.to_str().unwrap()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        std::thread::sleep(wait);
        let _ = child.kill();
        let _ = child.wait();
        kills.push((wait.as_millis(), committed_cells(&store)));
    }
    let partial = kills.iter().any(|&(_, c)| c < total_cells);
    let out = run_bin(&["run", "--config", cfg.to_str().unwrap()]);
    if !out.status.success() {
        return outcome(false, format!("resumed run failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let got = normalized_store(&store);
    let differing: Vec<&String> = expected.keys().filter(|k| expected.get(*k) != got.get(*k)).collect();
    let ok = differing.is_empty() && partial;
    let kill_desc: Vec<String> = kills
        .iter()
        .map(|(ms, c)| format!("killed at {ms} ms with {c}/{total_cells} cells"))
        .collect();
    outcome(
        ok,
        format!(
            "{}; store {} (reference run {:.2}s, rng seed {seed})",
            kill_desc.join(", "),
            if differing.is_empty() {
                "identical modulo timestamps".to_string()
            } else {
                format!("differs in {differing:?}")
            },
            full.as_secs_f64()
        ),
    )
}
