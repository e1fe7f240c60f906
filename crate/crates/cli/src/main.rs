use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use reshare_core::corpus::{corpus_stats, load_corpus_with, LoadOptions};
use reshare_core::parse::{bundled_fixtures, check_fixtures, load_fixtures};
use reshare_core::promptgen::Modality;
use reshare_core::runner::report::{render_text, write_report};
use reshare_core::runner::{analyze_store, ExecuteOptions, RunConfig, Runner};
use reshare_core::simulate::{power_curve, run_scenario, ScenarioSpec};

#[derive(Parser)]
#[command(name = "reshare", version, about = "Image-driven news resharing evaluation harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute (or resume) an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the bundled personality paragraphs.
        #[arg(long)]
        persona_file: Option<PathBuf>,
        /// Directory holding image_text.txt and text_only.txt.
        #[arg(long)]
        template_dir: Option<PathBuf>,
        /// Edge length of the blank control image.
        #[arg(long)]
        blank_size: Option<u32>,
        /// Comma-separated subset of text,image,blank.
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<Modality>>,
        #[arg(long)]
        workers: Option<usize>,
        /// Analyze the store and write the report once the run finishes.
        #[arg(long)]
        analyze: bool,
    },
    /// Build the report tables from a store.
    Analyze {
        #[arg(long)]
        store: PathBuf,
        /// Where to write report files (default: <store>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a synthetic scenario through the mock respondent.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also estimate rejection rates for these image deltas.
        #[arg(long, value_delimiter = ',')]
        power: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
    },
    /// Topic and image-content counts by veracity.
    CorpusStats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check the rating parser against labelled transcripts.
    ParseCheck {
        /// Defaults to the bundled fixture set.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run {
            config,
            persona_file,
            template_dir,
            blank_size,
            modalities,
            workers,
            analyze,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if persona_file.is_some() {
                cfg.persona_file = persona_file;
            }
            if template_dir.is_some() {
                cfg.template_dir = template_dir;
            }
            if let Some(b) = blank_size {
                cfg.blank_size = b;
            }
            if let Some(m) = modalities {
                cfg.modalities = m;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out_dir = cfg.output_dir.clone();
            let runner = Runner::new(cfg)?;
            let plan = runner.plan()?;
            eprintln!("{} cells to run", plan.len());
            let step = (plan.len() / 20).max(1);
            let progress = move |done: usize, total: usize| {
                if done.is_multiple_of(step) || done == total {
                    eprintln!("  {done}/{total}");
                }
            };
            let summary = runner.execute(
                &plan,
                &ExecuteOptions {
                    progress: Some(&progress),
                    ..Default::default()
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if analyze {
                report_store(&out_dir, None)?;
            }
            let failed = summary.endpoints.iter().any(|e| e.cells_failed > 0);
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Cmd::Analyze { store, out } => {
            report_store(&store, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate {
            scenario,
            out,
            power,
            replicates,
        } => {
            let spec = ScenarioSpec::load(&scenario)?;
            let outcome = run_scenario(&spec)?;
            print!("{}", render_text(&outcome.report));
            println!(
                "\nImplied increases: false {:.2}%, true {:.2}%",
                outcome.implied.incr_false_pct, outcome.implied.incr_true_pct
            );
            for c in &outcome.checks {
                println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(dir) = &out {
                write_report(&outcome.report, dir)?;
                let checks = dir.join("checks.json");
                std::fs::write(&checks, serde_json::to_string_pretty(&outcome.checks)? + "\n")
                    .with_context(|| checks.display().to_string())?;
            }
            if let Some(deltas) = power {
                let rows = power_curve(&spec, &deltas, replicates)?;
                println!("\ndelta_image  rejection_rate  (replicates = {replicates})");
                for r in &rows {
                    println!("{:>11.3}  {:>14.3}", r.delta, r.rejection_rate);
                }
                if let Some(dir) = &out {
                    let p = dir.join("power.json");
                    std::fs::write(&p, serde_json::to_string_pretty(&rows)? + "\n")
                        .with_context(|| p.display().to_string())?;
                }
            }
            let ok = outcome.checks.iter().all(|c| c.passed);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::CorpusStats { corpus, json } => {
            let c = load_corpus_with(&corpus, &LoadOptions::default())?;
            let stats = corpus_stats(&c);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{stats}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ParseCheck { fixtures } => {
            let set = match fixtures {
                Some(p) => load_fixtures(&p)?,
                None => bundled_fixtures(),
            };
            if set.is_empty() {
                bail!("fixture set is empty");
            }
            let outcomes = check_fixtures(&set);
            let passed = outcomes.iter().filter(|o| o.passed()).count();
            for o in outcomes.iter().filter(|o| !o.passed()) {
                println!("FAIL {}: expected {}, got {}", o.name, o.expected, o.got);
            }
            println!("{passed}/{} fixtures passed", outcomes.len());
            Ok(if passed == outcomes.len() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn report_store(store: &Path, out: Option<PathBuf>) -> Result<()> {
    let report = analyze_store(store)?;
    let dir = out.unwrap_or_else(|| store.join("report"));
    write_report(&report, &dir)?;
    print!("{}", render_text(&report));
    eprintln!("report written to {}", dir.display());
    Ok(())
}
