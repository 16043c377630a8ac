//! `mdmsim` command-line interface.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when the
//! verification suite reports a failing check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mdmsim::harness::{self, report, ExperimentConfig, LanguageSpec};
use mdmsim::{exec, verify};

#[derive(Parser)]
#[command(
    name = "mdmsim",
    about = "Masked-diffusion sampling simulator with exact posterior oracles over formal languages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a language from a config and emit its JSON document.
    GenLang {
        /// Experiment config (or bare language spec) JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Override the language generation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for language.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a single-cell config and print its metric rows to stdout.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = default).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output format for the printed rows.
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Record wall-clock timing in rows (breaks byte-identical output).
        #[arg(long)]
        timing: bool,
    },
    /// Run the full experiment grid and emit CSV/JSONL/SVG artifacts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output directory (defaults to the config's output_dir or ".").
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Run the lemma/bound property suites; exits 2 on any failure.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Render SVG charts from a previously emitted rows file.
    Plot {
        /// results.csv or results.jsonl.
        rows: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Input format; inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenLang { config, seed, out } => {
            let text = std::fs::read_to_string(&config)?;
            let (mut spec, len) = language_spec_from(&text)?;
            if let Some(seed) = seed {
                match &mut spec {
                    LanguageSpec::Ngram { seed: s, .. } | LanguageSpec::Hmm { seed: s, .. } => {
                        *s = seed
                    }
                    LanguageSpec::Interval { .. } => {}
                }
            }
            let doc = match spec {
                LanguageSpec::Ngram {
                    order,
                    vocab_size,
                    temperature,
                    threshold,
                    seed,
                } => mdmsim::lang::NGramModel::generate(order, vocab_size, temperature, threshold, seed)?
                    .to_doc(),
                LanguageSpec::Hmm {
                    num_states,
                    vocab_size,
                    temperature,
                    threshold,
                    seed,
                } => mdmsim::lang::HmmModel::generate(num_states, vocab_size, temperature, threshold, seed)?
                    .to_doc(),
                LanguageSpec::Interval { interval_len } => {
                    mdmsim::lang::IntervalLanguage::new(len, interval_len)?.to_doc()
                }
            };
            std::fs::create_dir_all(&out)?;
            let path = out.join("language.json");
            std::fs::write(&path, doc.to_json())?;
            eprintln!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample {
            config,
            seed,
            jobs,
            format,
            timing,
        } => {
            exec::configure_jobs(jobs);
            let cfg = load_config(&config, seed)?;
            if cfg.lengths.len() != 1 || cfg.samplers.len() != 1 || cfg.schedules.len() > 1 {
                anyhow::bail!(
                    "`sample` runs exactly one cell: use one length, one sampler, and at most one schedule"
                );
            }
            cfg.validate()?;
            let rows = harness::run_sweep_with(&cfg, harness::SweepOptions { timing })?;
            let mut stdout = std::io::stdout().lock();
            match format {
                Format::Jsonl => {
                    use std::io::Write;
                    for row in &rows {
                        writeln!(stdout, "{}", serde_json::to_string(row)?)?;
                    }
                }
                Format::Csv => {
                    let mut writer = csv::Writer::from_writer(stdout);
                    for row in &rows {
                        writer.serialize(row)?;
                    }
                    writer.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            seed,
            jobs,
            out,
            timing,
        } => {
            exec::configure_jobs(jobs);
            let cfg = load_config(&config, seed)?;
            let out_dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let rows = harness::run_sweep_with(&cfg, harness::SweepOptions { timing })?;
            let written = report::emit_report(&rows, &cfg.hash(), &out_dir)?;
            eprintln!(
                "{} rows; wrote {}",
                rows.len(),
                written
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed, jobs } => {
            exec::configure_jobs(jobs);
            let outcomes = verify::run_all(seed.unwrap_or(0), 10_000);
            let mut all_passed = true;
            for o in &outcomes {
                println!(
                    "{} {} - {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                );
                all_passed &= o.passed;
            }
            Ok(if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Plot { rows, out, format } => {
            let format = format.unwrap_or_else(|| {
                if rows.extension().is_some_and(|e| e == "jsonl") {
                    Format::Jsonl
                } else {
                    Format::Csv
                }
            });
            let parsed = match format {
                Format::Csv => report::read_csv(&rows)?,
                Format::Jsonl => report::read_jsonl(&rows)?,
            };
            if parsed.is_empty() {
                anyhow::bail!("no rows in {}", rows.display());
            }
            std::fs::create_dir_all(&out)?;
            let mut metrics: Vec<String> = parsed.iter().map(|r| r.metric.clone()).collect();
            metrics.sort();
            metrics.dedup();
            for metric in metrics {
                let subset: Vec<&harness::ResultRow> =
                    parsed.iter().filter(|r| r.metric == metric).collect();
                let svg = report::render_chart(&metric, &subset, "replot");
                let path = out.join(format!("{metric}.svg"));
                std::fs::write(&path, svg)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &PathBuf, seed_override: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = seed_override {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

/// Accept either a full experiment config or a bare language spec;
/// returns the spec plus a default length for length-dependent languages.
fn language_spec_from(text: &str) -> anyhow::Result<(LanguageSpec, usize)> {
    if let Ok(cfg) = serde_json::from_str::<ExperimentConfig>(text) {
        let len = cfg.lengths.first().copied().unwrap_or(0);
        return Ok((cfg.language, len));
    }
    let spec: LanguageSpec = serde_json::from_str(text)?;
    let len = match &spec {
        LanguageSpec::Interval { interval_len } => *interval_len,
        _ => 0,
    };
    Ok((spec, len))
}
