//! Batch commands: simulation studies, case-study replay and ordering
//! listings. Each writes its artefacts to disk and returns a report.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pocrm_core::case_study::{generate_sequences, replay, ReplaySummary, SourceTrialData};
use pocrm_core::orderings::{
    standard_orderings, toxicity_sets, validate_sequences, OrderingsFile, ToxicitySets, Violation,
};
use pocrm_core::simulator::{mean_rows, run_study, write_csv, OperatingCharacteristics, Scenario};
use pocrm_core::{Design, DesignConfig, DoseGrid, Method};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodChoice {
    Both,
    Selection,
    Averaging,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Both => vec![Method::Selection, Method::Averaging],
            MethodChoice::Selection => vec![Method::Selection],
            MethodChoice::Averaging => vec![Method::Averaging],
        }
    }
}

pub fn read_config(path: &Path) -> Result<DesignConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing design config {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    use std::io::Write;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Loads scenario files, expanding directories to their `*.json` entries.
pub fn load_scenarios(paths: &[PathBuf]) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            out.extend(
                Scenario::load_dir(path).with_context(|| format!("loading {}", path.display()))?,
            );
        } else {
            out.push(
                Scenario::from_file(path).with_context(|| format!("loading {}", path.display()))?,
            );
        }
    }
    if out.is_empty() {
        bail!("no scenarios found");
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub config: PathBuf,
    pub scenarios: Vec<PathBuf>,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub reps: usize,
    pub config: DesignConfig,
    pub rows: Vec<OperatingCharacteristics>,
    /// Per-method averages over scenarios.
    pub means: Vec<OperatingCharacteristics>,
}

/// Runs every scenario under every requested method and writes `oc.csv`
/// and `oc.json` into `opts.out`. A scenario carrying its own target
/// overrides the configured one.
pub fn simulate(opts: &SimulateOptions) -> Result<SimulationReport> {
    if opts.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let config = read_config(&opts.config)?;
    let scenarios = load_scenarios(&opts.scenarios)?;
    let base = Design::new(config.clone()).context("invalid design config")?;
    let mut rows = Vec::with_capacity(scenarios.len() * opts.methods.len());
    for scenario in &scenarios {
        let design = match scenario.theta {
            Some(theta) if theta != config.theta => {
                tracing::info!(scenario = %scenario.label, theta, "using scenario target");
                Design::new(DesignConfig {
                    theta,
                    ..config.clone()
                })?
            }
            _ => base.clone(),
        };
        for &method in &opts.methods {
            tracing::info!(scenario = %scenario.label, %method, reps = opts.reps, "simulating");
            let oc = run_study(
                &design.with_method(method),
                scenario,
                opts.reps,
                opts.seed,
                opts.jobs,
            )
            .with_context(|| format!("scenario {}", scenario.label))?;
            rows.push(oc);
        }
    }
    let report = SimulationReport {
        seed: opts.seed,
        reps: opts.reps,
        config,
        means: mean_rows(&rows),
        rows,
    };
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let csv_path = opts.out.join("oc.csv");
    let file =
        File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(&report.rows, BufWriter::new(file))?;
    write_json(&opts.out.join("oc.json"), &report)?;
    Ok(report)
}

/// Reads source trial counts from JSON, or from CSV using the grid and
/// target of `config`.
pub fn load_source(path: &Path, config: &DesignConfig) -> Result<SourceTrialData> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let data = if is_csv {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        SourceTrialData::from_csv(file, config.rows, config.cols, config.theta)?
    } else {
        SourceTrialData::from_json_file(path)?
    };
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub data: PathBuf,
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    pub seed: u64,
    pub theta: f64,
    pub total_patients: u32,
    pub summaries: Vec<ReplaySummary>,
}

/// Regenerates patient responses from the source counts and replays the
/// trial under both methods on the same responses.
///
/// Writes `sequences.json`, one `<method>.json` trial record and one
/// `<method>_coherency.csv` per method, and `summary.json`.
pub fn replay_case_study(opts: &ReplayOptions) -> Result<ReplayReport> {
    let mut config = read_config(&opts.config)?;
    let data = load_source(&opts.data, &config)?;
    if (data.rows, data.cols) != (config.rows, config.cols) {
        bail!(
            "source data grid {}x{} does not match config {}x{}",
            data.rows,
            data.cols,
            config.rows,
            config.cols
        );
    }
    if data.theta != config.theta {
        tracing::info!(theta = data.theta, "using source trial target");
        config.theta = data.theta;
    }
    let sequences = generate_sequences(&data, opts.seed)?;
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    write_json(&opts.out.join("sequences.json"), &sequences)?;

    let mut summaries = Vec::new();
    for method in [Method::Selection, Method::Averaging] {
        let design = Design::new(DesignConfig {
            method,
            ..config.clone()
        })?;
        let record = replay(&design, &sequences, &[])?;
        write_json(&opts.out.join(format!("{method}.json")), &record)?;
        fs::write(
            opts.out.join(format!("{method}_coherency.csv")),
            record.audit.to_csv()?,
        )?;
        summaries.push(ReplaySummary::from_record(&record));
    }
    let report = ReplayReport {
        seed: opts.seed,
        theta: config.theta,
        total_patients: data.total(),
        summaries,
    };
    write_json(&opts.out.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingsReport {
    pub orderings: OrderingsFile,
    pub distinct: usize,
    pub toxicity_sets: ToxicitySets,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

/// Standard orderings for a grid, or the contents of `file` after
/// validation. Violations are reported rather than raised.
pub fn orderings(
    rows: usize,
    cols: usize,
    file: Option<&Path>,
    deduplicate: bool,
) -> Result<OrderingsReport> {
    let (grid, set) = match file {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: OrderingsFile = serde_json::from_str(&text)?;
            let grid = doc.grid()?;
            let violations = validate_sequences(&grid, &doc.orderings);
            if !violations.is_empty() {
                return Ok(OrderingsReport {
                    distinct: 0,
                    toxicity_sets: ToxicitySets {
                        nu: vec![],
                        xi: vec![],
                    },
                    orderings: doc,
                    violations,
                });
            }
            doc.into_set()?
        }
        None => {
            let grid = DoseGrid::new(rows, cols)?;
            let set = standard_orderings(&grid);
            (grid, set)
        }
    };
    let set = if deduplicate { set.deduplicated() } else { set };
    Ok(OrderingsReport {
        orderings: OrderingsFile::from_set(&grid, &set),
        distinct: set.deduplicated().len(),
        toxicity_sets: toxicity_sets(&set),
        violations: Vec::new(),
    })
}
