//! Replicated trial studies and their operating characteristics.
//!
//! Each replication draws its own random stream from the master seed and
//! the replication index, so results do not depend on thread count or
//! scheduling. Patient responses are pre-drawn per dose from uniforms that
//! do not depend on the method, which gives common random numbers when two
//! methods are run on the same seed.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_trial, Design, EngineError, ResponseStreams, TrialRecord};
use crate::inference::Method;

const CLASS_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario {label:?}: {reason}")]
    Scenario { label: String, reason: String },
    #[error("replication {rep} failed: {source}")]
    Replication {
        rep: usize,
        #[source]
        source: EngineError,
    },
    #[error("need at least one replication")]
    NoReplications,
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// True toxicity probabilities on a dose grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, drug A along rows.
    pub truth: Vec<f64>,
    /// Target rate; falls back to the design's when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Scenario {
    pub fn new(label: impl Into<String>, rows: usize, cols: usize, truth: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            rows,
            cols,
            truth,
            theta: None,
            description: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let fail = |reason: String| SimulationError::Scenario {
            label: self.label.clone(),
            reason,
        };
        if self.rows * self.cols != self.truth.len() || self.truth.is_empty() {
            return Err(fail(format!(
                "{}x{} grid but {} probabilities",
                self.rows,
                self.cols,
                self.truth.len()
            )));
        }
        if let Some(p) = self.truth.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(fail(format!("probability {p} outside (0, 1)")));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t < 1.0) {
                return Err(fail(format!("theta {t} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, SimulationError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimulationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let s: Scenario = serde_json::from_str(&text).map_err(|source| SimulationError::Json {
            path: path.display().to_string(),
            source,
        })?;
        s.validate()?;
        Ok(s)
    }

    /// Every `*.json` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, SimulationError> {
        let io = |source| SimulationError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        paths.iter().map(|p| Self::from_file(p)).collect()
    }
}

/// Classification of one dose against the target rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseClass {
    pub correct: bool,
    pub acceptable: bool,
    pub overly_toxic: bool,
}

/// Correct: equals `theta`. Acceptable: within `[theta - 0.1, theta]`.
/// Overly toxic: strictly above `1.1 * theta`.
pub fn classify_doses(truth: &[f64], theta: f64) -> Vec<DoseClass> {
    truth
        .iter()
        .map(|&p| DoseClass {
            correct: (p - theta).abs() <= CLASS_EPS,
            acceptable: p >= theta - 0.1 - CLASS_EPS && p <= theta + CLASS_EPS,
            overly_toxic: p > 1.1 * theta + CLASS_EPS,
        })
        .collect()
}

/// Pre-drawn responses for one replication: `sample_size` per dose.
///
/// Uniforms are drawn dose by dose from a stream keyed on `(seed, rep)`; a
/// patient is a DLT when its uniform falls below the dose's truth.
pub fn replication_responses(
    truth: &[f64],
    sample_size: usize,
    seed: u64,
    rep: usize,
) -> ResponseStreams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    let streams = truth
        .iter()
        .map(|&p| (0..sample_size).map(|_| rng.gen::<f64>() < p).collect())
        .collect();
    ResponseStreams::new(streams)
}

/// Runs replication `rep` of a study.
pub fn simulate_replication(
    design: &Design,
    scenario: &Scenario,
    seed: u64,
    rep: usize,
) -> Result<TrialRecord, SimulationError> {
    let mut source =
        replication_responses(&scenario.truth, design.config().sample_size(), seed, rep);
    run_trial(design, &mut source).map_err(|source| SimulationError::Replication { rep, source })
}

/// Per-replication quantities that feed the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub recommendation: usize,
    pub overly_toxic_patients: u32,
    pub rmse: f64,
    pub estimation_incoherent: bool,
    pub incoherent_cohorts: usize,
    pub max_magnitude: f64,
    pub escalation_incoherent: bool,
}

impl ReplicationOutcome {
    pub fn from_record(record: &TrialRecord, truth: &[f64], classes: &[DoseClass]) -> Self {
        let est = &record.terminal.estimates;
        let mse = est
            .iter()
            .zip(truth)
            .map(|(e, t)| (e - t).powi(2))
            .sum::<f64>()
            / truth.len() as f64;
        let overly = record
            .n
            .iter()
            .zip(classes)
            .filter(|(_, c)| c.overly_toxic)
            .map(|(n, _)| n)
            .sum();
        Self {
            recommendation: record.recommendation.0,
            overly_toxic_patients: overly,
            rmse: mse.sqrt(),
            estimation_incoherent: record.audit.estimation_incoherent(),
            incoherent_cohorts: record.audit.cohorts_with_estimation_events,
            max_magnitude: record.audit.max_magnitude,
            escalation_incoherent: record.audit.escalation_incoherent(),
        }
    }
}

/// Distribution summary of per-trial maximum incoherency magnitudes (zero
/// for trials without estimation events).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeSummary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl MagnitudeSummary {
    fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let quantile = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(0.5),
            p95: quantile(0.95),
            max: v[v.len() - 1],
        }
    }
}

/// Aggregated results of one scenario under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub label: String,
    pub method: Method,
    pub n_reps: usize,
    pub seed: u64,
    pub sample_size: usize,
    /// Proportion of correct selections.
    pub pcs: f64,
    /// Proportion of acceptable selections.
    pub pas: f64,
    /// Proportion of overly toxic selections.
    pub pots: f64,
    /// Mean number of patients treated at overly toxic doses.
    pub nptot_mean: f64,
    /// Trials with at least one estimation-incoherent update.
    pub incoherent_proportion: f64,
    pub mean_incoherent_cohorts: f64,
    pub escalation_incoherent_proportion: f64,
    pub magnitude: MagnitudeSummary,
    /// Terminal-estimate RMSE over all doses, averaged over replications.
    pub rmse_mean: f64,
    /// How often each dose was recommended.
    pub selection: Vec<f64>,
}

impl OperatingCharacteristics {
    pub fn aggregate(
        label: &str,
        method: Method,
        seed: u64,
        sample_size: usize,
        k: usize,
        classes: &[DoseClass],
        reps: &[ReplicationOutcome],
    ) -> Self {
        let n = reps.len() as f64;
        let share = |f: &dyn Fn(&ReplicationOutcome) -> bool| {
            reps.iter().filter(|r| f(r)).count() as f64 / n
        };
        let mean = |f: &dyn Fn(&ReplicationOutcome) -> f64| reps.iter().map(f).sum::<f64>() / n;
        let class = |r: &ReplicationOutcome| classes[r.recommendation - 1];
        let mut selection = vec![0.0; k];
        for r in reps {
            selection[r.recommendation - 1] += 1.0 / n;
        }
        let magnitudes: Vec<f64> = reps.iter().map(|r| r.max_magnitude).collect();
        Self {
            label: label.to_string(),
            method,
            n_reps: reps.len(),
            seed,
            sample_size,
            pcs: share(&|r| class(r).correct),
            pas: share(&|r| class(r).acceptable),
            pots: share(&|r| class(r).overly_toxic),
            nptot_mean: mean(&|r| r.overly_toxic_patients as f64),
            incoherent_proportion: share(&|r| r.estimation_incoherent),
            mean_incoherent_cohorts: mean(&|r| r.incoherent_cohorts as f64),
            escalation_incoherent_proportion: share(&|r| r.escalation_incoherent),
            magnitude: MagnitudeSummary::from_values(&magnitudes),
            rmse_mean: mean(&|r| r.rmse),
            selection,
        }
    }
}

fn with_threads<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, SimulationError> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimulationError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

fn check_scenario(design: &Design, scenario: &Scenario) -> Result<f64, SimulationError> {
    scenario.validate()?;
    let config = design.config();
    let fail = |reason: String| SimulationError::Scenario {
        label: scenario.label.clone(),
        reason,
    };
    if (scenario.rows, scenario.cols) != (config.rows, config.cols) {
        return Err(fail(format!(
            "grid {}x{} does not match design {}x{}",
            scenario.rows, scenario.cols, config.rows, config.cols
        )));
    }
    if let Some(t) = scenario.theta {
        if (t - config.theta).abs() > CLASS_EPS {
            return Err(fail(format!(
                "scenario theta {t} differs from design theta {}",
                config.theta
            )));
        }
    }
    Ok(config.theta)
}

/// Per-replication outcomes in replication order.
///
/// `jobs = 1` runs serially on the calling thread; `0` uses the global
/// rayon pool; anything else a dedicated pool of that size.
pub fn run_replications(
    design: &Design,
    scenario: &Scenario,
    n_reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<ReplicationOutcome>, SimulationError> {
    if n_reps == 0 {
        return Err(SimulationError::NoReplications);
    }
    let theta = check_scenario(design, scenario)?;
    let classes = classify_doses(&scenario.truth, theta);
    let one = |rep: usize| {
        simulate_replication(design, scenario, seed, rep)
            .map(|r| ReplicationOutcome::from_record(&r, &scenario.truth, &classes))
    };
    if jobs == 1 {
        return (0..n_reps).map(one).collect();
    }
    with_threads(jobs, || (0..n_reps).into_par_iter().map(one).collect())?
}

pub fn run_study(
    design: &Design,
    scenario: &Scenario,
    n_reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<OperatingCharacteristics, SimulationError> {
    let reps = run_replications(design, scenario, n_reps, seed, jobs)?;
    let theta = design.config().theta;
    Ok(OperatingCharacteristics::aggregate(
        &scenario.label,
        design.method(),
        seed,
        design.config().sample_size(),
        design.k(),
        &classify_doses(&scenario.truth, theta),
        &reps,
    ))
}

/// Runs every scenario under every method on the same seed. Rows are
/// ordered scenario-major, then by `methods`.
pub fn compare_methods(
    design: &Design,
    methods: &[Method],
    scenarios: &[Scenario],
    n_reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<OperatingCharacteristics>, SimulationError> {
    let mut rows = Vec::with_capacity(scenarios.len() * methods.len());
    for scenario in scenarios {
        for &method in methods {
            rows.push(run_study(
                &design.with_method(method),
                scenario,
                n_reps,
                seed,
                jobs,
            )?);
        }
    }
    Ok(rows)
}

/// Arithmetic mean over scenarios, one row per method, labelled `mean`.
pub fn mean_rows(rows: &[OperatingCharacteristics]) -> Vec<OperatingCharacteristics> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let group: Vec<&OperatingCharacteristics> =
                rows.iter().filter(|r| r.method == method).collect();
            let n = group.len() as f64;
            let avg = |f: &dyn Fn(&OperatingCharacteristics) -> f64| {
                group.iter().map(|r| f(r)).sum::<f64>() / n
            };
            let first = group[0];
            OperatingCharacteristics {
                label: "mean".to_string(),
                method,
                n_reps: first.n_reps,
                seed: first.seed,
                sample_size: first.sample_size,
                pcs: avg(&|r| r.pcs),
                pas: avg(&|r| r.pas),
                pots: avg(&|r| r.pots),
                nptot_mean: avg(&|r| r.nptot_mean),
                incoherent_proportion: avg(&|r| r.incoherent_proportion),
                mean_incoherent_cohorts: avg(&|r| r.mean_incoherent_cohorts),
                escalation_incoherent_proportion: avg(&|r| r.escalation_incoherent_proportion),
                magnitude: MagnitudeSummary {
                    mean: avg(&|r| r.magnitude.mean),
                    median: avg(&|r| r.magnitude.median),
                    p95: avg(&|r| r.magnitude.p95),
                    max: group.iter().map(|r| r.magnitude.max).fold(0.0, f64::max),
                },
                rmse_mean: avg(&|r| r.rmse_mean),
                selection: Vec::new(),
            }
        })
        .collect()
}

pub const CSV_HEADER: [&str; 17] = [
    "label",
    "method",
    "n_reps",
    "seed",
    "sample_size",
    "pcs",
    "pas",
    "pots",
    "nptot_mean",
    "incoherent_proportion",
    "mean_incoherent_cohorts",
    "escalation_incoherent_proportion",
    "magnitude_mean",
    "magnitude_median",
    "magnitude_p95",
    "magnitude_max",
    "rmse_mean",
];

/// Writes rows with [`CSV_HEADER`]; floats use shortest round-trip form.
pub fn write_csv<W: Write>(
    rows: &[OperatingCharacteristics],
    out: W,
) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.method.to_string(),
            r.n_reps.to_string(),
            r.seed.to_string(),
            r.sample_size.to_string(),
            r.pcs.to_string(),
            r.pas.to_string(),
            r.pots.to_string(),
            r.nptot_mean.to_string(),
            r.incoherent_proportion.to_string(),
            r.mean_incoherent_cohorts.to_string(),
            r.escalation_incoherent_proportion.to_string(),
            r.magnitude.mean.to_string(),
            r.magnitude.median.to_string(),
            r.magnitude.p95.to_string(),
            r.magnitude.max.to_string(),
            r.rmse_mean.to_string(),
        ])?;
    }
    w.flush().map_err(|source| SimulationError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

pub fn to_csv_string(rows: &[OperatingCharacteristics]) -> Result<String, SimulationError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
