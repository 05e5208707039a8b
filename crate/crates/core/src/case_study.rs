//! Virtual patient responses built from a completed trial, and replay of
//! designs against them.
//!
//! Every dose gets a fixed sequence of binary responses. The observed
//! responses at a dose are shuffled into the front of its sequence; the rest
//! are Bernoulli draws from a single toxicity probability sampled for that
//! dose. Replaying a design reads the `t`-th patient at dose `j` from
//! position `t` of sequence `j`, so different designs face the same
//! patients.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coherency::{sudden_changes, SUDDEN_CHANGE_THRESHOLD};
use crate::engine::{run_trial_with, Design, EngineError, NeverStop, ResponseStreams, TrialRecord};
use crate::inference::Method;
use crate::orderings::Dose;

#[derive(Debug, Error)]
pub enum CaseStudyError {
    #[error("invalid source data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("sequences cover {found} doses, design has {expected}")]
    Coverage { expected: usize, found: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn one_third() -> f64 {
    1.0 / 3.0
}

/// Patients and DLTs at one dose of the source trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseCounts {
    /// 1-based, row-major.
    pub dose_index: usize,
    pub n: u32,
    pub y: u32,
}

/// Per-dose results of a completed trial. Doses that are not listed had no
/// patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceTrialData {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "one_third")]
    pub theta: f64,
    /// Sequence length; defaults to the number of patients treated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_patients: Option<u32>,
    pub doses: Vec<DoseCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl SourceTrialData {
    pub fn k(&self) -> usize {
        self.rows * self.cols
    }

    /// Counts per dose in dose order, zero where unlisted.
    pub fn counts(&self) -> Vec<(u32, u32)> {
        let mut out = vec![(0, 0); self.k()];
        for d in &self.doses {
            out[d.dose_index - 1] = (d.n, d.y);
        }
        out
    }

    pub fn treated(&self) -> u32 {
        self.doses.iter().map(|d| d.n).sum()
    }

    pub fn total(&self) -> u32 {
        self.total_patients.unwrap_or_else(|| self.treated())
    }

    pub fn validate(&self) -> Result<(), CaseStudyError> {
        let fail = |m: String| Err(CaseStudyError::Data(m));
        if self.k() == 0 {
            return fail("empty grid".into());
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return fail(format!("theta {} outside (0, 1)", self.theta));
        }
        let mut seen = vec![false; self.k()];
        for d in &self.doses {
            if d.dose_index == 0 || d.dose_index > self.k() {
                return fail(format!("dose {} outside 1..={}", d.dose_index, self.k()));
            }
            if std::mem::replace(&mut seen[d.dose_index - 1], true) {
                return fail(format!("dose {} listed twice", d.dose_index));
            }
            if d.y > d.n {
                return fail(format!(
                    "dose {}: {} DLTs among {} patients",
                    d.dose_index, d.y, d.n
                ));
            }
        }
        if self.total() != self.treated() {
            return fail(format!(
                "total_patients is {} but {} patients are listed",
                self.total(),
                self.treated()
            ));
        }
        if self.total() == 0 {
            return fail("no patients".into());
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, CaseStudyError> {
        let text = std::fs::read_to_string(path).map_err(|source| CaseStudyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let data: Self = serde_json::from_str(&text).map_err(|source| CaseStudyError::Json {
            path: path.display().to_string(),
            source,
        })?;
        data.validate()?;
        Ok(data)
    }

    /// Reads `dose_index,n,y` rows; grid and target come from the caller.
    pub fn from_csv<R: Read>(
        reader: R,
        rows: usize,
        cols: usize,
        theta: f64,
    ) -> Result<Self, CaseStudyError> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let doses = r
            .deserialize::<DoseCounts>()
            .collect::<Result<Vec<_>, _>>()?;
        let data = Self {
            rows,
            cols,
            theta,
            total_patients: None,
            doses,
            description: None,
        };
        data.validate()?;
        Ok(data)
    }
}

/// One response sequence per dose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSequences {
    pub seed: u64,
    pub sequences: Vec<Vec<bool>>,
}

impl ResponseSequences {
    pub fn streams(&self) -> ResponseStreams {
        ResponseStreams::new(self.sequences.clone())
    }
}

/// Builds response sequences; a pure function of `(data, seed)`.
///
/// Each dose uses its own random stream, so the shuffle and tail of one
/// dose do not depend on any other dose.
pub fn generate_sequences(
    data: &SourceTrialData,
    seed: u64,
) -> Result<ResponseSequences, CaseStudyError> {
    data.validate()?;
    let total = data.total() as usize;
    let sequences = data
        .counts()
        .into_iter()
        .enumerate()
        .map(|(j, (n, y))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            dose_sequence(n, y, total, &mut rng)
        })
        .collect();
    Ok(ResponseSequences { seed, sequences })
}

fn dose_sequence(n: u32, y: u32, total: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut seq: Vec<bool> = (0..n).map(|i| i < y).collect();
    seq.shuffle(rng);
    if seq.len() < total {
        let (a, b) = if n == 0 {
            (3.0, 3.0)
        } else {
            (1.0 + y as f64, 1.0 + (n - y) as f64)
        };
        let p = Beta::new(a, b)
            .expect("shape parameters are positive")
            .sample(rng);
        seq.extend((seq.len()..total).map(|_| rng.gen::<f64>() < p));
    }
    seq
}

/// Runs `design` against fixed sequences. The first `forced.len()` cohorts
/// go to the given doses regardless of the model.
pub fn replay(
    design: &Design,
    sequences: &ResponseSequences,
    forced: &[Dose],
) -> Result<TrialRecord, CaseStudyError> {
    if sequences.sequences.len() != design.k() {
        return Err(CaseStudyError::Coverage {
            expected: design.k(),
            found: sequences.sequences.len(),
        });
    }
    let mut source = sequences.streams();
    Ok(run_trial_with(design, &mut source, forced, &NeverStop)?)
}

/// Estimate change larger than the sudden-change threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuddenChange {
    /// Cohort whose outcome caused the change.
    pub cohort: usize,
    pub dose: Dose,
    pub delta: f64,
}

/// Range of per-dose estimate changes across a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub min_delta: f64,
    pub max_delta: f64,
    pub sudden: Vec<SuddenChange>,
}

impl ChangeSummary {
    pub fn from_record(record: &TrialRecord) -> Self {
        let path = record.estimate_path();
        let changes = record.estimate_changes();
        let sudden = path
            .windows(2)
            .enumerate()
            .flat_map(|(c, w)| {
                sudden_changes(w[0], w[1], SUDDEN_CHANGE_THRESHOLD)
                    .into_iter()
                    .map(move |(dose, delta)| SuddenChange {
                        cohort: c + 1,
                        dose,
                        delta,
                    })
            })
            .collect();
        Self {
            min_delta: changes.iter().copied().fold(0.0, f64::min),
            max_delta: changes.iter().copied().fold(0.0, f64::max),
            sudden,
        }
    }
}

/// Headline numbers for one replayed trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub method: Method,
    pub recommendation: Dose,
    pub allocations: Vec<Dose>,
    pub n: Vec<u32>,
    pub y: Vec<u32>,
    pub coherency_events: usize,
    pub estimation_events: usize,
    pub cohorts_with_estimation_events: usize,
    pub changes: ChangeSummary,
}

impl ReplaySummary {
    pub fn from_record(record: &TrialRecord) -> Self {
        Self {
            method: record.method,
            recommendation: record.recommendation,
            allocations: record.allocations(),
            n: record.n.clone(),
            y: record.y.clone(),
            coherency_events: record.audit.events.len(),
            estimation_events: record
                .audit
                .events
                .iter()
                .filter(|e| e.kind.is_estimation())
                .count(),
            cohorts_with_estimation_events: record.audit.cohorts_with_estimation_events,
            changes: ChangeSummary::from_record(record),
        }
    }
}
