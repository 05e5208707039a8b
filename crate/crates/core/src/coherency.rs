//! Escalation and estimation coherency checks.
//!
//! After a cohort at dose `i`, every dose known to be less or more toxic than
//! `i` (the `nu_i ∪ xi_i` sets) must move its estimate down when no DLT was
//! seen and up when one was. Escalation checks flag moving into `xi_i` after
//! a DLT and into `nu_i` after a DLT-free cohort. A cohort with at least one
//! DLT counts as DLT-observed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orderings::{Dose, ToxicitySets};

/// Estimate moves larger than this are reported as sudden changes.
pub const SUDDEN_CHANGE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    EstimationUpAfterNoDlt,
    EstimationDownAfterDlt,
    EscalationAfterDlt,
    DeEscalationAfterNoDlt,
}

impl ViolationKind {
    pub fn is_estimation(self) -> bool {
        matches!(
            self,
            ViolationKind::EstimationUpAfterNoDlt | ViolationKind::EstimationDownAfterDlt
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::EstimationUpAfterNoDlt => "estimation-up-after-no-dlt",
            ViolationKind::EstimationDownAfterDlt => "estimation-down-after-dlt",
            ViolationKind::EscalationAfterDlt => "escalation-after-dlt",
            ViolationKind::DeEscalationAfterNoDlt => "de-escalation-after-no-dlt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherencyEvent {
    /// 1-based cohort whose outcome triggered the check.
    pub cohort: usize,
    /// Dose administered to that cohort.
    pub dose: Dose,
    pub dlt_observed: bool,
    /// Dose whose estimate moved (estimation kinds) or the next allocation
    /// (escalation kinds).
    pub affected: Dose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new: Option<f64>,
    pub kind: ViolationKind,
    /// `|new - previous|`; zero for escalation kinds.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoherencyReport {
    pub events: Vec<CoherencyEvent>,
    /// Any event at all.
    pub flagged: bool,
    pub cohorts_with_events: usize,
    pub cohorts_with_estimation_events: usize,
    /// Largest estimation-event magnitude, zero when there are none.
    pub max_magnitude: f64,
}

impl CoherencyReport {
    pub fn from_events(events: Vec<CoherencyEvent>) -> Self {
        let mut cohorts: Vec<usize> = events.iter().map(|e| e.cohort).collect();
        cohorts.sort_unstable();
        cohorts.dedup();
        let mut estimation: Vec<usize> = events
            .iter()
            .filter(|e| e.kind.is_estimation())
            .map(|e| e.cohort)
            .collect();
        estimation.sort_unstable();
        estimation.dedup();
        let max_magnitude = events
            .iter()
            .filter(|e| e.kind.is_estimation())
            .map(|e| e.magnitude)
            .fold(0.0, f64::max);
        Self {
            flagged: !events.is_empty(),
            cohorts_with_events: cohorts.len(),
            cohorts_with_estimation_events: estimation.len(),
            max_magnitude,
            events,
        }
    }

    pub fn estimation_incoherent(&self) -> bool {
        self.cohorts_with_estimation_events > 0
    }

    pub fn escalation_incoherent(&self) -> bool {
        self.events.iter().any(|e| !e.kind.is_estimation())
    }

    pub fn for_cohort(&self, cohort: usize) -> impl Iterator<Item = &CoherencyEvent> {
        self.events.iter().filter(move |e| e.cohort == cohort)
    }

    /// One row per event.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cohort",
            "dose",
            "dlt_observed",
            "affected",
            "kind",
            "previous",
            "new",
            "magnitude",
        ])?;
        for e in &self.events {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                e.cohort.to_string(),
                e.dose.number().to_string(),
                e.dlt_observed.to_string(),
                e.affected.number().to_string(),
                e.kind.as_str().to_string(),
                opt(e.previous),
                opt(e.new),
                e.magnitude.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("expected {expected} snapshots for {cohorts} cohorts, got {found}")]
    SnapshotCount {
        cohorts: usize,
        expected: usize,
        found: usize,
    },
    #[error("{allocations} allocations but {outcomes} outcome groups")]
    OutcomeCount { allocations: usize, outcomes: usize },
    #[error("snapshot {index} has {found} estimates, expected {expected}")]
    EstimateLength {
        index: usize,
        expected: usize,
        found: usize,
    },
}

/// Wrong-direction estimate moves for doses in `nu_i ∪ xi_i` after a cohort
/// at `dose`. Moves no larger than `tolerance` are ignored.
pub fn check_estimation(
    cohort: usize,
    previous: &[f64],
    next: &[f64],
    dose: Dose,
    dlt_observed: bool,
    sets: &ToxicitySets,
    tolerance: f64,
) -> Vec<CoherencyEvent> {
    sets.related(dose)
        .into_iter()
        .filter_map(|j| {
            let (before, after) = (previous[j.index()], next[j.index()]);
            let change = after - before;
            let (wrong, kind) = if dlt_observed {
                (-change > tolerance, ViolationKind::EstimationDownAfterDlt)
            } else {
                (change > tolerance, ViolationKind::EstimationUpAfterNoDlt)
            };
            wrong.then(|| CoherencyEvent {
                cohort,
                dose,
                dlt_observed,
                affected: j,
                previous: Some(before),
                new: Some(after),
                kind,
                magnitude: change.abs(),
            })
        })
        .collect()
}

/// Escalation into `xi_i` after a DLT, or de-escalation into `nu_i` after none.
pub fn check_escalation(
    cohort: usize,
    dose: Dose,
    next_dose: Dose,
    dlt_observed: bool,
    sets: &ToxicitySets,
) -> Option<CoherencyEvent> {
    let kind = if dlt_observed && sets.more_toxic(dose).contains(&next_dose) {
        ViolationKind::EscalationAfterDlt
    } else if !dlt_observed && sets.less_toxic(dose).contains(&next_dose) {
        ViolationKind::DeEscalationAfterNoDlt
    } else {
        return None;
    };
    Some(CoherencyEvent {
        cohort,
        dose,
        dlt_observed,
        affected: next_dose,
        previous: None,
        new: None,
        kind,
        magnitude: 0.0,
    })
}

/// Events raised when cohort `c` (1-based) is entered: the escalation check
/// of the move from cohort `c - 1` into `c` (reported against cohort `c - 1`,
/// whose outcome it judges), then the estimation check of the update that
/// followed cohort `c`.
#[allow(clippy::too_many_arguments)]
pub fn cohort_events(
    cohort: usize,
    previous_cohort: Option<(Dose, bool)>,
    dose: Dose,
    dlt_observed: bool,
    estimates_before: &[f64],
    estimates_after: &[f64],
    sets: &ToxicitySets,
    tolerance: f64,
) -> Vec<CoherencyEvent> {
    let mut events = Vec::new();
    if let Some((prev_dose, prev_dlt)) = previous_cohort {
        events.extend(check_escalation(
            cohort - 1,
            prev_dose,
            dose,
            prev_dlt,
            sets,
        ));
    }
    events.extend(check_estimation(
        cohort,
        estimates_before,
        estimates_after,
        dose,
        dlt_observed,
        sets,
        tolerance,
    ));
    events
}

/// Audits a whole trial.
///
/// `estimates` holds `cohorts + 1` vectors: the estimates before the first
/// cohort followed by those after each cohort.
pub fn audit_trial<E: AsRef<[f64]>>(
    estimates: &[E],
    allocations: &[Dose],
    outcomes: &[Vec<bool>],
    sets: &ToxicitySets,
    tolerance: f64,
) -> Result<CoherencyReport, AuditError> {
    let cohorts = allocations.len();
    if outcomes.len() != cohorts {
        return Err(AuditError::OutcomeCount {
            allocations: cohorts,
            outcomes: outcomes.len(),
        });
    }
    let expected = if cohorts == 0 {
        estimates.len()
    } else {
        cohorts + 1
    };
    if estimates.len() != expected {
        return Err(AuditError::SnapshotCount {
            cohorts,
            expected,
            found: estimates.len(),
        });
    }
    for (index, e) in estimates.iter().enumerate() {
        if e.as_ref().len() != sets.k() {
            return Err(AuditError::EstimateLength {
                index,
                expected: sets.k(),
                found: e.as_ref().len(),
            });
        }
    }

    let mut events = Vec::new();
    let mut previous: Option<(Dose, bool)> = None;
    for c in 0..cohorts {
        let dlt = outcomes[c].iter().any(|&y| y);
        events.extend(cohort_events(
            c + 1,
            previous,
            allocations[c],
            dlt,
            estimates[c].as_ref(),
            estimates[c + 1].as_ref(),
            sets,
            tolerance,
        ));
        previous = Some((allocations[c], dlt));
    }
    Ok(CoherencyReport::from_events(events))
}

/// Per-dose estimate changes larger than `threshold` in absolute value.
pub fn sudden_changes(previous: &[f64], next: &[f64], threshold: f64) -> Vec<(Dose, f64)> {
    previous
        .iter()
        .zip(next)
        .enumerate()
        .filter(|(_, (a, b))| (*b - *a).abs() > threshold)
        .map(|(i, (a, b))| (Dose::from_index(i), b - a))
        .collect()
}
