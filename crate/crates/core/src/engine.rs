//! Single-trial conduct: estimate, allocate, observe, repeat.
//!
//! A [`Trial`] holds the evolving state of one trial. Outcomes come either
//! from an [`OutcomeSource`] (simulation, replay) or are entered directly
//! (live conduct); both paths go through [`Trial::enter_cohort`], which is
//! also where coherency events for each transition are raised.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coherency::{self, AuditError, CoherencyEvent, CoherencyReport};
use crate::inference::{
    EstimateSnapshot, InferenceError, Method, PosteriorModel, PriorSpec, Skeleton, TrialState,
};
use crate::orderings::{
    standard_orderings, toxicity_sets, Dose, DoseGrid, OrderingError, OrderingSet, ToxicitySets,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid design: {0}")]
    Config(String),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("cohort needs {expected} outcomes, got {found}")]
    OutcomeCount { expected: usize, found: usize },
    #[error("dose {0} is outside the grid")]
    DoseOutOfRange(usize),
    #[error("trial already has all {0} cohorts")]
    TrialComplete(usize),
    #[error("response sequence for {dose} exhausted after {length} patients")]
    SequenceExhausted { dose: Dose, length: usize },
}

/// Skeleton given either as explicit values or as indifference-interval
/// parameters resolved against the design's grid and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SkeletonSpec {
    Values(Skeleton),
    Indifference {
        half_width: f64,
        /// 1-based position; defaults to the median.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior_mtd: Option<usize>,
    },
}

impl SkeletonSpec {
    pub fn resolve(&self, k: usize, theta: f64) -> Result<Skeleton, InferenceError> {
        match self {
            SkeletonSpec::Values(s) => Ok(s.clone()),
            SkeletonSpec::Indifference {
                half_width,
                prior_mtd,
            } => Skeleton::indifference(k, theta, *half_width, prior_mtd.unwrap_or(k.div_ceil(2))),
        }
    }
}

fn default_method() -> Method {
    Method::Averaging
}

fn default_start() -> Dose {
    Dose(1)
}

/// Design parameters as they appear in configuration files and API bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub rows: usize,
    pub cols: usize,
    /// Target toxicity rate.
    pub theta: f64,
    pub cohort_size: usize,
    pub n_cohorts: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_start")]
    pub start_dose: Dose,
    /// Defaults to the indifference-interval skeleton for `theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonSpec>,
    #[serde(default)]
    pub prior: PriorSpec,
    /// Candidate orderings as 1-based sequences; defaults to the six
    /// standard traversals of the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orderings: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_weights: Option<Vec<f64>>,
    /// Merge identical orderings before use.
    #[serde(default)]
    pub deduplicate_orderings: bool,
    /// Forbid skipping over untried doses known to be more toxic.
    #[serde(default)]
    pub no_skip: bool,
    /// Estimate moves up to this size are not reported as incoherent.
    #[serde(default)]
    pub coherency_tolerance: f64,
}

impl DesignConfig {
    /// A design on `rows x cols` with every optional field at its default.
    pub fn new(rows: usize, cols: usize, theta: f64, cohort_size: usize, n_cohorts: usize) -> Self {
        Self {
            rows,
            cols,
            theta,
            cohort_size,
            n_cohorts,
            method: default_method(),
            start_dose: default_start(),
            skeleton: None,
            prior: PriorSpec::default(),
            orderings: None,
            prior_weights: None,
            deduplicate_orderings: false,
            no_skip: false,
            coherency_tolerance: 0.0,
        }
    }

    pub fn sample_size(&self) -> usize {
        self.cohort_size * self.n_cohorts
    }
}

/// A validated design with its posterior model ready for use.
///
/// Cloning is cheap: the posterior model (and its cached quadrature tables)
/// is shared.
#[derive(Debug, Clone)]
pub struct Design {
    config: DesignConfig,
    grid: DoseGrid,
    orderings: OrderingSet,
    sets: ToxicitySets,
    model: Arc<PosteriorModel>,
}

impl Design {
    pub fn new(config: DesignConfig) -> Result<Self, EngineError> {
        let grid = DoseGrid::new(config.rows, config.cols)?;
        let k = grid.k();
        if !(config.theta > 0.0 && config.theta < 1.0) {
            return Err(EngineError::Config(format!(
                "theta must lie in (0, 1), got {}",
                config.theta
            )));
        }
        if config.cohort_size == 0 || config.n_cohorts == 0 {
            return Err(EngineError::Config(
                "cohort_size and n_cohorts must be at least 1".into(),
            ));
        }
        if config.start_dose.0 == 0 || config.start_dose.0 > k {
            return Err(EngineError::DoseOutOfRange(config.start_dose.0));
        }
        if config.coherency_tolerance.is_nan() || config.coherency_tolerance < 0.0 {
            return Err(EngineError::Config(
                "coherency_tolerance must be nonnegative".into(),
            ));
        }
        let skeleton = match &config.skeleton {
            Some(spec) => spec.resolve(k, config.theta)?,
            None => Skeleton::default_for(k, config.theta)?,
        };
        if skeleton.len() != k {
            return Err(EngineError::Config(format!(
                "skeleton has {} values for {k} doses",
                skeleton.len()
            )));
        }
        let mut orderings = match &config.orderings {
            Some(seqs) => OrderingSet::from_sequences(&grid, seqs, config.prior_weights.clone())?,
            None => {
                let standard = standard_orderings(&grid);
                match &config.prior_weights {
                    Some(w) => OrderingSet::new(standard.orderings().to_vec(), w.clone())?,
                    None => standard,
                }
            }
        };
        if config.deduplicate_orderings {
            orderings = orderings.deduplicated();
        }
        let sets = toxicity_sets(&orderings);
        let model = Arc::new(PosteriorModel::new(skeleton, config.prior)?);
        Ok(Self {
            config,
            grid,
            orderings,
            sets,
            model,
        })
    }

    /// The same design under another estimator, sharing the posterior model.
    pub fn with_method(&self, method: Method) -> Self {
        let mut d = self.clone();
        d.config.method = method;
        d
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn orderings(&self) -> &OrderingSet {
        &self.orderings
    }

    pub fn sets(&self) -> &ToxicitySets {
        &self.sets
    }

    pub fn model(&self) -> &PosteriorModel {
        &self.model
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn k(&self) -> usize {
        self.grid.k()
    }

    pub fn estimate(&self, state: &TrialState) -> Result<EstimateSnapshot, InferenceError> {
        self.model
            .estimates(self.config.method, state, &self.orderings)
    }

    /// Doses open for allocation after treating `current`; `None` means all.
    pub fn admissible(&self, state: &TrialState, current: Option<Dose>) -> Option<Vec<bool>> {
        let current = current.filter(|_| self.config.no_skip)?;
        let mut open = vec![true; self.k()];
        for &j in self.sets.more_toxic(current) {
            if state.tried(j) {
                continue;
            }
            for &beyond in self.sets.more_toxic(j) {
                open[beyond.index()] = false;
            }
        }
        Some(open)
    }

    /// Allocation rule applied to `estimates` after treating `current`.
    pub fn recommend(&self, estimates: &[f64], state: &TrialState, current: Option<Dose>) -> Dose {
        let open = self.admissible(state, current);
        recommend_dose(estimates, self.config.theta, open.as_deref())
    }
}

/// Distances to target closer than this count as tied. Estimates that are
/// equal in exact arithmetic can differ in the last bits depending on
/// summation order.
pub const ALLOCATION_TIE_TOL: f64 = 1e-12;

/// Dose whose estimate is closest to `theta` among admissible doses (all
/// doses when `admissible` is `None`). The lowest dose wins ties.
pub fn recommend_dose(estimates: &[f64], theta: f64, admissible: Option<&[bool]>) -> Dose {
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in estimates.iter().enumerate() {
        if admissible.is_some_and(|a| !a[i]) {
            continue;
        }
        let gap = (e - theta).abs();
        if best.is_none_or(|(_, g)| gap < g - ALLOCATION_TIE_TOL) {
            best = Some((i, gap));
        }
    }
    // The current dose is never excluded, so something is always admissible.
    Dose::from_index(best.map_or(0, |(i, _)| i))
}

/// Supplies binary outcomes for patients allocated to a dose.
pub trait OutcomeSource {
    fn outcomes(&mut self, dose: Dose, count: usize) -> Result<Vec<bool>, EngineError>;
}

/// Fixed response sequences per dose, consumed in allocation order: the
/// `t`-th patient ever given dose `d` gets entry `t` of stream `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseStreams {
    streams: Vec<Vec<bool>>,
    cursor: Vec<usize>,
}

impl ResponseStreams {
    pub fn new(streams: Vec<Vec<bool>>) -> Self {
        let cursor = vec![0; streams.len()];
        Self { streams, cursor }
    }

    pub fn streams(&self) -> &[Vec<bool>] {
        &self.streams
    }

    /// Responses handed out so far, per dose.
    pub fn consumed(&self) -> &[usize] {
        &self.cursor
    }
}

impl OutcomeSource for ResponseStreams {
    fn outcomes(&mut self, dose: Dose, count: usize) -> Result<Vec<bool>, EngineError> {
        let i = dose.index();
        let stream = self
            .streams
            .get(i)
            .ok_or(EngineError::DoseOutOfRange(dose.0))?;
        let start = self.cursor[i];
        if start + count > stream.len() {
            return Err(EngineError::SequenceExhausted {
                dose,
                length: stream.len(),
            });
        }
        self.cursor[i] += count;
        Ok(stream[start..start + count].to_vec())
    }
}

/// Independent Bernoulli draws from the true toxicity of each dose.
#[derive(Debug, Clone)]
pub struct BernoulliOutcomes<R> {
    truth: Vec<f64>,
    rng: R,
}

impl<R: Rng> BernoulliOutcomes<R> {
    pub fn new(truth: Vec<f64>, rng: R) -> Self {
        Self { truth, rng }
    }
}

impl<R: Rng> OutcomeSource for BernoulliOutcomes<R> {
    fn outcomes(&mut self, dose: Dose, count: usize) -> Result<Vec<bool>, EngineError> {
        let p = *self
            .truth
            .get(dose.index())
            .ok_or(EngineError::DoseOutOfRange(dose.0))?;
        Ok((0..count).map(|_| self.rng.gen::<f64>() < p).collect())
    }
}

/// Hook for early termination. Nothing ships beyond [`NeverStop`]; trials
/// run their full planned length.
pub trait StoppingRule {
    fn should_stop(&self, trial: &Trial) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NeverStop;

impl StoppingRule for NeverStop {
    fn should_stop(&self, _trial: &Trial) -> bool {
        false
    }
}

/// One completed cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    /// 1-based.
    pub cohort: usize,
    pub dose: Dose,
    pub outcomes: Vec<bool>,
    /// Estimates in force when this cohort was allocated.
    pub snapshot: EstimateSnapshot,
}

impl CohortRecord {
    pub fn dlt_observed(&self) -> bool {
        self.outcomes.iter().any(|&y| y)
    }
}

/// Result of entering one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStep {
    pub cohort: usize,
    pub dose: Dose,
    pub outcomes: Vec<bool>,
    /// Estimates after this cohort's outcomes.
    pub snapshot: EstimateSnapshot,
    /// Model recommendation from the updated estimates.
    pub recommendation: Dose,
    /// `None` once the trial is complete.
    pub next_dose: Option<Dose>,
    /// Coherency events raised by this transition.
    pub events: Vec<CoherencyEvent>,
}

/// Everything recorded about one finished (or in-progress) trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub cohorts: Vec<CohortRecord>,
    /// Estimates after the last cohort.
    pub terminal: EstimateSnapshot,
    /// Final MTD recommendation.
    pub recommendation: Dose,
    /// Patients per dose.
    pub n: Vec<u32>,
    /// DLTs per dose.
    pub y: Vec<u32>,
    pub audit: CoherencyReport,
}

impl TrialRecord {
    /// Estimate vectors: before cohort 1, then after every cohort.
    pub fn estimate_path(&self) -> Vec<&[f64]> {
        self.cohorts
            .iter()
            .map(|c| c.snapshot.estimates.as_slice())
            .chain(std::iter::once(self.terminal.estimates.as_slice()))
            .collect()
    }

    pub fn allocations(&self) -> Vec<Dose> {
        self.cohorts.iter().map(|c| c.dose).collect()
    }

    /// All per-dose estimate changes between consecutive updates.
    pub fn estimate_changes(&self) -> Vec<f64> {
        self.estimate_path()
            .windows(2)
            .flat_map(|w| w[0].iter().zip(w[1]).map(|(a, b)| b - a))
            .collect()
    }
}

/// A trial in progress.
#[derive(Debug, Clone)]
pub struct Trial {
    design: Design,
    state: TrialState,
    snapshot: EstimateSnapshot,
    cohorts: Vec<CohortRecord>,
    next_dose: Dose,
    events: Vec<CoherencyEvent>,
}

impl Trial {
    pub fn new(design: Design) -> Result<Self, EngineError> {
        let state = TrialState::new(design.k());
        let snapshot = design.estimate(&state)?;
        let next_dose = design.config().start_dose;
        Ok(Self {
            design,
            state,
            snapshot,
            cohorts: Vec::new(),
            next_dose,
            events: Vec::new(),
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    /// Current estimates.
    pub fn snapshot(&self) -> &EstimateSnapshot {
        &self.snapshot
    }

    pub fn cohorts(&self) -> &[CohortRecord] {
        &self.cohorts
    }

    pub fn events(&self) -> &[CoherencyEvent] {
        &self.events
    }

    /// Dose the model proposes for the next cohort.
    pub fn next_dose(&self) -> Dose {
        self.next_dose
    }

    pub fn is_complete(&self) -> bool {
        self.cohorts.len() >= self.design.config().n_cohorts
    }

    /// Enters a cohort treated at `dose` (which may differ from
    /// [`Trial::next_dose`] when the allocation is overridden).
    pub fn enter_cohort(
        &mut self,
        dose: Dose,
        outcomes: &[bool],
    ) -> Result<CohortStep, EngineError> {
        let config = self.design.config();
        if self.is_complete() {
            return Err(EngineError::TrialComplete(config.n_cohorts));
        }
        if outcomes.len() != config.cohort_size {
            return Err(EngineError::OutcomeCount {
                expected: config.cohort_size,
                found: outcomes.len(),
            });
        }
        if dose.0 == 0 || dose.0 > self.design.k() {
            return Err(EngineError::DoseOutOfRange(dose.0));
        }

        let mut state = self.state.clone();
        for &y in outcomes {
            state.push(dose, y)?;
        }
        let updated = self.design.estimate(&state)?;
        let cohort = self.cohorts.len() + 1;
        let dlt = outcomes.iter().any(|&y| y);
        let previous = self.cohorts.last().map(|c| (c.dose, c.dlt_observed()));
        let events = coherency::cohort_events(
            cohort,
            previous,
            dose,
            dlt,
            &self.snapshot.estimates,
            &updated.estimates,
            self.design.sets(),
            config.coherency_tolerance,
        );
        let recommendation = self
            .design
            .recommend(&updated.estimates, &state, Some(dose));
        let complete = cohort >= config.n_cohorts;

        let before = std::mem::replace(&mut self.snapshot, updated);
        self.cohorts.push(CohortRecord {
            cohort,
            dose,
            outcomes: outcomes.to_vec(),
            snapshot: before,
        });
        self.state = state;
        self.next_dose = recommendation;
        self.events.extend(events.iter().cloned());

        Ok(CohortStep {
            cohort,
            dose,
            outcomes: outcomes.to_vec(),
            snapshot: self.snapshot.clone(),
            recommendation,
            next_dose: (!complete).then_some(recommendation),
            events,
        })
    }

    /// What [`Trial::enter_cohort`] would return, without committing.
    pub fn preview(&self, dose: Dose, outcomes: &[bool]) -> Result<CohortStep, EngineError> {
        self.clone().enter_cohort(dose, outcomes)
    }

    /// Allocates the proposed dose and draws its outcomes from `source`.
    pub fn run_cohort(
        &mut self,
        source: &mut dyn OutcomeSource,
    ) -> Result<CohortStep, EngineError> {
        let dose = self.next_dose;
        self.run_cohort_at(dose, source)
    }

    pub fn run_cohort_at(
        &mut self,
        dose: Dose,
        source: &mut dyn OutcomeSource,
    ) -> Result<CohortStep, EngineError> {
        if self.is_complete() {
            return Err(EngineError::TrialComplete(self.design.config().n_cohorts));
        }
        let outcomes = source.outcomes(dose, self.design.config().cohort_size)?;
        self.enter_cohort(dose, &outcomes)
    }

    /// Snapshot of the trial so far as a record; the recommendation is the
    /// allocation rule applied to the current estimates.
    pub fn record(&self) -> Result<TrialRecord, EngineError> {
        let last = self.cohorts.last().map(|c| c.dose);
        let recommendation = match last {
            Some(_) => self
                .design
                .recommend(&self.snapshot.estimates, &self.state, last),
            None => self.next_dose,
        };
        let mut path: Vec<&[f64]> = self
            .cohorts
            .iter()
            .map(|c| c.snapshot.estimates.as_slice())
            .collect();
        path.push(&self.snapshot.estimates);
        let allocations: Vec<Dose> = self.cohorts.iter().map(|c| c.dose).collect();
        let outcomes: Vec<Vec<bool>> = self.cohorts.iter().map(|c| c.outcomes.clone()).collect();
        let audit = coherency::audit_trial(
            &path,
            &allocations,
            &outcomes,
            self.design.sets(),
            self.design.config().coherency_tolerance,
        )?;
        Ok(TrialRecord {
            method: self.design.method(),
            cohorts: self.cohorts.clone(),
            terminal: self.snapshot.clone(),
            recommendation,
            n: self.state.n().to_vec(),
            y: self.state.y().to_vec(),
            audit,
        })
    }
}

/// Runs a trial to completion.
pub fn run_trial(
    design: &Design,
    source: &mut dyn OutcomeSource,
) -> Result<TrialRecord, EngineError> {
    run_trial_with(design, source, &[], &NeverStop)
}

/// Runs a trial with the first `forced.len()` allocations fixed externally
/// and an optional stopping rule.
pub fn run_trial_with(
    design: &Design,
    source: &mut dyn OutcomeSource,
    forced: &[Dose],
    stop: &dyn StoppingRule,
) -> Result<TrialRecord, EngineError> {
    let mut trial = Trial::new(design.clone())?;
    while !trial.is_complete() && !stop.should_stop(&trial) {
        let dose = forced
            .get(trial.cohorts().len())
            .copied()
            .unwrap_or(trial.next_dose());
        trial.run_cohort_at(dose, source)?;
    }
    trial.record()
}
