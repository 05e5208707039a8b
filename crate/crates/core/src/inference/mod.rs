//! Power working model, likelihood and posterior inference over orderings.
//!
//! Under ordering `m`, dose `d` gets the skeleton value of its rank and the
//! toxicity model `psi_m(d, a) = alpha^{exp(a)}` with `a ~ N(mean, variance)`.
//! Two estimators sit on top of the per-ordering posteriors:
//!
//! * selection: take the most probable ordering and plug its posterior mean
//!   of `a` into the working model;
//! * averaging: weight each ordering's posterior expectation of the curve by
//!   its posterior probability.

mod quadrature;
mod skeleton;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orderings::{Dose, OrderingSet, SimpleOrdering};

pub use quadrature::{BASE_INTERVALS, HALF_WIDTH_SDS, MAX_INTERVALS, REL_TOL};
pub use skeleton::{PriorSpec, Skeleton};

use quadrature::{Integrator, Moments, PositionCounts};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("{what} covers {found} doses, expected {expected}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid counts: {0}")]
    Counts(String),
    #[error("dose {0} outside the dose range")]
    DoseOutOfRange(usize),
    #[error("quadrature did not converge within {intervals} intervals")]
    NotConverged { intervals: usize },
    #[error("posterior has zero mass on the integration window")]
    ZeroEvidence,
}

/// `alpha^{exp(a)}`: stays inside (0, 1) for every real `a`.
pub fn working_model(alpha: f64, a: f64) -> f64 {
    alpha.powf(a.exp())
}

/// One patient's dose and DLT outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub dose: Dose,
    pub dlt: bool,
}

/// Patients observed so far, in arrival order, with per-dose tallies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialState {
    k: usize,
    observations: Vec<Observation>,
    n: Vec<u32>,
    y: Vec<u32>,
}

impl TrialState {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            observations: Vec::new(),
            n: vec![0; k],
            y: vec![0; k],
        }
    }

    /// State with the given tallies; observations are listed dose by dose,
    /// DLTs first.
    pub fn from_counts(n: &[u32], y: &[u32]) -> Result<Self, InferenceError> {
        if n.len() != y.len() {
            return Err(InferenceError::SizeMismatch {
                what: "DLT counts",
                expected: n.len(),
                found: y.len(),
            });
        }
        let mut state = Self::new(n.len());
        for (i, (&ni, &yi)) in n.iter().zip(y).enumerate() {
            if yi > ni {
                return Err(InferenceError::Counts(format!(
                    "dose {} has {yi} DLTs among {ni} patients",
                    i + 1
                )));
            }
            for j in 0..ni {
                state.push(Dose::from_index(i), j < yi)?;
            }
        }
        Ok(state)
    }

    pub fn push(&mut self, dose: Dose, dlt: bool) -> Result<(), InferenceError> {
        if dose.0 == 0 || dose.0 > self.k {
            return Err(InferenceError::DoseOutOfRange(dose.0));
        }
        self.observations.push(Observation { dose, dlt });
        self.n[dose.index()] += 1;
        if dlt {
            self.y[dose.index()] += 1;
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Patients per dose.
    pub fn n(&self) -> &[u32] {
        &self.n
    }

    /// DLTs per dose.
    pub fn y(&self) -> &[u32] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn tried(&self, dose: Dose) -> bool {
        self.n[dose.index()] > 0
    }

    /// Counts keyed and summed in position order, so orderings that induce
    /// the same likelihood get bit-identical evidence and ties stay exact.
    fn position_counts(&self, ordering: &SimpleOrdering, ln_alpha: &[f64]) -> PositionCounts {
        let mut by_pos = vec![(0u32, 0u32); self.k];
        for (i, (&n, &y)) in self.n.iter().zip(&self.y).enumerate() {
            by_pos[ordering.positions()[i]] = (n, y);
        }
        let mut dlt_log_alpha = 0.0;
        let mut non_dlt = Vec::new();
        for (p, &(n, y)) in by_pos.iter().enumerate() {
            if y > 0 {
                dlt_log_alpha += f64::from(y) * ln_alpha[p];
            }
            if n > y {
                non_dlt.push((p, f64::from(n - y)));
            }
        }
        PositionCounts {
            dlt_log_alpha,
            non_dlt,
        }
    }
}

/// Bernoulli log-likelihood of `state` under `ordering` at parameter `a`.
pub fn log_likelihood(
    state: &TrialState,
    ordering: &SimpleOrdering,
    skeleton: &Skeleton,
    a: f64,
) -> f64 {
    let scale = a.exp();
    state
        .n()
        .iter()
        .zip(state.y())
        .enumerate()
        .filter(|(_, (&n, _))| n > 0)
        .map(|(i, (&n, &y))| {
            let log_psi = scale * skeleton.values()[ordering.positions()[i]].ln();
            let log_surv = (-log_psi.exp_m1()).ln();
            let mut l = 0.0;
            if y > 0 {
                l += f64::from(y) * log_psi;
            }
            if n > y {
                l += f64::from(n - y) * log_surv;
            }
            l
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Most probable ordering, plug-in posterior mean.
    Selection,
    /// Model-averaged posterior expectation.
    Averaging,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Selection => "selection",
            Method::Averaging => "averaging",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "selection" | "pocrm" => Ok(Method::Selection),
            "averaging" | "bma" | "bma-pocrm" => Ok(Method::Averaging),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Estimates after one model update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot {
    pub method: Method,
    /// Posterior ordering probabilities `p(m | data)`.
    pub model_probs: Vec<f64>,
    /// Estimated DLT probability per dose.
    pub estimates: Vec<f64>,
    /// 1-based ordering picked by the selection method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    /// Posterior mean of `a` under each ordering.
    pub posterior_means: Vec<f64>,
}

/// Posterior summary of a single ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingPosterior {
    pub log_evidence: f64,
    pub mean_a: f64,
    /// `E[psi_m(d, a) | data]` per dose, if requested.
    pub expected_toxicity: Option<Vec<f64>>,
}

/// Posterior machinery for one skeleton and prior. Cheap to share across
/// threads; node tables are built on first use.
pub struct PosteriorModel {
    integrator: Integrator,
    ln_alpha: Vec<f64>,
}

impl std::fmt::Debug for PosteriorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PosteriorModel")
            .field("skeleton", self.skeleton())
            .field("prior", self.prior())
            .finish()
    }
}

impl PosteriorModel {
    pub fn new(skeleton: Skeleton, prior: PriorSpec) -> Result<Self, InferenceError> {
        prior.validate()?;
        let ln_alpha = skeleton.values().iter().map(|a| a.ln()).collect();
        Ok(Self {
            integrator: Integrator::new(skeleton, prior),
            ln_alpha,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        self.integrator.skeleton()
    }

    pub fn prior(&self) -> &PriorSpec {
        self.integrator.prior()
    }

    pub fn k(&self) -> usize {
        self.ln_alpha.len()
    }

    fn check(&self, state: &TrialState, k: usize) -> Result<(), InferenceError> {
        if k != self.k() {
            return Err(InferenceError::SizeMismatch {
                what: "ordering",
                expected: self.k(),
                found: k,
            });
        }
        if state.k() != self.k() {
            return Err(InferenceError::SizeMismatch {
                what: "trial state",
                expected: self.k(),
                found: state.k(),
            });
        }
        Ok(())
    }

    pub fn ordering_posterior(
        &self,
        state: &TrialState,
        ordering: &SimpleOrdering,
        with_curve: bool,
    ) -> Result<OrderingPosterior, InferenceError> {
        self.check(state, ordering.k())?;
        let counts = state.position_counts(ordering, &self.ln_alpha);
        let Moments {
            log_evidence,
            mean_a,
            curve,
        } = self.integrator.integrate(&counts, with_curve)?;
        Ok(OrderingPosterior {
            log_evidence,
            mean_a,
            expected_toxicity: curve.map(|c| ordering.positions().iter().map(|&p| c[p]).collect()),
        })
    }

    /// `ln ∫ L_m(a) f(a) da`.
    pub fn log_marginal_likelihood(
        &self,
        state: &TrialState,
        ordering: &SimpleOrdering,
    ) -> Result<f64, InferenceError> {
        Ok(self
            .ordering_posterior(state, ordering, false)?
            .log_evidence)
    }

    pub fn marginal_likelihood(
        &self,
        state: &TrialState,
        ordering: &SimpleOrdering,
    ) -> Result<f64, InferenceError> {
        self.log_marginal_likelihood(state, ordering).map(f64::exp)
    }

    pub fn posterior_mean_a(
        &self,
        state: &TrialState,
        ordering: &SimpleOrdering,
    ) -> Result<f64, InferenceError> {
        Ok(self.ordering_posterior(state, ordering, false)?.mean_a)
    }

    /// `E[psi_m(d, a) | data]` for every dose.
    pub fn expected_toxicity(
        &self,
        state: &TrialState,
        ordering: &SimpleOrdering,
    ) -> Result<Vec<f64>, InferenceError> {
        Ok(self
            .ordering_posterior(state, ordering, true)?
            .expected_toxicity
            .expect("curve requested"))
    }

    fn posteriors(
        &self,
        state: &TrialState,
        set: &OrderingSet,
        with_curve: bool,
    ) -> Result<(Vec<OrderingPosterior>, Vec<f64>), InferenceError> {
        let posteriors = set
            .orderings()
            .iter()
            .map(|o| self.ordering_posterior(state, o, with_curve))
            .collect::<Result<Vec<_>, _>>()?;
        let log_weights: Vec<f64> = posteriors
            .iter()
            .zip(set.prior_weights())
            .map(|(p, w)| w.ln() + p.log_evidence)
            .collect();
        Ok((posteriors, normalize_log_weights(&log_weights)))
    }

    /// `p(m | data)` for every ordering in the set.
    pub fn posterior_model_probs(
        &self,
        state: &TrialState,
        set: &OrderingSet,
    ) -> Result<Vec<f64>, InferenceError> {
        Ok(self.posteriors(state, set, false)?.1)
    }

    pub fn pocrm_estimates(
        &self,
        state: &TrialState,
        set: &OrderingSet,
    ) -> Result<EstimateSnapshot, InferenceError> {
        let (posteriors, probs) = self.posteriors(state, set, false)?;
        let best = argmax_first(&probs);
        let ordering = &set.orderings()[best];
        let mean = posteriors[best].mean_a;
        let alpha = self.skeleton().values();
        let estimates = ordering
            .positions()
            .iter()
            .map(|&p| working_model(alpha[p], mean))
            .collect();
        Ok(EstimateSnapshot {
            method: Method::Selection,
            model_probs: probs,
            estimates,
            selected: Some(best + 1),
            posterior_means: posteriors.iter().map(|p| p.mean_a).collect(),
        })
    }

    pub fn bma_estimates(
        &self,
        state: &TrialState,
        set: &OrderingSet,
    ) -> Result<EstimateSnapshot, InferenceError> {
        let (posteriors, probs) = self.posteriors(state, set, true)?;
        let mut estimates = vec![0.0; self.k()];
        for (post, &w) in posteriors.iter().zip(&probs) {
            let curve = post.expected_toxicity.as_ref().expect("curve requested");
            for (e, c) in estimates.iter_mut().zip(curve) {
                *e += w * c;
            }
        }
        Ok(EstimateSnapshot {
            method: Method::Averaging,
            model_probs: probs,
            estimates,
            selected: None,
            posterior_means: posteriors.iter().map(|p| p.mean_a).collect(),
        })
    }

    pub fn estimates(
        &self,
        method: Method,
        state: &TrialState,
        set: &OrderingSet,
    ) -> Result<EstimateSnapshot, InferenceError> {
        match method {
            Method::Selection => self.pocrm_estimates(state, set),
            Method::Averaging => self.bma_estimates(state, set),
        }
    }
}

/// Log-sum-exp normalisation; `-inf` entries get zero weight.
pub fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|u| u / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
