use serde::{Deserialize, Serialize};

use super::InferenceError;

/// Prior toxicity guesses by ordering position: `alpha[p]` belongs to the
/// dose ranked `p`-th (0-based) in whichever ordering is in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Skeleton {
    alpha: Vec<f64>,
}

impl Skeleton {
    pub fn new(alpha: Vec<f64>) -> Result<Self, InferenceError> {
        if alpha.is_empty() {
            return Err(InferenceError::Skeleton("empty skeleton".into()));
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(InferenceError::Skeleton(
                "skeleton values must lie strictly inside (0, 1)".into(),
            ));
        }
        if alpha.windows(2).any(|w| w[0] >= w[1]) {
            return Err(InferenceError::Skeleton(
                "skeleton must be strictly increasing".into(),
            ));
        }
        Ok(Self { alpha })
    }

    /// Indifference-interval skeleton for the power model.
    ///
    /// The dose at `prior_mtd` (1-based position) gets `theta`; neighbours
    /// are placed so that each dose is the model's pick exactly when its
    /// toxicity lies within `theta ± half_width`.
    pub fn indifference(
        k: usize,
        theta: f64,
        half_width: f64,
        prior_mtd: usize,
    ) -> Result<Self, InferenceError> {
        if k == 0 || prior_mtd == 0 || prior_mtd > k {
            return Err(InferenceError::Skeleton(format!(
                "prior MTD position {prior_mtd} outside 1..={k}"
            )));
        }
        let (lo, hi) = (theta - half_width, theta + half_width);
        if !(half_width > 0.0 && lo > 0.0 && hi < 1.0) {
            return Err(InferenceError::Skeleton(format!(
                "theta ± half-width must stay inside (0, 1), got [{lo}, {hi}]"
            )));
        }
        let mut log_alpha = vec![0.0; k];
        let nu = prior_mtd - 1;
        log_alpha[nu] = theta.ln();
        for p in (1..=nu).rev() {
            log_alpha[p - 1] = lo.ln() * log_alpha[p] / hi.ln();
        }
        for p in nu..k - 1 {
            log_alpha[p + 1] = hi.ln() * log_alpha[p] / lo.ln();
        }
        Self::new(log_alpha.into_iter().map(f64::exp).collect())
    }

    /// Default: half-width 0.05 with the prior MTD at the median position.
    pub fn default_for(k: usize, theta: f64) -> Result<Self, InferenceError> {
        Self::indifference(k, theta, 0.05, k.div_ceil(2))
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Skeleton {
    type Error = InferenceError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Skeleton> for Vec<f64> {
    fn from(s: Skeleton) -> Self {
        s.alpha
    }
}

/// Normal prior on the working-model parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub mean: f64,
    pub variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 1.34,
        }
    }
}

impl PriorSpec {
    pub fn new(mean: f64, variance: f64) -> Result<Self, InferenceError> {
        let p = Self { mean, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.variance > 0.0 && self.variance.is_finite() && self.mean.is_finite()) {
            return Err(InferenceError::Prior(format!(
                "need finite mean and positive variance, got N({}, {})",
                self.mean, self.variance
            )));
        }
        Ok(())
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn log_density(&self, a: f64) -> f64 {
        let z = (a - self.mean) / self.sd();
        -0.5 * z * z - self.sd().ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}
