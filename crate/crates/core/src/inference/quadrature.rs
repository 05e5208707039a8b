//! Composite trapezoid integration of the power-model posterior.
//!
//! The parameter axis is truncated to `mean ± 12 sd` of the prior. Node
//! tables depend only on the skeleton and prior, so everything that involves
//! a transcendental call per node (`alpha_p^{e^a}`, `ln(1 - alpha_p^{e^a})`,
//! the prior density) is computed once and shared by every ordering, every
//! trial state, and every thread.
//!
//! Refinement halves the spacing. A table with `2N` intervals contains the
//! `N`-interval rule on its even nodes, so one pass yields both estimates
//! used for the convergence test.

use std::sync::OnceLock;

use super::{InferenceError, PriorSpec, Skeleton};

/// Intervals of the coarsest rule.
pub const BASE_INTERVALS: usize = 2048;
/// Refinement stops with an error past this many intervals.
pub const MAX_INTERVALS: usize = 1 << 17;
/// Successive rules must agree to this relative tolerance.
pub const REL_TOL: f64 = 1e-9;
/// Half-width of the integration window in prior standard deviations.
pub const HALF_WIDTH_SDS: f64 = 12.0;

// Fine tables: 4096, 8192, ..., MAX_INTERVALS intervals.
const LEVELS: usize = (MAX_INTERVALS / BASE_INTERVALS).trailing_zeros() as usize;

/// Data summarised against one ordering: counts per ordering position.
#[derive(Debug, Clone)]
pub(crate) struct PositionCounts {
    /// `Σ_p dlts[p] · ln alpha_p`; multiplies `e^a` in the log-likelihood.
    pub dlt_log_alpha: f64,
    /// `(position, non-DLT count)` for positions with at least one non-DLT.
    pub non_dlt: Vec<(usize, f64)>,
}

/// Posterior summaries for a single ordering.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Moments {
    pub log_evidence: f64,
    pub mean_a: f64,
    /// `E[alpha_p^{e^a}]` per ordering position, when requested.
    pub curve: Option<Vec<f64>>,
}

struct NodeTable {
    k: usize,
    h: f64,
    a: Vec<f64>,
    scale: Vec<f64>,
    log_base: Vec<f64>,
    ln_surv: Vec<f64>,
    psi: Vec<f64>,
}

impl NodeTable {
    fn build(skeleton: &Skeleton, prior: &PriorSpec, intervals: usize) -> Self {
        let k = skeleton.len();
        let ln_alpha: Vec<f64> = skeleton.values().iter().map(|a| a.ln()).collect();
        let half = HALF_WIDTH_SDS * prior.sd();
        let lo = prior.mean - half;
        let h = 2.0 * half / intervals as f64;
        let n = intervals + 1;

        let mut a = Vec::with_capacity(n);
        let mut scale = Vec::with_capacity(n);
        let mut log_base = Vec::with_capacity(n);
        let mut ln_surv = Vec::with_capacity(n * k);
        let mut psi = Vec::with_capacity(n * k);
        for i in 0..n {
            let x = lo + i as f64 * h;
            let s = x.exp();
            let end = if i == 0 || i == intervals {
                0.5f64.ln()
            } else {
                0.0
            };
            a.push(x);
            scale.push(s);
            log_base.push(end + prior.log_density(x));
            for &la in &ln_alpha {
                // ln psi = e^a ln alpha; guard 0 * inf when e^a overflows
                let log_psi = if s.is_infinite() {
                    f64::NEG_INFINITY
                } else {
                    s * la
                };
                psi.push(log_psi.exp());
                ln_surv.push((-log_psi.exp_m1()).ln());
            }
        }
        Self {
            k,
            h,
            a,
            scale,
            log_base,
            ln_surv,
            psi,
        }
    }

    fn intervals(&self) -> usize {
        self.a.len() - 1
    }

    /// Returns (fine, coarse) moments; the coarse rule uses even nodes only.
    fn evaluate(
        &self,
        counts: &PositionCounts,
        want_curve: bool,
        log_terms: &mut Vec<f64>,
    ) -> Option<(Moments, Moments)> {
        let k = self.k;
        let n = self.a.len();
        log_terms.clear();
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let mut l = self.log_base[i];
            if counts.dlt_log_alpha != 0.0 {
                l += self.scale[i] * counts.dlt_log_alpha;
            }
            let row = &self.ln_surv[i * k..(i + 1) * k];
            for &(p, f) in &counts.non_dlt {
                l += f * row[p];
            }
            if l.is_nan() {
                l = f64::NEG_INFINITY;
            }
            max = max.max(l);
            log_terms.push(l);
        }
        if !max.is_finite() {
            return None;
        }

        let mut z = [0.0f64; 2];
        let mut first = [0.0f64; 2];
        let mut curve = if want_curve {
            vec![0.0f64; 2 * k]
        } else {
            Vec::new()
        };
        for (i, &l) in log_terms.iter().enumerate() {
            let d = l - max;
            // exp underflows to exactly zero below this
            if d < -745.0 {
                continue;
            }
            let w = d.exp();
            let even = i % 2 == 0;
            z[0] += w;
            first[0] += w * self.a[i];
            if even {
                z[1] += w;
                first[1] += w * self.a[i];
            }
            if want_curve {
                let row = &self.psi[i * k..(i + 1) * k];
                let (fine, coarse) = curve.split_at_mut(k);
                for p in 0..k {
                    let v = w * row[p];
                    fine[p] += v;
                    if even {
                        coarse[p] += v;
                    }
                }
            }
        }

        let build = |level: usize, step: f64| Moments {
            log_evidence: max + (step * z[level]).ln(),
            mean_a: first[level] / z[level],
            curve: want_curve.then(|| {
                curve[level * k..(level + 1) * k]
                    .iter()
                    .map(|c| c / z[level])
                    .collect()
            }),
        };
        Some((build(0, self.h), build(1, 2.0 * self.h)))
    }
}

fn converged(fine: &Moments, coarse: &Moments) -> bool {
    let evidence_ok = (coarse.log_evidence - fine.log_evidence).exp_m1().abs() <= REL_TOL;
    let mean_ok = (fine.mean_a - coarse.mean_a).abs() <= REL_TOL * fine.mean_a.abs().max(1.0);
    let curve_ok = match (&fine.curve, &coarse.curve) {
        (Some(f), Some(c)) => f
            .iter()
            .zip(c)
            .all(|(f, c)| (f - c).abs() <= REL_TOL * f.abs()),
        _ => true,
    };
    evidence_ok && mean_ok && curve_ok
}

/// Lazily refined node tables for one (skeleton, prior) pair.
pub(crate) struct Integrator {
    skeleton: Skeleton,
    prior: PriorSpec,
    tables: [OnceLock<NodeTable>; LEVELS],
}

impl Integrator {
    pub fn new(skeleton: Skeleton, prior: PriorSpec) -> Self {
        Self {
            skeleton,
            prior,
            tables: std::array::from_fn(|_| OnceLock::new()),
        }
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn table(&self, level: usize) -> &NodeTable {
        self.tables[level].get_or_init(|| {
            NodeTable::build(&self.skeleton, &self.prior, BASE_INTERVALS << (level + 1))
        })
    }

    pub fn integrate(
        &self,
        counts: &PositionCounts,
        want_curve: bool,
    ) -> Result<Moments, InferenceError> {
        let mut scratch = Vec::new();
        for level in 0..LEVELS {
            let table = self.table(level);
            let (fine, coarse) = table
                .evaluate(counts, want_curve, &mut scratch)
                .ok_or(InferenceError::ZeroEvidence)?;
            if converged(&fine, &coarse) {
                return Ok(fine);
            }
            if table.intervals() >= MAX_INTERVALS {
                break;
            }
        }
        Err(InferenceError::NotConverged {
            intervals: MAX_INTERVALS,
        })
    }
}
