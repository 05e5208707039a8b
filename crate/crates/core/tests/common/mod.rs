//! Brute-force reference computations shared by integration tests.
#![allow(dead_code)]

use pocrm_core::inference::{PosteriorModel, PriorSpec, Skeleton, TrialState};
use pocrm_core::orderings::{OrderingSet, SimpleOrdering};
use rand::seq::SliceRandom;
use rand::Rng;

/// A small inference problem, fully described by plain numbers.
#[derive(Debug, Clone)]
pub struct Instance {
    pub skeleton: Vec<f64>,
    /// 1-based dose sequences.
    pub orderings: Vec<Vec<usize>>,
    pub n: Vec<u32>,
    pub y: Vec<u32>,
    pub mean: f64,
    pub variance: f64,
}

impl Instance {
    pub fn k(&self) -> usize {
        self.skeleton.len()
    }

    pub fn random<R: Rng>(rng: &mut R, max_k: usize, max_m: usize, max_patients: usize) -> Self {
        let k = rng.gen_range(1..=max_k);
        let m = rng.gen_range(1..=max_m);
        let mut skeleton: Vec<f64>;
        loop {
            skeleton = (0..k).map(|_| rng.gen_range(0.01..0.95)).collect();
            skeleton.sort_by(f64::total_cmp);
            if skeleton.windows(2).all(|w| w[1] - w[0] > 1e-3) {
                break;
            }
        }
        let orderings = (0..m)
            .map(|_| {
                let mut seq: Vec<usize> = (1..=k).collect();
                seq.shuffle(rng);
                seq
            })
            .collect();
        let mut n = vec![0; k];
        let mut y = vec![0; k];
        for _ in 0..rng.gen_range(0..=max_patients) {
            let d = rng.gen_range(0..k);
            n[d] += 1;
            if rng.gen_bool(0.35) {
                y[d] += 1;
            }
        }
        Self {
            skeleton,
            orderings,
            n,
            y,
            mean: rng.gen_range(-0.5..0.5),
            variance: rng.gen_range(0.5..2.0),
        }
    }

    pub fn model(&self) -> PosteriorModel {
        PosteriorModel::new(
            Skeleton::new(self.skeleton.clone()).unwrap(),
            PriorSpec::new(self.mean, self.variance).unwrap(),
        )
        .unwrap()
    }

    pub fn set(&self) -> OrderingSet {
        OrderingSet::uniform(
            self.orderings
                .iter()
                .map(|s| SimpleOrdering::new(s).unwrap())
                .collect(),
        )
        .unwrap()
    }

    pub fn state(&self) -> TrialState {
        TrialState::from_counts(&self.n, &self.y).unwrap()
    }
}

/// Everything the estimators need, from a plain midpoint Riemann sum.
#[derive(Debug, Clone)]
pub struct Reference {
    pub marginal: Vec<f64>,
    pub mean_a: Vec<f64>,
    /// `E[psi]` per ordering, per dose (dose order).
    pub curve: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    pub selected: usize,
    pub selection: Vec<f64>,
    pub averaging: Vec<f64>,
}

/// Midpoint sum with `points` nodes on `mean ± 12 sqrt(variance / 1.34)`,
/// uniform prior weights over orderings.
pub fn riemann(inst: &Instance, points: usize) -> Reference {
    let k = inst.k();
    let m = inst.orderings.len();
    let sd = inst.variance.sqrt();
    let half = 12.0 * (inst.variance / 1.34).sqrt();
    let (lo, hi) = (inst.mean - half, inst.mean + half);
    let h = (hi - lo) / points as f64;
    let norm = -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let ln_alpha: Vec<f64> = inst.skeleton.iter().map(|a| a.ln()).collect();
    // position of each dose in each ordering
    let pos: Vec<Vec<usize>> = inst
        .orderings
        .iter()
        .map(|seq| {
            let mut p = vec![0; k];
            for (rank, &d) in seq.iter().enumerate() {
                p[d - 1] = rank;
            }
            p
        })
        .collect();

    let mut z = vec![0.0; m];
    let mut first = vec![0.0; m];
    let mut curve_pos = vec![vec![0.0; k]; m];
    let mut psi = vec![0.0; k];
    let mut ln_surv = vec![0.0; k];
    for i in 0..points {
        let a = lo + (i as f64 + 0.5) * h;
        let zz = (a - inst.mean) / sd;
        let log_prior = norm - 0.5 * zz * zz;
        let s = a.exp();
        for p in 0..k {
            psi[p] = (s * ln_alpha[p]).exp();
            ln_surv[p] = (-psi[p]).ln_1p();
        }
        for j in 0..m {
            let mut l = log_prior;
            for (d, &p) in pos[j].iter().enumerate() {
                let (n, y) = (inst.n[d] as f64, inst.y[d] as f64);
                if y > 0.0 {
                    l += y * s * ln_alpha[p];
                }
                if n > y {
                    l += (n - y) * ln_surv[p];
                }
            }
            let w = l.exp();
            z[j] += w;
            first[j] += w * a;
            for p in 0..k {
                curve_pos[j][p] += w * psi[p];
            }
        }
    }

    let marginal: Vec<f64> = z.iter().map(|z| z * h).collect();
    let mean_a: Vec<f64> = first.iter().zip(&z).map(|(f, z)| f / z).collect();
    let curve: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..k).map(|d| curve_pos[j][pos[j][d]] / z[j]).collect())
        .collect();
    let total: f64 = marginal.iter().sum();
    let probs: Vec<f64> = marginal.iter().map(|x| x / total).collect();
    let mut selected = 0;
    for j in 1..m {
        if probs[j] > probs[selected] {
            selected = j;
        }
    }
    let selection = (0..k)
        .map(|d| inst.skeleton[pos[selected][d]].powf(mean_a[selected].exp()))
        .collect();
    let averaging = (0..k)
        .map(|d| (0..m).map(|j| probs[j] * curve[j][d]).sum())
        .collect();
    Reference {
        marginal,
        mean_a,
        curve,
        probs,
        selected,
        selection,
        averaging,
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        return 0.0;
    }
    (got - want).abs() / want.abs()
}
