use pocrm_core::coherency::audit_trial;
use pocrm_core::engine::{recommend_dose, run_trial, EngineError, OutcomeSource, Trial};
use pocrm_core::{Design, DesignConfig, Dose, Method, TrialRecord};

/// Outcomes handed out in patient order, whatever the dose.
struct Scripted {
    outcomes: Vec<bool>,
    next: usize,
}

impl OutcomeSource for Scripted {
    fn outcomes(&mut self, _dose: Dose, count: usize) -> Result<Vec<bool>, EngineError> {
        let out = self.outcomes[self.next..self.next + count].to_vec();
        self.next += count;
        Ok(out)
    }
}

// An allocation history with per-dose totals n = (1,0,1,6,2,1), y = (0,0,0,3,1,1),
// followed by a non-DLT cohort at d2.
const HISTORY: [(usize, bool); 12] = [
    (1, false),
    (3, false),
    (4, false),
    (4, true),
    (5, false),
    (4, true),
    (4, false),
    (5, true),
    (4, false),
    (6, true),
    (4, true),
    (2, false),
];

fn conduct(method: Method) -> (Trial, Vec<Vec<pocrm_core::coherency::CoherencyEvent>>) {
    let mut c = DesignConfig::new(3, 2, 0.4, 1, 20);
    c.method = method;
    let mut trial = Trial::new(Design::new(c).unwrap()).unwrap();
    let mut steps = Vec::new();
    for &(dose, dlt) in &HISTORY {
        let step = trial.enter_cohort(Dose(dose), &[dlt]).unwrap();
        assert_eq!(step.snapshot.estimates.len(), 6);
        assert_eq!(step.snapshot.model_probs.len(), 6);
        steps.push(step.events);
    }
    (trial, steps)
}

#[test]
fn conduct_history_has_expected_shape_and_counts() {
    for method in [Method::Selection, Method::Averaging] {
        let (trial, steps) = conduct(method);
        assert_eq!(trial.state().n(), &[1, 1, 1, 6, 2, 1]);
        assert_eq!(trial.state().y(), &[0, 0, 0, 3, 1, 1]);
        let record = trial.record().unwrap();
        assert_eq!(record.cohorts.len(), 12);
        for c in &record.cohorts {
            assert_eq!(c.snapshot.estimates.len(), 6);
            assert_eq!(c.snapshot.method, method);
        }
        assert_eq!(record.cohorts[0].snapshot.model_probs, vec![1.0 / 6.0; 6]);
        // events returned per transition are exactly the audit's
        let streamed: Vec<_> = steps.into_iter().flatten().collect();
        assert_eq!(streamed, record.audit.events);
        let path = record.estimate_path();
        let outcomes: Vec<Vec<bool>> = record.cohorts.iter().map(|c| c.outcomes.clone()).collect();
        let audit = audit_trial(
            &path,
            &record.allocations(),
            &outcomes,
            trial.design().sets(),
            0.0,
        )
        .unwrap();
        assert_eq!(audit, record.audit);
        assert_eq!(
            record.recommendation,
            recommend_dose(&record.terminal.estimates, 0.4, None)
        );
    }
}

#[test]
fn record_round_trips_through_json() {
    let (trial, _) = conduct(Method::Averaging);
    let record = trial.record().unwrap();
    let text = serde_json::to_string(&record).unwrap();
    let back: TrialRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, record);
}

#[test]
fn single_ordering_methods_share_allocations_while_argmins_agree() {
    let base = {
        let mut c = DesignConfig::new(2, 2, 0.3, 1, 4);
        c.orderings = Some(vec![vec![1, 2, 3, 4]]);
        c
    };
    let design = |method| {
        let mut c = base.clone();
        c.method = method;
        Design::new(c).unwrap()
    };
    let (sel, avg) = (design(Method::Selection), design(Method::Averaging));
    for bits in 0u32..16 {
        let outcomes: Vec<bool> = (0..4).map(|i| bits >> i & 1 == 1).collect();
        let mut a = Scripted {
            outcomes: outcomes.clone(),
            next: 0,
        };
        let mut b = Scripted { outcomes, next: 0 };
        let ra = run_trial(&sel, &mut a).unwrap();
        let rb = run_trial(&avg, &mut b).unwrap();
        for (ca, cb) in ra.cohorts.iter().zip(&rb.cohorts) {
            assert_eq!(ca.snapshot.model_probs, vec![1.0]);
            assert_eq!(cb.snapshot.model_probs, vec![1.0]);
            assert_eq!(ca.snapshot.posterior_means, cb.snapshot.posterior_means);
        }
        // Allocations coincide up to the first cohort whose preceding
        // estimates point to different doses.
        let mut agreed = true;
        for c in 0..4 {
            if agreed {
                assert_eq!(
                    ra.cohorts[c].dose, rb.cohorts[c].dose,
                    "sequence {bits:04b}"
                );
            }
            if c + 1 < 4 {
                let next_a = recommend_dose(&ra.cohorts[c + 1].snapshot.estimates, 0.3, None);
                let next_b = recommend_dose(&rb.cohorts[c + 1].snapshot.estimates, 0.3, None);
                agreed &= next_a == next_b;
            }
        }
        assert_eq!(
            ra.audit
                .events
                .iter()
                .filter(|e| e.kind.is_estimation())
                .count(),
            0
        );
        assert_eq!(
            rb.audit
                .events
                .iter()
                .filter(|e| e.kind.is_estimation())
                .count(),
            0
        );
    }
}
