use std::path::PathBuf;

use pocrm_core::case_study::{
    generate_sequences, replay, DoseCounts, ReplaySummary, SourceTrialData,
};
use pocrm_core::{Design, DesignConfig, Method};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/case_study")
}

fn shipped() -> SourceTrialData {
    SourceTrialData::from_json_file(&data_dir().join("synthetic_4x4.json")).unwrap()
}

#[test]
fn shipped_data_is_consistent() {
    let d = shipped();
    assert_eq!(d.treated(), 52);
    assert_eq!(d.doses.len(), 12);
    let csv = std::fs::File::open(data_dir().join("synthetic_4x4.csv")).unwrap();
    let from_csv = SourceTrialData::from_csv(csv, 4, 4, d.theta).unwrap();
    assert_eq!(from_csv.counts(), d.counts());
}

#[test]
fn prefixes_hold_the_observed_responses_for_every_seed() {
    let d = shipped();
    for seed in 0..100 {
        let s = generate_sequences(&d, seed).unwrap();
        assert_eq!(s.sequences.len(), 16);
        for (seq, (n, y)) in s.sequences.iter().zip(d.counts()) {
            assert_eq!(seq.len(), 52);
            let ones = seq[..n as usize].iter().filter(|&&x| x).count();
            assert_eq!(ones as u32, y, "seed {seed}");
        }
    }
}

#[test]
fn tail_mean_matches_beta_bernoulli_expectation() {
    let d = SourceTrialData {
        rows: 1,
        cols: 1,
        theta: 1.0 / 3.0,
        total_patients: None,
        doses: vec![DoseCounts {
            dose_index: 1,
            n: 10,
            y: 3,
        }],
        description: None,
    };
    let mut extended = d.clone();
    extended.total_patients = Some(11);
    // total must equal the treated count, so pad with an extra observed dose
    extended.rows = 1;
    extended.cols = 2;
    extended.doses.push(DoseCounts {
        dose_index: 2,
        n: 1,
        y: 0,
    });
    let reps = 100_000;
    let hits = (0..reps)
        .filter(|&seed| generate_sequences(&extended, seed).unwrap().sequences[0][10])
        .count();
    let mean = hits as f64 / reps as f64;
    // E[Beta(1 + 3, 1 + 7)] = 1/3
    assert!((mean - 1.0 / 3.0).abs() < 0.005, "{mean}");
}

#[test]
fn methods_face_identical_responses() {
    let d = shipped();
    let seqs = generate_sequences(&d, 2024).unwrap();
    let mut c: DesignConfig = serde_json::from_str(
        &std::fs::read_to_string(data_dir().join("../configs/case_study.json")).unwrap(),
    )
    .unwrap();
    let mut records = Vec::new();
    for method in [Method::Selection, Method::Averaging] {
        c.method = method;
        let design = Design::new(c.clone()).unwrap();
        let r = replay(&design, &seqs, &[]).unwrap();
        assert_eq!(r, replay(&design, &seqs, &[]).unwrap());
        records.push(r);
    }
    for r in &records {
        // the t-th patient at dose j got entry t of sequence j
        let mut seen = [0usize; 16];
        for cohort in &r.cohorts {
            for &y in &cohort.outcomes {
                let j = cohort.dose.index();
                assert_eq!(y, seqs.sequences[j][seen[j]]);
                seen[j] += 1;
            }
        }
        let summary = ReplaySummary::from_record(r);
        assert_eq!(summary.n.iter().sum::<u32>(), 52);
        assert!(summary.changes.min_delta <= 0.0 && summary.changes.max_delta >= 0.0);
    }
}
