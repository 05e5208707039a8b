//! Combination dose grids and the simple orderings that make up a partial order.
//!
//! Doses are numbered row-major over the grid with drug A on the rows, so
//! `d_1` is the lowest level of both drugs and `d_K` the highest. Every
//! public type uses 1-based dose numbers; [`Dose::index`] gives the 0-based
//! slot for indexing into per-dose vectors.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the prior ordering weights summing to one.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A 1-based dose number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dose(pub usize);

impl Dose {
    /// Builds a dose from a 0-based slot.
    pub fn from_index(index: usize) -> Self {
        Dose(index + 1)
    }

    /// 0-based slot of this dose.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn number(self) -> usize {
        self.0
    }
}

impl fmt::Display for Dose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrderingError {
    #[error("dose grid needs at least one row and one column (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("ordering {ordering} is not a permutation of 1..{k}: {reason}")]
    NotPermutation {
        ordering: usize,
        k: usize,
        reason: String,
    },
    #[error("ordering set is empty")]
    NoOrderings,
    #[error("orderings cover different dose counts ({expected} vs {found})")]
    MixedSizes { expected: usize, found: usize },
    #[error("invalid prior weights: {0}")]
    BadWeights(String),
    #[error("ordering violates the dose grid: {0}")]
    Invalid(Violation),
}

/// Rectangular combination grid: `rows` levels of drug A by `cols` levels of drug B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseGrid {
    rows: usize,
    cols: usize,
}

impl DoseGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self, OrderingError> {
        if rows == 0 || cols == 0 {
            return Err(OrderingError::EmptyGrid { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total number of dose combinations.
    pub fn k(&self) -> usize {
        self.rows * self.cols
    }

    /// Dose at 1-based `(row, col)`.
    pub fn dose(&self, row: usize, col: usize) -> Dose {
        debug_assert!((1..=self.rows).contains(&row) && (1..=self.cols).contains(&col));
        Dose((row - 1) * self.cols + col)
    }

    /// 1-based `(row, col)` of a dose.
    pub fn coords(&self, dose: Dose) -> (usize, usize) {
        let i = dose.index();
        (i / self.cols + 1, i % self.cols + 1)
    }

    pub fn doses(&self) -> impl Iterator<Item = Dose> {
        (1..=self.k()).map(Dose)
    }

    /// True when `lower` is known to be less toxic than `higher` from
    /// within-drug monotonicity alone (same row or same column, lower level).
    pub fn monotone_below(&self, lower: Dose, higher: Dose) -> bool {
        let (r1, c1) = self.coords(lower);
        let (r2, c2) = self.coords(higher);
        (r1 == r2 && c1 < c2) || (c1 == c2 && r1 < r2)
    }
}

/// A total order of all doses from least to most toxic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimpleOrdering {
    sequence: Vec<Dose>,
    // rank (0-based) of each dose slot
    positions: Vec<usize>,
}

impl SimpleOrdering {
    /// Builds an ordering from 1-based dose numbers, requiring a permutation of `1..=k`.
    pub fn new(sequence: &[usize]) -> Result<Self, OrderingError> {
        let k = sequence.len();
        let err = |reason: String| OrderingError::NotPermutation {
            ordering: 0,
            k,
            reason,
        };
        if k == 0 {
            return Err(err("empty sequence".into()));
        }
        let mut positions = vec![usize::MAX; k];
        for (rank, &d) in sequence.iter().enumerate() {
            if d == 0 || d > k {
                return Err(err(format!("index {d} out of range")));
            }
            if positions[d - 1] != usize::MAX {
                return Err(err(format!("dose {d} appears twice")));
            }
            positions[d - 1] = rank;
        }
        Ok(Self {
            sequence: sequence.iter().copied().map(Dose).collect(),
            positions,
        })
    }

    pub fn k(&self) -> usize {
        self.sequence.len()
    }

    pub fn sequence(&self) -> &[Dose] {
        &self.sequence
    }

    /// 0-based rank of `dose` in this ordering (`I_m(d) - 1`).
    pub fn position(&self, dose: Dose) -> usize {
        self.positions[dose.index()]
    }

    /// Ranks of every dose slot, indexed by 0-based dose.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn to_numbers(&self) -> Vec<usize> {
        self.sequence.iter().map(|d| d.0).collect()
    }
}

impl fmt::Display for SimpleOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sequence.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join(" -> "))
    }
}

/// The candidate orderings together with their prior probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingSet {
    orderings: Vec<SimpleOrdering>,
    prior_weights: Vec<f64>,
}

impl OrderingSet {
    pub fn new(
        orderings: Vec<SimpleOrdering>,
        prior_weights: Vec<f64>,
    ) -> Result<Self, OrderingError> {
        let first = orderings.first().ok_or(OrderingError::NoOrderings)?;
        let k = first.k();
        if let Some(o) = orderings.iter().find(|o| o.k() != k) {
            return Err(OrderingError::MixedSizes {
                expected: k,
                found: o.k(),
            });
        }
        if prior_weights.len() != orderings.len() {
            return Err(OrderingError::BadWeights(format!(
                "{} weights for {} orderings",
                prior_weights.len(),
                orderings.len()
            )));
        }
        if prior_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(OrderingError::BadWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = prior_weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(OrderingError::BadWeights(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            orderings,
            prior_weights,
        })
    }

    pub fn uniform(orderings: Vec<SimpleOrdering>) -> Result<Self, OrderingError> {
        let m = orderings.len().max(1);
        let weights = vec![1.0 / m as f64; orderings.len()];
        Self::new(orderings, weights)
    }

    /// Builds a set from raw 1-based sequences, checking them against the grid.
    pub fn from_sequences(
        grid: &DoseGrid,
        sequences: &[Vec<usize>],
        prior_weights: Option<Vec<f64>>,
    ) -> Result<Self, OrderingError> {
        if let Some(v) = validate_sequences(grid, sequences).into_iter().next() {
            return Err(OrderingError::Invalid(v));
        }
        let orderings = sequences
            .iter()
            .map(|s| SimpleOrdering::new(s))
            .collect::<Result<Vec<_>, _>>()?;
        match prior_weights {
            Some(w) => Self::new(orderings, w),
            None => Self::uniform(orderings),
        }
    }

    pub fn len(&self) -> usize {
        self.orderings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orderings.is_empty()
    }

    pub fn k(&self) -> usize {
        self.orderings[0].k()
    }

    pub fn orderings(&self) -> &[SimpleOrdering] {
        &self.orderings
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SimpleOrdering, f64)> {
        self.orderings
            .iter()
            .zip(self.prior_weights.iter().copied())
    }

    /// Merges identical sequences, summing their prior weights. First
    /// occurrence order is kept.
    pub fn deduplicated(&self) -> Self {
        let mut orderings: Vec<SimpleOrdering> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (o, w) in self.iter() {
            match orderings.iter().position(|x| x == o) {
                Some(i) => weights[i] += w,
                None => {
                    orderings.push(o.clone());
                    weights.push(w);
                }
            }
        }
        Self {
            orderings,
            prior_weights: weights,
        }
    }
}

/// The six deterministic traversal schemes, each with weight 1/6.
///
/// In order: by rows, by columns, diagonals traversed from high-A to high-B,
/// diagonals traversed from high-B to high-A, and the two alternating
/// (snake) diagonal traversals, starting with the high-B-first and the
/// high-A-first direction respectively. Duplicates are kept.
pub fn standard_orderings(grid: &DoseGrid) -> OrderingSet {
    let (rows, cols) = (grid.rows(), grid.cols());

    let by_rows: Vec<Dose> = (1..=rows)
        .flat_map(|r| (1..=cols).map(move |c| grid.dose(r, c)))
        .collect();
    let by_cols: Vec<Dose> = (1..=cols)
        .flat_map(|c| (1..=rows).map(move |r| grid.dose(r, c)))
        .collect();

    // Anti-diagonal t holds the cells with (row - 1) + (col - 1) == t; within
    // a diagonal, `rows_descending` walks from the highest drug-A row upward.
    let diagonal = |t: usize, rows_descending: bool| -> Vec<Dose> {
        let mut cells: Vec<Dose> = (1..=rows)
            .filter_map(|r| {
                let c = (t + 2).checked_sub(r)?;
                (1..=cols).contains(&c).then(|| grid.dose(r, c))
            })
            .collect();
        if rows_descending {
            cells.reverse();
        }
        cells
    };
    let diagonals = rows + cols - 1;
    let traverse = |direction: &dyn Fn(usize) -> bool| -> Vec<Dose> {
        (0..diagonals)
            .flat_map(|t| diagonal(t, direction(t)))
            .collect()
    };

    let up_down = traverse(&|_| true);
    let down_up = traverse(&|_| false);
    let alternating_rows = traverse(&|t| t % 2 == 0);
    let alternating_cols = traverse(&|t| t % 2 == 1);

    let orderings = [
        by_rows,
        by_cols,
        up_down,
        down_up,
        alternating_rows,
        alternating_cols,
    ]
    .into_iter()
    .map(|seq| {
        let numbers: Vec<usize> = seq.iter().map(|d| d.0).collect();
        SimpleOrdering::new(&numbers).expect("traversal visits every cell once")
    })
    .collect();
    OrderingSet::uniform(orderings).expect("six orderings with uniform weights")
}

/// Why a sequence is not a valid ordering for a grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    WrongLength {
        expected: usize,
        found: usize,
    },
    IndexOutOfRange {
        index: usize,
    },
    DuplicateIndex {
        dose: Dose,
    },
    MissingDose {
        dose: Dose,
    },
    /// `lower` shares a drug level with `higher` and must come first.
    MonotonicityBreach {
        lower: Dose,
        higher: Dose,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based ordering number within the set.
    pub ordering: usize,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ordering {}: ", self.ordering)?;
        match &self.kind {
            ViolationKind::WrongLength { expected, found } => {
                write!(f, "has {found} entries, grid has {expected} doses")
            }
            ViolationKind::IndexOutOfRange { index } => write!(f, "index {index} out of range"),
            ViolationKind::DuplicateIndex { dose } => write!(f, "{dose} appears more than once"),
            ViolationKind::MissingDose { dose } => write!(f, "{dose} is missing"),
            ViolationKind::MonotonicityBreach { lower, higher } => {
                write!(f, "{lower} must precede {higher}")
            }
        }
    }
}

/// Checks raw 1-based sequences against a grid and lists every violation.
pub fn validate_sequences(grid: &DoseGrid, sequences: &[Vec<usize>]) -> Vec<Violation> {
    let k = grid.k();
    let mut out = Vec::new();
    for (m, seq) in sequences.iter().enumerate() {
        let ordering = m + 1;
        let mut push = |kind| out.push(Violation { ordering, kind });
        if seq.len() != k {
            push(ViolationKind::WrongLength {
                expected: k,
                found: seq.len(),
            });
        }
        let mut rank = vec![None; k];
        for (pos, &d) in seq.iter().enumerate() {
            if d == 0 || d > k {
                push(ViolationKind::IndexOutOfRange { index: d });
            } else if rank[d - 1].is_some() {
                push(ViolationKind::DuplicateIndex { dose: Dose(d) });
            } else {
                rank[d - 1] = Some(pos);
            }
        }
        for (i, r) in rank.iter().enumerate() {
            if r.is_none() && seq.len() >= k {
                push(ViolationKind::MissingDose {
                    dose: Dose::from_index(i),
                });
            }
        }
        for lower in grid.doses() {
            for higher in grid.doses() {
                if !grid.monotone_below(lower, higher) {
                    continue;
                }
                if let (Some(a), Some(b)) = (rank[lower.index()], rank[higher.index()]) {
                    if a > b {
                        push(ViolationKind::MonotonicityBreach { lower, higher });
                    }
                }
            }
        }
    }
    out
}

/// Validates an already-built ordering set against a grid.
pub fn validate_orderings(grid: &DoseGrid, set: &OrderingSet) -> Vec<Violation> {
    let raw: Vec<Vec<usize>> = set.orderings().iter().map(|o| o.to_numbers()).collect();
    validate_sequences(grid, &raw)
}

/// Doses known to be less (`nu`) and more (`xi`) toxic than each dose under
/// every ordering in a set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToxicitySets {
    pub nu: Vec<Vec<Dose>>,
    pub xi: Vec<Vec<Dose>>,
}

impl ToxicitySets {
    pub fn less_toxic(&self, dose: Dose) -> &[Dose] {
        &self.nu[dose.index()]
    }

    pub fn more_toxic(&self, dose: Dose) -> &[Dose] {
        &self.xi[dose.index()]
    }

    /// `nu_i ∪ xi_i`, ascending.
    pub fn related(&self, dose: Dose) -> Vec<Dose> {
        let mut all: Vec<Dose> = self
            .less_toxic(dose)
            .iter()
            .chain(self.more_toxic(dose))
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    pub fn k(&self) -> usize {
        self.nu.len()
    }
}

pub fn toxicity_sets(set: &OrderingSet) -> ToxicitySets {
    let k = set.k();
    let mut nu = vec![Vec::new(); k];
    let mut xi = vec![Vec::new(); k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let below = set
                .orderings()
                .iter()
                .all(|o| o.positions()[j] < o.positions()[i]);
            let above = set
                .orderings()
                .iter()
                .all(|o| o.positions()[j] > o.positions()[i]);
            if below {
                nu[i].push(Dose::from_index(j));
            }
            if above {
                xi[i].push(Dose::from_index(j));
            }
        }
    }
    ToxicitySets { nu, xi }
}

/// On-disk orderings document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingsFile {
    pub rows: usize,
    pub cols: usize,
    pub orderings: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_weights: Option<Vec<f64>>,
}

impl OrderingsFile {
    pub fn from_set(grid: &DoseGrid, set: &OrderingSet) -> Self {
        Self {
            rows: grid.rows(),
            cols: grid.cols(),
            orderings: set.orderings().iter().map(|o| o.to_numbers()).collect(),
            prior_weights: Some(set.prior_weights().to_vec()),
        }
    }

    pub fn grid(&self) -> Result<DoseGrid, OrderingError> {
        DoseGrid::new(self.rows, self.cols)
    }

    pub fn into_set(self) -> Result<(DoseGrid, OrderingSet), OrderingError> {
        let grid = self.grid()?;
        let set = OrderingSet::from_sequences(&grid, &self.orderings, self.prior_weights)?;
        Ok((grid, set))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(set: &OrderingSet) -> Vec<Vec<usize>> {
        set.orderings().iter().map(|o| o.to_numbers()).collect()
    }

    fn doses(v: &[usize]) -> Vec<Dose> {
        v.iter().copied().map(Dose).collect()
    }

    /// Every permutation of `1..=k` that respects within-drug monotonicity.
    fn brute_force_valid(grid: &DoseGrid) -> Vec<Vec<usize>> {
        fn permute(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if rest.is_empty() {
                out.push(cur.clone());
                return;
            }
            for i in 0..rest.len() {
                let d = rest.remove(i);
                cur.push(d);
                permute(rest, cur, out);
                cur.pop();
                rest.insert(i, d);
            }
        }
        let mut all = Vec::new();
        permute(&mut (1..=grid.k()).collect(), &mut Vec::new(), &mut all);
        all.into_iter()
            .filter(|s| validate_sequences(grid, std::slice::from_ref(s)).is_empty())
            .collect()
    }

    #[test]
    fn three_by_two_reproduces_published_list() {
        let grid = DoseGrid::new(3, 2).unwrap();
        let set = standard_orderings(&grid);
        assert_eq!(
            seqs(&set),
            vec![
                vec![1, 2, 3, 4, 5, 6],
                vec![1, 3, 5, 2, 4, 6],
                vec![1, 3, 2, 5, 4, 6],
                vec![1, 2, 3, 4, 5, 6],
                vec![1, 2, 3, 5, 4, 6],
                vec![1, 3, 2, 4, 5, 6],
            ]
        );
        for w in set.prior_weights() {
            assert_eq!(*w, 1.0 / 6.0);
        }
    }

    #[test]
    fn single_drug_grid_collapses() {
        let grid = DoseGrid::new(1, 3).unwrap();
        let set = standard_orderings(&grid);
        assert_eq!(set.len(), 6);
        assert!(seqs(&set).iter().all(|s| s == &vec![1, 2, 3]));

        let single = standard_orderings(&DoseGrid::new(1, 1).unwrap());
        assert!(seqs(&single).iter().all(|s| s == &vec![1]));
    }

    #[test]
    fn two_by_two_matches_brute_force() {
        let grid = DoseGrid::new(2, 2).unwrap();
        let valid = brute_force_valid(&grid);
        assert_eq!(valid, vec![vec![1, 2, 3, 4], vec![1, 3, 2, 4]]);
        let mut unique = seqs(&standard_orderings(&grid));
        unique.sort();
        unique.dedup();
        assert_eq!(unique, valid);
    }

    #[test]
    fn validation_reports_breaches() {
        let g32 = DoseGrid::new(3, 2).unwrap();
        assert!(validate_sequences(&g32, &[vec![1, 2, 3, 4, 5, 6]]).is_empty());

        let v = validate_sequences(&g32, &[vec![2, 1, 3, 4, 5, 6]]);
        assert!(v.contains(&Violation {
            ordering: 1,
            kind: ViolationKind::MonotonicityBreach {
                lower: Dose(1),
                higher: Dose(2)
            }
        }));

        let g22 = DoseGrid::new(2, 2).unwrap();
        let v = validate_sequences(&g22, &[vec![1, 4, 2, 3]]);
        assert!(!brute_force_valid(&g22).contains(&vec![1, 4, 2, 3]));
        assert!(v.contains(&Violation {
            ordering: 1,
            kind: ViolationKind::MonotonicityBreach {
                lower: Dose(2),
                higher: Dose(4)
            }
        }));
    }

    #[test]
    fn validation_reports_malformed_sequences() {
        let g = DoseGrid::new(2, 2).unwrap();
        let v = validate_sequences(&g, &[vec![1, 2, 2, 7]]);
        let kinds: Vec<_> = v.into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::IndexOutOfRange { index: 7 }));
        assert!(kinds.contains(&ViolationKind::DuplicateIndex { dose: Dose(2) }));
        assert!(kinds.contains(&ViolationKind::MissingDose { dose: Dose(3) }));

        let v = validate_sequences(&g, &[vec![1, 2, 3]]);
        assert_eq!(
            v[0].kind,
            ViolationKind::WrongLength {
                expected: 4,
                found: 3
            }
        );
    }

    #[test]
    fn three_by_two_toxicity_sets() {
        let set = standard_orderings(&DoseGrid::new(3, 2).unwrap());
        let sets = toxicity_sets(&set);
        let expected_nu: [&[usize]; 6] = [&[], &[1], &[1], &[1, 2, 3], &[1, 3], &[1, 2, 3, 4, 5]];
        let expected_xi: [&[usize]; 6] = [&[2, 3, 4, 5, 6], &[4, 6], &[4, 5, 6], &[6], &[6], &[]];
        for i in 0..6 {
            assert_eq!(sets.nu[i], doses(expected_nu[i]), "nu_{}", i + 1);
            assert_eq!(sets.xi[i], doses(expected_xi[i]), "xi_{}", i + 1);
        }
    }

    #[test]
    fn total_order_sets() {
        let set = OrderingSet::uniform(vec![SimpleOrdering::new(&[1, 2, 3]).unwrap()]).unwrap();
        let sets = toxicity_sets(&set);
        assert_eq!(sets.less_toxic(Dose(3)), doses(&[1, 2]).as_slice());
        assert!(sets.more_toxic(Dose(3)).is_empty());
    }

    #[test]
    fn two_by_two_pair_sets() {
        let set = OrderingSet::uniform(vec![
            SimpleOrdering::new(&[1, 2, 3, 4]).unwrap(),
            SimpleOrdering::new(&[1, 3, 2, 4]).unwrap(),
        ])
        .unwrap();
        let sets = toxicity_sets(&set);
        assert_eq!(sets.less_toxic(Dose(4)), doses(&[1, 2, 3]).as_slice());
        assert_eq!(sets.more_toxic(Dose(2)), doses(&[4]).as_slice());
        assert_eq!(sets.less_toxic(Dose(2)), doses(&[1]).as_slice());
        assert_eq!(sets.more_toxic(Dose(3)), doses(&[4]).as_slice());
    }

    #[test]
    fn rejects_bad_weights_and_sizes() {
        let a = SimpleOrdering::new(&[1, 2]).unwrap();
        let b = SimpleOrdering::new(&[1, 2, 3]).unwrap();
        assert!(matches!(
            OrderingSet::new(vec![a.clone(), b], vec![0.5, 0.5]),
            Err(OrderingError::MixedSizes { .. })
        ));
        assert!(OrderingSet::new(vec![a.clone()], vec![0.9]).is_err());
        assert!(OrderingSet::new(vec![a.clone(), a], vec![1.5, -0.5]).is_err());
        assert!(matches!(
            OrderingSet::uniform(vec![]),
            Err(OrderingError::NoOrderings)
        ));
        assert!(DoseGrid::new(0, 3).is_err());
    }

    #[test]
    fn dedup_merges_weights() {
        let set = standard_orderings(&DoseGrid::new(3, 2).unwrap());
        let unique = set.deduplicated();
        assert_eq!(unique.len(), 5);
        assert!((unique.prior_weights()[0] - 2.0 / 6.0).abs() < 1e-15);
        let total: f64 = unique.prior_weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orderings_file_round_trip() {
        let json = r#"{"rows": 2, "cols": 2, "orderings": [[1,2,3,4],[1,3,2,4]]}"#;
        let file: OrderingsFile = serde_json::from_str(json).unwrap();
        let (grid, set) = file.into_set().unwrap();
        assert_eq!(grid.k(), 4);
        assert_eq!(set.prior_weights(), &[0.5, 0.5]);

        let bad = r#"{"rows": 2, "cols": 2, "orderings": [[1,4,2,3]]}"#;
        let file: OrderingsFile = serde_json::from_str(bad).unwrap();
        assert!(matches!(file.into_set(), Err(OrderingError::Invalid(_))));
    }

    #[test]
    fn grid_coordinates() {
        let g = DoseGrid::new(3, 2).unwrap();
        assert_eq!(g.coords(Dose(1)), (1, 1));
        assert_eq!(g.coords(Dose(4)), (2, 2));
        assert_eq!(g.coords(Dose(5)), (3, 1));
        assert_eq!(g.dose(3, 2), Dose(6));
        assert!(g.monotone_below(Dose(2), Dose(4)));
        assert!(!g.monotone_below(Dose(2), Dose(3)));
    }
}
