//! Probability vectors, row-stochastic matrices and the small amount of
//! dense arithmetic the rest of the crate is built on.
//!
//! States are dense indices `0..n`; [`StateSpace`] maps them to labels for
//! anything user-facing. Distributions are row vectors and are propagated by
//! right-multiplication, `dist · P`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{EmcError, Result};

/// Tolerance for "sums to one" checks on distributions and matrix rows.
pub const SUM_TOL: f64 = 1e-9;

const MODULE: &str = "state";

/// Ordered, duplicate-free list of state labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(EmcError::validation(MODULE, "state space must be nonempty"));
        }
        for (i, label) in labels.iter().enumerate() {
            if let Some(j) = labels[..i].iter().position(|l| l == label) {
                return Err(EmcError::validation(
                    MODULE,
                    format!("duplicate state label {label:?} at indices {j} and {i}"),
                ));
            }
        }
        Ok(StateSpace { labels })
    }

    /// States labelled `"0"`, `"1"`, ... `"n-1"`.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(EmcError::validation(
                MODULE,
                format!("state index {index} outside [0, {})", self.len()),
            ))
        }
    }
}

impl TryFrom<Vec<String>> for StateSpace {
    type Error = EmcError;
    fn try_from(labels: Vec<String>) -> Result<Self> {
        StateSpace::new(labels)
    }
}

impl From<StateSpace> for Vec<String> {
    fn from(space: StateSpace) -> Self {
        space.labels
    }
}

/// A probability vector over `n` states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist {
    weights: Vec<f64>,
}

/// Normalizes nonnegative weights into a distribution.
pub fn make_dist(weights: &[f64]) -> Result<ProbDist> {
    ProbDist::normalized(weights)
}

impl ProbDist {
    /// Divides `weights` by their sum. Rejects negative or non-finite entries
    /// and zero total mass.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(EmcError::validation(MODULE, "distribution must be nonempty"));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(EmcError::validation(
                    MODULE,
                    format!("weight at index {i} is {w}; weights must be finite and nonnegative"),
                ));
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(EmcError::validation(
                MODULE,
                "zero total mass (all weights are 0, first offending index 0)",
            ));
        }
        Ok(ProbDist {
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Accepts `weights` only if they already form a distribution within
    /// [`SUM_TOL`]; nothing is rescaled.
    pub fn strict(weights: Vec<f64>) -> Result<Self> {
        check_probability_row(&weights).map_err(|m| EmcError::validation(MODULE, m))?;
        Ok(ProbDist { weights })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero states");
        ProbDist {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n: usize, state: usize) -> Self {
        assert!(state < n, "point mass on state {state} of {n}");
        let mut weights = vec![0.0; n];
        weights[state] = 1.0;
        ProbDist { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Row vector times matrix: `result[b] = Σ_a self[a]·m[a][b]`.
    pub fn apply(&self, m: &StochasticMatrix) -> Result<ProbDist> {
        if self.len() != m.n() {
            return Err(dimension_mismatch(self.len(), m.n()));
        }
        Ok(ProbDist {
            weights: self.apply_raw(m),
        })
    }

    pub(crate) fn apply_raw(&self, m: &StochasticMatrix) -> Vec<f64> {
        let n = m.n();
        let mut out = vec![0.0; n];
        for (a, &pa) in self.weights.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(m.row(a)) {
                *o += pa * p;
            }
        }
        out
    }

    pub fn tv_distance(&self, other: &ProbDist) -> Result<f64> {
        tv_distance(self, other)
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &ProbDist) -> Result<f64> {
        if self.len() != other.len() {
            return Err(dimension_mismatch(self.len(), other.len()));
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = EmcError;
    fn try_from(weights: Vec<f64>) -> Result<Self> {
        ProbDist::strict(weights)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(d: ProbDist) -> Self {
        d.weights
    }
}

/// Total variation distance, `½ Σ |p[a] − q[a]|`.
pub fn tv_distance(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(dimension_mismatch(p.len(), q.len()));
    }
    let l1: f64 = p.weights.iter().zip(&q.weights).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).min(1.0))
}

fn dimension_mismatch(left: usize, right: usize) -> EmcError {
    EmcError::validation(MODULE, format!("dimension mismatch: {left} vs {right}"))
}

fn check_probability_row(row: &[f64]) -> std::result::Result<(), String> {
    if row.is_empty() {
        return Err("empty probability vector".into());
    }
    for (i, &w) in row.iter().enumerate() {
        if !w.is_finite() || !(0.0..=1.0).contains(&w) {
            return Err(format!("entry {i} is {w}, outside [0, 1]"));
        }
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(format!("entries sum to {total}, not 1"));
    }
    Ok(())
}

/// Dense row-stochastic `n × n` matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    /// Validates every row exactly; no renormalization.
    pub fn strict(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(EmcError::validation(MODULE, "matrix must have at least one row"));
        }
        let mut data = Vec::with_capacity(n * n);
        for (a, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(EmcError::validation(
                    MODULE,
                    format!("row {a} has {} entries, expected {n}", row.len()),
                ));
            }
            check_probability_row(&row).map_err(|m| EmcError::validation(MODULE, format!("row {a}: {m}")))?;
            data.extend(row);
        }
        Ok(StochasticMatrix { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for a in 0..n {
            data[a * n + a] = 1.0;
        }
        StochasticMatrix { n, data }
    }

    /// Every row the uniform distribution.
    pub fn uniform(n: usize) -> Self {
        StochasticMatrix {
            n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    /// Builds from probability rows that are already known to be valid.
    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        debug_assert_eq!(data.len(), n * n);
        StochasticMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }

    pub fn row_dist(&self, a: usize) -> ProbDist {
        ProbDist {
            weights: self.row(a).to_vec(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &StochasticMatrix) -> Result<StochasticMatrix> {
        if self.n != other.n {
            return Err(dimension_mismatch(self.n, other.n));
        }
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for a in 0..n {
            for k in 0..n {
                let p = self.get(a, k);
                if p == 0.0 {
                    continue;
                }
                for b in 0..n {
                    data[a * n + b] += p * other.get(k, b);
                }
            }
        }
        Ok(StochasticMatrix { n, data })
    }

    /// `self^k` by repeated squaring; `k = 0` gives the identity.
    pub fn pow(&self, mut k: u64) -> StochasticMatrix {
        let mut base = self.clone();
        let mut acc = StochasticMatrix::identity(self.n);
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base).expect("same dimension");
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base).expect("same dimension");
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &StochasticMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(dimension_mismatch(self.n, other.n));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// One row per line, comma separated, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.data.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|x| format_full(*x)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for StochasticMatrix {
    type Error = EmcError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        StochasticMatrix::strict(rows)
    }
}

impl From<StochasticMatrix> for Vec<Vec<f64>> {
    fn from(m: StochasticMatrix) -> Self {
        m.rows()
    }
}

/// Formats a float with 17 significant digits.
pub fn format_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Time-indexed transition matrices `P_0, P_1, ...`, or a single matrix
/// standing for every time step when homogeneous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSchedule {
    matrices: Vec<StochasticMatrix>,
    homogeneous: bool,
}

impl MatrixSchedule {
    pub fn homogeneous(p: StochasticMatrix) -> Self {
        MatrixSchedule {
            matrices: vec![p],
            homogeneous: true,
        }
    }

    /// A time-varying schedule; slice `t` is used for the step `t → t+1`.
    pub fn varying(matrices: Vec<StochasticMatrix>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(EmcError::validation(
                MODULE,
                "schedule must contain at least one matrix",
            ));
        };
        let n = first.n();
        if let Some(t) = matrices.iter().position(|m| m.n() != n) {
            return Err(EmcError::validation(
                MODULE,
                format!("schedule slice {t} has dimension {}, expected {n}", matrices[t].n()),
            ));
        }
        Ok(MatrixSchedule {
            matrices,
            homogeneous: false,
        })
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn n(&self) -> usize {
        self.matrices[0].n()
    }

    /// Number of stored slices (1 when homogeneous).
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of steps this schedule can propagate; `None` means unbounded.
    pub fn steps(&self) -> Option<usize> {
        (!self.homogeneous).then_some(self.matrices.len())
    }

    /// The matrix used for the step `t → t+1`.
    pub fn at(&self, t: usize) -> Option<&StochasticMatrix> {
        if self.homogeneous {
            self.matrices.first()
        } else {
            self.matrices.get(t)
        }
    }

    pub fn matrices(&self) -> &[StochasticMatrix] {
        &self.matrices
    }
}

/// A realized sequence of state indices, `states[i]` being the state at
/// time `origin + i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<usize>,
    #[serde(default)]
    origin: usize,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, n: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(EmcError::validation(MODULE, "trajectory must be nonempty"));
        }
        if let Some(i) = states.iter().position(|&s| s >= n) {
            return Err(EmcError::validation(
                MODULE,
                format!("trajectory position {i} holds state {} outside [0, {n})", states[i]),
            ));
        }
        Ok(Trajectory { states, origin: 0 })
    }

    pub(crate) fn from_states_unchecked(states: Vec<usize>) -> Self {
        Trajectory { states, origin: 0 }
    }

    pub fn with_origin(mut self, origin: usize) -> Self {
        self.origin = origin;
        self
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.states.last().expect("trajectory is nonempty")
    }
}

/// `{"labels": [...], "rows": [[...]]}` file format for matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub labels: StateSpace,
    pub rows: StochasticMatrix,
}

impl LabeledMatrix {
    pub fn new(labels: StateSpace, rows: StochasticMatrix) -> Result<Self> {
        if labels.len() != rows.n() {
            return Err(dimension_mismatch(labels.len(), rows.n()));
        }
        Ok(LabeledMatrix { labels, rows })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: LabeledMatrix =
            serde_json::from_str(text).map_err(|e| EmcError::validation(MODULE, format!("matrix file: {e}")))?;
        LabeledMatrix::new(parsed.labels, parsed.rows)
    }
}

/// `{"labels": [...], "weights": [...]}` file format for distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDist {
    pub labels: StateSpace,
    pub weights: ProbDist,
}

impl LabeledDist {
    pub fn new(labels: StateSpace, weights: ProbDist) -> Result<Self> {
        if labels.len() != weights.len() {
            return Err(dimension_mismatch(labels.len(), weights.len()));
        }
        Ok(LabeledDist { labels, weights })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: LabeledDist =
            serde_json::from_str(text).map_err(|e| EmcError::validation(MODULE, format!("distribution file: {e}")))?;
        LabeledDist::new(parsed.labels, parsed.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p2() -> StochasticMatrix {
        StochasticMatrix::strict(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn make_dist_normalizes() {
        assert_eq!(make_dist(&[1.0, 1.0]).unwrap().weights(), &[0.5, 0.5]);
        assert_eq!(make_dist(&[0.3, 0.7]).unwrap().weights(), &[0.3, 0.7]);
        assert_eq!(make_dist(&[2.0, 1.0, 1.0]).unwrap().weights(), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn make_dist_rejects_negative_and_zero_mass() {
        let err = make_dist(&[0.5, -0.1, 0.6]).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
        assert!(matches!(make_dist(&[0.0, 0.0]), Err(EmcError::Validation { .. })));
    }

    #[test]
    fn apply_examples() {
        let d = make_dist(&[0.2, 0.8]).unwrap();
        assert_eq!(d.apply(&StochasticMatrix::identity(2)).unwrap(), d);
        assert_eq!(ProbDist::point(2, 0).apply(&p2()).unwrap().weights(), &[0.9, 0.1]);
        let half = ProbDist::uniform(2).apply(&p2()).unwrap();
        assert_abs_diff_eq!(half.weights()[0], 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(half.weights()[1], 0.45, epsilon = 1e-15);
        assert!(ProbDist::uniform(3).apply(&p2()).is_err());
    }

    #[test]
    fn tv_examples() {
        let p = make_dist(&[0.5, 0.5]).unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(
            tv_distance(&ProbDist::point(2, 0), &ProbDist::point(2, 1)).unwrap(),
            1.0
        );
        let q = make_dist(&[0.75, 0.25]).unwrap();
        assert_eq!(tv_distance(&p, &q).unwrap(), 0.25);
        assert!(tv_distance(&p, &ProbDist::uniform(3)).is_err());
    }

    #[test]
    fn strict_matrix_reports_row() {
        let err = StochasticMatrix::strict(vec![vec![0.5, 0.5], vec![0.5, 0.6]]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(StochasticMatrix::strict(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn pow_matches_repeated_mul() {
        let p = p2();
        let p3 = p.mul(&p).unwrap().mul(&p).unwrap();
        assert!(p.pow(3).max_abs_diff(&p3).unwrap() < 1e-15);
        assert_eq!(p.pow(0), StochasticMatrix::identity(2));
    }

    #[test]
    fn csv_has_full_precision() {
        let csv = p2().to_csv();
        let first: Vec<f64> = csv
            .lines()
            .next()
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(first, vec![0.9, 0.1]);
        assert!(csv.contains("9.0000000000000002e-1"), "{csv}");
    }

    #[test]
    fn labeled_json_round_trip() {
        let m = LabeledMatrix::new(StateSpace::new(["lo", "hi"]).unwrap(), p2()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"labels":["lo","hi"],"rows":[[0.9,0.1],[0.2,0.8]]}"#);
        assert_eq!(LabeledMatrix::from_json(&text).unwrap(), m);
        assert!(LabeledMatrix::from_json(r#"{"labels":["a"],"rows":[[0.9,0.1],[0.2,0.8]]}"#).is_err());
        let d = LabeledDist::from_json(r#"{"labels":["a","b"],"weights":[0.25,0.75]}"#).unwrap();
        assert_eq!(d.weights.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn schedule_shapes() {
        let h = MatrixSchedule::homogeneous(p2());
        assert_eq!(h.at(100), Some(&p2()));
        assert_eq!(h.steps(), None);
        let v = MatrixSchedule::varying(vec![p2(), StochasticMatrix::identity(2)]).unwrap();
        assert_eq!(v.steps(), Some(2));
        assert!(v.at(2).is_none());
        assert!(MatrixSchedule::varying(vec![p2(), StochasticMatrix::identity(3)]).is_err());
        assert!(MatrixSchedule::varying(vec![]).is_err());
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert!(StateSpace::new(["a", "b", "a"]).is_err());
        assert!(StateSpace::new(Vec::<String>::new()).is_err());
    }
}
