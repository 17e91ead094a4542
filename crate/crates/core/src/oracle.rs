//! Brute-force ground truth: the exact joint law of `x_0..x_T` by enumerating
//! every trajectory, and everything that can be read off it (marginals,
//! one-step matrices, history dependence). Also the literal trajectory sum
//! `Σ π_0(a_0)·p_0(a_0,a_1)···p_{t-1}(a_{t-1},a)`.
//!
//! Nothing here uses matrix propagation, so it can be used to check it.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{EmcError, Result};
use crate::process::{decode_index, LawCursor, ProcessModel};
use crate::state::{format_full, MatrixSchedule, ProbDist, StateSpace, StochasticMatrix};

const MODULE: &str = "oracle";

/// Default cap on the number of joint-table entries.
pub const DEFAULT_CAP: u64 = 2_000_000;

/// Histories lighter than this are skipped when conditioning on them.
pub const CONDITIONING_FLOOR: f64 = 1e-15;

/// History gaps at or below this are reported as exactly zero.
pub const GAP_NOISE_FLOOR: f64 = 1e-12;

/// Exact probabilities of all `n^(T+1)` trajectories, lexicographic order
/// (`x_0` most significant).
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    n: usize,
    horizon: usize,
    probs: Vec<f64>,
}

pub(crate) fn check_cap(n: usize, len: usize, cap: u64, hint: &'static str) -> Result<usize> {
    let required = (n as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if required > cap as u128 {
        return Err(EmcError::Size {
            module: MODULE,
            required,
            cap,
            hint,
        });
    }
    Ok(required as usize)
}

/// Largest horizon `T ≤ limit` whose joint table fits under `cap`.
pub fn max_exact_horizon(n: usize, cap: u64, limit: usize) -> Option<usize> {
    (0..=limit).rev().find(|&t| check_cap(n, t + 1, cap, "").is_ok())
}

/// Enumerates the law of `x_0..x_T` by the chain rule.
pub fn joint_table(model: &ProcessModel, horizon: usize, cap: u64) -> Result<JointTable> {
    let n = model.n();
    let size = check_cap(n, horizon + 1, cap, "")?;
    let mut probs = vec![0.0; size];
    let block = size / n;
    let root = model.cursor();
    let initial = root.next_law();
    probs.par_chunks_mut(block).enumerate().for_each(|(x0, chunk)| {
        let p = initial.weights()[x0];
        if p > 0.0 {
            let mut cursor = root.clone();
            cursor.push(x0);
            fill(&cursor, p, chunk, n);
        }
    });
    Ok(JointTable { n, horizon, probs })
}

fn fill(cursor: &LawCursor<'_>, mass: f64, out: &mut [f64], n: usize) {
    if out.len() == 1 {
        out[0] = mass;
        return;
    }
    let law = cursor.next_law();
    let block = out.len() / n;
    for (b, chunk) in out.chunks_mut(block).enumerate() {
        let p = mass * law.weights()[b];
        if p > 0.0 {
            let mut next = cursor.clone();
            next.push(b);
            fill(&next, p, chunk, n);
        }
    }
}

impl JointTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of one full trajectory (length `T + 1`).
    pub fn probability(&self, trajectory: &[usize]) -> Result<f64> {
        if trajectory.len() != self.horizon + 1 {
            return Err(EmcError::validation(
                MODULE,
                format!(
                    "trajectory length {} does not match horizon {}",
                    trajectory.len(),
                    self.horizon
                ),
            ));
        }
        let mut idx = 0;
        for &s in trajectory {
            if s >= self.n {
                return Err(EmcError::validation(
                    MODULE,
                    format!("state {s} outside [0, {})", self.n),
                ));
            }
            idx = idx * self.n + s;
        }
        Ok(self.probs[idx])
    }

    /// Marginal law of the first `len` states, indexed lexicographically.
    pub fn prefix_mass(&self, len: usize) -> Vec<f64> {
        assert!((1..=self.horizon + 1).contains(&len));
        let block = self.n.pow((self.horizon + 1 - len) as u32);
        self.probs.chunks(block).map(|c| c.iter().sum()).collect()
    }

    fn check_time(&self, t: usize, available: usize) -> Result<()> {
        if t < available {
            Ok(())
        } else {
            Err(EmcError::Range {
                module: MODULE,
                index: t,
                available,
            })
        }
    }

    fn digit(&self, idx: usize, t: usize) -> usize {
        (idx / self.n.pow((self.horizon - t) as u32)) % self.n
    }

    /// Joint law of `(x_t, x_{t+1})` as an `n × n` array.
    fn pair_mass(&self, t: usize) -> Vec<f64> {
        let mut pair = vec![0.0; self.n * self.n];
        for (idx, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                pair[self.digit(idx, t) * self.n + self.digit(idx, t + 1)] += p;
            }
        }
        pair
    }

    /// CSV with columns `a_0..a_T,probability`; zero rows omitted.
    pub fn to_csv(&self, labels: &StateSpace) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..=self.horizon).map(|t| format!("a_{t}")).collect();
        let _ = writeln!(out, "{},probability", header.join(","));
        for (idx, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let states: Vec<&str> = decode_index(idx, self.n, self.horizon + 1)
                .into_iter()
                .map(|s| labels.label(s).unwrap_or("?"))
                .collect();
            let _ = writeln!(out, "{},{}", states.join(","), format_full(p));
        }
        out
    }
}

/// Exact law of `x_t`.
pub fn marginal(joint: &JointTable, t: usize) -> Result<ProbDist> {
    joint.check_time(t, joint.horizon + 1)?;
    let mut out = vec![0.0; joint.n];
    for (idx, &p) in joint.probs.iter().enumerate() {
        if p > 0.0 {
            out[joint.digit(idx, t)] += p;
        }
    }
    ProbDist::normalized(&out)
}

/// A transition matrix some of whose rows had no data (zero mass) and were
/// filled with the uniform law.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlaggedMatrix {
    pub matrix: StochasticMatrix,
    pub flagged: Vec<usize>,
}

impl FlaggedMatrix {
    pub fn is_flagged(&self, row: usize) -> bool {
        self.flagged.contains(&row)
    }

    /// Builds rows by normalizing nonnegative weights; all-zero rows are
    /// filled uniformly and flagged.
    pub(crate) fn from_weights(n: usize, weights: &[f64]) -> FlaggedMatrix {
        let mut rows = Vec::with_capacity(n);
        let mut flagged = Vec::new();
        for (a, row) in weights.chunks(n).enumerate() {
            match ProbDist::normalized(row) {
                Ok(d) => rows.push(d.into_weights()),
                Err(_) => {
                    flagged.push(a);
                    rows.push(vec![1.0 / n as f64; n]);
                }
            }
        }
        FlaggedMatrix {
            matrix: StochasticMatrix::from_rows_unchecked(rows),
            flagged,
        }
    }
}

/// Exact one-step matrix `P_t[a][b] = Pr(x_{t+1} = b | x_t = a)`. Rows for
/// states with `Pr(x_t = a) = 0` are uniform and flagged.
pub fn first_order_matrix(joint: &JointTable, t: usize) -> Result<FlaggedMatrix> {
    joint.check_time(t, joint.horizon)?;
    Ok(FlaggedMatrix::from_weights(joint.n, &joint.pair_mass(t)))
}

/// Largest deviation of a full-history conditional from the one-step
/// conditional at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryGap {
    pub t: usize,
    pub gap: f64,
    pub witness: Option<GapWitness>,
}

/// Where the history gap is attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapWitness {
    /// Maximizing history `x_0..x_t`.
    pub history: Vec<usize>,
    pub next: usize,
    /// `Pr(x_{t+1} = next | history)`.
    pub conditional: f64,
    /// `p_t(history.last(), next)`.
    pub first_order: f64,
    /// A history with the same last state whose conditional lies on the
    /// other side of `first_order`, with its conditional.
    pub contrast: Option<(Vec<usize>, f64)>,
}

/// `max |Pr(x_{t+1}=b | x_0..x_t) − p_t(x_t, b)|` over histories of positive
/// probability. Gaps at or below [`GAP_NOISE_FLOOR`] are reported as zero.
pub fn history_gap(joint: &JointTable, t: usize) -> Result<HistoryGap> {
    let p_t = first_order_matrix(joint, t)?.matrix;
    let n = joint.n;
    let histories = joint.prefix_mass(t + 1);
    let extended = joint.prefix_mass(t + 2);
    let conditional = |h: usize, b: usize| extended[h * n + b] / histories[h];

    let mut best: Option<(f64, usize, usize)> = None;
    for (h, &mass) in histories.iter().enumerate() {
        if mass <= CONDITIONING_FLOOR {
            continue;
        }
        let a = h % n;
        for b in 0..n {
            let diff = (conditional(h, b) - p_t.get(a, b)).abs();
            if best.is_none_or(|(g, _, _)| diff > g) {
                best = Some((diff, h, b));
            }
        }
    }
    let Some((gap, h, b)) = best.filter(|(g, _, _)| *g > GAP_NOISE_FLOOR) else {
        return Ok(HistoryGap {
            t,
            gap: 0.0,
            witness: None,
        });
    };
    let a = h % n;
    let reference = p_t.get(a, b);
    let above = conditional(h, b) > reference;
    let contrast = histories
        .iter()
        .enumerate()
        .filter(|&(g, &m)| m > CONDITIONING_FLOOR && g % n == a && g != h)
        .map(|(g, _)| (g, conditional(g, b)))
        .filter(|&(_, c)| if above { c < reference } else { c > reference })
        .max_by(|x, y| {
            let dx = (x.1 - reference).abs();
            let dy = (y.1 - reference).abs();
            dx.total_cmp(&dy)
        })
        .map(|(g, c)| (decode_index(g, n, t + 1), c));
    Ok(HistoryGap {
        t,
        gap,
        witness: Some(GapWitness {
            history: decode_index(h, n, t + 1),
            next: b,
            conditional: conditional(h, b),
            first_order: reference,
            contrast,
        }),
    })
}

/// `Pr(x_t = a)` as the literal sum over all trajectories `a_0..a_{t-1}, a`
/// of `initial(a_0)·p_0(a_0,a_1)···p_{t-1}(a_{t-1},a)`.
pub fn trajectory_sum(initial: &ProbDist, schedule: &MatrixSchedule, t: usize, a: usize, cap: u64) -> Result<f64> {
    let n = initial.len();
    if schedule.n() != n {
        return Err(EmcError::validation(
            MODULE,
            format!("schedule dimension {} does not match initial law {n}", schedule.n()),
        ));
    }
    if a >= n {
        return Err(EmcError::validation(MODULE, format!("state {a} outside [0, {n})")));
    }
    if let Some(steps) = schedule.steps() {
        if t > steps {
            return Err(EmcError::Range {
                module: MODULE,
                index: t,
                available: steps,
            });
        }
    }
    check_cap(n, t + 1, cap, "")?;
    let matrices: Vec<&StochasticMatrix> = (0..t).map(|i| schedule.at(i).expect("checked")).collect();
    let count = n.pow(t as u32);
    let mut total = 0.0;
    for idx in 0..count {
        let mut path = decode_index(idx, n, t);
        path.push(a);
        let mut term = initial.weights()[path[0]];
        for (i, m) in matrices.iter().enumerate() {
            if term == 0.0 {
                break;
            }
            term *= m.get(path[i], path[i + 1]);
        }
        total += term;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::ModelSpec;
    use crate::state::{StateSpace, Trajectory};
    use approx::assert_abs_diff_eq;

    fn alternating() -> ProcessModel {
        ProcessModel::memoryless(
            StateSpace::indexed(2).unwrap(),
            ProbDist::point(2, 0),
            StochasticMatrix::strict(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap()
    }

    fn coin() -> ProcessModel {
        ProcessModel::memoryless(
            StateSpace::indexed(2).unwrap(),
            ProbDist::uniform(2),
            StochasticMatrix::uniform(2),
        )
        .unwrap()
    }

    fn p2() -> StochasticMatrix {
        StochasticMatrix::strict(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn second_order() -> ProcessModel {
        crate::scenarios::scenario("secondorder").unwrap()
    }

    #[test]
    fn deterministic_joint_is_point_mass() {
        let j = joint_table(&alternating(), 2, DEFAULT_CAP).unwrap();
        assert_eq!(j.probability(&[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(j.total_mass(), 1.0);
        assert_eq!(marginal(&j, 2).unwrap(), ProbDist::point(2, 0));
    }

    #[test]
    fn coin_joint_is_uniform() {
        let j = joint_table(&coin(), 1, DEFAULT_CAP).unwrap();
        assert_eq!(j.probs(), &[0.25; 4]);
        assert_eq!(marginal(&j, 1).unwrap(), ProbDist::uniform(2));
    }

    #[test]
    fn second_order_joint_has_unit_mass() {
        let j = joint_table(&second_order(), 3, DEFAULT_CAP).unwrap();
        assert_eq!(j.probs().len(), 16);
        assert_abs_diff_eq!(j.total_mass(), 1.0, epsilon = 1e-12);
        // chain rule by hand for one path: Pr(0,1) · law(0,1)[1] · law(1,1)[0]
        assert_abs_diff_eq!(j.probability(&[0, 1, 1, 0]).unwrap(), 0.1 * 0.1 * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn joint_respects_cap() {
        let err = joint_table(&coin(), 20, 1000).unwrap_err();
        assert!(
            matches!(
                err,
                EmcError::Size {
                    required: 2_097_152,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn marginal_zero_is_initial_law() {
        let m = second_order();
        let j = joint_table(&m, 3, DEFAULT_CAP).unwrap();
        assert_eq!(&marginal(&j, 0).unwrap(), m.initial());
        assert!(marginal(&j, 4).is_err());
    }

    #[test]
    fn first_order_of_markov_recovers_matrix() {
        let m = ProcessModel::memoryless(StateSpace::indexed(2).unwrap(), ProbDist::uniform(2), p2()).unwrap();
        let j = joint_table(&m, 4, DEFAULT_CAP).unwrap();
        for t in 0..4 {
            let f = first_order_matrix(&j, t).unwrap();
            assert!(f.flagged.is_empty());
            assert!(f.matrix.max_abs_diff(&p2()).unwrap() < 1e-14);
        }
        assert!(first_order_matrix(&j, 4).is_err());
    }

    #[test]
    fn unreachable_row_flagged_uniform() {
        let j = joint_table(&alternating(), 3, DEFAULT_CAP).unwrap();
        let f = first_order_matrix(&j, 0).unwrap();
        assert_eq!(f.flagged, vec![1]);
        assert_eq!(f.matrix.row(1), &[0.5, 0.5]);
        assert_eq!(f.matrix.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn block_stationary_start_is_homogeneous() {
        let m = second_order().with_block_stationary_start().unwrap();
        let j = joint_table(&m, 6, DEFAULT_CAP).unwrap();
        let p0 = first_order_matrix(&j, 0).unwrap().matrix;
        for t in 1..6 {
            let pt = first_order_matrix(&j, t).unwrap().matrix;
            assert!(pt.max_abs_diff(&p0).unwrap() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn markov_gap_is_zero() {
        for m in [coin(), alternating()] {
            let j = joint_table(&m, 5, DEFAULT_CAP).unwrap();
            for t in 0..5 {
                let g = history_gap(&j, t).unwrap();
                assert_eq!(g.gap, 0.0);
                assert!(g.witness.is_none());
            }
        }
    }

    #[test]
    fn second_order_gap_has_witness() {
        let j = joint_table(&second_order(), 3, DEFAULT_CAP).unwrap();
        let g = history_gap(&j, 1).unwrap();
        // last state 0: Pr((0,0) | x_1 = 0) = 0.8, so p_1(0,0) = 0.8·0.9 + 0.2·0.1 = 0.74
        // and history (1,0) sits at 0.1, a gap of 0.64; last state 1 is symmetric.
        assert_abs_diff_eq!(g.gap, 0.64, epsilon = 1e-12);
        let w = g.witness.unwrap();
        let (contrast, c) = w.contrast.unwrap();
        let mut pair = [w.history.clone(), contrast];
        pair.sort();
        assert!(
            pair == [vec![0, 0], vec![1, 0]] || pair == [vec![0, 1], vec![1, 1]],
            "{pair:?}"
        );
        let conds = [w.conditional, c];
        assert!(conds.iter().any(|x| (x - 0.9).abs() < 1e-12 || (x - 0.1).abs() < 1e-12));
    }

    #[test]
    fn gap_conditional_matches_model() {
        // conditionals read from the table equal the model's conditional law
        let m = second_order();
        let j = joint_table(&m, 3, DEFAULT_CAP).unwrap();
        let g = history_gap(&j, 2).unwrap();
        let w = g.witness.unwrap();
        let law = m
            .conditional_next(&Trajectory::new(w.history.clone(), 2).unwrap())
            .unwrap();
        assert_abs_diff_eq!(law.weights()[w.next], w.conditional, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_sum_examples() {
        let h = MatrixSchedule::homogeneous(p2());
        let init = ProbDist::point(2, 0);
        assert_eq!(trajectory_sum(&init, &h, 0, 1, DEFAULT_CAP).unwrap(), 0.0);
        assert_eq!(trajectory_sum(&init, &h, 0, 0, DEFAULT_CAP).unwrap(), 1.0);
        assert_abs_diff_eq!(
            trajectory_sum(&init, &h, 1, 1, DEFAULT_CAP).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        let half = ProbDist::uniform(2);
        let mut d = half.clone();
        for _ in 0..3 {
            d = d.apply(&p2()).unwrap();
        }
        assert_abs_diff_eq!(
            trajectory_sum(&half, &h, 3, 0, DEFAULT_CAP).unwrap(),
            d.weights()[0],
            epsilon = 1e-12
        );
    }

    #[test]
    fn trajectory_sum_limits() {
        let v = MatrixSchedule::varying(vec![p2()]).unwrap();
        let init = ProbDist::uniform(2);
        assert!(matches!(
            trajectory_sum(&init, &v, 2, 0, DEFAULT_CAP),
            Err(EmcError::Range { .. })
        ));
        let h = MatrixSchedule::homogeneous(p2());
        assert!(matches!(
            trajectory_sum(&init, &h, 30, 0, DEFAULT_CAP),
            Err(EmcError::Size { .. })
        ));
    }

    #[test]
    fn csv_lists_support() {
        let j = joint_table(&alternating(), 2, DEFAULT_CAP).unwrap();
        let csv = j.to_csv(&StateSpace::new(["x", "y"]).unwrap());
        assert_eq!(csv, "a_0,a_1,a_2,probability\nx,y,x,1.0000000000000000e0\n");
    }

    #[test]
    fn spec_json_kind_names() {
        let spec =
            ModelSpec::from_json(r#"{"kind":"memoryless","labels":["a"],"initial":[1],"matrix":[[1]]}"#).unwrap();
        assert_eq!(spec.kind_name(), "memoryless");
    }
}
