//! The first-order equivalent Markov chain of a process: same initial law,
//! moving with the process's one-step matrices `P_0, P_1, ...`.
//!
//! The matrices come from one of two places: exact conditioning of the
//! enumerated joint law ([`build_emc`]), or transition counts over sampled or
//! observed trajectories ([`estimate_homogeneous`], [`estimate_schedule`]).
//! Both feed the same [`EmcChain`].

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{EmcError, Result};
use crate::oracle::{self, FlaggedMatrix, JointTable};
use crate::process::{derive_seed, sample_ensemble, ProcessModel, TrajectoryEnsemble};
use crate::state::{tv_distance, MatrixSchedule, ProbDist, StateSpace, StochasticMatrix};

const MODULE: &str = "emc";

/// Slices agreeing entrywise within this are collapsed into one matrix.
pub const HOMOGENEITY_TOL: f64 = 1e-12;

/// Mass that may flow into a flagged (data-free) row during propagation.
pub const FLAGGED_MASS_TOL: f64 = 1e-12;

/// Exact-mode tolerance for the marginal comparison.
pub const EXACT_TV_TOL: f64 = 1e-9;

/// Where a chain's transition matrices came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    Exact,
    Estimated,
    Given,
}

/// A Markov chain given by an initial law and a transition schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct EmcChain {
    initial: ProbDist,
    schedule: MatrixSchedule,
    /// Flagged rows per stored slice.
    flagged: Vec<Vec<usize>>,
    source: ScheduleSource,
}

impl EmcChain {
    pub fn new(initial: ProbDist, schedule: MatrixSchedule) -> Result<Self> {
        if initial.len() != schedule.n() {
            return Err(EmcError::validation(
                MODULE,
                format!("initial law has {} states, schedule {}", initial.len(), schedule.n()),
            ));
        }
        let flagged = vec![Vec::new(); schedule.len()];
        Ok(EmcChain {
            initial,
            schedule,
            flagged,
            source: ScheduleSource::Given,
        })
    }

    pub fn initial(&self) -> &ProbDist {
        &self.initial
    }

    pub fn schedule(&self) -> &MatrixSchedule {
        &self.schedule
    }

    pub fn source(&self) -> ScheduleSource {
        self.source
    }

    /// Flagged rows of the matrix used for step `t → t+1`.
    pub fn flagged_at(&self, t: usize) -> &[usize] {
        let slot = if self.schedule.is_homogeneous() { 0 } else { t };
        self.flagged.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `(t, rows)` for every slice with flagged rows.
    pub fn flagged_rows(&self) -> Vec<FlaggedSlice> {
        self.flagged
            .iter()
            .enumerate()
            .filter(|(_, rows)| !rows.is_empty())
            .map(|(t, rows)| FlaggedSlice { t, rows: rows.clone() })
            .collect()
    }

    /// Law at time `t`: `initial · P_0 ··· P_{t-1}`.
    ///
    /// Fails if the schedule is too short, or if more than
    /// [`FLAGGED_MASS_TOL`] of mass would be moved by a flagged row.
    pub fn propagate(&self, t: usize) -> Result<ProbDist> {
        Ok(self.propagate_all(t)?.pop().expect("at least the initial law"))
    }

    /// Laws at times `0..=t`.
    pub fn propagate_all(&self, t: usize) -> Result<Vec<ProbDist>> {
        if let Some(steps) = self.schedule.steps() {
            if t > steps {
                return Err(EmcError::Range {
                    module: MODULE,
                    index: t,
                    available: steps,
                });
            }
        }
        let mut out = Vec::with_capacity(t + 1);
        let mut d = self.initial.clone();
        for step in 0..t {
            for &row in self.flagged_at(step) {
                let mass = d.weights()[row];
                if mass > FLAGGED_MASS_TOL {
                    return Err(EmcError::hypothesis(
                        MODULE,
                        format!("step {step} moves mass {mass:e} through flagged row {row}, which has no data"),
                    ));
                }
            }
            let next = d.apply(self.schedule.at(step).expect("length checked"))?;
            out.push(d);
            d = next;
        }
        out.push(d);
        Ok(out)
    }

    /// The chain as a process model (law reads only the last state and time).
    pub fn to_model(&self, space: StateSpace) -> Result<ProcessModel> {
        ProcessModel::markov_schedule(space, self.initial.clone(), self.schedule.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlaggedSlice {
    pub t: usize,
    pub rows: Vec<usize>,
}

/// Collapses per-time matrices into one when every row agrees (within `tol`)
/// across the slices in which it is not flagged.
pub fn collapse_schedule(slices: Vec<FlaggedMatrix>, tol: f64) -> Result<(MatrixSchedule, Vec<Vec<usize>>)> {
    let Some(first) = slices.first() else {
        return Err(EmcError::validation(MODULE, "empty schedule: no transitions"));
    };
    let n = first.matrix.n();
    let mut merged: Vec<Option<&[f64]>> = vec![None; n];
    let mut homogeneous = true;
    'rows: for (a, slot) in merged.iter_mut().enumerate() {
        for s in &slices {
            if s.is_flagged(a) {
                continue;
            }
            match slot {
                None => *slot = Some(s.matrix.row(a)),
                Some(row) => {
                    let differs = row.iter().zip(s.matrix.row(a)).any(|(x, y)| (x - y).abs() > tol);
                    if differs {
                        homogeneous = false;
                        break 'rows;
                    }
                }
            }
        }
    }
    if homogeneous {
        let flagged: Vec<usize> = (0..n).filter(|&a| merged[a].is_none()).collect();
        let rows = merged
            .iter()
            .map(|r| r.map_or_else(|| vec![1.0 / n as f64; n], <[f64]>::to_vec))
            .collect();
        let matrix = StochasticMatrix::from_rows_unchecked(rows);
        Ok((MatrixSchedule::homogeneous(matrix), vec![flagged]))
    } else {
        let flagged = slices.iter().map(|s| s.flagged.clone()).collect();
        let schedule = MatrixSchedule::varying(slices.into_iter().map(|s| s.matrix).collect())?;
        Ok((schedule, flagged))
    }
}

/// Chain from an already enumerated joint table of horizon `T ≥ 1`.
pub fn emc_from_joint(joint: &JointTable) -> Result<EmcChain> {
    if joint.horizon() == 0 {
        return Err(EmcError::validation(MODULE, "horizon 0 has no transitions"));
    }
    let slices = (0..joint.horizon())
        .map(|t| oracle::first_order_matrix(joint, t))
        .collect::<Result<Vec<_>>>()?;
    let (schedule, flagged) = collapse_schedule(slices, HOMOGENEITY_TOL)?;
    Ok(EmcChain {
        initial: oracle::marginal(joint, 0)?,
        schedule,
        flagged,
        source: ScheduleSource::Exact,
    })
}

/// The 1-EMC of `parent` with the exact matrices `P_0..P_{T-1}`.
pub fn build_emc(parent: &ProcessModel, horizon: usize, cap: u64) -> Result<EmcChain> {
    let joint = exact_joint(parent, horizon, cap)?;
    let mut chain = emc_from_joint(&joint)?;
    chain.initial = parent.initial().clone();
    Ok(chain)
}

fn exact_joint(parent: &ProcessModel, horizon: usize, cap: u64) -> Result<JointTable> {
    oracle::joint_table(parent, horizon, cap).map_err(|e| match e {
        EmcError::Size { required, cap, .. } => EmcError::Size {
            module: MODULE,
            required,
            cap,
            hint: "; estimate the transition matrices from samples instead",
        },
        other => other,
    })
}

/// Transition matrix estimated from pooled transition counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatedMatrix {
    pub matrix: StochasticMatrix,
    pub counts: Vec<Vec<u64>>,
    pub flagged: Vec<usize>,
}

/// Per-time estimated schedule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatedSchedule {
    pub schedule: MatrixSchedule,
    pub counts: Vec<Vec<Vec<u64>>>,
    pub flagged: Vec<Vec<usize>>,
}

impl EstimatedSchedule {
    /// Chain starting from the ensemble's empirical initial law.
    pub fn into_chain(self, initial: ProbDist) -> Result<EmcChain> {
        let mut chain = EmcChain::new(initial, self.schedule)?;
        chain.flagged = self.flagged;
        chain.source = ScheduleSource::Estimated;
        Ok(chain)
    }
}

fn counts_to_matrix(n: usize, counts: &[u64], smoothing: f64) -> (StochasticMatrix, Vec<usize>) {
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 + smoothing).collect();
    let mut fm = FlaggedMatrix::from_weights(n, &weights);
    fm.flagged = (0..n)
        .filter(|&a| counts[a * n..(a + 1) * n].iter().all(|&c| c == 0))
        .collect();
    (fm.matrix, fm.flagged)
}

fn check_smoothing(smoothing: f64) -> Result<()> {
    if smoothing.is_finite() && smoothing >= 0.0 {
        Ok(())
    } else {
        Err(EmcError::validation(
            MODULE,
            format!("smoothing must be >= 0, got {smoothing}"),
        ))
    }
}

fn to_rows(n: usize, flat: Vec<u64>) -> Vec<Vec<u64>> {
    flat.chunks(n).map(<[u64]>::to_vec).collect()
}

/// Pools every adjacent pair `(x_t, x_{t+1})` over all trajectories and times.
/// `smoothing` is an additive pseudo-count (0 gives raw maximum likelihood).
pub fn estimate_homogeneous(ensemble: &TrajectoryEnsemble, smoothing: f64) -> Result<EstimatedMatrix> {
    check_smoothing(smoothing)?;
    if ensemble.horizon == 0 {
        return Err(EmcError::validation(
            MODULE,
            "trajectories of length 1 have no transitions",
        ));
    }
    let n = ensemble.n();
    let counts = ensemble
        .trajectories
        .par_iter()
        .fold(
            || vec![0u64; n * n],
            |mut acc, traj| {
                for w in traj.states().windows(2) {
                    acc[w[0] * n + w[1]] += 1;
                }
                acc
            },
        )
        .reduce(|| vec![0u64; n * n], merge_counts);
    let (matrix, flagged) = counts_to_matrix(n, &counts, smoothing);
    Ok(EstimatedMatrix {
        matrix,
        counts: to_rows(n, counts),
        flagged,
    })
}

fn merge_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    a
}

/// One matrix per time step, slice `t` from the pairs `(x_t, x_{t+1})`.
pub fn estimate_schedule(ensemble: &TrajectoryEnsemble, smoothing: f64) -> Result<EstimatedSchedule> {
    check_smoothing(smoothing)?;
    if ensemble.horizon == 0 {
        return Err(EmcError::validation(
            MODULE,
            "empty schedule: horizon 0 has no transitions",
        ));
    }
    let n = ensemble.n();
    let mut matrices = Vec::with_capacity(ensemble.horizon);
    let mut counts_all = Vec::with_capacity(ensemble.horizon);
    let mut flagged_all = Vec::with_capacity(ensemble.horizon);
    for t in 0..ensemble.horizon {
        let mut counts = vec![0u64; n * n];
        for traj in &ensemble.trajectories {
            let s = traj.states();
            counts[s[t] * n + s[t + 1]] += 1;
        }
        let (m, flagged) = counts_to_matrix(n, &counts, smoothing);
        matrices.push(m);
        counts_all.push(to_rows(n, counts));
        flagged_all.push(flagged);
    }
    Ok(EstimatedSchedule {
        schedule: MatrixSchedule::varying(matrices)?,
        counts: counts_all,
        flagged: flagged_all,
    })
}

/// How the parent marginals are obtained for the Lemma report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginalMode {
    /// Enumerated joint law.
    Exact,
    /// Empirical marginals over `samples` sampled trajectories.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvRow {
    pub t: usize,
    pub tv: f64,
}

/// Distance between parent marginals and 1-EMC marginals at every time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Report {
    pub mode: &'static str,
    pub schedule_source: ScheduleSource,
    pub horizon: usize,
    pub rows: Vec<TvRow>,
    pub max_tv: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub flagged_rows: Vec<FlaggedSlice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Sampling tolerance for a TV distance between an empirical law on `n`
/// states from `samples` draws and the true law: `3·√(n / 2N) + 0.005`.
pub fn statistical_tolerance(n: usize, samples: usize) -> f64 {
    3.0 * (n as f64 / (2.0 * samples as f64)).sqrt() + 0.005
}

/// Compares parent marginals `π_t` with propagated 1-EMC marginals for
/// `t = 0..=T`.
///
/// In Monte Carlo mode the chain uses the exact schedule when the joint table
/// fits under `cap`, otherwise a schedule estimated from an independent
/// ensemble.
pub fn lemma1_report(parent: &ProcessModel, horizon: usize, mode: MarginalMode, cap: u64) -> Result<Lemma1Report> {
    if horizon == 0 {
        return Err(EmcError::validation(MODULE, "horizon must be at least 1"));
    }
    match mode {
        MarginalMode::Exact => {
            let joint = exact_joint(parent, horizon, cap)?;
            let chain = emc_from_joint(&joint)?;
            let propagated = chain.propagate_all(horizon)?;
            let rows = (0..=horizon)
                .map(|t| {
                    let exact = oracle::marginal(&joint, t)?;
                    Ok(TvRow {
                        t,
                        tv: tv_distance(&exact, &propagated[t])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(finish_report("exact", &chain, horizon, rows, EXACT_TV_TOL, None, None))
        }
        MarginalMode::MonteCarlo { samples, seed } => {
            let ensemble = sample_ensemble(parent, horizon, samples, seed)?;
            let chain = match build_emc(parent, horizon, cap) {
                Ok(c) => c,
                Err(EmcError::Size { .. }) => {
                    let independent = sample_ensemble(parent, horizon, samples, derive_seed(seed, u64::MAX))?;
                    estimate_schedule(&independent, 0.0)?.into_chain(independent.marginal(0)?)?
                }
                Err(e) => return Err(e),
            };
            let propagated = chain.propagate_all(horizon)?;
            let rows = (0..=horizon)
                .map(|t| {
                    Ok(TvRow {
                        t,
                        tv: tv_distance(&ensemble.marginal(t)?, &propagated[t])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let tol = statistical_tolerance(parent.n(), samples);
            Ok(finish_report(
                "monte-carlo",
                &chain,
                horizon,
                rows,
                tol,
                Some(samples),
                Some(seed),
            ))
        }
    }
}

fn finish_report(
    mode: &'static str,
    chain: &EmcChain,
    horizon: usize,
    rows: Vec<TvRow>,
    tolerance: f64,
    samples: Option<usize>,
    seed: Option<u64>,
) -> Lemma1Report {
    let max_tv = rows.iter().map(|r| r.tv).fold(0.0, f64::max);
    Lemma1Report {
        mode,
        schedule_source: chain.source,
        horizon,
        rows,
        max_tv,
        tolerance,
        passed: max_tv <= tolerance,
        flagged_rows: chain.flagged_rows(),
        samples,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DEFAULT_CAP;
    use crate::scenarios::scenario;
    use crate::state::Trajectory;
    use approx::assert_abs_diff_eq;

    fn p2() -> StochasticMatrix {
        StochasticMatrix::strict(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn alternating() -> ProcessModel {
        ProcessModel::memoryless(
            StateSpace::indexed(2).unwrap(),
            ProbDist::point(2, 0),
            StochasticMatrix::strict(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap()
    }

    fn single(states: &[usize]) -> TrajectoryEnsemble {
        TrajectoryEnsemble::from_trajectories(
            StateSpace::indexed(2).unwrap(),
            vec![Trajectory::new(states.to_vec(), 2).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn emc_of_markov_chain_is_itself() {
        let chain = build_emc(&scenario("markov2").unwrap(), 6, DEFAULT_CAP).unwrap();
        assert!(chain.schedule().is_homogeneous());
        assert!(chain.schedule().at(0).unwrap().max_abs_diff(&p2()).unwrap() < 1e-14);
    }

    #[test]
    fn alternating_chain_collapses_despite_flagged_rows() {
        let chain = build_emc(&alternating(), 5, DEFAULT_CAP).unwrap();
        assert!(chain.schedule().is_homogeneous());
        assert_eq!(
            chain.schedule().at(0).unwrap().rows(),
            vec![vec![0.0, 1.0], vec![1.0, 0.0]]
        );
        assert_eq!(chain.propagate(5).unwrap(), ProbDist::point(2, 1));
    }

    #[test]
    fn stationary_second_order_is_homogeneous() {
        let chain = build_emc(&scenario("secondorder-stationary").unwrap(), 6, DEFAULT_CAP).unwrap();
        assert!(chain.schedule().is_homogeneous());
        for &p in chain.schedule().at(0).unwrap().rows().iter().flatten() {
            assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn nonstationary_second_order_varies() {
        let chain = build_emc(&scenario("secondorder").unwrap(), 4, DEFAULT_CAP).unwrap();
        let s = chain.schedule();
        assert!(!s.is_homogeneous());
        assert!(s.at(0).unwrap().max_abs_diff(s.at(1).unwrap()).unwrap() > 1e-3);
        // P_0 comes straight from the initial pair law: row 0 = (0.4, 0.1)/0.5
        assert_abs_diff_eq!(s.at(0).unwrap().get(0, 0), 0.8, epsilon = 1e-14);
    }

    #[test]
    fn propagate_examples() {
        let chain = EmcChain::new(ProbDist::point(2, 0), MatrixSchedule::homogeneous(p2())).unwrap();
        assert_eq!(chain.propagate(0).unwrap(), ProbDist::point(2, 0));
        // (1,0)·P² = (0.81 + 0.02, 0.09 + 0.08)
        let d = chain.propagate(2).unwrap();
        assert_abs_diff_eq!(d.weights()[0], 0.83, epsilon = 1e-14);
        assert_abs_diff_eq!(d.weights()[1], 0.17, epsilon = 1e-14);
    }

    #[test]
    fn propagate_beyond_schedule_fails() {
        let chain = EmcChain::new(ProbDist::uniform(2), MatrixSchedule::varying(vec![p2(), p2()]).unwrap()).unwrap();
        assert!(chain.propagate(2).is_ok());
        assert!(matches!(chain.propagate(3), Err(EmcError::Range { .. })));
    }

    #[test]
    fn flagged_row_with_mass_is_refused() {
        let est = estimate_homogeneous(&single(&[0, 0, 0]), 0.0).unwrap();
        let mut chain = EmcChain::new(ProbDist::uniform(2), MatrixSchedule::homogeneous(est.matrix)).unwrap();
        chain.flagged = vec![est.flagged];
        assert!(matches!(chain.propagate(1), Err(EmcError::Hypothesis { .. })));
        chain.initial = ProbDist::point(2, 0);
        assert!(chain.propagate(4).is_ok());
    }

    #[test]
    fn estimate_counts_alternation() {
        let est = estimate_homogeneous(&single(&[0, 1, 0, 1, 0]), 0.0).unwrap();
        assert_eq!(est.counts, vec![vec![0, 2], vec![2, 0]]);
        assert_eq!(est.matrix.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(est.flagged.is_empty());
    }

    #[test]
    fn estimate_flags_unseen_state() {
        let est = estimate_homogeneous(&single(&[0, 0, 0]), 0.0).unwrap();
        assert_eq!(est.flagged, vec![1]);
        assert_eq!(est.matrix.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn smoothing_adds_pseudocounts() {
        let est = estimate_homogeneous(&single(&[0, 0, 0]), 1.0).unwrap();
        assert_eq!(est.matrix.row(0), &[0.75, 0.25]);
        assert!(estimate_homogeneous(&single(&[0, 0]), -1.0).is_err());
    }

    #[test]
    fn fair_coin_estimate_is_close() {
        let coin = ProcessModel::memoryless(
            StateSpace::indexed(2).unwrap(),
            ProbDist::uniform(2),
            StochasticMatrix::uniform(2),
        )
        .unwrap();
        let e = sample_ensemble(&coin, 20, 10_000, 17).unwrap();
        let est = estimate_homogeneous(&e, 0.0).unwrap();
        for &p in est.matrix.rows().iter().flatten() {
            assert!((p - 0.5).abs() < 0.01, "{p}");
        }
    }

    #[test]
    fn schedule_from_single_trajectory() {
        let est = estimate_schedule(&single(&[0, 1, 0]), 0.0).unwrap();
        assert_eq!(est.flagged, vec![vec![1], vec![0]]);
        assert_eq!(est.schedule.at(0).unwrap().row(0), &[0.0, 1.0]);
        assert_eq!(est.schedule.at(1).unwrap().row(1), &[1.0, 0.0]);
        assert!(estimate_schedule(&single(&[0]), 0.0).is_err());
    }

    #[test]
    fn markov_slices_are_close_to_truth() {
        let m = scenario("markov2").unwrap();
        let e = sample_ensemble(&m, 4, 200_000, 5).unwrap();
        let est = estimate_schedule(&e, 0.0).unwrap();
        // x_0 = 0 always, so row 1 of slice 0 has no data
        assert_eq!(est.flagged[0], vec![1]);
        for t in 0..4 {
            let slice = est.schedule.at(t).unwrap();
            for a in (0..2).filter(|a| !est.flagged[t].contains(a)) {
                // least observed row: state 1 at t=1 (~10% of 200k), 3σ ≈ 0.0085
                for b in 0..2 {
                    assert!((slice.get(a, b) - p2().get(a, b)).abs() < 0.01, "slice {t} row {a}");
                }
            }
        }
    }

    #[test]
    fn lemma1_exact_for_markov_parent() {
        let r = lemma1_report(&scenario("markov2").unwrap(), 8, MarginalMode::Exact, DEFAULT_CAP).unwrap();
        assert!(r.max_tv <= 1e-12, "{r:?}");
        assert_eq!(r.rows.len(), 9);
    }

    #[test]
    fn lemma1_exact_for_second_order() {
        let r = lemma1_report(&scenario("secondorder").unwrap(), 8, MarginalMode::Exact, DEFAULT_CAP).unwrap();
        assert!(r.passed && r.max_tv <= 1e-9, "{r:?}");
    }

    #[test]
    fn emc_fixed_point() {
        for name in ["secondorder", "reinforced", "regime"] {
            let chain = build_emc(&scenario(name).unwrap(), 5, DEFAULT_CAP).unwrap();
            let as_model = chain
                .to_model(StateSpace::indexed(chain.initial().len()).unwrap())
                .unwrap();
            let again = build_emc(&as_model, 5, DEFAULT_CAP).unwrap();
            assert_eq!(again.schedule().len(), chain.schedule().len());
            for (x, y) in again.schedule().matrices().iter().zip(chain.schedule().matrices()) {
                assert!(x.max_abs_diff(y).unwrap() <= 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn size_error_suggests_estimation() {
        let err = build_emc(&scenario("markov2").unwrap(), 30, 1000).unwrap_err();
        assert!(err.to_string().contains("estimate"), "{err}");
    }

    #[test]
    fn monte_carlo_falls_back_to_estimation() {
        let r = lemma1_report(
            &scenario("reinforced").unwrap(),
            6,
            MarginalMode::MonteCarlo {
                samples: 20_000,
                seed: 3,
            },
            10,
        )
        .unwrap();
        assert_eq!(r.schedule_source, ScheduleSource::Estimated);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn homogeneous_semigroup() {
        let chain = EmcChain::new(ProbDist::point(2, 0), MatrixSchedule::homogeneous(p2())).unwrap();
        let s = 3;
        let mid = chain.propagate(s).unwrap();
        let rest = EmcChain::new(mid, MatrixSchedule::homogeneous(p2())).unwrap();
        let direct = chain.propagate(s + 4).unwrap();
        assert!(direct.max_abs_diff(&rest.propagate(4).unwrap()).unwrap() <= 1e-12);
    }
}
