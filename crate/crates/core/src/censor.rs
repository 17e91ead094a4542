//! Watching a process only while it is inside a state subset `A`.
//!
//! The censored sequence keeps the visits to `A` (the A-hits) and drops the
//! rest. For a Markov chain the censored sequence is again Markov, with the
//! stochastic complement
//!
//! ```text
//! C = P_AA + P_AB · (I − P_BB)⁻¹ · P_BA,    B = S \ A
//! ```
//!
//! as transition matrix and `π_A(x) = π(x) / π(A)` on `A` as stationary law.
//! [`a_hit_distribution_check`] verifies by simulation that, started from
//! `π_A`, every A-hit of a process is distributed as `π_A`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{solve_stationary, structure};
use crate::emc::{build_emc, statistical_tolerance};
use crate::error::{EmcError, Result};
use crate::oracle::max_exact_horizon;
use crate::process::{derive_seed, ProcessModel, Sampler};
use crate::state::{tv_distance, ProbDist, StateSpace, StochasticMatrix, Trajectory};

const MODULE: &str = "censor";

/// `I − P_BB` counts as singular when its smallest singular value is below
/// this (relative to the largest).
pub const SINGULARITY_TOL: f64 = 1e-12;

/// Condition numbers above this are flagged in reports.
pub const CONDITION_WARNING: f64 = 1e8;

/// Tolerance for exact censoring identities.
pub const EXACT_TOL: f64 = 1e-9;

/// Largest horizon used to obtain the parent's exact matrix.
pub const EXACT_HORIZON_LIMIT: usize = 6;

/// Hit collection starts with horizon `20·m·n` and may double this many times.
pub const HORIZON_DOUBLINGS: u32 = 6;

/// Nonempty subset `A` of the states, with its complement `B`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CensorSet {
    n: usize,
    members: Vec<usize>,
    complement: Vec<usize>,
}

impl CensorSet {
    pub fn new(members: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let mut in_set = vec![false; n];
        for s in members {
            if s >= n {
                return Err(EmcError::validation(
                    MODULE,
                    format!("censor state {s} outside [0, {n})"),
                ));
            }
            in_set[s] = true;
        }
        let members: Vec<usize> = (0..n).filter(|&s| in_set[s]).collect();
        if members.is_empty() {
            return Err(EmcError::validation(MODULE, "censor set must be nonempty"));
        }
        let complement = (0..n).filter(|&s| !in_set[s]).collect();
        Ok(CensorSet { n, members, complement })
    }

    pub fn from_labels<S: AsRef<str>>(space: &StateSpace, labels: &[S]) -> Result<Self> {
        let idx = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                space
                    .index_of(l)
                    .ok_or_else(|| EmcError::validation(MODULE, format!("unknown state {l:?} in censor set")))
            })
            .collect::<Result<Vec<_>>>()?;
        CensorSet::new(idx, space.len())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn contains(&self, s: usize) -> bool {
        self.members.binary_search(&s).is_ok()
    }

    /// Every nonempty subset of `n` states.
    pub fn all_nonempty(n: usize) -> impl Iterator<Item = CensorSet> {
        assert!(n < 32, "subset enumeration over {n} states");
        (1u32..(1 << n))
            .map(move |mask| CensorSet::new((0..n).filter(|&s| mask & (1 << s) != 0), n).expect("nonempty mask"))
    }
}

/// The visits of a trajectory to `A`: times and states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HitSequence {
    pub times: Vec<usize>,
    pub states: Vec<usize>,
}

impl HitSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Keeps the members of `traj` that lie in `a`, recording their times.
pub fn a_hits(traj: &Trajectory, a: &CensorSet) -> HitSequence {
    let (times, states) = traj
        .states()
        .iter()
        .enumerate()
        .filter(|(_, &s)| a.contains(s))
        .map(|(i, &s)| (traj.origin() + i, s))
        .unzip();
    HitSequence { times, states }
}

/// `π_A(x) = π(x)/π(A)` on `A`, zero elsewhere.
pub fn conditional_on(pi: &ProbDist, a: &CensorSet) -> Result<ProbDist> {
    if pi.len() != a.n() {
        return Err(EmcError::validation(
            MODULE,
            format!("distribution has {} states, censor set is over {}", pi.len(), a.n()),
        ));
    }
    let mass: f64 = a.members().iter().map(|&s| pi.weights()[s]).sum();
    if mass <= 0.0 {
        return Err(EmcError::hypothesis(MODULE, "the censor set has zero probability"));
    }
    let mut w = vec![0.0; pi.len()];
    for &s in a.members() {
        w[s] = pi.weights()[s] / mass;
    }
    ProbDist::normalized(&w)
}

/// Transition matrix of the chain watched only on `A` (rows and columns in
/// the order of `A`'s members).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensoredMatrix {
    pub members: Vec<usize>,
    pub matrix: StochasticMatrix,
    /// Condition number of `I − P_BB` (1 when `B` is empty).
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

/// Stochastic complement of `p` on `a`.
pub fn censored_matrix(p: &StochasticMatrix, a: &CensorSet) -> Result<CensoredMatrix> {
    if p.n() != a.n() {
        return Err(EmcError::validation(
            MODULE,
            format!("matrix has {} states, censor set is over {}", p.n(), a.n()),
        ));
    }
    let am = a.members();
    let bm = a.complement();
    let (na, nb) = (am.len(), bm.len());
    let mut c = DMatrix::from_fn(na, na, |i, j| p.get(am[i], am[j]));
    let mut condition_number = 1.0;
    if nb > 0 {
        let i_minus_pbb = DMatrix::from_fn(nb, nb, |i, j| (if i == j { 1.0 } else { 0.0 }) - p.get(bm[i], bm[j]));
        let sv = i_minus_pbb.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin <= SINGULARITY_TOL * smax.max(1.0) {
            return Err(EmcError::hypothesis(
                MODULE,
                format!("I − P_BB is singular: the complement {bm:?} contains an absorbing part"),
            ));
        }
        condition_number = smax / smin;
        let p_ba = DMatrix::from_fn(nb, na, |i, j| p.get(bm[i], am[j]));
        let p_ab = DMatrix::from_fn(na, nb, |i, j| p.get(am[i], bm[j]));
        let x = i_minus_pbb
            .lu()
            .solve(&p_ba)
            .ok_or_else(|| EmcError::hypothesis(MODULE, "I − P_BB is singular"))?;
        c += p_ab * x;
    }
    let mut rows = Vec::with_capacity(na);
    for i in 0..na {
        let row: Vec<f64> = (0..na).map(|j| c[(i, j)].max(0.0)).collect();
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > EXACT_TOL {
            return Err(EmcError::hypothesis(
                MODULE,
                format!("censored row {i} sums to {total}; the chain does not return to A surely"),
            ));
        }
        rows.push(row.iter().map(|x| x / total).collect());
    }
    Ok(CensoredMatrix {
        members: am.to_vec(),
        matrix: StochasticMatrix::from_rows_unchecked(rows),
        condition_number,
        ill_conditioned: condition_number > CONDITION_WARNING,
    })
}

/// Restriction of a law supported in `A` to the coordinates of `A`.
pub fn restrict(d: &ProbDist, a: &CensorSet) -> Result<ProbDist> {
    conditional_on(d, a).map(|c| {
        let w: Vec<f64> = a.members().iter().map(|&s| c.weights()[s]).collect();
        ProbDist::normalized(&w).expect("positive mass on A")
    })
}

/// `TV(law of hit k, π_A)` for `k = 0..=k_max` when a Markov chain with matrix
/// `p` starts from `π_A`, with hit laws propagated through the censored matrix.
pub fn exact_hit_deviation(p: &StochasticMatrix, a: &CensorSet, k_max: usize) -> Result<Vec<(usize, f64)>> {
    let pi = crate::analysis::stationary(p)?;
    let pi_a = restrict(&pi, a)?;
    let c = censored_matrix(p, a)?;
    let mut law = pi_a.clone();
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        out.push((k, tv_distance(&law, &pi_a)?));
        law = law.apply(&c.matrix)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitRow {
    pub k: usize,
    pub tv: f64,
    pub n_effective: usize,
}

/// Empirical A-hit laws against `π_A`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitReport {
    #[serde(rename = "A")]
    pub a: Vec<String>,
    /// Over all states, zero off `A`.
    pub pi_a: Vec<f64>,
    pub per_hit: Vec<HitRow>,
    /// Trajectories without `m` hits even at the longest horizon.
    pub rejected: usize,
    /// Trajectories that needed a longer horizon than the initial one.
    pub extended: usize,
    pub initial_horizon: usize,
    pub max_horizon: usize,
    pub samples: usize,
    pub seed: u64,
    /// `3·√(|A| / 2N) + 0.005` with `N` the accepted count.
    pub tolerance: f64,
    pub max_tv: f64,
    pub passed: bool,
    pub markov_parent: bool,
    pub note: String,
}

/// Samples `samples` trajectories of `parent` started from `π_A` and compares
/// the empirical law of each of the first `hits` A-hits with `π_A`.
///
/// `π` is the stationary law of the parent's exact one-step matrix, which
/// must be time-homogeneous, irreducible and aperiodic.
pub fn a_hit_distribution_check(
    parent: &ProcessModel,
    a: &CensorSet,
    hits: usize,
    samples: usize,
    seed: u64,
    cap: u64,
) -> Result<HitReport> {
    let n = parent.n();
    if a.n() != n {
        return Err(EmcError::validation(
            MODULE,
            format!("censor set is over {} states, model has {n}", a.n()),
        ));
    }
    if hits == 0 || samples == 0 {
        return Err(EmcError::validation(MODULE, "need at least one hit and one sample"));
    }
    let exact_t = max_exact_horizon(n, cap, EXACT_HORIZON_LIMIT)
        .filter(|&t| t >= 1)
        .ok_or(EmcError::Size {
            module: MODULE,
            required: (n as u128).pow(2),
            cap,
            hint: "",
        })?;
    let chain = build_emc(parent, exact_t, cap)?;
    if !chain.schedule().is_homogeneous() {
        return Err(EmcError::hypothesis(
            MODULE,
            "the parent's exact one-step matrices vary in time; start it from a first-order homogeneous law",
        ));
    }
    let p = chain.schedule().at(0).expect("homogeneous");
    let shape = structure(p);
    if !shape.is_primitive() {
        return Err(EmcError::hypothesis(
            MODULE,
            format!(
                "the parent's one-step matrix must be irreducible and aperiodic (irreducible: {}, periods: {:?})",
                shape.irreducible, shape.periods
            ),
        ));
    }
    let pi = solve_stationary(p)?;
    let pi_a = conditional_on(&pi, a)?;
    let started = parent.with_initial(&pi_a)?;

    let initial_horizon = 20 * hits * n;
    let max_horizon = initial_horizon << HORIZON_DOUBLINGS;
    let outcomes: Vec<Option<(Vec<usize>, bool)>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut sampler = Sampler::new(&started, derive_seed(seed, i));
            let mut found = Vec::with_capacity(hits);
            for t in 0..=max_horizon {
                let s = sampler.next_state();
                if a.contains(s) {
                    found.push(s);
                    if found.len() == hits {
                        return Some((found, t > initial_horizon));
                    }
                }
            }
            None
        })
        .collect();

    let mut counts = vec![vec![0.0; n]; hits];
    let mut accepted = 0;
    let mut extended = 0;
    for (states, was_extended) in outcomes.iter().flatten() {
        accepted += 1;
        extended += usize::from(*was_extended);
        for (k, &s) in states.iter().enumerate() {
            counts[k][s] += 1.0;
        }
    }
    let rejected = samples - accepted;
    if accepted == 0 {
        return Err(EmcError::hypothesis(
            MODULE,
            format!("no trajectory reached {hits} hits within {max_horizon} steps"),
        ));
    }
    let per_hit = counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            Ok(HitRow {
                k,
                tv: tv_distance(&ProbDist::normalized(c)?, &pi_a)?,
                n_effective: accepted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tolerance = statistical_tolerance(a.members().len(), accepted);
    let max_tv = per_hit.iter().map(|r| r.tv).fold(0.0, f64::max);
    let markov_parent = parent.is_markov();
    let mut note = if markov_parent {
        String::from("Markov parent; exact censored propagation is also available")
    } else {
        String::from(
            "non-Markov parent: statistical check of one-dimensional hit laws only; the censored process need not be first-order representable",
        )
    };
    if rejected > 0 {
        note.push_str(&format!(
            "; {rejected} trajectories rejected for too few hits within {max_horizon} steps (truncation bias)"
        ));
    }
    Ok(HitReport {
        a: a.members()
            .iter()
            .map(|&s| parent.space().label(s).unwrap_or("?").to_string())
            .collect(),
        pi_a: pi_a.into_weights(),
        per_hit,
        rejected,
        extended,
        initial_horizon,
        max_horizon,
        samples,
        seed,
        tolerance,
        max_tv,
        passed: max_tv <= tolerance,
        markov_parent,
        note,
    })
}
