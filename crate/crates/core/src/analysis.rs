//! Structural and asymptotic analysis of a transition matrix: communicating
//! classes, periods, primitivity, the stationary law and the distance to it
//! over time.
//!
//! Irreducibility is decided on the digraph of positive entries (one strongly
//! connected component). Periods come from BFS levels inside each class: the
//! period is the gcd of `level[u] + 1 − level[v]` over the class's edges.
//! When the chain is irreducible and aperiodic the smallest `k` with
//! `P^k > 0` entrywise is searched up to Wielandt's bound `(n−1)² + 1`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::emc::{emc_from_joint, TvRow};
use crate::error::{EmcError, Result};
use crate::oracle;
use crate::process::ProcessModel;
use crate::state::{tv_distance, ProbDist, StochasticMatrix};

const MODULE: &str = "analysis";

/// Entries above this count as positive edges.
pub const POSITIVE_THRESHOLD: f64 = 1e-15;

/// Power iteration stops once successive iterates are this close in TV.
pub const POWER_TOL: f64 = 1e-13;
pub const POWER_MAX_ITER: usize = 10_000;

/// Distance to stationarity at `t_max` below which the limit is deemed reached.
pub const LIMIT_TOL: f64 = 1e-8;

/// Tolerance for the `π_t − π = π̃_t − π̃` identity.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub n: usize,
    pub irreducible: bool,
    /// Smallest `k` with `P^k` entrywise positive, found only for primitive chains.
    pub certificate: Option<usize>,
    /// Period of each state; `None` for states that can never return.
    pub periods: Vec<Option<usize>>,
    pub aperiodic: bool,
    /// Communicating classes (strongly connected components).
    pub classes: Vec<Vec<usize>>,
    /// Classes with no edge leaving them.
    pub closed_classes: Vec<Vec<usize>>,
}

impl StructureReport {
    pub fn is_primitive(&self) -> bool {
        self.irreducible && self.aperiodic
    }
}

fn adjacency(p: &StochasticMatrix) -> Vec<Vec<usize>> {
    (0..p.n())
        .map(|a| (0..p.n()).filter(|&b| p.get(a, b) > POSITIVE_THRESHOLD).collect())
        .collect()
}

/// Tarjan's algorithm, iterative. Components come out in reverse topological
/// order; each is sorted.
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*edge) {
                *edge += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("component root is on the stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn class_period(adj: &[Vec<usize>], class: &[usize], member: &[usize]) -> Option<usize> {
    let id = member[class[0]];
    let mut level = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::from([class[0]]);
    level[class[0]] = 0;
    let mut g = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if member[v] != id {
                continue;
            }
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    (g > 0).then_some(g)
}

fn positive_power_certificate(adj: &[Vec<usize>]) -> Option<usize> {
    let n = adj.len();
    let base: Vec<Vec<bool>> = (0..n).map(|a| (0..n).map(|b| adj[a].contains(&b)).collect()).collect();
    let bound = (n - 1) * (n - 1) + 1;
    let mut power = base.clone();
    for k in 1..=bound {
        if power.iter().flatten().all(|&x| x) {
            return Some(k);
        }
        let mut next = vec![vec![false; n]; n];
        for a in 0..n {
            for m in 0..n {
                if power[a][m] {
                    for b in 0..n {
                        next[a][b] |= base[m][b];
                    }
                }
            }
        }
        power = next;
    }
    None
}

/// Classes, periods, irreducibility and (for primitive chains) the
/// positivity certificate.
pub fn structure(p: &StochasticMatrix) -> StructureReport {
    let n = p.n();
    let adj = adjacency(p);
    let classes = strongly_connected(&adj);
    let mut member = vec![0; n];
    for (id, class) in classes.iter().enumerate() {
        for &s in class {
            member[s] = id;
        }
    }
    let mut periods = vec![None; n];
    for class in &classes {
        let period = class_period(&adj, class, &member);
        for &s in class {
            periods[s] = period;
        }
    }
    let closed_classes: Vec<Vec<usize>> = classes
        .iter()
        .filter(|class| class.iter().all(|&a| adj[a].iter().all(|&b| member[b] == member[a])))
        .cloned()
        .collect();
    let irreducible = classes.len() == 1;
    let aperiodic = periods.iter().all(|&p| p == Some(1));
    let certificate = (irreducible && aperiodic)
        .then(|| positive_power_certificate(&adj))
        .flatten();
    let mut classes = classes;
    classes.sort();
    let mut closed_classes = closed_classes;
    closed_classes.sort();
    StructureReport {
        n,
        irreducible,
        certificate,
        periods,
        aperiodic,
        classes,
        closed_classes,
    }
}

fn require_irreducible(report: &StructureReport) -> Result<()> {
    if report.irreducible {
        Ok(())
    } else {
        Err(EmcError::hypothesis(
            MODULE,
            format!(
                "chain is reducible; closed communicating classes: {:?}",
                report.closed_classes
            ),
        ))
    }
}

fn require_primitive(report: &StructureReport) -> Result<()> {
    require_irreducible(report)?;
    if report.aperiodic {
        Ok(())
    } else {
        Err(EmcError::hypothesis(
            MODULE,
            format!("chain is periodic; periods {:?}", report.periods),
        ))
    }
}

/// The unique `π` with `π = πP` of an irreducible chain, by a direct solve of
/// `(Pᵀ − I)π = 0` with one equation replaced by `Σπ = 1`.
pub fn stationary(p: &StochasticMatrix) -> Result<ProbDist> {
    require_irreducible(&structure(p))?;
    solve_stationary(p)
}

pub(crate) fn solve_stationary(p: &StochasticMatrix) -> Result<ProbDist> {
    let n = p.n();
    let mut a = DMatrix::from_fn(n, n, |i, j| p.get(j, i) - if i == j { 1.0 } else { 0.0 });
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EmcError::hypothesis(MODULE, "stationary system is singular"))?;
    let clipped: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
    ProbDist::normalized(&clipped)
}

/// `‖π − πP‖∞`.
pub fn stationarity_residual(pi: &ProbDist, p: &StochasticMatrix) -> Result<f64> {
    pi.max_abs_diff(&pi.apply(p)?)
}

/// Result of power iteration from the uniform law.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerIteration {
    pub pi: ProbDist,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates `d ← dP` from uniform until successive TV ≤ [`POWER_TOL`] or
/// [`POWER_MAX_ITER`] steps.
pub fn power_iteration(p: &StochasticMatrix) -> PowerIteration {
    let mut d = ProbDist::uniform(p.n());
    for i in 1..=POWER_MAX_ITER {
        let next = d.apply(p).expect("same dimension");
        let change = tv_distance(&d, &next).expect("same dimension");
        d = next;
        if change <= POWER_TOL {
            return PowerIteration {
                pi: d,
                iterations: i,
                converged: true,
            };
        }
    }
    PowerIteration {
        pi: d,
        iterations: POWER_MAX_ITER,
        converged: false,
    }
}

/// Stationary law with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryReport {
    pub pi: ProbDist,
    pub residual: f64,
    /// Sup-norm gap to power iteration; only for aperiodic chains.
    pub power_agreement: Option<f64>,
    pub power_iterations: Option<usize>,
}

pub fn stationary_report(p: &StochasticMatrix) -> Result<StationaryReport> {
    let report = structure(p);
    require_irreducible(&report)?;
    let pi = solve_stationary(p)?;
    let residual = stationarity_residual(&pi, p)?;
    let (power_agreement, power_iterations) = if report.aperiodic {
        let pow = power_iteration(p);
        (Some(pow.pi.max_abs_diff(&pi)?), Some(pow.iterations))
    } else {
        (None, None)
    };
    Ok(StationaryReport {
        pi,
        residual,
        power_agreement,
        power_iterations,
    })
}

/// `TV(initial·Pᵗ, π)` for `t = 0..=t_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceProfile {
    pub stationary: ProbDist,
    pub rows: Vec<TvRow>,
    pub final_tv: f64,
    pub limit_tol: f64,
    /// `final_tv ≤ limit_tol`: the finite stand-in for `π_t → π`.
    pub limit_reached: bool,
}

impl ConvergenceProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,tv\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.t, crate::state::format_full(r.tv)));
        }
        out
    }
}

/// Requires an irreducible, aperiodic `p`.
pub fn convergence_profile(initial: &ProbDist, p: &StochasticMatrix, t_max: usize) -> Result<ConvergenceProfile> {
    if initial.len() != p.n() {
        return Err(EmcError::validation(
            MODULE,
            format!("initial law has {} states, matrix {}", initial.len(), p.n()),
        ));
    }
    require_primitive(&structure(p))?;
    let pi = solve_stationary(p)?;
    let mut rows = Vec::with_capacity(t_max + 1);
    let mut d = initial.clone();
    for t in 0..=t_max {
        rows.push(TvRow {
            t,
            tv: tv_distance(&d, &pi)?,
        });
        if t < t_max {
            d = d.apply(p)?;
        }
    }
    let final_tv = rows.last().expect("t_max + 1 rows").tv;
    Ok(ConvergenceProfile {
        stationary: pi,
        rows,
        final_tv,
        limit_tol: LIMIT_TOL,
        limit_reached: final_tv <= LIMIT_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub horizon: usize,
    pub stationary: ProbDist,
    /// `max_t ‖(π_t − π) − (π̃_t − π̃)‖∞`.
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `π_t − π = π̃_t − π̃` for `t ≤ T`, with `π_t` from the enumerated
/// joint law, `π̃_t` from propagating the 1-EMC, and `π = π̃` the stationary
/// law of the (required homogeneous, irreducible, aperiodic) exact matrix.
pub fn theorem1_identity_check(parent: &ProcessModel, horizon: usize, cap: u64) -> Result<IdentityReport> {
    let joint = oracle::joint_table(parent, horizon, cap)?;
    let chain = emc_from_joint(&joint)?;
    if !chain.schedule().is_homogeneous() {
        return Err(EmcError::hypothesis(
            MODULE,
            "exact first-order matrices differ across time; the process is not first-order homogeneous",
        ));
    }
    let p = chain.schedule().at(0).expect("homogeneous schedule");
    require_primitive(&structure(p))?;
    let pi = solve_stationary(p)?;
    let propagated = chain.propagate_all(horizon)?;
    let mut deviation: f64 = 0.0;
    for (t, tilde) in propagated.iter().enumerate() {
        let exact = oracle::marginal(&joint, t)?;
        for a in 0..pi.len() {
            let lhs = exact.weights()[a] - pi.weights()[a];
            let rhs = tilde.weights()[a] - pi.weights()[a];
            deviation = deviation.max((lhs - rhs).abs());
        }
    }
    Ok(IdentityReport {
        horizon,
        stationary: pi,
        deviation,
        tolerance: IDENTITY_TOL,
        passed: deviation <= IDENTITY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DEFAULT_CAP;
    use crate::scenarios::scenario;
    use approx::assert_abs_diff_eq;

    fn m(rows: Vec<Vec<f64>>) -> StochasticMatrix {
        StochasticMatrix::strict(rows).unwrap()
    }

    fn two_cycle() -> StochasticMatrix {
        m(vec![vec![0.0, 1.0], vec![1.0, 0.0]])
    }

    #[test]
    fn positive_matrix_is_primitive_with_k1() {
        let r = structure(&m(vec![vec![0.9, 0.1], vec![0.2, 0.8]]));
        assert!(r.irreducible && r.aperiodic);
        assert_eq!(r.certificate, Some(1));
        assert_eq!(r.periods, vec![Some(1), Some(1)]);
    }

    #[test]
    fn identity_is_reducible() {
        let r = structure(&StochasticMatrix::identity(3));
        assert!(!r.irreducible);
        assert_eq!(r.closed_classes, vec![vec![0], vec![1], vec![2]]);
        assert!(r.certificate.is_none());
    }

    #[test]
    fn two_cycle_is_periodic() {
        let r = structure(&two_cycle());
        assert!(r.irreducible);
        assert!(!r.aperiodic);
        assert_eq!(r.periods, vec![Some(2), Some(2)]);
        assert!(r.certificate.is_none());
    }

    #[test]
    fn transient_state_without_return_has_no_period() {
        let r = structure(&m(vec![vec![0.0, 1.0], vec![0.0, 1.0]]));
        assert_eq!(r.periods, vec![None, Some(1)]);
        assert_eq!(r.closed_classes, vec![vec![1]]);
        assert!(!r.irreducible && !r.aperiodic);
    }

    #[test]
    fn wielandt_matrix_needs_maximal_power() {
        // n-cycle plus one chord: exponent is exactly (n−1)² + 1
        let n = 4;
        let mut rows = vec![vec![0.0; n]; n];
        for a in 0..n - 1 {
            rows[a][a + 1] = 1.0;
        }
        rows[n - 1][0] = 0.5;
        rows[n - 1][1] = 0.5;
        let p = m(rows);
        let r = structure(&p);
        assert_eq!(r.certificate, Some((n - 1) * (n - 1) + 1));
        assert!(p.pow(10).rows().iter().flatten().all(|&x| x > 0.0));
        assert!(!p.pow(9).rows().iter().flatten().all(|&x| x > 0.0));
    }

    #[test]
    fn stationary_hand_solve() {
        // 0.1·π0 = 0.2·π1 → π = (2/3, 1/3)
        let pi = stationary(&m(vec![vec![0.9, 0.1], vec![0.2, 0.8]])).unwrap();
        assert_abs_diff_eq!(pi.weights()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi.weights()[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_of_periodic_chain() {
        let pi = stationary(&two_cycle()).unwrap();
        assert_eq!(pi.weights(), &[0.5, 0.5]);
        let report = stationary_report(&two_cycle()).unwrap();
        assert!(report.power_agreement.is_none());
    }

    #[test]
    fn stationary_of_reducible_names_classes() {
        let err = stationary(&StochasticMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, EmcError::Hypothesis { .. }));
        assert!(err.to_string().contains("[[0], [1]]"), "{err}");
    }

    #[test]
    fn doubly_stochastic_gives_uniform() {
        let p = m(vec![vec![0.2, 0.5, 0.3], vec![0.5, 0.1, 0.4], vec![0.3, 0.4, 0.3]]);
        let pi = stationary(&p).unwrap();
        for &w in pi.weights() {
            assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn profile_examples() {
        let p = m(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let prof = convergence_profile(&ProbDist::point(2, 0), &p, 200).unwrap();
        assert_abs_diff_eq!(prof.rows[0].tv, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.rows[1].tv, 7.0 / 30.0, epsilon = 1e-12);
        assert!(prof.final_tv <= 1e-8 && prof.limit_reached);
        let at_pi = convergence_profile(&prof.stationary, &p, 20).unwrap();
        assert!(at_pi.rows.iter().all(|r| r.tv <= 1e-12));
        assert!(matches!(
            convergence_profile(&ProbDist::point(2, 0), &two_cycle(), 5),
            Err(EmcError::Hypothesis { .. })
        ));
    }

    #[test]
    fn profile_csv_header() {
        let p = m(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let csv = convergence_profile(&ProbDist::point(2, 0), &p, 1).unwrap().to_csv();
        assert!(csv.starts_with("t,tv\n0,5.0000000000000000e-1\n1,0"), "{csv}");
    }

    #[test]
    fn identity_for_markov_parent() {
        let r = theorem1_identity_check(&scenario("markov2").unwrap(), 8, DEFAULT_CAP).unwrap();
        assert!(r.deviation <= 1e-12, "{r:?}");
    }

    #[test]
    fn identity_for_stationary_second_order() {
        let r = theorem1_identity_check(&scenario("secondorder-stationary").unwrap(), 8, DEFAULT_CAP).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn identity_rejects_inhomogeneous_parent() {
        let err = theorem1_identity_check(&scenario("reinforced").unwrap(), 6, DEFAULT_CAP).unwrap_err();
        assert!(matches!(err, EmcError::Hypothesis { .. }), "{err}");
    }
}
