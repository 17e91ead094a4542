//! Finite-state discrete-time processes behind a single history-conditioned
//! interface: given the full observed history `x_0..x_t`, produce the law of
//! `x_{t+1}`.
//!
//! The family mixes genuine Markov chains with processes that are not
//! Markov as first-order processes:
//!
//! * [`ModelKind::Memoryless`]: homogeneous Markov chain.
//! * [`ModelKind::KthOrder`]: the next state depends on the last `k` states.
//! * [`ModelKind::Reinforced`]: transitions are tilted toward states that were
//!   visited often in the whole history, so the dependence never fades.
//! * [`ModelKind::RegimeSwitch`]: a hidden regime chain selects the transition
//!   matrix; only the observed state is part of the history.
//! * [`ModelKind::MarkovSchedule`]: time-inhomogeneous Markov chain, the
//!   representation of a first-order equivalent chain.
//!
//! Laws are evaluated incrementally through [`LawCursor`], which is what both
//! sampling and exact enumeration use.

mod sample;
mod spec;

pub use sample::{derive_seed, sample_ensemble, sample_trajectory, Sampler, TrajectoryEnsemble};
pub use spec::{ContextLaw, ModelSpec, PrefixWeight};

use sha2::{Digest, Sha256};

use crate::error::{EmcError, Result};
use crate::state::{MatrixSchedule, ProbDist, StateSpace, StochasticMatrix, Trajectory, SUM_TOL};

const MODULE: &str = "process";

/// Kind-specific parameters of a [`ProcessModel`].
#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Memoryless {
        matrix: StochasticMatrix,
    },
    KthOrder {
        order: usize,
        /// `n^order` next-state laws indexed by context, oldest state most significant.
        law: Vec<ProbDist>,
        /// Joint law of the first `order` states, same indexing as `law`.
        initial_joint: Vec<f64>,
        /// `prefix_mass[l]` is the marginal of the first `l + 1` states.
        prefix_mass: Vec<Vec<f64>>,
    },
    Reinforced {
        base: StochasticMatrix,
        beta: f64,
    },
    RegimeSwitch {
        regime_initial: ProbDist,
        regime_transition: StochasticMatrix,
        regime_matrices: Vec<StochasticMatrix>,
    },
    MarkovSchedule {
        schedule: MatrixSchedule,
    },
}

/// A validated process model. Immutable; the conditional law is a pure
/// function of the history.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessModel {
    space: StateSpace,
    initial: ProbDist,
    kind: ModelKind,
}

/// Validates a specification and builds the model it describes.
pub fn build_model(spec: &ModelSpec) -> Result<ProcessModel> {
    match spec {
        ModelSpec::Memoryless {
            labels,
            initial,
            matrix,
        } => {
            let space = StateSpace::new(labels.clone())?;
            let initial = dist_at(initial, space.len(), "initial")?;
            let matrix = matrix_at(matrix, space.len(), "matrix")?;
            ProcessModel::memoryless(space, initial, matrix)
        }
        ModelSpec::KthOrder {
            labels,
            order,
            law,
            initial_joint,
        } => {
            let space = StateSpace::new(labels.clone())?;
            let n = space.len();
            let k = *order;
            let contexts = context_count(n, k)?;
            let mut table: Vec<Option<ProbDist>> = vec![None; contexts];
            for (entry_no, entry) in law.iter().enumerate() {
                let idx = encode_labels(&space, &entry.context, k, &format!("law[{entry_no}].context"))?;
                let dist = dist_at(&entry.next, n, &format!("law[{entry_no}].next"))?;
                if table[idx].replace(dist).is_some() {
                    return Err(EmcError::validation(
                        MODULE,
                        format!("law[{entry_no}]: context {:?} listed twice", entry.context),
                    ));
                }
            }
            let mut filled = Vec::with_capacity(contexts);
            for (idx, slot) in table.into_iter().enumerate() {
                match slot {
                    Some(d) => filled.push(d),
                    None => {
                        let ctx: Vec<&str> = decode_index(idx, n, k)
                            .into_iter()
                            .map(|s| space.label(s).unwrap())
                            .collect();
                        return Err(EmcError::validation(
                            MODULE,
                            format!("law table is missing context {ctx:?}"),
                        ));
                    }
                }
            }
            let mut joint = vec![0.0; contexts];
            for (entry_no, entry) in initial_joint.iter().enumerate() {
                let at = format!("initial_joint[{entry_no}]");
                let idx = encode_labels(&space, &entry.prefix, k, &format!("{at}.prefix"))?;
                if !entry.p.is_finite() || !(0.0..=1.0).contains(&entry.p) {
                    return Err(EmcError::validation(
                        MODULE,
                        format!("{at}.p is {}, outside [0, 1]", entry.p),
                    ));
                }
                joint[idx] += entry.p;
            }
            ProcessModel::kth_order(space, k, filled, joint)
        }
        ModelSpec::Reinforced {
            labels,
            initial,
            base,
            beta,
        } => {
            let space = StateSpace::new(labels.clone())?;
            let initial = dist_at(initial, space.len(), "initial")?;
            let base = matrix_at(base, space.len(), "base")?;
            ProcessModel::reinforced(space, initial, base, *beta)
        }
        ModelSpec::RegimeSwitch {
            labels,
            initial,
            regime_initial,
            regime_transition,
            regime_matrices,
        } => {
            let space = StateSpace::new(labels.clone())?;
            let n = space.len();
            let initial = dist_at(initial, n, "initial")?;
            let r = regime_initial.len();
            if r == 0 {
                return Err(EmcError::validation(MODULE, "regime_initial must be nonempty"));
            }
            let regime_initial = dist_at(regime_initial, r, "regime_initial")?;
            let regime_transition = matrix_at(regime_transition, r, "regime_transition")?;
            if regime_matrices.len() != r {
                return Err(EmcError::validation(
                    MODULE,
                    format!("regime_matrices has {} entries, expected {r}", regime_matrices.len()),
                ));
            }
            let regime_matrices = regime_matrices
                .iter()
                .enumerate()
                .map(|(i, m)| matrix_at(m, n, &format!("regime_matrices[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            ProcessModel::regime_switch(space, initial, regime_initial, regime_transition, regime_matrices)
        }
        ModelSpec::MarkovSchedule {
            labels,
            initial,
            matrices,
            homogeneous,
        } => {
            let space = StateSpace::new(labels.clone())?;
            let n = space.len();
            let initial = dist_at(initial, n, "initial")?;
            let mats = matrices
                .iter()
                .enumerate()
                .map(|(i, m)| matrix_at(m, n, &format!("matrices[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            let schedule = if *homogeneous {
                if mats.len() != 1 {
                    return Err(EmcError::validation(
                        MODULE,
                        "a homogeneous schedule holds exactly one matrix",
                    ));
                }
                MatrixSchedule::homogeneous(mats.into_iter().next().unwrap())
            } else {
                MatrixSchedule::varying(mats)?
            };
            ProcessModel::markov_schedule(space, initial, schedule)
        }
    }
}

fn dist_at(weights: &[f64], n: usize, at: &str) -> Result<ProbDist> {
    if weights.len() != n {
        return Err(EmcError::validation(
            MODULE,
            format!("{at} has {} entries, expected {n}", weights.len()),
        ));
    }
    ProbDist::strict(weights.to_vec()).map_err(|e| EmcError::validation(MODULE, format!("{at}: {}", strip(&e))))
}

fn matrix_at(rows: &[Vec<f64>], n: usize, at: &str) -> Result<StochasticMatrix> {
    if rows.len() != n {
        return Err(EmcError::validation(
            MODULE,
            format!("{at} has {} rows, expected {n}", rows.len()),
        ));
    }
    StochasticMatrix::strict(rows.to_vec()).map_err(|e| EmcError::validation(MODULE, format!("{at}: {}", strip(&e))))
}

fn strip(e: &EmcError) -> String {
    match e {
        EmcError::Validation { message, .. } => message.clone(),
        other => other.to_string(),
    }
}

fn context_count(n: usize, k: usize) -> Result<usize> {
    if k < 2 {
        return Err(EmcError::validation(
            MODULE,
            format!("order must be at least 2, got {k}"),
        ));
    }
    n.checked_pow(k as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| EmcError::validation(MODULE, format!("{n}^{k} contexts is too many")))
}

fn encode_labels(space: &StateSpace, labels: &[String], k: usize, at: &str) -> Result<usize> {
    if labels.len() != k {
        return Err(EmcError::validation(
            MODULE,
            format!("{at} has length {}, expected {k}", labels.len()),
        ));
    }
    let mut idx = 0;
    for label in labels {
        let s = space
            .index_of(label)
            .ok_or_else(|| EmcError::validation(MODULE, format!("{at}: unknown state {label:?}")))?;
        idx = idx * space.len() + s;
    }
    Ok(idx)
}

/// Base-`n` digits of `idx`, most significant first, `len` digits.
pub(crate) fn decode_index(mut idx: usize, n: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = idx % n;
        idx /= n;
    }
    out
}

impl ProcessModel {
    pub fn memoryless(space: StateSpace, initial: ProbDist, matrix: StochasticMatrix) -> Result<Self> {
        check_dims(&space, &initial, &[&matrix])?;
        Ok(ProcessModel {
            space,
            initial,
            kind: ModelKind::Memoryless { matrix },
        })
    }

    /// `law` and `initial_joint` are indexed by context, oldest state most
    /// significant.
    pub fn kth_order(space: StateSpace, order: usize, law: Vec<ProbDist>, initial_joint: Vec<f64>) -> Result<Self> {
        let n = space.len();
        let contexts = context_count(n, order)?;
        if law.len() != contexts || initial_joint.len() != contexts {
            return Err(EmcError::validation(
                MODULE,
                format!(
                    "order-{order} model over {n} states needs {contexts} contexts (law has {}, initial joint {})",
                    law.len(),
                    initial_joint.len()
                ),
            ));
        }
        if let Some(i) = law.iter().position(|d| d.len() != n) {
            return Err(EmcError::validation(
                MODULE,
                format!("law for context {:?} has the wrong length", decode_index(i, n, order)),
            ));
        }
        if let Some(i) = initial_joint.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(EmcError::validation(
                MODULE,
                format!("initial joint at prefix {:?} is negative", decode_index(i, n, order)),
            ));
        }
        let total: f64 = initial_joint.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(EmcError::validation(
                MODULE,
                format!("initial joint sums to {total}, not 1"),
            ));
        }
        let mut prefix_mass = vec![initial_joint.clone()];
        for _ in 1..order {
            let finer = prefix_mass.last().unwrap();
            let coarser: Vec<f64> = finer.chunks(n).map(|c| c.iter().sum()).collect();
            prefix_mass.push(coarser);
        }
        prefix_mass.reverse();
        let initial = ProbDist::normalized(&prefix_mass[0])?;
        Ok(ProcessModel {
            space,
            initial,
            kind: ModelKind::KthOrder {
                order,
                law,
                initial_joint,
                prefix_mass,
            },
        })
    }

    pub fn reinforced(space: StateSpace, initial: ProbDist, base: StochasticMatrix, beta: f64) -> Result<Self> {
        check_dims(&space, &initial, &[&base])?;
        if !beta.is_finite() || beta < 0.0 {
            return Err(EmcError::validation(
                MODULE,
                format!("reinforcement weight beta must be finite and >= 0, got {beta}"),
            ));
        }
        Ok(ProcessModel {
            space,
            initial,
            kind: ModelKind::Reinforced { base, beta },
        })
    }

    pub fn regime_switch(
        space: StateSpace,
        initial: ProbDist,
        regime_initial: ProbDist,
        regime_transition: StochasticMatrix,
        regime_matrices: Vec<StochasticMatrix>,
    ) -> Result<Self> {
        let mats: Vec<&StochasticMatrix> = regime_matrices.iter().collect();
        check_dims(&space, &initial, &mats)?;
        let r = regime_initial.len();
        if regime_transition.n() != r || regime_matrices.len() != r {
            return Err(EmcError::validation(
                MODULE,
                format!(
                    "regime dimensions disagree: initial {r}, transition {}, matrices {}",
                    regime_transition.n(),
                    regime_matrices.len()
                ),
            ));
        }
        Ok(ProcessModel {
            space,
            initial,
            kind: ModelKind::RegimeSwitch {
                regime_initial,
                regime_transition,
                regime_matrices,
            },
        })
    }

    pub fn markov_schedule(space: StateSpace, initial: ProbDist, schedule: MatrixSchedule) -> Result<Self> {
        let mats: Vec<&StochasticMatrix> = schedule.matrices().iter().collect();
        check_dims(&space, &initial, &mats)?;
        Ok(ProcessModel {
            space,
            initial,
            kind: ModelKind::MarkovSchedule { schedule },
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.space.len()
    }

    /// Law of the state at time 0.
    pub fn initial(&self) -> &ProbDist {
        &self.initial
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// True for the variants whose law reads only the last state (and time).
    pub fn is_markov(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::Memoryless { .. } | ModelKind::MarkovSchedule { .. }
        )
    }

    pub fn cursor(&self) -> LawCursor<'_> {
        LawCursor::new(self)
    }

    /// Law of the next state given the full history `history` (starting at
    /// time 0).
    pub fn conditional_next(&self, history: &Trajectory) -> Result<ProbDist> {
        if history.origin() != 0 {
            return Err(EmcError::validation(
                MODULE,
                format!("history must start at time 0, starts at {}", history.origin()),
            ));
        }
        let mut cursor = self.cursor();
        for (i, &s) in history.states().iter().enumerate() {
            if s >= self.n() {
                return Err(EmcError::validation(
                    MODULE,
                    format!("history position {i} holds state {s} outside [0, {})", self.n()),
                ));
            }
            cursor.push(s);
        }
        Ok(cursor.next_law())
    }

    /// Same process, started from `law` at time 0.
    ///
    /// For order-`k` models the first state is reweighted and the rest of the
    /// initial prefix keeps its conditional law given the first state.
    pub fn with_initial(&self, law: &ProbDist) -> Result<ProcessModel> {
        if law.len() != self.n() {
            return Err(EmcError::validation(
                MODULE,
                format!("initial law has {} entries, expected {}", law.len(), self.n()),
            ));
        }
        match &self.kind {
            ModelKind::KthOrder {
                order,
                law: table,
                initial_joint,
                prefix_mass,
            } => {
                let n = self.n();
                let block = initial_joint.len() / n;
                let mut joint = vec![0.0; initial_joint.len()];
                for x0 in 0..n {
                    let target = law.weights()[x0];
                    if target == 0.0 {
                        continue;
                    }
                    let mass = prefix_mass[0][x0];
                    if mass <= 0.0 {
                        return Err(EmcError::hypothesis(
                            MODULE,
                            format!(
                                "cannot start from state {:?}: the initial joint gives it zero mass",
                                self.space.label(x0).unwrap()
                            ),
                        ));
                    }
                    for j in 0..block {
                        joint[x0 * block + j] = target * initial_joint[x0 * block + j] / mass;
                    }
                }
                ProcessModel::kth_order(self.space.clone(), *order, table.clone(), joint)
            }
            _ => {
                let mut model = self.clone();
                model.initial = law.clone();
                Ok(model)
            }
        }
    }

    /// For order-`k` models: the stationary law of the lifted chain on
    /// `k`-blocks, found by power iteration on its lazy version (which has the
    /// same fixed points and is aperiodic).
    pub fn block_stationary_joint(&self) -> Result<Vec<f64>> {
        let ModelKind::KthOrder { law, .. } = &self.kind else {
            return Err(EmcError::hypothesis(
                MODULE,
                "block stationary joint needs an order-k model",
            ));
        };
        let n = self.n();
        let contexts = law.len();
        let mut mu = vec![1.0 / contexts as f64; contexts];
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; contexts];
            for (ctx, &m) in mu.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                next[ctx] += 0.5 * m;
                let shifted = (ctx * n) % contexts;
                for (b, &p) in law[ctx].weights().iter().enumerate() {
                    next[shifted + b] += 0.5 * m * p;
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
            let change: f64 = 0.5 * mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>();
            mu = next;
            if change <= 1e-16 {
                return Ok(mu);
            }
        }
        Err(EmcError::hypothesis(
            MODULE,
            "power iteration on the block chain did not converge",
        ))
    }

    /// The same order-`k` model started from [`Self::block_stationary_joint`].
    pub fn with_block_stationary_start(&self) -> Result<ProcessModel> {
        let joint = self.block_stationary_joint()?;
        let ModelKind::KthOrder { order, law, .. } = &self.kind else {
            unreachable!("checked by block_stationary_joint");
        };
        ProcessModel::kth_order(self.space.clone(), *order, law.clone(), joint)
    }

    /// Serializable form of this model.
    pub fn to_spec(&self) -> ModelSpec {
        let labels = self.space.labels().to_vec();
        let initial = self.initial.weights().to_vec();
        match &self.kind {
            ModelKind::Memoryless { matrix } => ModelSpec::Memoryless {
                labels,
                initial,
                matrix: matrix.rows(),
            },
            ModelKind::KthOrder {
                order,
                law,
                initial_joint,
                ..
            } => {
                let n = self.n();
                let names = |idx: usize| -> Vec<String> {
                    decode_index(idx, n, *order)
                        .into_iter()
                        .map(|s| self.space.label(s).unwrap().to_string())
                        .collect()
                };
                ModelSpec::KthOrder {
                    labels,
                    order: *order,
                    law: law
                        .iter()
                        .enumerate()
                        .map(|(i, d)| ContextLaw {
                            context: names(i),
                            next: d.weights().to_vec(),
                        })
                        .collect(),
                    initial_joint: initial_joint
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(i, p)| PrefixWeight {
                            prefix: names(i),
                            p: *p,
                        })
                        .collect(),
                }
            }
            ModelKind::Reinforced { base, beta } => ModelSpec::Reinforced {
                labels,
                initial,
                base: base.rows(),
                beta: *beta,
            },
            ModelKind::RegimeSwitch {
                regime_initial,
                regime_transition,
                regime_matrices,
            } => ModelSpec::RegimeSwitch {
                labels,
                initial,
                regime_initial: regime_initial.weights().to_vec(),
                regime_transition: regime_transition.rows(),
                regime_matrices: regime_matrices.iter().map(StochasticMatrix::rows).collect(),
            },
            ModelKind::MarkovSchedule { schedule } => ModelSpec::MarkovSchedule {
                labels,
                initial,
                matrices: schedule.matrices().iter().map(StochasticMatrix::rows).collect(),
                homogeneous: schedule.is_homogeneous(),
            },
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the model parameters.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(&self.to_spec()).expect("model spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn check_dims(space: &StateSpace, initial: &ProbDist, matrices: &[&StochasticMatrix]) -> Result<()> {
    let n = space.len();
    if initial.len() != n {
        return Err(EmcError::validation(
            MODULE,
            format!("initial law has {} entries, state space has {n}", initial.len()),
        ));
    }
    if let Some(i) = matrices.iter().position(|m| m.n() != n) {
        return Err(EmcError::validation(
            MODULE,
            format!("matrix {i} has dimension {}, state space has {n}", matrices[i].n()),
        ));
    }
    Ok(())
}

/// Incremental evaluator of a model's conditional law.
///
/// Push the observed states one at a time; [`LawCursor::next_law`] returns the
/// law of the next state given everything pushed so far. Histories of
/// probability zero under the model get the uniform law.
#[derive(Clone, Debug)]
pub struct LawCursor<'a> {
    model: &'a ProcessModel,
    len: usize,
    last: usize,
    memory: Memory,
}

#[derive(Clone, Debug)]
enum Memory {
    None,
    /// Base-n encoding of the last `min(len, k)` states.
    Window(usize),
    Visits(Vec<u64>),
    /// Filtered law of the current regime; `None` once the history is impossible.
    Belief(Option<Vec<f64>>),
}

impl<'a> LawCursor<'a> {
    fn new(model: &'a ProcessModel) -> Self {
        let memory = match &model.kind {
            ModelKind::Memoryless { .. } | ModelKind::MarkovSchedule { .. } => Memory::None,
            ModelKind::KthOrder { .. } => Memory::Window(0),
            ModelKind::Reinforced { .. } => Memory::Visits(vec![0; model.n()]),
            ModelKind::RegimeSwitch { regime_initial, .. } => Memory::Belief(Some(regime_initial.weights().to_vec())),
        };
        LawCursor {
            model,
            len: 0,
            last: 0,
            memory,
        }
    }

    /// Number of states pushed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, state: usize) {
        let n = self.model.n();
        debug_assert!(state < n);
        match (&mut self.memory, &self.model.kind) {
            (Memory::None, _) => {}
            (Memory::Window(ctx), ModelKind::KthOrder { law, .. }) => {
                *ctx = (*ctx * n + state) % law.len();
            }
            (Memory::Visits(v), _) => v[state] += 1,
            (
                Memory::Belief(belief),
                ModelKind::RegimeSwitch {
                    regime_transition,
                    regime_matrices,
                    ..
                },
            ) => {
                if self.len > 0 {
                    if let Some(current) = belief.take() {
                        let r = current.len();
                        let mut next = vec![0.0; r];
                        for (from, &w) in current.iter().enumerate() {
                            let emit = w * regime_matrices[from].get(self.last, state);
                            if emit == 0.0 {
                                continue;
                            }
                            for (to, slot) in next.iter_mut().enumerate() {
                                *slot += emit * regime_transition.get(from, to);
                            }
                        }
                        let total: f64 = next.iter().sum();
                        if total > 0.0 {
                            next.iter_mut().for_each(|x| *x /= total);
                            *belief = Some(next);
                        }
                    }
                }
            }
            _ => unreachable!("cursor memory matches model kind"),
        }
        self.last = state;
        self.len += 1;
    }

    /// Law of the next state. Before any push this is the initial law.
    pub fn next_law(&self) -> ProbDist {
        let model = self.model;
        let n = model.n();
        if self.len == 0 {
            return model.initial.clone();
        }
        let a = self.last;
        match (&model.kind, &self.memory) {
            (ModelKind::Memoryless { matrix }, _) => matrix.row_dist(a),
            (ModelKind::MarkovSchedule { schedule }, _) => {
                let t = self.len - 1;
                let m = schedule
                    .at(t)
                    .unwrap_or_else(|| schedule.matrices().last().expect("nonempty schedule"));
                m.row_dist(a)
            }
            (
                ModelKind::KthOrder {
                    order,
                    law,
                    prefix_mass,
                    ..
                },
                Memory::Window(ctx),
            ) => {
                if self.len >= *order {
                    law[*ctx].clone()
                } else {
                    let finer = &prefix_mass[self.len];
                    let block = &finer[ctx * n..(ctx + 1) * n];
                    ProbDist::normalized(block).unwrap_or_else(|_| ProbDist::uniform(n))
                }
            }
            (ModelKind::Reinforced { base, beta }, Memory::Visits(visits)) => {
                let len = self.len as f64;
                let weights: Vec<f64> = base
                    .row(a)
                    .iter()
                    .zip(visits)
                    .map(|(&p, &v)| p * (1.0 + beta * v as f64 / len))
                    .collect();
                ProbDist::normalized(&weights).expect("row has positive mass")
            }
            (ModelKind::RegimeSwitch { regime_matrices, .. }, Memory::Belief(belief)) => {
                let Some(belief) = belief else {
                    return ProbDist::uniform(n);
                };
                let mut out = vec![0.0; n];
                for (r, &w) in belief.iter().enumerate() {
                    for (o, &p) in out.iter_mut().zip(regime_matrices[r].row(a)) {
                        *o += w * p;
                    }
                }
                ProbDist::normalized(&out).unwrap_or_else(|_| ProbDist::uniform(n))
            }
            _ => unreachable!("cursor memory matches model kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn traj(states: &[usize]) -> Trajectory {
        Trajectory::from_states_unchecked(states.to_vec())
    }

    fn second_order_spec() -> ModelSpec {
        crate::scenarios::secondorder_spec()
    }

    #[test]
    fn memoryless_permutation_alternates() {
        let spec = ModelSpec::Memoryless {
            labels: vec!["a".into(), "b".into()],
            initial: vec![1.0, 0.0],
            matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        let m = build_model(&spec).unwrap();
        assert_eq!(m.conditional_next(&traj(&[0, 1, 0])).unwrap().weights(), &[0.0, 1.0]);
        assert_eq!(m.conditional_next(&traj(&[1])).unwrap().weights(), &[1.0, 0.0]);
    }

    #[test]
    fn kth_order_lookup() {
        let m = build_model(&second_order_spec()).unwrap();
        assert_eq!(m.conditional_next(&traj(&[0, 1])).unwrap().weights(), &[0.9, 0.1]);
        assert_eq!(m.conditional_next(&traj(&[1, 1, 1])).unwrap().weights(), &[0.1, 0.9]);
        // prefix phase: Pr(x1 | x0=0) from the initial joint
        let p = m.conditional_next(&traj(&[0])).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 0.8, epsilon = 1e-15);
        assert_eq!(m.initial().weights(), &[0.5, 0.5]);
    }

    #[test]
    fn kth_order_missing_context_is_named() {
        let mut spec = second_order_spec();
        if let ModelSpec::KthOrder { law, .. } = &mut spec {
            law.remove(2);
        }
        let err = build_model(&spec).unwrap_err();
        assert!(err.to_string().contains(r#"["1", "0"]"#), "{err}");
    }

    #[test]
    fn non_stochastic_row_is_located() {
        let spec = ModelSpec::Reinforced {
            labels: vec!["a".into(), "b".into()],
            initial: vec![0.5, 0.5],
            base: vec![vec![0.5, 0.5], vec![0.7, 0.7]],
            beta: 1.0,
        };
        let err = build_model(&spec).unwrap_err();
        assert!(err.to_string().contains("base: row 1"), "{err}");
    }

    #[test]
    fn order_below_two_rejected() {
        let mut spec = second_order_spec();
        if let ModelSpec::KthOrder { order, .. } = &mut spec {
            *order = 1;
        }
        assert!(build_model(&spec).is_err());
    }

    #[test]
    fn reinforced_hand_evaluation() {
        let m = ProcessModel::reinforced(
            StateSpace::indexed(2).unwrap(),
            ProbDist::uniform(2),
            StochasticMatrix::uniform(2),
            1.0,
        )
        .unwrap();
        // weights ∝ 0.5·(1 + 3/3), 0.5·(1 + 0) = (1.0, 0.5)
        let p = m.conditional_next(&traj(&[0, 0, 0])).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.weights()[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn reinforced_beta_zero_is_base_row() {
        let base = StochasticMatrix::strict(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let m =
            ProcessModel::reinforced(StateSpace::indexed(2).unwrap(), ProbDist::uniform(2), base.clone(), 0.0).unwrap();
        for h in [vec![0], vec![1, 1, 0], vec![0, 0, 0, 1]] {
            let last = *h.last().unwrap();
            assert_eq!(m.conditional_next(&traj(&h)).unwrap(), base.row_dist(last));
        }
    }

    #[test]
    fn negative_beta_rejected() {
        let r = ProcessModel::reinforced(
            StateSpace::indexed(2).unwrap(),
            ProbDist::uniform(2),
            StochasticMatrix::uniform(2),
            -0.5,
        );
        assert!(matches!(r, Err(EmcError::Validation { .. })));
    }

    #[test]
    fn regime_filter_single_step() {
        // two regimes: regime 0 always stays, regime 1 always flips; regimes persist
        let m = ProcessModel::regime_switch(
            StateSpace::indexed(2).unwrap(),
            ProbDist::uniform(2),
            ProbDist::uniform(2),
            StochasticMatrix::identity(2),
            vec![
                StochasticMatrix::identity(2),
                StochasticMatrix::strict(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            ],
        )
        .unwrap();
        // before any transition, regimes are 50/50
        assert_eq!(m.conditional_next(&traj(&[0])).unwrap().weights(), &[0.5, 0.5]);
        // observing a flip reveals regime 1
        assert_eq!(m.conditional_next(&traj(&[0, 1])).unwrap().weights(), &[1.0, 0.0]);
        assert_eq!(m.conditional_next(&traj(&[0, 0])).unwrap().weights(), &[1.0, 0.0]);
        // impossible history (stay then flip) falls back to uniform
        assert_eq!(m.conditional_next(&traj(&[0, 0, 1])).unwrap().weights(), &[0.5, 0.5]);
    }

    #[test]
    fn out_of_range_history_rejected() {
        let m = build_model(&second_order_spec()).unwrap();
        assert!(m.conditional_next(&traj(&[0, 5])).is_err());
        let shifted = traj(&[0, 1]).with_origin(3);
        assert!(m.conditional_next(&shifted).is_err());
    }

    #[test]
    fn block_stationary_of_second_order_is_uniform() {
        let m = build_model(&second_order_spec()).unwrap();
        let joint = m.block_stationary_joint().unwrap();
        for p in joint {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn with_initial_reweights_first_state() {
        let m = build_model(&second_order_spec()).unwrap();
        let started = m.with_initial(&ProbDist::point(2, 1)).unwrap();
        assert_eq!(started.initial().weights(), &[0.0, 1.0]);
        let ModelKind::KthOrder { initial_joint, .. } = started.kind() else {
            panic!()
        };
        assert_abs_diff_eq!(initial_joint[2], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(initial_joint[3], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn spec_round_trip_preserves_fingerprint() {
        let m = build_model(&second_order_spec()).unwrap();
        let again = build_model(&ModelSpec::from_json(&m.to_spec().to_json_pretty()).unwrap()).unwrap();
        assert_eq!(m, again);
        assert_eq!(m.fingerprint(), again.fingerprint());
        assert_eq!(m.fingerprint().len(), 64);
    }
}
