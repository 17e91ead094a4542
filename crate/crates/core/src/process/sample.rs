//! Seeded sampling of trajectories and ensembles.
//!
//! Each trajectory owns a ChaCha8 stream seeded from a 64-bit seed, so a
//! trajectory sampled to a longer horizon extends the shorter one. Ensemble
//! members get their seeds from [`derive_seed`], a splitmix64 step applied to
//! `master + (i + 1)·0x9E3779B97F4A7C15`, so ensembles do not depend on the
//! order (or thread) in which trajectories are generated.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LawCursor, ProcessModel};
use crate::error::{EmcError, Result};
use crate::state::{ProbDist, StateSpace, Trajectory};

const MODULE: &str = "process";
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of ensemble member `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws an index from `dist` using one uniform variate.
pub(crate) fn draw<R: Rng>(dist: &ProbDist, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut fallback = 0;
    for (i, &w) in dist.weights().iter().enumerate() {
        if w > 0.0 {
            acc += w;
            fallback = i;
            if u < acc {
                return i;
            }
        }
    }
    fallback
}

/// Step-by-step sampler over one seeded stream.
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    cursor: LawCursor<'a>,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a ProcessModel, seed: u64) -> Self {
        Sampler {
            cursor: model.cursor(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Draws and records the next state; the first call draws `x_0`.
    pub fn next_state(&mut self) -> usize {
        let law = self.cursor.next_law();
        let s = draw(&law, &mut self.rng);
        self.cursor.push(s);
        s
    }
}

/// Samples `x_0..x_horizon` (length `horizon + 1`).
pub fn sample_trajectory(model: &ProcessModel, horizon: usize, seed: u64) -> Trajectory {
    let mut sampler = Sampler::new(model, seed);
    let states = (0..=horizon).map(|_| sampler.next_state()).collect();
    Trajectory::from_states_unchecked(states)
}

/// A set of equal-length trajectories with the seeds that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub labels: StateSpace,
    pub trajectories: Vec<Trajectory>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub fingerprint: String,
    pub horizon: usize,
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    fingerprint: String,
    horizon: usize,
    master_seed: u64,
    count: usize,
    labels: StateSpace,
}

#[derive(Serialize, Deserialize)]
struct EnsembleLine {
    seed: u64,
    states: Vec<usize>,
}

/// `count` trajectories of length `horizon + 1`; member `i` is
/// `sample_trajectory(model, horizon, derive_seed(master_seed, i))`.
pub fn sample_ensemble(
    model: &ProcessModel,
    horizon: usize,
    count: usize,
    master_seed: u64,
) -> Result<TrajectoryEnsemble> {
    if count == 0 {
        return Err(EmcError::validation(MODULE, "ensemble size must be at least 1"));
    }
    let seeds: Vec<u64> = (0..count as u64).map(|i| derive_seed(master_seed, i)).collect();
    let trajectories = seeds
        .par_iter()
        .map(|&s| sample_trajectory(model, horizon, s))
        .collect();
    Ok(TrajectoryEnsemble {
        labels: model.space().clone(),
        trajectories,
        seeds,
        master_seed,
        fingerprint: model.fingerprint(),
        horizon,
    })
}

impl TrajectoryEnsemble {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Empirical law of the state at time `t` across the ensemble.
    pub fn marginal(&self, t: usize) -> Result<ProbDist> {
        if t > self.horizon {
            return Err(EmcError::Range {
                module: MODULE,
                index: t,
                available: self.horizon + 1,
            });
        }
        let mut counts = vec![0.0; self.n()];
        for traj in &self.trajectories {
            counts[traj.states()[t]] += 1.0;
        }
        ProbDist::normalized(&counts)
    }

    /// Header line followed by one `{"seed", "states"}` object per line.
    pub fn to_jsonl(&self) -> String {
        let header = EnsembleHeader {
            fingerprint: self.fingerprint.clone(),
            horizon: self.horizon,
            master_seed: self.master_seed,
            count: self.trajectories.len(),
            labels: self.labels.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (traj, &seed) in self.trajectories.iter().zip(&self.seeds) {
            let line = EnsembleLine {
                seed,
                states: traj.states().to_vec(),
            };
            out.push_str(&serde_json::to_string(&line).expect("line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |line: usize, msg: String| EmcError::validation(MODULE, format!("ensemble line {line}: {msg}"));
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let (_, first) = lines
            .next()
            .ok_or_else(|| EmcError::validation(MODULE, "empty ensemble file"))?;
        let first = first.map_err(|e| bad(1, e.to_string()))?;
        let header: EnsembleHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        let n = header.labels.len();
        let mut trajectories = Vec::new();
        let mut seeds = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            let parsed: EnsembleLine = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            if parsed.states.len() != header.horizon + 1 {
                return Err(bad(
                    i + 1,
                    format!(
                        "{} states, header horizon {} needs {}",
                        parsed.states.len(),
                        header.horizon,
                        header.horizon + 1
                    ),
                ));
            }
            let traj = Trajectory::new(parsed.states, n).map_err(|e| bad(i + 1, e.to_string()))?;
            trajectories.push(traj);
            seeds.push(parsed.seed);
        }
        if trajectories.is_empty() {
            return Err(EmcError::validation(MODULE, "ensemble holds no trajectories"));
        }
        if trajectories.len() != header.count {
            return Err(EmcError::validation(
                MODULE,
                format!(
                    "header announces {} trajectories, found {}",
                    header.count,
                    trajectories.len()
                ),
            ));
        }
        Ok(TrajectoryEnsemble {
            labels: header.labels,
            trajectories,
            seeds,
            master_seed: header.master_seed,
            fingerprint: header.fingerprint,
            horizon: header.horizon,
        })
    }

    /// Wraps externally observed trajectories (no seeds; recorded as 0).
    pub fn from_trajectories(labels: StateSpace, trajectories: Vec<Trajectory>) -> Result<Self> {
        let Some(first) = trajectories.first() else {
            return Err(EmcError::validation(MODULE, "ensemble must be nonempty"));
        };
        let len = first.len();
        if let Some(i) = trajectories.iter().position(|t| t.len() != len) {
            return Err(EmcError::validation(
                MODULE,
                format!("trajectory {i} has length {}, expected {len}", trajectories[i].len()),
            ));
        }
        for t in &trajectories {
            Trajectory::new(t.states().to_vec(), labels.len())?;
        }
        Ok(TrajectoryEnsemble {
            seeds: vec![0; trajectories.len()],
            labels,
            trajectories,
            master_seed: 0,
            fingerprint: String::from("external"),
            horizon: len - 1,
        })
    }
}
