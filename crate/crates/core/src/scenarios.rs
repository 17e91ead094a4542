//! Named built-in models used by the CLI, the verification suite and the docs.
//!
//! | name | model |
//! |------|-------|
//! | `markov2` | memoryless, `P = [[0.9,0.1],[0.2,0.8]]`, `x_0 = 0` |
//! | `secondorder` | order 2 on `{0,1}`: next state equals the state two steps back w.p. 0.9; initial pairs `00:0.4, 01:0.1, 10:0.1, 11:0.4` |
//! | `secondorder-stationary` | `secondorder` started from the stationary law of its pair chain (uniform pairs) |
//! | `reinforced` | base `[[0.7,0.3],[0.4,0.6]]`, `β = 1`, uniform start |
//! | `regime` | 3 states, 2 hidden regimes (`[[0.95,0.05],[0.1,0.9]]`, uniform start): regime 0 mostly stays, regime 1 mostly cycles `0→1→2→0`; `x_0 ~ (0.6,0.3,0.1)` |

use crate::error::{EmcError, Result};
use crate::process::{build_model, ContextLaw, ModelSpec, PrefixWeight, ProcessModel};

/// Names accepted by [`scenario`], in verification order.
pub const SCENARIO_NAMES: [&str; 5] = [
    "markov2",
    "secondorder",
    "secondorder-stationary",
    "reinforced",
    "regime",
];

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

pub fn markov2_spec() -> ModelSpec {
    ModelSpec::Memoryless {
        labels: labels(2),
        initial: vec![1.0, 0.0],
        matrix: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
    }
}

pub fn secondorder_spec() -> ModelSpec {
    let law = [("0", "0"), ("0", "1"), ("1", "0"), ("1", "1")]
        .iter()
        .map(|&(older, newer)| ContextLaw {
            context: vec![older.into(), newer.into()],
            next: if older == "0" { vec![0.9, 0.1] } else { vec![0.1, 0.9] },
        })
        .collect();
    let initial_joint = [("0", "0", 0.4), ("0", "1", 0.1), ("1", "0", 0.1), ("1", "1", 0.4)]
        .iter()
        .map(|&(x, y, p)| PrefixWeight {
            prefix: vec![x.into(), y.into()],
            p,
        })
        .collect();
    ModelSpec::KthOrder {
        labels: labels(2),
        order: 2,
        law,
        initial_joint,
    }
}

pub fn reinforced_spec() -> ModelSpec {
    ModelSpec::Reinforced {
        labels: labels(2),
        initial: vec![0.5, 0.5],
        base: vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        beta: 1.0,
    }
}

pub fn regime_spec() -> ModelSpec {
    ModelSpec::RegimeSwitch {
        labels: labels(3),
        initial: vec![0.6, 0.3, 0.1],
        regime_initial: vec![0.5, 0.5],
        regime_transition: vec![vec![0.95, 0.05], vec![0.1, 0.9]],
        regime_matrices: vec![
            vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8]],
            vec![vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8], vec![0.8, 0.1, 0.1]],
        ],
    }
}

/// Builds the named scenario.
pub fn scenario(name: &str) -> Result<ProcessModel> {
    match name {
        "markov2" => build_model(&markov2_spec()),
        "secondorder" => build_model(&secondorder_spec()),
        "secondorder-stationary" => build_model(&secondorder_spec())?.with_block_stationary_start(),
        "reinforced" => build_model(&reinforced_spec()),
        "regime" => build_model(&regime_spec()),
        other => Err(EmcError::validation(
            "scenarios",
            format!("unknown scenario {other:?}; known: {}", SCENARIO_NAMES.join(", ")),
        )),
    }
}
