//! JSON model specification files.
//!
//! Every file is an object with a `"kind"` discriminator. States are named by
//! label everywhere a state appears as a value (contexts, prefixes); matrices
//! and weight vectors are ordered by label order.
//!
//! ```json
//! {"kind": "memoryless", "labels": ["a","b"], "initial": [1,0],
//!  "matrix": [[0.9,0.1],[0.2,0.8]]}
//!
//! {"kind": "kth_order", "labels": ["0","1"], "order": 2,
//!  "law": [{"context": ["0","1"], "next": [0.9,0.1]}, ...],
//!  "initial_joint": [{"prefix": ["0","0"], "p": 0.25}, ...]}
//!
//! {"kind": "reinforced", "labels": [...], "initial": [...],
//!  "base": [[...]], "beta": 1.0}
//!
//! {"kind": "regime_switch", "labels": [...], "initial": [...],
//!  "regime_initial": [...], "regime_transition": [[...]],
//!  "regime_matrices": [[[...]], ...]}
//!
//! {"kind": "markov_schedule", "labels": [...], "initial": [...],
//!  "matrices": [[[...]], ...], "homogeneous": false}
//! ```
//!
//! `kth_order` contexts list states oldest first. Prefixes omitted from
//! `initial_joint` have probability zero. `markov_schedule` is the format the
//! CLI uses to write out a first-order equivalent chain.

use serde::{Deserialize, Serialize};

use crate::error::{EmcError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Memoryless {
        labels: Vec<String>,
        initial: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
    KthOrder {
        labels: Vec<String>,
        order: usize,
        law: Vec<ContextLaw>,
        initial_joint: Vec<PrefixWeight>,
    },
    Reinforced {
        labels: Vec<String>,
        initial: Vec<f64>,
        base: Vec<Vec<f64>>,
        beta: f64,
    },
    RegimeSwitch {
        labels: Vec<String>,
        initial: Vec<f64>,
        regime_initial: Vec<f64>,
        regime_transition: Vec<Vec<f64>>,
        regime_matrices: Vec<Vec<Vec<f64>>>,
    },
    MarkovSchedule {
        labels: Vec<String>,
        initial: Vec<f64>,
        matrices: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        homogeneous: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextLaw {
    pub context: Vec<String>,
    pub next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixWeight {
    pub prefix: Vec<String>,
    pub p: f64,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| EmcError::validation("process", format!("model specification: {e}")))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Memoryless { .. } => "memoryless",
            ModelSpec::KthOrder { .. } => "kth_order",
            ModelSpec::Reinforced { .. } => "reinforced",
            ModelSpec::RegimeSwitch { .. } => "regime_switch",
            ModelSpec::MarkovSchedule { .. } => "markov_schedule",
        }
    }
}
