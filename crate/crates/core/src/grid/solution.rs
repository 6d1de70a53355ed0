//! Solution JSON format: per-case records of bus voltages/angles, generator
//! injections, branch flows, slack values, the drop signal, and the objective
//! decomposition. Maps are keyed by element id and kept ordered so emitted
//! files are byte-stable for identical solutions.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One additive term of the objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// `piecewise` or `quadratic` penalty evaluation.
    pub mode: String,
    pub total: f64,
    pub base_cost: f64,
    pub base_penalty: f64,
    /// 1/(|K|-1): weight on each contingency's penalty.
    pub contingency_weight: f64,
    /// Per-contingency penalty contributions (unweighted), keyed by id.
    pub contingency_penalty: BTreeMap<String, f64>,
    pub terms: Vec<ObjectiveTerm>,
    /// True when some contingency term is missing or used a fallback point.
    pub partial: bool,
}

/// Full variable record for one power-flow case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    /// `base` or the contingency id.
    pub case: String,
    pub voltage: BTreeMap<String, f64>,
    pub angle: BTreeMap<String, f64>,
    pub gen_p: BTreeMap<String, f64>,
    pub gen_q: BTreeMap<String, f64>,
    /// Branch id -> [p_origin, q_origin, p_destination, q_destination].
    pub branch_flow: BTreeMap<String, [f64; 4]>,
    /// Branch id -> [sigma_origin, sigma_destination].
    pub sigma_branch: BTreeMap<String, [f64; 2]>,
    /// Bus id -> [sigma_P_plus, sigma_P_minus].
    pub sigma_p: BTreeMap<String, [f64; 2]>,
    /// Bus id -> [sigma_Q_plus, sigma_Q_minus].
    pub sigma_q: BTreeMap<String, [f64; 2]>,
    /// Generator id -> [rho_plus, rho_minus] (contingency cases only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<BTreeMap<String, [f64; 2]>>,
    /// Bus id -> [nu_plus, nu_minus] (contingency cases only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<BTreeMap<String, [f64; 2]>>,
    /// Drop signal (contingency cases only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// True when the record came from feasibility recovery.
    #[serde(default)]
    pub recovered: bool,
    /// True when recovery failed and the copy-base fallback was used.
    #[serde(default)]
    pub fallback: bool,
}

/// The artifact written by `solve` and consumed by `score`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub network: String,
    pub objective: ObjectiveBreakdown,
    pub base: CaseRecord,
    pub contingencies: Vec<CaseRecord>,
}

impl SolutionFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, super::GridError> {
        serde_json::from_str(text).map_err(|e| super::GridError::Parse(e.to_string()))
    }
}
