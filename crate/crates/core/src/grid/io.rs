//! Network JSON format.
//!
//! Top-level keys: `buses`, `generators`, `branches`, `penalties`,
//! `contingencies`, plus the `base_mva` report scaling constant. All numeric
//! fields are per-unit. A formal schema lives in `fixtures/network.schema.json`
//! next to the bundled fixtures.

use super::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    #[serde(default = "default_base_mva")]
    base_mva: f64,
    buses: Vec<BusRecord>,
    generators: Vec<GenRecord>,
    branches: Vec<BranchRecord>,
    penalties: PenaltyRecord,
    #[serde(default)]
    contingencies: Vec<ContRecord>,
}

fn default_base_mva() -> f64 {
    100.0
}

#[derive(Debug, Serialize, Deserialize)]
struct BusRecord {
    id: String,
    v_min_base: f64,
    v_max_base: f64,
    v_min_emer: f64,
    v_max_emer: f64,
    #[serde(default)]
    p_load: f64,
    #[serde(default)]
    q_load: f64,
    #[serde(default)]
    g_shunt: f64,
    #[serde(default)]
    b_shunt: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GenRecord {
    id: String,
    bus: String,
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
    #[serde(default)]
    drop_const: f64,
    cost: QuadraticCost,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchRecord {
    id: String,
    from_bus: String,
    to_bus: String,
    g_series: f64,
    b_series: f64,
    #[serde(default)]
    b_charge: f64,
    rate_base: f64,
    rate_emer: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PenaltyRecord {
    line_overload: PenaltyCurve,
    active_imbalance: PenaltyCurve,
    reactive_imbalance: PenaltyCurve,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContRecord {
    id: String,
    kind: OutageKind,
    element: String,
}

/// Load and validate a network from a JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network, GridError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    load_network_str(&text)
}

/// Load and validate a network from JSON text.
pub fn load_network_str(text: &str) -> Result<Network, GridError> {
    let file: NetworkFile =
        serde_json::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
    let buses: Vec<Bus> = file
        .buses
        .into_iter()
        .map(|b| Bus {
            id: b.id,
            v_min_base: b.v_min_base,
            v_max_base: b.v_max_base,
            v_min_emer: b.v_min_emer,
            v_max_emer: b.v_max_emer,
            p_load: b.p_load,
            q_load: b.q_load,
            g_shunt: b.g_shunt,
            b_shunt: b.b_shunt,
        })
        .collect();
    let bus_ids: HashMap<&str, BusIdx> =
        buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), BusIdx(i))).collect();

    let mut generators = Vec::with_capacity(file.generators.len());
    for g in file.generators {
        let bus = *bus_ids.get(g.bus.as_str()).ok_or_else(|| {
            GridError::Validation(format!("generator `{}`: unknown bus `{}`", g.id, g.bus))
        })?;
        generators.push(Generator {
            id: g.id,
            bus,
            p_min: g.p_min,
            p_max: g.p_max,
            q_min: g.q_min,
            q_max: g.q_max,
            drop_const: g.drop_const,
            cost: g.cost,
        });
    }

    let mut branches = Vec::with_capacity(file.branches.len());
    for b in file.branches {
        let from_bus = *bus_ids.get(b.from_bus.as_str()).ok_or_else(|| {
            GridError::Validation(format!("branch `{}`: unknown bus `{}`", b.id, b.from_bus))
        })?;
        let to_bus = *bus_ids.get(b.to_bus.as_str()).ok_or_else(|| {
            GridError::Validation(format!("branch `{}`: unknown bus `{}`", b.id, b.to_bus))
        })?;
        branches.push(Branch {
            id: b.id,
            from_bus,
            to_bus,
            g_series: b.g_series,
            b_series: b.b_series,
            b_charge: b.b_charge,
            rate_base: b.rate_base,
            rate_emer: b.rate_emer,
        });
    }

    let gen_ids: HashMap<&str, GenIdx> =
        generators.iter().enumerate().map(|(i, g)| (g.id.as_str(), GenIdx(i))).collect();
    let branch_ids: HashMap<&str, BranchIdx> =
        branches.iter().enumerate().map(|(i, b)| (b.id.as_str(), BranchIdx(i))).collect();

    let mut contingencies = Vec::with_capacity(file.contingencies.len());
    for c in file.contingencies {
        let (gen, branch) = match c.kind {
            OutageKind::GeneratorOutage => {
                let g = *gen_ids.get(c.element.as_str()).ok_or_else(|| {
                    GridError::Validation(format!(
                        "contingency `{}`: unknown generator `{}`",
                        c.id, c.element
                    ))
                })?;
                (Some(g), None)
            }
            OutageKind::BranchOutage => {
                let b = *branch_ids.get(c.element.as_str()).ok_or_else(|| {
                    GridError::Validation(format!(
                        "contingency `{}`: unknown branch `{}`",
                        c.id, c.element
                    ))
                })?;
                (None, Some(b))
            }
        };
        contingencies.push(Contingency { id: c.id, kind: c.kind, gen, branch });
    }

    Network::from_parts(
        buses,
        generators,
        branches,
        file.penalties.line_overload,
        file.penalties.active_imbalance,
        file.penalties.reactive_imbalance,
        contingencies,
        file.base_mva,
    )
}

/// Serialize a network back to the JSON format (used by fixture tooling).
pub fn write_network(net: &Network) -> String {
    let file = NetworkFile {
        base_mva: net.base_mva,
        buses: net
            .buses
            .iter()
            .map(|b| BusRecord {
                id: b.id.clone(),
                v_min_base: b.v_min_base,
                v_max_base: b.v_max_base,
                v_min_emer: b.v_min_emer,
                v_max_emer: b.v_max_emer,
                p_load: b.p_load,
                q_load: b.q_load,
                g_shunt: b.g_shunt,
                b_shunt: b.b_shunt,
            })
            .collect(),
        generators: net
            .generators
            .iter()
            .map(|g| GenRecord {
                id: g.id.clone(),
                bus: net.buses[g.bus.0].id.clone(),
                p_min: g.p_min,
                p_max: g.p_max,
                q_min: g.q_min,
                q_max: g.q_max,
                drop_const: g.drop_const,
                cost: g.cost,
            })
            .collect(),
        branches: net
            .branches
            .iter()
            .map(|b| BranchRecord {
                id: b.id.clone(),
                from_bus: net.buses[b.from_bus.0].id.clone(),
                to_bus: net.buses[b.to_bus.0].id.clone(),
                g_series: b.g_series,
                b_series: b.b_series,
                b_charge: b.b_charge,
                rate_base: b.rate_base,
                rate_emer: b.rate_emer,
            })
            .collect(),
        penalties: PenaltyRecord {
            line_overload: net.penalty_s,
            active_imbalance: net.penalty_p,
            reactive_imbalance: net.penalty_q,
        },
        contingencies: net
            .contingencies
            .iter()
            .map(|c| ContRecord {
                id: c.id.clone(),
                kind: c.kind,
                element: match c.kind {
                    OutageKind::GeneratorOutage => net.generators[c.gen.unwrap().0].id.clone(),
                    OutageKind::BranchOutage => net.branches[c.branch.unwrap().0].id.clone(),
                },
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("network serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_bus_roundtrip() {
        let text = r#"{
            "base_mva": 100.0,
            "buses": [
                {"id": "b1", "v_min_base": 0.95, "v_max_base": 1.05, "v_min_emer": 0.93, "v_max_emer": 1.07},
                {"id": "b2", "v_min_base": 0.95, "v_max_base": 1.05, "v_min_emer": 0.93, "v_max_emer": 1.07,
                 "p_load": 0.5, "q_load": 0.1}
            ],
            "generators": [
                {"id": "g1", "bus": "b1", "p_min": 0.0, "p_max": 3.0, "q_min": -1.0, "q_max": 1.0,
                 "drop_const": 1.0, "cost": {"c0": 0.0, "c1": 20.0, "c2": 0.1}}
            ],
            "branches": [
                {"id": "e1", "from_bus": "b1", "to_bus": "b2", "g_series": 0.99, "b_series": -9.9,
                 "b_charge": 0.02, "rate_base": 1.2, "rate_emer": 1.5}
            ],
            "penalties": {
                "line_overload": {"slope1": 1000.0, "slope2": 5000.0, "bin1_width": 0.02},
                "active_imbalance": {"slope1": 1000.0, "slope2": 5000.0, "bin1_width": 0.02},
                "reactive_imbalance": {"slope1": 1000.0, "slope2": 5000.0, "bin1_width": 0.02}
            },
            "contingencies": []
        }"#;
        let net = load_network_str(text).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.generators.len(), 1);
        assert_eq!(net.branches.len(), 1);
        let back = write_network(&net);
        let net2 = load_network_str(&back).unwrap();
        assert_eq!(net2.buses[1].p_load, 0.5);
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = load_network_str("{not json").unwrap_err();
        assert!(matches!(err, GridError::Parse(_)));
    }
}
