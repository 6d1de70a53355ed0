//! Bundled fixture files load and validate.

use scacopf_core::grid::{load_network, load_network_str};

fn fixture(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn two_bus_fixture_loads() {
    let net = load_network(fixture("case2.json")).unwrap();
    assert_eq!(net.buses.len(), 2);
    assert_eq!(net.generators.len(), 1);
    assert_eq!(net.branches.len(), 1);
}

#[test]
fn fourteen_bus_fixture_has_standard_dimensions() {
    let net = load_network(fixture("case14.json")).unwrap();
    assert_eq!(net.buses.len(), 14);
    assert_eq!(net.branches.len(), 20);
    assert_eq!(net.generators.len(), 5);
    assert_eq!(net.contingencies.len(), 15);
    // Emergency voltage windows contain the normal windows on every bus.
    for b in &net.buses {
        assert!(b.v_min_emer <= b.v_min_base && b.v_max_base <= b.v_max_emer);
    }
}

#[test]
fn hedge_fixture_loads() {
    let net = load_network(fixture("case3_hedge.json")).unwrap();
    assert_eq!(net.buses.len(), 3);
    assert_eq!(net.contingencies.len(), 1);
    // The non-responding unit is what makes the hedge observable.
    assert!(net.generators.iter().any(|g| g.drop_const == 0.0));
}

#[test]
fn voltage_window_violation_names_the_bus() {
    let text = std::fs::read_to_string(fixture("case2.json")).unwrap();
    let broken = text.replace("\"v_min_emer\": 0.93", "\"v_min_emer\": 0.97");
    let err = load_network_str(&broken).unwrap_err();
    assert!(err.to_string().contains("b1"), "{err}");
}
