//! Warm-start behavior on the 14-bus fixture: a primal restart from the
//! base-case solution should not cost more iterations than a cold start for
//! the vast majority of contingency subproblems.

use scacopf_core::grid::{load_network, ContIdx};
use scacopf_core::ipm::{self, IpmOptions, StartPoint, WarmStartMode};
use scacopf_core::decomp::contingency_warm_start;
use scacopf_core::opf::{build_base_problem, build_contingency_problem};

#[test]
fn primal_warm_start_beats_cold_on_most_contingencies() {
    let net = load_network(format!(
        "{}/../../fixtures/case14.json",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap();
    let (problem, layout) = build_base_problem(&net, &[]).unwrap();
    let opts = IpmOptions { warm_start_mode: WarmStartMode::Primal, ..Default::default() };
    let start = StartPoint::primal(layout.cold_start(&net, problem.n_vars()), problem.n_cons());
    let res = ipm::solve(&problem, Some(&start), &opts).unwrap();
    assert!(res.status.is_solved());
    let base = layout.extract(&net, &res.x);

    let mut warm_not_worse = 0usize;
    let n = net.contingencies.len();
    for k in 0..n {
        let (cp, cl) = build_contingency_problem(&net, ContIdx(k), &base, 1e-4).unwrap();
        let warm_sp = contingency_warm_start(&net, &cp, &cl, &base);
        let wopts =
            IpmOptions { warm_start_mode: WarmStartMode::PrimalDual, ..Default::default() };
        let warm = ipm::solve(&cp, Some(&warm_sp), &wopts).unwrap();
        let cold_sp = StartPoint::primal(cl.cold_start(&net, cp.n_vars()), cp.n_cons());
        let cold = ipm::solve(&cp, Some(&cold_sp), &opts).unwrap();
        if warm.iterations <= cold.iterations {
            warm_not_worse += 1;
        }
    }
    assert!(
        warm_not_worse * 5 >= n * 4,
        "warm start no worse on {warm_not_worse}/{n} contingencies (need >= 80%)"
    );
}
