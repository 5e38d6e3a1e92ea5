use scpnum_core::network::Network;
use scpnum_core::oracle::{grid_search, local_opt_test, GridSpec, LocalOptSpec};
use scpnum_core::{Instance, SCurveUtility};

#[test]
fn single_source_optimum_is_min_of_cap_and_bound() {
    for capacity in [3.0, 50.0, 100.0, 199.9, 255.0, 256.0, 400.0] {
        for c2 in [1.0, 3.0, 8.0] {
            let net = Network::single_bottleneck(capacity, 1).unwrap();
            let u = SCurveUtility::with_default_bounds(256.0, 6.0, c2).unwrap();
            let inst = Instance::new(net, vec![u]).unwrap();
            let res = grid_search(&inst, &GridSpec::default()).unwrap();
            let exact = capacity.min(256.0);
            assert!(res.rates[0] <= exact + 1e-6);
            assert!(
                exact - res.rates[0] <= res.resolution[0],
                "c={capacity} C2={c2}: {res:?}"
            );
        }
    }
}

#[test]
fn seed_changes_samples_but_not_verdict_at_an_optimum() {
    let net = Network::single_bottleneck(600.0, 2).unwrap();
    let us = vec![SCurveUtility::with_default_bounds(256.0, 6.0, 3.0).unwrap(); 2];
    let inst = Instance::new(net, us).unwrap();
    // Both sources at M leave the link with slack: nothing nearby is better.
    for seed in [1, 2, 3] {
        let spec = LocalOptSpec {
            seed,
            ..LocalOptSpec::default()
        };
        let rep = local_opt_test(&inst, &[256.0, 256.0], &spec).unwrap();
        assert!(rep.passed);
        assert!(rep.feasible_samples > 0);
    }
}
