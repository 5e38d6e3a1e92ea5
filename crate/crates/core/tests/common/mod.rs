use scpnum_core::network::{LinkSpec, Network, SourceSpec};
use scpnum_core::{Instance, SCurveUtility};

pub fn scenario_one() -> Instance {
    let net = Network::single_bottleneck(1000.0, 5).unwrap();
    let us = [2.0, 4.0, 6.0, 8.0, 10.0]
        .iter()
        .map(|&c2| SCurveUtility::with_default_bounds(256.0, 6.0, c2).unwrap())
        .collect();
    Instance::new(net, us).unwrap()
}

/// Three links in a row; one flow crosses all of them, one short flow per link.
pub fn chain_three() -> Instance {
    let links: Vec<LinkSpec> = (1..=3).map(|id| LinkSpec { id, capacity: 400.0 }).collect();
    let sources = vec![
        SourceSpec {
            id: 1,
            route: vec![1, 2, 3],
        },
        SourceSpec { id: 2, route: vec![1] },
        SourceSpec { id: 3, route: vec![2] },
        SourceSpec { id: 4, route: vec![3] },
    ];
    let us = vec![SCurveUtility::with_default_bounds(256.0, 6.0, 4.0).unwrap(); 4];
    Instance::new(Network::build(&links, &sources).unwrap(), us).unwrap()
}
