use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{LinkSpec, Network, NetworkError, SourceSpec};
use crate::utility::SCurveUtility;

/// A network together with one utility per source (same order as
/// `Network::sources`).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    network: Network,
    utilities: Vec<SCurveUtility>,
}

impl Instance {
    pub fn new(network: Network, utilities: Vec<SCurveUtility>) -> Result<Self, NetworkError> {
        network.check_len_utilities(&utilities)?;
        Ok(Self { network, utilities })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn utilities(&self) -> &[SCurveUtility] {
        &self.utilities
    }

    pub fn num_sources(&self) -> usize {
        self.utilities.len()
    }

    pub fn num_links(&self) -> usize {
        self.network.num_links()
    }

    /// `Σ_s U_s(x_s)`.
    pub fn aggregate_utility(&self, rates: &[f64]) -> f64 {
        self.utilities.iter().zip(rates).map(|(u, &x)| u.eval(x)).sum()
    }

    pub fn transform(&self, rates: &[f64]) -> Vec<f64> {
        self.utilities.iter().zip(rates).map(|(u, &x)| u.transform(x)).collect()
    }
}

/// Seeded generator of small multi-link instances.
///
/// Draws 1..=`max_sources` sources and 1..=`max_links` links; every route is a
/// non-empty sorted subset of the links, every utility has `r = 256`,
/// `C1 ~ U[2, 10)`, integer `C2 ∈ 1..=10` and default bounds. A used link gets
/// capacity `u · 256 · n_l` with `u ~ U[0.5, 1)`, an unused one 500 Kbps.
/// Draws where some used link cannot carry 1.2× the inflection rates of
/// its sources are rejected, so every bottleneck admits a point past the
/// convex part of each utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomInstances {
    pub max_sources: usize,
    pub max_links: usize,
}

impl Default for RandomInstances {
    fn default() -> Self {
        Self {
            max_sources: 3,
            max_links: 3,
        }
    }
}

impl RandomInstances {
    pub fn generate(&self, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n_src = rng.gen_range(1..=self.max_sources);
            let n_links = rng.gen_range(1..=self.max_links);
            let routes: Vec<Vec<usize>> = (0..n_src)
                .map(|_| {
                    let k = rng.gen_range(1..=n_links);
                    let mut r = sample(&mut rng, n_links, k).into_vec();
                    r.sort_unstable();
                    r
                })
                .collect();
            let utilities: Vec<SCurveUtility> = (0..n_src)
                .map(|_| {
                    let c1 = rng.gen_range(2.0..10.0);
                    let c2 = rng.gen_range(1..=10) as f64;
                    SCurveUtility::with_default_bounds(256.0, c1, c2).expect("parameters are in range")
                })
                .collect();
            let mut admissible = true;
            let mut links = Vec::with_capacity(n_links);
            for l in 0..n_links {
                let users: Vec<usize> = (0..n_src).filter(|&s| routes[s].contains(&l)).collect();
                let capacity = if users.is_empty() {
                    500.0
                } else {
                    rng.gen_range(0.5..1.0) * 256.0 * users.len() as f64
                };
                let knees: f64 = users.iter().map(|&s| utilities[s].inflection_point()).sum();
                if !users.is_empty() && capacity < 1.2 * knees {
                    admissible = false;
                }
                links.push(LinkSpec {
                    id: l as u32 + 1,
                    capacity,
                });
            }
            if !admissible {
                continue;
            }
            let sources: Vec<SourceSpec> = routes
                .iter()
                .enumerate()
                .map(|(s, r)| SourceSpec {
                    id: s as u32 + 1,
                    route: r.iter().map(|&l| l as u32 + 1).collect(),
                })
                .collect();
            let network = Network::build(&links, &sources).expect("generated topology is valid");
            return Instance::new(network, utilities).expect("one utility per source");
        }
    }
}
