//! Links, sources and the routing incidence between them.
//!
//! Routing is kept sparse: each source stores the indices of the links on
//! its route and each link stores the indices of the sources crossing it.
//! Both lists are ascending, and links/sources are ordered by ascending id,
//! so every accumulation over a route or a link happens in a fixed order.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::utility::SCurveUtility;

pub type LinkId = u32;
pub type SourceId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("duplicate link id {0}")]
    DuplicateLinkId(LinkId),
    #[error("duplicate source id {0}")]
    DuplicateSourceId(SourceId),
    #[error("source {0} has an empty route")]
    EmptyRoute(SourceId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("link {0} has non-positive capacity {1}")]
    NonPositiveCapacity(LinkId, f64),
    #[error("expected {expected} per-source values, got {got}")]
    RateCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub id: LinkId,
    /// Kbps.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub id: SourceId,
    pub route: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub capacity: f64,
    /// Indices of the sources routed over this link, ascending.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub id: SourceId,
    /// Indices of the links on the route, ascending.
    pub route: Vec<usize>,
}

/// Immutable topology: capacities plus the 0/1 routing incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    links: Vec<Link>,
    sources: Vec<Source>,
}

impl Network {
    /// Validates ids, capacities and routes and derives both adjacency lists.
    pub fn build(links: &[LinkSpec], sources: &[SourceSpec]) -> Result<Self, NetworkError> {
        let mut link_specs = links.to_vec();
        link_specs.sort_by_key(|l| l.id);
        for pair in link_specs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(NetworkError::DuplicateLinkId(pair[0].id));
            }
        }
        for l in &link_specs {
            // Also rejects NaN.
            if !(l.capacity > 0.0) || !l.capacity.is_finite() {
                return Err(NetworkError::NonPositiveCapacity(l.id, l.capacity));
            }
        }

        let mut source_specs = sources.to_vec();
        source_specs.sort_by_key(|s| s.id);
        for pair in source_specs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(NetworkError::DuplicateSourceId(pair[0].id));
            }
        }

        let link_index = |id: LinkId| link_specs.binary_search_by_key(&id, |l| l.id).ok();

        let mut built_sources = Vec::with_capacity(source_specs.len());
        for s in &source_specs {
            if s.route.is_empty() {
                return Err(NetworkError::EmptyRoute(s.id));
            }
            let mut route = BTreeSet::new();
            for &lid in &s.route {
                let idx = link_index(lid).ok_or(NetworkError::UnknownLink(lid))?;
                route.insert(idx);
            }
            built_sources.push(Source {
                id: s.id,
                route: route.into_iter().collect(),
            });
        }

        let mut built_links: Vec<Link> = link_specs
            .iter()
            .map(|l| Link {
                id: l.id,
                capacity: l.capacity,
                sources: Vec::new(),
            })
            .collect();
        for (s_idx, s) in built_sources.iter().enumerate() {
            for &l_idx in &s.route {
                built_links[l_idx].sources.push(s_idx);
            }
        }

        Ok(Self {
            links: built_links,
            sources: built_sources,
        })
    }

    /// One link of capacity `capacity` shared by `n` sources (ids 1..=n, link id 1).
    pub fn single_bottleneck(capacity: f64, n: usize) -> Result<Self, NetworkError> {
        let links = [LinkSpec { id: 1, capacity }];
        let sources: Vec<SourceSpec> = (1..=n as u32).map(|id| SourceSpec { id, route: vec![1] }).collect();
        Self::build(&links, &sources)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Number of nonzero entries of the routing matrix.
    pub fn nnz(&self) -> usize {
        self.sources.iter().map(|s| s.route.len()).sum()
    }

    pub fn link_index(&self, id: LinkId) -> Option<usize> {
        self.links.binary_search_by_key(&id, |l| l.id).ok()
    }

    pub fn source_index(&self, id: SourceId) -> Option<usize> {
        self.sources.binary_search_by_key(&id, |s| s.id).ok()
    }

    /// Whether source `s` crosses link `l` (both indices).
    pub fn routes_over(&self, s: usize, l: usize) -> bool {
        self.sources[s].route.binary_search(&l).is_ok()
    }

    /// Dense L×S view of the routing matrix. Intended for tests and reports.
    pub fn routing_matrix(&self) -> Vec<Vec<u8>> {
        let mut r = vec![vec![0u8; self.sources.len()]; self.links.len()];
        for (l, link) in self.links.iter().enumerate() {
            for &s in &link.sources {
                r[l][s] = 1;
            }
        }
        r
    }

    fn check_len(&self, rates: &[f64]) -> Result<(), NetworkError> {
        if rates.len() != self.sources.len() {
            return Err(NetworkError::RateCountMismatch {
                expected: self.sources.len(),
                got: rates.len(),
            });
        }
        Ok(())
    }

    /// Aggregate rate crossing the link with id `link`.
    pub fn link_load(&self, rates: &[f64], link: LinkId) -> Result<f64, NetworkError> {
        self.check_len(rates)?;
        let l = self.link_index(link).ok_or(NetworkError::UnknownLink(link))?;
        Ok(self.load_at(rates, l))
    }

    /// Load on the link at index `l`. Panics if `rates` is too short.
    pub fn load_at(&self, rates: &[f64], l: usize) -> f64 {
        self.links[l].sources.iter().map(|&s| rates[s]).sum()
    }

    pub fn loads(&self, rates: &[f64]) -> Vec<f64> {
        (0..self.links.len()).map(|l| self.load_at(rates, l)).collect()
    }

    /// Checks rate bounds exactly and capacities up to `tol` Kbps.
    pub fn is_feasible(
        &self,
        rates: &[f64],
        utilities: &[SCurveUtility],
        tol: f64,
    ) -> Result<FeasibilityReport, NetworkError> {
        self.check_len(rates)?;
        self.check_len_utilities(utilities)?;
        let mut violations = Vec::new();
        for (s, (&x, u)) in rates.iter().zip(utilities).enumerate() {
            let id = self.sources[s].id;
            if x < u.min_rate() {
                violations.push(Violation::BelowMinimum {
                    source: id,
                    rate: x,
                    bound: u.min_rate(),
                });
            } else if x > u.max_rate() {
                violations.push(Violation::AboveMaximum {
                    source: id,
                    rate: x,
                    bound: u.max_rate(),
                });
            }
        }
        for (l, link) in self.links.iter().enumerate() {
            let load = self.load_at(rates, l);
            if load > link.capacity + tol {
                violations.push(Violation::Capacity {
                    link: link.id,
                    load,
                    capacity: link.capacity,
                });
            }
        }
        Ok(FeasibilityReport {
            feasible: violations.is_empty(),
            violations,
        })
    }

    pub(crate) fn check_len_utilities(&self, utilities: &[SCurveUtility]) -> Result<(), NetworkError> {
        if utilities.len() != self.sources.len() {
            return Err(NetworkError::RateCountMismatch {
                expected: self.sources.len(),
                got: utilities.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Condition C1, lower side.
    BelowMinimum { source: SourceId, rate: f64, bound: f64 },
    /// Condition C1, upper side.
    AboveMaximum { source: SourceId, rate: f64, bound: f64 },
    /// Condition C2.
    Capacity { link: LinkId, load: f64, capacity: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BelowMinimum { source, rate, bound } => {
                write!(f, "C1: source {source} rate {rate} below minimum {bound}")
            }
            Violation::AboveMaximum { source, rate, bound } => {
                write!(f, "C1: source {source} rate {rate} above maximum {bound}")
            }
            Violation::Capacity { link, load, capacity } => {
                write!(f, "C2: link {link} load {load} exceeds capacity {capacity}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}
