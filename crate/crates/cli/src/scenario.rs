//! Scenario documents: the JSON schema, built-in scenarios and conversion
//! into a validated instance plus solver configuration.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scpnum_core::network::{LinkSpec, Network, SourceSpec};
use scpnum_core::utility::{UtilityError, DEFAULT_MIN_RATE};
use scpnum_core::{InitialPrices, InitialRates, Instance, PriceLag, SCurveUtility, SolverConfig, StoppingRule};

pub const BUILT_IN: [&str; 3] = ["paper-scenario-1", "chain-3", "single-source"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("`{0}` is neither a readable file nor a built-in scenario ({})", BUILT_IN.join(", "))]
    Unknown(String),
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub links: Vec<LinkDoc>,
    pub sources: Vec<SourceDoc>,
    #[serde(default)]
    pub solver: SolverDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub id: u32,
    pub capacity_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDoc {
    pub id: u32,
    pub r_kbps: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_kbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_m_kbps: Option<f64>,
    pub route: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<PricesDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<RatesDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_lag: Option<PriceLagDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping_rule: Option<StoppingRuleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feas_tol_kbps: Option<f64>,
}

/// A single number prices every link alike; a list gives one price per link
/// in document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PricesDoc {
    Uniform(f64),
    PerLink(Vec<f64>),
    Policy(PricePolicyDoc),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricePolicyDoc {
    MarginalUtility,
}

/// A list gives one initial rate per source in document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatesDoc {
    PerSource(Vec<f64>),
    Policy(RatePolicyDoc),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatePolicyDoc {
    FairShare,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceLagDoc {
    Fresh,
    Lagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRuleDoc {
    RateChange,
    RateChangeAndLinkBalance,
}

/// A validated model ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub instance: Instance,
    pub config: SolverConfig,
}

impl ScenarioDoc {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario documents always serialize")
    }

    pub fn built_in(name: &str) -> Option<Self> {
        let s_curve = |id: u32, c2: f64, route: Vec<u32>| SourceDoc {
            id,
            r_kbps: 256.0,
            c1: 6.0,
            c2,
            m_kbps: None,
            big_m_kbps: None,
            route,
        };
        let solver = SolverDoc {
            gamma: Some(1e-4),
            epsilon: Some(0.1),
            ..SolverDoc::default()
        };
        match name {
            "paper-scenario-1" => Some(Self {
                links: vec![LinkDoc {
                    id: 1,
                    capacity_kbps: 1000.0,
                }],
                sources: [2.0, 4.0, 6.0, 8.0, 10.0]
                    .iter()
                    .zip(1..)
                    .map(|(&c2, id)| s_curve(id, c2, vec![1]))
                    .collect(),
                solver,
            }),
            "chain-3" => Some(Self {
                links: (1..=3)
                    .map(|id| LinkDoc {
                        id,
                        capacity_kbps: 400.0,
                    })
                    .collect(),
                sources: vec![
                    s_curve(1, 4.0, vec![1, 2, 3]),
                    s_curve(2, 4.0, vec![1]),
                    s_curve(3, 4.0, vec![2]),
                    s_curve(4, 4.0, vec![3]),
                ],
                solver,
            }),
            "single-source" => Some(Self {
                links: vec![LinkDoc {
                    id: 1,
                    capacity_kbps: 100.0,
                }],
                sources: vec![s_curve(1, 2.0, vec![1])],
                solver,
            }),
            _ => None,
        }
    }

    /// Validates the document and builds the model. Errors name the
    /// offending field, e.g. `sources[2].route[0]`.
    pub fn into_scenario(&self, name: &str) -> Result<Scenario, ScenarioError> {
        let mut link_ids = HashSet::new();
        for (i, link) in self.links.iter().enumerate() {
            if !link_ids.insert(link.id) {
                return Err(invalid(
                    format!("links[{i}].id"),
                    format!("duplicate link id {}", link.id),
                ));
            }
            if !(link.capacity_kbps > 0.0) || !link.capacity_kbps.is_finite() {
                return Err(invalid(
                    format!("links[{i}].capacity_kbps"),
                    format!("capacity must be positive, got {}", link.capacity_kbps),
                ));
            }
        }
        let mut source_ids = HashSet::new();
        let mut utilities = Vec::with_capacity(self.sources.len());
        for (i, src) in self.sources.iter().enumerate() {
            if !source_ids.insert(src.id) {
                return Err(invalid(
                    format!("sources[{i}].id"),
                    format!("duplicate source id {}", src.id),
                ));
            }
            if src.route.is_empty() {
                return Err(invalid(format!("sources[{i}].route"), "route is empty"));
            }
            if let Some(j) = src.route.iter().position(|l| !link_ids.contains(l)) {
                return Err(invalid(
                    format!("sources[{i}].route[{j}]"),
                    format!("unknown link {}", src.route[j]),
                ));
            }
            let min = src.m_kbps.unwrap_or(DEFAULT_MIN_RATE);
            let max = src.big_m_kbps.unwrap_or(src.r_kbps);
            let u = SCurveUtility::new(src.r_kbps, src.c1, src.c2, min, max).map_err(|e| {
                let field = match e {
                    UtilityError::NonPositiveEncodingRate(_) => "r_kbps",
                    UtilityError::NonPositiveC1(_) => "c1",
                    UtilityError::C2BelowOne(_) => "c2",
                    _ => "m_kbps",
                };
                invalid(format!("sources[{i}].{field}"), e)
            })?;
            utilities.push(u);
        }
        if self.sources.is_empty() {
            return Err(invalid("sources", "at least one source is required"));
        }

        let links: Vec<LinkSpec> = self
            .links
            .iter()
            .map(|l| LinkSpec {
                id: l.id,
                capacity: l.capacity_kbps,
            })
            .collect();
        let sources: Vec<SourceSpec> = self
            .sources
            .iter()
            .map(|s| SourceSpec {
                id: s.id,
                route: s.route.clone(),
            })
            .collect();
        let network = Network::build(&links, &sources).map_err(|e| invalid("network", e))?;
        let instance = Instance::new(network, utilities).map_err(|e| invalid("sources", e))?;

        let config = self.solver_config();
        config.validate(&instance).map_err(|e| invalid("solver", e))?;
        Ok(Scenario {
            name: name.to_string(),
            instance,
            config,
        })
    }

    fn solver_config(&self) -> SolverConfig {
        let doc = &self.solver;
        let base = SolverConfig::default();
        SolverConfig {
            gamma: doc.gamma.unwrap_or(base.gamma),
            epsilon: doc.epsilon.unwrap_or(base.epsilon),
            max_iter: doc.max_iter.unwrap_or(base.max_iter),
            mu0: match &doc.mu0 {
                None | Some(PricesDoc::Policy(PricePolicyDoc::MarginalUtility)) => InitialPrices::MarginalUtility,
                Some(PricesDoc::Uniform(mu)) => InitialPrices::Uniform(*mu),
                Some(PricesDoc::PerLink(mu)) => InitialPrices::PerLink(mu.clone()),
            },
            x0: match &doc.x0 {
                None | Some(RatesDoc::Policy(RatePolicyDoc::FairShare)) => InitialRates::FairShare,
                Some(RatesDoc::Policy(RatePolicyDoc::Midpoint)) => InitialRates::Midpoint,
                Some(RatesDoc::PerSource(x)) => InitialRates::Explicit(x.clone()),
            },
            rho_floor: doc.rho_floor.unwrap_or(base.rho_floor),
            feas_tol: doc.feas_tol_kbps.unwrap_or(base.feas_tol),
            price_lag: match doc.price_lag {
                None | Some(PriceLagDoc::Fresh) => PriceLag::Fresh,
                Some(PriceLagDoc::Lagged) => PriceLag::Lagged,
            },
            stopping_rule: match doc.stopping_rule {
                None | Some(StoppingRuleDoc::RateChange) => StoppingRule::RateChange,
                Some(StoppingRuleDoc::RateChangeAndLinkBalance) => StoppingRule::RateChangeAndLinkBalance,
            },
        }
    }
}

/// Loads `spec` as a file if one exists at that path, otherwise as a
/// built-in scenario name.
pub fn load_scenario(spec: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_stem()
            .map_or(spec.into(), |s| s.to_string_lossy().into_owned());
        return ScenarioDoc::from_json(&text)?.into_scenario(&name);
    }
    match ScenarioDoc::built_in(spec) {
        Some(doc) => doc.into_scenario(spec),
        None => Err(ScenarioError::Unknown(spec.to_string())),
    }
}
