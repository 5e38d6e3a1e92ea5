//! The same iteration as [`crate::engine`], executed by link and source
//! agents that only talk through explicit messages.
//!
//! A round has two phases separated by barriers. Links price their load and
//! send a `PriceUpdate` to every source crossing them; sources then compute
//! their new rate from the prices they received and send a `RateReport` to
//! every link on their route. Agents act in ascending id order and all sums
//! run in ascending index order, so a run reproduces the monolithic engine
//! bit for bit.
//!
//! The global stopping rule needs the largest rate change over all sources,
//! which no single agent knows. A [`Monitor`] outside the protocol observes
//! the agents after each round and applies it.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::engine::{
    self, max_abs_change, path_price, price_step, rate_response, tangent_term, AllocationResult, IterateState,
    PriceLag, ScpError, SolverConfig, TraceRecord,
};
use crate::fmt_full;
use crate::instance::Instance;
use crate::network::{LinkId, Network, SourceId};
use crate::utility::SCurveUtility;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("link {link} has no rate report from routed source {source_id}")]
    MissingReport { link: LinkId, source_id: SourceId },
    #[error("source {source_id} received no price from link {link} on its route")]
    MissingPrice { source_id: SourceId, link: LinkId },
    #[error(transparent)]
    Solver(#[from] ScpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MessageKind {
    /// Link → source.
    PriceUpdate { mu: f64 },
    /// Source → link.
    RateReport { x_tilde: f64, x_tilde_prev: f64 },
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::PriceUpdate { .. } => "PriceUpdate",
            MessageKind::RateReport { .. } => "RateReport",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub round: usize,
    /// Link id for price updates, source id for rate reports.
    pub sender: u32,
    /// Source id for price updates, link id for rate reports.
    pub receiver: u32,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReportData {
    pub x_tilde: f64,
    pub x_tilde_prev: f64,
}

#[derive(Debug, Clone)]
pub struct LinkAgent {
    pub id: LinkId,
    pub capacity: f64,
    pub mu: f64,
    /// Index of each routed source and the `(r, C2)` it announced at setup.
    routed: Vec<(usize, SourceId, f64, f64)>,
    /// Latest report per routed source index.
    pub reports: BTreeMap<usize, RateReportData>,
}

impl LinkAgent {
    fn price_round(&mut self, gamma: f64, lag: PriceLag) -> Result<(f64, f64), SimError> {
        let mut g_hat = 0.0;
        for &(s, sid, r, c2) in &self.routed {
            let rep = self.reports.get(&s).ok_or(SimError::MissingReport {
                link: self.id,
                source_id: sid,
            })?;
            g_hat += tangent_term(r, c2, rep.x_tilde, rep.x_tilde_prev);
        }
        let old = self.mu;
        self.mu = price_step(old, gamma, self.capacity, g_hat);
        let announced = match lag {
            PriceLag::Fresh => self.mu,
            PriceLag::Lagged => old,
        };
        Ok((g_hat, announced))
    }
}

#[derive(Debug, Clone)]
pub struct SourceAgent {
    pub id: SourceId,
    pub utility: SCurveUtility,
    pub x_tilde: f64,
    pub x_tilde_prev: f64,
    pub x: f64,
    pub rho: f64,
    pub a: f64,
    /// Route link indices with their ids, ascending.
    route: Vec<(usize, LinkId)>,
    /// Prices received this round, keyed by link index.
    pub prices: BTreeMap<usize, f64>,
}

impl SourceAgent {
    fn rate_round(&mut self, rho_floor: f64) -> Result<(), SimError> {
        let mut dense = Vec::with_capacity(self.route.len());
        for &(l, lid) in &self.route {
            let mu = self.prices.get(&l).ok_or(SimError::MissingPrice {
                source_id: self.id,
                link: lid,
            })?;
            dense.push(*mu);
        }
        let positions: Vec<usize> = (0..dense.len()).collect();
        let rho = path_price(&positions, &dense);
        let (a, next, x) = rate_response(&self.utility, self.x_tilde, rho, rho_floor);
        self.x_tilde_prev = self.x_tilde;
        self.x_tilde = next;
        self.x = x;
        self.rho = rho;
        self.a = a;
        self.prices.clear();
        Ok(())
    }
}

/// Observes all agents between rounds and decides when to stop.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct AgentSystem {
    instance: Instance,
    config: SolverConfig,
    pub links: Vec<LinkAgent>,
    pub sources: Vec<SourceAgent>,
    round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub messages: Vec<Message>,
    /// `max_s |x_s^(t+1) - x_s^(t)|`, as seen by the monitor.
    pub max_rate_change: f64,
}

#[derive(Debug, Clone)]
pub struct DistributedRun {
    pub result: AllocationResult,
    pub log: Vec<Message>,
}

impl AgentSystem {
    /// Builds one agent per link and per source, initialized from the
    /// solver configuration. Every link starts with a report from each of
    /// its sources holding the initial transformed rate.
    pub fn new(instance: &Instance, config: &SolverConfig) -> Result<Self, SimError> {
        let init = engine::initial_state(instance, config)?;
        let net = instance.network();
        let links = net
            .links()
            .iter()
            .enumerate()
            .map(|(l, link)| LinkAgent {
                id: link.id,
                capacity: link.capacity,
                mu: init.mu[l],
                routed: link
                    .sources
                    .iter()
                    .map(|&s| {
                        let u = &instance.utilities()[s];
                        (s, net.sources()[s].id, u.encoding_rate(), u.c2())
                    })
                    .collect(),
                reports: link
                    .sources
                    .iter()
                    .map(|&s| {
                        (
                            s,
                            RateReportData {
                                x_tilde: init.x_tilde[s],
                                x_tilde_prev: init.x_tilde_prev[s],
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        let sources = net
            .sources()
            .iter()
            .enumerate()
            .map(|(s, src)| SourceAgent {
                id: src.id,
                utility: instance.utilities()[s],
                x_tilde: init.x_tilde[s],
                x_tilde_prev: init.x_tilde_prev[s],
                x: init.x[s],
                rho: init.rho[s],
                a: init.a[s],
                route: src.route.iter().map(|&l| (l, net.links()[l].id)).collect(),
                prices: BTreeMap::new(),
            })
            .collect();
        Ok(Self {
            instance: instance.clone(),
            config: config.clone(),
            links,
            sources,
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    /// Omniscient view of the agents in the engine's state layout.
    pub fn snapshot(&self) -> IterateState {
        IterateState {
            t: self.round,
            x_tilde: self.sources.iter().map(|s| s.x_tilde).collect(),
            x_tilde_prev: self.sources.iter().map(|s| s.x_tilde_prev).collect(),
            mu: self.links.iter().map(|l| l.mu).collect(),
            rho: self.sources.iter().map(|s| s.rho).collect(),
            a: self.sources.iter().map(|s| s.a).collect(),
            x: self.sources.iter().map(|s| s.x).collect(),
        }
    }

    /// Executes one synchronous round and returns the messages exchanged.
    pub fn run_round(&mut self) -> Result<RoundOutcome, SimError> {
        let t = self.round + 1;
        let before: Vec<f64> = self.sources.iter().map(|s| s.x).collect();
        let mut messages = Vec::with_capacity(2 * self.instance.network().nnz());

        // Phase A: links price their linearized load.
        let mut price_msgs = Vec::new();
        for link in &mut self.links {
            let (_, announced) = link.price_round(self.config.gamma, self.config.price_lag)?;
            for &(s, sid, _, _) in &link.routed {
                price_msgs.push((
                    s,
                    Message {
                        round: t,
                        sender: link.id,
                        receiver: sid,
                        kind: MessageKind::PriceUpdate { mu: announced },
                    },
                ));
            }
        }
        // Barrier: deliver prices. Links were visited in ascending order, so
        // each source's mailbox fills in ascending link order.
        let link_pos: BTreeMap<LinkId, usize> = self.links.iter().enumerate().map(|(l, a)| (a.id, l)).collect();
        for (s, msg) in price_msgs {
            if let MessageKind::PriceUpdate { mu } = msg.kind {
                self.sources[s].prices.insert(link_pos[&msg.sender], mu);
            }
            messages.push(msg);
        }

        // Phase B: sources respond and report back along their route.
        let mut report_msgs = Vec::new();
        for (s, src) in self.sources.iter_mut().enumerate() {
            src.rate_round(self.config.rho_floor)?;
            for &(l, lid) in &src.route {
                report_msgs.push((
                    l,
                    s,
                    Message {
                        round: t,
                        sender: src.id,
                        receiver: lid,
                        kind: MessageKind::RateReport {
                            x_tilde: src.x_tilde,
                            x_tilde_prev: src.x_tilde_prev,
                        },
                    },
                ));
            }
        }
        for (l, s, msg) in report_msgs {
            if let MessageKind::RateReport { x_tilde, x_tilde_prev } = msg.kind {
                self.links[l]
                    .reports
                    .insert(s, RateReportData { x_tilde, x_tilde_prev });
            }
            messages.push(msg);
        }

        self.round = t;
        let after: Vec<f64> = self.sources.iter().map(|s| s.x).collect();
        Ok(RoundOutcome {
            messages,
            max_rate_change: max_abs_change(&after, &before),
        })
    }

    /// Repeats rounds until the monitor's stopping rule fires or `max_iter`
    /// rounds have run.
    pub fn run_to_convergence(mut self) -> Result<DistributedRun, SimError> {
        let mut monitor = Monitor::default();
        monitor
            .trace
            .push(engine::trace_record(&self.instance, &self.snapshot(), None));
        let mut log = Vec::new();
        let mut converged = false;
        while self.round < self.config.max_iter {
            let outcome = self.run_round()?;
            log.extend(outcome.messages);
            let metric = outcome.max_rate_change;
            let state = self.snapshot();
            monitor
                .trace
                .push(engine::trace_record(&self.instance, &state, Some(metric)));
            if engine::should_stop(&self.instance, &state, metric, &self.config) {
                converged = true;
                break;
            }
        }
        let state = self.snapshot();
        Ok(DistributedRun {
            result: AllocationResult {
                rates: state.x.clone(),
                prices: state.mu.clone(),
                iterations: state.t,
                converged,
                trace: monitor.trace,
                final_state: state,
            },
            log,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalityViolation {
    #[error("round {round}: link {link} and source {source_id} are not adjacent")]
    NotAdjacent {
        round: usize,
        link: LinkId,
        source_id: SourceId,
    },
    #[error("round numbers decrease at message {index}")]
    RoundOrder { index: usize },
}

/// Checks that every message travels between a link and a source routed
/// over it, and that rounds never go backwards.
pub fn audit_locality(network: &Network, log: &[Message]) -> Result<(), LocalityViolation> {
    let mut last = 0;
    for (index, msg) in log.iter().enumerate() {
        if msg.round < last {
            return Err(LocalityViolation::RoundOrder { index });
        }
        last = msg.round;
        let (link, source) = match msg.kind {
            MessageKind::PriceUpdate { .. } => (msg.sender, msg.receiver),
            MessageKind::RateReport { .. } => (msg.receiver, msg.sender),
        };
        let adjacent = match (network.link_index(link), network.source_index(source)) {
            (Some(l), Some(s)) => network.routes_over(s, l),
            _ => false,
        };
        if !adjacent {
            return Err(LocalityViolation::NotAdjacent {
                round: msg.round,
                link,
                source_id: source,
            });
        }
    }
    Ok(())
}

/// Writes the log as CSV: `round,kind,sender,receiver,payload,payload_prev`.
/// `payload` is the price or the new transformed rate; `payload_prev` is
/// the previous transformed rate and stays empty for price updates.
pub fn write_message_log<W: Write>(log: &[Message], mut out: W) -> io::Result<()> {
    writeln!(out, "round,kind,sender,receiver,payload,payload_prev")?;
    for m in log {
        let (payload, prev) = match m.kind {
            MessageKind::PriceUpdate { mu } => (fmt_full(mu), String::new()),
            MessageKind::RateReport { x_tilde, x_tilde_prev } => (fmt_full(x_tilde), fmt_full(x_tilde_prev)),
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.round,
            m.kind.name(),
            m.sender,
            m.receiver,
            payload,
            prev
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LinkSpec, SourceSpec};

    fn scenario_one() -> Instance {
        let net = Network::single_bottleneck(1000.0, 5).unwrap();
        let us = [2.0, 4.0, 6.0, 8.0, 10.0]
            .iter()
            .map(|&c2| SCurveUtility::with_default_bounds(256.0, 6.0, c2).unwrap())
            .collect();
        Instance::new(net, us).unwrap()
    }

    fn long_route() -> Instance {
        let links: Vec<_> = (1..=3).map(|id| LinkSpec { id, capacity: 400.0 }).collect();
        let sources = vec![
            SourceSpec {
                id: 1,
                route: vec![3, 1, 2],
            },
            SourceSpec { id: 2, route: vec![2] },
        ];
        let net = Network::build(&links, &sources).unwrap();
        let us = vec![
            SCurveUtility::with_default_bounds(256.0, 6.0, 2.0).unwrap(),
            SCurveUtility::with_default_bounds(256.0, 6.0, 4.0).unwrap(),
        ];
        Instance::new(net, us).unwrap()
    }

    #[test]
    fn round_sends_one_message_per_incidence_each_way() {
        let inst = scenario_one();
        let mut sys = AgentSystem::new(&inst, &SolverConfig::default()).unwrap();
        let out = sys.run_round().unwrap();
        let prices = out.messages.iter().filter(|m| m.kind.name() == "PriceUpdate").count();
        let reports = out.messages.len() - prices;
        assert_eq!((prices, reports), (5, 5));
    }

    #[test]
    fn long_route_source_sums_three_prices() {
        let inst = long_route();
        let mut sys = AgentSystem::new(&inst, &SolverConfig::default()).unwrap();
        let out = sys.run_round().unwrap();
        let to_long: Vec<_> = out
            .messages
            .iter()
            .filter(|m| m.receiver == 1 && m.kind.name() == "PriceUpdate")
            .collect();
        assert_eq!(to_long.len(), 3);
        let expected: f64 = to_long
            .iter()
            .map(|m| match m.kind {
                MessageKind::PriceUpdate { mu } => mu,
                _ => unreachable!(),
            })
            .fold(0.0, |a, b| a + b);
        assert_eq!(sys.sources[0].rho, expected);
        assert_eq!(out.messages.len(), 2 * inst.network().nnz());
        audit_locality(inst.network(), &out.messages).unwrap();
    }

    #[test]
    fn one_round_matches_one_engine_step() {
        for inst in [scenario_one(), long_route()] {
            for lag in [PriceLag::Fresh, PriceLag::Lagged] {
                let cfg = SolverConfig {
                    price_lag: lag,
                    ..SolverConfig::default()
                };
                let mut sys = AgentSystem::new(&inst, &cfg).unwrap();
                let state = engine::initial_state(&inst, &cfg).unwrap();
                assert_eq!(sys.snapshot(), state);
                let (next, metric) = engine::step(&inst, &state, &cfg);
                let out = sys.run_round().unwrap();
                assert_eq!(sys.snapshot(), next);
                assert_eq!(out.max_rate_change, metric);
            }
        }
    }

    #[test]
    fn missing_report_is_detected() {
        let inst = long_route();
        let mut sys = AgentSystem::new(&inst, &SolverConfig::default()).unwrap();
        sys.links[1].reports.remove(&0);
        assert_eq!(
            sys.run_round().unwrap_err(),
            SimError::MissingReport { link: 2, source_id: 1 }
        );
    }

    #[test]
    fn audit_flags_non_adjacent_messages() {
        let inst = long_route();
        let bogus = [Message {
            round: 1,
            sender: 1,
            receiver: 2,
            kind: MessageKind::PriceUpdate { mu: 0.1 },
        }];
        assert_eq!(
            audit_locality(inst.network(), &bogus),
            Err(LocalityViolation::NotAdjacent {
                round: 1,
                link: 1,
                source_id: 2
            })
        );
        let backwards = [
            Message {
                round: 2,
                sender: 2,
                receiver: 2,
                kind: MessageKind::PriceUpdate { mu: 0.1 },
            },
            Message {
                round: 1,
                sender: 2,
                receiver: 2,
                kind: MessageKind::PriceUpdate { mu: 0.1 },
            },
        ];
        assert_eq!(
            audit_locality(inst.network(), &backwards),
            Err(LocalityViolation::RoundOrder { index: 1 })
        );
    }

    #[test]
    fn message_log_csv_layout() {
        let log = [
            Message {
                round: 1,
                sender: 4,
                receiver: 2,
                kind: MessageKind::PriceUpdate { mu: 0.5 },
            },
            Message {
                round: 1,
                sender: 2,
                receiver: 4,
                kind: MessageKind::RateReport {
                    x_tilde: 0.25,
                    x_tilde_prev: 1.0,
                },
            },
        ];
        let mut buf = Vec::new();
        write_message_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "round,kind,sender,receiver,payload,payload_prev");
        assert_eq!(lines[1], format!("1,PriceUpdate,4,2,{},", fmt_full(0.5)));
        assert_eq!(
            lines[2],
            format!("1,RateReport,2,4,{},{}", fmt_full(0.25), fmt_full(1.0))
        );
    }
}
