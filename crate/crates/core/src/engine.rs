//! Sequential convex programming over the reverse-convex capacity
//! constraints, solved by dual gradient projection.
//!
//! Each iteration linearizes every link constraint
//! `g_l(x̃) = Σ_s R_ls r_s x̃_s^{1/C2_s} ≤ c_l` at the previous iterate,
//! moves the link prices along the dual gradient `c_l - ĝ_l`, and lets every
//! source answer its path price with the closed-form stationary rate.

use thiserror::Error;

use crate::instance::Instance;
use crate::network::SourceId;
use crate::utility::SCurveUtility;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScpError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("expansion point of source {0} must be strictly positive")]
    NonPositiveExpansionPoint(SourceId),
    #[error("initial rate {rate} of source {source_id} lies outside [{min}, {max}]")]
    InitialRateOutOfBounds {
        source_id: SourceId,
        rate: f64,
        min: f64,
        max: f64,
    },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no convergence within {iterations} iterations (last rate change {last_change} Kbps)")]
    NotConverged { iterations: usize, last_change: f64 },
}

/// Which prices the sources react to within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceLag {
    /// Sources use the prices produced earlier in the same iteration.
    #[default]
    Fresh,
    /// Sources use the prices from before this iteration's price update.
    Lagged,
}

/// When an iteration counts as converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StoppingRule {
    /// `max_s |x_s^(t+1) - x_s^(t)| < epsilon`.
    #[default]
    RateChange,
    /// The rate-change test, and every link is balanced: its load is within
    /// `feas_tol` of capacity, or below capacity with a price of exactly zero.
    /// Rejects pauses where rates sit still while prices keep drifting.
    RateChangeAndLinkBalance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialRates {
    /// `min(c_l / n_l)` over the route, clamped to `[m, M]`.
    #[default]
    FairShare,
    /// `(m + M) / 2`.
    Midpoint,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialPrices {
    /// Each link starts at the mean, over its sources, of the source's
    /// marginal utility at its initial rate divided by its route length.
    /// For a lone source this is exactly the stationary price of the
    /// initial rate.
    #[default]
    MarginalUtility,
    Uniform(f64),
    PerLink(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub gamma: f64,
    /// Stopping tolerance on `max_s |x_s^(t+1) - x_s^(t)|`, Kbps.
    pub epsilon: f64,
    pub max_iter: usize,
    pub mu0: InitialPrices,
    pub x0: InitialRates,
    /// Path prices below this saturate the source at its maximum rate.
    pub rho_floor: f64,
    /// Capacity tolerance used when reporting feasibility, Kbps.
    pub feas_tol: f64,
    pub price_lag: PriceLag,
    pub stopping_rule: StoppingRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            epsilon: 0.1,
            max_iter: 10_000,
            mu0: InitialPrices::default(),
            x0: InitialRates::default(),
            rho_floor: 1e-12,
            feas_tol: 0.5,
            price_lag: PriceLag::Fresh,
            stopping_rule: StoppingRule::RateChange,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, inst: &Instance) -> Result<(), ScpError> {
        let bad = |msg: String| Err(ScpError::InvalidConfig(msg));
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.rho_floor > 0.0) {
            return bad(format!("rho_floor must be positive, got {}", self.rho_floor));
        }
        if !(self.feas_tol >= 0.0) {
            return bad(format!("feas_tol must be non-negative, got {}", self.feas_tol));
        }
        match &self.mu0 {
            InitialPrices::MarginalUtility => {}
            InitialPrices::Uniform(mu) => {
                if !(*mu > 0.0) || !mu.is_finite() {
                    return bad(format!("mu0 must be positive, got {mu}"));
                }
            }
            InitialPrices::PerLink(mu) => {
                if mu.len() != inst.num_links() {
                    return Err(ScpError::LengthMismatch {
                        expected: inst.num_links(),
                        got: mu.len(),
                    });
                }
                if let Some(m) = mu.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
                    return bad(format!("mu0 must be positive, got {m}"));
                }
            }
        }
        if let InitialRates::Explicit(x0) = &self.x0 {
            if x0.len() != inst.num_sources() {
                return Err(ScpError::LengthMismatch {
                    expected: inst.num_sources(),
                    got: x0.len(),
                });
            }
            for (s, (&x, u)) in x0.iter().zip(inst.utilities()).enumerate() {
                if !(x >= u.min_rate() && x <= u.max_rate()) {
                    return Err(ScpError::InitialRateOutOfBounds {
                        source_id: inst.network().sources()[s].id,
                        rate: x,
                        min: u.min_rate(),
                        max: u.max_rate(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Everything the algorithm carries from one iteration to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub t: usize,
    pub x_tilde: Vec<f64>,
    /// Previous iterate, the expansion point of the next linearization.
    pub x_tilde_prev: Vec<f64>,
    pub mu: Vec<f64>,
    /// Path prices the latest rate update reacted to.
    pub rho: Vec<f64>,
    /// Response intercepts `A_s` of the latest rate update.
    pub a: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    /// `None` for the initial state.
    pub stopping_metric: Option<f64>,
    /// `g_l(x̃^(t))` per link.
    pub g: Vec<f64>,
    /// `ĝ_l(x̃^(t), x̃^(t-1))` per link.
    pub g_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub rates: Vec<f64>,
    pub prices: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
    pub final_state: IterateState,
}

impl AllocationResult {
    pub fn last_metric(&self) -> f64 {
        self.trace
            .last()
            .and_then(|r| r.stopping_metric)
            .unwrap_or(f64::INFINITY)
    }

    pub fn ensure_converged(self) -> Result<Self, ScpError> {
        if self.converged {
            Ok(self)
        } else {
            Err(ScpError::NotConverged {
                iterations: self.iterations,
                last_change: self.last_metric(),
            })
        }
    }
}

/// One source's contribution to the tangent of `g_l` at `x̃'`, evaluated at `x̃`.
#[inline]
pub(crate) fn tangent_term(r: f64, c2: f64, x_tilde: f64, expansion: f64) -> f64 {
    let inv = 1.0 / c2;
    r * (expansion.powf(inv) + inv * expansion.powf(inv - 1.0) * (x_tilde - expansion))
}

/// Closed-form best response of one source to path price `rho`, given its
/// current transformed rate. Returns `(A_s, x̃_next, x_next)`.
#[inline]
pub(crate) fn rate_response(u: &SCurveUtility, x_tilde: f64, rho: f64, rho_floor: f64) -> (f64, f64, f64) {
    let (lo, hi) = u.transformed_domain();
    let a = u.response_constant() + (1.0 - 1.0 / u.c2()) * x_tilde.ln();
    let next = if rho < rho_floor {
        hi
    } else {
        ((a - rho.ln()) / u.c1()).clamp(lo, hi)
    };
    // The monotone inverse transform keeps the rate inside [m, M] up to
    // rounding; the projection removes that last ulp.
    (a, next, u.project(u.rate_of(next)))
}

#[inline]
pub(crate) fn price_step(mu: f64, gamma: f64, capacity: f64, g_hat: f64) -> f64 {
    (mu - gamma * (capacity - g_hat)).max(0.0)
}

/// Path price: route prices summed in ascending link order.
#[inline]
pub(crate) fn path_price(route: &[usize], prices: &[f64]) -> f64 {
    route.iter().fold(0.0, |acc, &l| acc + prices[l])
}

/// `g_l(x̃) = Σ_s R_ls r_s x̃_s^{1/C2_s}` for the link at index `l`.
pub fn g_true(inst: &Instance, x_tilde: &[f64], l: usize) -> f64 {
    inst.network().links()[l]
        .sources
        .iter()
        .fold(0.0, |acc, &s| acc + inst.utilities()[s].rate_of(x_tilde[s]))
}

/// Gradient of `g_l` with respect to every transformed rate.
pub fn g_true_gradient(inst: &Instance, x_tilde: &[f64], l: usize) -> Vec<f64> {
    let mut grad = vec![0.0; inst.num_sources()];
    for &s in &inst.network().links()[l].sources {
        let u = &inst.utilities()[s];
        grad[s] = u.encoding_rate() / u.c2() * x_tilde[s].powf(1.0 / u.c2() - 1.0);
    }
    grad
}

fn g_hat_unchecked(inst: &Instance, x_tilde: &[f64], expansion: &[f64], l: usize) -> f64 {
    inst.network().links()[l].sources.iter().fold(0.0, |acc, &s| {
        let u = &inst.utilities()[s];
        acc + tangent_term(u.encoding_rate(), u.c2(), x_tilde[s], expansion[s])
    })
}

/// First-order Taylor approximation of `g_l` around `expansion`, evaluated at `x_tilde`.
pub fn g_hat(inst: &Instance, x_tilde: &[f64], expansion: &[f64], l: usize) -> Result<f64, ScpError> {
    for &s in &inst.network().links()[l].sources {
        if !(expansion[s] > 0.0) {
            return Err(ScpError::NonPositiveExpansionPoint(inst.network().sources()[s].id));
        }
    }
    Ok(g_hat_unchecked(inst, x_tilde, expansion, l))
}

/// Projected dual-gradient step on every link price, linearizing at the
/// previous iterate.
pub fn update_prices(inst: &Instance, state: &IterateState, gamma: f64) -> Vec<f64> {
    inst.network()
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let gh = g_hat_unchecked(inst, &state.x_tilde, &state.x_tilde_prev, l);
            price_step(state.mu[l], gamma, link.capacity, gh)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateUpdate {
    pub rho: Vec<f64>,
    pub a: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub x: Vec<f64>,
}

/// Every source's closed-form response to the path prices built from `prices`.
pub fn update_rates(inst: &Instance, state: &IterateState, prices: &[f64], rho_floor: f64) -> RateUpdate {
    let n = inst.num_sources();
    let mut out = RateUpdate {
        rho: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        x_tilde: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
    };
    for (s, src) in inst.network().sources().iter().enumerate() {
        let rho = path_price(&src.route, prices);
        let (a, xt, x) = rate_response(&inst.utilities()[s], state.x_tilde[s], rho, rho_floor);
        out.rho.push(rho);
        out.a.push(a);
        out.x_tilde.push(xt);
        out.x.push(x);
    }
    out
}

pub fn initial_rates(inst: &Instance, policy: &InitialRates) -> Vec<f64> {
    let net = inst.network();
    match policy {
        InitialRates::Explicit(x) => x.clone(),
        InitialRates::Midpoint => inst
            .utilities()
            .iter()
            .map(|u| 0.5 * (u.min_rate() + u.max_rate()))
            .collect(),
        InitialRates::FairShare => net
            .sources()
            .iter()
            .zip(inst.utilities())
            .map(|(src, u)| {
                let share = src
                    .route
                    .iter()
                    .map(|&l| net.links()[l].capacity / net.links()[l].sources.len() as f64)
                    .fold(f64::INFINITY, f64::min);
                u.project(share)
            })
            .collect(),
    }
}

pub fn initial_prices(inst: &Instance, policy: &InitialPrices, x0: &[f64]) -> Vec<f64> {
    let net = inst.network();
    match policy {
        InitialPrices::Uniform(mu) => vec![*mu; net.num_links()],
        InitialPrices::PerLink(mu) => mu.clone(),
        InitialPrices::MarginalUtility => {
            let mut mu: Vec<Option<f64>> = net
                .links()
                .iter()
                .map(|link| {
                    if link.sources.is_empty() {
                        return None;
                    }
                    let total: f64 = link
                        .sources
                        .iter()
                        .map(|&s| inst.utilities()[s].marginal(x0[s]) / net.sources()[s].route.len() as f64)
                        .sum();
                    Some(total / link.sources.len() as f64)
                })
                .collect();
            // Unused links never influence a source; give them the mean of
            // the others so that every price starts positive.
            let used: Vec<f64> = mu.iter().flatten().copied().collect();
            let fill = if used.is_empty() {
                1.0
            } else {
                used.iter().sum::<f64>() / used.len() as f64
            };
            mu.iter_mut().map(|m| m.unwrap_or(fill)).collect()
        }
    }
}

/// State at `t = 0`; the expansion point starts at the initial iterate.
pub fn initial_state(inst: &Instance, config: &SolverConfig) -> Result<IterateState, ScpError> {
    config.validate(inst)?;
    let x = initial_rates(inst, &config.x0);
    let mu = initial_prices(inst, &config.mu0, &x);
    let x_tilde = inst.transform(&x);
    let rho = inst
        .network()
        .sources()
        .iter()
        .map(|src| path_price(&src.route, &mu))
        .collect();
    let a = inst
        .utilities()
        .iter()
        .zip(&x_tilde)
        .map(|(u, &xt)| u.response_constant() + (1.0 - 1.0 / u.c2()) * xt.ln())
        .collect();
    Ok(IterateState {
        t: 0,
        x_tilde_prev: x_tilde.clone(),
        x_tilde,
        mu,
        rho,
        a,
        x,
    })
}

/// `max_s |a_s - b_s|`.
pub fn max_abs_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Applies `config.stopping_rule` to a state reached with rate change `metric`.
pub fn should_stop(inst: &Instance, state: &IterateState, metric: f64, config: &SolverConfig) -> bool {
    if !(metric < config.epsilon) {
        return false;
    }
    match config.stopping_rule {
        StoppingRule::RateChange => true,
        StoppingRule::RateChangeAndLinkBalance => {
            let net = inst.network();
            net.links().iter().enumerate().all(|(l, link)| {
                let load = net.load_at(&state.x, l);
                (load - link.capacity).abs() <= config.feas_tol || (load <= link.capacity && state.mu[l] == 0.0)
            })
        }
    }
}

/// One full iteration: price update, then rate update.
pub fn step(inst: &Instance, state: &IterateState, config: &SolverConfig) -> (IterateState, f64) {
    let mu = update_prices(inst, state, config.gamma);
    let used = match config.price_lag {
        PriceLag::Fresh => &mu,
        PriceLag::Lagged => &state.mu,
    };
    let upd = update_rates(inst, state, used, config.rho_floor);
    let metric = max_abs_change(&upd.x, &state.x);
    let next = IterateState {
        t: state.t + 1,
        x_tilde_prev: state.x_tilde.clone(),
        x_tilde: upd.x_tilde,
        mu,
        rho: upd.rho,
        a: upd.a,
        x: upd.x,
    };
    (next, metric)
}

pub fn trace_record(inst: &Instance, state: &IterateState, metric: Option<f64>) -> TraceRecord {
    let links = 0..inst.num_links();
    TraceRecord {
        t: state.t,
        x: state.x.clone(),
        x_tilde: state.x_tilde.clone(),
        mu: state.mu.clone(),
        rho: state.rho.clone(),
        stopping_metric: metric,
        g: links.clone().map(|l| g_true(inst, &state.x_tilde, l)).collect(),
        g_hat: links
            .map(|l| g_hat_unchecked(inst, &state.x_tilde, &state.x_tilde_prev, l))
            .collect(),
    }
}

/// Runs the iteration until the largest per-source rate change drops below
/// `epsilon` or `max_iter` is reached. Non-convergence is reported through
/// `AllocationResult::converged`, not as an error.
pub fn solve(inst: &Instance, config: &SolverConfig) -> Result<AllocationResult, ScpError> {
    let mut state = initial_state(inst, config)?;
    let mut trace = vec![trace_record(inst, &state, None)];
    let mut converged = false;
    while state.t < config.max_iter {
        let (next, metric) = step(inst, &state, config);
        state = next;
        trace.push(trace_record(inst, &state, Some(metric)));
        if should_stop(inst, &state, metric, config) {
            converged = true;
            break;
        }
    }
    Ok(AllocationResult {
        rates: state.x.clone(),
        prices: state.mu.clone(),
        iterations: state.t,
        converged,
        trace,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktResidual {
    /// `∂L/∂x̃_s` per source.
    pub stationarity: Vec<f64>,
    /// Stationarity divided by the utility-derivative term.
    pub stationarity_normalized: Vec<f64>,
    /// `μ_l (g_l(x̃) - c_l)` per link.
    pub slackness: Vec<f64>,
    /// Slackness divided by the link capacity.
    pub slackness_normalized: Vec<f64>,
}

/// Lagrangian stationarity and complementary slackness of the convexified
/// problem at `(x̃, x̃', μ)`.
pub fn kkt_residual(inst: &Instance, x_tilde: &[f64], expansion: &[f64], mu: &[f64]) -> Result<KktResidual, ScpError> {
    let net = inst.network();
    let mut stationarity = Vec::with_capacity(inst.num_sources());
    let mut stationarity_normalized = Vec::with_capacity(inst.num_sources());
    for (s, (src, u)) in net.sources().iter().zip(inst.utilities()).enumerate() {
        if !(expansion[s] > 0.0) || !(x_tilde[s] > 0.0) {
            return Err(ScpError::NonPositiveExpansionPoint(src.id));
        }
        let gain = u.transformed(x_tilde[s]).first;
        let rho = path_price(&src.route, mu);
        let cost = u.encoding_rate() / u.c2() * expansion[s].powf(1.0 / u.c2() - 1.0) * rho;
        stationarity.push(gain - cost);
        stationarity_normalized.push((gain - cost) / gain);
    }
    let mut slackness = Vec::with_capacity(inst.num_links());
    let mut slackness_normalized = Vec::with_capacity(inst.num_links());
    for (l, link) in net.links().iter().enumerate() {
        let v = mu[l] * (g_true(inst, x_tilde, l) - link.capacity);
        slackness.push(v);
        slackness_normalized.push(v / link.capacity);
    }
    Ok(KktResidual {
        stationarity,
        stationarity_normalized,
        slackness,
        slackness_normalized,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport {
    pub passed: bool,
    /// `max_l |ĝ_l(x̃, x̃_prev) - g_l(x̃)|`.
    pub max_linearization_gap: f64,
    /// `max_l (g_l(x̃) - c_l)`; negative when every link has slack.
    pub max_capacity_excess: f64,
}

/// At a steady state the linearized constraints coincide with the original
/// ones and the original ones hold.
pub fn steady_state_check(inst: &Instance, state: &IterateState, tol: f64) -> SteadyStateReport {
    let mut gap: f64 = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for (l, link) in inst.network().links().iter().enumerate() {
        let g = g_true(inst, &state.x_tilde, l);
        let gh = g_hat_unchecked(inst, &state.x_tilde, &state.x_tilde_prev, l);
        gap = gap.max((gh - g).abs());
        excess = excess.max(g - link.capacity);
    }
    SteadyStateReport {
        passed: gap <= tol && excess <= tol,
        max_linearization_gap: gap,
        max_capacity_excess: excess,
    }
}

/// Largest per-iteration relative deviation between two traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceComparison {
    pub same_length: bool,
    pub max_rel_rates: f64,
    pub max_rel_prices: f64,
}

impl TraceComparison {
    pub fn max_deviation(&self) -> f64 {
        if self.same_length {
            self.max_rel_rates.max(self.max_rel_prices)
        } else {
            f64::INFINITY
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn compare_traces(a: &[TraceRecord], b: &[TraceRecord]) -> TraceComparison {
    let mut cmp = TraceComparison {
        same_length: a.len() == b.len(),
        max_rel_rates: 0.0,
        max_rel_prices: 0.0,
    };
    for (ra, rb) in a.iter().zip(b) {
        for (p, q) in ra.x.iter().zip(&rb.x) {
            cmp.max_rel_rates = cmp.max_rel_rates.max(rel_err(*p, *q));
        }
        for (p, q) in ra.mu.iter().zip(&rb.mu) {
            cmp.max_rel_prices = cmp.max_rel_prices.max(rel_err(*p, *q));
        }
    }
    cmp
}
