//! Solver-independent checks for small instances.
//!
//! [`grid_search`] enumerates the original (untransformed) problem on a
//! box grid with successive refinement, [`local_opt_test`] samples feasible
//! perturbations around a candidate, and [`fd_gradient_check`] compares an
//! analytic gradient with central differences. None of them call into the
//! engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::Instance;
use crate::network::{FeasibilityReport, NetworkError, Violation};

/// Seed of the perturbation sampler unless the caller overrides it.
pub const DEFAULT_PERTURBATION_SEED: u64 = 0x5eed_2011;

/// Largest number of sources the grid search accepts. Each pass costs up to
/// `points_per_dim^(S-1)` partial evaluations.
pub const MAX_GRID_SOURCES: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid search over {sources} sources exceeds the budget of {limit}")]
    BudgetExceeded { sources: usize, limit: usize },
    #[error("no grid point satisfies the capacity constraints (capacity below the sum of minimum rates)")]
    NoFeasiblePoint,
    #[error("candidate is infeasible: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InfeasibleCandidate(Vec<Violation>),
    #[error("point is not strictly inside the domain along coordinate {0}")]
    DomainBoundary(usize),
    #[error("invalid oracle parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub points_per_dim: usize,
    /// Each pass shrinks the box around the incumbent 4× per dimension.
    pub refinement_passes: usize,
    /// Capacity tolerance, Kbps.
    pub feas_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_dim: 64,
            refinement_passes: 2,
            feas_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub rates: Vec<f64>,
    /// `Σ_s U_s(x_s)` at `rates`.
    pub utility: f64,
    /// Re-check of the returned point at `feas_tol`.
    pub certificate: FeasibilityReport,
    /// Grid spacing per source in the last pass, Kbps.
    pub resolution: Vec<f64>,
    /// Best utility after each pass.
    pub pass_utilities: Vec<f64>,
}

struct PassSearch<'a> {
    inst: &'a Instance,
    axes: Vec<Vec<f64>>,
    gains: Vec<Vec<f64>>,
    limits: Vec<f64>,
    loads: Vec<f64>,
    choice: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl PassSearch<'_> {
    fn fits(&self, s: usize, x: f64) -> bool {
        self.inst.network().sources()[s]
            .route
            .iter()
            .all(|&l| self.loads[l] + x <= self.limits[l])
    }

    fn add(&mut self, s: usize, x: f64) {
        for &l in &self.inst.network().sources()[s].route {
            self.loads[l] += x;
        }
    }

    fn remove(&mut self, s: usize, x: f64) {
        for &l in &self.inst.network().sources()[s].route {
            self.loads[l] -= x;
        }
    }

    /// Upper bound on the gain of sources `s..`: each one alone at the
    /// largest grid value its route still has room for.
    fn tail_bound(&self, s: usize) -> f64 {
        let mut bound = 0.0;
        for k in s..self.axes.len() {
            let room = self.inst.network().sources()[k]
                .route
                .iter()
                .map(|&l| self.limits[l] - self.loads[l])
                .fold(f64::INFINITY, f64::min);
            let fit = self.axes[k].partition_point(|&x| x <= room);
            if fit == 0 {
                return f64::NEG_INFINITY;
            }
            bound += self.gains[k][fit - 1];
        }
        // Slack so that rounding in the bound never prunes a true improvement.
        bound + 1e-12
    }

    fn incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0)
    }

    /// Depth-first in lexicographic order; only strict improvements replace
    /// the incumbent, so ties resolve to the lexicographically smallest point.
    fn descend(&mut self, s: usize, partial: f64) {
        let last = s + 1 == self.axes.len();
        if partial + self.tail_bound(s) < self.incumbent() {
            return;
        }
        if last {
            // Utilities are nondecreasing along an axis: the best choice is
            // the first index reaching the gain of the largest feasible one.
            let Some(top) = (0..self.axes[s].len()).rev().find(|&i| self.fits(s, self.axes[s][i])) else {
                return;
            };
            let target = self.gains[s][top];
            let i = self.gains[s][..=top].iter().position(|&g| g == target).unwrap_or(top);
            let total = partial + self.gains[s][i];
            if total > self.incumbent() {
                self.choice[s] = i;
                self.best = Some((total, self.choice.clone()));
            }
            return;
        }
        for i in 0..self.axes[s].len() {
            let x = self.axes[s][i];
            if !self.fits(s, x) {
                break;
            }
            self.choice[s] = i;
            self.add(s, x);
            let gain = self.gains[s][i];
            self.descend(s + 1, partial + gain);
            self.remove(s, x);
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

/// Exhaustive grid search over `Π [m_s, M_s]` for the best feasible point of
/// the untransformed problem, followed by `refinement_passes` zoomed passes.
/// Certifies only that no better point exists at the achieved resolution.
pub fn grid_search(inst: &Instance, spec: &GridSpec) -> Result<OracleResult, OracleError> {
    let n_src = inst.num_sources();
    if n_src > MAX_GRID_SOURCES {
        return Err(OracleError::BudgetExceeded {
            sources: n_src,
            limit: MAX_GRID_SOURCES,
        });
    }
    if spec.points_per_dim < 2 {
        return Err(OracleError::InvalidSpec("points_per_dim must be at least 2".into()));
    }
    if n_src == 0 {
        return Err(OracleError::InvalidSpec("instance has no sources".into()));
    }
    let us = inst.utilities();
    let limits: Vec<f64> = inst
        .network()
        .links()
        .iter()
        .map(|l| l.capacity + spec.feas_tol)
        .collect();

    let mut boxes: Vec<(f64, f64)> = us.iter().map(|u| (u.min_rate(), u.max_rate())).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pass_utilities = Vec::with_capacity(spec.refinement_passes + 1);
    let mut resolution = Vec::new();

    for _pass in 0..=spec.refinement_passes {
        let axes: Vec<Vec<f64>> = boxes
            .iter()
            .map(|&(lo, hi)| linspace(lo, hi, spec.points_per_dim))
            .collect();
        let gains: Vec<Vec<f64>> = axes
            .iter()
            .zip(us)
            .map(|(axis, u)| axis.iter().map(|&x| u.eval(x)).collect())
            .collect();
        resolution = boxes
            .iter()
            .map(|&(lo, hi)| (hi - lo) / (spec.points_per_dim - 1) as f64)
            .collect();

        let mut search = PassSearch {
            inst,
            axes,
            gains,
            limits: limits.clone(),
            loads: vec![0.0; inst.num_links()],
            choice: vec![0; n_src],
            best: None,
        };
        search.descend(0, 0.0);

        if let Some((_, idx)) = search.best {
            let rates: Vec<f64> = idx.iter().enumerate().map(|(s, &i)| search.axes[s][i]).collect();
            let utility = inst.aggregate_utility(&rates);
            if best.as_ref().is_none_or(|b| utility > b.0) {
                best = Some((utility, rates));
            }
        }
        let Some((utility, rates)) = &best else {
            return Err(OracleError::NoFeasiblePoint);
        };
        pass_utilities.push(*utility);

        boxes = rates
            .iter()
            .zip(us)
            .zip(&boxes)
            .map(|((&x, u), &(lo, hi))| {
                let half = (hi - lo) / 8.0;
                ((x - half).max(u.min_rate()), (x + half).min(u.max_rate()))
            })
            .collect();
    }

    let (utility, rates) = best.ok_or(OracleError::NoFeasiblePoint)?;
    let certificate = inst.network().is_feasible(&rates, us, spec.feas_tol)?;
    Ok(OracleResult {
        rates,
        utility,
        certificate,
        resolution,
        pass_utilities,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptSpec {
    /// Half-width of the perturbation cube, Kbps.
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Gains at or below this do not count as improvements.
    pub improvement_tol: f64,
    /// Capacity tolerance the candidate itself must meet, Kbps.
    pub feas_tol: f64,
}

impl Default for LocalOptSpec {
    fn default() -> Self {
        Self {
            radius: 2.0,
            samples: 1000,
            seed: DEFAULT_PERTURBATION_SEED,
            improvement_tol: 1e-9,
            feas_tol: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptReport {
    pub passed: bool,
    /// Largest utility gain seen among feasible samples (≤ 0 when none improve).
    pub best_gain: f64,
    pub improving_point: Option<Vec<f64>>,
    pub feasible_samples: usize,
}

/// Samples perturbations uniformly from the cube of half-width `radius`
/// around `candidate` and keeps those inside the rate bounds whose link
/// loads stay within `max(c_l, load_l(candidate))`: a candidate accepted at
/// `feas_tol` keeps its own overshoot but may not extend it. Passes when no
/// kept sample improves the aggregate utility by more than `improvement_tol`.
pub fn local_opt_test(inst: &Instance, candidate: &[f64], spec: &LocalOptSpec) -> Result<LocalOptReport, OracleError> {
    let net = inst.network();
    let us = inst.utilities();
    let check = net.is_feasible(candidate, us, spec.feas_tol)?;
    if !check.feasible {
        return Err(OracleError::InfeasibleCandidate(check.violations));
    }
    if !(spec.radius >= 0.0) {
        return Err(OracleError::InvalidSpec("radius must be non-negative".into()));
    }
    let budget: Vec<f64> = net
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| link.capacity.max(net.load_at(candidate, l)))
        .collect();
    let base = inst.aggregate_utility(candidate);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut best_gain = f64::NEG_INFINITY;
    let mut improving_point = None;
    let mut feasible_samples = 0;
    let mut trial = vec![0.0; candidate.len()];
    for _ in 0..spec.samples {
        for (t, &x) in trial.iter_mut().zip(candidate) {
            let d = if spec.radius > 0.0 {
                rng.gen_range(-spec.radius..=spec.radius)
            } else {
                0.0
            };
            *t = x + d;
        }
        let in_bounds = trial
            .iter()
            .zip(us)
            .all(|(&x, u)| x >= u.min_rate() && x <= u.max_rate());
        if !in_bounds || (0..net.num_links()).any(|l| net.load_at(&trial, l) > budget[l]) {
            continue;
        }
        feasible_samples += 1;
        let gain = inst.aggregate_utility(&trial) - base;
        if gain > best_gain {
            best_gain = gain;
            if gain > spec.improvement_tol {
                improving_point = Some(trial.clone());
            }
        }
    }
    Ok(LocalOptReport {
        passed: improving_point.is_none(),
        best_gain,
        improving_point,
        feasible_samples,
    })
}

/// Largest relative error between `grad(point)` and central differences of
/// `f` with step `step`, over all coordinates. `domain` gives the open
/// interval each coordinate must stay inside while differencing.
pub fn fd_gradient_check<F, G>(
    f: F,
    grad: G,
    point: &[f64],
    step: f64,
    domain: &[(f64, f64)],
) -> Result<f64, OracleError>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(OracleError::InvalidSpec("step must be positive".into()));
    }
    if domain.len() != point.len() {
        return Err(OracleError::InvalidSpec("domain and point differ in length".into()));
    }
    for (i, (&p, &(lo, hi))) in point.iter().zip(domain).enumerate() {
        if !(p - step > lo && p + step < hi) {
            return Err(OracleError::DomainBoundary(i));
        }
    }
    let analytic = grad(point);
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = f(&probe);
        probe[i] = point[i] - step;
        let down = f(&probe);
        probe[i] = point[i];
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((analytic[i] - fd).abs() / (analytic[i].abs() + 1e-15));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{g_true, g_true_gradient};
    use crate::network::{LinkSpec, Network, SourceSpec};
    use crate::utility::SCurveUtility;

    fn single(capacity: f64) -> Instance {
        let net = Network::single_bottleneck(capacity, 1).unwrap();
        Instance::new(net, vec![SCurveUtility::with_default_bounds(256.0, 6.0, 2.0).unwrap()]).unwrap()
    }

    fn scenario_one() -> Instance {
        let net = Network::single_bottleneck(1000.0, 5).unwrap();
        let us = [2.0, 4.0, 6.0, 8.0, 10.0]
            .iter()
            .map(|&c2| SCurveUtility::with_default_bounds(256.0, 6.0, c2).unwrap())
            .collect();
        Instance::new(net, us).unwrap()
    }

    #[test]
    fn single_source_slack_capacity() {
        let res = grid_search(&single(1000.0), &GridSpec::default()).unwrap();
        assert_eq!(res.rates, vec![256.0]);
        assert!(res.certificate.feasible);
    }

    #[test]
    fn single_source_binding_capacity() {
        let res = grid_search(&single(100.0), &GridSpec::default()).unwrap();
        assert!(res.rates[0] <= 100.0 + 1e-6);
        assert!(100.0 - res.rates[0] <= res.resolution[0], "{:?}", res);
        assert!(res.pass_utilities.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn budget_and_feasibility_errors() {
        let net = Network::single_bottleneck(1000.0, 6).unwrap();
        let us = vec![SCurveUtility::with_default_bounds(256.0, 6.0, 2.0).unwrap(); 6];
        let inst = Instance::new(net, us).unwrap();
        assert_eq!(
            grid_search(&inst, &GridSpec::default()),
            Err(OracleError::BudgetExceeded { sources: 6, limit: 5 })
        );
        let net = Network::single_bottleneck(1.5, 2).unwrap();
        let us = vec![SCurveUtility::with_default_bounds(256.0, 6.0, 2.0).unwrap(); 2];
        let inst = Instance::new(net, us).unwrap();
        assert_eq!(
            grid_search(&inst, &GridSpec::default()),
            Err(OracleError::NoFeasiblePoint)
        );
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // Two identical sources on a link that fits exactly one of them at
        // the maximum: (m, M) and (M, m) tie, the smaller vector wins.
        let net = Network::single_bottleneck(257.0, 2).unwrap();
        let us = vec![SCurveUtility::with_default_bounds(256.0, 6.0, 8.0).unwrap(); 2];
        let inst = Instance::new(net, us).unwrap();
        let spec = GridSpec {
            points_per_dim: 4,
            refinement_passes: 0,
            feas_tol: 1e-9,
        };
        let res = grid_search(&inst, &spec).unwrap();
        assert_eq!(res.rates, vec![1.0, 256.0]);
    }

    #[test]
    fn grid_matches_brute_force_on_tiny_grid() {
        let links = [LinkSpec { id: 1, capacity: 300.0 }, LinkSpec { id: 2, capacity: 260.0 }];
        let sources = [
            SourceSpec {
                id: 1,
                route: vec![1, 2],
            },
            SourceSpec { id: 2, route: vec![1] },
            SourceSpec { id: 3, route: vec![2] },
        ];
        let us = [(4.0, 2.0), (6.0, 5.0), (3.0, 3.0)]
            .iter()
            .map(|&(c1, c2)| SCurveUtility::with_default_bounds(256.0, c1, c2).unwrap())
            .collect();
        let inst = Instance::new(Network::build(&links, &sources).unwrap(), us).unwrap();
        let spec = GridSpec {
            points_per_dim: 12,
            refinement_passes: 0,
            feas_tol: 1e-6,
        };
        let res = grid_search(&inst, &spec).unwrap();

        let axis = linspace(1.0, 256.0, 12);
        let mut best = (f64::NEG_INFINITY, vec![]);
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    let x = vec![a, b, c];
                    if a + b > 300.0 + 1e-6 || a + c > 260.0 + 1e-6 {
                        continue;
                    }
                    let u = inst.aggregate_utility(&x);
                    if u > best.0 {
                        best = (u, x);
                    }
                }
            }
        }
        assert_eq!(res.rates, best.1);
    }

    #[test]
    fn local_opt_examples() {
        let inst = single(1000.0);
        let opt = grid_search(&inst, &GridSpec::default()).unwrap();
        assert!(
            local_opt_test(&inst, &opt.rates, &LocalOptSpec::default())
                .unwrap()
                .passed
        );

        let inst = scenario_one();
        let rep = local_opt_test(&inst, &[1.0; 5], &LocalOptSpec::default()).unwrap();
        assert!(!rep.passed);
        assert!(rep.improving_point.is_some());

        let tiny = LocalOptSpec {
            radius: 1e-12,
            ..LocalOptSpec::default()
        };
        assert!(local_opt_test(&inst, &[150.0; 5], &tiny).unwrap().passed);
        let zero = LocalOptSpec {
            radius: 0.0,
            ..LocalOptSpec::default()
        };
        assert!(local_opt_test(&inst, &[150.0; 5], &zero).unwrap().passed);

        assert!(matches!(
            local_opt_test(&inst, &[256.0; 5], &LocalOptSpec::default()),
            Err(OracleError::InfeasibleCandidate(_))
        ));
    }

    #[test]
    fn fd_check_examples() {
        let u = SCurveUtility::with_default_bounds(256.0, 6.0, 2.0).unwrap();
        let err = fd_gradient_check(
            |p| u.transformed(p[0]).value,
            |p| vec![u.transformed(p[0]).first],
            &[0.5],
            1e-6,
            &[(0.0, f64::INFINITY)],
        )
        .unwrap();
        assert!(err <= 1e-6);

        let inst = scenario_one();
        let ones = [1.0; 5];
        let dom = [(0.0, f64::INFINITY); 5];
        let err = fd_gradient_check(
            |p| g_true(&inst, p, 0),
            |p| g_true_gradient(&inst, p, 0),
            &ones,
            1e-6,
            &dom,
        )
        .unwrap();
        assert!(err <= 1e-6);

        let coeffs = [3.0, -2.0, 0.5];
        let err = fd_gradient_check(
            |p| p.iter().zip(&coeffs).map(|(x, c)| x * c).sum::<f64>() + 7.0,
            |_| coeffs.to_vec(),
            &[1.0, 2.0, 3.0],
            1e-3,
            &[(f64::NEG_INFINITY, f64::INFINITY); 3],
        )
        .unwrap();
        assert!(err <= 1e-12, "{err}");

        assert_eq!(
            fd_gradient_check(|p| p[0], |_| vec![1.0], &[1e-7], 1e-6, &[(0.0, 1.0)]),
            Err(OracleError::DomainBoundary(0))
        );
    }
}
