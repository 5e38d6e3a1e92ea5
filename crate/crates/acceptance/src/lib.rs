//! Acceptance criteria for the workspace, evaluated end to end.
//!
//! [`evaluate`] runs every criterion and returns one [`Verdict`] each; the
//! `acceptance` test target prints them and fails if any is red.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scpnum_cli::run::{cross_check, equivalence, summarize, Agreement, Validation};
use scpnum_cli::{load_scenario, Scenario};
use scpnum_core::agents::AgentSystem;
use scpnum_core::engine::{g_hat, g_true, g_true_gradient, solve};
use scpnum_core::oracle::{fd_gradient_check, DEFAULT_PERTURBATION_SEED};
use scpnum_core::{Instance, RandomInstances, SCurveUtility, SolverConfig, StoppingRule};

const REFERENCE_RATES: [f64; 5] = [117.9658, 191.1745, 219.3638, 232.2520, 239.2439];

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Per-instance lines, when a criterion covers several instances.
    pub notes: Vec<String>,
}

#[derive(Default)]
struct Gate {
    verdicts: Vec<Verdict>,
}

impl Gate {
    fn record(&mut self, id: u32, title: &'static str, passed: bool, detail: String) {
        self.verdicts.push(Verdict {
            id,
            title,
            passed,
            detail,
            notes: Vec::new(),
        });
    }
}

fn scenario(name: &str) -> Scenario {
    load_scenario(name).expect("built-in scenario loads")
}

/// Criterion 3 on a finished run.
fn kkt_ok(sc: &Scenario) -> (bool, String) {
    let res = solve(&sc.instance, &sc.config).unwrap();
    let sum = summarize(&sc.instance, &sc.config, &res).unwrap();
    let ok = res.converged && sum.max_interior_stationarity <= 1e-2 && sum.max_slackness <= 1e-2;
    (
        ok,
        format!(
            "max interior stationarity {:.2e} (≤ 1e-2), max |mu(g-c)|/c {:.2e} (≤ 1e-2)",
            sum.max_interior_stationarity, sum.max_slackness
        ),
    )
}

/// Criterion 4 on a finished run.
fn steady_ok(sc: &Scenario) -> (bool, String) {
    let res = solve(&sc.instance, &sc.config).unwrap();
    let sum = summarize(&sc.instance, &sc.config, &res).unwrap();
    (
        res.converged && sum.steady_state_passed,
        format!(
            "max |ghat-g| {:.2e} Kbps, max g-c {:.3} Kbps (both ≤ 0.5)",
            sum.steady_state_gap, sum.capacity_excess
        ),
    )
}

/// Criterion 5 over `pairs` random pairs on one instance. Returns the worst
/// underestimate and the worst gap at coinciding points.
fn tangent_margins(inst: &Instance, rng: &mut ChaCha8Rng, pairs: usize) -> (f64, f64) {
    let domains: Vec<(f64, f64)> = inst.utilities().iter().map(|u| u.transformed_domain()).collect();
    let mut under: f64 = 0.0;
    let mut touch: f64 = 0.0;
    for _ in 0..pairs {
        let x: Vec<f64> = domains.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        let xp: Vec<f64> = domains.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        for l in 0..inst.num_links() {
            let exact = g_true(inst, &x, l);
            under = under.max(exact - g_hat(inst, &x, &xp, l).unwrap());
            touch = touch.max((g_hat(inst, &x, &x, l).unwrap() - exact).abs());
        }
    }
    (under, touch)
}

fn agreement_label(v: &Validation) -> &'static str {
    match v.agreement {
        Agreement::Grid => "grid",
        Agreement::LocalOptimum => "local-opt",
        Agreement::Disagree => "DISAGREE",
    }
}

fn oracle_ok(v: &Validation) -> bool {
    v.agreement != Agreement::Disagree && v.oracle_time.as_secs_f64() <= 60.0
}

/// Evaluates criteria 1 through 10 in order.
pub fn evaluate() -> Vec<Verdict> {
    let mut gate = Gate::default();
    let seed = DEFAULT_PERTURBATION_SEED;
    let s1 = scenario("paper-scenario-1");
    let chain = scenario("chain-3");

    // 1 and 2
    let started = Instant::now();
    let res = solve(&s1.instance, &s1.config).unwrap();
    let elapsed = started.elapsed();
    let load = s1.instance.network().load_at(&res.rates, 0);
    let worst = res
        .rates
        .iter()
        .zip(REFERENCE_RATES)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    gate.record(
        1,
        "single-bottleneck reproduction",
        res.converged && worst <= 2.0 && (999.0..=1000.5).contains(&load) && elapsed.as_secs_f64() < 1.0,
        format!(
            "rates {:?}, max deviation {worst:.3} Kbps (≤ 2.0), load {load:.3} Kbps in [999, 1000.5], {:.1} ms",
            res.rates.iter().map(|x| (x * 1e3).round() / 1e3).collect::<Vec<_>>(),
            elapsed.as_secs_f64() * 1e3
        ),
    );
    gate.record(
        2,
        "convergence speed",
        res.converged && res.iterations <= 500,
        format!(
            "stopped at t = {} (≤ 500; reference run reports t = 12)",
            res.iterations
        ),
    );

    // 3 and 4
    let (ok, detail) = kkt_ok(&s1);
    gate.record(3, "KKT certificate", ok, detail);
    let (ok, detail) = steady_ok(&s1);
    gate.record(4, "steady-state equivalence", ok, detail);

    // 5
    let gen = RandomInstances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut under, mut touch, mut pairs) = (0.0f64, 0.0f64, 0);
    for s in 0..10 {
        let (u, t) = tangent_margins(&gen.generate(1000 + s), &mut rng, 120);
        under = under.max(u);
        touch = touch.max(t);
        pairs += 120;
    }
    gate.record(
        5,
        "tangent inner approximation",
        under <= 1e-9 && touch <= 1e-12,
        format!("{pairs} pairs on 10 instances, max (g - ghat) {under:.2e} (≤ 1e-9), max |ghat - g| at x = x' {touch:.2e} (≤ 1e-12)"),
    );

    // 6
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_u, mut n_u) = (0.0f64, 0);
    for _ in 0..120 {
        let u =
            SCurveUtility::with_default_bounds(256.0, rng.gen_range(2.0..10.0), rng.gen_range(1..=10) as f64).unwrap();
        let (lo, hi) = u.transformed_domain();
        let p = [rng.gen_range(lo.max(1e-3)..hi - 1e-3)];
        let dom = [(lo, hi)];
        let first = fd_gradient_check(
            |v| u.transformed(v[0]).value,
            |v| vec![u.transformed(v[0]).first],
            &p,
            1e-6,
            &dom,
        )
        .unwrap();
        let second = fd_gradient_check(
            |v| u.transformed(v[0]).first,
            |v| vec![u.transformed(v[0]).second],
            &p,
            1e-6,
            &dom,
        )
        .unwrap();
        worst_u = worst_u.max(first).max(second);
        n_u += 1;
    }
    let (mut worst_g, mut n_g) = (0.0f64, 0);
    for s in 0..40 {
        let inst = gen.generate(2000 + s);
        let dom = vec![(0.0, f64::INFINITY); inst.num_sources()];
        for _ in 0..3 {
            let p: Vec<f64> = inst
                .utilities()
                .iter()
                .map(|u| {
                    let (lo, hi) = u.transformed_domain();
                    rng.gen_range(lo.max(1e-2)..=hi)
                })
                .collect();
            for l in 0..inst.num_links() {
                let e = fd_gradient_check(
                    |v| g_true(&inst, v, l),
                    |v| g_true_gradient(&inst, v, l),
                    &p,
                    1e-6,
                    &dom,
                )
                .unwrap();
                worst_g = worst_g.max(e);
            }
            n_g += 1;
        }
    }
    gate.record(
        6,
        "derivative correctness",
        worst_u <= 1e-6 && worst_g <= 1e-6 && n_u >= 100 && n_g >= 100,
        format!("transformed utility: {n_u} points, max rel err {worst_u:.2e}; constraint gradient: {n_g} points, max rel err {worst_g:.2e} (≤ 1e-6)"),
    );

    // 7
    let mut lines = Vec::new();
    let mut all = true;
    let v = cross_check(&s1.instance, &s1.config, seed).unwrap();
    all &= oracle_ok(&v);
    lines.push(format!(
        "paper-scenario-1: {} (gap {:+.2e}, oracle {:.1} s)",
        agreement_label(&v),
        v.utility_gap(),
        v.oracle_time.as_secs_f64()
    ));
    let random_config = SolverConfig {
        gamma: 3e-6,
        epsilon: 1e-3,
        max_iter: 200_000,
        stopping_rule: StoppingRule::RateChangeAndLinkBalance,
        ..SolverConfig::default()
    };
    let mut tally = [0usize; 3];
    for s in 0..20 {
        let inst = gen.generate(s);
        let v = cross_check(&inst, &random_config, seed).unwrap();
        all &= oracle_ok(&v);
        tally[match v.agreement {
            Agreement::Grid => 0,
            Agreement::LocalOptimum => 1,
            Agreement::Disagree => 2,
        }] += 1;
        lines.push(format!(
            "random #{s} (S={}, L={}): {} (gap {:+.2e}, converged {}, oracle {:.2} s)",
            inst.num_sources(),
            inst.num_links(),
            agreement_label(&v),
            v.utility_gap(),
            v.engine.converged,
            v.oracle_time.as_secs_f64()
        ));
    }
    gate.record(
        7,
        "oracle agreement",
        all,
        format!(
            "random instances: {} grid, {} local-opt, {} disagree",
            tally[0], tally[1], tally[2]
        ),
    );
    if let Some(v) = gate.verdicts.last_mut() {
        v.notes = lines;
    }

    // 8
    let mut detail = Vec::new();
    let mut ok = true;
    for sc in [&s1, &chain] {
        let engine = solve(&sc.instance, &sc.config).unwrap();
        let dist = AgentSystem::new(&sc.instance, &sc.config)
            .unwrap()
            .run_to_convergence()
            .unwrap();
        let eq = equivalence(&sc.instance, &engine, &dist);
        ok &= eq.passed();
        detail.push(format!(
            "{}: max rel deviation {:.1e} over {} iterations, {} msgs/round",
            sc.name,
            eq.traces.max_deviation(),
            engine.iterations,
            2 * sc.instance.network().nnz()
        ));
    }
    gate.record(8, "distributed equivalence", ok, detail.join("; "));

    // 9
    let mut worst: f64 = 0.0;
    let mut sets = 0;
    for c1 in [2.0, 6.0, 10.0] {
        for c2 in [1.0, 2.0, 4.0, 6.0, 8.0, 10.0] {
            let u = SCurveUtility::with_default_bounds(256.0, c1, c2).unwrap();
            for i in 0..1000 {
                let x = u.min_rate() + (u.max_rate() - u.min_rate()) * i as f64 / 999.0;
                let back = u.inverse_transform(u.transform(x)).unwrap();
                worst = worst.max((back - x).abs() / x);
            }
            sets += 1;
        }
    }
    gate.record(
        9,
        "transform round trip",
        worst <= 1e-12,
        format!("{sets} parameter sets × 1000 points, max rel err {worst:.2e} (≤ 1e-12)"),
    );

    // 10
    let res = solve(&chain.instance, &chain.config).unwrap();
    let (kkt, kkt_detail) = kkt_ok(&chain);
    let (steady, steady_detail) = steady_ok(&chain);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (under, touch) = tangent_margins(&chain.instance, &mut rng, 1000);
    let tangent = under <= 1e-9 && touch <= 1e-12;
    let v = cross_check(&chain.instance, &chain.config, seed).unwrap();
    gate.record(
        10,
        "multi-bottleneck substitute (chain-3)",
        res.converged && kkt && steady && tangent && oracle_ok(&v),
        format!(
            "converged in {} iterations; {kkt_detail}; {steady_detail}; tangent max (g - ghat) {under:.2e}; oracle {} (gap {:+.2e})",
            res.iterations,
            agreement_label(&v),
            v.utility_gap()
        ),
    );

    gate.verdicts
}
