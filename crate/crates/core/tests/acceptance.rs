//! Acceptance suite on the reference configuration: constant unit hazard,
//! unit-mean exponential claims, premium 1.5, loading 0.1, horizon 5.
//!
//! Each test prints one `criterion N ... PASS|FAIL` line; run with
//! `--nocapture` to see the measured quantities.

use std::sync::{Arc, OnceLock};

use ruin_core::hjb::{hjb_residual, solve, SolverConfig};
use ruin_core::io::{write_field, write_path_events, write_path_header, write_summary_header, write_summary_row, Provenance};
use ruin_core::simulator::{simulate_path, PathStream, SimOptions};
use ruin_core::validation::{
    check_bounds_and_boundaries, check_dpp, check_monotonicity, check_w_inequality, crosscheck_mc, w_spread,
    EPS_GRID, MEMORYLESS_TOL,
};
use ruin_core::{estimate_survival, ClaimDistribution, HazardModel, ModelParams, Policy, Solution, State};

const SEED: u64 = 20_240_601;
const MC_PATHS: u64 = 1_000_000;

fn reference() -> ModelParams {
    ModelParams::new(
        1.5,
        0.1,
        5.0,
        HazardModel::ConstantRate { rate: 1.0 },
        ClaimDistribution::Exponential { mean: 1.0 },
    )
    .unwrap()
}

fn config(n: usize) -> SolverConfig {
    SolverConfig { n_s: n, n_x: n, n_q: 21, n_quad: 64 }
}

fn solution(n: usize) -> &'static Solution {
    static S100: OnceLock<Solution> = OnceLock::new();
    static S200: OnceLock<Solution> = OnceLock::new();
    static S400: OnceLock<Solution> = OnceLock::new();
    let cell = match n {
        100 => &S100,
        200 => &S200,
        400 => &S400,
        _ => unreachable!(),
    };
    cell.get_or_init(|| solve(&reference(), &config(n)).unwrap())
}

fn report(n: u32, what: &str, ok: bool, detail: &str) {
    // straight to the handle so the line shows without --nocapture
    let line = format!("criterion {n} {what}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    std::io::Write::write_all(&mut std::io::stderr(), line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} {what} failed: {detail}");
}

/// Interior states strictly below the barrier.
fn interior_points() -> Vec<State> {
    vec![
        State::new(0.0, 0.1, 0.0),
        State::new(0.0, 0.375, 0.0),
        State::new(0.0, 0.6, 0.0),
        State::new(1.0, 0.3, 0.5),
        State::new(2.5, 0.2, 1.0),
    ]
}

#[test]
fn criterion_1_boundary_exactness() {
    let p = reference();
    let mut worst = 0.0f64;
    let mut ok = true;
    for n in [100, 200] {
        let r = check_bounds_and_boundaries(&solution(n).value, &p);
        worst = worst.max(r.violation);
        ok &= r.passed();
    }
    report(1, "boundary exactness", ok, &format!("worst violation {worst:e}, tolerance 0"));
}

#[test]
fn criterion_2_monotonicity_and_w_inequality() {
    let p = reference();
    let v = &solution(200).value;
    let mono = check_monotonicity(v, &p);
    let win = check_w_inequality(v, &p).unwrap();
    report(
        2,
        "monotonicity and w-inequality",
        mono.passed() && win.passed(),
        &format!("monotonicity {:e}, w-inequality {:e}, tolerance 1e-10", mono.violation, win.violation),
    );
}

#[test]
fn criterion_3_memorylessness() {
    let (coarse, _) = w_spread(&solution(200).value);
    let (fine, _) = w_spread(&solution(400).value);
    let ok = coarse <= MEMORYLESS_TOL && fine <= 0.7 * coarse;
    report(3, "memorylessness", ok, &format!("spread 200: {coarse:e}, spread 400: {fine:e}"));
}

#[test]
fn criterion_4_solver_simulator_agreement() {
    let p = reference();
    let sol = solution(200);
    let table = Arc::new(sol.policy.to_table(&p).unwrap());
    let r = crosscheck_mc(&sol.value, &table, &p, &interior_points(), MC_PATHS, SEED, EPS_GRID).unwrap();
    for note in &r.notes {
        println!("  {note}");
    }
    report(
        4,
        "solver-simulator agreement",
        r.passed(),
        &format!("worst excess over 3 se {:e} at {:?}, allowance {EPS_GRID}", r.violation, r.location),
    );
}

#[test]
fn criterion_5_dpp_consistency() {
    let p = reference();
    let sol = solution(200);
    let table = Arc::new(sol.policy.to_table(&p).unwrap());
    let mut starts = vec![State::new(0.0, 2.0, 0.0)];
    starts.extend([State::new(0.0, 0.375, 0.0), State::new(1.0, 0.3, 0.5)]);
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for start in &starts {
        for h in [0.25, 0.5, 1.0] {
            let r = check_dpp(&sol.value, &table, &p, start, h, MC_PATHS, SEED, EPS_GRID).unwrap();
            println!("  {} from {:?}: {}", r.name, start, r.notes.join("; "));
            ok &= r.passed();
            worst = worst.max(r.violation);
        }
    }
    report(5, "dpp consistency", ok, &format!("worst excess over 3 se {worst:e}, allowance {EPS_GRID}"));
}

#[test]
fn criterion_6_deterministic_policy_analytics() {
    let p = reference();
    let policy = Policy::Constant(0.0);
    let mut ok = true;
    let mut detail = Vec::new();
    for s in [0.0, 1.0, 2.5, 4.0, 4.9] {
        let b = p.barrier(s).unwrap();
        let below = estimate_survival(&p, &policy, &State::new(s, 0.99 * b, 0.0), 10_000, SEED).unwrap();
        let above = estimate_survival(&p, &policy, &State::new(s, 1.01 * b, s / 2.0), 10_000, SEED).unwrap();
        ok &= below.mean == 0.0 && above.mean == 1.0;
        detail.push(format!("s={s}: {}/{}", below.mean, above.mean));
    }
    report(6, "deterministic policy analytics", ok, &detail.join(", "));
}

/// Max-norm difference at nodes shared by an `n` and a `2n` solve.
fn shared_node_gap(coarse: &Solution, fine: &Solution) -> f64 {
    let g = coarse.value.grid;
    let mut gap = 0.0f64;
    for i in 0..=g.n_s {
        for k in 0..=i {
            for j in 0..=g.n_x {
                gap = gap.max((coarse.value.get(i, j, k) - fine.value.get(2 * i, 2 * j, 2 * k)).abs());
            }
        }
    }
    gap
}

#[test]
fn criterion_7_self_convergence() {
    let a = shared_node_gap(solution(100), solution(200));
    let b = shared_node_gap(solution(200), solution(400));
    report(7, "self-convergence", a <= 5e-2 && b <= 3e-2, &format!("100 vs 200: {a:e} (<= 5e-2), 200 vs 400: {b:e} (<= 3e-2)"));
}

fn residual_points(p: &ModelParams) -> Vec<State> {
    let mut pts = Vec::new();
    for s in [0.5, 1.5, 2.5, 3.5] {
        let b = p.barrier(s).unwrap();
        for frac in [0.2, 0.4, 0.6, 0.8] {
            for w in [0.0, s / 2.0] {
                pts.push(State::new(s, frac * b, w));
            }
        }
    }
    pts
}

#[test]
fn criterion_8_residual_halving() {
    let p = reference();
    let pts = residual_points(&p);
    let r200 = hjb_residual(&solution(200).value, &p, &config(200), &pts).unwrap();
    let r400 = hjb_residual(&solution(400).value, &p, &config(400), &pts).unwrap();
    let ratio = r400.max_abs / r200.max_abs;
    report(
        8,
        "residual halving",
        (0.375..=0.625).contains(&ratio),
        &format!("max residual 200: {:e}, 400: {:e}, ratio {ratio}", r200.max_abs, r400.max_abs),
    );
}

/// Solve CSV, simulation summary and a path dump, all as bytes.
fn artifacts() -> Vec<u8> {
    let p = reference();
    let cfg = SolverConfig { n_s: 40, n_x: 40, n_q: 21, n_quad: 64 };
    let sol = solve(&p, &cfg).unwrap();
    let prov = Provenance::new("test");
    let mut out = Vec::new();
    write_field(&mut out, &prov, &sol.value, &sol.policy, 0).unwrap();
    let policy = Policy::Table(Arc::new(sol.policy.to_table(&p).unwrap()));
    write_summary_header(&mut out, &prov).unwrap();
    for pt in interior_points() {
        let est = estimate_survival(&p, &policy, &pt, 20_000, SEED).unwrap();
        write_summary_row(&mut out, &pt, &policy.label(), &est).unwrap();
    }
    write_path_header(&mut out, &prov).unwrap();
    for id in 0..3 {
        let mut stream = PathStream::new(SEED, id);
        let rec = simulate_path(&p, &policy, &State::new(0.0, 0.5, 0.0), &mut stream, SimOptions::default()).unwrap();
        write_path_events(&mut out, id, &rec).unwrap();
    }
    out
}

#[test]
fn criterion_9_reproducibility() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(artifacts)
    };
    let first = run(1);
    let again = run(1);
    let wide = run(4);
    let ok = first == again && first == wide;
    report(9, "reproducibility", ok, &format!("{} bytes, 1 vs 1 vs 4 workers", first.len()));
}
