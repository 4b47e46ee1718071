use levyx_core::limit_model::SigmaVariant;
use levyx_core::limit_sim::{simulate_limit_ensemble, EulerConfig, LimitScheme};
use levyx_core::prelimit::{simulate_prelimit_ensemble, uniform_grid};
use levyx_core::scenario::builtin;
use levyx_core::stats::{ks_two_sample, moments};
use levyx_core::switching::sample_switch_path;
use levyx_core::{path_stream, SimOptions, StreamDomain};

const SEED: u64 = 7;

fn within(est: f64, se: f64, target: f64, what: &str) {
    let z = (est - target) / se;
    assert!(z.abs() < 4.0, "{what}: {est} (SE {se}) against {target}, z = {z:.2}");
}

#[test]
fn sojourn_and_occupation_match_the_stationary_law() {
    let lab = builtin("poisson2").unwrap().lab().unwrap();
    let horizon = 200.0;
    let n = 400;
    let mut occ0 = Vec::with_capacity(n);
    let mut rate = Vec::with_capacity(n);
    let mut sojourn0 = Vec::new();
    for id in 0..n as u64 {
        let mut rng = path_stream(SEED, StreamDomain::new("test-switch", 0), id);
        let path = sample_switch_path(&lab.model, 0, horizon, &mut rng).unwrap();
        occ0.push(path.occupation(2)[0] / horizon);
        rate.push(path.count_at(horizon) as f64 / horizon);
        for k in 0..path.states.len() - 1 {
            if path.states[k] == 0 {
                sojourn0.push(path.jump_times[k + 1] - path.jump_times[k]);
            }
        }
    }
    let m = moments(&occ0);
    within(m.mean, m.mean_se, 2.0 / 3.0, "occupation of state 0");
    let m = moments(&rate);
    within(m.mean, m.mean_se, 4.0 / 3.0, "switching rate");
    let m = moments(&sojourn0);
    within(m.mean, m.mean_se, 1.0, "mean sojourn in state 0");
}

#[test]
fn big_jump_frequency_of_the_prelimit_process() {
    let lab = builtin("poisson2").unwrap().lab().unwrap();
    let grid = uniform_grid(1.0, 1);
    let paths = simulate_prelimit_ensemble(
        lab.prelimit_setup(),
        0.1,
        1.0,
        &grid,
        &SimOptions::default(),
        4000,
        SEED,
        StreamDomain::new("test-big", 0),
    )
    .unwrap();
    let counts: Vec<f64> = paths.iter().map(|p| p.big_jumps as f64).collect();
    let m = moments(&counts);
    // q̄ Σ ρ λ₀ T = 1 for the fixture; the ε-scaled switching count is random.
    within(m.mean, m.mean_se, 1.0, "big jumps per unit time");
}

fn limit_terminal(name: &str, variant: SigmaVariant, n: usize, horizon: f64, domain: &str) -> (Vec<f64>, Vec<u64>) {
    let lab = builtin(name).unwrap().lab().unwrap();
    let limit = lab.limit(variant);
    let grid = uniform_grid(horizon, 4);
    let paths =
        simulate_limit_ensemble(&limit, &LimitScheme::Exact, lab.xi0(), horizon, &grid, n, SEED, StreamDomain::new(domain, 0)).unwrap();
    (
        paths.iter().map(|p| p.grid.coord(4, 0)).collect(),
        paths.iter().map(|p| *p.jump_count.last().unwrap()).collect(),
    )
}

#[test]
fn exact_limit_brownian_variance() {
    let (x, _) = limit_terminal("iid2", SigmaVariant::FullSource, 20_000, 2.0, "test-bm");
    let m = moments(&x);
    within(m.mean, m.mean_se, 0.0, "mean");
    within(m.var, m.var_se, 2.0, "variance at T = 2");
}

#[test]
fn exact_limit_poisson_counts() {
    let (x, counts) = limit_terminal("poisson2", SigmaVariant::FullSource, 20_000, 2.0, "test-poisson");
    let c: Vec<f64> = counts.iter().map(|&k| k as f64).collect();
    let m = moments(&c);
    within(m.mean, m.mean_se, 2.0, "jump count mean");
    within(m.var, m.var_se, 2.0, "jump count variance");
    // Compound Poisson with N(1, 0.25) marks: mean λT·1, variance λT·1.25.
    let m = moments(&x);
    within(m.mean, m.mean_se, 2.0, "terminal mean");
    within(m.var, m.var_se, 2.5, "terminal variance");
}

#[test]
fn euler_agrees_with_exact_sampling() {
    let lab = builtin("driftonly").unwrap().lab().unwrap();
    let limit = lab.limit(SigmaVariant::FullSource);
    let grid = uniform_grid(1.0, 2);
    let n = 5000;
    let exact =
        simulate_limit_ensemble(&limit, &LimitScheme::Exact, lab.xi0(), 1.0, &grid, n, SEED, StreamDomain::new("test-exact", 0)).unwrap();
    let euler = LimitScheme::Euler(EulerConfig { dt: 1e-3, lambda_cap: 1.0, u_box: None });
    let approx = simulate_limit_ensemble(&limit, &euler, lab.xi0(), 1.0, &grid, n, SEED, StreamDomain::new("test-euler", 0)).unwrap();
    for i in 1..=2 {
        let a: Vec<f64> = exact.iter().map(|p| p.grid.coord(i, 0)).collect();
        let b: Vec<f64> = approx.iter().map(|p| p.grid.coord(i, 0)).collect();
        let ks = ks_two_sample(&a, &b).unwrap();
        assert!(ks.p_value > 1e-3, "grid point {i}: KS {} p {}", ks.statistic, ks.p_value);
    }
}

#[test]
fn limit_increments_are_stationary() {
    let lab = builtin("driftonly").unwrap().lab().unwrap();
    let limit = lab.limit(SigmaVariant::FullSource);
    let grid = uniform_grid(2.0, 8);
    let paths =
        simulate_limit_ensemble(&limit, &LimitScheme::Exact, lab.xi0(), 2.0, &grid, 20_000, SEED, StreamDomain::new("test-incr", 0))
            .unwrap();
    // E|ξ(t+h) − ξ(t)|² = Σh + β²h² with h = 0.25, Σ = 1, β = 2/3.
    let target = 0.25 + (2.0f64 / 3.0).powi(2) * 0.0625;
    for i in 0..8 {
        let sq: Vec<f64> = paths.iter().map(|p| (p.grid.coord(i + 1, 0) - p.grid.coord(i, 0)).powi(2)).collect();
        let m = moments(&sq);
        within(m.mean, m.mean_se, target, &format!("increment {i}"));
    }
}

#[test]
fn ensembles_do_not_depend_on_the_thread_count() {
    let lab = builtin("poisson2").unwrap().lab().unwrap();
    let grid = uniform_grid(1.0, 5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            simulate_prelimit_ensemble(
                lab.prelimit_setup(),
                0.2,
                1.0,
                &grid,
                &SimOptions::default(),
                200,
                SEED,
                StreamDomain::new("test-threads", 0),
            )
            .unwrap()
        })
    };
    assert_eq!(run(1), run(3));
}
