//! Monte Carlo comparison of the pre-limit process against its limit:
//! marginal KS sweeps over ε, the variance-rate adjudication of the σ²
//! variants, martingale checks, tightness diagnostics and a self-test.

use serde::Serialize;

use crate::error::{LevyxError, Result};
use crate::limit_model::{perturbation_residual, Quadratic, ResidualCurve, SigmaVariant};
use crate::limit_sim::{simulate_limit_ensemble, EulerConfig, LimitScheme};
use crate::linalg;
use crate::prelimit::{ensemble_stats, simulate_prelimit_ensemble, uniform_grid, GridPath, SimOptions};
use crate::rng::StreamDomain;
use crate::scenario::Lab;
use crate::stats::{self, ks_critical_95, ks_two_sample, loglog_slope};

/// Defaults for the statistical thresholds.
pub const KS_THRESHOLD: f64 = 0.05;
pub const NOISE_FACTOR: f64 = 1.5;
pub const Z_ACCEPT: f64 = 3.0;
pub const SELF_TEST_P: f64 = 0.05;
pub const SELF_TEST_MAX_FRACTION: f64 = 0.1;

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// KS statistic required at the smallest ε.
    pub ks: f64,
    /// Multiple of the 95% KS band tolerated as an increase between grid points.
    pub noise_factor: f64,
    /// `|z|` below which a σ² variant is accepted.
    pub z_accept: f64,
    pub self_test_p: f64,
    pub self_test_max_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks: KS_THRESHOLD,
            noise_factor: NOISE_FACTOR,
            z_accept: Z_ACCEPT,
            self_test_p: SELF_TEST_P,
            self_test_max_fraction: SELF_TEST_MAX_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub eps: Vec<f64>,
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub variant: SigmaVariant,
    pub thresholds: Thresholds,
    /// Uniform grid used for the increment and tightness diagnostics.
    pub grid_steps: usize,
    /// Euler steps per unit horizon when the limit is not constant.
    pub euler_steps: usize,
    pub residual_curves: bool,
}

impl HarnessConfig {
    pub fn new(eps: Vec<f64>, n_paths: usize, times: Vec<f64>, variant: SigmaVariant) -> Self {
        HarnessConfig {
            eps,
            n_paths,
            times,
            variant,
            thresholds: Thresholds::default(),
            grid_steps: 20,
            euler_steps: 1000,
            residual_curves: true,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(LevyxError::InvalidArgument("eps values must be positive".into()));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LevyxError::InvalidArgument("eps list must be strictly decreasing".into()));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(LevyxError::InvalidArgument("times must be positive".into()));
        }
        if self.n_paths < stats::KS_MIN_SAMPLE {
            return Err(LevyxError::InsufficientPaths { got: self.n_paths, need: stats::KS_MIN_SAMPLE });
        }
        if self.grid_steps < 2 {
            return Err(LevyxError::InvalidArgument("grid_steps must be at least 2".into()));
        }
        Ok(())
    }
}

/// Projected number of impulses for `n_paths` paths per ε on `[0, horizon]`.
pub fn projected_draws(q_bar: f64, eps: &[f64], n_paths: usize, horizon: f64) -> f64 {
    eps.iter().map(|e| n_paths as f64 * q_bar * horizon / (e * e)).sum()
}

/// Fails with `BudgetExceeded` when the projected work is over the scenario cap.
pub fn check_budget(lab: &Lab, eps: &[f64], n_paths: usize, horizon: f64) -> Result<f64> {
    let projected = projected_draws(lab.sp.q_bar, eps, n_paths, horizon);
    let cap = lab.scenario.budget();
    if projected > cap {
        return Err(LevyxError::BudgetExceeded { projected, cap });
    }
    Ok(projected)
}

/// One `(ε, t, coordinate)` comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub eps: f64,
    pub time: f64,
    pub coord: usize,
    pub ks: f64,
    pub p_value: f64,
    pub ks_band: f64,
    pub n_prelimit: usize,
    pub n_limit: usize,
    pub mean_prelimit: f64,
    pub mean_prelimit_se: f64,
    pub mean_limit: f64,
    pub mean_gap: f64,
    pub mean_gap_se: f64,
    pub var_prelimit: f64,
    pub var_limit: f64,
    pub var_gap: f64,
    pub var_gap_se: f64,
}

/// Per-ε ensemble bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub eps: f64,
    pub n_paths: usize,
    pub exploded: usize,
    /// `ε² E ν(T) / (q̄ T)`, which tends to 1.
    pub switch_rate_ratio: f64,
    pub big_jump_mean: f64,
    pub big_jump_se: f64,
    /// `λ T` from the limit triplet at `ξ₀`.
    pub big_jump_predicted: f64,
}

/// Tightness diagnostics of one pre-limit ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessDiagnostics {
    pub eps: f64,
    /// `E sup_{t≤T} |ξ(t)|²`.
    pub k_t: f64,
    pub k_t_se: f64,
    pub lags: Vec<f64>,
    pub increment_moments: Vec<f64>,
    pub increment_slope: Option<f64>,
    pub increment_r_squared: Option<f64>,
    pub c_grid: Vec<f64>,
    pub tail_prob: Vec<f64>,
    /// `P(sup |ξ| > 10 k_T^{1/2})`.
    pub ccc_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsDecay {
    pub time: f64,
    pub coord: usize,
    pub ks: Vec<f64>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantPrediction {
    pub variant: SigmaVariant,
    /// Diagonal of σ² at `ξ₀`.
    pub sigma_diag: Vec<f64>,
    pub z: Vec<f64>,
    pub accepted: bool,
}

/// Empirical variance rate against each σ² variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjudication {
    pub eps: f64,
    pub n_paths: usize,
    pub horizon: f64,
    /// `[Var ξ(T) − Var ξ(T/2)] / (T/2)` per coordinate.
    pub rate: Vec<f64>,
    pub rate_se: Vec<f64>,
    /// `Var ξ(T) / T` per coordinate.
    pub raw_rate: Vec<f64>,
    pub raw_rate_se: Vec<f64>,
    pub z_accept: f64,
    pub predictions: Vec<VariantPrediction>,
    pub accepted: Vec<SigmaVariant>,
}

impl Adjudication {
    pub fn prediction(&self, variant: SigmaVariant) -> Option<&VariantPrediction> {
        self.predictions.iter().find(|p| p.variant == variant)
    }

    pub fn accepts(&self, variant: SigmaVariant) -> bool {
        self.accepted.contains(&variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub smallest_eps_ks_max: f64,
    pub smallest_eps_ok: bool,
    pub monotone_ok: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub variant: SigmaVariant,
    pub limit_scheme: String,
    pub n_paths: usize,
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    pub projected_draws: f64,
    pub thresholds: Thresholds,
    pub cells: Vec<Cell>,
    pub ensembles: Vec<EnsembleSummary>,
    pub tightness: Vec<TightnessDiagnostics>,
    pub ks_decay: Vec<KsDecay>,
    pub adjudication: Option<Adjudication>,
    pub residual_curves: Vec<ResidualCurve>,
    pub verdicts: Verdicts,
}

impl ConvergenceReport {
    /// Recomputes the verdicts from the stored cells and thresholds.
    pub fn recompute_verdicts(&self) -> Verdicts {
        verdicts(&self.cells, &self.eps, &self.thresholds)
    }

    pub fn cell(&self, eps: f64, time: f64, coord: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.eps == eps && (c.time - time).abs() <= TIME_TOL && c.coord == coord)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.pass
    }
}

fn verdicts(cells: &[Cell], eps: &[f64], th: &Thresholds) -> Verdicts {
    let last = *eps.last().expect("nonempty eps grid");
    let smallest_eps_ks_max = cells.iter().filter(|c| c.eps == last).map(|c| c.ks).fold(0.0, f64::max);
    let smallest_eps_ok = smallest_eps_ks_max < th.ks;
    let mut monotone_ok = true;
    for w in eps.windows(2) {
        for c in cells.iter().filter(|c| c.eps == w[1]) {
            if let Some(prev) = cells.iter().find(|p| p.eps == w[0] && p.time == c.time && p.coord == c.coord) {
                if c.ks > prev.ks + th.noise_factor * c.ks_band {
                    monotone_ok = false;
                }
            }
        }
    }
    Verdicts { smallest_eps_ks_max, smallest_eps_ok, monotone_ok, pass: smallest_eps_ok && monotone_ok }
}

/// Simulation grid: the uniform diagnostic grid merged with the requested
/// times, plus the indices of the uniform points and of each requested time.
struct Grid {
    times: Vec<f64>,
    uniform: Vec<usize>,
    requested: Vec<usize>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_TOL * a.abs().max(b.abs()).max(1.0)
}

fn build_grid(horizon: f64, steps: usize, extra: &[f64]) -> Grid {
    let uniform = uniform_grid(horizon, steps);
    let mut times = uniform.clone();
    for &t in extra {
        if !times.iter().any(|&g| close(g, t)) {
            times.push(t);
        }
    }
    times.sort_by(f64::total_cmp);
    let index = |t: f64| times.iter().position(|&g| close(g, t)).expect("time is on the grid");
    Grid {
        uniform: uniform.iter().map(|&t| index(t)).collect(),
        requested: extra.iter().map(|&t| index(t)).collect(),
        times,
    }
}

fn subgrid(path: &GridPath, idx: &[usize]) -> GridPath {
    let mut values = Vec::with_capacity(idx.len() * path.dim);
    for &i in idx {
        values.extend_from_slice(path.at(i));
    }
    GridPath { times: idx.iter().map(|&i| path.times[i]).collect(), dim: path.dim, values, sup_sq: path.sup_sq }
}

fn column(paths: &[&GridPath], i: usize, k: usize) -> Vec<f64> {
    paths.iter().map(|p| p.coord(i, k)).collect()
}

/// The limit scheme used for a lab: exact for constant triplets, Euler otherwise.
pub fn limit_scheme(lab: &Lab, horizon: f64, euler_steps: usize) -> LimitScheme {
    let limit = lab.limit(lab.default_variant());
    if limit.is_constant() {
        LimitScheme::Exact
    } else {
        let steps = euler_steps.max(100) as f64 * horizon.max(1.0);
        LimitScheme::Euler(EulerConfig {
            dt: horizon / steps,
            lambda_cap: lab.lambda_cap(),
            u_box: lab.scenario.guards.u_box.as_ref().map(|b| b.iter().map(|r| (r[0], r[1])).collect()),
        })
    }
}

fn scheme_name(s: &LimitScheme) -> &'static str {
    match s {
        LimitScheme::Exact => "exact",
        LimitScheme::Euler(_) => "euler",
    }
}

/// Runs the ε-sweep of the scenario against the chosen limit variant.
pub fn sweep(lab: &Lab, config: &HarnessConfig) -> Result<ConvergenceReport> {
    config.check()?;
    lab.validate(&config.eps)?.ensure_pass()?;
    let horizon = config.horizon();
    let projected = check_budget(lab, &config.eps, config.n_paths, horizon)?;
    let seed = lab.scenario.seed;
    let d = lab.dim();
    let xi0 = lab.xi0();
    let mut extra = config.times.clone();
    extra.push(horizon / 2.0);
    let grid = build_grid(horizon, config.grid_steps, &extra);
    let limit = lab.limit(config.variant);
    let scheme = limit_scheme(lab, horizon, config.euler_steps);
    let limit_point = limit.at(xi0)?;

    let limit_paths =
        simulate_limit_ensemble(&limit, &scheme, xi0, horizon, &grid.times, config.n_paths, seed, StreamDomain::new("limit", 0))?;
    let limit_grid: Vec<&GridPath> = limit_paths.iter().map(|p| &p.grid).collect();

    let lags: Vec<f64> = (1..=config.grid_steps / 2).map(|s| horizon * s as f64 / config.grid_steps as f64).collect();
    let mut cells = Vec::new();
    let mut ensembles = Vec::new();
    let mut tightness = Vec::new();
    let mut adjudication = None;
    let opts = SimOptions { guard: Some(lab.scenario.path_guard()), ..SimOptions::default() };

    for (ei, &eps) in config.eps.iter().enumerate() {
        let paths = simulate_prelimit_ensemble(
            lab.prelimit_setup(),
            eps,
            horizon,
            &grid.times,
            &opts,
            config.n_paths,
            seed,
            StreamDomain::new("prelimit", ei as u64),
        )?;
        let kept: Vec<&GridPath> = paths.iter().filter(|p| !p.exploded).map(|p| &p.grid).collect();
        let exploded = paths.len() - kept.len();
        let last = grid.times.len() - 1;
        let switches: Vec<f64> = paths.iter().map(|p| p.jump_count[last] as f64).collect();
        let bigs = stats::moments(&paths.iter().map(|p| p.big_jumps as f64).collect::<Vec<_>>());
        ensembles.push(EnsembleSummary {
            eps,
            n_paths: paths.len(),
            exploded,
            switch_rate_ratio: stats::mean(&switches) * eps * eps / (lab.sp.q_bar * horizon),
            big_jump_mean: bigs.mean,
            big_jump_se: bigs.mean_se,
            big_jump_predicted: limit_point.lambda * horizon,
        });

        for (&t, &i) in config.times.iter().zip(&grid.requested) {
            for k in 0..d {
                let a = column(&kept, i, k);
                let b = column(&limit_grid, i, k);
                let ks = ks_two_sample(&a, &b)?;
                let ma = stats::moments(&a);
                let mb = stats::moments(&b);
                cells.push(Cell {
                    eps,
                    time: t,
                    coord: k,
                    ks: ks.statistic,
                    p_value: ks.p_value,
                    ks_band: ks_critical_95(a.len(), b.len()),
                    n_prelimit: a.len(),
                    n_limit: b.len(),
                    mean_prelimit: ma.mean,
                    mean_prelimit_se: ma.mean_se,
                    mean_limit: mb.mean,
                    mean_gap: ma.mean - mb.mean,
                    mean_gap_se: ma.mean_se.hypot(mb.mean_se),
                    var_prelimit: ma.var,
                    var_limit: mb.var,
                    var_gap: ma.var - mb.var,
                    var_gap_se: ma.var_se.hypot(mb.var_se),
                });
            }
        }

        let uniform: Vec<GridPath> = kept.iter().map(|p| subgrid(p, &grid.uniform)).collect();
        let refs: Vec<&GridPath> = uniform.iter().collect();
        tightness.push(tightness_diagnostics(eps, &refs, &lags)?);

        if ei + 1 == config.eps.len() && adjudication_applicable(lab) {
            let half = grid.requested[config.times.len()];
            let full = grid.times.len() - 1;
            adjudication = Some(adjudicate_paths(lab, eps, &kept, half, full, horizon, config)?);
        }
    }

    let mut ks_decay = Vec::new();
    for &t in &config.times {
        for k in 0..d {
            let ks: Vec<f64> = config
                .eps
                .iter()
                .map(|&e| cells.iter().find(|c| c.eps == e && c.time == t && c.coord == k).map_or(f64::NAN, |c| c.ks))
                .collect();
            ks_decay.push(KsDecay { time: t, coord: k, slope: loglog_slope(&config.eps, &ks), ks });
        }
    }

    let residual_curves = if config.residual_curves { residual_curves(lab, &config.eps)? } else { Vec::new() };
    let verdicts = verdicts(&cells, &config.eps, &config.thresholds);
    log::info!(
        "sweep {}: KS max at eps={} is {:.4}, monotone {}, pass {}",
        lab.scenario.label(),
        config.eps.last().unwrap(),
        verdicts.smallest_eps_ks_max,
        verdicts.monotone_ok,
        verdicts.pass
    );
    Ok(ConvergenceReport {
        scenario: lab.scenario.label(),
        scenario_hash: lab.scenario.hash(),
        seed,
        variant: config.variant,
        limit_scheme: scheme_name(&scheme).into(),
        n_paths: config.n_paths,
        eps: config.eps.clone(),
        times: config.times.clone(),
        projected_draws: projected,
        thresholds: config.thresholds,
        cells,
        ensembles,
        tightness,
        ks_decay,
        adjudication,
        residual_curves,
        verdicts,
    })
}

/// Residual curves of the quadratic test function `|u|²` for every variant.
pub fn residual_curves(lab: &Lab, eps: &[f64]) -> Result<Vec<ResidualCurve>> {
    let u_grid = linalg::box_grid(&lab.scenario.u_box(), linalg::default_per_axis(lab.dim()));
    let phi = Quadratic::square(lab.dim());
    SigmaVariant::ALL
        .iter()
        .map(|&v| perturbation_residual(&lab.limit(v), &phi, eps, &u_grid))
        .collect()
}

fn tightness_diagnostics(eps: f64, paths: &[&GridPath], lags: &[f64]) -> Result<TightnessDiagnostics> {
    let k_t = stats::mean(&paths.iter().map(|p| p.sup_sq).collect::<Vec<_>>());
    let root = k_t.max(0.0).sqrt();
    let c_grid: Vec<f64> = [1.0, 2.0, 3.0, 5.0, 10.0].iter().map(|m| m * root).collect();
    let s = ensemble_stats(paths, lags, &c_grid)?;
    Ok(TightnessDiagnostics {
        eps,
        k_t: s.k_t,
        k_t_se: s.k_t_se,
        lags: s.lags,
        increment_moments: s.increment_moments,
        increment_slope: s.increment_fit.map(|f| f.slope),
        increment_r_squared: s.increment_fit.map(|f| f.r_squared),
        ccc_tail: *s.tail_prob.last().unwrap_or(&0.0),
        c_grid: s.c_grid,
        tail_prob: s.tail_prob,
    })
}

fn adjudication_applicable(lab: &Lab) -> bool {
    let u_grid = linalg::box_grid(&lab.scenario.u_box(), linalg::default_per_axis(lab.dim()));
    lab.family.sup_lambda0(&u_grid) == 0.0
}

fn rate_estimate(half: &[f64], full: &[f64], horizon: f64) -> f64 {
    let var = |v: &[f64]| stats::moments(v).var;
    (var(full) - var(half)) / (horizon / 2.0)
}

/// Standard error of `Var(b) − Var(a)` from its per-sample influence values.
fn var_difference_se(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let psi: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - mb).powi(2) - (x - ma).powi(2)).collect();
    stats::moments(&psi).mean_se
}

fn z_score(estimate: f64, prediction: f64, se: f64) -> f64 {
    let diff = estimate - prediction;
    let scale = estimate.abs().max(prediction.abs()).max(1.0);
    if diff.abs() <= 1e-12 * scale {
        0.0
    } else {
        diff / se
    }
}

fn adjudicate_paths(
    lab: &Lab,
    eps: f64,
    paths: &[&GridPath],
    half_idx: usize,
    full_idx: usize,
    horizon: f64,
    config: &HarnessConfig,
) -> Result<Adjudication> {
    let d = lab.dim();
    let xi0 = lab.xi0();
    let mut rate = Vec::with_capacity(d);
    let mut rate_se = Vec::with_capacity(d);
    let mut raw_rate = Vec::with_capacity(d);
    let mut raw_rate_se = Vec::with_capacity(d);
    for k in 0..d {
        let half = column(paths, half_idx, k);
        let full = column(paths, full_idx, k);
        rate.push(rate_estimate(&half, &full, horizon));
        rate_se.push(var_difference_se(&half, &full) / (horizon / 2.0));
        let m = stats::moments(&full);
        raw_rate.push(m.var / horizon);
        raw_rate_se.push(m.var_se / horizon);
    }
    let z_accept = config.thresholds.z_accept;
    let mut predictions = Vec::new();
    for &variant in &SigmaVariant::ALL {
        let point = lab.limit(variant).at(xi0)?;
        let sigma_diag: Vec<f64> = (0..d).map(|k| point.sigma[(k, k)]).collect();
        let z: Vec<f64> = (0..d).map(|k| z_score(rate[k], sigma_diag[k], rate_se[k])).collect();
        let accepted = z.iter().all(|z| z.abs() < z_accept);
        predictions.push(VariantPrediction { variant, sigma_diag, z, accepted });
    }
    let accepted = predictions.iter().filter(|p| p.accepted).map(|p| p.variant).collect();
    Ok(Adjudication {
        eps,
        n_paths: paths.len(),
        horizon,
        rate,
        rate_se,
        raw_rate,
        raw_rate_se,
        z_accept,
        predictions,
        accepted,
    })
}

/// Adjudicates the σ² variants from a dedicated pre-limit ensemble.
pub fn adjudicate_sigma(lab: &Lab, eps: f64, n_paths: usize, horizon: f64) -> Result<Adjudication> {
    if !adjudication_applicable(lab) {
        return Err(LevyxError::InvalidArgument("adjudication needs lambda0 = 0 on the u-box".into()));
    }
    let u_grid = linalg::box_grid(&lab.scenario.u_box(), linalg::default_per_axis(lab.dim()));
    let balance = crate::impulse::balance_residual(&lab.family, &lab.sp, &u_grid);
    if balance > crate::impulse::BALANCE_TOL {
        return Err(LevyxError::BalanceViolated { residual: balance });
    }
    let config = HarnessConfig::new(vec![eps], n_paths, vec![horizon], lab.default_variant());
    config.check()?;
    check_budget(lab, &[eps], n_paths, horizon)?;
    let grid = [horizon / 2.0, horizon];
    let opts = SimOptions { guard: Some(lab.scenario.path_guard()), ..SimOptions::default() };
    let paths = simulate_prelimit_ensemble(
        lab.prelimit_setup(),
        eps,
        horizon,
        &grid,
        &opts,
        n_paths,
        lab.scenario.seed,
        StreamDomain::new("adjudicate", 0),
    )?;
    let kept: Vec<&GridPath> = paths.iter().filter(|p| !p.exploded).map(|p| &p.grid).collect();
    adjudicate_paths(lab, eps, &kept, 0, 1, horizon, &config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleCoord {
    pub coord: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    /// `E⟨M⟩(T)` on the diagonal.
    pub mean_qc: f64,
    pub var_gap: f64,
    pub var_gap_se: f64,
    pub mean_ok: bool,
    pub var_ok: bool,
}

/// Per-path decomposition identity and the moment checks of `M(T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleCheck {
    pub eps: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub identity_residual: f64,
    pub coords: Vec<MartingaleCoord>,
    pub pass: bool,
}

/// Identity tolerance of the decomposition.
pub const IDENTITY_TOL: f64 = 1e-12;

pub fn martingale_check(lab: &Lab, eps: f64, n_paths: usize, horizon: f64) -> Result<MartingaleCheck> {
    let grid = [horizon];
    let opts = SimOptions { decompose: true, guard: Some(lab.scenario.path_guard()), ..SimOptions::default() };
    let paths = simulate_prelimit_ensemble(
        lab.prelimit_setup(),
        eps,
        horizon,
        &grid,
        &opts,
        n_paths,
        lab.scenario.seed,
        StreamDomain::new("martingale", 0),
    )?;
    let d = lab.dim();
    let mut identity: f64 = 0.0;
    let mut m_cols = vec![Vec::with_capacity(n_paths); d];
    let mut qc_cols = vec![Vec::with_capacity(n_paths); d];
    for p in paths.iter().filter(|p| !p.exploded) {
        let dec = p.decomposition.as_ref().expect("decomposition requested");
        identity = identity.max(dec.identity_residual(p));
        for k in 0..d {
            m_cols[k].push(dec.martingale_at(0)[k]);
            qc_cols[k].push(dec.qc_at(0)[k * d + k]);
        }
    }
    let coords: Vec<MartingaleCoord> = (0..d)
        .map(|k| {
            let mm = stats::moments(&m_cols[k]);
            let var_gap = mm.var - stats::mean(&qc_cols[k]);
            let psi: Vec<f64> = m_cols[k].iter().zip(&qc_cols[k]).map(|(m, q)| (m - mm.mean).powi(2) - q).collect();
            let var_gap_se = stats::moments(&psi).mean_se;
            MartingaleCoord {
                coord: k,
                mean: mm.mean,
                mean_se: mm.mean_se,
                var: mm.var,
                mean_qc: stats::mean(&qc_cols[k]),
                var_gap,
                var_gap_se,
                mean_ok: mm.mean.abs() <= 3.0 * mm.mean_se || mm.mean.abs() <= IDENTITY_TOL,
                var_ok: var_gap.abs() <= 4.0 * var_gap_se || var_gap.abs() <= IDENTITY_TOL,
            }
        })
        .collect();
    let pass = identity <= IDENTITY_TOL && coords.iter().all(|c| c.mean_ok && c.var_ok);
    Ok(MartingaleCheck { eps, n_paths: m_cols[0].len(), horizon, identity_residual: identity, coords, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestCell {
    pub cell: usize,
    pub eps: f64,
    pub time: f64,
    pub coord: usize,
    pub ks: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub n_paths: usize,
    pub cells: Vec<SelfTestCell>,
    pub fraction_below: f64,
    pub p_threshold: f64,
    pub max_fraction: f64,
    pub pass: bool,
}

/// Compares two independently seeded limit ensembles per cell. Cells are the
/// `(ε, replicate)` pairs; every requested time and coordinate of a cell is
/// tested.
pub fn self_test(lab: &Lab, config: &HarnessConfig, replicates: usize) -> Result<SelfTestReport> {
    config.check()?;
    let horizon = config.horizon();
    let limit = lab.limit(config.variant);
    let scheme = limit_scheme(lab, horizon, config.euler_steps);
    let grid = build_grid(horizon, 1, &config.times);
    let seed = lab.scenario.seed;
    let xi0 = lab.xi0();
    let mut cells = Vec::new();
    let mut id = 0usize;
    for &eps in &config.eps {
        for _ in 0..replicates.max(1) {
            let run = |tag: &str| {
                simulate_limit_ensemble(&limit, &scheme, xi0, horizon, &grid.times, config.n_paths, seed, StreamDomain::new(tag, id as u64))
            };
            let a = run("self-test-a")?;
            let b = run("self-test-b")?;
            let ga: Vec<&GridPath> = a.iter().map(|p| &p.grid).collect();
            let gb: Vec<&GridPath> = b.iter().map(|p| &p.grid).collect();
            for (&t, &i) in config.times.iter().zip(&grid.requested) {
                for k in 0..lab.dim() {
                    let r = ks_two_sample(&column(&ga, i, k), &column(&gb, i, k))?;
                    cells.push(SelfTestCell { cell: id, eps, time: t, coord: k, ks: r.statistic, p_value: r.p_value });
                }
            }
            id += 1;
        }
    }
    let th = &config.thresholds;
    let below = cells.iter().filter(|c| c.p_value < th.self_test_p).count();
    let fraction_below = below as f64 / cells.len() as f64;
    Ok(SelfTestReport {
        n_paths: config.n_paths,
        cells,
        fraction_below,
        p_threshold: th.self_test_p,
        max_fraction: th.self_test_max_fraction,
        pass: fraction_below < th.self_test_max_fraction,
    })
}
