//! Simulation of the impulsive process `ξ^ε` and its semimartingale split.
//!
//! The switching clock runs at speed `ε⁻²` (sojourns with rate `q(x)/ε²`); at
//! each switch an impulse drawn from `G^ε` at the current position is added.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LevyxError, Result};
use crate::impulse::ImpulseFamily;
use crate::linalg;
use crate::rng::{path_stream, StreamDomain};
use crate::stats::{self, LinearFit};
use crate::switching::{sojourn, SwitchPath, SwitchingModel};

/// Minimum ensemble size for [`ensemble_stats`].
pub const MIN_ENSEMBLE: usize = 100;

/// `steps + 1` equally spaced times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    if steps == 0 {
        return vec![0.0];
    }
    (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect()
}

pub fn default_guard(xi0: &[f64]) -> f64 {
    1e6 * (1.0 + linalg::norm(xi0))
}

/// Values of one trajectory on a time grid (row-major, `times.len() × dim`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPath {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
    /// `sup_{t ≤ horizon} |ξ(t)|²`, exact over all jump epochs when available.
    pub sup_sq: f64,
}

impl GridPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coord(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.dim + k]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    pub record_jumps: bool,
    pub decompose: bool,
    /// Divergence bound on `|ξ|`; defaults to [`default_guard`].
    pub guard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpRecord {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub xi_before: Vec<f64>,
    pub impulse: Vec<f64>,
    pub big: bool,
}

/// `ξ = ξ₀ + B + M` on the grid, with the quadratic characteristic of `M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemimartingaleDecomp {
    pub times: Vec<f64>,
    pub dim: usize,
    /// Predictable drift: cumulative conditional impulse means.
    pub drift: Vec<f64>,
    /// Martingale part: cumulative centered impulses.
    pub martingale: Vec<f64>,
    /// `⟨M⟩`: cumulative conditional covariances, `times.len() × dim × dim`.
    pub qc: Vec<f64>,
    /// `⟨M⟩` increments per unit time between consecutive grid points.
    pub zeta: Vec<f64>,
}

impl SemimartingaleDecomp {
    pub fn drift_at(&self, i: usize) -> &[f64] {
        &self.drift[i * self.dim..(i + 1) * self.dim]
    }

    pub fn martingale_at(&self, i: usize) -> &[f64] {
        &self.martingale[i * self.dim..(i + 1) * self.dim]
    }

    pub fn qc_at(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.qc[i * dd..(i + 1) * dd]
    }

    /// `max_t |ξ(t) − ξ₀ − B(t) − M(t)|` against the recorded path.
    pub fn identity_residual(&self, path: &PrelimitPath) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.times.len() {
            for k in 0..self.dim {
                let r = path.grid.coord(i, k) - path.xi0[k] - self.drift_at(i)[k] - self.martingale_at(i)[k];
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    fn from_accumulated(times: &[f64], dim: usize, drift: Vec<f64>, martingale: Vec<f64>, qc: Vec<f64>) -> Self {
        let dd = dim * dim;
        let mut zeta = Vec::with_capacity(times.len().saturating_sub(1) * dd);
        for i in 1..times.len() {
            let dt = times[i] - times[i - 1];
            for k in 0..dd {
                let inc = qc[i * dd + k] - qc[(i - 1) * dd + k];
                zeta.push(if dt > 0.0 { inc / dt } else { 0.0 });
            }
        }
        SemimartingaleDecomp { times: times.to_vec(), dim, drift, martingale, qc, zeta }
    }
}

/// One simulated pre-limit trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PrelimitPath {
    pub eps: f64,
    pub xi0: Vec<f64>,
    pub x0: usize,
    pub grid: GridPath,
    /// Switching state at each grid time.
    pub states: Vec<usize>,
    /// `ν(t/ε²)` at each grid time.
    pub jump_count: Vec<u64>,
    pub big_jumps: u64,
    pub exploded: bool,
    pub jumps: Option<Vec<JumpRecord>>,
    pub decomposition: Option<SemimartingaleDecomp>,
}

impl PrelimitPath {
    /// The switching trajectory on the accelerated clock, when jumps were recorded.
    pub fn switch_path(&self) -> Option<SwitchPath> {
        let jumps = self.jumps.as_ref()?;
        let mut jump_times = vec![0.0];
        let mut states = vec![self.x0];
        for j in jumps {
            jump_times.push(j.time);
            states.push(j.to);
        }
        let horizon = self.grid.times.last().copied().unwrap_or(0.0);
        Some(SwitchPath { jump_times, states, horizon })
    }

    pub fn total_jumps(&self) -> u64 {
        self.jump_count.last().copied().unwrap_or(0)
    }
}

struct Accumulators {
    drift: Vec<f64>,
    martingale: Vec<f64>,
    qc: Vec<f64>,
    grid_drift: Vec<f64>,
    grid_martingale: Vec<f64>,
    grid_qc: Vec<f64>,
}

impl Accumulators {
    fn new(d: usize, n: usize) -> Self {
        Accumulators {
            drift: vec![0.0; d],
            martingale: vec![0.0; d],
            qc: vec![0.0; d * d],
            grid_drift: Vec::with_capacity(n * d),
            grid_martingale: Vec::with_capacity(n * d),
            grid_qc: Vec::with_capacity(n * d * d),
        }
    }

    fn add(&mut self, mean: &DVector<f64>, cov: &nalgebra::DMatrix<f64>, impulse: &[f64]) {
        let d = self.drift.len();
        for k in 0..d {
            self.drift[k] += mean[k];
            self.martingale[k] += impulse[k] - mean[k];
            for l in 0..d {
                self.qc[k * d + l] += cov[(k, l)];
            }
        }
    }

    fn snapshot(&mut self) {
        self.grid_drift.extend_from_slice(&self.drift);
        self.grid_martingale.extend_from_slice(&self.martingale);
        self.grid_qc.extend_from_slice(&self.qc);
    }
}

fn check_inputs(model: &SwitchingModel, family: &ImpulseFamily, eps: f64, xi0: &[f64], x0: usize, horizon: f64, grid: &[f64]) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LevyxError::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    if model.n_states() != family.n_states() {
        return Err(LevyxError::MismatchedFamily("family and model disagree on the number of states".into()));
    }
    if xi0.len() != family.dim() {
        return Err(LevyxError::InvalidArgument(format!("xi0 has {} components, expected {}", xi0.len(), family.dim())));
    }
    if x0 >= model.n_states() {
        return Err(LevyxError::InvalidArgument(format!("initial state {x0} out of range")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(LevyxError::InvalidArgument(format!("horizon {horizon} must be finite and nonnegative")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(LevyxError::InvalidArgument("grid must be sorted inside [0, horizon]".into()));
    }
    Ok(())
}

/// Simulates one path of `ξ^ε` on `[0, horizon]`, recording it at `grid`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_prelimit<R: Rng + ?Sized>(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    eps: f64,
    xi0: &[f64],
    x0: usize,
    horizon: f64,
    grid: &[f64],
    opts: &SimOptions,
    rng: &mut R,
) -> Result<PrelimitPath> {
    check_inputs(model, family, eps, xi0, x0, horizon, grid)?;
    let d = family.dim();
    let convention = family.convention();
    let speed = 1.0 / (eps * eps);
    let guard = opts.guard.unwrap_or_else(|| default_guard(xi0));

    let mut xi = xi0.to_vec();
    let mut x = x0;
    let mut t = 0.0;
    let mut count = 0u64;
    let mut big_jumps = 0u64;
    let mut sup_sq = xi.iter().map(|v| v * v).sum::<f64>();
    let mut exploded = false;

    let mut values = Vec::with_capacity(grid.len() * d);
    let mut states = Vec::with_capacity(grid.len());
    let mut counts = Vec::with_capacity(grid.len());
    let mut acc = opts.decompose.then(|| Accumulators::new(d, grid.len()));
    let mut jumps = opts.record_jumps.then(Vec::new);
    let mut impulse = vec![0.0; d];
    let mut g = 0;

    loop {
        let next = t + sojourn(model, x, speed, rng);
        while g < grid.len() && (grid[g] < next || exploded) {
            values.extend_from_slice(&xi);
            states.push(x);
            counts.push(count);
            if let Some(a) = acc.as_mut() {
                a.snapshot();
            }
            g += 1;
        }
        if next > horizon || exploded {
            break;
        }
        let y = model.next_state(x, rng);
        let s = convention.impulse_state(x, y);
        let moments = match acc {
            Some(_) => Some(family.moments(eps, &xi, s)?),
            None => None,
        };
        let is_big = family.sample_impulse_into(eps, &xi, s, rng, &mut impulse)?;
        if let (Some(a), Some(m)) = (acc.as_mut(), moments.as_ref()) {
            a.add(&m.mean, &m.covariance, &impulse);
        }
        if let Some(j) = jumps.as_mut() {
            j.push(JumpRecord { time: next, from: x, to: y, xi_before: xi.clone(), impulse: impulse.clone(), big: is_big });
        }
        for (v, z) in xi.iter_mut().zip(&impulse) {
            *v += z;
        }
        count += 1;
        big_jumps += u64::from(is_big);
        let norm_sq: f64 = xi.iter().map(|v| v * v).sum();
        sup_sq = sup_sq.max(norm_sq);
        x = y;
        t = next;
        if !(norm_sq.is_finite() && norm_sq.sqrt() <= guard) {
            exploded = true;
        }
    }

    let decomposition = acc.map(|a| SemimartingaleDecomp::from_accumulated(grid, d, a.grid_drift, a.grid_martingale, a.grid_qc));
    Ok(PrelimitPath {
        eps,
        xi0: xi0.to_vec(),
        x0,
        grid: GridPath { times: grid.to_vec(), dim: d, values, sup_sq },
        states,
        jump_count: counts,
        big_jumps,
        exploded,
        jumps,
        decomposition,
    })
}

/// Recomputes the semimartingale decomposition of a path from its jump log.
pub fn decompose(path: &PrelimitPath, family: &ImpulseFamily, eps: f64) -> Result<SemimartingaleDecomp> {
    let jumps = path
        .jumps
        .as_ref()
        .ok_or_else(|| LevyxError::InvalidArgument("path was simulated without a jump log".into()))?;
    if eps != path.eps {
        return Err(LevyxError::MismatchedFamily(format!("path simulated at eps = {}, asked for {eps}", path.eps)));
    }
    let d = family.dim();
    if d != path.grid.dim {
        return Err(LevyxError::MismatchedFamily("dimension differs from the path".into()));
    }
    let times = &path.grid.times;
    let mut acc = Accumulators::new(d, times.len());
    let mut next_jump = 0;
    for &t in times {
        while next_jump < jumps.len() && jumps[next_jump].time <= t {
            let j = &jumps[next_jump];
            let s = family.convention().impulse_state(j.from, j.to);
            if s >= family.n_states() {
                return Err(LevyxError::MismatchedFamily(format!("state {s} unknown to the family")));
            }
            let m = family
                .moments(eps, &j.xi_before, s)
                .map_err(|e| LevyxError::MismatchedFamily(format!("moments unavailable at a visited point: {e}")))?;
            acc.add(&m.mean, &m.covariance, &j.impulse);
            next_jump += 1;
        }
        acc.snapshot();
    }
    Ok(SemimartingaleDecomp::from_accumulated(times, d, acc.grid_drift, acc.grid_martingale, acc.grid_qc))
}

/// Fixed inputs of a pre-limit ensemble.
#[derive(Debug, Clone, Copy)]
pub struct PrelimitSetup<'a> {
    pub model: &'a SwitchingModel,
    pub family: &'a ImpulseFamily,
    pub xi0: &'a [f64],
    pub x0: usize,
}

/// Simulates `n_paths` independent paths; path `i` uses stream `(seed, domain, i)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_prelimit_ensemble(
    setup: PrelimitSetup<'_>,
    eps: f64,
    horizon: f64,
    grid: &[f64],
    opts: &SimOptions,
    n_paths: usize,
    seed: u64,
    domain: StreamDomain,
) -> Result<Vec<PrelimitPath>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = path_stream(seed, domain, id);
            simulate_prelimit(setup.model, setup.family, eps, setup.xi0, setup.x0, horizon, grid, opts, &mut rng)
        })
        .collect()
}

/// Ensemble moments and the tightness diagnostics: `E sup|ξ|²`, the
/// increment-moment fit and the compact-containment tail curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsembleStats {
    pub n_paths: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    /// `times.len() × dim`, row-major, for each of the four arrays below.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub var_se: Vec<f64>,
    /// Fitted `k_T = E sup_{t≤T} |ξ(t)|²`.
    pub k_t: f64,
    pub k_t_se: f64,
    pub lags: Vec<f64>,
    /// `E|ξ(t+h) − ξ(t)|²` for each lag `h`.
    pub increment_moments: Vec<f64>,
    pub increment_fit: Option<LinearFit>,
    pub c_grid: Vec<f64>,
    /// `P(sup_{t≤T} |ξ(t)| > c)`.
    pub tail_prob: Vec<f64>,
}

pub fn ensemble_stats(paths: &[&GridPath], lags: &[f64], c_grid: &[f64]) -> Result<PathEnsembleStats> {
    if paths.len() < MIN_ENSEMBLE {
        return Err(LevyxError::InsufficientPaths { got: paths.len(), need: MIN_ENSEMBLE });
    }
    let first = paths[0];
    let (nt, d) = (first.len(), first.dim);
    if paths.iter().any(|p| p.len() != nt || p.dim != d) {
        return Err(LevyxError::InvalidArgument("paths must share a grid".into()));
    }
    let mut mean = Vec::with_capacity(nt * d);
    let mut var = Vec::with_capacity(nt * d);
    let mut mean_se = Vec::with_capacity(nt * d);
    let mut var_se = Vec::with_capacity(nt * d);
    let mut column = vec![0.0; paths.len()];
    for i in 0..nt {
        for k in 0..d {
            for (c, p) in column.iter_mut().zip(paths) {
                *c = p.coord(i, k);
            }
            let m = stats::moments(&column);
            mean.push(m.mean);
            var.push(m.var);
            mean_se.push(m.mean_se);
            var_se.push(m.var_se);
        }
    }

    let sups: Vec<f64> = paths.iter().map(|p| p.sup_sq).collect();
    let sup_m = stats::moments(&sups);

    let dt = if nt > 1 { (first.times[nt - 1] - first.times[0]) / (nt - 1) as f64 } else { 0.0 };
    let mut lag_times = Vec::new();
    let mut increment_moments = Vec::new();
    if dt > 0.0 {
        let mut steps: Vec<usize> = lags.iter().map(|&h| (h / dt).round().max(1.0) as usize).filter(|&s| s < nt).collect();
        steps.dedup();
        for s in steps {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for p in paths {
                for i in 0..nt - s {
                    total += p.at(i + s).iter().zip(p.at(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    pairs += 1;
                }
            }
            lag_times.push(first.times[s] - first.times[0]);
            increment_moments.push(total / pairs as f64);
        }
    }
    let increment_fit = stats::linear_fit(&lag_times, &increment_moments);

    let mut c_sorted = c_grid.to_vec();
    c_sorted.sort_by(f64::total_cmp);
    let tail_prob = c_sorted
        .iter()
        .map(|&c| sups.iter().filter(|&&s| s > c * c).count() as f64 / paths.len() as f64)
        .collect();

    Ok(PathEnsembleStats {
        n_paths: paths.len(),
        dim: d,
        times: first.times.clone(),
        mean,
        var,
        mean_se,
        var_se,
        k_t: sup_m.mean,
        k_t_se: sup_m.mean_se,
        lags: lag_times,
        increment_moments,
        increment_fit,
        c_grid: c_sorted,
        tail_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impulse::{CoefFn, Convention, ImpulseComponents, PerState, SmallLaw};
    use nalgebra::DMatrix;

    fn swap(q: [f64; 2]) -> SwitchingModel {
        SwitchingModel::from_rows(q.to_vec(), &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn alt2() -> ImpulseFamily {
        let mut c = ImpulseComponents::zero(1);
        c.a1 = CoefFn::Table(vec![vec![1.0], vec![-1.0]]);
        ImpulseFamily::new(c, Convention::Source, 2).unwrap()
    }

    fn rng(i: u64) -> crate::rng::PathRng {
        path_stream(99, StreamDomain::new("prelimit-test", 0), i)
    }

    #[test]
    fn zero_family_is_constant() {
        let f = ImpulseFamily::new(ImpulseComponents::zero(2), Convention::Source, 2).unwrap();
        let grid = uniform_grid(1.0, 10);
        let p = simulate_prelimit(&swap([1.0, 1.0]), &f, 0.2, &[1.0, -2.0], 0, 1.0, &grid, &SimOptions::default(), &mut rng(0)).unwrap();
        for i in 0..grid.len() {
            assert_eq!(p.grid.at(i), &[1.0, -2.0]);
        }
        assert!(p.total_jumps() > 0);
        assert!(p.jump_count.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn alternating_path_stays_on_two_points() {
        let grid = uniform_grid(1.0, 50);
        let opts = SimOptions { record_jumps: true, ..Default::default() };
        for i in 0..20 {
            let p = simulate_prelimit(&swap([1.0, 1.0]), &alt2(), 0.1, &[0.0], 0, 1.0, &grid, &opts, &mut rng(i)).unwrap();
            for j in p.jumps.as_ref().unwrap() {
                let after = j.xi_before[0] + j.impulse[0];
                assert!(after == 0.0 || after == 0.1, "{after}");
            }
            // Parity of the jump count determines the position.
            for (k, &c) in p.jump_count.iter().enumerate() {
                let expected = if c % 2 == 1 { 0.1 } else { 0.0 };
                assert_eq!(p.grid.coord(k, 0), expected);
            }
        }
    }

    #[test]
    fn decomposition_identity_and_offline_agreement() {
        let mut c = ImpulseComponents::zero(1);
        c.a1 = CoefFn::Table(vec![vec![0.5], vec![-0.5]]);
        c.b = CoefFn::Const(vec![0.3]);
        c.small_law = PerState::Const(SmallLaw::gaussian(DMatrix::from_element(1, 1, 0.4)).unwrap());
        c.lambda0 = CoefFn::Const(vec![0.8]);
        c.big_law = PerState::Const(crate::impulse::BigLaw::point(DVector::from_vec(vec![1.0])));
        let f = ImpulseFamily::new(c, Convention::Destination, 2).unwrap();
        let grid = uniform_grid(1.0, 20);
        let opts = SimOptions { record_jumps: true, decompose: true, guard: None };
        let p = simulate_prelimit(&swap([1.0, 2.0]), &f, 0.1, &[0.2], 1, 1.0, &grid, &opts, &mut rng(3)).unwrap();
        let online = p.decomposition.as_ref().unwrap();
        assert!(online.identity_residual(&p) < 1e-12);
        let offline = decompose(&p, &f, 0.1).unwrap();
        assert!(offline.identity_residual(&p) < 1e-12);
        for (a, b) in online.drift.iter().zip(&offline.drift) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(online.qc.windows(2).all(|w| w[1] >= w[0]));
        assert!(online.zeta.iter().all(|&z| z >= 0.0));
        assert!(matches!(decompose(&p, &f, 0.2), Err(LevyxError::MismatchedFamily(_))));
    }

    #[test]
    fn deterministic_impulses_have_zero_martingale() {
        let grid = uniform_grid(1.0, 10);
        let opts = SimOptions { decompose: true, ..Default::default() };
        let p = simulate_prelimit(&swap([1.0, 1.0]), &alt2(), 0.1, &[0.0], 0, 1.0, &grid, &opts, &mut rng(7)).unwrap();
        let dec = p.decomposition.unwrap();
        assert!(dec.martingale.iter().all(|&m| m == 0.0));
        assert!(dec.qc.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn switch_path_from_jump_log() {
        let grid = uniform_grid(0.5, 5);
        let opts = SimOptions { record_jumps: true, ..Default::default() };
        let p = simulate_prelimit(&swap([1.0, 1.0]), &alt2(), 0.2, &[0.0], 1, 0.5, &grid, &opts, &mut rng(1)).unwrap();
        let sp = p.switch_path().unwrap();
        for (k, &t) in grid.iter().enumerate() {
            assert_eq!(sp.state_at(t), p.states[k]);
            assert_eq!(sp.count_at(t) as u64, p.jump_count[k]);
        }
    }

    #[test]
    fn guard_flags_divergent_paths() {
        let mut c = ImpulseComponents::zero(1);
        c.b = CoefFn::Const(vec![1.0]);
        let f = ImpulseFamily::new(c, Convention::Source, 2).unwrap();
        let grid = uniform_grid(1.0, 4);
        let opts = SimOptions { guard: Some(0.5), ..Default::default() };
        let p = simulate_prelimit(&swap([1.0, 1.0]), &f, 0.1, &[0.0], 0, 1.0, &grid, &opts, &mut rng(2)).unwrap();
        assert!(p.exploded);
        assert_eq!(p.grid.len(), grid.len());
    }

    #[test]
    fn ensemble_stats_of_constant_paths() {
        let f = ImpulseFamily::new(ImpulseComponents::zero(1), Convention::Source, 2).unwrap();
        let setup = PrelimitSetup { model: &swap([1.0, 1.0]), family: &f, xi0: &[2.0], x0: 0 };
        let grid = uniform_grid(1.0, 10);
        let paths = simulate_prelimit_ensemble(setup, 0.3, 1.0, &grid, &SimOptions::default(), 150, 1, StreamDomain::new("e", 0)).unwrap();
        let refs: Vec<&GridPath> = paths.iter().map(|p| &p.grid).collect();
        let s = ensemble_stats(&refs, &[0.1, 0.2, 0.5], &[1.0, 2.5, 5.0]).unwrap();
        assert_eq!(s.k_t, 4.0);
        assert!(s.increment_moments.iter().all(|&m| m == 0.0));
        assert_eq!(s.increment_fit.unwrap().slope, 0.0);
        assert_eq!(s.tail_prob, vec![1.0, 0.0, 0.0]);
        assert!(matches!(ensemble_stats(&refs[..50], &[], &[]), Err(LevyxError::InsufficientPaths { .. })));
    }
}
