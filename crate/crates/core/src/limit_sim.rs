//! Sampling the limit process: exact in constant-coefficient mode, Euler with
//! thinned jumps when the characteristics depend on `u`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{LevyxError, Result};
use crate::limit_model::{LimitModel, LimitPoint, LimitTriplet};
use crate::prelimit::GridPath;
use crate::rng::{path_stream, StreamDomain};

/// One limit trajectory on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPath {
    /// `sup_sq` is taken over grid times and jump epochs.
    pub grid: GridPath,
    pub jump_epochs: Vec<f64>,
    /// Jumps in `(0, t]` at each grid time.
    pub jump_count: Vec<u64>,
}

fn check_grid(xi0: &[f64], d: usize, horizon: f64, grid: &[f64]) -> Result<()> {
    if xi0.len() != d {
        return Err(LevyxError::InvalidArgument(format!("xi0 has {} components, expected {d}", xi0.len())));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(LevyxError::InvalidArgument(format!("horizon {horizon} must be finite and nonnegative")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(LevyxError::InvalidArgument("grid must be sorted inside [0, horizon]".into()));
    }
    Ok(())
}

fn add_gaussian<R: Rng + ?Sized>(factor: &DMatrix<f64>, scale: f64, rng: &mut R, out: &mut [f64]) {
    for j in 0..factor.ncols() {
        let z: f64 = StandardNormal.sample(rng);
        for (i, o) in out.iter_mut().enumerate() {
            *o += scale * factor[(i, j)] * z;
        }
    }
}

fn exp_time<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Exact sampling of the constant-coefficient limit: each grid step adds a
/// Gaussian increment `N(βΔ, ΣΔ)` and the compound-Poisson jumps falling in it.
pub fn simulate_limit_exact<R: Rng + ?Sized>(
    triplet: &LimitTriplet,
    xi0: &[f64],
    horizon: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<LimitPath> {
    if !triplet.constant {
        return Err(LevyxError::NonConstantTriplet);
    }
    let point = triplet.at_origin();
    let factor = point.sigma_sqrt()?;
    simulate_point_exact(point, &factor, xi0, horizon, grid, rng)
}

fn simulate_point_exact<R: Rng + ?Sized>(
    point: &LimitPoint,
    factor: &DMatrix<f64>,
    xi0: &[f64],
    horizon: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<LimitPath> {
    let d = point.dim();
    check_grid(xi0, d, horizon, grid)?;
    let mut xi = xi0.to_vec();
    let mut t = 0.0;
    let mut sup_sq = norm_sq(&xi);
    let mut values = Vec::with_capacity(grid.len() * d);
    let mut counts = Vec::with_capacity(grid.len());
    let mut epochs = Vec::new();
    let mut jump = vec![0.0; d];
    let mut next_jump = if point.lambda > 0.0 { exp_time(rng, point.lambda) } else { f64::INFINITY };

    for &g in grid {
        let dt = g - t;
        if dt > 0.0 {
            for (v, b) in xi.iter_mut().zip(point.beta.iter()) {
                *v += b * dt;
            }
            add_gaussian(factor, dt.sqrt(), rng, &mut xi);
            while next_jump <= g {
                point.jump_law.sample_into(rng, &mut jump);
                xi.iter_mut().zip(&jump).for_each(|(v, j)| *v += j);
                sup_sq = sup_sq.max(norm_sq(&xi));
                epochs.push(next_jump);
                next_jump += exp_time(rng, point.lambda);
            }
            t = g;
        }
        sup_sq = sup_sq.max(norm_sq(&xi));
        values.extend_from_slice(&xi);
        counts.push(epochs.len() as u64);
    }
    Ok(LimitPath { grid: GridPath { times: grid.to_vec(), dim: d, values, sup_sq }, jump_epochs: epochs, jump_count: counts })
}

/// Settings of the Euler scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerConfig {
    pub dt: f64,
    /// Dominating jump intensity for thinning.
    pub lambda_cap: f64,
    /// Box on which `λ ≤ lambda_cap` is certified; leaving it is an error.
    pub u_box: Option<Vec<(f64, f64)>>,
}

/// Euler–Maruyama for the state-dependent limit, with jumps by thinning
/// against `lambda_cap`. Steps are shortened to land on every grid time.
pub fn simulate_limit_euler<R: Rng + ?Sized>(
    limit: &LimitModel,
    xi0: &[f64],
    horizon: f64,
    grid: &[f64],
    config: &EulerConfig,
    rng: &mut R,
) -> Result<LimitPath> {
    let d = limit.dim();
    check_grid(xi0, d, horizon, grid)?;
    let dt = config.dt;
    if !(dt > 0.0 && dt <= 1e-2 * horizon.max(f64::MIN_POSITIVE)) {
        return Err(LevyxError::InvalidArgument(format!("dt = {dt} must be positive and at most 1e-2 * horizon")));
    }
    if !(config.lambda_cap >= 0.0 && config.lambda_cap.is_finite()) {
        return Err(LevyxError::InvalidArgument("lambda cap must be finite and nonnegative".into()));
    }
    let cap = config.lambda_cap;
    let constant = limit.is_constant().then(|| -> Result<(LimitPoint, DMatrix<f64>)> {
        let p = limit.at(&vec![0.0; d])?;
        let f = p.sigma_sqrt()?;
        Ok((p, f))
    });
    let constant = constant.transpose()?;

    let mut xi = xi0.to_vec();
    let mut t = 0.0;
    let mut sup_sq = norm_sq(&xi);
    let mut values = Vec::with_capacity(grid.len() * d);
    let mut counts = Vec::with_capacity(grid.len());
    let mut epochs = Vec::new();
    let mut jump = vec![0.0; d];
    let mut candidate = if cap > 0.0 { exp_time(rng, cap) } else { f64::INFINITY };
    let mut owned: Option<(LimitPoint, DMatrix<f64>)>;

    let check_box = |u: &[f64], lambda: f64| -> Result<()> {
        if let Some(b) = &config.u_box {
            if u.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi) {
                return Err(LevyxError::CapExceeded { lambda, cap, u: u.to_vec() });
            }
        }
        Ok(())
    };

    for &g in grid {
        while t < g {
            let step = dt.min(g - t);
            let (point, factor) = match &constant {
                Some(pf) => (&pf.0, &pf.1),
                None => {
                    let p = limit.at(&xi)?;
                    let f = p.sigma_sqrt()?;
                    owned = Some((p, f));
                    let o = owned.as_ref().unwrap();
                    (&o.0, &o.1)
                }
            };
            if point.lambda > cap * (1.0 + 1e-12) {
                return Err(LevyxError::CapExceeded { lambda: point.lambda, cap, u: xi.clone() });
            }
            check_box(&xi, point.lambda)?;
            for (v, b) in xi.iter_mut().zip(point.beta.iter()) {
                *v += b * step;
            }
            add_gaussian(factor, step.sqrt(), rng, &mut xi);
            while candidate <= t + step {
                if point.lambda > 0.0 && rng.random::<f64>() * cap < point.lambda {
                    point.jump_law.sample_into(rng, &mut jump);
                    xi.iter_mut().zip(&jump).for_each(|(v, j)| *v += j);
                    epochs.push(candidate);
                }
                candidate += exp_time(rng, cap);
            }
            if !xi.iter().all(|v| v.is_finite()) {
                return Err(LevyxError::InvalidArgument(format!("Euler path diverged at t = {t}")));
            }
            sup_sq = sup_sq.max(norm_sq(&xi));
            t = if step == g - t { g } else { t + step };
        }
        values.extend_from_slice(&xi);
        counts.push(epochs.len() as u64);
    }
    Ok(LimitPath { grid: GridPath { times: grid.to_vec(), dim: d, values, sup_sq }, jump_epochs: epochs, jump_count: counts })
}

/// Sampling scheme for a limit ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitScheme {
    Exact,
    Euler(EulerConfig),
}

/// `n_paths` independent limit paths; path `i` uses stream `(seed, domain, i)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_limit_ensemble(
    limit: &LimitModel,
    scheme: &LimitScheme,
    xi0: &[f64],
    horizon: f64,
    grid: &[f64],
    n_paths: usize,
    seed: u64,
    domain: StreamDomain,
) -> Result<Vec<LimitPath>> {
    match scheme {
        LimitScheme::Exact => {
            if !limit.is_constant() {
                return Err(LevyxError::NonConstantTriplet);
            }
            let point = limit.at(&vec![0.0; limit.dim()])?;
            let factor = point.sigma_sqrt()?;
            (0..n_paths as u64)
                .into_par_iter()
                .map(|id| {
                    let mut rng = path_stream(seed, domain, id);
                    simulate_point_exact(&point, &factor, xi0, horizon, grid, &mut rng)
                })
                .collect()
        }
        LimitScheme::Euler(config) => (0..n_paths as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = path_stream(seed, domain, id);
                simulate_limit_euler(limit, xi0, horizon, grid, config, &mut rng)
            })
            .collect(),
    }
}

/// Mean of the limit started at `xi0` under a constant triplet, `ξ₀ + (β + λ m)t`.
pub fn constant_mean(point: &LimitPoint, xi0: &[f64], t: f64) -> DVector<f64> {
    let d = point.dim();
    let mut drift = point.beta.clone();
    if point.lambda > 0.0 {
        drift += point.jump_law.mean(d) * point.lambda;
    }
    DVector::from_column_slice(xi0) + drift * t
}
