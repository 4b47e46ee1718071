//! Finite-state switching Markov process: generator, stationary laws,
//! potential operator and path sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{LevyxError, Result};

/// Row-sum tolerance for the embedded transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Residual tolerance for stationary vectors.
pub const VECTOR_TOL: f64 = 1e-10;
/// Residual tolerance for the potential-operator identities.
pub const MATRIX_TOL: f64 = 1e-9;
/// Condition number above which the potential operator is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Jump intensities `q(x)` and embedded transition matrix `P` of an
/// irreducible finite-state jump Markov process.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingModel {
    q: DVector<f64>,
    p: DMatrix<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl SwitchingModel {
    pub fn new(q: Vec<f64>, p: DMatrix<f64>) -> Result<Self> {
        let n = q.len();
        if n == 0 {
            return Err(LevyxError::InvalidModel("no states".into()));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(LevyxError::InvalidModel(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        for (i, &qi) in q.iter().enumerate() {
            if !(qi.is_finite() && qi > 0.0) {
                return Err(LevyxError::InvalidModel(format!("q[{i}] = {qi} is not a positive rate")));
            }
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let pij = p[(i, j)];
                if !(pij.is_finite() && pij >= 0.0) {
                    return Err(LevyxError::InvalidModel(format!("P[{i}][{j}] = {pij} is not a probability")));
                }
                sum += pij;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(LevyxError::InvalidModel(format!("row {i} of P sums to {sum}")));
            }
        }
        if !strongly_connected(&p) {
            return Err(LevyxError::InvalidModel("P is reducible (transition graph not strongly connected)".into()));
        }
        let cumulative = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                (0..n)
                    .map(|j| {
                        acc += p[(i, j)];
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(SwitchingModel { q: DVector::from_vec(q), p, cumulative })
    }

    pub fn from_rows(q: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(LevyxError::InvalidModel("P is not square".into()));
        }
        let p = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(q, p)
    }

    pub fn n_states(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn rate(&self, x: usize) -> f64 {
        self.q[x]
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Draws the successor of `x` from row `P(x, ·)`.
    pub fn next_state<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let row = &self.cumulative[x];
        let u: f64 = rng.random::<f64>() * row[row.len() - 1];
        let k = row.partition_point(|&c| c <= u);
        // Zero-probability trailing entries can leave k at n.
        let mut k = k.min(row.len() - 1);
        while self.p[(x, k)] == 0.0 && k > 0 {
            k -= 1;
        }
        k
    }
}

fn strongly_connected(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// `Q = diag(q)(P − I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix(DMatrix<f64>);

impl GeneratorMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_generator(model: &SwitchingModel) -> GeneratorMatrix {
    let n = model.n_states();
    GeneratorMatrix(DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        model.q[i] * (model.p[(i, j)] - delta)
    }))
}

/// Stationary law `pi` of the continuous-time process, `rho` of the embedded
/// chain, and the mean jump rate `q_bar = (Σ rho/q)^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPair {
    pub pi: DVector<f64>,
    pub rho: DVector<f64>,
    pub q_bar: f64,
}

impl StationaryPair {
    /// `max_x |pi(x) q(x) − q_bar rho(x)|`.
    pub fn identity_residual(&self, model: &SwitchingModel) -> f64 {
        (0..model.n_states())
            .map(|x| (self.pi[x] * model.q[x] - self.q_bar * self.rho[x]).abs())
            .fold(0.0, f64::max)
    }

    /// `‖rho P − rho‖∞`.
    pub fn embedded_residual(&self, model: &SwitchingModel) -> f64 {
        let lhs = model.p.tr_mul(&self.rho);
        (lhs - &self.rho).amax()
    }

    /// `‖pi Q‖∞`.
    pub fn generator_residual(&self, model: &SwitchingModel) -> f64 {
        let q = build_generator(model);
        q.matrix().tr_mul(&self.pi).amax()
    }
}

/// Solves `rho P = rho` by replacing one equation of `(Pᵀ − I) rho = 0` with
/// the normalization, then sets `pi ∝ rho / q`.
pub fn stationary(model: &SwitchingModel) -> Result<StationaryPair> {
    let n = model.n_states();
    let mut a = model.p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let rho = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LevyxError::SingularSolve("embedded stationary system is singular".into()))?;
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(LevyxError::SingularSolve("embedded stationary solution is not finite".into()));
    }
    let inv_q_bar: f64 = rho.iter().zip(model.q.iter()).map(|(r, q)| r / q).sum();
    let q_bar = 1.0 / inv_q_bar;
    let pi = DVector::from_fn(n, |x, _| q_bar * rho[x] / model.q[x]);
    let pair = StationaryPair { pi, rho, q_bar };
    let residual = pair.embedded_residual(model);
    if residual > 1e3 * VECTOR_TOL {
        return Err(LevyxError::SingularSolve(format!(
            "embedded stationary residual {residual:e} (rank-deficient system)"
        )));
    }
    Ok(pair)
}

/// Potential operator `R0 = (Π − Q)^-1 − Π` and the stationary projector `Π`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOperator {
    pub r0: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    /// 2-norm condition number of `Π − Q`.
    pub condition: f64,
}

impl PotentialOperator {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }

    /// `R0 f` for a matrix of column functions over states (n × k).
    pub fn apply(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r0 * f
    }

    /// `max(‖R0 Q − (Π − I)‖∞, ‖Q R0 − (Π − I)‖∞)`.
    pub fn poisson_residual(&self, model: &SwitchingModel) -> f64 {
        let q = build_generator(model);
        let n = model.n_states();
        let target = &self.projector - DMatrix::identity(n, n);
        let left = (&self.r0 * q.matrix() - &target).amax();
        let right = (q.matrix() * &self.r0 - &target).amax();
        left.max(right)
    }

    /// `max(‖Π R0‖∞, ‖R0 Π‖∞)`.
    pub fn projection_residual(&self) -> f64 {
        (&self.projector * &self.r0).amax().max((&self.r0 * &self.projector).amax())
    }
}

pub fn potential(model: &SwitchingModel, sp: &StationaryPair) -> Result<PotentialOperator> {
    let n = model.n_states();
    let projector = DMatrix::from_fn(n, n, |_, j| sp.pi[j]);
    let q = build_generator(model);
    let m = &projector - q.matrix();
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let inv = m
        .lu()
        .try_inverse()
        .ok_or_else(|| LevyxError::SingularSolve("Π − Q is singular".into()))?;
    let r0 = inv - &projector;
    if condition > ILL_CONDITIONED {
        log::warn!("potential operator is ill-conditioned: cond(Π − Q) = {condition:e}");
    }
    Ok(PotentialOperator { r0, projector, condition })
}

/// Jump epochs and visited states of one switching trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPath {
    /// `τ_0 = 0 < τ_1 < …`.
    pub jump_times: Vec<f64>,
    /// `states[k]` is occupied on `[τ_k, τ_{k+1})`.
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl SwitchPath {
    /// `ν(t)`: number of jumps in `(0, t]`.
    pub fn count_at(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&tau| tau <= t).saturating_sub(1)
    }

    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.count_at(t)]
    }

    /// Time spent in each state up to the horizon.
    pub fn occupation(&self, n_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (k, &x) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k + 1).copied().unwrap_or(self.horizon);
            occ[x] += end - self.jump_times[k];
        }
        occ
    }
}

/// Exponential sojourn in `x` when the clock runs `speed` times faster.
pub(crate) fn sojourn<R: Rng + ?Sized>(model: &SwitchingModel, x: usize, speed: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / (model.q[x] * speed)
}

pub fn sample_switch_path<R: Rng + ?Sized>(
    model: &SwitchingModel,
    x0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<SwitchPath> {
    if x0 >= model.n_states() {
        return Err(LevyxError::InvalidArgument(format!("initial state {x0} out of range")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(LevyxError::InvalidArgument(format!("horizon {horizon} must be finite and nonnegative")));
    }
    let mut jump_times = vec![0.0];
    let mut states = vec![x0];
    let mut t = 0.0;
    let mut x = x0;
    loop {
        t += sojourn(model, x, 1.0, rng);
        if t > horizon {
            break;
        }
        x = model.next_state(x, rng);
        jump_times.push(t);
        states.push(x);
    }
    Ok(SwitchPath { jump_times, states, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_stream, StreamDomain};

    fn swap(q: [f64; 2]) -> SwitchingModel {
        SwitchingModel::from_rows(q.to_vec(), &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn generator_by_substitution() {
        let g = build_generator(&swap([1.0, 1.0]));
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let g = build_generator(&swap([1.0, 2.0]));
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]));
    }

    #[test]
    fn reducible_and_malformed_models_are_rejected() {
        let err = SwitchingModel::from_rows(vec![1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, LevyxError::InvalidModel(ref m) if m.contains("reducible")));
        assert!(SwitchingModel::from_rows(vec![1.0, 0.0], &[vec![0.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(SwitchingModel::from_rows(vec![1.0, 1.0], &[vec![0.0, 0.9], vec![1.0, 0.0]]).is_err());
        assert!(SwitchingModel::from_rows(vec![1.0, 1.0], &[vec![-0.1, 1.1], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn stationary_examples() {
        let sp = stationary(&swap([1.0, 1.0])).unwrap();
        assert!((sp.pi[0] - 0.5).abs() < 1e-15 && (sp.rho[0] - 0.5).abs() < 1e-15);
        assert!((sp.q_bar - 1.0).abs() < 1e-15);

        let m = swap([1.0, 2.0]);
        let sp = stationary(&m).unwrap();
        assert!((sp.rho[0] - 0.5).abs() < 1e-14 && (sp.rho[1] - 0.5).abs() < 1e-14);
        assert!((sp.pi[0] - 2.0 / 3.0).abs() < 1e-14 && (sp.pi[1] - 1.0 / 3.0).abs() < 1e-14);
        assert!((sp.q_bar - 4.0 / 3.0).abs() < 1e-14);
        assert!(sp.generator_residual(&m) < VECTOR_TOL);

        let iid = SwitchingModel::from_rows(vec![1.0, 1.0], &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let sp = stationary(&iid).unwrap();
        assert!((sp.pi[1] - 0.5).abs() < 1e-15 && (sp.q_bar - 1.0).abs() < 1e-15);
    }

    #[test]
    fn potential_examples() {
        let m = swap([1.0, 1.0]);
        let sp = stationary(&m).unwrap();
        let pot = potential(&m, &sp).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((&pot.r0 - expected).amax() < 1e-14);
        assert!(pot.poisson_residual(&m) < MATRIX_TOL);

        let iid = SwitchingModel::from_rows(vec![1.0, 1.0], &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let sp = stationary(&iid).unwrap();
        let pot = potential(&iid, &sp).unwrap();
        let expected = DMatrix::identity(2, 2) - &pot.projector;
        assert!((&pot.r0 - expected).amax() < 1e-14);
        assert!(pot.projection_residual() < MATRIX_TOL);
        assert!(!pot.ill_conditioned());
    }

    #[test]
    fn zero_horizon_path() {
        let mut rng = path_stream(1, StreamDomain::new("t", 0), 0);
        let path = sample_switch_path(&swap([1.0, 1.0]), 1, 0.0, &mut rng).unwrap();
        assert_eq!(path.jump_times, vec![0.0]);
        assert_eq!(path.states, vec![1]);
        assert_eq!(path.count_at(0.0), 0);
    }

    #[test]
    fn sampled_path_structure() {
        let m = swap([1.0, 3.0]);
        let mut rng = path_stream(2, StreamDomain::new("t", 1), 0);
        let path = sample_switch_path(&m, 0, 50.0, &mut rng).unwrap();
        assert!(path.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(path.states.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(path.count_at(50.0), path.jump_times.len() - 1);
        let occ: f64 = path.occupation(2).iter().sum();
        assert!((occ - 50.0).abs() < 1e-9);
    }

    #[test]
    fn next_state_skips_zero_entries() {
        let m = SwitchingModel::from_rows(
            vec![1.0; 3],
            &[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
        )
        .unwrap();
        let mut rng = path_stream(3, StreamDomain::new("t", 2), 0);
        for _ in 0..1000 {
            assert_eq!(m.next_state(0, &mut rng), 1);
            assert_eq!(m.next_state(2, &mut rng), 0);
        }
    }
}
