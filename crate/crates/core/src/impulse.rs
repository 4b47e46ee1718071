//! The ε-indexed impulse laws `G^ε_{u,x}`.
//!
//! An impulse drawn at position `u` in switching state `x` is a two-point
//! mixture: with probability `1 − ε²λ₀(u;x)` it is the small jump
//! `εW + ε²b(u;x)`, where `W` has mean `a₁(u;x)` and second moment `c₁(u;x)`;
//! with probability `ε²λ₀(u;x)` it is a big jump `J ~ Ĝ_{u,x}`. All moments of
//! the mixture are available in closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LevyxError, Result};
use crate::linalg::{self, box_grid, psd_sqrt};
use crate::stats::loglog_slope;
use crate::switching::{StationaryPair, SwitchingModel};

/// Which switching state indexes the k-th impulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// State occupied before the jump, `x_{k−1}`.
    #[default]
    Source,
    /// State entered by the jump, `x_k`.
    Destination,
}

impl Convention {
    pub fn impulse_state(self, from: usize, to: usize) -> usize {
        match self {
            Convention::Source => from,
            Convention::Destination => to,
        }
    }
}

/// A coefficient function `(u, x) ↦ R^m` of one of the declared forms.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefFn {
    Const(Vec<f64>),
    Table(Vec<Vec<f64>>),
    /// `clamp(offset[x] + slope[x]·u, lo, hi)` componentwise.
    AffineClipped {
        offset: Vec<Vec<f64>>,
        slope: Vec<DMatrix<f64>>,
        lo: f64,
        hi: f64,
    },
}

impl CoefFn {
    pub fn zero(m: usize) -> Self {
        CoefFn::Const(vec![0.0; m])
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CoefFn::Const(v) => v.len(),
            CoefFn::Table(t) => t.first().map_or(0, Vec::len),
            CoefFn::AffineClipped { offset, .. } => offset.first().map_or(0, Vec::len),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            CoefFn::AffineClipped { slope, .. } => slope.iter().all(|s| s.iter().all(|&v| v == 0.0)),
            _ => true,
        }
    }

    /// `out += scale · f(u; x)`.
    pub fn add_scaled(&self, u: &[f64], x: usize, scale: f64, out: &mut [f64]) {
        match self {
            CoefFn::Const(v) => out.iter_mut().zip(v).for_each(|(o, v)| *o += scale * v),
            CoefFn::Table(t) => out.iter_mut().zip(&t[x]).for_each(|(o, v)| *o += scale * v),
            CoefFn::AffineClipped { offset, slope, lo, hi } => {
                let s = &slope[x];
                for (i, o) in out.iter_mut().enumerate() {
                    let mut v = offset[x][i];
                    for (j, uj) in u.iter().enumerate() {
                        v += s[(i, j)] * uj;
                    }
                    *o += scale * v.clamp(*lo, *hi);
                }
            }
        }
    }

    pub fn eval(&self, u: &[f64], x: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.out_dim());
        self.add_scaled(u, x, 1.0, out.as_mut_slice());
        out
    }

    pub fn scalar(&self, u: &[f64], x: usize) -> f64 {
        let mut out = [0.0];
        self.add_scaled(u, x, 1.0, &mut out);
        out[0]
    }

    fn check(&self, name: &str, m: usize, n_states: usize, d: usize) -> Result<()> {
        let bad = |msg: String| Err(LevyxError::InvalidArgument(format!("{name}: {msg}")));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            CoefFn::Const(v) => {
                if v.len() != m || !finite(v) {
                    return bad(format!("expected {m} finite values"));
                }
            }
            CoefFn::Table(t) => {
                if t.len() != n_states || t.iter().any(|v| v.len() != m || !finite(v)) {
                    return bad(format!("expected {n_states} rows of {m} finite values"));
                }
            }
            CoefFn::AffineClipped { offset, slope, lo, hi } => {
                if offset.len() != n_states || offset.iter().any(|v| v.len() != m || !finite(v)) {
                    return bad(format!("offset must have {n_states} rows of {m} values"));
                }
                if slope.len() != n_states
                    || slope.iter().any(|s| s.nrows() != m || s.ncols() != d || !finite(s.as_slice()))
                {
                    return bad(format!("slope must have {n_states} matrices of shape {m}x{d}"));
                }
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad(format!("clip range [{lo}, {hi}] is not a bounded interval"));
                }
            }
        }
        Ok(())
    }
}

/// A law attached either to every state or to each state separately.
#[derive(Debug, Clone, PartialEq)]
pub enum PerState<T> {
    Const(T),
    Table(Vec<T>),
}

impl<T> PerState<T> {
    pub fn get(&self, x: usize) -> &T {
        match self {
            PerState::Const(v) => v,
            PerState::Table(t) => &t[x],
        }
    }

    fn all(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match self {
            PerState::Const(v) => Box::new(std::iter::once(v)),
            PerState::Table(t) => Box::new(t.iter()),
        }
    }

    fn len_ok(&self, n_states: usize) -> bool {
        match self {
            PerState::Const(_) => true,
            PerState::Table(t) => t.len() == n_states,
        }
    }
}

fn cumulative(weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(LevyxError::InvalidArgument("atom weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut acc = 0.0;
    let cum = normalized
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    Ok((normalized, cum))
}

fn pick<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn add_gaussian<R: Rng + ?Sized>(factor: &DMatrix<f64>, scale: f64, rng: &mut R, out: &mut [f64]) {
    for j in 0..factor.ncols() {
        let z: f64 = StandardNormal.sample(rng);
        for (i, o) in out.iter_mut().enumerate() {
            *o += scale * factor[(i, j)] * z;
        }
    }
}

/// Law of the small-jump variable `W`, stored as the centered part `W − a₁`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmallLaw {
    /// `W = a₁` exactly.
    Deterministic,
    /// `W = a₁ + N(0, cov)`.
    Gaussian { cov: DMatrix<f64>, factor: DMatrix<f64> },
    /// `W = a₁ + D` with `D` on centered atoms.
    Atoms { offsets: Vec<DVector<f64>>, weights: Vec<f64>, cumulative: Vec<f64> },
}

impl SmallLaw {
    pub fn gaussian(cov: DMatrix<f64>) -> Result<Self> {
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(LevyxError::InvalidArgument("small-law covariance must be symmetric".into()));
        }
        let factor = psd_sqrt(&cov).map_err(|_| LevyxError::InvalidArgument("small-law covariance must be PSD".into()))?;
        Ok(SmallLaw::Gaussian { cov, factor })
    }

    pub fn atoms(offsets: Vec<DVector<f64>>, weights: &[f64]) -> Result<Self> {
        if offsets.len() != weights.len() {
            return Err(LevyxError::InvalidArgument("atom offsets and weights differ in length".into()));
        }
        let (weights, cumulative) = cumulative(weights)?;
        let d = offsets[0].len();
        let mut mean = DVector::zeros(d);
        for (o, w) in offsets.iter().zip(&weights) {
            mean += o * *w;
        }
        let scale = offsets.iter().map(|o| o.amax()).fold(1.0, f64::max);
        if mean.amax() > 1e-12 * scale {
            return Err(LevyxError::InvalidArgument(format!(
                "small-law atom offsets must have zero mean (got {:?})",
                mean.as_slice()
            )));
        }
        Ok(SmallLaw::Atoms { offsets, weights, cumulative })
    }

    pub fn covariance(&self, d: usize) -> DMatrix<f64> {
        match self {
            SmallLaw::Deterministic => DMatrix::zeros(d, d),
            SmallLaw::Gaussian { cov, .. } => cov.clone(),
            SmallLaw::Atoms { offsets, weights, .. } => {
                let mut c = DMatrix::zeros(d, d);
                for (o, w) in offsets.iter().zip(weights) {
                    c += o * o.transpose() * *w;
                }
                c
            }
        }
    }

    fn add_noise<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R, out: &mut [f64]) {
        match self {
            SmallLaw::Deterministic => {}
            SmallLaw::Gaussian { factor, .. } => add_gaussian(factor, scale, rng, out),
            SmallLaw::Atoms { offsets, cumulative, .. } => {
                let k = pick(cumulative, rng);
                out.iter_mut().zip(offsets[k].iter()).for_each(|(o, v)| *o += scale * v);
            }
        }
    }

    /// Quadrature (exact for atoms) for expectations over the centered part.
    fn offset_nodes(&self, d: usize) -> Vec<(f64, DVector<f64>)> {
        match self {
            SmallLaw::Deterministic => vec![(1.0, DVector::zeros(d))],
            SmallLaw::Gaussian { factor, .. } => linalg::gaussian_nodes(d)
                .into_iter()
                .map(|(w, z)| (w, factor * z))
                .collect(),
            SmallLaw::Atoms { offsets, weights, .. } => {
                weights.iter().copied().zip(offsets.iter().cloned()).collect()
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            SmallLaw::Deterministic => None,
            SmallLaw::Gaussian { cov, .. } => Some(cov.nrows()),
            SmallLaw::Atoms { offsets, .. } => Some(offsets[0].len()),
        }
    }
}

/// Big-jump law `Ĝ_{u,x}`.
#[derive(Debug, Clone, PartialEq)]
pub enum BigLaw {
    Atoms { values: Vec<DVector<f64>>, weights: Vec<f64>, cumulative: Vec<f64> },
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64>, factor: DMatrix<f64> },
    /// Independent two-sided exponential coordinates: `location + scale·(E₁ − E₂)`.
    Laplace { location: DVector<f64>, scale: DVector<f64> },
}

impl BigLaw {
    pub fn atoms(values: Vec<DVector<f64>>, weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() || values.is_empty() {
            return Err(LevyxError::InvalidArgument("atom values and weights differ in length".into()));
        }
        let (weights, cumulative) = cumulative(weights)?;
        Ok(BigLaw::Atoms { values, weights, cumulative })
    }

    pub fn point(value: DVector<f64>) -> Self {
        BigLaw::Atoms { values: vec![value], weights: vec![1.0], cumulative: vec![1.0] }
    }

    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(LevyxError::InvalidArgument("big-law covariance shape mismatch".into()));
        }
        let factor = psd_sqrt(&cov).map_err(|_| LevyxError::InvalidArgument("big-law covariance must be PSD".into()))?;
        Ok(BigLaw::Gaussian { mean, cov, factor })
    }

    pub fn laplace(location: DVector<f64>, scale: DVector<f64>) -> Result<Self> {
        if location.len() != scale.len() || scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(LevyxError::InvalidArgument("laplace scale must be nonnegative, one per coordinate".into()));
        }
        Ok(BigLaw::Laplace { location, scale })
    }

    pub fn dim(&self) -> usize {
        match self {
            BigLaw::Atoms { values, .. } => values[0].len(),
            BigLaw::Gaussian { mean, .. } => mean.len(),
            BigLaw::Laplace { location, .. } => location.len(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            BigLaw::Atoms { values, weights, .. } => {
                let mut m = DVector::zeros(self.dim());
                for (v, w) in values.iter().zip(weights) {
                    m += v * *w;
                }
                m
            }
            BigLaw::Gaussian { mean, .. } => mean.clone(),
            BigLaw::Laplace { location, .. } => location.clone(),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            BigLaw::Atoms { values, weights, .. } => {
                let m = self.mean();
                let mut c = DMatrix::zeros(m.len(), m.len());
                for (v, w) in values.iter().zip(weights) {
                    let dv = v - &m;
                    c += &dv * dv.transpose() * *w;
                }
                c
            }
            BigLaw::Gaussian { cov, .. } => cov.clone(),
            BigLaw::Laplace { scale, .. } => DMatrix::from_diagonal(&scale.map(|s| 2.0 * s * s)),
        }
    }

    /// `E[J Jᵀ]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let m = self.mean();
        self.covariance() + &m * m.transpose()
    }

    /// `E|J|⁴`.
    pub fn fourth_moment_norm(&self) -> f64 {
        match self {
            BigLaw::Atoms { values, weights, .. } => {
                values.iter().zip(weights).map(|(v, w)| w * v.norm_squared().powi(2)).sum()
            }
            BigLaw::Gaussian { mean, cov, .. } => {
                let tr = cov.trace() + mean.norm_squared();
                tr * tr + 2.0 * (cov * cov).trace() + 4.0 * (mean.transpose() * cov * mean)[(0, 0)]
            }
            BigLaw::Laplace { location, scale } => {
                let m2: Vec<f64> = location.iter().zip(scale.iter()).map(|(m, s)| m * m + 2.0 * s * s).collect();
                let m4: Vec<f64> = location
                    .iter()
                    .zip(scale.iter())
                    .map(|(m, s)| m.powi(4) + 12.0 * m * m * s * s + 24.0 * s.powi(4))
                    .collect();
                let mut total = 0.0;
                for i in 0..m2.len() {
                    for j in 0..m2.len() {
                        total += if i == j { m4[i] } else { m2[i] * m2[j] };
                    }
                }
                total
            }
        }
    }

    /// `∫_{|v|>c} |v|² Ĝ(dv)`: exact for atoms, the bound `E|J|⁴/c²` otherwise.
    pub fn tail_second_moment(&self, c: f64) -> f64 {
        match self {
            BigLaw::Atoms { values, weights, .. } => values
                .iter()
                .zip(weights)
                .filter(|(v, _)| v.norm() > c)
                .fold(0.0, |acc, (v, w)| acc + w * v.norm_squared()),
            _ => self.fourth_moment_norm() / (c * c),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            BigLaw::Atoms { values, cumulative, .. } => {
                let k = pick(cumulative, rng);
                out.copy_from_slice(values[k].as_slice());
            }
            BigLaw::Gaussian { mean, factor, .. } => {
                out.copy_from_slice(mean.as_slice());
                add_gaussian(factor, 1.0, rng, out);
            }
            BigLaw::Laplace { location, scale } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let e1: f64 = Exp1.sample(rng);
                    let e2: f64 = Exp1.sample(rng);
                    *o = location[i] + scale[i] * (e1 - e2);
                }
            }
        }
    }

    /// Short text id used in reports.
    pub fn descriptor(&self) -> String {
        let fmt = |v: &DVector<f64>| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        match self {
            BigLaw::Atoms { values, .. } => format!("atoms{}", values.len()),
            BigLaw::Gaussian { mean, .. } => format!("gaussian[{}]", fmt(mean)),
            BigLaw::Laplace { location, .. } => format!("laplace[{}]", fmt(location)),
        }
    }
}

/// The building blocks of the impulse family.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseComponents {
    pub dim: usize,
    pub a1: CoefFn,
    pub b: CoefFn,
    pub small_law: PerState<SmallLaw>,
    /// Scalar coefficient (output dimension 1), nonnegative.
    pub lambda0: CoefFn,
    pub big_law: PerState<BigLaw>,
}

impl ImpulseComponents {
    /// All-zero components: every impulse vanishes.
    pub fn zero(dim: usize) -> Self {
        ImpulseComponents {
            dim,
            a1: CoefFn::zero(dim),
            b: CoefFn::zero(dim),
            small_law: PerState::Const(SmallLaw::Deterministic),
            lambda0: CoefFn::zero(1),
            big_law: PerState::Const(BigLaw::point(DVector::zeros(dim))),
        }
    }
}

/// Closed-form moments of one impulse.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseMoments {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseFamily {
    components: ImpulseComponents,
    convention: Convention,
    n_states: usize,
}

impl ImpulseFamily {
    pub fn new(components: ImpulseComponents, convention: Convention, n_states: usize) -> Result<Self> {
        let d = components.dim;
        if d == 0 {
            return Err(LevyxError::InvalidArgument("dimension must be positive".into()));
        }
        components.a1.check("a1", d, n_states, d)?;
        components.b.check("b", d, n_states, d)?;
        components.lambda0.check("lambda0", 1, n_states, d)?;
        if let CoefFn::AffineClipped { lo, .. } = &components.lambda0 {
            if *lo < 0.0 {
                return Err(LevyxError::InvalidArgument("lambda0 clip range must be nonnegative".into()));
            }
        }
        let nonneg = match &components.lambda0 {
            CoefFn::Const(v) => v[0] >= 0.0,
            CoefFn::Table(t) => t.iter().all(|v| v[0] >= 0.0),
            CoefFn::AffineClipped { .. } => true,
        };
        if !nonneg {
            return Err(LevyxError::InvalidArgument("lambda0 must be nonnegative".into()));
        }
        if !components.small_law.len_ok(n_states) || !components.big_law.len_ok(n_states) {
            return Err(LevyxError::InvalidArgument(format!("law tables must have {n_states} entries")));
        }
        if components.small_law.all().any(|l| l.dim().is_some_and(|k| k != d)) {
            return Err(LevyxError::InvalidArgument("small law dimension mismatch".into()));
        }
        if components.big_law.all().any(|l| l.dim() != d) {
            return Err(LevyxError::InvalidArgument("big law dimension mismatch".into()));
        }
        Ok(ImpulseFamily { components, convention, n_states })
    }

    pub fn components(&self) -> &ImpulseComponents {
        &self.components
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn with_convention(&self, convention: Convention) -> Self {
        ImpulseFamily { convention, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.components.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// True when no coefficient depends on `u`.
    pub fn is_constant(&self) -> bool {
        let c = &self.components;
        c.a1.is_constant() && c.b.is_constant() && c.lambda0.is_constant()
    }

    pub fn a1(&self, u: &[f64], x: usize) -> DVector<f64> {
        self.components.a1.eval(u, x)
    }

    pub fn b(&self, u: &[f64], x: usize) -> DVector<f64> {
        self.components.b.eval(u, x)
    }

    pub fn lambda0(&self, u: &[f64], x: usize) -> f64 {
        self.components.lambda0.scalar(u, x)
    }

    pub fn small_law(&self, x: usize) -> &SmallLaw {
        self.components.small_law.get(x)
    }

    pub fn big_law(&self, x: usize) -> &BigLaw {
        self.components.big_law.get(x)
    }

    /// `c₁(u;x) = E[W Wᵀ]`.
    pub fn c1(&self, u: &[f64], x: usize) -> DMatrix<f64> {
        let a1 = self.a1(u, x);
        &a1 * a1.transpose() + self.small_law(x).covariance(self.dim())
    }

    /// `a(u;x) = b + λ₀ m_J`, the ε² coefficient of the mean.
    pub fn a(&self, u: &[f64], x: usize) -> DVector<f64> {
        self.b(u, x) + self.a0(u, x)
    }

    /// `a₀(u;x) = λ₀ m_J`, the mean carried by big jumps.
    pub fn a0(&self, u: &[f64], x: usize) -> DVector<f64> {
        self.big_law(x).mean() * self.lambda0(u, x)
    }

    /// `c(u;x) = c₁ + λ₀ s_J`, the ε² coefficient of the second moment.
    pub fn c(&self, u: &[f64], x: usize) -> DMatrix<f64> {
        self.c1(u, x) + self.big_law(x).second_moment() * self.lambda0(u, x)
    }

    /// Big-jump probability `ε²λ₀(u;x)`.
    pub fn mixture_weight(&self, eps: f64, u: &[f64], x: usize) -> Result<f64> {
        let weight = eps * eps * self.lambda0(u, x);
        if weight > 1.0 {
            return Err(LevyxError::EpsTooLarge { eps, weight });
        }
        Ok(weight)
    }

    /// Draws an impulse into `out`; returns whether it was a big jump.
    pub fn sample_impulse_into<R: Rng + ?Sized>(
        &self,
        eps: f64,
        u: &[f64],
        x: usize,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<bool> {
        let p = self.mixture_weight(eps, u, x)?;
        if p > 0.0 && rng.random::<f64>() < p {
            self.big_law(x).sample_into(rng, out);
            return Ok(true);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let c = &self.components;
        c.a1.add_scaled(u, x, eps, out);
        self.small_law(x).add_noise(eps, rng, out);
        c.b.add_scaled(u, x, eps * eps, out);
        Ok(false)
    }

    pub fn sample_impulse<R: Rng + ?Sized>(&self, eps: f64, u: &[f64], x: usize, rng: &mut R) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.sample_impulse_into(eps, u, x, rng, out.as_mut_slice())?;
        Ok(out)
    }

    /// Mean and small-jump covariance of the small branch `εW + ε²b`.
    fn small_branch(&self, eps: f64, u: &[f64], x: usize) -> (DVector<f64>, DMatrix<f64>) {
        let mean = self.a1(u, x) * eps + self.b(u, x) * (eps * eps);
        let cov = self.small_law(x).covariance(self.dim()) * (eps * eps);
        (mean, cov)
    }

    pub fn moments(&self, eps: f64, u: &[f64], x: usize) -> Result<ImpulseMoments> {
        let p = self.mixture_weight(eps, u, x)?;
        let (ms, cs) = self.small_branch(eps, u, x);
        let (mean, covariance) = if p == 0.0 {
            (ms, cs)
        } else {
            let big = self.big_law(x);
            let mj = big.mean();
            let diff = &ms - &mj;
            let mean = &ms * (1.0 - p) + &mj * p;
            let cov = cs * (1.0 - p) + big.covariance() * p + &diff * diff.transpose() * (p * (1.0 - p));
            (mean, cov)
        };
        let second = &covariance + &mean * mean.transpose();
        Ok(ImpulseMoments { mean, second, covariance })
    }

    /// `a^ε(u;x)`, the exact mean of one impulse.
    pub fn mean_eps(&self, eps: f64, u: &[f64], x: usize) -> Result<DVector<f64>> {
        let p = self.mixture_weight(eps, u, x)?;
        let (ms, _) = self.small_branch(eps, u, x);
        Ok(ms * (1.0 - p) + self.big_law(x).mean() * p)
    }

    /// `c^ε(u;x)`, the exact second moment of one impulse, expanded as
    /// `(1 − p)(ε²c₁ + ε³(a₁bᵀ + b a₁ᵀ) + ε⁴bbᵀ) + p s_J`.
    pub fn second_moment_eps(&self, eps: f64, u: &[f64], x: usize) -> Result<DMatrix<f64>> {
        let p = self.mixture_weight(eps, u, x)?;
        let a1 = self.a1(u, x);
        let b = self.b(u, x);
        let cross = &a1 * b.transpose() + &b * a1.transpose();
        let small = self.c1(u, x) * eps.powi(2) + cross * eps.powi(3) + &b * b.transpose() * eps.powi(4);
        Ok(small * (1.0 - p) + self.big_law(x).second_moment() * p)
    }

    /// `(1 − ε²λ₀) E g(εW + ε²b)`, the small-branch part of `∫ g dG^ε`.
    pub fn small_branch_expectation(&self, eps: f64, u: &[f64], x: usize, g: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        let p = self.mixture_weight(eps, u, x)?;
        let (center, _) = self.small_branch(eps, u, x);
        let total: f64 = self
            .small_law(x)
            .offset_nodes(self.dim())
            .into_iter()
            .map(|(w, off)| {
                let v = &center + off * eps;
                w * g(v.as_slice())
            })
            .sum();
        Ok((1.0 - p) * total)
    }

    /// Largest `λ₀` over a grid of `u` values and all states.
    pub fn sup_lambda0(&self, u_grid: &[Vec<f64>]) -> f64 {
        let mut sup: f64 = 0.0;
        for u in u_grid {
            for x in 0..self.n_states {
                sup = sup.max(self.lambda0(u, x));
            }
        }
        sup
    }
}

/// Default member of the bounded test-function class: `|v|³ / (1 + |v|³)`.
pub fn default_test_fn(v: &[f64]) -> f64 {
    let r3 = linalg::norm(v).powi(3);
    r3 / (1.0 + r3)
}

/// Smallest log-log slope accepted as evidence that a residual curve vanishes.
pub const MIN_DECAY_SLOPE: f64 = 0.9;
/// A residual curve whose values stay below `NEGLIGIBLE · scale` passes outright.
pub const NEGLIGIBLE: f64 = 1e-3;
/// Tolerance on the balance functional, relative to `max(1, sup|a₁|)`.
pub const BALANCE_TOL: f64 = 1e-10;

/// Whether a residual curve decays: either negligible everywhere or with
/// fitted log-log slope at least [`MIN_DECAY_SLOPE`].
pub fn curve_decays(eps: &[f64], residual: &[f64], floor: f64) -> bool {
    if residual.iter().all(|&r| r <= floor) {
        return true;
    }
    loglog_slope(eps, residual).is_some_and(|s| s >= MIN_DECAY_SLOPE)
}

/// One row of the condition checklist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Numerical residuals of the approximation conditions on a `(u, x)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub eps_grid: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub theta_g: Vec<f64>,
    pub theta_a_slope: Option<f64>,
    pub theta_c_slope: Option<f64>,
    pub theta_g_slope: Option<f64>,
    pub balance_residual: f64,
    pub scale: f64,
    pub tail_c_grid: Vec<f64>,
    pub tail_second_moment: Vec<f64>,
    pub growth_constant: f64,
    pub max_mixture_weight: f64,
    pub checks: Vec<ConditionCheck>,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// First failing condition as an error.
    pub fn ensure_pass(&self) -> Result<()> {
        match self.checks.iter().find(|c| !c.pass) {
            None => Ok(()),
            Some(c) if c.name == "L4" => Err(LevyxError::BalanceViolated { residual: self.balance_residual }),
            Some(c) => Err(LevyxError::ConditionViolated { condition: c.name.clone(), detail: c.detail.clone() }),
        }
    }
}

/// `sup_u |Σ_x ρ(x) a₁(u;x)|` over a grid.
pub fn balance_residual(family: &ImpulseFamily, sp: &StationaryPair, u_grid: &[Vec<f64>]) -> f64 {
    let mut sup: f64 = 0.0;
    for u in u_grid {
        let mut acc = DVector::zeros(family.dim());
        for x in 0..family.n_states() {
            acc += family.a1(u, x) * sp.rho[x];
        }
        sup = sup.max(acc.amax());
    }
    sup
}

/// Evaluates the mean, second-moment and Poisson approximation residuals, the
/// balance functional, tail square-integrability and linear growth.
pub fn validate_conditions(
    family: &ImpulseFamily,
    model: &SwitchingModel,
    sp: &StationaryPair,
    u_box: &[(f64, f64)],
    eps_grid: &[f64],
    g: &dyn Fn(&[f64]) -> f64,
) -> Result<ResidualReport> {
    let d = family.dim();
    if u_box.len() != d || u_box.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(LevyxError::InvalidArgument("u_box must be a bounded box of the process dimension".into()));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| e.is_nan() || e <= 0.0) || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LevyxError::InvalidArgument("eps grid must be positive and strictly decreasing".into()));
    }
    if model.n_states() != family.n_states() {
        return Err(LevyxError::MismatchedFamily("family and model disagree on the number of states".into()));
    }
    let n = model.n_states();
    let grid = box_grid(u_box, linalg::default_per_axis(d));

    let mut scale: f64 = 1.0;
    let mut sup_a1: f64 = 0.0;
    let mut growth: f64 = 0.0;
    for u in &grid {
        let un = linalg::norm(u);
        for x in 0..n {
            let a1 = family.a1(u, x);
            let a = family.a(u, x);
            let c = family.c(u, x);
            sup_a1 = sup_a1.max(a1.amax());
            scale = scale.max(a1.amax()).max(a.amax()).max(c.amax());
            growth = growth.max(a.norm() / (1.0 + un)).max(c.norm() / (1.0 + un * un));
        }
    }

    let mut theta_a = Vec::with_capacity(eps_grid.len());
    let mut theta_c = Vec::with_capacity(eps_grid.len());
    let mut theta_g = Vec::with_capacity(eps_grid.len());
    let mut mixture_ok = true;
    let mut max_weight: f64 = 0.0;
    for &eps in eps_grid {
        let (mut ta, mut tc, mut tg): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for u in &grid {
            for x in 0..n {
                let weight = eps * eps * family.lambda0(u, x);
                max_weight = max_weight.max(weight);
                if weight > 1.0 {
                    mixture_ok = false;
                    continue;
                }
                let e2 = eps * eps;
                let mean = family.mean_eps(eps, u, x)?;
                let expected = family.a1(u, x) * eps + family.a(u, x) * e2;
                ta = ta.max(((mean - expected) / e2).amax());
                let second = family.second_moment_eps(eps, u, x)?;
                tc = tc.max((second / e2 - family.c(u, x)).amax());
                // Big-jump contributions cancel exactly against λ₀∫g dĜ.
                tg = tg.max((family.small_branch_expectation(eps, u, x, g)? / e2).abs());
            }
        }
        theta_a.push(ta);
        theta_c.push(tc);
        theta_g.push(tg);
    }

    let balance = balance_residual(family, sp, &grid);
    let balance_tol = BALANCE_TOL * sup_a1.max(1.0);

    let jump_scale = (0..n)
        .map(|x| family.big_law(x).second_moment().trace())
        .fold(1.0, f64::max);
    let c0 = jump_scale.sqrt();
    let tail_c_grid: Vec<f64> = [1.0, 10.0, 100.0, 1000.0].iter().map(|k| k * c0).collect();
    let tail: Vec<f64> = tail_c_grid
        .iter()
        .map(|&c| (0..n).map(|x| family.big_law(x).tail_second_moment(c)).fold(0.0, f64::max))
        .collect();
    let tail_ok = tail.windows(2).all(|w| w[1] <= w[0] + 1e-300) && *tail.last().unwrap() <= NEGLIGIBLE * jump_scale;

    let floor = NEGLIGIBLE * scale;
    let slope = |r: &[f64]| loglog_slope(eps_grid, r);
    let fmt_curve = |r: &[f64]| r.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ");
    let describe = |r: &[f64]| match slope(r) {
        Some(s) => format!("[{}], log-log slope {s:.3}", fmt_curve(r)),
        None => format!("[{}]", fmt_curve(r)),
    };

    let checks = vec![
        ConditionCheck {
            name: "C1".into(),
            pass: true,
            detail: format!("{n}-state switching chain is irreducible; q_bar = {}", sp.q_bar),
        },
        ConditionCheck {
            name: "L2".into(),
            pass: curve_decays(eps_grid, &theta_a, floor) && curve_decays(eps_grid, &theta_c, floor),
            detail: format!("theta_a {}; theta_c {}", describe(&theta_a), describe(&theta_c)),
        },
        ConditionCheck {
            name: "L3".into(),
            pass: mixture_ok && curve_decays(eps_grid, &theta_g, floor),
            detail: if mixture_ok {
                format!("theta_g {}", describe(&theta_g))
            } else {
                format!("mixture weight eps^2*lambda0 reaches {max_weight} > 1")
            },
        },
        ConditionCheck {
            name: "L4".into(),
            pass: balance <= balance_tol,
            detail: format!("sup_u |sum_x rho(x) a1(u;x)| = {balance:e}"),
        },
        ConditionCheck {
            name: "C3".into(),
            pass: tail_ok,
            detail: format!("tail second moments at c = [{}]: [{}]", fmt_curve(&tail_c_grid), fmt_curve(&tail)),
        },
        ConditionCheck {
            name: "C4".into(),
            pass: growth.is_finite(),
            detail: format!("linear growth constant L = {growth:.4e} on the u-box"),
        },
    ];

    Ok(ResidualReport {
        eps_grid: eps_grid.to_vec(),
        theta_a_slope: slope(&theta_a),
        theta_c_slope: slope(&theta_c),
        theta_g_slope: slope(&theta_g),
        theta_a,
        theta_c,
        theta_g,
        balance_residual: balance,
        scale,
        tail_c_grid,
        tail_second_moment: tail,
        growth_constant: growth,
        max_mixture_weight: max_weight,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_stream, StreamDomain};
    use crate::switching::stationary;

    fn swap() -> SwitchingModel {
        SwitchingModel::from_rows(vec![1.0, 1.0], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn alternating(a1: [f64; 2]) -> ImpulseFamily {
        let mut c = ImpulseComponents::zero(1);
        c.a1 = CoefFn::Table(vec![vec![a1[0]], vec![a1[1]]]);
        ImpulseFamily::new(c, Convention::Source, 2).unwrap()
    }

    fn big_only(lambda0: f64, atom: f64) -> ImpulseFamily {
        let mut c = ImpulseComponents::zero(1);
        c.lambda0 = CoefFn::Const(vec![lambda0]);
        c.big_law = PerState::Const(BigLaw::point(DVector::from_vec(vec![atom])));
        ImpulseFamily::new(c, Convention::Source, 2).unwrap()
    }

    #[test]
    fn deterministic_small_jump() {
        let f = alternating([1.0, -1.0]);
        let mut rng = path_stream(0, StreamDomain::new("imp", 0), 0);
        for _ in 0..10 {
            assert_eq!(f.sample_impulse(0.1, &[3.0], 1, &mut rng).unwrap()[0], -0.1);
        }
        assert_eq!(f.mean_eps(0.1, &[0.0], 0).unwrap()[0], 0.1);
    }

    #[test]
    fn zero_family_moments() {
        let f = ImpulseFamily::new(ImpulseComponents::zero(2), Convention::Source, 2).unwrap();
        let m = f.moments(0.3, &[1.0, 2.0], 0).unwrap();
        assert_eq!(m.mean.amax(), 0.0);
        assert_eq!(m.second.amax(), 0.0);
    }

    #[test]
    fn mixture_weight_is_guarded() {
        let f = big_only(200.0, 1.0);
        assert!(matches!(f.mixture_weight(0.1, &[0.0], 0), Err(LevyxError::EpsTooLarge { .. })));
        assert!(f.mixture_weight(0.05, &[0.0], 0).is_ok());
    }

    #[test]
    fn big_jump_frequency() {
        // Binomial oracle: p = eps^2 lambda0 = 0.005.
        let f = big_only(0.5, 1.0);
        let mut rng = path_stream(5, StreamDomain::new("imp", 1), 0);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| f.sample_impulse(0.1, &[0.0], 0, &mut rng).unwrap()[0] == 1.0)
            .count();
        let p = 0.005;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn mean_expansion_residual_shrinks_linearly() {
        let mut c = ImpulseComponents::zero(1);
        c.a1 = CoefFn::Const(vec![0.7]);
        c.b = CoefFn::Const(vec![-0.4]);
        c.lambda0 = CoefFn::Const(vec![1.5]);
        c.big_law = PerState::Const(BigLaw::gaussian(DVector::from_vec(vec![2.0]), DMatrix::from_element(1, 1, 0.5)).unwrap());
        c.small_law = PerState::Const(SmallLaw::gaussian(DMatrix::from_element(1, 1, 0.3)).unwrap());
        let f = ImpulseFamily::new(c, Convention::Source, 1).unwrap();
        let eps = [0.4, 0.2, 0.1, 0.05];
        // Symbolic expansion: mean − εa₁ − ε²a = −ε³λ₀a₁ − ε⁴λ₀b, an O(ε³) gap.
        let resid: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let m = f.mean_eps(e, &[0.0], 0).unwrap()[0];
                let r = m - e * 0.7 - e * e * (-0.4 + 1.5 * 2.0);
                let expected = -e.powi(3) * 1.5 * 0.7 - e.powi(4) * 1.5 * -0.4;
                assert!((r - expected).abs() < 1e-15);
                r.abs()
            })
            .collect();
        assert!(loglog_slope(&eps, &resid).unwrap() >= 2.8);
    }

    #[test]
    fn balance_examples() {
        let m = swap();
        let sp = stationary(&m).unwrap();
        let eps = [0.4, 0.2, 0.1, 0.05];
        let ok = validate_conditions(&alternating([1.0, -1.0]), &m, &sp, &[(-1.0, 1.0)], &eps, &default_test_fn).unwrap();
        assert_eq!(ok.balance_residual, 0.0);
        assert!(ok.passed(), "{:?}", ok.checks);
        let bad = validate_conditions(&alternating([1.0, -0.5]), &m, &sp, &[(-1.0, 1.0)], &eps, &default_test_fn).unwrap();
        assert_eq!(bad.balance_residual, 0.25);
        assert!(!bad.check("L4").unwrap().pass);
        assert!(matches!(bad.ensure_pass(), Err(LevyxError::BalanceViolated { residual }) if residual == 0.25));
    }

    #[test]
    fn theta_g_is_order_eps_for_gaussian_small_law() {
        let mut c = ImpulseComponents::zero(1);
        c.small_law = PerState::Const(SmallLaw::gaussian(DMatrix::from_element(1, 1, 1.0)).unwrap());
        let f = ImpulseFamily::new(c, Convention::Source, 2).unwrap();
        let m = swap();
        let sp = stationary(&m).unwrap();
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let r = validate_conditions(&f, &m, &sp, &[(0.0, 0.0)], &eps, &default_test_fn).unwrap();
        // Oracle: E|εZ|³ = ε³·2√(2/π); g ≤ |v|³ so θ_g ≤ ε·2√(2/π).
        let abs3 = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        for (e, t) in eps.iter().zip(&r.theta_g) {
            assert!(*t <= e * abs3 * (1.0 + 1e-6), "{t} vs {}", e * abs3);
            assert!(*t >= 0.5 * e * abs3 * (1.0 - e.powi(3) * 10.0));
        }
        assert!(r.theta_g_slope.unwrap() > 0.9);
    }

    #[test]
    fn atoms_must_be_centered() {
        let offs = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-0.5])];
        assert!(SmallLaw::atoms(offs.clone(), &[1.0, 1.0]).is_err());
        assert!(SmallLaw::atoms(offs, &[1.0, 2.0]).is_ok());
    }

    #[test]
    fn big_law_moments() {
        let lap = BigLaw::laplace(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.5])).unwrap();
        assert_eq!(lap.second_moment()[(0, 0)], 1.5);
        // E v⁴ for Laplace(1, 0.5): 1 + 12·0.25 + 24·0.0625.
        assert!((lap.fourth_moment_norm() - 5.5).abs() < 1e-12);
        let g = BigLaw::gaussian(DVector::from_vec(vec![0.0]), DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((g.fourth_moment_norm() - 12.0).abs() < 1e-12);
        let atoms = BigLaw::atoms(vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![3.0])], &[1.0, 1.0]).unwrap();
        assert_eq!(atoms.tail_second_moment(2.0), 4.5);
        assert_eq!(atoms.tail_second_moment(5.0), 0.0);
    }

    #[test]
    fn affine_clipped_coefficients() {
        let f = CoefFn::AffineClipped {
            offset: vec![vec![0.5]],
            slope: vec![DMatrix::from_element(1, 1, 1.0)],
            lo: -1.0,
            hi: 1.0,
        };
        assert_eq!(f.scalar(&[0.25], 0), 0.75);
        assert_eq!(f.scalar(&[3.0], 0), 1.0);
        assert_eq!(f.scalar(&[-9.0], 0), -1.0);
        assert!(!f.is_constant());
    }
}
