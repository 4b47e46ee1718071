//! Limit characteristics and the two generators.
//!
//! The limit is the jump-diffusion with generator
//! `Lφ(u) = β(u)·∇φ + ½ tr(Σ(u)∇²φ) + λ(u) ∫ [φ(u+v) − φ(u)] G⁰_u(dv)`.
//! The pre-limit generator acts on `φ^ε = φ + εφ₁ + ε²φ₂`, and the gap between
//! the two on a `(u, x)` grid is the perturbation residual.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LevyxError, Result};
use crate::impulse::{BigLaw, Convention, ImpulseFamily, BALANCE_TOL};
use crate::linalg::{self, psd_sqrt, repair_psd, symmetrize};
use crate::stats::loglog_slope;
use crate::switching::{PotentialOperator, StationaryPair, SwitchingModel};

/// Which formula for the diffusion matrix is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaVariant {
    /// `2 Σ π(x) sym(ã₁(x) (R₀ã₁)(x)ᵀ)` with `ã₁ = q a₁`.
    PaperLiteral,
    /// Small-jump second moment plus the cross term through `P R₀`.
    FullSource,
    /// The same derivation with impulses indexed by the entered state.
    FullDestination,
}

impl SigmaVariant {
    pub const ALL: [SigmaVariant; 3] = [SigmaVariant::PaperLiteral, SigmaVariant::FullSource, SigmaVariant::FullDestination];

    pub fn as_str(self) -> &'static str {
        match self {
            SigmaVariant::PaperLiteral => "paper_literal",
            SigmaVariant::FullSource => "full_source",
            SigmaVariant::FullDestination => "full_destination",
        }
    }

    /// The full variant matching an impulse-indexing convention.
    pub fn full_for(convention: Convention) -> Self {
        match convention {
            Convention::Source => SigmaVariant::FullSource,
            Convention::Destination => SigmaVariant::FullDestination,
        }
    }

    pub fn is_full(self) -> bool {
        self != SigmaVariant::PaperLiteral
    }
}

impl fmt::Display for SigmaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SigmaVariant {
    type Err = LevyxError;

    fn from_str(s: &str) -> Result<Self> {
        SigmaVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| LevyxError::InvalidArgument(format!("unknown sigma variant '{s}'")))
    }
}

/// Normalized jump law of the limit: a finite mixture of big-jump laws.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMixture {
    pub weights: Vec<f64>,
    pub laws: Vec<BigLaw>,
    cumulative: Vec<f64>,
}

impl JumpMixture {
    pub fn new(weighted: Vec<(f64, BigLaw)>) -> Self {
        let weighted: Vec<(f64, BigLaw)> = weighted.into_iter().filter(|(w, _)| *w > 0.0).collect();
        let total: f64 = weighted.iter().map(|(w, _)| w).sum();
        let mut acc = 0.0;
        let mut weights = Vec::with_capacity(weighted.len());
        let mut cumulative = Vec::with_capacity(weighted.len());
        let mut laws = Vec::with_capacity(weighted.len());
        for (w, law) in weighted {
            acc += w / total;
            weights.push(w / total);
            cumulative.push(acc);
            laws.push(law);
        }
        JumpMixture { weights, laws, cumulative }
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    pub fn mean(&self, d: usize) -> DVector<f64> {
        let mut m = DVector::zeros(d);
        for (w, law) in self.weights.iter().zip(&self.laws) {
            m += law.mean() * *w;
        }
        m
    }

    pub fn second_moment(&self, d: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(d, d);
        for (w, law) in self.weights.iter().zip(&self.laws) {
            s += law.second_moment() * *w;
        }
        s
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.laws.len() - 1);
        self.laws[k].sample_into(rng, out);
    }

    pub fn descriptor(&self) -> String {
        if self.laws.is_empty() {
            return "none".into();
        }
        let parts: Vec<String> = self
            .weights
            .iter()
            .zip(&self.laws)
            .map(|(w, l)| format!("{w:.6}*{}", l.descriptor()))
            .collect();
        parts.join("+")
    }
}

/// The limit characteristics at one point `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPoint {
    pub u: Vec<f64>,
    pub variant: SigmaVariant,
    /// `â(u) = q̄ Σ ρ(x) a(u;x)`.
    pub a_hat: DVector<f64>,
    /// `â₀(u) = q̄ Σ ρ(x) λ₀(u;x) m_J(u;x)`.
    pub a0_hat: DVector<f64>,
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Smallest eigenvalue of the diffusion matrix before repair.
    pub sigma_min_eigenvalue: f64,
    pub lambda: f64,
    pub jump_law: JumpMixture,
}

impl LimitPoint {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// `|β + λ·mean(G⁰) − â|`, zero unless the literal jump intensity is used.
    pub fn mean_consistency(&self) -> f64 {
        let m = if self.lambda > 0.0 { self.jump_law.mean(self.dim()) * self.lambda } else { DVector::zeros(self.dim()) };
        (&self.beta + m - &self.a_hat).amax()
    }

    pub fn sigma_sqrt(&self) -> Result<DMatrix<f64>> {
        psd_sqrt(&self.sigma)
    }
}

/// The limit characteristics over a grid of `u` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitTriplet {
    pub variant: SigmaVariant,
    /// True when the characteristics do not depend on `u`.
    pub constant: bool,
    pub points: Vec<LimitPoint>,
}

impl LimitTriplet {
    pub fn at_origin(&self) -> &LimitPoint {
        &self.points[0]
    }
}

fn check_balance(family: &ImpulseFamily, sp: &StationaryPair, u: &[f64]) -> Result<()> {
    let mut acc = DVector::zeros(family.dim());
    let mut sup: f64 = 0.0;
    for x in 0..family.n_states() {
        let a1 = family.a1(u, x);
        sup = sup.max(a1.amax());
        acc += a1 * sp.rho[x];
    }
    let residual = acc.amax();
    if residual > BALANCE_TOL * sup.max(1.0) {
        return Err(LevyxError::BalanceViolated { residual });
    }
    Ok(())
}

fn a1_rows(family: &ImpulseFamily, u: &[f64]) -> DMatrix<f64> {
    let (n, d) = (family.n_states(), family.dim());
    let mut m = DMatrix::zeros(n, d);
    for x in 0..n {
        m.row_mut(x).copy_from(&family.a1(u, x).transpose());
    }
    m
}

/// Rows `ã₁(u;x)` of the first-order impulse drift: `q(x)a₁(u;x)` for the
/// source convention, `q(x) Σ_y P(x,y) a₁(u;y)` for the destination one.
pub fn tilde_a1(model: &SwitchingModel, family: &ImpulseFamily, u: &[f64], convention: Convention) -> DMatrix<f64> {
    let a1 = a1_rows(family, u);
    let q = DMatrix::from_diagonal(model.q());
    match convention {
        Convention::Source => &q * a1,
        Convention::Destination => &q * model.p() * a1,
    }
}

fn sym_outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    symmetrize(&(a * b.transpose()))
}

/// The unrepaired diffusion matrix for `variant` at `u`.
pub fn sigma2(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    sp: &StationaryPair,
    r0: &PotentialOperator,
    u: &[f64],
    variant: SigmaVariant,
) -> Result<DMatrix<f64>> {
    check_balance(family, sp, u)?;
    let (n, d) = (family.n_states(), family.dim());
    let mut sigma = DMatrix::zeros(d, d);
    let col = |m: &DMatrix<f64>, x: usize| -> DVector<f64> { m.row(x).transpose() };
    match variant {
        SigmaVariant::PaperLiteral => {
            let at = tilde_a1(model, family, u, Convention::Source);
            let r = &r0.r0 * &at;
            for x in 0..n {
                sigma += sym_outer(&col(&at, x), &col(&r, x)) * (2.0 * sp.pi[x]);
            }
        }
        SigmaVariant::FullSource => {
            let at = tilde_a1(model, family, u, Convention::Source);
            let pr = model.p() * (&r0.r0 * &at);
            for x in 0..n {
                sigma += family.c1(u, x) * (sp.q_bar * sp.rho[x]);
                sigma += sym_outer(&col(&at, x), &col(&pr, x)) * (2.0 * sp.pi[x]);
            }
        }
        SigmaVariant::FullDestination => {
            let a1 = a1_rows(family, u);
            let r = &r0.r0 * tilde_a1(model, family, u, Convention::Destination);
            for y in 0..n {
                sigma += family.c1(u, y) * (sp.q_bar * sp.rho[y]);
                sigma += sym_outer(&col(&a1, y), &col(&r, y)) * (2.0 * sp.q_bar * sp.rho[y]);
            }
        }
    }
    Ok(symmetrize(&sigma))
}

/// Evaluates the limit characteristics at arbitrary `u`.
#[derive(Debug, Clone)]
pub struct LimitModel {
    pub model: SwitchingModel,
    pub family: ImpulseFamily,
    pub sp: StationaryPair,
    pub r0: PotentialOperator,
    pub variant: SigmaVariant,
    /// Multiply the jump intensity by an extra `q̄` (demonstration only).
    pub literal_lambda: bool,
}

impl LimitModel {
    pub fn new(model: &SwitchingModel, family: &ImpulseFamily, variant: SigmaVariant) -> Result<Self> {
        let sp = crate::switching::stationary(model)?;
        let r0 = crate::switching::potential(model, &sp)?;
        Ok(LimitModel { model: model.clone(), family: family.clone(), sp, r0, variant, literal_lambda: false })
    }

    pub fn with_variant(&self, variant: SigmaVariant) -> Self {
        LimitModel { variant, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn is_constant(&self) -> bool {
        self.family.is_constant()
    }

    pub fn at(&self, u: &[f64]) -> Result<LimitPoint> {
        limit_point(&self.model, &self.family, &self.sp, &self.r0, u, self.variant, self.literal_lambda)
    }

    pub fn generator(&self, phi: &Quadratic, u: &[f64]) -> Result<f64> {
        Ok(apply_limit_generator(&self.at(u)?, phi, u))
    }
}

fn limit_point(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    sp: &StationaryPair,
    r0: &PotentialOperator,
    u: &[f64],
    variant: SigmaVariant,
    literal_lambda: bool,
) -> Result<LimitPoint> {
    let (n, d) = (family.n_states(), family.dim());
    let raw = sigma2(model, family, sp, r0, u, variant)?;
    let (sigma, min_eig) = if variant.is_full() {
        repair_psd(&raw)?
    } else {
        let min = linalg::min_eigenvalue(&raw);
        if min < 0.0 {
            log::warn!("{variant} diffusion matrix has eigenvalue {min:e}; clipping");
            let eig = nalgebra::SymmetricEigen::new(raw.clone());
            let clipped = eig.eigenvalues.map(|v| v.max(0.0));
            (symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())), min)
        } else {
            (raw, min)
        }
    };

    let mut a_hat = DVector::zeros(d);
    let mut a0_hat = DVector::zeros(d);
    let mut beta = DVector::zeros(d);
    let mut lambda = 0.0;
    let mut weighted = Vec::new();
    for x in 0..n {
        let w = sp.q_bar * sp.rho[x];
        let l0 = family.lambda0(u, x);
        a_hat += family.a(u, x) * w;
        a0_hat += family.a0(u, x) * w;
        beta += family.b(u, x) * w;
        lambda += l0 * w;
        weighted.push((l0 * w, family.big_law(x).clone()));
    }
    if literal_lambda {
        lambda *= sp.q_bar;
    }
    Ok(LimitPoint {
        u: u.to_vec(),
        variant,
        a_hat,
        a0_hat,
        beta,
        sigma,
        sigma_min_eigenvalue: min_eig,
        lambda,
        jump_law: JumpMixture::new(weighted),
    })
}

/// Limit characteristics on `u_grid`; the first point is used as the
/// representative when the triplet is constant.
pub fn limit_triplet(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    sp: &StationaryPair,
    r0: &PotentialOperator,
    u_grid: &[Vec<f64>],
    variant: SigmaVariant,
) -> Result<LimitTriplet> {
    if u_grid.is_empty() {
        return Err(LevyxError::InvalidArgument("u grid is empty".into()));
    }
    let points = u_grid
        .iter()
        .map(|u| limit_point(model, family, sp, r0, u, variant, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitTriplet { variant, constant: family.is_constant(), points })
}

/// `φ(u) = uᵀ A u + lᵀ u` with `A` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
}

impl Quadratic {
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>) -> Result<Self> {
        let d = lin.len();
        if quad.nrows() != d || quad.ncols() != d {
            return Err(LevyxError::InvalidArgument("quadratic form shape mismatch".into()));
        }
        Ok(Quadratic { quad: symmetrize(&quad), lin })
    }

    /// `|u|²`.
    pub fn square(d: usize) -> Self {
        Quadratic { quad: DMatrix::identity(d, d), lin: DVector::zeros(d) }
    }

    pub fn linear(lin: DVector<f64>) -> Self {
        let d = lin.len();
        Quadratic { quad: DMatrix::zeros(d, d), lin }
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        (u.transpose() * &self.quad * &u)[(0, 0)] + self.lin.dot(&u)
    }

    pub fn grad(&self, u: &[f64]) -> DVector<f64> {
        &self.quad * DVector::from_column_slice(u) * 2.0 + &self.lin
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        &self.quad * 2.0
    }

    /// `E[φ(u+z)] − φ(u)` for `z` with mean `m` and second moment `s`.
    pub fn expected_increment(&self, u: &[f64], m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
        self.grad(u).dot(m) + (&self.quad * s).trace()
    }
}

/// `Lφ(u)` for a quadratic `φ`; the jump expectation is closed-form.
pub fn apply_limit_generator(point: &LimitPoint, phi: &Quadratic, u: &[f64]) -> f64 {
    let d = phi.dim();
    let mut value = point.beta.dot(&phi.grad(u)) + (&point.sigma * &phi.quad).trace();
    if point.lambda > 0.0 {
        let m = point.jump_law.mean(d);
        let s = point.jump_law.second_moment(d);
        value += point.lambda * phi.expected_increment(u, &m, &s);
    }
    value
}

/// A corrector `u ↦ (f(u, x))_x` with its `u`-derivatives.
#[derive(Debug, Clone)]
pub enum Corrector {
    /// `f(u, x) = offset[x] + slope.row(x)·u`.
    Affine { offset: DVector<f64>, slope: DMatrix<f64> },
    /// Evaluated pointwise, derivatives by central differences.
    Numeric { order: u8, ctx: Arc<CorrectorContext> },
}

impl Corrector {
    pub fn values(&self, u: &[f64]) -> DVector<f64> {
        match self {
            Corrector::Affine { offset, slope } => offset + slope * DVector::from_column_slice(u),
            Corrector::Numeric { order: 1, ctx } => ctx.phi1(u),
            Corrector::Numeric { ctx, .. } => ctx.phi2(u),
        }
    }

    /// `n × d` matrix of gradients, one row per state.
    pub fn gradients(&self, u: &[f64]) -> DMatrix<f64> {
        match self {
            Corrector::Affine { slope, .. } => slope.clone(),
            Corrector::Numeric { ctx, .. } => fd_gradient(u, ctx.fd_step(u), |v| self.values(v)),
        }
    }

    /// Hessian of `f(·, x)`.
    pub fn hessian(&self, u: &[f64], x: usize) -> DMatrix<f64> {
        let d = u.len();
        match self {
            Corrector::Affine { .. } => DMatrix::zeros(d, d),
            Corrector::Numeric { ctx, .. } => {
                let h = ctx.fd_step(u);
                let g = fd_gradient(u, h, |v| self.gradients(v).row(x).transpose());
                symmetrize(&g)
            }
        }
    }
}

fn fd_gradient(u: &[f64], h: f64, f: impl Fn(&[f64]) -> DVector<f64>) -> DMatrix<f64> {
    let d = u.len();
    let base = f(u);
    let mut out = DMatrix::zeros(base.len(), d);
    let mut v = u.to_vec();
    for k in 0..d {
        v[k] = u[k] + h;
        let plus = f(&v);
        v[k] = u[k] - h;
        let minus = f(&v);
        v[k] = u[k];
        out.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    out
}

/// Inputs of the pointwise corrector construction.
#[derive(Debug, Clone)]
pub struct CorrectorContext {
    pub model: SwitchingModel,
    pub family: ImpulseFamily,
    pub r0: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub phi: Quadratic,
    pub fd_scale: f64,
}

impl CorrectorContext {
    fn fd_step(&self, u: &[f64]) -> f64 {
        1e-4 * self.fd_scale.max(linalg::norm(u)).max(1.0)
    }

    /// `n × d` rows `(R₀ã₁)(u;x)`.
    fn r(&self, u: &[f64]) -> DMatrix<f64> {
        &self.r0 * tilde_a1(&self.model, &self.family, u, self.family.convention())
    }

    fn phi1(&self, u: &[f64]) -> DVector<f64> {
        self.r(u) * self.phi.grad(u)
    }

    fn phi2(&self, u: &[f64]) -> DVector<f64> {
        let phi1 = Corrector::Numeric { order: 1, ctx: Arc::new(self.clone()) };
        let h0 = order_zero_term(&self.model, &self.family, &self.phi, u, &phi1.gradients(u));
        let centered = &h0 - DVector::from_element(h0.len(), self.pi.dot(&h0));
        &self.r0 * centered
    }
}

/// `h₀(u;x) = q(x) Σ_y P(x,y) [a(u;s)·∇φ + tr(A c(u;s)) + a₁(u;s)·∇φ₁(u,y)]`,
/// the order-`ε⁰` part of the pre-limit generator on `φ + εφ₁`, with `s`
/// the impulse state of the transition `x → y`.
pub fn order_zero_term(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    phi: &Quadratic,
    u: &[f64],
    grad_phi1: &DMatrix<f64>,
) -> DVector<f64> {
    let n = model.n_states();
    let grad = phi.grad(u);
    let conv = family.convention();
    DVector::from_fn(n, |x, _| {
        let mut acc = 0.0;
        for y in 0..n {
            let p = model.p()[(x, y)];
            if p == 0.0 {
                continue;
            }
            let s = conv.impulse_state(x, y);
            acc += p
                * (family.a(u, s).dot(&grad)
                    + (&phi.quad * family.c(u, s)).trace()
                    + family.a1(u, s).dot(&grad_phi1.row(y).transpose()));
        }
        model.rate(x) * acc
    })
}

/// `φ^ε = φ + εφ₁ + ε²φ₂`.
#[derive(Debug, Clone)]
pub struct TestFunctionBundle {
    pub phi: Quadratic,
    pub phi1: Corrector,
    pub phi2: Corrector,
}

impl TestFunctionBundle {
    /// Base function with vanishing correctors.
    pub fn plain(phi: Quadratic, n_states: usize) -> Self {
        let d = phi.dim();
        let zero = Corrector::Affine { offset: DVector::zeros(n_states), slope: DMatrix::zeros(n_states, d) };
        TestFunctionBundle { phi, phi1: zero.clone(), phi2: zero }
    }

    pub fn value(&self, eps: f64, u: &[f64], x: usize) -> f64 {
        self.phi.value(u) + eps * self.phi1.values(u)[x] + eps * eps * self.phi2.values(u)[x]
    }

    /// `max(|Πφ₁|, |Πφ₂|)` at `u`.
    pub fn centering_residual(&self, pi: &DVector<f64>, u: &[f64]) -> f64 {
        pi.dot(&self.phi1.values(u)).abs().max(pi.dot(&self.phi2.values(u)).abs())
    }
}

/// Builds `φ₁ = R₀[ã₁·∇φ]` and `φ₂ = R₀(I − Π)h₀`.
///
/// Constant-coefficient families give affine correctors computed exactly;
/// otherwise the correctors are evaluated pointwise with finite differences.
pub fn build_correctors(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    sp: &StationaryPair,
    r0: &PotentialOperator,
    phi: &Quadratic,
) -> Result<TestFunctionBundle> {
    if phi.dim() != family.dim() {
        return Err(LevyxError::InvalidArgument("test function dimension differs from the family".into()));
    }
    if model.n_states() != family.n_states() {
        return Err(LevyxError::MismatchedFamily("family and model disagree on the number of states".into()));
    }
    let origin = vec![0.0; family.dim()];
    check_balance(family, sp, &origin)?;
    if !family.is_constant() {
        let ctx = Arc::new(CorrectorContext {
            model: model.clone(),
            family: family.clone(),
            r0: r0.r0.clone(),
            pi: sp.pi.clone(),
            phi: phi.clone(),
            fd_scale: 1.0,
        });
        return Ok(TestFunctionBundle {
            phi: phi.clone(),
            phi1: Corrector::Numeric { order: 1, ctx: ctx.clone() },
            phi2: Corrector::Numeric { order: 2, ctx },
        });
    }

    let n = model.n_states();
    let conv = family.convention();
    let r = &r0.r0 * tilde_a1(model, family, &origin, conv);
    let two_a = phi.hessian();
    // φ₁(u,x) = r(x)·(2Au + l).
    let phi1_offset = &r * &phi.lin;
    let phi1_slope = &r * &two_a;

    // h₀ is affine in u: h₀(u,x) = α(x) + γ(x)·u.
    let alpha = order_zero_term(model, family, phi, &origin, &phi1_slope);
    let mut gamma = DMatrix::zeros(n, family.dim());
    for x in 0..n {
        let mut row = DVector::zeros(family.dim());
        for y in 0..n {
            let p = model.p()[(x, y)];
            if p > 0.0 {
                row += &two_a * family.a(&origin, conv.impulse_state(x, y)) * p;
            }
        }
        gamma.row_mut(x).copy_from(&(row * model.rate(x)).transpose());
    }
    let center = |v: DMatrix<f64>| -> DMatrix<f64> {
        let proj = &r0.projector * &v;
        &r0.r0 * (v - proj)
    };
    let phi2_offset = center(DMatrix::from_column_slice(n, 1, alpha.as_slice())).column(0).into_owned();
    let phi2_slope = center(gamma);
    Ok(TestFunctionBundle {
        phi: phi.clone(),
        phi1: Corrector::Affine { offset: phi1_offset, slope: phi1_slope },
        phi2: Corrector::Affine { offset: phi2_offset, slope: phi2_slope },
    })
}

/// `ε⁻² q(x) [Σ_y P(x,y) E φ^ε(u+z, y) − φ^ε(u,x)]`, with `z ~ G^ε` at the
/// impulse state of `x → y`. Expectations use the exact impulse moments and
/// are exact for quadratic `φ` and affine correctors.
pub fn apply_prelimit_generator(
    model: &SwitchingModel,
    family: &ImpulseFamily,
    eps: f64,
    bundle: &TestFunctionBundle,
    u: &[f64],
    x: usize,
) -> Result<f64> {
    let n = model.n_states();
    let conv = family.convention();
    let f1 = bundle.phi1.values(u);
    let f2 = bundle.phi2.values(u);
    let g1 = bundle.phi1.gradients(u);
    let g2 = bundle.phi2.gradients(u);
    let mut acc = 0.0;
    for y in 0..n {
        let p = model.p()[(x, y)];
        if p == 0.0 {
            continue;
        }
        let mom = family.moments(eps, u, conv.impulse_state(x, y))?;
        let (m, s) = (&mom.mean, &mom.second);
        let base = bundle.phi.expected_increment(u, m, s);
        let mut first = f1[y] - f1[x] + g1.row(y).transpose().dot(m);
        let mut second = f2[y] - f2[x] + g2.row(y).transpose().dot(m);
        if let Corrector::Numeric { .. } = bundle.phi1 {
            first += 0.5 * (bundle.phi1.hessian(u, y) * s).trace();
            second += 0.5 * (bundle.phi2.hessian(u, y) * s).trace();
        }
        acc += p * (base + eps * first + eps * eps * second);
    }
    Ok(model.rate(x) * acc / (eps * eps))
}

/// Perturbation residual curve `r(ε) = max_{(u,x)} |L^ε φ^ε − Lφ|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualCurve {
    pub variant: SigmaVariant,
    pub eps_grid: Vec<f64>,
    pub residual: Vec<f64>,
    pub slope: Option<f64>,
    /// `max_u |tr((Σ_variant − Σ_full)A)|`, the limit of `r(ε)` as `ε → 0`.
    pub predicted_plateau: f64,
}

pub fn perturbation_residual(
    limit: &LimitModel,
    phi: &Quadratic,
    eps_grid: &[f64],
    u_grid: &[Vec<f64>],
) -> Result<ResidualCurve> {
    let bundle = build_correctors(&limit.model, &limit.family, &limit.sp, &limit.r0, phi)?;
    let full = limit.with_variant(SigmaVariant::full_for(limit.family.convention()));
    let n = limit.model.n_states();
    let mut limit_values = Vec::with_capacity(u_grid.len());
    let mut plateau: f64 = 0.0;
    for u in u_grid {
        let p = limit.at(u)?;
        let pf = full.at(u)?;
        plateau = plateau.max(((&p.sigma - &pf.sigma) * &phi.quad).trace().abs());
        limit_values.push(apply_limit_generator(&p, phi, u));
    }
    let mut residual = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let mut worst: f64 = 0.0;
        for (u, lv) in u_grid.iter().zip(&limit_values) {
            for x in 0..n {
                let pv = apply_prelimit_generator(&limit.model, &limit.family, eps, &bundle, u, x)?;
                worst = worst.max((pv - lv).abs());
            }
        }
        residual.push(worst);
    }
    Ok(ResidualCurve {
        variant: limit.variant,
        eps_grid: eps_grid.to_vec(),
        slope: loglog_slope(eps_grid, &residual),
        residual,
        predicted_plateau: plateau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impulse::{CoefFn, ImpulseComponents, PerState, SmallLaw};
    use crate::switching::{potential, stationary};

    fn chain(q: [f64; 2], rows: [[f64; 2]; 2]) -> SwitchingModel {
        SwitchingModel::from_rows(q.to_vec(), &[rows[0].to_vec(), rows[1].to_vec()]).unwrap()
    }

    fn swap(q: [f64; 2]) -> SwitchingModel {
        chain(q, [[0.0, 1.0], [1.0, 0.0]])
    }

    fn with_a1(a1: [f64; 2], conv: Convention) -> ImpulseFamily {
        let mut c = ImpulseComponents::zero(1);
        c.a1 = CoefFn::Table(vec![vec![a1[0]], vec![a1[1]]]);
        ImpulseFamily::new(c, conv, 2).unwrap()
    }

    fn sigma_all(m: &SwitchingModel, f: &ImpulseFamily) -> [f64; 3] {
        let sp = stationary(m).unwrap();
        let r0 = potential(m, &sp).unwrap();
        SigmaVariant::ALL.map(|v| sigma2(m, f, &sp, &r0, &[0.0], v).unwrap()[(0, 0)])
    }

    #[test]
    fn alt2_and_iid2_variants() {
        let s = sigma_all(&swap([1.0, 1.0]), &with_a1([1.0, -1.0], Convention::Source));
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12 && s[2].abs() < 1e-12, "{s:?}");
        let iid = chain([1.0, 1.0], [[0.5, 0.5], [0.5, 0.5]]);
        let s = sigma_all(&iid, &with_a1([1.0, -1.0], Convention::Source));
        assert!((s[0] - 2.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12, "{s:?}");
        assert!((s[0] / s[1] - 2.0).abs() < 1e-12);
        let s = sigma_all(&swap([1.0, 3.0]), &with_a1([0.0, 0.0], Convention::Source));
        assert_eq!(s, [0.0; 3]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SigmaVariant::ALL {
            assert_eq!(v.as_str().parse::<SigmaVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<SigmaVariant>().is_err());
    }

    #[test]
    fn m2q_drift_and_jumps() {
        let m = swap([1.0, 2.0]);
        let mut c = ImpulseComponents::zero(1);
        c.b = CoefFn::Const(vec![0.5]);
        c.lambda0 = CoefFn::Const(vec![0.5]);
        c.big_law = PerState::Const(BigLaw::point(DVector::from_vec(vec![1.0])));
        let f = ImpulseFamily::new(c, Convention::Source, 2).unwrap();
        let lm = LimitModel::new(&m, &f, SigmaVariant::FullSource).unwrap();
        let p = lm.at(&[0.0]).unwrap();
        // q̄ = 4/3, ρ = (½, ½).
        assert!((p.beta[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.lambda - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.jump_law.mean(1)[0], 1.0);
        assert!(p.mean_consistency() < 1e-12);
        let mut lit = lm.clone();
        lit.literal_lambda = true;
        assert!(lit.at(&[0.0]).unwrap().mean_consistency() > 0.1);
    }

    #[test]
    fn balance_blocks_diffusion() {
        let m = swap([1.0, 1.0]);
        let f = with_a1([1.0, -0.5], Convention::Source);
        let lm = LimitModel::new(&m, &f, SigmaVariant::FullSource).unwrap();
        assert!(matches!(lm.at(&[0.0]), Err(LevyxError::BalanceViolated { .. })));
    }

    #[test]
    fn limit_generator_on_quadratic() {
        let m = swap([1.0, 2.0]);
        let mut c = ImpulseComponents::zero(1);
        c.b = CoefFn::Const(vec![0.75]);
        c.lambda0 = CoefFn::Const(vec![0.75]);
        c.big_law = PerState::Const(BigLaw::point(DVector::from_vec(vec![2.0])));
        c.small_law = PerState::Const(SmallLaw::gaussian(DMatrix::from_element(1, 1, 0.3)).unwrap());
        let f = ImpulseFamily::new(c, Convention::Source, 2).unwrap();
        let p = LimitModel::new(&m, &f, SigmaVariant::FullSource).unwrap().at(&[0.0]).unwrap();
        let (beta, s2, lam) = (p.beta[0], p.sigma[(0, 0)], p.lambda);
        let u = 0.7;
        // φ = u²: 2uβ + σ² + λ(2ua + a²).
        let expected = 2.0 * u * beta + s2 + lam * (2.0 * u * 2.0 + 4.0);
        assert!((apply_limit_generator(&p, &Quadratic::square(1), &[u]) - expected).abs() < 1e-12);
        assert!((apply_limit_generator(&p, &Quadratic::linear(DVector::from_vec(vec![1.0])), &[u]) - (beta + lam * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_family_generators_vanish() {
        let m = swap([1.0, 2.0]);
        let f = ImpulseFamily::new(ImpulseComponents::zero(1), Convention::Source, 2).unwrap();
        let lm = LimitModel::new(&m, &f, SigmaVariant::FullSource).unwrap();
        let phi = Quadratic::square(1);
        assert_eq!(lm.generator(&phi, &[0.3]).unwrap(), 0.0);
        let b = TestFunctionBundle::plain(phi.clone(), 2);
        assert_eq!(apply_prelimit_generator(&m, &f, 0.1, &b, &[0.3], 1).unwrap(), 0.0);
        // With only φ₁ present the switching term ε⁻¹(Qφ₁) survives.
        let mut b1 = b.clone();
        b1.phi1 = Corrector::Affine { offset: DVector::from_vec(vec![1.0, -1.0]), slope: DMatrix::zeros(2, 1) };
        let v = apply_prelimit_generator(&m, &f, 0.1, &b1, &[0.3], 1).unwrap();
        assert!((v - 2.0 * 2.0 / 0.1).abs() < 1e-9, "{v}");
    }

    #[test]
    fn correctors_are_centered_and_solve_poisson() {
        let m = chain([1.0, 2.5], [[0.2, 0.8], [0.6, 0.4]]);
        let sp = stationary(&m).unwrap();
        let r0 = potential(&m, &sp).unwrap();
        let a1 = [1.0, -sp.rho[0] / sp.rho[1]];
        for conv in [Convention::Source, Convention::Destination] {
            let f = with_a1(a1, conv);
            let b = build_correctors(&m, &f, &sp, &r0, &Quadratic::square(1)).unwrap();
            for u in [-1.0, 0.0, 2.0] {
                assert!(b.centering_residual(&sp.pi, &[u]) < 1e-12);
            }
        }
    }

    fn residual(m: &SwitchingModel, f: &ImpulseFamily, variant: SigmaVariant) -> ResidualCurve {
        let lm = LimitModel::new(m, f, variant).unwrap();
        let u_grid: Vec<Vec<f64>> = [-1.0, 0.0, 1.0].iter().map(|&u| vec![u]).collect();
        perturbation_residual(&lm, &Quadratic::square(1), &[0.4, 0.2, 0.1, 0.05], &u_grid).unwrap()
    }

    #[test]
    fn alt2_residual_vanishes_with_full_and_plateaus_with_literal() {
        let m = swap([1.0, 1.0]);
        let f = with_a1([1.0, -1.0], Convention::Source);
        let full = residual(&m, &f, SigmaVariant::FullSource);
        assert!(full.residual.iter().all(|&r| r < 1e-12), "{:?}", full.residual);
        let lit = residual(&m, &f, SigmaVariant::PaperLiteral);
        assert!((lit.predicted_plateau - 1.0).abs() < 1e-12);
        let last = *lit.residual.last().unwrap();
        assert!((last - 1.0).abs() < 0.1, "{:?}", lit.residual);
    }

    #[test]
    fn drift_only_residual_decays() {
        let m = swap([1.0, 2.0]);
        let mut c = ImpulseComponents::zero(1);
        c.b = CoefFn::Const(vec![0.5]);
        c.small_law = PerState::Const(SmallLaw::gaussian(DMatrix::from_element(1, 1, 0.75)).unwrap());
        let f = ImpulseFamily::new(c, Convention::Source, 2).unwrap();
        let r = residual(&m, &f, SigmaVariant::FullSource);
        assert!(r.slope.unwrap() >= 0.9, "{r:?}");
    }

    #[test]
    fn destination_residual_decays() {
        let m = chain([1.0, 2.5], [[0.2, 0.8], [0.6, 0.4]]);
        let sp = stationary(&m).unwrap();
        let mut c = ImpulseComponents::zero(1);
        c.a1 = CoefFn::Table(vec![vec![1.0], vec![-sp.rho[0] / sp.rho[1]]]);
        c.b = CoefFn::Table(vec![vec![0.3], vec![-0.1]]);
        c.lambda0 = CoefFn::Const(vec![0.4]);
        c.big_law = PerState::Const(BigLaw::point(DVector::from_vec(vec![-1.0])));
        c.small_law = PerState::Const(SmallLaw::gaussian(DMatrix::from_element(1, 1, 0.2)).unwrap());
        for conv in [Convention::Source, Convention::Destination] {
            let f = ImpulseFamily::new(c.clone(), conv, 2).unwrap();
            let r = residual(&m, &f, SigmaVariant::full_for(conv));
            assert!(r.slope.unwrap() >= 0.9, "{conv:?} {r:?}");
            assert!(r.residual.windows(2).all(|w| w[1] < w[0]), "{conv:?} {r:?}");
        }
    }
}
