//! Scenario files: schema, validation with JSON-pointer diagnostics,
//! canonical serialization and the built-in fixtures.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::Result;
use crate::impulse::{
    validate_conditions, BigLaw, CoefFn, Convention, ImpulseComponents, ImpulseFamily, PerState, ResidualReport, SmallLaw,
};
use crate::limit_model::{LimitModel, SigmaVariant};
use crate::linalg;
use crate::prelimit::{default_guard, PrelimitSetup};
use crate::switching::{potential, stationary, PotentialOperator, StationaryPair, SwitchingModel};

/// Default cap on projected impulse draws for one sweep.
pub const DEFAULT_BUDGET: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub dimension: usize,
    pub switching: SwitchingSpec,
    pub impulse: ImpulseSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default)]
    pub guards: GuardSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSpec {
    pub q: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
}

/// Impulse components; omitted entries are zero (deterministic small law,
/// no big jumps).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<CoefSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<CoefSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_law: Option<LawSpec<SmallSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<CoefSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_law: Option<LawSpec<BigSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefSpec {
    Const { value: Vec<f64> },
    Table { values: Vec<Vec<f64>> },
    /// `clamp(offset[x] + slope[x]·u, bound[0], bound[1])`.
    AffineClipped { offset: Vec<Vec<f64>>, slope: Vec<Vec<Vec<f64>>>, bound: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec<T> {
    Const { law: T },
    Table { laws: Vec<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmallSpec {
    Deterministic,
    Gaussian { cov: Vec<Vec<f64>> },
    Atoms { offsets: Vec<Vec<f64>>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BigSpec {
    Atoms { values: Vec<Vec<f64>>, weights: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Laplace { location: Vec<f64>, scale: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub xi0: Vec<f64>,
    pub x0: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_guard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

/// A schema violation located by a JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaError {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema errors: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Schema(Vec<SchemaError>),
}

impl ScenarioError {
    pub fn schema_errors(&self) -> &[SchemaError] {
        match self {
            ScenarioError::Schema(errs) => errs,
            _ => &[],
        }
    }
}

fn escape_pointer(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape_pointer(key))),
            Segment::Enum { .. } | Segment::Unknown => {}
        }
    }
    out
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

struct Collector(Vec<SchemaError>);

impl Collector {
    fn push(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.0.push(SchemaError { pointer: pointer.into(), message: message.into() });
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_matrix(c: &mut Collector, ptr: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> bool {
    if m.len() != rows {
        c.push(ptr, format!("expected {rows} rows, found {}", m.len()));
        return false;
    }
    let mut ok = true;
    for (i, r) in m.iter().enumerate() {
        if r.len() != cols || !all_finite(r) {
            c.push(format!("{ptr}/{i}"), format!("expected {cols} finite entries"));
            ok = false;
        }
    }
    ok
}

fn check_vector(c: &mut Collector, ptr: &str, v: &[f64], len: usize) -> bool {
    if v.len() != len || !all_finite(v) {
        c.push(ptr, format!("expected {len} finite entries, found {}", v.len()));
        return false;
    }
    true
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows, cols, |i, j| m[i][j])
}

fn check_coef(c: &mut Collector, ptr: &str, spec: &CoefSpec, m: usize, n: usize, d: usize) {
    match spec {
        CoefSpec::Const { value } => {
            check_vector(c, &format!("{ptr}/value"), value, m);
        }
        CoefSpec::Table { values } => {
            check_matrix(c, &format!("{ptr}/values"), values, n, m);
        }
        CoefSpec::AffineClipped { offset, slope, bound } => {
            check_matrix(c, &format!("{ptr}/offset"), offset, n, m);
            if slope.len() != n {
                c.push(format!("{ptr}/slope"), format!("expected {n} matrices, found {}", slope.len()));
            } else {
                for (x, s) in slope.iter().enumerate() {
                    check_matrix(c, &format!("{ptr}/slope/{x}"), s, m, d);
                }
            }
            if !(bound[0].is_finite() && bound[1].is_finite() && bound[0] <= bound[1]) {
                c.push(format!("{ptr}/bound"), "bound must be a finite interval [lo, hi]");
            }
        }
    }
}

fn coef_fn(spec: &CoefSpec) -> CoefFn {
    match spec {
        CoefSpec::Const { value } => CoefFn::Const(value.clone()),
        CoefSpec::Table { values } => CoefFn::Table(values.clone()),
        CoefSpec::AffineClipped { offset, slope, bound } => CoefFn::AffineClipped {
            offset: offset.clone(),
            slope: slope.iter().map(|s| to_matrix(s)).collect(),
            lo: bound[0],
            hi: bound[1],
        },
    }
}

fn law_items<T>(c: &mut Collector, ptr: &str, spec: &LawSpec<T>, n: usize) -> Vec<(String, T)>
where
    T: Clone,
{
    match spec {
        LawSpec::Const { law } => vec![(format!("{ptr}/law"), law.clone())],
        LawSpec::Table { laws } => {
            if laws.len() != n {
                c.push(format!("{ptr}/laws"), format!("expected {n} laws, found {}", laws.len()));
                return Vec::new();
            }
            laws.iter().enumerate().map(|(x, l)| (format!("{ptr}/laws/{x}"), l.clone())).collect()
        }
    }
}

fn small_law(c: &mut Collector, ptr: &str, spec: &SmallSpec, d: usize) -> Option<SmallLaw> {
    match spec {
        SmallSpec::Deterministic => Some(SmallLaw::Deterministic),
        SmallSpec::Gaussian { cov } => {
            if !check_matrix(c, &format!("{ptr}/cov"), cov, d, d) {
                return None;
            }
            SmallLaw::gaussian(to_matrix(cov)).map_err(|e| c.push(format!("{ptr}/cov"), e.to_string())).ok()
        }
        SmallSpec::Atoms { offsets, weights } => {
            let ok = !offsets.is_empty() && check_matrix(c, &format!("{ptr}/offsets"), offsets, offsets.len(), d);
            if offsets.is_empty() {
                c.push(format!("{ptr}/offsets"), "at least one atom is required");
            }
            if weights.len() != offsets.len() {
                c.push(format!("{ptr}/weights"), "one weight per atom is required");
                return None;
            }
            if !ok {
                return None;
            }
            let atoms = offsets.iter().map(|o| DVector::from_column_slice(o)).collect();
            SmallLaw::atoms(atoms, weights).map_err(|e| c.push(ptr.to_string(), e.to_string())).ok()
        }
    }
}

fn big_law(c: &mut Collector, ptr: &str, spec: &BigSpec, d: usize) -> Option<BigLaw> {
    match spec {
        BigSpec::Atoms { values, weights } => {
            if values.is_empty() {
                c.push(format!("{ptr}/values"), "at least one atom is required");
                return None;
            }
            if !check_matrix(c, &format!("{ptr}/values"), values, values.len(), d) {
                return None;
            }
            if weights.len() != values.len() {
                c.push(format!("{ptr}/weights"), "one weight per atom is required");
                return None;
            }
            let atoms = values.iter().map(|v| DVector::from_column_slice(v)).collect();
            BigLaw::atoms(atoms, weights).map_err(|e| c.push(format!("{ptr}/weights"), e.to_string())).ok()
        }
        BigSpec::Gaussian { mean, cov } => {
            let ok = check_vector(c, &format!("{ptr}/mean"), mean, d) & check_matrix(c, &format!("{ptr}/cov"), cov, d, d);
            if !ok {
                return None;
            }
            BigLaw::gaussian(DVector::from_column_slice(mean), to_matrix(cov))
                .map_err(|e| c.push(format!("{ptr}/cov"), e.to_string()))
                .ok()
        }
        BigSpec::Laplace { location, scale } => {
            let ok = check_vector(c, &format!("{ptr}/location"), location, d) & check_vector(c, &format!("{ptr}/scale"), scale, d);
            if !ok {
                return None;
            }
            BigLaw::laplace(DVector::from_column_slice(location), DVector::from_column_slice(scale))
                .map_err(|e| c.push(format!("{ptr}/scale"), e.to_string()))
                .ok()
        }
    }
}

fn per_state<T>(items: Vec<T>, spec_is_const: bool) -> PerState<T> {
    if spec_is_const {
        PerState::Const(items.into_iter().next().unwrap())
    } else {
        PerState::Table(items)
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json_str(text: &str) -> std::result::Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = match serde_path_to_error::deserialize(de) {
            Ok(s) => s,
            Err(err) => {
                let pointer = pointer_of(err.path());
                let inner = err.into_inner();
                if !inner.is_data() {
                    return Err(ScenarioError::Parse { line: inner.line(), column: inner.column(), message: inner.to_string() });
                }
                let message = inner.to_string();
                let pointer = match missing_field(&message) {
                    Some(field) => format!("{pointer}/{}", escape_pointer(field)),
                    None => pointer,
                };
                let message = message.split(" at line ").next().unwrap_or(&message).to_string();
                return Err(ScenarioError::Schema(vec![SchemaError { pointer, message }]));
            }
        };
        scenario.build_parts().map(|_| scenario)
    }

    pub fn n_states(&self) -> usize {
        self.switching.q.len()
    }

    /// Canonical serialization: compact JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("scenario serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn pretty_json(&self) -> String {
        let value = serde_json::to_value(self).expect("scenario serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.hash()[..12].to_string())
    }

    /// Validation box for `u`: the configured one or `ξ₀ ± 1`.
    pub fn u_box(&self) -> Vec<(f64, f64)> {
        match &self.guards.u_box {
            Some(b) => b.iter().map(|r| (r[0], r[1])).collect(),
            None => self.initial.xi0.iter().map(|&x| (x - 1.0, x + 1.0)).collect(),
        }
    }

    pub fn budget(&self) -> f64 {
        self.guards.budget.unwrap_or(DEFAULT_BUDGET)
    }

    pub fn path_guard(&self) -> f64 {
        self.guards.path_guard.unwrap_or_else(|| default_guard(&self.initial.xi0))
    }

    fn build_parts(&self) -> std::result::Result<(SwitchingModel, ImpulseFamily), ScenarioError> {
        let mut c = Collector(Vec::new());
        let d = self.dimension;
        let n = self.switching.q.len();
        if d == 0 {
            c.push("/dimension", "dimension must be at least 1");
        }
        if n == 0 {
            c.push("/switching/q", "at least one state is required");
        }
        for (i, &q) in self.switching.q.iter().enumerate() {
            if !(q.is_finite() && q > 0.0) {
                c.push(format!("/switching/q/{i}"), format!("rate {q} must be positive"));
            }
        }
        if self.switching.p.len() != n {
            c.push("/switching/P", format!("expected {n} rows, found {}", self.switching.p.len()));
        } else {
            for (i, row) in self.switching.p.iter().enumerate() {
                if row.len() != n {
                    c.push(format!("/switching/P/{i}"), format!("expected {n} entries, found {}", row.len()));
                } else if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    c.push(format!("/switching/P/{i}"), "entries must be probabilities");
                } else {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > crate::switching::ROW_SUM_TOL {
                        c.push(format!("/switching/P/{i}"), format!("row sums to {sum}, expected 1"));
                    }
                }
            }
        }
        if !c.0.is_empty() || d == 0 {
            return Err(ScenarioError::Schema(c.0));
        }
        let model = match SwitchingModel::new(self.switching.q.clone(), to_matrix(&self.switching.p)) {
            Ok(m) => Some(m),
            Err(e) => {
                c.push("/switching/P", e.to_string());
                None
            }
        };

        let imp = &self.impulse;
        let mut comps = ImpulseComponents::zero(d);
        if let Some(s) = &imp.a1 {
            check_coef(&mut c, "/impulse/a1", s, d, n, d);
            comps.a1 = coef_fn(s);
        }
        if let Some(s) = &imp.b {
            check_coef(&mut c, "/impulse/b", s, d, n, d);
            comps.b = coef_fn(s);
        }
        if let Some(s) = &imp.lambda0 {
            check_coef(&mut c, "/impulse/lambda0", s, 1, n, d);
            let negative = match s {
                CoefSpec::Const { value } => value.iter().any(|v| *v < 0.0),
                CoefSpec::Table { values } => values.iter().flatten().any(|v| *v < 0.0),
                CoefSpec::AffineClipped { bound, .. } => bound[0] < 0.0,
            };
            if negative {
                c.push("/impulse/lambda0", "intensity must be nonnegative");
            }
            comps.lambda0 = coef_fn(s);
        }
        if let Some(spec) = &imp.small_law {
            let items = law_items(&mut c, "/impulse/small_law", spec, n);
            let laws: Vec<Option<SmallLaw>> = items.iter().map(|(p, s)| small_law(&mut c, p, s, d)).collect();
            if !items.is_empty() && laws.iter().all(Option::is_some) {
                comps.small_law = per_state(laws.into_iter().flatten().collect(), matches!(spec, LawSpec::Const { .. }));
            }
        }
        if let Some(spec) = &imp.big_law {
            let items = law_items(&mut c, "/impulse/big_law", spec, n);
            let laws: Vec<Option<BigLaw>> = items.iter().map(|(p, s)| big_law(&mut c, p, s, d)).collect();
            if !items.is_empty() && laws.iter().all(Option::is_some) {
                comps.big_law = per_state(laws.into_iter().flatten().collect(), matches!(spec, LawSpec::Const { .. }));
            }
        }

        check_vector(&mut c, "/initial/xi0", &self.initial.xi0, d);
        if self.initial.x0 >= n {
            c.push("/initial/x0", format!("state {} out of range 0..{n}", self.initial.x0));
        }
        let g = &self.guards;
        if let Some(b) = &g.u_box {
            if b.len() != d {
                c.push("/guards/u_box", format!("expected {d} intervals"));
            }
            for (i, r) in b.iter().enumerate() {
                if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                    c.push(format!("/guards/u_box/{i}"), "interval must be finite with lo <= hi");
                }
            }
        }
        if let Some(v) = g.lambda_cap {
            if !(v.is_finite() && v >= 0.0) {
                c.push("/guards/lambda_cap", "must be finite and nonnegative");
            }
        }
        if let Some(v) = g.path_guard {
            if !(v.is_finite() && v > 0.0) {
                c.push("/guards/path_guard", "must be positive");
            }
        }
        if let Some(v) = g.budget {
            if v.is_nan() || v <= 0.0 {
                c.push("/guards/budget", "must be positive");
            }
        }
        if !c.0.is_empty() {
            return Err(ScenarioError::Schema(c.0));
        }
        let family = ImpulseFamily::new(comps, self.convention, n)
            .map_err(|e| ScenarioError::Schema(vec![SchemaError { pointer: "/impulse".into(), message: e.to_string() }]))?;
        Ok((model.expect("model validated"), family))
    }

    /// Builds the numerical objects of the scenario.
    pub fn lab(&self) -> Result<Lab> {
        let (model, family) = self.build_parts()?;
        let sp = stationary(&model)?;
        let r0 = potential(&model, &sp)?;
        Ok(Lab { scenario: self.clone(), model, family, sp, r0 })
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> std::result::Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    Scenario::from_json_str(&text)
}

/// Names of the shipped fixtures.
pub const BUILTIN_NAMES: [&str; 5] = ["alt2", "iid2", "m2q", "poisson2", "driftonly"];

fn builtin_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "alt2" => include_str!("../fixtures/alt2.json"),
        "iid2" => include_str!("../fixtures/iid2.json"),
        "m2q" => include_str!("../fixtures/m2q.json"),
        "poisson2" => include_str!("../fixtures/poisson2.json"),
        "driftonly" => include_str!("../fixtures/driftonly.json"),
        _ => return None,
    })
}

/// A shipped fixture by name (with or without the `.json` suffix).
pub fn builtin(name: &str) -> Option<Scenario> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    builtin_text(stem).map(|t| Scenario::from_json_str(t).expect("shipped fixture is valid"))
}

/// Loads a scenario from a file, falling back to a fixture of the same name.
pub fn load_scenario(spec: &str) -> std::result::Result<Scenario, ScenarioError> {
    let path = Path::new(spec);
    if path.exists() {
        return parse_scenario(path);
    }
    let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or(spec);
    match builtin(stem) {
        Some(s) => Ok(s),
        None => parse_scenario(path),
    }
}

/// A validated scenario with its switching model, impulse family, stationary
/// pair and potential operator.
#[derive(Debug, Clone)]
pub struct Lab {
    pub scenario: Scenario,
    pub model: SwitchingModel,
    pub family: ImpulseFamily,
    pub sp: StationaryPair,
    pub r0: PotentialOperator,
}

impl Lab {
    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn xi0(&self) -> &[f64] {
        &self.scenario.initial.xi0
    }

    pub fn x0(&self) -> usize {
        self.scenario.initial.x0
    }

    pub fn prelimit_setup(&self) -> PrelimitSetup<'_> {
        PrelimitSetup { model: &self.model, family: &self.family, xi0: self.xi0(), x0: self.x0() }
    }

    /// The condition checklist on the scenario's u-box.
    pub fn validate(&self, eps_grid: &[f64]) -> Result<ResidualReport> {
        validate_conditions(&self.family, &self.model, &self.sp, &self.scenario.u_box(), eps_grid, &crate::impulse::default_test_fn)
    }

    /// The full variant matching the scenario's convention.
    pub fn default_variant(&self) -> SigmaVariant {
        SigmaVariant::full_for(self.family.convention())
    }

    pub fn limit(&self, variant: SigmaVariant) -> LimitModel {
        LimitModel {
            model: self.model.clone(),
            family: self.family.clone(),
            sp: self.sp.clone(),
            r0: self.r0.clone(),
            variant,
            literal_lambda: false,
        }
    }

    /// Thinning cap: the configured one or twice the largest limit intensity
    /// on the u-box (at least 1).
    pub fn lambda_cap(&self) -> f64 {
        if let Some(c) = self.scenario.guards.lambda_cap {
            return c;
        }
        let grid = linalg::box_grid(&self.scenario.u_box(), linalg::default_per_axis(self.dim()));
        let sup = grid
            .iter()
            .map(|u| (0..self.model.n_states()).map(|x| self.sp.q_bar * self.sp.rho[x] * self.family.lambda0(u, x)).sum::<f64>())
            .fold(0.0, f64::max);
        (2.0 * sup).max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        for name in BUILTIN_NAMES {
            let s = builtin(name).unwrap();
            assert_eq!(s.name.as_deref(), Some(name));
            s.lab().unwrap();
        }
        let alt2 = builtin("alt2.json").unwrap();
        assert_eq!((alt2.n_states(), alt2.dimension), (2, 1));
    }

    #[test]
    fn fixtures_pass_the_checklist() {
        for name in BUILTIN_NAMES {
            let lab = builtin(name).unwrap().lab().unwrap();
            let r = lab.validate(&[0.4, 0.2, 0.1, 0.05]).unwrap();
            assert!(r.passed(), "{name}");
        }
    }

    fn alt2_value() -> serde_json::Value {
        serde_json::from_str(builtin_text("alt2").unwrap()).unwrap()
    }

    fn errors(v: serde_json::Value) -> Vec<SchemaError> {
        match Scenario::from_json_str(&v.to_string()) {
            Err(ScenarioError::Schema(e)) => e,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn row_sum_error_pointer() {
        let mut v = alt2_value();
        v["switching"]["P"][0] = serde_json::json!([0.0, 0.9]);
        let e = errors(v);
        assert_eq!(e[0].pointer, "/switching/P/0");
    }

    #[test]
    fn missing_seed_pointer() {
        let mut v = alt2_value();
        v.as_object_mut().unwrap().remove("seed");
        assert_eq!(errors(v)[0].pointer, "/seed");
    }

    #[test]
    fn type_error_pointer() {
        let mut v = alt2_value();
        v["initial"]["xi0"] = serde_json::json!("zero");
        assert_eq!(errors(v)[0].pointer, "/initial/xi0");
    }

    #[test]
    fn semantic_errors_are_collected() {
        let mut v = alt2_value();
        v["initial"]["x0"] = serde_json::json!(5);
        v["impulse"]["a1"]["values"] = serde_json::json!([[1.0]]);
        let e = errors(v);
        let ptrs: Vec<&str> = e.iter().map(|e| e.pointer.as_str()).collect();
        assert!(ptrs.contains(&"/initial/x0") && ptrs.contains(&"/impulse/a1/values"), "{ptrs:?}");
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(Scenario::from_json_str("{\"seed\": 1,"), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let mut v = alt2_value();
        v["switching"]["P"] = serde_json::json!([[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(errors(v)[0].pointer, "/switching/P");
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        for name in BUILTIN_NAMES {
            let s = builtin(name).unwrap();
            let again = Scenario::from_json_str(&s.canonical_json()).unwrap();
            assert_eq!(again, s);
            assert_eq!(again.hash(), s.hash());
        }
        // Key order does not change the hash.
        let v = alt2_value();
        let obj = v.as_object().unwrap();
        let mut reversed = String::from("{");
        let keys: Vec<&String> = obj.keys().rev().collect();
        for (i, k) in keys.iter().enumerate() {
            if i > 0 {
                reversed.push(',');
            }
            reversed.push_str(&format!("{}:{}", serde_json::to_string(k).unwrap(), obj[*k]));
        }
        reversed.push('}');
        assert_eq!(Scenario::from_json_str(&reversed).unwrap().hash(), builtin("alt2").unwrap().hash());
    }
}
