//! JSON problem format, its validation, and end-to-end synthesis of an
//! affine disturbance-feedback policy.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chance::{
    beta_ellipsoid, build_affine_data, ellipsoid_constraints, exp_bound_heuristic_t, separation_constraints,
    ExpBoundConstraint, PolytopicConstraint,
};
use crate::cost::{quadratic_objective, QuadraticCost, QuadraticObjective};
use crate::ellipsoidal::{build_lmi_data, verdict, EllipsoidalConstraint};
use crate::error::{Error, Result};
use crate::horizon::{discretize, stack_dynamics, HorizonMatrices, SystemModel};
use crate::icc::icc_constraints;
use crate::linalg::{from_rows, to_rows};
use crate::mc::HardConstraint;
use crate::policy::{PolicyLayout, PolicyParams, ThetaVector};
use crate::solver::{self, Constraint, ConvexProgram, LmiCoef, LinearMatrixInequality, SmoothConstraint, SolveReport, SolverOptions};
use crate::specfun::Probability;

pub const SCHEMA_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub horizon: usize,
    pub noise: NoiseSpec,
    pub x0: Vec<f64>,
    pub cost: CostSpec,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Discrete { a: Rows, b: Rows },
    /// Zero-order hold of `ẋ = Ac x + Bc u` with sampling time `h`.
    Continuous { ac: Rows, bc: Rows, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `w(t) ~ N(0, σ² I)` independently.
    Sigma2(f64),
    /// Full covariance of the stacked noise.
    SigmaBar(Rows),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// Time-invariant `Q`, `R` with terminal weight `q_final` (defaults to `Q`).
    Stationary { q: Rows, r: Rows, q_final: Option<Rows> },
    /// `Q(0) … Q(N)` and `R(0) … R(N−1)`.
    Stages { q: Vec<Rows>, r: Vec<Rows> },
    /// Full weight of `[x̄; ū]`.
    Full(Rows),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polytopic: Option<PolytopicSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipsoidal: Option<EllipsoidalSpec>,
    pub relaxation: RelaxationSpec,
}

/// `Tx x̄ + Tu ū ≤ y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopicSpec {
    pub tx: Rows,
    pub tu: Rows,
    pub y: Vec<f64>,
}

/// `(z − δ)ᵀ Ξ (z − δ) ≤ 1` with `z = [x̄; ū]`; `δ` defaults to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidalSpec {
    pub xi: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Separation,
    Ellipsoid,
    Expbound,
    Icc,
    Lmi,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Separation => "separation",
            Method::Ellipsoid => "ellipsoid",
            Method::Expbound => "expbound",
            Method::Icc => "icc",
            Method::Lmi => "lmi",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separation" => Ok(Method::Separation),
            "ellipsoid" => Ok(Method::Ellipsoid),
            "expbound" => Ok(Method::Expbound),
            "icc" => Ok(Method::Icc),
            "lmi" => Ok(Method::Lmi),
            other => Err(Error::Problem(format!("unknown relaxation method {other:?}"))),
        }
    }
}

/// Relaxation and its parameters. Separation takes `alpha` (split evenly)
/// or `alphas`; ellipsoid and lmi take `alpha`; expbound takes `alpha` and
/// optionally `t`; icc takes `beta` or `betas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
}

impl RelaxationSpec {
    pub fn with_alpha(method: Method, alpha: f64) -> Self {
        Self { method, alpha: Some(alpha), alphas: None, t: None, beta: None, betas: None }
    }
}

impl ProblemSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Problem(format!("at `{path}`: {}", e.into_inner()))
        })?;
        if spec.schema_version != SCHEMA_VERSION {
            return Err(Error::Problem(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                spec.schema_version
            )));
        }
        Ok(spec)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Replaces the method of every polytopic constraint, keeping its parameters.
    pub fn with_method(mut self, method: Method) -> Result<Self> {
        if method == Method::Lmi {
            return Err(Error::Problem("the lmi relaxation applies to ellipsoidal constraints only".into()));
        }
        for c in self.constraints.iter_mut().filter(|c| c.polytopic.is_some()) {
            c.relaxation.method = method;
        }
        Ok(self)
    }

    pub fn build(&self) -> Result<Problem> {
        let field = |what: &str, e: Error| Error::Problem(format!("{what}: {e}"));
        let (a, b) = match &self.system {
            SystemSpec::Discrete { a, b } => {
                (from_rows(a).map_err(|e| field("system.a", e))?, from_rows(b).map_err(|e| field("system.b", e))?)
            }
            SystemSpec::Continuous { ac, bc, h } => {
                let ac = from_rows(ac).map_err(|e| field("system.ac", e))?;
                let bc = from_rows(bc).map_err(|e| field("system.bc", e))?;
                if !(*h > 0.0) {
                    return Err(Error::Problem(format!("system.h = {h} must be positive")));
                }
                discretize(&ac, &bc, *h).map_err(|e| field("system", e))?
            }
        };
        let x0 = DVector::from_vec(self.x0.clone());
        let model = match &self.noise {
            NoiseSpec::Sigma2(s2) => SystemModel::with_iid_noise(a, b, *s2, x0, self.horizon),
            NoiseSpec::SigmaBar(rows) => {
                SystemModel::new(a, b, from_rows(rows).map_err(|e| field("noise.sigma_bar", e))?, x0, self.horizon)
            }
        }
        .map_err(|e| field("system/noise", e))?;
        let cost = match &self.cost {
            CostSpec::Stationary { q, r, q_final } => {
                let q = from_rows(q)?;
                let qf = match q_final {
                    Some(m) => from_rows(m)?,
                    None => q.clone(),
                };
                QuadraticCost::stationary(&q, &from_rows(r)?, &qf, self.horizon)
            }
            CostSpec::Stages { q, r } => {
                let q: Result<Vec<_>> = q.iter().map(|m| from_rows(m)).collect();
                let r: Result<Vec<_>> = r.iter().map(|m| from_rows(m)).collect();
                QuadraticCost::from_stage_weights(&q?, &r?)
            }
            CostSpec::Full(m) => QuadraticCost::new(from_rows(m)?),
        }
        .map_err(|e| field("cost", e))?;
        let nz = (self.horizon + 1) * model.n() + self.horizon * model.m();
        if cost.matrix().nrows() != nz {
            return Err(Error::Problem(format!("cost: weight has order {}, expected {nz}", cost.matrix().nrows())));
        }
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(k, c)| c.build(k, &model, nz).map_err(|e| field(&format!("constraints[{k}]"), e)))
            .collect::<Result<Vec<_>>>()?;
        let mats = stack_dynamics(&model);
        Ok(Problem { model, mats, cost, constraints, solver: self.solver })
    }
}

impl CostSpec {
    /// `Q(0) … Q(N)` and `R(0) … R(N−1)`; `None` for a full weight.
    pub fn stage_weights(&self, horizon: usize) -> Result<Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)>> {
        match self {
            CostSpec::Stationary { q, r, q_final } => {
                let q = from_rows(q)?;
                let qf = match q_final {
                    Some(m) => from_rows(m)?,
                    None => q.clone(),
                };
                let mut qs = vec![q; horizon];
                qs.push(qf);
                Ok(Some((qs, vec![from_rows(r)?; horizon])))
            }
            CostSpec::Stages { q, r } => Ok(Some((
                q.iter().map(|m| from_rows(m)).collect::<Result<_>>()?,
                r.iter().map(|m| from_rows(m)).collect::<Result<_>>()?,
            ))),
            CostSpec::Full(_) => Ok(None),
        }
    }
}

impl ConstraintSpec {
    fn build(&self, index: usize, model: &SystemModel, nz: usize) -> Result<ConstraintItem> {
        let name = self.name.clone().unwrap_or_else(|| format!("c{index}"));
        let r = &self.relaxation;
        let prob = |v: Option<f64>, what: &str| -> Result<Probability> {
            Probability::new(v.ok_or_else(|| Error::Problem(format!("method {} needs {what}", r.method)))?)
        };
        match (&self.polytopic, &self.ellipsoidal) {
            (Some(p), None) => {
                let nx = (model.horizon() + 1) * model.n();
                let tu = if p.tu.is_empty() { DMatrix::zeros(p.y.len(), nz - nx) } else { from_rows(&p.tu)? };
                let tx = if p.tx.is_empty() { DMatrix::zeros(p.y.len(), nx) } else { from_rows(&p.tx)? };
                let hard = PolytopicConstraint::new(tx, tu, DVector::from_vec(p.y.clone()))?;
                let rows = hard.rows();
                let per_row = |v: &Vec<f64>, what: &str| -> Result<()> {
                    if v.len() != rows {
                        return Err(Error::Problem(format!("{what} has {} entries for {rows} rows", v.len())));
                    }
                    Ok(())
                };
                let relax = match r.method {
                    Method::Separation => match (&r.alphas, r.alpha) {
                        (Some(a), None) => {
                            per_row(a, "alphas")?;
                            let a = a.iter().map(|v| Probability::new(*v)).collect::<Result<Vec<_>>>()?;
                            let total: f64 = a.iter().map(|p| p.value()).sum();
                            if total >= 1.0 {
                                return Err(Error::Problem(format!("alphas sum to {total}")));
                            }
                            Relaxation::Separation { alpha: total, levels: a }
                        }
                        (None, Some(a)) => Relaxation::Separation {
                            alpha: a,
                            levels: crate::chance::uniform_alphas(Probability::new(a)?, rows)?,
                        },
                        _ => return Err(Error::Problem("separation needs exactly one of alpha, alphas".into())),
                    },
                    Method::Ellipsoid => Relaxation::Ellipsoid(prob(r.alpha, "alpha")?),
                    Method::Expbound => {
                        if let Some(t) = &r.t {
                            per_row(t, "t")?;
                        }
                        Relaxation::ExpBound { alpha: prob(r.alpha, "alpha")?, t: r.t.clone() }
                    }
                    Method::Icc => match (&r.betas, r.beta) {
                        (Some(b), None) => {
                            per_row(b, "betas")?;
                            Relaxation::Icc(b.clone())
                        }
                        (None, Some(b)) => Relaxation::Icc(vec![b; rows]),
                        _ => return Err(Error::Problem("icc needs exactly one of beta, betas".into())),
                    },
                    Method::Lmi => {
                        return Err(Error::Problem("the lmi relaxation applies to ellipsoidal constraints".into()))
                    }
                };
                Ok(ConstraintItem { name, hard: HardKind::Polytopic(hard), relaxation: relax })
            }
            (None, Some(e)) => {
                let xi = from_rows(&e.xi)?;
                let delta = match &e.delta {
                    Some(d) => DVector::from_vec(d.clone()),
                    None => DVector::zeros(nz),
                };
                if xi.nrows() != nz {
                    return Err(Error::Problem(format!("xi has order {}, expected {nz}", xi.nrows())));
                }
                let hard = EllipsoidalConstraint::new(xi, delta)?;
                if r.method != Method::Lmi {
                    return Err(Error::Problem(format!("ellipsoidal constraints use lmi, not {}", r.method)));
                }
                Ok(ConstraintItem {
                    name,
                    hard: HardKind::Ellipsoidal(hard),
                    relaxation: Relaxation::Lmi(prob(r.alpha, "alpha")?),
                })
            }
            _ => Err(Error::Problem("give exactly one of polytopic, ellipsoidal".into())),
        }
    }
}

/// Validated relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum Relaxation {
    /// Per-row levels and their total, kept as given so it reads back exactly.
    Separation { alpha: f64, levels: Vec<Probability> },
    Ellipsoid(Probability),
    ExpBound { alpha: Probability, t: Option<Vec<f64>> },
    Icc(Vec<f64>),
    Lmi(Probability),
}

impl Relaxation {
    pub fn method(&self) -> Method {
        match self {
            Relaxation::Separation { .. } => Method::Separation,
            Relaxation::Ellipsoid(_) => Method::Ellipsoid,
            Relaxation::ExpBound { .. } => Method::Expbound,
            Relaxation::Icc(_) => Method::Icc,
            Relaxation::Lmi(_) => Method::Lmi,
        }
    }

    /// Target violation probability, when the relaxation guarantees one.
    pub fn alpha(&self) -> Option<f64> {
        match self {
            Relaxation::Separation { alpha, .. } => Some(*alpha),
            Relaxation::Ellipsoid(a) | Relaxation::Lmi(a) | Relaxation::ExpBound { alpha: a, .. } => Some(a.value()),
            Relaxation::Icc(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HardKind {
    Polytopic(PolytopicConstraint),
    Ellipsoidal(EllipsoidalConstraint),
}

impl HardKind {
    pub fn as_hard(&self) -> &dyn HardConstraint {
        match self {
            HardKind::Polytopic(p) => p,
            HardKind::Ellipsoidal(e) => e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintItem {
    pub name: String,
    pub hard: HardKind,
    pub relaxation: Relaxation,
}

/// A validated problem ready for synthesis.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SystemModel,
    pub mats: HorizonMatrices,
    pub cost: QuadraticCost,
    pub constraints: Vec<ConstraintItem>,
    pub solver: SolverOptions,
}

/// Smooth constraint over the first `base` variables of a longer vector.
struct Padded {
    inner: Arc<dyn SmoothConstraint>,
    base: usize,
    extra: usize,
}

impl SmoothConstraint for Padded {
    fn dim(&self) -> usize {
        self.base + self.extra
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(&x.rows(0, self.base).into_owned())
    }
    fn derivatives(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (v, g, h) = self.inner.derivatives(&x.rows(0, self.base).into_owned());
        let n = self.dim();
        let mut gg = DVector::zeros(n);
        gg.rows_mut(0, self.base).copy_from(&g);
        let mut hh = DMatrix::zeros(n, n);
        hh.view_mut((0, 0), (self.base, self.base)).copy_from(&h);
        (v, gg, hh)
    }
    fn name(&self) -> &str {
        self.inner.name()
    }
}

fn smooth(inner: Arc<dyn SmoothConstraint>, extra: usize) -> Constraint {
    if extra == 0 {
        return Constraint::Smooth(inner);
    }
    let base = inner.dim();
    Constraint::Smooth(Arc::new(Padded { inner, base, extra }))
}

/// Convex program over `(θ̄, λ₁, …)` with one multiplier per LMI.
#[derive(Debug, Clone)]
pub struct AssembledProgram {
    pub program: ConvexProgram,
    pub layout: PolicyLayout,
    pub lmi_count: usize,
}

impl Problem {
    pub fn layout(&self) -> PolicyLayout {
        PolicyLayout::of(&self.model)
    }

    pub fn with_x0(&self, x0: DVector<f64>) -> Result<Self> {
        let model = self.model.with_x0(x0)?;
        let mats = stack_dynamics(&model);
        Ok(Self { model, mats, ..self.clone() })
    }

    pub fn assemble(&self) -> Result<AssembledProgram> {
        let layout = self.layout();
        let nth = layout.dim();
        let n_lmi = self.constraints.iter().filter(|c| matches!(c.relaxation, Relaxation::Lmi(_))).count();
        let total = nth + n_lmi;
        let base = quadratic_objective(&self.cost, &self.model, &self.mats)?;
        let mut objective = QuadraticObjective {
            hessian: DMatrix::zeros(total, total),
            linear: DVector::zeros(total),
            constant: base.constant,
        };
        objective.hessian.view_mut((0, 0), (nth, nth)).copy_from(&base.hessian);
        objective.linear.rows_mut(0, nth).copy_from(&base.linear);

        let mut constraints = Vec::new();
        let mut start = DVector::zeros(total);
        let mut lmi_index = 0;
        let zero = PolicyParams::zero(layout);
        for item in &self.constraints {
            match (&item.hard, &item.relaxation) {
                (HardKind::Polytopic(p), relax) => {
                    let data = build_affine_data(p, &self.model, &self.mats)?;
                    match relax {
                        Relaxation::Separation { levels: alphas, .. } => constraints.extend(
                            separation_constraints(&data, alphas)?.into_iter().map(|s| Constraint::Soc(s.padded(n_lmi))),
                        ),
                        Relaxation::Ellipsoid(alpha) => constraints.extend(
                            ellipsoid_constraints(&data, *alpha)?.into_iter().map(|s| Constraint::Soc(s.padded(n_lmi))),
                        ),
                        Relaxation::ExpBound { alpha, t } => {
                            let t = t.clone().unwrap_or_else(|| exp_bound_heuristic_t(&data, &zero));
                            constraints.push(smooth(Arc::new(ExpBoundConstraint::new(&data, t, *alpha)?), n_lmi));
                        }
                        Relaxation::Icc(budgets) => constraints
                            .extend(icc_constraints(&data, budgets)?.into_iter().map(|c| smooth(Arc::new(c), n_lmi))),
                        Relaxation::Lmi(_) => unreachable!("rejected at validation"),
                    }
                }
                (HardKind::Ellipsoidal(e), Relaxation::Lmi(alpha)) => {
                    let data = build_lmi_data(e, *alpha, &self.model, &self.mats)?;
                    let lmi = data.to_lmi();
                    let mut coefs = lmi.coefs;
                    let lam = coefs.pop().expect("multiplier coefficient");
                    coefs.extend(std::iter::repeat_n(LmiCoef::Zero, n_lmi));
                    coefs[nth + lmi_index] = lam;
                    constraints.push(Constraint::Lmi(LinearMatrixInequality::new(lmi.f0, coefs)?));
                    let v = verdict(&data.xi(&zero), &data.s(&zero))?;
                    start[nth + lmi_index] = v.witness.unwrap_or(0.5);
                    lmi_index += 1;
                }
                (HardKind::Ellipsoidal(_), _) => unreachable!("rejected at validation"),
            }
        }
        let program = ConvexProgram::new(objective, constraints)?.with_start(start)?;
        Ok(AssembledProgram { program, layout, lmi_count: n_lmi })
    }

    /// β used by each constraint's tightening, for reporting.
    pub fn betas(&self) -> Result<Vec<Option<f64>>> {
        self.constraints
            .iter()
            .map(|c| match (&c.hard, &c.relaxation) {
                (HardKind::Polytopic(p), Relaxation::Ellipsoid(a)) => {
                    Ok(Some(beta_ellipsoid(*a, p.rows(), self.model.noise_dim())?))
                }
                (HardKind::Ellipsoidal(e), Relaxation::Lmi(a)) => {
                    Ok(Some(beta_ellipsoid(*a, e.xi.nrows(), self.model.noise_dim())?))
                }
                _ => Ok(None),
            })
            .collect()
    }
}

/// Result of [`synthesize`]; `policy` is set when the solve is optimal.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub policy: Option<PolicyParams>,
    pub report: SolveReport,
    /// LMI multipliers at the solution.
    pub lambdas: Vec<f64>,
}

pub fn synthesize(problem: &Problem) -> Result<Synthesis> {
    synthesize_with(problem, &problem.solver)
}

pub fn synthesize_with(problem: &Problem, opts: &SolverOptions) -> Result<Synthesis> {
    let assembled = problem.assemble()?;
    let report = solver::solve(&assembled.program, opts)?;
    let nth = assembled.layout.dim();
    let (policy, lambdas) = if report.is_optimal() {
        let x = report.x();
        let theta = ThetaVector::new(x.rows(0, nth).into_owned());
        (Some(PolicyParams::unflatten(assembled.layout, &theta)?), x.iter().skip(nth).copied().collect())
    } else {
        (None, Vec::new())
    };
    Ok(Synthesis { policy, report, lambdas })
}

/// Serialized policy: `ū = Ḡ w̄ + d̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub dbar: Vec<f64>,
    pub gbar: Rows,
}

impl PolicyFile {
    pub fn from_policy(p: &PolicyParams) -> Self {
        let l = p.layout();
        Self {
            schema_version: SCHEMA_VERSION,
            n: l.n,
            m: l.m,
            horizon: l.horizon,
            dbar: p.dbar().iter().copied().collect(),
            gbar: to_rows(p.gbar()),
        }
    }

    pub fn to_policy(&self) -> Result<PolicyParams> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Problem(format!("policy schema_version {} is not supported", self.schema_version)));
        }
        let layout = PolicyLayout::new(self.n, self.m, self.horizon);
        let g = if self.gbar.is_empty() {
            DMatrix::zeros(layout.input_dim(), layout.noise_dim())
        } else {
            from_rows(&self.gbar)?
        };
        PolicyParams::new(layout, g, DVector::from_vec(self.dbar.clone()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| {
                let path = e.path().to_string();
                Error::Problem(format!("policy at `{path}`: {}", e.into_inner()))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec() -> ProblemSpec {
        ProblemSpec {
            schema_version: 1,
            system: SystemSpec::Discrete { a: vec![vec![1.0]], b: vec![vec![1.0]] },
            horizon: 2,
            noise: NoiseSpec::Sigma2(0.01),
            x0: vec![1.0],
            cost: CostSpec::Stationary { q: vec![vec![1.0]], r: vec![vec![1.0]], q_final: None },
            constraints: vec![ConstraintSpec {
                name: Some("u0".into()),
                polytopic: Some(PolytopicSpec {
                    tx: vec![vec![0.0; 3]],
                    tu: vec![vec![-1.0, 0.0]],
                    y: vec![0.2],
                }),
                ellipsoidal: None,
                relaxation: RelaxationSpec::with_alpha(Method::Separation, 0.1),
            }],
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn json_round_trip() {
        let s = scalar_spec();
        let back = ProblemSpec::from_json_str(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn unknown_fields_are_reported_with_path() {
        let text = scalar_spec().to_json().replace("\"q_final\"", "\"q_fnal\"");
        let err = ProblemSpec::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("cost"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn wrong_schema_version() {
        let text = scalar_spec().to_json().replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(ProblemSpec::from_json_str(&text).is_err());
    }

    #[test]
    fn synthesizes_scalar_problem() {
        let p = scalar_spec().build().unwrap();
        let s = synthesize(&p).unwrap();
        assert!(s.report.is_optimal(), "{:?}", s.report.status);
        // −u(0) ≤ 0.2 with deterministic u(0): LQ wants u(0) < −0.2.
        let d0 = s.policy.unwrap().dbar()[0];
        assert!((d0 + 0.2).abs() < 1e-6, "d0 = {d0}");
    }

    #[test]
    fn validation_errors() {
        let mut s = scalar_spec();
        s.constraints[0].relaxation.alpha = None;
        assert!(s.build().is_err());
        let mut s = scalar_spec();
        s.constraints[0].relaxation.method = Method::Lmi;
        assert!(s.build().is_err());
        let mut s = scalar_spec();
        s.x0 = vec![1.0, 2.0];
        assert!(s.build().is_err());
    }

    #[test]
    fn policy_file_round_trip() {
        let p = scalar_spec().build().unwrap();
        let s = synthesize(&p).unwrap();
        let pol = s.policy.unwrap();
        let f = PolicyFile::from_policy(&pol);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(PolicyFile::from_json_str(&text).unwrap().to_policy().unwrap(), pol);
    }
}
