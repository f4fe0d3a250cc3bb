//! Primal log-barrier interior-point method for the convex programs built
//! by the other modules: a quadratic objective with linear, second-order
//! cone, smooth convex and linear-matrix-inequality constraints.
//!
//! Phase 1 minimizes a common slack `s` over the shifted constraints
//! (`f ≤ s`, `mean + β‖y‖ ≤ s`, `F(x) + sI ⪰ 0`) and decides feasibility
//! from its sign. Phase 2 follows the central path of
//! `t·f0(x) + φ(x)` with `t` growing geometrically.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chance::SocConstraint;
use crate::cost::QuadraticObjective;
use crate::error::{dim_err, Error, Result};
use crate::linalg;

/// Convex scalar constraint `f(x) ≤ 0` with exact first and second
/// derivatives. `f` must be finite on all of ℝⁿ.
pub trait SmoothConstraint: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    /// `(f, ∇f, ∇²f)` at `x`.
    fn derivatives(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>);
    fn name(&self) -> &str {
        "smooth"
    }
}

/// Coefficient `Fᵢ` of one variable in an LMI.
#[derive(Debug, Clone, PartialEq)]
pub enum LmiCoef {
    Zero,
    /// `u vᵀ + v uᵀ`.
    Rank2 { u: DVector<f64>, v: DVector<f64> },
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl LmiCoef {
    fn add_to(&self, m: &mut DMatrix<f64>, x: f64) {
        if x == 0.0 {
            return;
        }
        match self {
            LmiCoef::Zero => {}
            LmiCoef::Rank2 { u, v } => {
                m.ger(x, u, v, 1.0);
                m.ger(x, v, u, 1.0);
            }
            LmiCoef::Diagonal(d) => {
                for (i, di) in d.iter().enumerate() {
                    m[(i, i)] += x * di;
                }
            }
            LmiCoef::Dense(f) => *m += f * x,
        }
    }

    fn order(&self) -> Option<usize> {
        match self {
            LmiCoef::Zero => None,
            LmiCoef::Rank2 { u, .. } => Some(u.len()),
            LmiCoef::Diagonal(d) => Some(d.len()),
            LmiCoef::Dense(f) => Some(f.nrows()),
        }
    }
}

/// `F(x) = F0 + Σᵢ xᵢ Fᵢ ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMatrixInequality {
    pub f0: DMatrix<f64>,
    pub coefs: Vec<LmiCoef>,
}

impl LinearMatrixInequality {
    pub fn new(f0: DMatrix<f64>, coefs: Vec<LmiCoef>) -> Result<Self> {
        let p = f0.nrows();
        if f0.ncols() != p || !linalg::is_symmetric(&f0, 1e-12) {
            return Err(dim_err("LMI constant term must be square and symmetric"));
        }
        for c in &coefs {
            if let Some(q) = c.order() {
                if q != p {
                    return Err(dim_err(format!("LMI coefficient of order {q}, expected {p}")));
                }
            }
            if let LmiCoef::Rank2 { u, v } = c {
                if v.len() != u.len() {
                    return Err(dim_err("rank-two coefficient with unequal factors"));
                }
            }
        }
        Ok(Self { f0, coefs })
    }

    pub fn order(&self) -> usize {
        self.f0.nrows()
    }

    pub fn matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (c, xi) in self.coefs.iter().zip(x.iter()) {
            c.add_to(&mut m, *xi);
        }
        m
    }

    /// `−log det F(x)` with its gradient and Hessian; `None` unless `F(x) ≻ 0`.
    pub fn log_det_barrier(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        if x.len() != self.coefs.len() {
            return None;
        }
        let d = self.barrier(x, None, 2)?;
        Some((d.value, d.grad, d.hess))
    }

    /// `−log det(F(x) + sI)` and, optionally, its gradient and Hessian over
    /// `x` (and `s` appended last when `shift` is given). `None` outside the
    /// positive definite cone.
    fn barrier(&self, x: &DVector<f64>, shift: Option<f64>, order: u8) -> Option<Derivs> {
        let mut m = self.matrix(x);
        if let Some(s) = shift {
            for i in 0..m.nrows() {
                m[(i, i)] += s;
            }
        }
        let chol = m.cholesky()?;
        let value = -2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !value.is_finite() {
            return None;
        }
        if order == 0 {
            return Some(Derivs::value(value));
        }
        let p = self.order();
        let w = chol.inverse();
        let ones = LmiCoef::Diagonal(DVector::from_element(p, 1.0));
        let mut coefs: Vec<&LmiCoef> = self.coefs.iter().collect();
        if shift.is_some() {
            coefs.push(&ones);
        }
        let (grad, hess) = logdet_derivatives(&w, &coefs);
        Some(Derivs { value, grad, hess })
    }
}

/// Gradient `−tr(W Fᵢ)` and Hessian `tr(W Fᵢ W Fⱼ)` of `−log det` with
/// `W = F⁻¹`.
fn logdet_derivatives(w: &DMatrix<f64>, coefs: &[&LmiCoef]) -> (DVector<f64>, DMatrix<f64>) {
    let k = coefs.len();
    let p = w.nrows();
    let mut grad = DVector::zeros(k);
    let mut hess = DMatrix::zeros(k, k);

    let rank2: Vec<usize> = (0..k).filter(|&i| matches!(coefs[i], LmiCoef::Rank2 { .. })).collect();
    let diag: Vec<usize> = (0..k).filter(|&i| matches!(coefs[i], LmiCoef::Diagonal(_))).collect();
    let dense: Vec<usize> = (0..k).filter(|&i| matches!(coefs[i], LmiCoef::Dense(_))).collect();

    let mut u = DMatrix::zeros(p, rank2.len());
    let mut v = DMatrix::zeros(p, rank2.len());
    for (c, &i) in rank2.iter().enumerate() {
        if let LmiCoef::Rank2 { u: ui, v: vi } = coefs[i] {
            u.set_column(c, ui);
            v.set_column(c, vi);
        }
    }
    let mut dmat = DMatrix::zeros(p, diag.len());
    for (c, &i) in diag.iter().enumerate() {
        if let LmiCoef::Diagonal(d) = coefs[i] {
            dmat.set_column(c, d);
        }
    }
    let wu = w * &u;
    let wv = w * &v;
    let wdiag = w.diagonal();

    for (c, &i) in rank2.iter().enumerate() {
        grad[i] = -2.0 * wu.column(c).dot(&v.column(c));
    }
    for (c, &i) in diag.iter().enumerate() {
        grad[i] = -wdiag.dot(&dmat.column(c));
    }
    for &i in &dense {
        if let LmiCoef::Dense(f) = coefs[i] {
            grad[i] = -w.component_mul(f).sum();
        }
    }

    // rank-two block: 2 (A∘B + C∘Cᵀ)
    let a = u.transpose() * &wu;
    let b = v.transpose() * &wv;
    let cm = u.transpose() * &wv;
    let hrr = (a.component_mul(&b) + cm.component_mul(&cm.transpose())) * 2.0;
    // rank-two × diagonal: 2 Σ_r (Wv)_r (Wu)_r d_r
    let e = wv.component_mul(&wu).transpose() * &dmat * 2.0;
    // diagonal × diagonal: dᵢᵀ (W∘W) dⱼ
    let hdd = dmat.transpose() * w.component_mul(w) * &dmat;
    for (a_, &i) in rank2.iter().enumerate() {
        for (b_, &j) in rank2.iter().enumerate() {
            hess[(i, j)] = hrr[(a_, b_)];
        }
        for (b_, &j) in diag.iter().enumerate() {
            hess[(i, j)] = e[(a_, b_)];
            hess[(j, i)] = e[(a_, b_)];
        }
    }
    for (a_, &i) in diag.iter().enumerate() {
        for (b_, &j) in diag.iter().enumerate() {
            hess[(i, j)] = hdd[(a_, b_)];
        }
    }
    for &i in &dense {
        let LmiCoef::Dense(fi) = coefs[i] else { continue };
        let z = w * fi * w;
        for j in 0..k {
            let h = match coefs[j] {
                LmiCoef::Zero => 0.0,
                LmiCoef::Rank2 { u, v } => 2.0 * u.dot(&(&z * v)),
                LmiCoef::Diagonal(d) => z.diagonal().dot(d),
                LmiCoef::Dense(fj) => z.component_mul(fj).sum(),
            };
            hess[(i, j)] = h;
            hess[(j, i)] = h;
        }
    }
    (grad, hess)
}

/// One constraint of a [`ConvexProgram`]; each is `≤ 0` when satisfied.
#[derive(Clone)]
pub enum Constraint {
    /// `a0 + aᵀx ≤ 0`.
    Linear { a0: f64, a: DVector<f64> },
    Soc(SocConstraint),
    Smooth(Arc<dyn SmoothConstraint>),
    Lmi(LinearMatrixInequality),
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Linear { a0, a } => f.debug_struct("Linear").field("a0", a0).field("a", a).finish(),
            Constraint::Soc(s) => f.debug_tuple("Soc").field(s).finish(),
            Constraint::Smooth(s) => write!(f, "Smooth({})", s.name()),
            Constraint::Lmi(l) => write!(f, "Lmi(order {})", l.order()),
        }
    }
}

impl Constraint {
    /// Violation measure; `≤ 0` when satisfied. For an LMI this is
    /// `−λ_min(F(x))`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Constraint::Linear { a0, a } => a0 + a.dot(x),
            Constraint::Soc(s) => s.value(x),
            Constraint::Smooth(s) => s.value(x),
            Constraint::Lmi(l) => -linalg::min_eigenvalue(&l.matrix(x)),
        }
    }

    /// Barrier parameter contributed to the duality-gap bound.
    pub fn degree(&self) -> f64 {
        match self {
            Constraint::Soc(s) if !s.is_linear() => 2.0,
            Constraint::Lmi(l) => l.order() as f64,
            _ => 1.0,
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Constraint::Linear { a, .. } => Some(a.len()),
            Constraint::Soc(s) => Some(s.dim()),
            Constraint::Smooth(s) => Some(s.dim()),
            Constraint::Lmi(l) => Some(l.coefs.len()),
        }
    }

    /// Barrier of the constraint shifted by `s` (phase 1) or unshifted.
    fn barrier(&self, x: &DVector<f64>, shift: Option<f64>, order: u8) -> Option<Derivs> {
        let s = shift.unwrap_or(0.0);
        let n = x.len();
        let nz = n + usize::from(shift.is_some());
        match self {
            Constraint::Linear { a0, a } => {
                let mut g = DVector::zeros(nz);
                g.rows_mut(0, n).copy_from(&(-a));
                scalar_barrier(s - a0 - a.dot(x), g, None, shift.is_some(), order)
            }
            Constraint::Soc(c) => {
                let tau = s - c.row.mean(x);
                if c.is_linear() {
                    let mut g = DVector::zeros(nz);
                    g.rows_mut(0, n).copy_from(&(-&c.row.a));
                    return scalar_barrier(tau, g, None, shift.is_some(), order);
                }
                if tau <= 0.0 {
                    return None;
                }
                let y = c.row.noise(x);
                let b2 = c.beta * c.beta;
                let q = tau * tau - b2 * y.norm_squared();
                if !(q > 0.0) {
                    return None;
                }
                let value = -q.ln();
                if order == 0 {
                    return Some(Derivs::value(value));
                }
                // ∇τ = (−a, 1); ∇q = 2τ∇τ − 2β²Yᵀy; ∇²q = 2∇τ∇τᵀ − 2β²YᵀY.
                let mut dtau = DVector::zeros(nz);
                dtau.rows_mut(0, n).copy_from(&(-&c.row.a));
                if shift.is_some() {
                    dtau[n] = 1.0;
                }
                let yty = c.row.y.transpose() * &y;
                let mut dq = &dtau * (2.0 * tau);
                dq.rows_mut(0, n).axpy(-2.0 * b2, &yty, 1.0);
                let mut hess = DMatrix::zeros(nz, nz);
                hess.ger(1.0 / (q * q), &dq, &dq, 0.0);
                hess.ger(-2.0 / q, &dtau, &dtau, 1.0);
                let mut xx = hess.view_mut((0, 0), (n, n));
                xx.gemm_tr(2.0 * b2 / q, &c.row.y, &c.row.y, 1.0);
                Some(Derivs { value, grad: dq / (-q), hess })
            }
            Constraint::Smooth(c) => {
                if order == 0 {
                    let v = c.value(x);
                    return scalar_value(s - v);
                }
                let (v, g, h) = c.derivatives(x);
                let mut du = DVector::zeros(nz);
                du.rows_mut(0, n).copy_from(&(-g));
                scalar_barrier(s - v, du, Some(h), shift.is_some(), order)
            }
            Constraint::Lmi(l) => l.barrier(x, shift, order),
        }
    }
}

/// `Σ wᵢ vᵢvᵢᵀ` kept as columns, plus `SᵀS` over the leading block.
/// Sparse rows of `S` go straight into the Hessian; the rest are stacked
/// for one dense product.
struct LowRank {
    nz: usize,
    n: usize,
    pos: Vec<DVector<f64>>,
    neg: Vec<DVector<f64>>,
    rows: Vec<f64>,
    row_count: usize,
    sparse: Vec<(usize, f64)>,
    sparse_ends: Vec<usize>,
}

impl LowRank {
    fn new(nz: usize, n: usize) -> Self {
        Self {
            nz,
            n,
            pos: Vec::new(),
            neg: Vec::new(),
            rows: Vec::new(),
            row_count: 0,
            sparse: Vec::new(),
            sparse_ends: Vec::new(),
        }
    }

    fn rank1(&mut self, w: f64, v: &DVector<f64>) {
        let col = v * w.abs().sqrt();
        if w >= 0.0 {
            self.pos.push(col);
        } else {
            self.neg.push(col);
        }
    }

    /// Adds `scale · YᵀY` with `scale ≥ 0`.
    fn gram(&mut self, scale: f64, y: &DMatrix<f64>) {
        let r = scale.sqrt();
        for i in 0..y.nrows() {
            let row = y.row(i);
            let nnz = row.iter().filter(|v| **v != 0.0).count();
            if nnz == 0 {
                continue;
            }
            if 4 * nnz <= self.n {
                self.sparse.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, v * r)));
                self.sparse_ends.push(self.sparse.len());
            } else {
                self.rows.extend(row.iter().map(|v| v * r));
                self.row_count += 1;
            }
        }
    }

    fn accumulate(self, hess: &mut DMatrix<f64>) {
        debug_assert_eq!(hess.nrows(), self.nz);
        for (cols, sign) in [(&self.pos, 1.0), (&self.neg, -1.0)] {
            if !cols.is_empty() {
                let u = DMatrix::from_columns(cols);
                hess.gemm(sign, &u, &u.transpose(), 1.0);
            }
        }
        if self.row_count > 0 {
            let st = DMatrix::from_column_slice(self.n, self.row_count, &self.rows);
            let mut xx = hess.view_mut((0, 0), (self.n, self.n));
            xx.gemm(1.0, &st, &st.transpose(), 1.0);
        }
        let mut start = 0;
        for &end in &self.sparse_ends {
            let entries = &self.sparse[start..end];
            for &(j, vj) in entries {
                for &(i, vi) in entries {
                    hess[(i, j)] += vi * vj;
                }
            }
            start = end;
        }
    }
}

/// Value and gradient of the cone barrier; its Hessian goes to `factors`.
fn soc_barrier_factors(
    c: &SocConstraint,
    x: &DVector<f64>,
    shift: Option<f64>,
    factors: &mut LowRank,
) -> Option<(f64, DVector<f64>)> {
    let n = x.len();
    let tau = shift.unwrap_or(0.0) - c.row.mean(x);
    if tau <= 0.0 {
        return None;
    }
    let y = c.row.noise(x);
    let b2 = c.beta * c.beta;
    let q = tau * tau - b2 * y.norm_squared();
    if !(q > 0.0) {
        return None;
    }
    let mut dtau = DVector::zeros(factors.nz);
    dtau.rows_mut(0, n).copy_from(&(-&c.row.a));
    if shift.is_some() {
        dtau[n] = 1.0;
    }
    let yty = c.row.y.transpose() * &y;
    let mut dq = &dtau * (2.0 * tau);
    dq.rows_mut(0, n).axpy(-2.0 * b2, &yty, 1.0);
    factors.rank1(1.0 / (q * q), &dq);
    factors.rank1(-2.0 / q, &dtau);
    factors.gram(2.0 * b2 / q, &c.row.y);
    Some((-q.ln(), dq / (-q)))
}

/// Phase-1 trust region `‖x − center‖² < radius2`.
struct Ball {
    center: DVector<f64>,
    radius2: f64,
}

struct Derivs {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Derivs {
    fn value(value: f64) -> Self {
        Self { value, grad: DVector::zeros(0), hess: DMatrix::zeros(0, 0) }
    }
}

fn scalar_value(u: f64) -> Option<Derivs> {
    if u > 0.0 && u.is_finite() {
        Some(Derivs::value(-u.ln()))
    } else {
        None
    }
}

/// `−log u` where `u = s − f(x)` has gradient `du` and Hessian `−∇²f`.
fn scalar_barrier(u: f64, mut du: DVector<f64>, f_hess: Option<DMatrix<f64>>, shifted: bool, order: u8) -> Option<Derivs> {
    let d = scalar_value(u)?;
    if order == 0 {
        return Some(d);
    }
    let n = du.len();
    if shifted {
        du[n - 1] = 1.0;
    }
    let mut hess = DMatrix::zeros(n, n);
    hess.ger(1.0 / (u * u), &du, &du, 0.0);
    if let Some(h) = f_hess {
        let k = h.nrows();
        let mut xx = hess.view_mut((0, 0), (k, k));
        xx += &h / u;
    }
    Some(Derivs { value: d.value, grad: du / (-u), hess })
}

/// Quadratic objective plus convex constraints over `dim` variables.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub dim: usize,
    pub objective: QuadraticObjective,
    pub constraints: Vec<Constraint>,
    /// Phase-1 starting point; the origin when absent.
    pub start: Option<DVector<f64>>,
}

impl ConvexProgram {
    pub fn new(objective: QuadraticObjective, constraints: Vec<Constraint>) -> Result<Self> {
        let dim = objective.linear.len();
        if objective.hessian.shape() != (dim, dim) {
            return Err(dim_err("objective Hessian does not match its gradient"));
        }
        for (k, c) in constraints.iter().enumerate() {
            if c.dim() != Some(dim) {
                return Err(dim_err(format!("constraint {k} acts on {:?} variables, expected {dim}", c.dim())));
            }
        }
        Ok(Self { dim, objective, constraints, start: None })
    }

    pub fn with_start(mut self, start: DVector<f64>) -> Result<Self> {
        if start.len() != self.dim {
            return Err(dim_err("start point has the wrong length"));
        }
        self.start = Some(start);
        Ok(self)
    }

    /// Largest constraint value at `x` (`−∞` without constraints).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraints.iter().map(|c| c.value(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn barrier_degree(&self) -> f64 {
        self.constraints.iter().map(Constraint::degree).sum()
    }

    /// Sum of constraint barriers at `z`; phase 1 passes `(x, s)` and the
    /// trust ball that keeps the slack problem bounded.
    fn barrier(&self, z: &DVector<f64>, phase1: Option<&Ball>, order: u8) -> Option<Derivs> {
        let nz = z.len();
        let (x, shift) = if phase1.is_some() {
            (z.rows(0, nz - 1).into_owned(), Some(z[nz - 1]))
        } else {
            (z.clone(), None)
        };
        let mut total = if order == 0 {
            Derivs::value(0.0)
        } else {
            Derivs { value: 0.0, grad: DVector::zeros(nz), hess: DMatrix::zeros(nz, nz) }
        };
        // Second-order cone curvature is gathered as low-rank factors and
        // formed in one product; that dominates the cost on large programs.
        let mut factors = LowRank::new(nz, x.len());
        for c in &self.constraints {
            if order > 0 {
                if let Constraint::Soc(soc) = c {
                    if !soc.is_linear() {
                        let (value, grad) = soc_barrier_factors(soc, &x, shift, &mut factors)?;
                        total.value += value;
                        total.grad += grad;
                        continue;
                    }
                }
            }
            let d = c.barrier(&x, shift, order)?;
            total.value += d.value;
            if order > 0 {
                total.grad += d.grad;
                total.hess += d.hess;
            }
        }
        if order > 0 {
            factors.accumulate(&mut total.hess);
        }
        if let (Some(s), Some(ball)) = (shift, phase1) {
            // Keeps the slack problem bounded below: s > −1.
            let u = s + 1.0;
            let mut du = DVector::zeros(nz);
            du[nz - 1] = 1.0;
            let d = scalar_barrier(u, du, None, false, order)?;
            total.value += d.value;
            if order > 0 {
                total.grad += d.grad;
                total.hess += d.hess;
            }
            // ‖x − c‖² < R², so directions the constraints leave free stay bounded.
            let dx = &x - &ball.center;
            let q = ball.radius2 - dx.norm_squared();
            if !(q > 0.0) {
                return None;
            }
            total.value -= q.ln();
            if order > 0 {
                let n = nz - 1;
                let mut gq = DVector::zeros(nz);
                gq.rows_mut(0, n).copy_from(&(&dx * -2.0));
                total.grad -= &gq / q;
                total.hess.ger(1.0 / (q * q), &gq, &gq, 1.0);
                for i in 0..n {
                    total.hess[(i, i)] += 2.0 / q;
                }
            }
        }
        if total.value.is_finite() {
            Some(total)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub t0: f64,
    pub mu: f64,
    /// Stop when `ν/t` drops below this.
    pub gap_tol: f64,
    /// Phase-1 slack must fall below `−feas_tol` for a feasible verdict.
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            t0: 1.0,
            mu: 10.0,
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            kkt_tol: 1e-8,
            max_outer: 60,
            max_newton: 200,
            armijo: 0.3,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max_iter",
        })
    }
}

/// One centering step of the barrier path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierStep {
    pub t: f64,
    pub objective: f64,
    pub gap_bound: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub theta_star: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub phase1_slack: f64,
    pub phase1_iters: usize,
    pub barrier_path: Vec<BarrierStep>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_star)
    }
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Outcome of the slack minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result {
    pub feasible: bool,
    pub x0: DVector<f64>,
    pub slack: f64,
    pub iterations: usize,
}

struct Centering {
    z: DVector<f64>,
    iters: usize,
}

/// Damped Newton on `t·c(z) + φ(z)` where `c` is the linear/quadratic
/// outer objective.
fn center<F>(
    program: &ConvexProgram,
    phase1: Option<&Ball>,
    mut z: DVector<f64>,
    t: f64,
    outer: F,
    opts: &SolverOptions,
    stationarity_tol: f64,
) -> Result<Centering>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
{
    for iter in 0..opts.max_newton {
        let b = program
            .barrier(&z, phase1, 2)
            .ok_or_else(|| Error::Numerical("iterate left the barrier domain".into()))?;
        let (_, g0, h0) = outer(&z);
        let grad = &g0 * t + &b.grad;
        let hess = &h0 * t + &b.hess;
        let scale = 1.0 + g0.amax();
        if grad.amax() / (t * scale) <= stationarity_tol {
            return Ok(Centering { z, iters: iter });
        }
        let step = linalg::solve_spd_jitter(&hess, &(-&grad))?;
        let dec2 = -grad.dot(&step);
        if !(dec2 > 0.0) || dec2 * 0.5 <= 1e-14 {
            return Ok(Centering { z, iters: iter });
        }
        // The outer objective is quadratic, so its change along the step is
        // exact; only the barrier change is formed by subtraction.
        let slope = g0.dot(&step);
        let curv = step.dot(&(&h0 * &step));
        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let cand = &z + &step * eta;
            if let Some(bc) = program.barrier(&cand, phase1, 0) {
                let change = t * (eta * slope + 0.5 * eta * eta * curv) + (bc.value - b.value);
                if change <= -opts.armijo * eta * dec2 {
                    accepted = Some(cand);
                    break;
                }
            }
            eta *= opts.shrink;
        }
        match accepted {
            Some(next) => z = next,
            // Rounding floor reached near the center; keep the iterate. The
            // excess over the center is at most dec2/t in objective units and
            // the final KKT check still certifies the result.
            None if dec2 * 0.5 <= 1e-3 => return Ok(Centering { z, iters: iter }),
            None => {
                return Err(Error::Numerical(format!(
                    "line search failed at t = {t:e} (Newton decrement² = {dec2:e})"
                )))
            }
        }
    }
    Ok(Centering { z, iters: opts.max_newton })
}

/// Radius (relative to `1 + ‖x0‖∞`) of the phase-1 trust ball.
pub const PHASE1_RADIUS: f64 = 1e4;

/// Minimizes the common slack `s` of all constraints.
///
/// Feasible iff the slack reaches `< −feas_tol`; infeasible once the
/// duality bound proves `s* ≥ −feas_tol`.
pub fn phase1(program: &ConvexProgram, opts: &SolverOptions) -> Result<Phase1Result> {
    let n = program.dim;
    let x0 = program.start.clone().unwrap_or_else(|| DVector::zeros(n));
    if program.constraints.is_empty() {
        return Ok(Phase1Result { feasible: true, x0, slack: f64::NEG_INFINITY, iterations: 0 });
    }
    let v0 = program.max_violation(&x0);
    if !v0.is_finite() {
        return Err(Error::Numerical("constraint value is not finite at the start point".into()));
    }
    if v0 < -opts.feas_tol {
        return Ok(Phase1Result { feasible: true, x0, slack: v0, iterations: 0 });
    }
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(&x0);
    z[n] = v0.max(0.0) + 1.0;
    // slack cap and trust ball each add one to the barrier degree
    let degree = program.barrier_degree() + 2.0;
    let ball = Ball { center: x0.clone(), radius2: (PHASE1_RADIUS * (1.0 + x0.amax())).powi(2) };
    let outer = |z: &DVector<f64>| {
        let mut g = DVector::zeros(n + 1);
        g[n] = 1.0;
        (z[n], g, DMatrix::zeros(n + 1, n + 1))
    };
    let mut t = opts.t0;
    let mut iterations = 0;
    for _ in 0..opts.max_outer {
        let c = center(program, Some(&ball), z, t, outer, opts, opts.kkt_tol * 0.1)?;
        z = c.z;
        iterations += c.iters;
        let s = z[n];
        let x = z.rows(0, n).into_owned();
        if s < -opts.feas_tol && program.max_violation(&x) < -opts.feas_tol {
            let slack = program.max_violation(&x);
            return Ok(Phase1Result { feasible: true, x0: x, slack, iterations });
        }
        if s - degree / t >= -opts.feas_tol {
            return Ok(Phase1Result { feasible: false, x0: x, slack: s, iterations });
        }
        t *= opts.mu;
    }
    Err(Error::Numerical(format!(
        "phase 1 did not reach a verdict in {} outer iterations (slack {:e})",
        opts.max_outer,
        z[n]
    )))
}

/// Phase 1 followed by the barrier path to a KKT-certified optimum.
pub fn solve(program: &ConvexProgram, opts: &SolverOptions) -> Result<SolveReport> {
    let p1 = phase1(program, opts)?;
    let n = program.dim;
    if !p1.feasible {
        return Ok(SolveReport {
            status: SolveStatus::Infeasible,
            theta_star: p1.x0.iter().copied().collect(),
            objective_value: program.objective.value(&p1.x0),
            kkt_residual: f64::NAN,
            max_violation: program.max_violation(&p1.x0),
            phase1_slack: p1.slack,
            phase1_iters: p1.iterations,
            barrier_path: Vec::new(),
        });
    }
    let obj = &program.objective;
    let outer = |x: &DVector<f64>| (obj.value(x), obj.gradient(x), obj.hessian.clone());
    let degree = program.barrier_degree();
    let mut x = p1.x0.clone();
    let mut path = Vec::new();
    let mut t = opts.t0;
    let mut status = SolveStatus::MaxIter;

    if program.constraints.is_empty() {
        let c = center(program, None, x, 1.0, outer, opts, opts.kkt_tol * 0.1)?;
        x = c.z;
        path.push(BarrierStep { t: 1.0, objective: obj.value(&x), gap_bound: 0.0, newton_iters: c.iters });
        status = SolveStatus::Optimal;
        t = f64::INFINITY;
    } else {
        for _ in 0..opts.max_outer {
            let c = center(program, None, x, t, outer, opts, opts.kkt_tol * 0.1)?;
            x = c.z;
            let gap = degree / t;
            path.push(BarrierStep { t, objective: obj.value(&x), gap_bound: gap, newton_iters: c.iters });
            if gap < opts.gap_tol {
                status = SolveStatus::Optimal;
                break;
            }
            t *= opts.mu;
        }
    }
    let kkt = kkt_residual(program, &x, t);
    if status == SolveStatus::Optimal && kkt > opts.kkt_tol {
        return Err(Error::Numerical(format!("converged with KKT residual {kkt:e} above tolerance")));
    }
    debug_assert_eq!(x.len(), n);
    Ok(SolveReport {
        status,
        theta_star: x.iter().copied().collect(),
        objective_value: obj.value(&x),
        kkt_residual: kkt,
        max_violation: program.max_violation(&x),
        phase1_slack: p1.slack,
        phase1_iters: p1.iterations,
        barrier_path: path,
    })
}

/// Scaled KKT residual at a barrier iterate:
/// `max(stationarity / (1 + ‖∇f0‖∞), complementarity / (1 + |f0|),
/// primal violation)`.
///
/// Multipliers start from the barrier estimates `1/(t·slack)`. On the
/// active set (multiplier larger than slack) they are also refit by least
/// squares, because the barrier estimates carry the rounding error of
/// slacks of size `1/t`; either choice is a valid certificate and the
/// smaller residual is reported. An LMI contributes a multiplier matrix
/// supported on the eigenvectors of its small eigenvalues.
pub fn kkt_residual(program: &ConvexProgram, x: &DVector<f64>, t: f64) -> f64 {
    let g0 = program.objective.gradient(x);
    let f0 = program.objective.value(x);
    let n = x.len();
    // Fixed part of the Lagrangian gradient and complementarity from inactive terms.
    let mut fixed = g0.clone();
    let mut comp = 0.0;
    let mut primal: f64 = 0.0;
    // Active columns: gradient of −(constraint) contribution per unit multiplier,
    // the slack paired with it, and how to read back PSD structure.
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut col_slack: Vec<f64> = Vec::new();
    let mut lmi_blocks: Vec<(usize, usize)> = Vec::new();
    let mut cone_blocks: Vec<(usize, usize)> = Vec::new();

    for c in &program.constraints {
        match c {
            Constraint::Lmi(l) => {
                let f = l.matrix(x);
                let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(&f));
                primal = primal.max(-eig.eigenvalues.min());
                let thresh = 1.0 / t.sqrt();
                let (act, inact): (Vec<usize>, Vec<usize>) =
                    (0..l.order()).partition(|&j| eig.eigenvalues[j] < thresh);
                // Inactive part of W/t = Σ vvᵀ/(t e).
                for &j in &inact {
                    let e = eig.eigenvalues[j];
                    let v = eig.eigenvectors.column(j).into_owned();
                    comp += 1.0 / t;
                    let mut g = DVector::zeros(n);
                    for (i, ci) in l.coefs.iter().enumerate() {
                        g[i] = quad_form(ci, &v);
                    }
                    fixed -= g / (t * e);
                }
                if act.is_empty() {
                    continue;
                }
                let va = DMatrix::from_fn(l.order(), act.len(), |r, k| eig.eigenvectors[(r, act[k])]);
                let projected: Vec<DMatrix<f64>> = l.coefs.iter().map(|ci| project(ci, &va)).collect();
                let fa = va.transpose() * &f * &va;
                let first = cols.len();
                let k = act.len();
                for a in 0..k {
                    for b in a..k {
                        let w = if a == b { 1.0 } else { 2.0 };
                        cols.push(DVector::from_fn(n, |i, _| -w * projected[i][(a, b)]));
                        col_slack.push(w * fa[(a, b)]);
                    }
                }
                lmi_blocks.push((first, k));
            }
            Constraint::Soc(sc) if !sc.is_linear() => {
                // Conic multiplier (s0, s1) with ‖s1‖ ≤ s0 for (τ, z) = (−mean, β·noise).
                let tau = -sc.row.mean(x);
                let z = sc.row.noise(x) * sc.beta;
                let u = tau - z.norm();
                primal = primal.max(-u);
                let q = tau * tau - z.norm_squared();
                let s0 = if q > 0.0 { 2.0 * tau / (t * q) } else { f64::INFINITY };
                let yt = sc.row.y.transpose();
                if s0 <= u {
                    // s1 = −2z/(tq); contribution s0·a − β Yᵀ s1.
                    fixed += &sc.row.a * s0 + &yt * &z * (2.0 * sc.beta / (t * q));
                    comp += 2.0 / t;
                } else if tau > 1.0 / t.sqrt() {
                    // On the cone boundary away from the apex the multiplier is scalar.
                    let (_, g) = constraint_gradient(c, x);
                    cols.push(g);
                    col_slack.push(u);
                } else {
                    let first = cols.len();
                    cols.push(sc.row.a.clone());
                    col_slack.push(tau);
                    for k in 0..z.len() {
                        cols.push(sc.row.y.row(k).transpose() * (-sc.beta));
                        col_slack.push(z[k]);
                    }
                    cone_blocks.push((first, z.len() + 1));
                }
            }
            _ => {
                let (v, g) = constraint_gradient(c, x);
                primal = primal.max(v);
                let u = -v;
                let lam = if u > 0.0 { 1.0 / (t * u) } else { f64::INFINITY };
                if lam > u {
                    cols.push(g);
                    col_slack.push(u);
                } else {
                    fixed += g * lam;
                    comp += lam * u;
                }
            }
        }
    }

    let mut stat = fixed.clone();
    let mut comp_refit = comp;
    if !cols.is_empty() {
        let j = DMatrix::from_columns(&cols);
        let svd = j.clone().svd(true, true);
        let mut mu = svd.solve(&(-&fixed), 1e-12).unwrap_or_else(|_| DVector::zeros(cols.len()));
        // Scalar multipliers must be nonnegative and LMI blocks PSD.
        let mut in_block = vec![false; cols.len()];
        for &(first, k) in &lmi_blocks {
            let m = k * (k + 1) / 2;
            in_block[first..first + m].iter_mut().for_each(|b| *b = true);
            let mut mat = DMatrix::zeros(k, k);
            let mut idx = first;
            for a in 0..k {
                for b in a..k {
                    mat[(a, b)] = mu[idx];
                    mat[(b, a)] = mu[idx];
                    idx += 1;
                }
            }
            let e = nalgebra::SymmetricEigen::new(mat);
            let clipped = &e.eigenvectors
                * DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0)))
                * e.eigenvectors.transpose();
            let mut idx = first;
            for a in 0..k {
                for b in a..k {
                    mu[idx] = clipped[(a, b)];
                    idx += 1;
                }
            }
        }
        for &(first, k) in &cone_blocks {
            in_block[first..first + k].iter_mut().for_each(|b| *b = true);
            let s0 = mu[first];
            let s1 = mu.rows(first + 1, k - 1).into_owned();
            let r = s1.norm();
            if r > s0 {
                if r <= -s0 {
                    mu.rows_mut(first, k).fill(0.0);
                } else {
                    let c = 0.5 * (s0 + r);
                    mu[first] = c;
                    mu.rows_mut(first + 1, k - 1).copy_from(&(s1 * (c / r)));
                }
            }
        }
        for (i, m) in mu.iter_mut().enumerate() {
            if !in_block[i] && *m < 0.0 {
                *m = 0.0;
            }
        }
        stat += &j * &mu;
        comp_refit += mu.iter().zip(&col_slack).map(|(m, s)| m * s).sum::<f64>().abs();
    }
    if program.constraints.is_empty() {
        return g0.amax() / (1.0 + g0.amax());
    }
    let scaled = |st: &DVector<f64>, cp: f64| (st.amax() / (1.0 + g0.amax())).max(cp / (1.0 + f0.abs()));
    let mut dual = scaled(&stat, comp_refit);
    // The central-path multipliers are dual feasible by construction.
    if let Some(b) = program.barrier(x, None, 1) {
        dual = dual.min(scaled(&(&g0 + &b.grad / t), program.barrier_degree() / t));
    }
    dual.max(primal.max(0.0))
}

/// Value and gradient of a scalar constraint.
fn constraint_gradient(c: &Constraint, x: &DVector<f64>) -> (f64, DVector<f64>) {
    match c {
        Constraint::Linear { a0, a } => (a0 + a.dot(x), a.clone()),
        Constraint::Soc(s) => {
            let y = s.row.noise(x);
            let norm = y.norm();
            let mut g = s.row.a.clone();
            if norm > 0.0 && s.beta > 0.0 {
                g += s.row.y.transpose() * &y * (s.beta / norm);
            }
            (s.value(x), g)
        }
        Constraint::Smooth(s) => {
            let (v, g, _) = s.derivatives(x);
            (v, g)
        }
        Constraint::Lmi(_) => unreachable!("LMI handled by eigen-decomposition"),
    }
}

/// `vᵀ Fᵢ v`.
fn quad_form(c: &LmiCoef, v: &DVector<f64>) -> f64 {
    match c {
        LmiCoef::Zero => 0.0,
        LmiCoef::Rank2 { u, v: w } => 2.0 * u.dot(v) * w.dot(v),
        LmiCoef::Diagonal(d) => d.iter().zip(v.iter()).map(|(a, b)| a * b * b).sum(),
        LmiCoef::Dense(f) => v.dot(&(f * v)),
    }
}

/// `Vᵀ Fᵢ V`.
fn project(c: &LmiCoef, va: &DMatrix<f64>) -> DMatrix<f64> {
    let k = va.ncols();
    match c {
        LmiCoef::Zero => DMatrix::zeros(k, k),
        LmiCoef::Rank2 { u, v } => {
            let p = va.transpose() * u;
            let q = va.transpose() * v;
            &p * q.transpose() + &q * p.transpose()
        }
        LmiCoef::Diagonal(d) => va.transpose() * DMatrix::from_diagonal(d) * va,
        LmiCoef::Dense(f) => va.transpose() * f * va,
    }
}
