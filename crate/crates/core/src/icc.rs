//! Integrated chance constraints `E[max(η, 0)] ≤ β` for scalar affine
//! constraint functions `η = Tˣx̄ + Tᵘū − y` under Gaussian noise.
//!
//! With `η ~ N(μ, σ²)` the expectation is `σ g(μ/σ)`, which is convex and
//! smooth in θ̄ wherever `σ > 0`.

use nalgebra::{DMatrix, DVector};

use crate::chance::{AffineConstraintData, PolytopicConstraint, RowAffine};
use crate::cost::{QuadraticCost, QuadraticObjective};
use crate::error::{dim_err, Error, Result};
use crate::horizon::{HorizonMatrices, SystemModel};
use crate::policy::{PolicyLayout, ResponseBasis};
use crate::solver::SmoothConstraint;
use crate::specfun::{erfc, normal_pdf};

/// Below this spread the `σ → 0` limit `max(μ, 0)` is used.
pub const SIGMA_FLOOR: f64 = 1e-10;

/// `g(x) = (x/2) erfc(−x/√2) + e^{−x²/2}/√(2π) = E[max(x + Z, 0)]`.
pub fn g(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 3.0 {
        // g(x) − g(−x) = x
        return x + g(-x);
    }
    if x < -3.0 {
        return normal_pdf(x) * mills_remainder(-x);
    }
    0.5 * x * erfc(-x / std::f64::consts::SQRT_2) + normal_pdf(x)
}

/// `1 − t R(t)` for the Mills ratio `R(t) = Q(t)/φ(t)`, from its continued
/// fraction `R = 1/(t + 1/(t + 2/(t + 3/(t + …))))` without cancellation.
fn mills_remainder(t: f64) -> f64 {
    if t == f64::INFINITY {
        return 0.0;
    }
    // c = 1/(t + 2/(t + 3/(t + …))), then 1 − t/(t + c) = c/(t + c).
    let mut tail = t;
    for k in (2..=400).rev() {
        tail = t + k as f64 / tail;
    }
    let c = 1.0 / tail;
    c / (t + c)
}

/// `g'(x) = Φ(x)`.
fn g_prime(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `E[max(z, 0)]` for `z ~ N(μ, σ²)`. Negative σ yields NaN.
pub fn icc_value(mu: f64, sigma: f64) -> f64 {
    if sigma < 0.0 {
        return f64::NAN;
    }
    if sigma == 0.0 {
        return mu.max(0.0);
    }
    sigma * g(mu / sigma)
}

/// `f₁(θ̄) = ‖v + Lθ̄‖ g((e + fᵀθ̄)/‖v + Lθ̄‖) − β ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IccConstraint {
    pub e: f64,
    pub f: DVector<f64>,
    pub v: DVector<f64>,
    pub l: DMatrix<f64>,
    pub budget: f64,
}

impl IccConstraint {
    pub fn new(e: f64, f: DVector<f64>, v: DVector<f64>, l: DMatrix<f64>, budget: f64) -> Result<Self> {
        if l.nrows() != v.len() || l.ncols() != f.len() {
            return Err(dim_err(format!(
                "L is {}x{}, v has length {}, f has length {}",
                l.nrows(),
                l.ncols(),
                v.len(),
                f.len()
            )));
        }
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(Error::Domain(format!("budget {budget} must be positive")));
        }
        Ok(Self { e, f, v, l, budget })
    }

    /// From a whitened constraint row; `Σ̄^{1/2}` is already inside `v` and `L`.
    pub fn from_row(row: &RowAffine, budget: f64) -> Result<Self> {
        Self::new(row.a0, row.a.clone(), row.y0.clone(), row.y.clone(), budget)
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn mean(&self, x: &DVector<f64>) -> f64 {
        self.e + self.f.dot(x)
    }

    pub fn spread(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.v + &self.l * x
    }

    /// `E[max(η, 0)]`, without the budget.
    pub fn expectation(&self, x: &DVector<f64>) -> f64 {
        let s = self.spread(x).norm();
        let mu = self.mean(x);
        if s < SIGMA_FLOOR {
            mu.max(0.0)
        } else {
            icc_value(mu, s)
        }
    }

    pub fn f1(&self, x: &DVector<f64>) -> f64 {
        self.expectation(x) - self.budget
    }

    /// `φ(x) Lᵀr/σ + Φ(x) f` with `r = v + Lθ̄`, `σ = ‖r‖`, `x = μ/σ`.
    pub fn grad_f1(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (mu, r, s) = self.checked_parts(x)?;
        let z = mu / s;
        Ok(self.l.transpose() * &r * (normal_pdf(z) / s) + &self.f * g_prime(z))
    }

    /// `φ(x)[J₁ + J₂ − J₃]` with
    /// `J₁ = (LᵀL + ffᵀ)/σ`,
    /// `J₂ = (μ² − σ²)/σ⁵ · Lᵀr rᵀL`,
    /// `J₃ = μ/σ³ · (Lᵀr fᵀ + f rᵀL)`.
    pub fn hess_f1(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (mu, r, s) = self.checked_parts(x)?;
        Ok(self.hessian_at(mu, &r, s))
    }

    fn hessian_at(&self, mu: f64, r: &DVector<f64>, s: f64) -> DMatrix<f64> {
        let lr = self.l.transpose() * r;
        let mut h = self.l.transpose() * &self.l / s;
        h.ger(1.0 / s, &self.f, &self.f, 1.0);
        let s2 = s * s;
        h.ger((mu * mu - s2) / (s2 * s2 * s), &lr, &lr, 1.0);
        let c3 = mu / (s2 * s);
        h.ger(-c3, &lr, &self.f, 1.0);
        h.ger(-c3, &self.f, &lr, 1.0);
        h * normal_pdf(mu / s)
    }

    fn checked_parts(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, f64)> {
        if x.len() != self.dim() {
            return Err(dim_err(format!("θ̄ has length {}, expected {}", x.len(), self.dim())));
        }
        let r = self.spread(x);
        let s = r.norm();
        if s < SIGMA_FLOOR {
            return Err(Error::Numerical(format!("spread {s:e} below the floor {SIGMA_FLOOR:e}")));
        }
        Ok((self.mean(x), r, s))
    }
}

impl SmoothConstraint for IccConstraint {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.f1(x)
    }

    fn derivatives(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let r = self.spread(x);
        let s = r.norm();
        let mu = self.mean(x);
        let n = self.dim();
        if s < SIGMA_FLOOR {
            let step = if mu > 0.0 { 1.0 } else if mu == 0.0 { 0.5 } else { 0.0 };
            return (mu.max(0.0) - self.budget, &self.f * step, DMatrix::zeros(n, n));
        }
        let z = mu / s;
        let grad = self.l.transpose() * &r * (normal_pdf(z) / s) + &self.f * g_prime(z);
        (icc_value(mu, s) - self.budget, grad, self.hessian_at(mu, &r, s))
    }

    fn name(&self) -> &str {
        "icc"
    }
}

/// One integrated chance constraint per row of `data`.
pub fn icc_constraints(data: &AffineConstraintData, budgets: &[f64]) -> Result<Vec<IccConstraint>> {
    if budgets.len() != data.rows() {
        return Err(dim_err(format!("{} budgets for {} rows", budgets.len(), data.rows())));
    }
    (0..data.rows()).map(|i| IccConstraint::from_row(&data.row_affine(i), budgets[i])).collect()
}

/// Standard form over θ̄ = `[d̄; free entries of Ḡ column by column]`: the
/// objective `f₀ = g₀ + Σᵢ gᵢ` split into the `d̄` part and one part per
/// column of Ḡ, and the constraints `f₁ ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IccProblem {
    pub layout: PolicyLayout,
    /// `g₀` followed by `g₁ … g_{Nn}`, each over the full θ̄.
    pub pieces: Vec<QuadraticObjective>,
    pub constraints: Vec<IccConstraint>,
}

impl IccProblem {
    /// `f₀ = Σ` of the pieces.
    pub fn objective(&self) -> QuadraticObjective {
        let dim = self.layout.dim();
        let mut out = QuadraticObjective {
            hessian: DMatrix::zeros(dim, dim),
            linear: DVector::zeros(dim),
            constant: 0.0,
        };
        for p in &self.pieces {
            out.hessian += &p.hessian;
            out.linear += &p.linear;
            out.constant += p.constant;
        }
        out
    }

    /// `H₀` with `H₀θ̄ = d̄`.
    pub fn select_d(&self) -> DMatrix<f64> {
        self.layout.select_d()
    }

    /// `Hⱼ` with `Hⱼθ̄ = Ḡⱼ` (0-based column `j`).
    pub fn select_column(&self, j: usize) -> DMatrix<f64> {
        self.layout.select_column(j)
    }
}

/// Requires `Σ̄ = I`; for other covariances build the constraints with
/// [`icc_constraints`], which absorbs `Σ̄^{1/2}` into `v` and `L`, and use
/// the full quadratic objective.
pub fn build_standard_form(
    constraint: &PolytopicConstraint,
    budgets: &[f64],
    cost: &QuadraticCost,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<IccProblem> {
    let nw = model.noise_dim();
    if (model.sigma_bar() - DMatrix::<f64>::identity(nw, nw)).amax() > 0.0 {
        return Err(Error::Domain("the split objective assumes unit noise covariance".into()));
    }
    let basis = ResponseBasis::new(model, mats)?;
    let m = cost.matrix();
    if m.nrows() != basis.c0.len() {
        return Err(dim_err(format!("cost matrix has order {}, expected {}", m.nrows(), basis.c0.len())));
    }
    let data = crate::chance::build_affine_data(constraint, model, mats)?;
    let constraints = icc_constraints(&data, budgets)?;

    let layout = PolicyLayout::of(model);
    let dim = layout.dim();
    let nu = layout.input_dim();
    let mk = m * &basis.k;
    let w = basis.k.transpose() * &mk;

    let mut pieces = Vec::with_capacity(nw + 1);
    let mut g0 = QuadraticObjective {
        hessian: DMatrix::zeros(dim, dim),
        linear: DVector::zeros(dim),
        constant: basis.c0.dot(&(m * &basis.c0)),
    };
    g0.hessian.view_mut((0, 0), (nu, nu)).copy_from(&(&w * 2.0));
    g0.linear.rows_mut(0, nu).copy_from(&(mk.transpose() * &basis.c0 * 2.0));
    pieces.push(g0);

    let free = layout.free_entries();
    for j in 0..nw {
        let col = basis.l0.column(j);
        let lin = mk.transpose() * col * 2.0;
        let mut gj = QuadraticObjective {
            hessian: DMatrix::zeros(dim, dim),
            linear: DVector::zeros(dim),
            constant: col.dot(&(m * col)),
        };
        let idx: Vec<(usize, usize)> = free
            .iter()
            .enumerate()
            .filter(|(_, (_, b))| *b == j)
            .map(|(p, (a, _))| (nu + p, *a))
            .collect();
        for &(p, a) in &idx {
            gj.linear[p] = lin[a];
            for &(q, a2) in &idx {
                gj.hessian[(p, q)] = 2.0 * w[(a, a2)];
            }
        }
        pieces.push(gj);
    }
    Ok(IccProblem { layout, pieces, constraints })
}
