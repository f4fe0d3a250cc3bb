//! Expected quadratic cost `E[zᵀ M z]` of the stacked response
//! `z = [x̄; ū]`, its exact quadratic form in θ̄, and the LQG baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::horizon::{HorizonMatrices, SystemModel};
use crate::linalg;
use crate::policy::{PolicyLayout, PolicyParams, ResponseBasis, ThetaVector};

/// Weight `M` of the stacked quadratic cost `[x̄ᵀ ūᵀ] M [x̄; ū]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    m: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&m, 1e-12) {
            return Err(Error::NotPsd("cost matrix is not symmetric".into()));
        }
        let lmin = linalg::min_eigenvalue(&m);
        if lmin < -1e-10 * m.amax().max(1.0) {
            return Err(Error::NotPsd(format!("cost matrix has eigenvalue {lmin:e}")));
        }
        Ok(Self { m })
    }

    /// `M = diag(Q(0), …, Q(N), R(0), …, R(N-1))`.
    pub fn from_stage_weights(q: &[DMatrix<f64>], r: &[DMatrix<f64>]) -> Result<Self> {
        if q.len() != r.len() + 1 {
            return Err(dim_err(format!("{} state weights for {} input weights", q.len(), r.len())));
        }
        let blocks: Vec<_> = q.iter().chain(r.iter()).cloned().collect();
        Self::new(linalg::block_diag(&blocks))
    }

    /// Time-invariant weights with terminal weight `q_final`.
    pub fn stationary(q: &DMatrix<f64>, r: &DMatrix<f64>, q_final: &DMatrix<f64>, horizon: usize) -> Result<Self> {
        let mut qs = vec![q.clone(); horizon];
        qs.push(q_final.clone());
        Self::from_stage_weights(&qs, &vec![r.clone(); horizon])
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

/// `f(θ̄) = ½ θ̄ᵀ H θ̄ + gᵀ θ̄ + c` over the free policy coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.hessian * theta)) + self.linear.dot(theta) + self.constant
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.hessian * theta + &self.linear
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            hessian: &self.hessian * factor,
            linear: &self.linear * factor,
            constant: self.constant * factor,
        }
    }

    /// Unconstrained minimizer (one Newton step from the origin).
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        linalg::solve_spd_jitter(&self.hessian, &(-&self.linear))
    }
}

fn check_cost(cost: &QuadraticCost, basis: &ResponseBasis) -> Result<()> {
    let nz = basis.c0.len();
    if cost.m.nrows() != nz {
        return Err(dim_err(format!("cost matrix has order {}, expected {nz}", cost.m.nrows())));
    }
    Ok(())
}

/// `c_θᵀ M c_θ + tr(L_θᵀ M L_θ Σ̄)`.
pub fn expected_cost(
    theta: &PolicyParams,
    cost: &QuadraticCost,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<f64> {
    let basis = ResponseBasis::new(model, mats)?;
    check_cost(cost, &basis)?;
    let r = basis.maps(theta)?;
    let mean = r.c_theta.dot(&(&cost.m * &r.c_theta));
    let ml = &cost.m * &r.l_theta;
    let trace = (r.l_theta.transpose() * ml).component_mul(model.sigma_bar()).sum();
    Ok(mean + trace)
}

/// Mean-part `h₁(d̄)` and trace part `h₂(Ḡ)` for `Σ̄ = I`.
pub fn cost_split_identity(
    theta: &PolicyParams,
    cost: &QuadraticCost,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<(f64, f64)> {
    let basis = ResponseBasis::new(model, mats)?;
    check_cost(cost, &basis)?;
    let r = basis.maps(theta)?;
    let h1 = r.c_theta.dot(&(&cost.m * &r.c_theta));
    let h2 = (r.l_theta.transpose() * &cost.m * &r.l_theta).trace();
    Ok((h1, h2))
}

/// Exact quadratic form of the expected cost in θ̄.
///
/// With `W = KᵀMK` the `d̄` block of the Hessian is `2W` and the entry for
/// free gains `(a,b)`, `(a',b')` is `2 W_{aa'} Σ̄_{bb'}`; there is no
/// coupling between `d̄` and `Ḡ`.
pub fn quadratic_objective(
    cost: &QuadraticCost,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<QuadraticObjective> {
    let basis = ResponseBasis::new(model, mats)?;
    check_cost(cost, &basis)?;
    let layout = PolicyLayout::of(model);
    let nu = layout.input_dim();
    let sigma = model.sigma_bar();
    let mk = &cost.m * &basis.k;
    let w = basis.k.transpose() * &mk;
    let lin_d = mk.transpose() * &basis.c0 * 2.0;
    let lin_g = mk.transpose() * &basis.l0 * sigma * 2.0;
    let free = layout.free_entries();
    let dim = layout.dim();

    let mut hessian = DMatrix::zeros(dim, dim);
    hessian.view_mut((0, 0), (nu, nu)).copy_from(&(&w * 2.0));
    for (p, &(a, b)) in free.iter().enumerate() {
        for (q, &(a2, b2)) in free.iter().enumerate().skip(p) {
            let v = 2.0 * w[(a, a2)] * sigma[(b, b2)];
            hessian[(nu + p, nu + q)] = v;
            hessian[(nu + q, nu + p)] = v;
        }
    }
    let mut linear = DVector::zeros(dim);
    linear.rows_mut(0, nu).copy_from(&lin_d);
    for (p, &(a, b)) in free.iter().enumerate() {
        linear[nu + p] = lin_g[(a, b)];
    }
    let constant = basis.c0.dot(&(&cost.m * &basis.c0))
        + (basis.l0.transpose() * &cost.m * &basis.l0).component_mul(sigma).sum();
    Ok(QuadraticObjective { hessian, linear, constant })
}

/// Gradient of [`expected_cost`] with respect to the free coordinates.
pub fn expected_cost_gradient(
    theta: &PolicyParams,
    cost: &QuadraticCost,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<ThetaVector> {
    let basis = ResponseBasis::new(model, mats)?;
    check_cost(cost, &basis)?;
    let r = basis.maps(theta)?;
    let layout = theta.layout();
    let gd = basis.k.transpose() * (&cost.m * &r.c_theta) * 2.0;
    let gg = basis.k.transpose() * (&cost.m * &r.l_theta) * model.sigma_bar() * 2.0;
    let mut out = Vec::with_capacity(layout.dim());
    out.extend(gd.iter().copied());
    out.extend(layout.free_entries().into_iter().map(|(a, b)| gg[(a, b)]));
    Ok(ThetaVector::new(DVector::from_vec(out)))
}

/// Gains and value matrices of the finite-horizon LQ regulator.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgSolution {
    /// `K(0), …, K(N-1)`; the control is `u(t) = -K(t) x(t)`.
    pub gains: Vec<DMatrix<f64>>,
    /// `P(0), …, P(N)` with `P(N) = Q`.
    pub values: Vec<DMatrix<f64>>,
}

/// Backward recursion `P(t) = Q + AᵀP(t+1)A − AᵀP(t+1)B K(t)` with
/// `K(t) = (BᵀP(t+1)B + R)⁻¹ BᵀP(t+1)A`.
pub fn lqg_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    horizon: usize,
) -> Result<LqgSolution> {
    lqg_riccati_stages(a, b, &vec![q.clone(); horizon + 1], &vec![r.clone(); horizon])
}

/// Same recursion with stage weights `Q(0) … Q(N)` and `R(0) … R(N−1)`.
pub fn lqg_riccati_stages(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &[DMatrix<f64>],
    r: &[DMatrix<f64>],
) -> Result<LqgSolution> {
    let n = a.nrows();
    let m = b.ncols();
    let horizon = r.len();
    if a.ncols() != n
        || b.nrows() != n
        || q.len() != horizon + 1
        || q.iter().any(|w| w.shape() != (n, n))
        || r.iter().any(|w| w.shape() != (m, m))
    {
        return Err(dim_err("inconsistent LQ data"));
    }
    if r.iter().any(|w| w.clone().cholesky().is_none()) {
        return Err(Error::Domain("input weight R must be positive definite".into()));
    }
    let mut values = q.to_vec();
    let mut gains = vec![DMatrix::zeros(m, n); horizon];
    for t in (0..horizon).rev() {
        let p = &values[t + 1];
        let btp = b.transpose() * p;
        let s = &btp * b + &r[t];
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numerical("BᵀPB + R lost positive definiteness".into()))?;
        let k = chol.solve(&(&btp * a));
        let atp = a.transpose() * p;
        let next = &q[t] + &atp * a - &atp * b * &k;
        values[t] = linalg::symmetrize(&next);
        gains[t] = k;
    }
    Ok(LqgSolution { gains, values })
}

/// Disturbance-feedback form of the state feedback `u(t) = -K(t) x(t)`:
/// `d_t = -K(t) x̂(t)` along the noise-free trajectory and
/// `G_{t,i} = -K(t) Φ(t, i+1)` with `Φ` the closed-loop transition matrix.
pub fn state_feedback_policy(model: &SystemModel, gains: &[DMatrix<f64>]) -> Result<PolicyParams> {
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    if gains.len() != horizon || gains.iter().any(|k| k.shape() != (m, n)) {
        return Err(dim_err("gain sequence does not match the model"));
    }
    let layout = PolicyLayout::of(model);
    let closed: Vec<DMatrix<f64>> = gains.iter().map(|k| model.a() - model.b() * k).collect();
    let mut dbar = DVector::zeros(horizon * m);
    let mut gbar = DMatrix::zeros(horizon * m, horizon * n);
    let mut mean = model.x0().clone();
    for t in 0..horizon {
        dbar.rows_mut(t * m, m).copy_from(&(-&gains[t] * &mean));
        // Φ(t, i+1) for i = t-1 down to 0.
        let mut phi = DMatrix::<f64>::identity(n, n);
        for i in (0..t).rev() {
            gbar.view_mut((t * m, i * n), (m, n)).copy_from(&(-&gains[t] * &phi));
            phi = &phi * &closed[i];
        }
        mean = &closed[t] * &mean;
    }
    PolicyParams::new(layout, gbar, dbar)
}
