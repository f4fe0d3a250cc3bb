//! Conservative convex reformulations of the joint chance constraint
//! `P(Tˣx̄ + Tᵘū − y ≤ 0) ≥ 1 − α` for Gaussian disturbances.
//!
//! Every row `i` of `η = h_θ + P_θ w̄` is Gaussian with mean `h_{i,θ}` and
//! standard deviation `‖Σ̄^{1/2} P_{i,θ}ᵀ‖`, both affine or norm-of-affine in
//! θ̄. Separation and the confidence ellipsoid both end in constraints of the
//! form `mean + β·std ≤ 0` and differ only in β.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::horizon::{HorizonMatrices, SystemModel};
use crate::policy::{PolicyLayout, PolicyParams};
use crate::solver::SmoothConstraint;
use crate::specfun::{chi2_inv, upper_normal_quantile, Probability};

/// Hard constraint `Tˣ x̄ + Tᵘ ū ≤ y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopicConstraint {
    pub tx: DMatrix<f64>,
    pub tu: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl PolytopicConstraint {
    pub fn new(tx: DMatrix<f64>, tu: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let r = y.len();
        if r == 0 {
            return Err(dim_err("polytopic constraint needs at least one row"));
        }
        if tx.nrows() != r || tu.nrows() != r {
            return Err(dim_err(format!("Tx has {} rows, Tu {}, y {r}", tx.nrows(), tu.nrows())));
        }
        Ok(Self { tx, tu, y })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    fn check(&self, model: &SystemModel) -> Result<()> {
        let nx = (model.horizon() + 1) * model.n();
        let nu = model.horizon() * model.m();
        if self.tx.ncols() != nx || self.tu.ncols() != nu {
            return Err(dim_err(format!(
                "constraint acts on {}+{} coordinates, model has {nx}+{nu}",
                self.tx.ncols(),
                self.tu.ncols()
            )));
        }
        Ok(())
    }

    /// `η = Tˣx̄ + Tᵘū − y` for a realized trajectory.
    pub fn eval(&self, xbar: &DVector<f64>, ubar: &DVector<f64>) -> DVector<f64> {
        &self.tx * xbar + &self.tu * ubar - &self.y
    }

    /// `true` when every row holds.
    pub fn satisfied(&self, xbar: &DVector<f64>, ubar: &DVector<f64>) -> bool {
        self.eval(xbar, ubar).iter().all(|v| *v <= 0.0)
    }
}

/// `h_θ = h0 + F d̄` and `P_θ = P0 + F Ḡ`, plus `Σ̄^{1/2}` for the row
/// standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraintData {
    pub layout: PolicyLayout,
    /// `Tˣ Ā x0 − y`.
    pub h0: DVector<f64>,
    /// `Tˣ B̄ + Tᵘ`.
    pub f: DMatrix<f64>,
    /// `Tˣ D̄`.
    pub p0: DMatrix<f64>,
    pub sigma_sqrt: DMatrix<f64>,
}

pub fn build_affine_data(
    c: &PolytopicConstraint,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<AffineConstraintData> {
    c.check(model)?;
    Ok(AffineConstraintData {
        layout: PolicyLayout::of(model),
        h0: &c.tx * &mats.abar * model.x0() - &c.y,
        f: &c.tx * &mats.bbar + &c.tu,
        p0: &c.tx * &mats.dbar,
        sigma_sqrt: model.sigma_sqrt(),
    })
}

impl AffineConstraintData {
    pub fn rows(&self) -> usize {
        self.h0.len()
    }

    pub fn h_theta(&self, theta: &PolicyParams) -> DVector<f64> {
        &self.h0 + &self.f * theta.dbar()
    }

    pub fn p_theta(&self, theta: &PolicyParams) -> DMatrix<f64> {
        &self.p0 + &self.f * theta.gbar()
    }

    /// Per-row standard deviations `‖Σ̄^{1/2} P_{i,θ}ᵀ‖`.
    pub fn row_std(&self, theta: &PolicyParams) -> DVector<f64> {
        let s = self.p_theta(theta) * &self.sigma_sqrt;
        DVector::from_fn(self.rows(), |i, _| s.row(i).norm())
    }

    /// Affine pieces of row `i` over θ̄: the mean `a0 + aᵀθ̄` and the
    /// whitened noise vector `y0 + Y θ̄` whose norm is the row std.
    pub fn row_affine(&self, i: usize) -> RowAffine {
        let layout = self.layout;
        let dim = layout.dim();
        let nu = layout.input_dim();
        let mut a = DVector::zeros(dim);
        a.rows_mut(0, nu).copy_from(&self.f.row(i).transpose());
        let y0 = &self.sigma_sqrt * self.p0.row(i).transpose();
        let nw = layout.noise_dim();
        let mut y = DMatrix::zeros(nw, dim);
        for (p, (ra, cb)) in layout.free_entries().into_iter().enumerate() {
            let k = self.f[(i, ra)];
            if k != 0.0 {
                y.column_mut(nu + p).axpy(k, &self.sigma_sqrt.column(cb), 0.0);
            }
        }
        RowAffine { a0: self.h0[i], a, y0, y }
    }
}

/// Mean `a0 + aᵀθ̄` and noise vector `y0 + Yθ̄` of one constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowAffine {
    pub a0: f64,
    pub a: DVector<f64>,
    pub y0: DVector<f64>,
    pub y: DMatrix<f64>,
}

impl RowAffine {
    pub fn mean(&self, x: &DVector<f64>) -> f64 {
        self.a0 + self.a.dot(x)
    }
    pub fn noise(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.y0 + &self.y * x
    }
    /// Rows whose noise vector vanishes for every θ̄.
    pub fn is_deterministic(&self) -> bool {
        self.y0.iter().all(|v| *v == 0.0) && self.y.iter().all(|v| *v == 0.0)
    }
}

/// `a0 + aᵀx + β‖y0 + Y x‖ ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub row: RowAffine,
    pub beta: f64,
}

impl SocConstraint {
    pub fn new(row: RowAffine, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!(
                "β = {beta} would make the cone constraint non-convex; individual levels must not exceed 0.5"
            )));
        }
        Ok(Self { row, beta })
    }

    pub fn dim(&self) -> usize {
        self.row.a.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.row.mean(x) + self.beta * self.row.noise(x).norm()
    }

    /// With zero β or a deterministic row the constraint is linear.
    pub fn is_linear(&self) -> bool {
        self.beta == 0.0 || self.row.is_deterministic()
    }

    /// Same constraint over `(x, extra…)` with the extra coordinates unused.
    pub fn padded(&self, extra: usize) -> Self {
        let dim = self.dim();
        let mut a = DVector::zeros(dim + extra);
        a.rows_mut(0, dim).copy_from(&self.row.a);
        let mut y = DMatrix::zeros(self.row.y.nrows(), dim + extra);
        y.view_mut((0, 0), (self.row.y.nrows(), dim)).copy_from(&self.row.y);
        Self { row: RowAffine { a0: self.row.a0, a, y0: self.row.y0.clone(), y }, beta: self.beta }
    }
}

/// `√2·erf⁻¹(1 − 2αᵢ)`, the upper `αᵢ` quantile of the standard normal.
/// Negative for `αᵢ > 0.5`.
pub fn beta_separation(alpha_i: Probability) -> f64 {
    upper_normal_quantile(alpha_i)
}

/// `sqrt(F⁻¹(1−α))` for the chi-square law with `min(r, noise_dim)` dof.
pub fn beta_ellipsoid(alpha: Probability, r: usize, noise_dim: usize) -> Result<f64> {
    if r == 0 || noise_dim == 0 {
        return Err(Error::Domain("β needs r ≥ 1 and a non-empty noise".into()));
    }
    let dof = r.min(noise_dim) as u32;
    Ok(chi2_inv(Probability::new(alpha.complement())?, dof)?.sqrt())
}

/// Uniform levels `αᵢ = α / r`.
pub fn uniform_alphas(alpha: Probability, r: usize) -> Result<Vec<Probability>> {
    if r == 0 {
        return Err(dim_err("no rows to allocate"));
    }
    let a = Probability::new(alpha.value() / r as f64)?;
    Ok(vec![a; r])
}

pub fn separation_constraints(data: &AffineConstraintData, alphas: &[Probability]) -> Result<Vec<SocConstraint>> {
    if alphas.len() != data.rows() {
        return Err(dim_err(format!("{} levels for {} rows", alphas.len(), data.rows())));
    }
    alphas
        .iter()
        .enumerate()
        .map(|(i, a)| SocConstraint::new(data.row_affine(i), beta_separation(*a)))
        .collect()
}

pub fn ellipsoid_constraints(data: &AffineConstraintData, alpha: Probability) -> Result<Vec<SocConstraint>> {
    let beta = beta_ellipsoid(alpha, data.rows(), data.layout.noise_dim())?;
    (0..data.rows()).map(|i| SocConstraint::new(data.row_affine(i), beta)).collect()
}

/// Exponent `tᵢ hᵢ + tᵢ²/2 ‖sᵢ‖²` of each row.
fn exp_exponents(data: &AffineConstraintData, t: &[f64], theta: &PolicyParams) -> Result<Vec<f64>> {
    if t.len() != data.rows() {
        return Err(dim_err(format!("{} parameters for {} rows", t.len(), data.rows())));
    }
    if let Some(bad) = t.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("exponential-bound parameter {bad} must be positive")));
    }
    let h = data.h_theta(theta);
    let s = data.row_std(theta);
    Ok((0..data.rows()).map(|i| t[i] * h[i] + 0.5 * t[i] * t[i] * s[i] * s[i]).collect())
}

fn log_sum_exp(e: &[f64]) -> f64 {
    let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + e.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// `Σᵢ exp(tᵢ h_{i,θ} + tᵢ²/2 ‖Σ̄^{1/2}P_{i,θ}ᵀ‖²)`, an upper bound on
/// the violation probability. Evaluated through log-sum-exp.
pub fn exp_bound_value(data: &AffineConstraintData, t: &[f64], theta: &PolicyParams) -> Result<f64> {
    Ok(exp_bound_log_value(data, t, theta)?.exp())
}

pub fn exp_bound_log_value(data: &AffineConstraintData, t: &[f64], theta: &PolicyParams) -> Result<f64> {
    Ok(log_sum_exp(&exp_exponents(data, t, theta)?))
}

/// Heuristic `tᵢ = −hᵢ/‖sᵢ‖²` minimizing each exponent at `theta0`.
/// Rows with nonnegative mean or vanishing spread fall back to `1`.
pub fn exp_bound_heuristic_t(data: &AffineConstraintData, theta0: &PolicyParams) -> Vec<f64> {
    let h = data.h_theta(theta0);
    let s = data.row_std(theta0);
    (0..data.rows())
        .map(|i| {
            let s2 = s[i] * s[i];
            let t = -h[i] / s2;
            if h[i] < 0.0 && s2 > 0.0 && t.is_finite() {
                t
            } else {
                1.0
            }
        })
        .collect()
}

/// `log Σᵢ exp(eᵢ(x)) − log α ≤ 0` with `eᵢ = tᵢ·meanᵢ + tᵢ²/2·‖noiseᵢ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpBoundConstraint {
    pub rows: Vec<RowAffine>,
    pub t: Vec<f64>,
    pub log_alpha: f64,
}

impl ExpBoundConstraint {
    pub fn new(data: &AffineConstraintData, t: Vec<f64>, alpha: Probability) -> Result<Self> {
        if t.len() != data.rows() {
            return Err(dim_err(format!("{} parameters for {} rows", t.len(), data.rows())));
        }
        if t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("exponential-bound parameters must be positive".into()));
        }
        let rows = (0..data.rows()).map(|i| data.row_affine(i)).collect();
        Ok(Self { rows, t, log_alpha: alpha.value().ln() })
    }

    fn exponents(&self, x: &DVector<f64>) -> Vec<(f64, DVector<f64>)> {
        self.rows
            .iter()
            .zip(&self.t)
            .map(|(r, &t)| {
                let y = r.noise(x);
                (t * r.mean(x) + 0.5 * t * t * y.norm_squared(), y)
            })
            .collect()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let e: Vec<f64> = self.exponents(x).into_iter().map(|(e, _)| e).collect();
        log_sum_exp(&e) - self.log_alpha
    }

    /// Value, gradient and Hessian of the log-sum-exp form.
    pub fn derivatives(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let dim = x.len();
        let ex = self.exponents(x);
        let e: Vec<f64> = ex.iter().map(|(e, _)| *e).collect();
        let lse = log_sum_exp(&e);
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut grads = Vec::with_capacity(self.rows.len());
        for ((r, &t), (ei, y)) in self.rows.iter().zip(&self.t).zip(&ex) {
            let w = (ei - lse).exp();
            let gi = &r.a * t + r.y.transpose() * y * (t * t);
            grad.axpy(w, &gi, 1.0);
            hess.gemm_tr(w * t * t, &r.y, &r.y, 1.0);
            grads.push((w, gi));
        }
        for (w, gi) in &grads {
            hess.ger(*w, gi, gi, 1.0);
        }
        hess.ger(-1.0, &grad, &grad, 1.0);
        (lse - self.log_alpha, grad, hess)
    }
}

impl SmoothConstraint for ExpBoundConstraint {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.a.len())
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        ExpBoundConstraint::value(self, x)
    }
    fn derivatives(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        ExpBoundConstraint::derivatives(self, x)
    }
    fn name(&self) -> &str {
        "exp-bound"
    }
}

/// One row of the β-comparison table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaRow {
    pub horizon: usize,
    pub rbar: usize,
    pub beta_sep: f64,
    pub beta_ellip: f64,
}

/// β of both methods for horizons `1..=n_max`, with `r = N·r̄·(n+m)` rows,
/// separation levels `α/r` and ellipsoid dof `min(r, N·n)`.
pub fn beta_curves(n: usize, m: usize, rbar_list: &[usize], n_max: usize, alpha: Probability) -> Result<Vec<BetaRow>> {
    if n == 0 || m == 0 || n_max == 0 || rbar_list.contains(&0) {
        return Err(Error::Domain("β-curve parameters must be positive".into()));
    }
    let mut out = Vec::with_capacity(rbar_list.len() * n_max);
    for &rbar in rbar_list {
        for horizon in 1..=n_max {
            let r = horizon * rbar * (n + m);
            let beta_sep = beta_separation(Probability::new(alpha.value() / r as f64)?);
            let beta_ellip = beta_ellipsoid(alpha, r, horizon * n)?;
            out.push(BetaRow { horizon, rbar, beta_sep, beta_ellip });
        }
    }
    Ok(out)
}

/// CSV with header `N,rbar,beta_sep,beta_ellip`; floats use the shortest
/// representation that round-trips.
pub fn write_beta_csv<W: Write>(rows: &[BetaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "rbar", "beta_sep", "beta_ellip"])?;
    for r in rows {
        w.write_record([
            r.horizon.to_string(),
            r.rbar.to_string(),
            r.beta_sep.to_string(),
            r.beta_ellip.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_beta_csv<R: std::io::Read>(input: R) -> Result<Vec<BetaRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |k: usize| -> Result<&str> {
            rec.get(k).ok_or_else(|| Error::Problem(format!("β-curve record has no column {k}")))
        };
        let parse_err = |e: &dyn std::fmt::Display| Error::Problem(format!("bad β-curve field: {e}"));
        out.push(BetaRow {
            horizon: field(0)?.parse().map_err(|e| parse_err(&e))?,
            rbar: field(1)?.parse().map_err(|e| parse_err(&e))?,
            beta_sep: field(2)?.parse().map_err(|e| parse_err(&e))?,
            beta_ellip: field(3)?.parse().map_err(|e| parse_err(&e))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::horizon::stack_dynamics;
    use crate::policy::{response_maps, ThetaVector};

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn instance(seed: &mut u64) -> (SystemModel, HorizonMatrices, PolytopicConstraint) {
        let (n, m, h) = (2, 1, 3);
        let a = DMatrix::from_fn(n, n, |_, _| 0.7 * lcg(seed));
        let b = DMatrix::from_fn(n, m, |_, _| lcg(seed));
        let f = DMatrix::from_fn(h * n, h * n, |_, _| lcg(seed));
        let sigma = crate::linalg::symmetrize(&(&f * f.transpose() * 0.05));
        let model = SystemModel::new(a, b, sigma, DVector::from_fn(n, |_, _| lcg(seed)), h).unwrap();
        let mats = stack_dynamics(&model);
        let r = 4;
        let tx = DMatrix::from_fn(r, (h + 1) * n, |_, _| lcg(seed));
        let tu = DMatrix::from_fn(r, h * m, |_, _| lcg(seed));
        let y = DVector::from_fn(r, |_, _| 2.0 + lcg(seed));
        (model, mats, PolytopicConstraint::new(tx, tu, y).unwrap())
    }

    fn random_policy(l: PolicyLayout, seed: &mut u64) -> PolicyParams {
        PolicyParams::unflatten(l, &ThetaVector::new(DVector::from_fn(l.dim(), |_, _| lcg(seed)))).unwrap()
    }

    #[test]
    fn affine_data_reproduces_direct_evaluation() {
        let mut seed = 1;
        for _ in 0..10 {
            let (model, mats, c) = instance(&mut seed);
            let data = build_affine_data(&c, &model, &mats).unwrap();
            let theta = random_policy(data.layout, &mut seed);
            let w = DVector::from_fn(model.noise_dim(), |_, _| lcg(&mut seed));
            let r = response_maps(&theta, &model, &mats).unwrap();
            let z = &r.c_theta + &r.l_theta * &w;
            let nx = mats.abar.nrows();
            let direct = c.eval(&z.rows(0, nx).into_owned(), &z.rows(nx, z.len() - nx).into_owned());
            let eta = data.h_theta(&theta) + data.p_theta(&theta) * &w;
            assert!((direct - eta).amax() < 1e-12);
            let x = theta.flatten().theta_flat;
            let s = data.p_theta(&theta) * &data.sigma_sqrt;
            for i in 0..data.rows() {
                let row = data.row_affine(i);
                assert!((row.mean(&x) - data.h_theta(&theta)[i]).abs() < 1e-12);
                assert!((row.noise(&x) - s.row(i).transpose()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_policy_and_input_only_data() {
        let mut seed = 2;
        let (model, mats, c) = instance(&mut seed);
        let data = build_affine_data(&c, &model, &mats).unwrap();
        let z = PolicyParams::zero(data.layout);
        assert!((data.h_theta(&z) - (&c.tx * &mats.abar * model.x0() - &c.y)).amax() < 1e-14);
        assert_eq!(data.p_theta(&z), &c.tx * &mats.dbar);
        let tx0 = DMatrix::zeros(c.rows(), c.tx.ncols());
        let ci = PolytopicConstraint::new(tx0, c.tu.clone(), c.y.clone()).unwrap();
        let di = build_affine_data(&ci, &model, &mats).unwrap();
        let th = random_policy(di.layout, &mut seed);
        assert!((di.p_theta(&th) - &c.tu * th.gbar()).amax() < 1e-14);
        assert!((di.h_theta(&th) - (&c.tu * th.dbar() - &c.y)).amax() < 1e-14);
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta_separation(p(0.5)), 0.0);
        assert!((beta_separation(p(0.1)) - 1.2815515655446004).abs() < 1e-12);
        assert!((beta_separation(p(0.9)) + 1.2815515655446004).abs() < 1e-12);
        assert!((beta_ellipsoid(p(0.1), 2, 1000).unwrap() - 4.605170185988091f64.sqrt()).abs() < 1e-10);
        assert_eq!(beta_ellipsoid(p(0.1), 100, 25).unwrap(), beta_ellipsoid(p(0.1), 25, 25).unwrap());
        let b1 = beta_ellipsoid(p(0.1), 1, 10).unwrap();
        assert!((b1 - beta_separation(p(0.05))).abs() < 1e-10);
        assert!(b1 > beta_separation(p(0.1)));
        assert!(beta_ellipsoid(p(0.2), 5, 10).unwrap() < beta_ellipsoid(p(0.1), 5, 10).unwrap());
    }

    #[test]
    fn negative_beta_rejected_for_cones() {
        let mut seed = 3;
        let (model, mats, c) = instance(&mut seed);
        let data = build_affine_data(&c, &model, &mats).unwrap();
        assert!(separation_constraints(&data, &[p(0.6); 4]).is_err());
        assert!(separation_constraints(&data, &[p(0.1); 3]).is_err());
        let median = separation_constraints(&data, &[p(0.5); 4]).unwrap();
        assert!(median.iter().all(|s| s.is_linear()));
    }

    #[test]
    fn separation_and_ellipsoid_share_row_data() {
        let mut seed = 4;
        let (model, mats, c) = instance(&mut seed);
        let data = build_affine_data(&c, &model, &mats).unwrap();
        let sep = separation_constraints(&data, &uniform_alphas(p(0.1), 4).unwrap()).unwrap();
        let ell = ellipsoid_constraints(&data, p(0.1)).unwrap();
        for (a, b) in sep.iter().zip(&ell) {
            assert_eq!(a.row, b.row);
            assert!(b.beta > a.beta);
        }
    }

    #[test]
    fn soc_value_is_convex() {
        let mut seed = 5;
        let (model, mats, c) = instance(&mut seed);
        let data = build_affine_data(&c, &model, &mats).unwrap();
        let cons = separation_constraints(&data, &uniform_alphas(p(0.1), 4).unwrap()).unwrap();
        let dim = data.layout.dim();
        for _ in 0..200 {
            let a = DVector::from_fn(dim, |_, _| 2.0 * lcg(&mut seed));
            let b = DVector::from_fn(dim, |_, _| 2.0 * lcg(&mut seed));
            let lam = 0.5 * (1.0 + lcg(&mut seed));
            let mid = &a * lam + &b * (1.0 - lam);
            for s in &cons {
                assert!(s.value(&mid) <= lam * s.value(&a) + (1.0 - lam) * s.value(&b) + 1e-9);
            }
        }
    }

    #[test]
    fn exp_bound_closed_forms() {
        // One row in a scalar model with mean −3 and unit spread.
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = SystemModel::with_iid_noise(one.clone(), one.clone(), 1.0, DVector::zeros(1), 1).unwrap();
        let mats = stack_dynamics(&model);
        let c = PolytopicConstraint::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DMatrix::zeros(1, 1), DVector::from_element(1, 3.0))
            .unwrap();
        let data = build_affine_data(&c, &model, &mats).unwrap();
        let z = PolicyParams::zero(data.layout);
        assert!((exp_bound_value(&data, &[1.0], &z).unwrap() - (-2.5f64).exp()).abs() < 1e-15);
        assert!(exp_bound_value(&data, &[0.0], &z).is_err());

        let c0 = PolytopicConstraint::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1), DVector::zeros(3)).unwrap();
        let d0 = build_affine_data(&c0, &model, &mats).unwrap();
        assert!((exp_bound_value(&d0, &[0.3, 1.0, 7.0], &z).unwrap() - 3.0).abs() < 1e-14);
        let t = exp_bound_heuristic_t(&data, &z);
        assert!((t[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn exp_bound_derivatives_match_differences() {
        let mut seed = 6;
        let (model, mats, c) = instance(&mut seed);
        let data = build_affine_data(&c, &model, &mats).unwrap();
        let con = ExpBoundConstraint::new(&data, vec![0.5, 1.0, 2.0, 0.7], p(0.1)).unwrap();
        let x = random_policy(data.layout, &mut seed).flatten().theta_flat * 0.3;
        let (v, g, h) = con.derivatives(&x);
        let th = PolicyParams::unflatten(data.layout, &ThetaVector::new(x.clone())).unwrap();
        let direct = exp_bound_log_value(&data, &[0.5, 1.0, 2.0, 0.7], &th).unwrap() - 0.1f64.ln();
        assert!((v - direct).abs() < 1e-12);
        let step = 1e-5;
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let fd = (con.value(&xp) - con.value(&xm)) / (2.0 * step);
            assert!((fd - g[k]).abs() < 1e-7 * g[k].abs().max(1.0));
            let (_, gp, _) = con.derivatives(&xp);
            let (_, gm, _) = con.derivatives(&xm);
            let col = (gp - gm) / (2.0 * step);
            assert!((col - h.column(k)).amax() < 1e-6 * h.amax().max(1.0));
        }
        assert!(crate::linalg::min_eigenvalue(&h) > -1e-10);
    }

    #[test]
    fn beta_curve_shape() {
        let rows = beta_curves(5, 2, &[2, 10, 100, 1000], 50, p(0.1)).unwrap();
        assert_eq!(rows.len(), 200);
        for horizon in 1..=50 {
            let at: Vec<_> = rows.iter().filter(|r| r.horizon == horizon).collect();
            for w in at.windows(2) {
                assert_eq!(w[0].beta_ellip, w[1].beta_ellip);
                assert!(w[1].beta_sep > w[0].beta_sep);
            }
        }
        let r = rows.iter().find(|r| r.horizon == 20 && r.rbar == 2).unwrap();
        assert!(r.beta_ellip > r.beta_sep);
        let mut buf = Vec::new();
        write_beta_csv(&rows, &mut buf).unwrap();
        let back = read_beta_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut again = Vec::new();
        write_beta_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        assert!(String::from_utf8(buf).unwrap().starts_with("N,rbar,beta_sep,beta_ellip\n"));
    }
}
