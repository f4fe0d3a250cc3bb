//! Plant model `x(t+1) = A x(t) + B u(t) + w(t)`, the stacked horizon
//! matrices `x̄ = Ā x0 + B̄ ū + D̄ w̄`, and zero-order-hold discretization.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg;

/// Linear plant with Gaussian noise over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_bar: DMatrix<f64>,
    x0: DVector<f64>,
    horizon: usize,
}

impl SystemModel {
    /// Validates dimensions, symmetry (1e-12) and positive semidefiniteness
    /// of the stacked noise covariance `sigma_bar` (order `N·n`).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma_bar: DMatrix<f64>,
        x0: DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(dim_err(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err(format!("B must be {n}xm with m ≥ 1, got {}x{}", b.nrows(), b.ncols())));
        }
        if x0.len() != n {
            return Err(dim_err(format!("x0 has length {}, expected {n}", x0.len())));
        }
        if horizon == 0 {
            return Err(dim_err("horizon must be at least 1"));
        }
        let nw = horizon * n;
        if sigma_bar.nrows() != nw || sigma_bar.ncols() != nw {
            return Err(dim_err(format!(
                "noise covariance must be {nw}x{nw}, got {}x{}",
                sigma_bar.nrows(),
                sigma_bar.ncols()
            )));
        }
        if !linalg::is_symmetric(&sigma_bar, 1e-12) {
            return Err(Error::NotPsd("noise covariance is not symmetric".into()));
        }
        linalg::semidefinite_cholesky(&sigma_bar)?;
        Ok(Self { a, b, sigma_bar, x0, horizon })
    }

    /// i.i.d. noise `w(t) ~ N(0, σ² I)`, i.e. `Σ̄ = σ² I_{Nn}`.
    pub fn with_iid_noise(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma2: f64,
        x0: DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::Domain(format!("noise variance {sigma2} must be nonnegative")));
        }
        let nw = horizon * a.nrows();
        Self::new(a, b, DMatrix::identity(nw, nw) * sigma2, x0, horizon)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn sigma_bar(&self) -> &DMatrix<f64> {
        &self.sigma_bar
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Dimension `N·n` of the stacked noise.
    pub fn noise_dim(&self) -> usize {
        self.horizon * self.n()
    }
    /// Dimension `(N+1)n + Nm` of the stacked `[x̄; ū]`.
    pub fn stacked_dim(&self) -> usize {
        (self.horizon + 1) * self.n() + self.horizon * self.m()
    }

    /// Same plant and noise, different initial state.
    pub fn with_x0(&self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.n() {
            return Err(dim_err(format!("x0 has length {}, expected {}", x0.len(), self.n())));
        }
        Ok(Self { x0, ..self.clone() })
    }

    /// Symmetric PSD square root of `Σ̄`.
    pub fn sigma_sqrt(&self) -> DMatrix<f64> {
        linalg::psd_sqrt(&self.sigma_bar).expect("validated at construction")
    }

    /// Lower Cholesky-type factor of `Σ̄` (zero columns on null directions).
    pub fn sigma_factor(&self) -> DMatrix<f64> {
        linalg::semidefinite_cholesky(&self.sigma_bar).expect("validated at construction")
    }
}

/// Stacked matrices of the horizon dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMatrices {
    /// `(N+1)n × n`, block rows `I, A, …, A^N`.
    pub abar: DMatrix<f64>,
    /// `(N+1)n × Nm`, block `(t, s) = A^{t-1-s} B` for `s < t`.
    pub bbar: DMatrix<f64>,
    /// `(N+1)n × Nn`, block `(t, s) = A^{t-1-s}` for `s < t`.
    pub dbar: DMatrix<f64>,
}

pub fn stack_dynamics(model: &SystemModel) -> HorizonMatrices {
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..=horizon {
        let next = model.a() * &powers[k - 1];
        powers.push(next);
    }
    let mut abar = DMatrix::zeros((horizon + 1) * n, n);
    let mut bbar = DMatrix::zeros((horizon + 1) * n, horizon * m);
    let mut dbar = DMatrix::zeros((horizon + 1) * n, horizon * n);
    for t in 0..=horizon {
        abar.view_mut((t * n, 0), (n, n)).copy_from(&powers[t]);
        for s in 0..t {
            let p = &powers[t - 1 - s];
            bbar.view_mut((t * n, s * m), (n, m)).copy_from(&(p * model.b()));
            dbar.view_mut((t * n, s * n), (n, n)).copy_from(p);
        }
    }
    HorizonMatrices { abar, bbar, dbar }
}

impl HorizonMatrices {
    pub fn new(model: &SystemModel) -> Self {
        stack_dynamics(model)
    }
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(dim_err("expm of a non-square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("expm input has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(m.clone());
    }
    const THETA_13: f64 = 5.371_920_351_148_152;
    let norm1 = (0..n)
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA_13 { (norm1 / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);

    let c = pade_coefficients(13);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * c[13] + &a4 * c[11] + &a2 * c[9]) + &a6 * c[7] + &a4 * c[5] + &a2 * c[3] + &id * c[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * c[12] + &a4 * c[10] + &a2 * c[8]) + &a6 * c[6] + &a4 * c[4] + &a2 * c[2] + &id * c[0];
    let lu = (&v - &u).lu();
    let mut r = lu
        .solve(&(&v + &u))
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Diagonal Padé coefficients `c_j = (2q-j)! q! / ((2q)! j! (q-j)!)`.
fn pade_coefficients(q: usize) -> Vec<f64> {
    let mut c = vec![1.0; q + 1];
    for j in 1..=q {
        c[j] = c[j - 1] * (q - j + 1) as f64 / (j * (2 * q - j + 1)) as f64;
    }
    c
}

/// Zero-order-hold discretization with sampling time `h`, computed from the
/// exponential of the augmented matrix `[[Ac, Bc], [0, 0]]·h` so that a
/// singular `Ac` needs no special treatment.
pub fn discretize(ac: &DMatrix<f64>, bc: &DMatrix<f64>, h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ac.nrows();
    if ac.ncols() != n || bc.nrows() != n {
        return Err(dim_err(format!(
            "Ac is {}x{} and Bc is {}x{}",
            ac.nrows(),
            ac.ncols(),
            bc.nrows(),
            bc.ncols()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("sampling time {h} must be positive")));
    }
    let m = bc.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * h));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * h));
    let e = expm(&aug)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}
