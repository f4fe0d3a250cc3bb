//! Affine disturbance-feedback policies `ū = Ḡ w̄ + d̄` and the affine maps
//! from the free parameter vector θ̄ to the stacked closed-loop response.
//!
//! The free coordinates are `θ̄ = [d̄; Ḡ₁; …; Ḡ_{Nn}]` where `Ḡⱼ` holds the
//! entries of column `j` that lie below the causal zero pattern. Column `j`
//! belongs to the disturbance `w(s)` with `s = j / n`, which can only affect
//! `u(s+1), …, u(N-1)`, so its free rows are `(s+1)m .. Nm`. Columns are
//! visited in order and rows top to bottom (column-major).

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::horizon::{HorizonMatrices, SystemModel};

/// Dimensions of a policy and the ordering of its free coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyLayout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl PolicyLayout {
    pub fn new(n: usize, m: usize, horizon: usize) -> Self {
        Self { n, m, horizon }
    }

    pub fn of(model: &SystemModel) -> Self {
        Self::new(model.n(), model.m(), model.horizon())
    }

    /// Length `Nm` of `d̄`.
    pub fn input_dim(&self) -> usize {
        self.horizon * self.m
    }

    pub fn noise_dim(&self) -> usize {
        self.horizon * self.n
    }

    /// First free row of column `j` of `Ḡ`.
    pub fn first_free_row(&self, j: usize) -> usize {
        (j / self.n + 1) * self.m
    }

    pub fn free_gain_count(&self) -> usize {
        self.n * self.m * self.horizon * self.horizon.saturating_sub(1) / 2
    }

    /// Total number of free coordinates `Nm + nm·N(N-1)/2`.
    pub fn dim(&self) -> usize {
        self.input_dim() + self.free_gain_count()
    }

    /// `(row, column)` of every free gain entry, in θ̄ order (after `d̄`).
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.free_gain_count());
        for j in 0..self.noise_dim() {
            for i in self.first_free_row(j)..self.input_dim() {
                out.push((i, j));
            }
        }
        out
    }

    /// `true` when `(row, col)` of `Ḡ` is structurally zero.
    pub fn is_fixed_zero(&self, row: usize, col: usize) -> bool {
        row < self.first_free_row(col)
    }

    /// Selection matrix `H₀` with `H₀ θ̄ = d̄`.
    pub fn select_d(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.input_dim(), self.dim());
        for i in 0..self.input_dim() {
            h[(i, i)] = 1.0;
        }
        h
    }

    /// Selection matrix `Hⱼ` with `Hⱼ θ̄ = Ḡⱼ` (the full column `j`,
    /// structural zeros included).
    pub fn select_column(&self, j: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.input_dim(), self.dim());
        let mut k = self.input_dim();
        for col in 0..j {
            k += self.input_dim() - self.first_free_row(col);
        }
        for i in self.first_free_row(j)..self.input_dim() {
            h[(i, k)] = 1.0;
            k += 1;
        }
        h
    }
}

/// Causal policy `ū = Ḡ w̄ + d̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layout: PolicyLayout,
    gbar: DMatrix<f64>,
    dbar: DVector<f64>,
}

impl PolicyParams {
    /// Rejects wrong shapes and any nonzero entry in the causal zero pattern.
    pub fn new(layout: PolicyLayout, gbar: DMatrix<f64>, dbar: DVector<f64>) -> Result<Self> {
        let (nu, nw) = (layout.input_dim(), layout.noise_dim());
        if gbar.nrows() != nu || gbar.ncols() != nw {
            return Err(dim_err(format!("G is {}x{}, expected {nu}x{nw}", gbar.nrows(), gbar.ncols())));
        }
        if dbar.len() != nu {
            return Err(dim_err(format!("d has length {}, expected {nu}", dbar.len())));
        }
        for j in 0..nw {
            for i in 0..layout.first_free_row(j).min(nu) {
                if gbar[(i, j)] != 0.0 {
                    return Err(Error::NonCausal(format!(
                        "G[{i}][{j}] = {} couples u({}) to w({})",
                        gbar[(i, j)],
                        i / layout.m,
                        j / layout.n
                    )));
                }
            }
        }
        Ok(Self { layout, gbar, dbar })
    }

    pub fn zero(layout: PolicyLayout) -> Self {
        Self {
            layout,
            gbar: DMatrix::zeros(layout.input_dim(), layout.noise_dim()),
            dbar: DVector::zeros(layout.input_dim()),
        }
    }

    /// Open-loop policy `ū = d̄`.
    pub fn open_loop(layout: PolicyLayout, dbar: DVector<f64>) -> Result<Self> {
        Self::new(layout, DMatrix::zeros(layout.input_dim(), layout.noise_dim()), dbar)
    }

    pub fn layout(&self) -> PolicyLayout {
        self.layout
    }
    pub fn gbar(&self) -> &DMatrix<f64> {
        &self.gbar
    }
    pub fn dbar(&self) -> &DVector<f64> {
        &self.dbar
    }

    pub fn flatten(&self) -> ThetaVector {
        let mut v = Vec::with_capacity(self.layout.dim());
        v.extend(self.dbar.iter().copied());
        v.extend(self.layout.free_entries().into_iter().map(|(i, j)| self.gbar[(i, j)]));
        ThetaVector { theta_flat: DVector::from_vec(v) }
    }

    pub fn unflatten(layout: PolicyLayout, theta: &ThetaVector) -> Result<Self> {
        let t = &theta.theta_flat;
        if t.len() != layout.dim() {
            return Err(dim_err(format!("θ has length {}, expected {}", t.len(), layout.dim())));
        }
        let nu = layout.input_dim();
        let dbar = t.rows(0, nu).into_owned();
        let mut gbar = DMatrix::zeros(nu, layout.noise_dim());
        for (k, (i, j)) in layout.free_entries().into_iter().enumerate() {
            gbar[(i, j)] = t[nu + k];
        }
        Ok(Self { layout, gbar, dbar })
    }
}

/// Flat vector of free policy coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub theta_flat: DVector<f64>,
}

impl ThetaVector {
    pub fn new(theta_flat: DVector<f64>) -> Self {
        Self { theta_flat }
    }
    pub fn zeros(layout: PolicyLayout) -> Self {
        Self::new(DVector::zeros(layout.dim()))
    }
    pub fn len(&self) -> usize {
        self.theta_flat.len()
    }
    pub fn is_empty(&self) -> bool {
        self.theta_flat.is_empty()
    }
}

pub fn apply_policy(theta: &PolicyParams, wbar: &DVector<f64>) -> Result<DVector<f64>> {
    if wbar.len() != theta.layout.noise_dim() {
        return Err(dim_err(format!(
            "w has length {}, expected {}",
            wbar.len(),
            theta.layout.noise_dim()
        )));
    }
    Ok(&theta.gbar * wbar + &theta.dbar)
}

/// Stacked `[x̄; ū] = c_theta + L_theta w̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMaps {
    pub c_theta: DVector<f64>,
    pub l_theta: DMatrix<f64>,
}

/// Policy-independent pieces of the response: `c_θ = c0 + K d̄` and
/// `L_θ = L0 + K Ḡ` with `K = [B̄; I]`, `c0 = [Āx0; 0]`, `L0 = [D̄; 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseBasis {
    pub k: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub l0: DMatrix<f64>,
}

impl ResponseBasis {
    pub fn new(model: &SystemModel, mats: &HorizonMatrices) -> Result<Self> {
        check_mats(model, mats)?;
        let nx = mats.abar.nrows();
        let nu = mats.bbar.ncols();
        let nz = nx + nu;
        let mut k = DMatrix::zeros(nz, nu);
        k.view_mut((0, 0), (nx, nu)).copy_from(&mats.bbar);
        k.view_mut((nx, 0), (nu, nu)).fill_with_identity();
        let mut c0 = DVector::zeros(nz);
        c0.rows_mut(0, nx).copy_from(&(&mats.abar * model.x0()));
        let mut l0 = DMatrix::zeros(nz, mats.dbar.ncols());
        l0.view_mut((0, 0), (nx, mats.dbar.ncols())).copy_from(&mats.dbar);
        Ok(Self { k, c0, l0 })
    }

    pub fn maps(&self, theta: &PolicyParams) -> Result<ResponseMaps> {
        if theta.dbar.len() != self.k.ncols() || theta.gbar.ncols() != self.l0.ncols() {
            return Err(dim_err("policy does not match the horizon matrices"));
        }
        Ok(ResponseMaps {
            c_theta: &self.c0 + &self.k * &theta.dbar,
            l_theta: &self.l0 + &self.k * &theta.gbar,
        })
    }
}

fn check_mats(model: &SystemModel, mats: &HorizonMatrices) -> Result<()> {
    let (n, m, h) = (model.n(), model.m(), model.horizon());
    let nx = (h + 1) * n;
    if mats.abar.shape() != (nx, n) || mats.bbar.shape() != (nx, h * m) || mats.dbar.shape() != (nx, h * n) {
        return Err(dim_err("horizon matrices do not match the model"));
    }
    Ok(())
}

pub fn response_maps(theta: &PolicyParams, model: &SystemModel, mats: &HorizonMatrices) -> Result<ResponseMaps> {
    if theta.layout != PolicyLayout::of(model) {
        return Err(dim_err("policy layout does not match the model"));
    }
    ResponseBasis::new(model, mats)?.maps(theta)
}

/// Step-by-step simulation of `x(t+1) = A x(t) + B u(t) + w(t)` under the
/// policy; returns `(states, inputs)` with `N+1` states and `N` inputs.
pub fn simulate_recursion(
    theta: &PolicyParams,
    model: &SystemModel,
    x0: &DVector<f64>,
    wbar: &DVector<f64>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let ubar = apply_policy(theta, wbar)?;
    let (n, m) = (model.n(), model.m());
    let mut states = Vec::with_capacity(model.horizon() + 1);
    let mut inputs = Vec::with_capacity(model.horizon());
    states.push(x0.clone());
    for t in 0..model.horizon() {
        let u = ubar.rows(t * m, m).into_owned();
        let next = model.a() * &states[t] + model.b() * &u + wbar.rows(t * n, n);
        inputs.push(u);
        states.push(next);
    }
    Ok((states, inputs))
}
