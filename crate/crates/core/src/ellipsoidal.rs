//! Chance constraint `P((z − δ)ᵀ Ξ (z − δ) ≤ 1) ≥ 1 − α` on the stacked
//! response `z = [x̄; ū]`, enforced through the linear matrix inequality
//!
//! ```text
//! [ 1 − λ   0     ξ_θᵀ ]
//! [ 0       λI    S_θᵀ ]  ⪰ 0,   ξ_θ = Ξ^{1/2}(c_θ − δ),  S_θ = β Ξ^{1/2} L_θ Σ̄^{1/2}
//! [ ξ_θ     S_θ   I    ]
//! ```
//!
//! which holds for some λ iff `‖ξ_θ + S_θ v‖ ≤ 1` on the unit ball, i.e. the
//! confidence ellipsoid of the noise maps into the constraint ellipsoid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::chance::beta_ellipsoid;
use crate::error::{dim_err, Error, Result};
use crate::horizon::{HorizonMatrices, SystemModel};
use crate::linalg;
use crate::policy::{PolicyLayout, PolicyParams, ResponseBasis};
use crate::solver::{LinearMatrixInequality, LmiCoef};
use crate::specfun::Probability;

/// `(z − δ)ᵀ Ξ (z − δ) ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidalConstraint {
    pub xi: DMatrix<f64>,
    pub delta: DVector<f64>,
}

impl EllipsoidalConstraint {
    pub fn new(xi: DMatrix<f64>, delta: DVector<f64>) -> Result<Self> {
        if xi.nrows() != xi.ncols() || delta.len() != xi.nrows() {
            return Err(dim_err(format!("Ξ is {}x{}, δ has length {}", xi.nrows(), xi.ncols(), delta.len())));
        }
        if !linalg::is_symmetric(&xi, 1e-12) {
            return Err(Error::NotPsd("Ξ is not symmetric".into()));
        }
        linalg::psd_sqrt(&xi)?;
        Ok(Self { xi, delta })
    }

    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        let d = z - &self.delta;
        d.dot(&(&self.xi * &d)) - 1.0
    }
}

/// Affine maps `θ̄ ↦ ξ_θ = xi0 + xi_d d̄` and `θ̄ ↦ S_θ = s0 + s_k Ḡ Σ̄^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraintData {
    pub layout: PolicyLayout,
    pub xi0: DVector<f64>,
    pub xi_d: DMatrix<f64>,
    pub s0: DMatrix<f64>,
    pub s_k: DMatrix<f64>,
    pub sigma_sqrt: DMatrix<f64>,
    pub beta: f64,
}

/// β uses `min(dim z, N·n)` degrees of freedom.
pub fn build_lmi_data(
    c: &EllipsoidalConstraint,
    alpha: Probability,
    model: &SystemModel,
    mats: &HorizonMatrices,
) -> Result<LmiConstraintData> {
    let basis = ResponseBasis::new(model, mats)?;
    let nz = basis.c0.len();
    if c.xi.nrows() != nz {
        return Err(dim_err(format!("Ξ has order {}, expected {nz}", c.xi.nrows())));
    }
    let root = linalg::psd_sqrt(&c.xi)?;
    let beta = beta_ellipsoid(alpha, nz, model.noise_dim())?;
    let sigma_sqrt = model.sigma_sqrt();
    Ok(LmiConstraintData {
        layout: PolicyLayout::of(model),
        xi0: &root * (&basis.c0 - &c.delta),
        xi_d: &root * &basis.k,
        s0: &root * &basis.l0 * &sigma_sqrt * beta,
        s_k: &root * &basis.k * beta,
        sigma_sqrt,
        beta,
    })
}

impl LmiConstraintData {
    pub fn xi(&self, theta: &PolicyParams) -> DVector<f64> {
        &self.xi0 + &self.xi_d * theta.dbar()
    }

    pub fn s(&self, theta: &PolicyParams) -> DMatrix<f64> {
        &self.s0 + &self.s_k * theta.gbar() * &self.sigma_sqrt
    }

    fn ydim(&self) -> usize {
        self.xi0.len()
    }

    fn noise_dim(&self) -> usize {
        self.s0.ncols()
    }

    /// LMI order `1 + N·n + dim z`.
    pub fn order(&self) -> usize {
        1 + self.noise_dim() + self.ydim()
    }

    /// The LMI as an affine matrix function of `(θ̄, λ)`.
    pub fn to_lmi(&self) -> LinearMatrixInequality {
        let (nw, ny) = (self.noise_dim(), self.ydim());
        let p = self.order();
        let (o1, o2) = (1, 1 + nw);
        let mut f0 = DMatrix::zeros(p, p);
        f0[(0, 0)] = 1.0;
        for i in 0..ny {
            f0[(o2 + i, o2 + i)] = 1.0;
            f0[(o2 + i, 0)] = self.xi0[i];
            f0[(0, o2 + i)] = self.xi0[i];
        }
        f0.view_mut((o2, o1), (ny, nw)).copy_from(&self.s0);
        f0.view_mut((o1, o2), (nw, ny)).copy_from(&self.s0.transpose());

        let mut e0 = DVector::zeros(p);
        e0[0] = 1.0;
        let mut coefs = Vec::with_capacity(self.layout.dim() + 1);
        for a in 0..self.layout.input_dim() {
            let mut u = DVector::zeros(p);
            u.rows_mut(o2, ny).copy_from(&self.xi_d.column(a));
            coefs.push(LmiCoef::Rank2 { u, v: e0.clone() });
        }
        for (a, b) in self.layout.free_entries() {
            let mut u = DVector::zeros(p);
            u.rows_mut(o2, ny).copy_from(&self.s_k.column(a));
            let mut v = DVector::zeros(p);
            v.rows_mut(o1, nw).copy_from(&self.sigma_sqrt.row(b).transpose());
            coefs.push(LmiCoef::Rank2 { u, v });
        }
        let mut lam = DVector::zeros(p);
        lam[0] = -1.0;
        lam.rows_mut(o1, nw).fill(1.0);
        coefs.push(LmiCoef::Diagonal(lam));
        LinearMatrixInequality::new(f0, coefs).expect("consistent by construction")
    }
}

/// `[[1 − λ, 0, ξᵀ], [0, λI, Sᵀ], [ξ, S, I]]`.
pub fn build_lmi(data: &LmiConstraintData, theta: &PolicyParams, lambda: f64) -> Result<DMatrix<f64>> {
    if theta.layout() != data.layout {
        return Err(dim_err("policy layout does not match the LMI data"));
    }
    Ok(assemble(&data.xi(theta), &data.s(theta), lambda))
}

pub fn assemble(xi: &DVector<f64>, s: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (ny, nw) = s.shape();
    let p = 1 + nw + ny;
    let (o1, o2) = (1, 1 + nw);
    let mut m = DMatrix::zeros(p, p);
    m[(0, 0)] = 1.0 - lambda;
    for i in 0..nw {
        m[(o1 + i, o1 + i)] = lambda;
    }
    for i in 0..ny {
        m[(o2 + i, o2 + i)] = 1.0;
        m[(o2 + i, 0)] = xi[i];
        m[(0, o2 + i)] = xi[i];
    }
    m.view_mut((o2, o1), (ny, nw)).copy_from(s);
    m.view_mut((o1, o2), (nw, ny)).copy_from(&s.transpose());
    m
}

/// Maximum of `‖ξ + S v‖²` over `‖v‖ ≤ 1` with its Lagrange multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallMaximum {
    pub sup_squared: f64,
    /// `μ ≥ λ_max(SᵀS)` with `(μI − SᵀS) v = Sᵀξ` at the maximizer; also a
    /// witness λ for the LMI.
    pub multiplier: f64,
}

/// Exact maximizer of a convex quadratic on the unit ball via the secular
/// equation `Σ γᵢ²/(μ − λᵢ)² = 1` on the eigendecomposition of `SᵀS`.
pub fn ball_maximum(xi: &DVector<f64>, s: &DMatrix<f64>) -> Result<BallMaximum> {
    if s.nrows() != xi.len() {
        return Err(dim_err(format!("S has {} rows, ξ has length {}", s.nrows(), xi.len())));
    }
    let c = xi.norm_squared();
    if s.ncols() == 0 {
        return Ok(BallMaximum { sup_squared: c, multiplier: 0.0 });
    }
    let a = s.transpose() * s;
    let eig = SymmetricEigen::new(linalg::symmetrize(&a));
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let gamma = eig.eigenvectors.transpose() * (s.transpose() * xi);
    let lmax = lam.iter().copied().fold(0.0, f64::max);
    let scale = lmax.max(c).max(1.0);
    let tie = 1e-12 * scale;

    // ‖w(μ)‖² and the objective increment at w(μ) = (μ − Λ)⁻¹γ.
    let parts = |mu: f64, skip_top: bool| -> (f64, f64) {
        let (mut n2, mut inc) = (0.0, 0.0);
        for (l, g) in lam.iter().zip(gamma.iter()) {
            if skip_top && lmax - l <= tie {
                continue;
            }
            let w = g / (mu - l);
            n2 += w * w;
            inc += 2.0 * g * w + l * w * w;
        }
        (n2, inc)
    };

    let top_weight: f64 = lam
        .iter()
        .zip(gamma.iter())
        .filter(|(l, _)| lmax - **l <= tie)
        .map(|(_, g)| g * g)
        .sum();
    let gnorm = gamma.norm();
    if top_weight <= (1e-14 * scale).powi(2) {
        // Hard case: the rest of the spectrum may not exhaust the ball.
        let (n2, inc) = parts(lmax, true);
        if n2 <= 1.0 {
            return Ok(BallMaximum { sup_squared: c + inc + lmax * (1.0 - n2), multiplier: lmax });
        }
    }
    // Root of 1/‖w(μ)‖ − 1 on (λmax, λmax + ‖γ‖], safeguarded Newton.
    let (mut lo, mut hi) = (lmax, lmax + gnorm);
    let mut mu = hi;
    for _ in 0..200 {
        let (mut n2, mut d) = (0.0, 0.0);
        for (l, g) in lam.iter().zip(gamma.iter()) {
            let r = mu - l;
            n2 += g * g / (r * r);
            d += g * g / (r * r * r);
        }
        let norm = n2.sqrt();
        let psi = 1.0 / norm - 1.0;
        if psi > 0.0 {
            hi = mu;
        } else {
            lo = mu;
        }
        if psi.abs() <= 1e-15 {
            break;
        }
        // dψ/dμ = (Σ γ²/r³) / ‖w‖³
        let step = psi / (d / (norm * norm * norm));
        let mut next = mu - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - mu).abs() <= 1e-16 * mu.abs().max(1e-300) && hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        mu = next;
    }
    let (_, inc) = parts(mu, false);
    Ok(BallMaximum { sup_squared: c + inc, multiplier: mu })
}

/// `max_{‖v‖≤1} ‖ξ + S v‖`.
pub fn sup_norm_on_ball(xi: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    Ok(ball_maximum(xi, s)?.sup_squared.max(0.0).sqrt())
}

/// Feasibility of the LMI for some `λ ≥ 0`, with the secular multiplier as
/// witness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiVerdict {
    pub feasible: bool,
    pub sup_norm: f64,
    pub witness: Option<f64>,
}

pub fn lmi_feasible(data: &LmiConstraintData, theta: &PolicyParams) -> Result<LmiVerdict> {
    if theta.layout() != data.layout {
        return Err(dim_err("policy layout does not match the LMI data"));
    }
    verdict(&data.xi(theta), &data.s(theta))
}

pub fn verdict(xi: &DVector<f64>, s: &DMatrix<f64>) -> Result<LmiVerdict> {
    let b = ball_maximum(xi, s)?;
    let feasible = b.sup_squared <= 1.0;
    Ok(LmiVerdict {
        feasible,
        sup_norm: b.sup_squared.max(0.0).sqrt(),
        witness: feasible.then_some(b.multiplier),
    })
}

/// `−log det` of the LMI and its gradient over `(θ̄, λ)`. Errors when the
/// matrix is not positive definite.
pub fn lmi_barrier(data: &LmiConstraintData, theta: &PolicyParams, lambda: f64) -> Result<(f64, DVector<f64>)> {
    if theta.layout() != data.layout {
        return Err(dim_err("policy layout does not match the LMI data"));
    }
    let x = theta.flatten().theta_flat.push(lambda);
    let (v, g, _) = data
        .to_lmi()
        .log_det_barrier(&x)
        .ok_or_else(|| Error::Domain("LMI matrix is not positive definite".into()))?;
    Ok((v, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn trivial_lmi_cases() {
        let xi = DVector::zeros(2);
        let s = DMatrix::zeros(2, 3);
        let m = assemble(&xi, &s, 0.0);
        assert!(linalg::min_eigenvalue(&m) >= 0.0);
        let xi = DVector::from_vec(vec![1.2, 0.0]);
        for lam in [0.0, 0.3, 1.0, 2.0] {
            assert!(linalg::min_eigenvalue(&assemble(&xi, &s, lam)) < 0.0);
        }
        assert!(!verdict(&xi, &s).unwrap().feasible);
        let s = DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 0.0, 0.0, 0.3, 0.0]);
        let v = verdict(&DVector::zeros(2), &s).unwrap();
        assert!(v.feasible && (v.sup_norm - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sup_special_cases() {
        let xi = DVector::from_vec(vec![0.3, -0.4]);
        assert!((sup_norm_on_ball(&xi, &DMatrix::zeros(2, 4)).unwrap() - 0.5).abs() < 1e-15);
        let mut seed = 9;
        let s = DMatrix::from_fn(4, 6, |_, _| lcg(&mut seed));
        let smax = s.clone().svd(false, false).singular_values.max();
        assert!((sup_norm_on_ball(&DVector::zeros(4), &s).unwrap() - smax).abs() < 1e-12);
    }

    #[test]
    fn witness_makes_lmi_psd_and_schur_matches() {
        let mut seed = 21;
        for _ in 0..200 {
            let xi = DVector::from_fn(3, |_, _| 0.5 * lcg(&mut seed));
            let s = DMatrix::from_fn(3, 4, |_, _| 0.3 * lcg(&mut seed));
            let b = ball_maximum(&xi, &s).unwrap();
            let m = assemble(&xi, &s, b.multiplier);
            let lmin = linalg::min_eigenvalue(&m);
            if b.sup_squared <= 1.0 - 1e-9 {
                assert!(lmin >= -1e-10, "witness not PSD: {lmin}");
            }
            if b.sup_squared > 1.0 + 1e-9 {
                // No λ on a fine grid makes it PSD.
                for k in 0..400 {
                    let lam = k as f64 / 200.0;
                    assert!(linalg::min_eigenvalue(&assemble(&xi, &s, lam)) < 0.0);
                }
            }
        }
    }

    #[test]
    fn hard_case_uses_top_eigenspace() {
        // ξ orthogonal to the top singular direction.
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let xi = DVector::from_vec(vec![0.0, 0.1]);
        let b = ball_maximum(&xi, &s).unwrap();
        // Maximizer v = (±√(1 − w²), w) with w = 0.05/(4 − 0.25).
        let w: f64 = 0.05 / 3.75;
        let val = 4.0 * (1.0 - w * w) + (0.1 + 0.5 * w).powi(2);
        assert!((b.sup_squared - val).abs() < 1e-12);
        assert_eq!(b.multiplier, 4.0);
    }
}
