//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite 20-point Gauss–Legendre over panels no wider than `width`.
pub fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, width: f64) -> f64 {
    thread_local! {
        static RULE: Vec<(f64, f64)> = gauss_legendre(20);
    }
    if b == a {
        return 0.0;
    }
    let panels = ((b - a).abs() / width).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    RULE.with(|rule| {
        let mut total = 0.0;
        for k in 0..panels {
            let mid = a + (k as f64 + 0.5) * h;
            let part: f64 = rule.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum();
            total += 0.5 * h * part;
        }
        total
    })
}

/// `∫ₐ^∞ f`: panels up to `a + 20·scale`, then `s = u/(1-u)` for the tail.
pub fn quad_to_inf(f: &dyn Fn(f64) -> f64, a: f64, scale: f64) -> f64 {
    let near = quad(f, a, a + 20.0 * scale, 0.05 * scale);
    let g = |u: f64| {
        let d = 1.0 - u;
        f(a + 20.0 * scale + scale * u / d) * scale / (d * d)
    };
    near + quad(&g, 0.0, 1.0, 0.01)
}

/// `erf` from its defining integral.
pub fn erf_quad(x: f64) -> f64 {
    let c = 2.0 / std::f64::consts::PI.sqrt();
    let v = quad(&|t: f64| (-t * t).exp(), 0.0, x.abs(), 0.05);
    (c * v).copysign(x)
}

/// Root of an increasing function on `[lo, hi]`.
pub fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `ln Γ(k/2)` by the recurrence from `Γ(1/2) = √π`, `Γ(1) = 1`.
pub fn ln_gamma_half(k: u32) -> f64 {
    let mut v = if k.is_multiple_of(2) { 0.0 } else { 0.5 * std::f64::consts::PI.ln() };
    let mut a = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while a < 0.5 * k as f64 - 1e-9 {
        v += a.ln();
        a += 1.0;
    }
    v
}

/// Chi-square CDF by quadrature of the density in `u = √x`.
pub fn chi2_cdf_quad(x: f64, k: u32) -> f64 {
    let kf = k as f64;
    let log_norm = 0.5 * kf * 2f64.ln() + ln_gamma_half(k);
    let f = |u: f64| {
        if u <= 0.0 {
            return if k == 1 { 2.0 * (-log_norm).exp() } else { 0.0 };
        }
        2.0 * ((kf - 1.0) * u.ln() - 0.5 * u * u - log_norm).exp()
    };
    // Split at the mode so the peak sits on a panel edge.
    let mode = (kf - 1.0).max(0.0).sqrt();
    let top = x.sqrt();
    if top <= mode {
        quad(&f, 0.0, top, 0.05)
    } else {
        quad(&f, 0.0, mode, 0.05) + quad(&f, mode, top, 0.05)
    }
}

/// Central-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Central differences of a gradient map.
pub fn fd_jacobian(g: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut p = x.clone();
        let mut m = x.clone();
        p[j] += h;
        m[j] -= h;
        out.set_column(j, &((g(&p) - g(&m)) / (2.0 * h)));
    }
    out
}

/// Test-side generator, independent of the library's sampler.
pub struct Rng(ChaCha20Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }
    /// Uniform on `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
    /// Box–Muller.
    pub fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
    pub fn normals(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }
    pub fn matrix(&mut self, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| scale * self.range(-1.0, 1.0))
    }
    pub fn vector(&mut self, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| scale * self.range(-1.0, 1.0))
    }
    /// Random PSD matrix `FFᵀ` with `F` of size `n × rank`.
    pub fn psd(&mut self, n: usize, rank: usize) -> DMatrix<f64> {
        let f = self.matrix(n, rank, 1.0);
        &f * f.transpose()
    }
}

/// Sample mean and its standard error.
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Upper normal tail `Q(z) = ∫_z^∞ φ` by quadrature, without cancellation.
pub fn normal_tail_quad(z: f64) -> f64 {
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    quad_to_inf(&|s: f64| c * (-0.5 * s * s).exp(), z, 1.0)
}

/// `z` with `Q(z) = p` for `p < 1/2`, by bisection on `ln Q`.
pub fn upper_quantile_oracle(p: f64) -> f64 {
    bisect(&|z| p.ln() - normal_tail_quad(z).ln(), 0.0, 40.0)
}

/// Chi-square quantile by bisection on [`chi2_cdf_quad`].
pub fn chi2_inv_oracle(prob: f64, k: u32) -> f64 {
    let mut hi = k as f64 + 10.0;
    while chi2_cdf_quad(hi, k) < prob {
        hi *= 2.0;
    }
    bisect(&|t| chi2_cdf_quad(t, k) - prob, 0.0, hi)
}

/// Golden-section maximum over `λ ∈ [0, 1]` of the smallest eigenvalue of
/// the assembled LMI, which is concave in λ.
pub fn best_min_eigenvalue(xi: &DVector<f64>, s: &DMatrix<f64>) -> (f64, f64) {
    let f = |l: f64| ccmpc::linalg::min_eigenvalue(&ccmpc::ellipsoidal::assemble(xi, s, l));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 1.0);
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        }
    }
    [(f(0.0), 0.0), (f(1.0), 1.0), (fc, c), (fd, d)]
        .into_iter()
        .fold((f64::NEG_INFINITY, 0.0), |acc, p| if p.0 > acc.0 { p } else { acc })
}

/// Uniform point on the unit sphere.
pub fn sphere_point(rng: &mut Rng, n: usize) -> DVector<f64> {
    let v = rng.normals(n);
    let norm = v.norm();
    v / norm
}
