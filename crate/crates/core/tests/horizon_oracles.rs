//! Discretization and stacking against direct integration and recursion.

mod common;

use ccmpc::benchmark::{continuous_model, SAMPLING_TIME};
use ccmpc::horizon::{discretize, stack_dynamics, SystemModel};
use ccmpc::policy::{response_maps, simulate_recursion, PolicyLayout, PolicyParams};
use common::Rng;
use nalgebra::{DMatrix, DVector};

/// Classical RK4 of `ẋ = Ac x + Bc u` with `u` held constant.
fn rk4(ac: &DMatrix<f64>, bc: &DMatrix<f64>, x0: &DVector<f64>, u: &DVector<f64>, t: f64, dt: f64) -> DVector<f64> {
    let f = |x: &DVector<f64>| ac * x + bc * u;
    let steps = (t / dt).round() as usize;
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (0.5 * dt)));
        let k3 = f(&(&x + &k2 * (0.5 * dt)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    x
}

#[test]
fn spring_mass_discretization_matches_rk4() {
    let (ac, bc) = continuous_model();
    let (a, b) = discretize(&ac, &bc, SAMPLING_TIME).unwrap();
    let (n, m) = (ac.nrows(), bc.ncols());
    for i in 0..n {
        let x0 = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        let col = rk4(&ac, &bc, &x0, &DVector::zeros(m), SAMPLING_TIME, 1e-4);
        assert!((a.column(i) - col).amax() < 1e-8, "A column {i}");
    }
    for j in 0..m {
        let u = DVector::from_fn(m, |k, _| if k == j { 1.0 } else { 0.0 });
        let col = rk4(&ac, &bc, &DVector::zeros(n), &u, SAMPLING_TIME, 1e-4);
        assert!((b.column(j) - col).amax() < 1e-8, "B column {j}");
    }
}

#[test]
fn random_discretization_matches_rk4() {
    let mut rng = Rng::new(11);
    for _ in 0..5 {
        let ac = rng.matrix(4, 4, 1.0);
        let bc = rng.matrix(4, 2, 1.0);
        let h = rng.range(0.1, 1.0);
        let (a, b) = discretize(&ac, &bc, h).unwrap();
        let x0 = rng.vector(4, 1.0);
        let u = rng.vector(2, 1.0);
        let oracle = rk4(&ac, &bc, &x0, &u, h, h / 20_000.0);
        assert!((&a * &x0 + &b * &u - oracle).amax() < 1e-9);
    }
}

#[test]
fn stacked_dynamics_match_step_recursion() {
    let mut rng = Rng::new(3);
    for _ in 0..20 {
        let (n, m, horizon) = (3, 2, 4);
        let a = rng.matrix(n, n, 0.8);
        let b = rng.matrix(n, m, 1.0);
        let x0 = rng.vector(n, 1.0);
        let model = SystemModel::with_iid_noise(a.clone(), b.clone(), 1.0, x0.clone(), horizon).unwrap();
        let mats = stack_dynamics(&model);
        let ubar = rng.vector(horizon * m, 1.0);
        let wbar = rng.vector(horizon * n, 1.0);
        let stacked = &mats.abar * &x0 + &mats.bbar * &ubar + &mats.dbar * &wbar;
        let mut x = x0.clone();
        for t in 0..=horizon {
            assert!((stacked.rows(t * n, n) - &x).amax() < 1e-12, "t = {t}");
            if t < horizon {
                x = &a * &x + &b * ubar.rows(t * m, m) + wbar.rows(t * n, n);
            }
        }
    }
}

#[test]
fn response_maps_match_recursion_under_feedback() {
    let mut rng = Rng::new(5);
    let (n, m, horizon) = (3, 2, 4);
    let model = SystemModel::with_iid_noise(rng.matrix(n, n, 0.8), rng.matrix(n, m, 1.0), 1.0, rng.vector(n, 1.0), horizon)
        .unwrap();
    let mats = stack_dynamics(&model);
    let layout = PolicyLayout::of(&model);
    for _ in 0..20 {
        let mut g = rng.matrix(horizon * m, horizon * n, 1.0);
        for (r, c) in (0..horizon * m).flat_map(|r| (0..horizon * n).map(move |c| (r, c))) {
            if layout.is_fixed_zero(r, c) {
                g[(r, c)] = 0.0;
            }
        }
        let theta = PolicyParams::new(layout, g, rng.vector(horizon * m, 1.0)).unwrap();
        let maps = response_maps(&theta, &model, &mats).unwrap();
        let wbar = rng.vector(horizon * n, 1.0);
        let z = &maps.c_theta + &maps.l_theta * &wbar;
        let (xs, us) = simulate_recursion(&theta, &model, model.x0(), &wbar).unwrap();
        let direct: Vec<f64> = xs.iter().chain(us.iter()).flat_map(|v| v.iter().copied()).collect();
        assert!((z - DVector::from_vec(direct)).amax() < 1e-12);
    }
}
