//! Closed forms against Monte Carlo with an independent generator.

mod common;

use ccmpc::benchmark::{self, Scenario};
use ccmpc::chance::{build_affine_data, exp_bound_value, PolytopicConstraint};
use ccmpc::cost::{expected_cost, lqg_riccati, state_feedback_policy, QuadraticCost};
use ccmpc::horizon::{stack_dynamics, HorizonMatrices, SystemModel};
use ccmpc::icc::{icc_value, IccConstraint};
use ccmpc::mc::{estimate_violation, simulate_runs, wilson_interval, NoiseSampler, ViolationEstimate, WILSON_Z};
use ccmpc::policy::{response_maps, PolicyLayout, PolicyParams};
use ccmpc::problem::{synthesize, HardKind};
use common::{mean_and_se, Rng};
use nalgebra::{DMatrix, DVector};

struct Instance {
    model: SystemModel,
    mats: HorizonMatrices,
    theta: PolicyParams,
    chol: DMatrix<f64>,
}

fn random_instance(rng: &mut Rng, n: usize, m: usize, horizon: usize) -> Instance {
    let a = rng.matrix(n, n, 0.7);
    let b = rng.matrix(n, m, 1.0);
    let nw = horizon * n;
    let sigma = rng.psd(nw, nw) * 0.05 + DMatrix::identity(nw, nw) * 0.01;
    let model = SystemModel::new(a, b, sigma.clone(), rng.vector(n, 1.0), horizon).unwrap();
    let mats = stack_dynamics(&model);
    let layout = PolicyLayout::of(&model);
    let mut g = rng.matrix(horizon * m, nw, 0.5);
    for r in 0..horizon * m {
        for c in 0..nw {
            if layout.is_fixed_zero(r, c) {
                g[(r, c)] = 0.0;
            }
        }
    }
    let theta = PolicyParams::new(layout, g, rng.vector(horizon * m, 0.5)).unwrap();
    let chol = sigma.cholesky().unwrap().l();
    Instance { model, mats, theta, chol }
}

/// Stacked `[x̄; ū]` for one noise draw, by the step recursion.
fn sample_response(inst: &Instance, rng: &mut Rng) -> (DVector<f64>, DVector<f64>) {
    let w = &inst.chol * rng.normals(inst.chol.nrows());
    let (xs, us) = ccmpc::policy::simulate_recursion(&inst.theta, &inst.model, inst.model.x0(), &w).unwrap();
    let x = DVector::from_iterator(xs.len() * inst.model.n(), xs.iter().flat_map(|v| v.iter().copied()));
    let u = DVector::from_iterator(us.len() * inst.model.m(), us.iter().flat_map(|v| v.iter().copied()));
    (x, u)
}

fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

#[test]
fn sampler_mean_and_covariance() {
    let n = 4;
    let sampler = NoiseSampler::new(&DMatrix::identity(n, n), 17).unwrap();
    let draws = 1_000_000;
    let mut sum = DVector::zeros(n);
    for k in 0..draws {
        sum += sampler.sample(k);
    }
    let mean = sum / draws as f64;
    assert!(mean.amax() < 4.0 / (draws as f64).sqrt(), "mean {mean}");

    // Spring-mass covariance σ²I over the horizon.
    let problem = benchmark::scenario_spec(Scenario::SpringsSep, 0.1, 10.0).build().unwrap();
    let sigma = problem.model.sigma_bar().clone();
    let sampler = NoiseSampler::new(&sigma, 23).unwrap();
    let nw = sigma.nrows();
    let mut acc = DMatrix::zeros(nw, nw);
    for k in 0..draws {
        let w = sampler.sample(k);
        acc.ger(1.0, &w, &w, 1.0);
    }
    let cov = acc / draws as f64;
    assert!((cov - &sigma).norm() < 0.01);
}

#[test]
fn expected_cost_matches_monte_carlo() {
    let mut rng = Rng::new(101);
    for _ in 0..3 {
        let inst = random_instance(&mut rng, 2, 1, 3);
        let nz = 4 * 2 + 3;
        let m = rng.psd(nz, nz);
        let cost = QuadraticCost::new(m.clone()).unwrap();
        let exact = expected_cost(&inst.theta, &cost, &inst.model, &inst.mats).unwrap();
        let samples: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let (x, u) = sample_response(&inst, &mut rng);
                let z = stack(&x, &u);
                z.dot(&(&m * &z))
            })
            .collect();
        let (mean, se) = mean_and_se(&samples);
        assert!((mean - exact).abs() < 4.0 * se, "exact {exact}, MC {mean} ± {se}");
    }
}

#[test]
fn lqg_cost_matches_closed_loop_monte_carlo() {
    let problem = benchmark::scenario_spec(Scenario::SpringsSep, 0.1, 10.0).build().unwrap();
    let model = &problem.model;
    let (q, r) = benchmark::weights();
    let lqg = lqg_riccati(model.a(), model.b(), &q, &r, model.horizon()).unwrap();
    let policy = state_feedback_policy(model, &lqg.gains).unwrap();
    let exact = expected_cost(&policy, &problem.cost, model, &problem.mats).unwrap();
    assert!(exact > 0.0);
    for p in &lqg.values {
        assert!(p.clone().symmetric_eigenvalues().min() > -1e-12);
    }
    let mut rng = Rng::new(7);
    let sigma = benchmark::SIGMA;
    let samples: Vec<f64> = (0..200_000)
        .map(|_| {
            let mut x = model.x0().clone();
            let mut total = 0.0;
            for k in &lqg.gains {
                let u = -(k * &x);
                total += x.dot(&(&q * &x)) + u.dot(&(&r * &u));
                x = model.a() * &x + model.b() * &u + rng.normals(model.n()) * sigma;
            }
            total + x.dot(&(&q * &x))
        })
        .collect();
    let (mean, se) = mean_and_se(&samples);
    assert!((mean - exact).abs() < 4.0 * se, "exact {exact}, MC {mean} ± {se}");
}

#[test]
fn lqg_disturbance_feedback_replays_and_envelopes_decay() {
    let problem = benchmark::scenario_spec(Scenario::SpringsSep, 0.1, 10.0).build().unwrap();
    let model = &problem.model;
    let (q, r) = benchmark::weights();
    let lqg = lqg_riccati(model.a(), model.b(), &q, &r, model.horizon()).unwrap();
    let policy = state_feedback_policy(model, &lqg.gains).unwrap();
    let batch = simulate_runs(&policy, model, 1000, 5).unwrap();
    let n = model.n();
    for run in batch.runs.iter().take(50) {
        let mut x = model.x0().clone();
        for (t, k) in lqg.gains.iter().enumerate() {
            let u = -(k * &x);
            assert!((run.ubar.rows(t * 3, 3) - &u).amax() < 1e-10);
            x = model.a() * &x + model.b() * &u + run.wbar.rows(t * n, n);
        }
        assert!((run.xbar.rows(model.horizon() * n, n) - x).amax() < 1e-10);
    }
    // Mean displacement of the excited mass shrinks from its initial value.
    let mean_d4 = |t: usize| batch.runs.iter().map(|r| r.xbar[t * n + 3]).sum::<f64>() / batch.len() as f64;
    assert!(mean_d4(model.horizon()).abs() < 0.5 * mean_d4(0).abs());
}

#[test]
fn exp_bound_matches_monte_carlo() {
    let mut rng = Rng::new(202);
    let inst = random_instance(&mut rng, 2, 1, 3);
    let nx = 4 * 2;
    let rows = 3;
    let tx = rng.matrix(rows, nx, 1.0);
    let tu = rng.matrix(rows, 3, 1.0);
    let y = DVector::from_element(rows, 3.0);
    let hard = PolytopicConstraint::new(tx.clone(), tu.clone(), y.clone()).unwrap();
    let data = build_affine_data(&hard, &inst.model, &inst.mats).unwrap();
    let t = vec![0.3, 0.5, 0.8];
    let exact = exp_bound_value(&data, &t, &inst.theta).unwrap();
    let mut violated = 0usize;
    let samples: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let (x, u) = sample_response(&inst, &mut rng);
            let eta = &tx * &x + &tu * &u - &y;
            if eta.iter().any(|v| *v > 0.0) {
                violated += 1;
            }
            eta.iter().zip(&t).map(|(e, ti)| (ti * e).exp()).sum()
        })
        .collect();
    let (mean, se) = mean_and_se(&samples);
    assert!((mean - exact).abs() < 4.0 * se, "exact {exact}, MC {mean} ± {se}");
    // The bound dominates the violation probability on the same samples.
    assert!(mean >= violated as f64 / samples.len() as f64);
}

#[test]
fn icc_value_matches_monte_carlo() {
    let mut rng = Rng::new(303);
    let samples: Vec<f64> = (0..10_000_000).map(|_| (1.0 + 2.0 * rng.normal()).max(0.0)).collect();
    let (mean, se) = mean_and_se(&samples);
    let exact = icc_value(1.0, 2.0);
    assert!((mean - exact).abs() < 4.0 * se, "exact {exact}, MC {mean} ± {se}");
}

#[test]
fn icc_row_expectation_matches_monte_carlo() {
    let mut rng = Rng::new(404);
    let inst = random_instance(&mut rng, 2, 1, 3);
    let tx = rng.matrix(1, 8, 1.0);
    let tu = rng.matrix(1, 3, 1.0);
    let y = DVector::from_element(1, 0.5);
    let hard = PolytopicConstraint::new(tx.clone(), tu.clone(), y.clone()).unwrap();
    let data = build_affine_data(&hard, &inst.model, &inst.mats).unwrap();
    let budget = 0.25;
    let c = IccConstraint::from_row(&data.row_affine(0), budget).unwrap();
    let x = inst.theta.flatten().theta_flat;
    let samples: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let (xs, us) = sample_response(&inst, &mut rng);
            ((&tx * &xs + &tu * &us - &y)[0]).max(0.0)
        })
        .collect();
    let (mean, se) = mean_and_se(&samples);
    let exact = c.f1(&x) + budget;
    assert!((mean - exact).abs() < 4.0 * se, "exact {exact}, MC {mean} ± {se}");
}

#[test]
fn injected_bernoulli_rate_is_covered() {
    let mut rng = Rng::new(505);
    let runs = 10_000;
    let k = (0..runs).filter(|_| rng.uniform() < 0.1).count();
    let est = ViolationEstimate::from_counts(k, runs).unwrap();
    assert!(est.ci_low <= 0.1 && 0.1 <= est.ci_high, "{est:?}");
    assert!(est.ci_low <= est.rate && est.rate <= est.ci_high);
    let (_, hi) = wilson_interval(0, 1000, WILSON_Z);
    assert!((hi - 0.003_826_758_485_555).abs() < 1e-12);
}

/// Conservativeness of a synthesized policy over `runs` fresh simulations.
fn check_conservative(problem: &ccmpc::Problem, runs: usize, seed: u64) {
    let s = synthesize(problem).unwrap();
    let policy = s.policy.expect("feasible");
    let batch = simulate_runs(&policy, &problem.model, runs, seed).unwrap();
    for c in &problem.constraints {
        let alpha = c.relaxation.alpha().unwrap();
        let est = estimate_violation(&batch, c.hard.as_hard()).unwrap();
        let half = 0.5 * (est.ci_high - est.ci_low);
        assert!(est.rate <= alpha + 3.0 * half, "{}: {est:?} against α = {alpha}", c.name);
    }
}

fn scalar_box_spec(method: ccmpc::problem::Method) -> ccmpc::ProblemSpec {
    use ccmpc::problem::*;
    ProblemSpec {
        schema_version: SCHEMA_VERSION,
        system: SystemSpec::Discrete { a: vec![vec![1.0]], b: vec![vec![1.0]] },
        horizon: 3,
        noise: NoiseSpec::Sigma2(0.04),
        x0: vec![1.0],
        cost: CostSpec::Stationary { q: vec![vec![1.0]], r: vec![vec![0.1]], q_final: None },
        constraints: vec![ConstraintSpec {
            name: Some("x3 >= 0.2".into()),
            polytopic: Some(PolytopicSpec { tx: vec![vec![0.0, 0.0, 0.0, -1.0]], tu: vec![], y: vec![-0.2] }),
            ellipsoidal: None,
            relaxation: RelaxationSpec::with_alpha(method, 0.1),
        }],
        solver: Default::default(),
    }
}

#[test]
fn single_row_policies_are_conservative() {
    use ccmpc::problem::Method;
    for method in [Method::Separation, Method::Ellipsoid, Method::Expbound] {
        let problem = scalar_box_spec(method).build().unwrap();
        check_conservative(&problem, 100_000, 9);
    }
}

#[test]
fn lmi_policy_is_conservative() {
    let problem = benchmark::scenario_spec(Scenario::SpringsLmi, 0.1, 10.0).build().unwrap();
    check_conservative(&problem, 100_000, 13);
    let HardKind::Ellipsoidal(_) = &problem.constraints[0].hard else { panic!("ellipsoidal scenario") };
}

#[test]
fn stacked_maps_agree_with_batch() {
    let mut rng = Rng::new(606);
    let inst = random_instance(&mut rng, 3, 2, 4);
    let maps = response_maps(&inst.theta, &inst.model, &inst.mats).unwrap();
    let batch = simulate_runs(&inst.theta, &inst.model, 200, 3).unwrap();
    for run in &batch.runs {
        let z = &maps.c_theta + &maps.l_theta * &run.wbar;
        assert!((z - stack(&run.xbar, &run.ubar)).amax() < 1e-10);
    }
}
