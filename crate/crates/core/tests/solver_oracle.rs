//! Barrier solver on small programs against a grid-refinement oracle.

mod common;

use ccmpc::chance::{RowAffine, SocConstraint};
use ccmpc::cost::QuadraticObjective;
use ccmpc::solver::{solve, Constraint, ConvexProgram, LinearMatrixInequality, LmiCoef, SolveStatus, SolverOptions};
use common::Rng;
use nalgebra::{DMatrix, DVector};

/// Best feasible point of a 2-D program by repeated grid zooming.
fn grid_oracle(program: &ConvexProgram, half_width: f64) -> (f64, DVector<f64>) {
    let mut center = DVector::zeros(2);
    let mut width = half_width;
    let mut best = (f64::INFINITY, center.clone());
    for _ in 0..60 {
        let k = 40;
        for i in 0..=k {
            for j in 0..=k {
                let x = DVector::from_vec(vec![
                    center[0] + width * (2.0 * i as f64 / k as f64 - 1.0),
                    center[1] + width * (2.0 * j as f64 / k as f64 - 1.0),
                ]);
                if program.max_violation(&x) <= 0.0 {
                    let v = program.objective.value(&x);
                    if v < best.0 {
                        best = (v, x);
                    }
                }
            }
        }
        assert!(best.0.is_finite(), "oracle found no feasible grid point");
        center = best.1.clone();
        width *= 0.7;
    }
    best
}

fn random_program(rng: &mut Rng) -> ConvexProgram {
    let f = rng.matrix(2, 2, 1.0);
    let hessian = &f * f.transpose() + DMatrix::identity(2, 2) * 0.1;
    let objective = QuadraticObjective { hessian, linear: rng.vector(2, 3.0), constant: rng.range(-1.0, 1.0) };
    let mut constraints = Vec::new();
    for _ in 0..3 {
        // Every row holds at the origin with some margin.
        let row = RowAffine { a0: -rng.range(0.5, 1.5), a: rng.vector(2, 1.0), y0: rng.vector(2, 0.2), y: rng.matrix(2, 2, 0.5) };
        let beta = rng.range(0.0, 1.5);
        let soc = SocConstraint::new(row, beta).unwrap();
        if soc.value(&DVector::zeros(2)) < 0.0 {
            constraints.push(Constraint::Soc(soc));
        }
    }
    constraints.push(Constraint::Linear { a0: -2.0, a: rng.vector(2, 1.0) });
    ConvexProgram::new(objective, constraints).unwrap()
}

#[test]
fn random_cone_programs_match_grid_oracle() {
    let mut rng = Rng::new(51);
    let opts = SolverOptions::default();
    for trial in 0..30 {
        let program = random_program(&mut rng);
        let report = solve(&program, &opts).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal, "trial {trial}");
        assert!(report.kkt_residual <= 1e-8, "trial {trial}: KKT {}", report.kkt_residual);
        assert!(report.max_violation <= 1e-8, "trial {trial}: violation {}", report.max_violation);
        let (best, _) = grid_oracle(&program, 20.0);
        let gap = report.objective_value - best;
        assert!(gap.abs() <= 1e-4 * (1.0 + best.abs()), "trial {trial}: solver {} oracle {best}", report.objective_value);
    }
}

#[test]
fn lmi_program_matches_grid_oracle() {
    // [[1 + x₁, x₂], [x₂, 1 − x₁]] ⪰ 0 is the unit disc; `u vᵀ + v uᵀ` fills both off-diagonal entries.
    let f0 = DMatrix::identity(2, 2);
    let e = |i: usize| DVector::from_fn(2, |k, _| if k == i { 1.0 } else { 0.0 });
    let coefs = vec![
        LmiCoef::Diagonal(DVector::from_vec(vec![1.0, -1.0])),
        LmiCoef::Rank2 { u: e(0), v: e(1) },
    ];
    let lmi = LinearMatrixInequality::new(f0, coefs).unwrap();
    let objective = QuadraticObjective { hessian: DMatrix::identity(2, 2), linear: DVector::from_vec(vec![-3.0, -4.0]), constant: 0.0 };
    let program = ConvexProgram::new(objective, vec![Constraint::Lmi(lmi)]).unwrap();
    let report = solve(&program, &SolverOptions::default()).unwrap();
    assert!(report.is_optimal());
    assert!(report.kkt_residual <= 1e-8);
    // Projection of (3, 4) onto the disc.
    let x = report.x();
    assert!((x[0] - 0.6).abs() < 1e-6 && (x[1] - 0.8).abs() < 1e-6, "{x}");
    let (best, _) = grid_oracle(&program, 2.0);
    assert!((report.objective_value - best).abs() <= 1e-4 * (1.0 + best.abs()));
}

#[test]
fn objective_scaling_leaves_the_minimizer() {
    let mut rng = Rng::new(52);
    let opts = SolverOptions::default();
    for _ in 0..5 {
        let program = random_program(&mut rng);
        let base = solve(&program, &opts).unwrap();
        for factor in [0.1, 10.0, 100.0] {
            let scaled = ConvexProgram::new(program.objective.scaled(factor), program.constraints.clone()).unwrap();
            let r = solve(&scaled, &opts).unwrap();
            assert!(r.is_optimal());
            assert!(r.kkt_residual <= 1e-8);
            assert!((r.x() - base.x()).amax() < 1e-5 * (1.0 + base.x().amax()), "factor {factor}");
        }
    }
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let objective = QuadraticObjective { hessian: DMatrix::identity(1, 1), linear: DVector::zeros(1), constant: 0.0 };
    let program = ConvexProgram::new(
        objective,
        vec![
            Constraint::Linear { a0: 1.0, a: DVector::from_element(1, 1.0) },
            Constraint::Linear { a0: 1.0, a: DVector::from_element(1, -1.0) },
        ],
    )
    .unwrap();
    let r = solve(&program, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
    // x ≤ −1 and x ≥ 1 cannot both hold within a slack below one.
    assert!(r.phase1_slack >= 1.0 - 1e-9, "{}", r.phase1_slack);
}

#[test]
fn unconstrained_program_is_one_newton_step() {
    let objective = QuadraticObjective {
        hessian: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        linear: DVector::from_vec(vec![1.0, -1.0]),
        constant: 0.0,
    };
    let want = objective.minimizer().unwrap();
    let program = ConvexProgram::new(objective, Vec::new()).unwrap();
    let r = solve(&program, &SolverOptions::default()).unwrap();
    assert!(r.is_optimal());
    assert!((r.x() - want).amax() < 1e-12);
}
