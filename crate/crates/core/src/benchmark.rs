//! The four-mass spring chain with three force inputs: problem data for
//! box constraints and for a quadratic budget constraint, plus a driver
//! that synthesizes, simulates and tabulates the outcome.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cost::{expected_cost, lqg_riccati, state_feedback_policy};
use crate::error::{Error, Result};
use crate::linalg::{block_diag, to_rows};
use crate::mc::{simulate_runs, RunBatch, ViolationEstimate};
use crate::policy::PolicyParams;
use crate::problem::{
    synthesize, ConstraintSpec, CostSpec, EllipsoidalSpec, Method, NoiseSpec, PolytopicSpec, Problem, ProblemSpec,
    RelaxationSpec, SystemSpec, SCHEMA_VERSION,
};
use crate::solver::SolveStatus;

pub const HORIZON: usize = 5;
pub const SIGMA: f64 = 0.05;
pub const SAMPLING_TIME: f64 = 1.0;
pub const INPUT_BOUNDS: [f64; 3] = [0.1, 0.3, 0.15];
pub const DISPLACEMENT_BOUND: f64 = 10.0;
/// `1 + 1 + 1 + 1 + 0.1² + 0.15² + 0.3²`.
pub const BUDGET_C: f64 = 4.1225;

/// Continuous-time `(Ac, Bc)` for unit masses and stiffnesses; the state is
/// `[d₁…d₄, ḋ₁…ḋ₄]`.
pub fn continuous_model() -> (DMatrix<f64>, DMatrix<f64>) {
    let a21 = DMatrix::from_row_slice(
        4,
        4,
        &[-2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -1.0],
    );
    let b21 = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, -1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0]);
    let mut ac = DMatrix::zeros(8, 8);
    ac.view_mut((0, 4), (4, 4)).fill_with_identity();
    ac.view_mut((4, 0), (4, 4)).copy_from(&a21);
    let mut bc = DMatrix::zeros(8, 3);
    bc.view_mut((4, 0), (4, 3)).copy_from(&b21);
    (ac, bc)
}

pub fn initial_state() -> Vec<f64> {
    let mut x0 = vec![0.0; 8];
    x0[3] = 1.0;
    x0
}

/// `Q = diag(I₄, 0)`, `R = I₃`.
pub fn weights() -> (DMatrix<f64>, DMatrix<f64>) {
    let mut q = DMatrix::zeros(8, 8);
    q.view_mut((0, 0), (4, 4)).fill_with_identity();
    (q, DMatrix::identity(3, 3))
}

/// `|dᵢ(t)| ≤ bound` for `t = 1…N` and `|uⱼ(t)| ≤ INPUT_BOUNDS[j]` for
/// `t = 0…N−1`, as `Tx x̄ + Tu ū ≤ y`.
pub fn box_constraint(horizon: usize, bound: f64) -> PolytopicSpec {
    let (n, m) = (8, 3);
    let nx = (horizon + 1) * n;
    let nu = horizon * m;
    let rows = horizon * 8 + horizon * 6;
    let mut tx = DMatrix::zeros(rows, nx);
    let mut tu = DMatrix::zeros(rows, nu);
    let mut y = Vec::with_capacity(rows);
    let mut r = 0;
    for t in 1..=horizon {
        for sign in [1.0, -1.0] {
            for i in 0..4 {
                tx[(r, t * n + i)] = sign;
                y.push(bound);
                r += 1;
            }
        }
    }
    for t in 0..horizon {
        for sign in [1.0, -1.0] {
            for (j, b) in INPUT_BOUNDS.iter().enumerate() {
                tu[(r, t * m + j)] = sign;
                y.push(*b);
                r += 1;
            }
        }
    }
    PolytopicSpec { tx: to_rows(&tx), tu: to_rows(&tu), y }
}

/// `Σₖ₌₁ᴺ ‖d(k)‖² + ‖ū‖² ≤ N·c`, i.e. `Ξ = (N c)⁻¹ diag(0, L₁, …, L₁, I)`.
pub fn budget_constraint(horizon: usize, c: f64) -> EllipsoidalSpec {
    let mut l1 = DMatrix::zeros(8, 8);
    l1.view_mut((0, 0), (4, 4)).fill_with_identity();
    let mut blocks = vec![DMatrix::zeros(8, 8)];
    blocks.extend(std::iter::repeat_n(l1, horizon));
    blocks.push(DMatrix::identity(3 * horizon, 3 * horizon));
    let xi = block_diag(&blocks) / (horizon as f64 * c);
    EllipsoidalSpec { xi: to_rows(&xi), delta: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    /// Box constraints by constraint separation.
    SpringsSep,
    /// Box constraints by the confidence ellipsoid.
    SpringsEllip,
    /// Quadratic budget by the LMI.
    SpringsLmi,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::SpringsSep => "springs-sep",
            Scenario::SpringsEllip => "springs-ellip",
            Scenario::SpringsLmi => "springs-lmi",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "springs-sep" => Ok(Scenario::SpringsSep),
            "springs-ellip" => Ok(Scenario::SpringsEllip),
            "springs-lmi" => Ok(Scenario::SpringsLmi),
            other => Err(Error::Problem(format!(
                "unknown scenario {other:?}; expected springs-sep, springs-ellip or springs-lmi"
            ))),
        }
    }
}

/// Problem file for a scenario; `bound` is the displacement bound of the
/// box scenarios.
pub fn scenario_spec(scenario: Scenario, alpha: f64, bound: f64) -> ProblemSpec {
    let (ac, bc) = continuous_model();
    let (q, r) = weights();
    let constraint = match scenario {
        Scenario::SpringsSep | Scenario::SpringsEllip => {
            let method = if scenario == Scenario::SpringsSep { Method::Separation } else { Method::Ellipsoid };
            ConstraintSpec {
                name: Some("box".into()),
                polytopic: Some(box_constraint(HORIZON, bound)),
                ellipsoidal: None,
                relaxation: RelaxationSpec::with_alpha(method, alpha),
            }
        }
        Scenario::SpringsLmi => ConstraintSpec {
            name: Some("budget".into()),
            polytopic: None,
            ellipsoidal: Some(budget_constraint(HORIZON, BUDGET_C)),
            relaxation: RelaxationSpec::with_alpha(Method::Lmi, alpha),
        },
    };
    ProblemSpec {
        schema_version: SCHEMA_VERSION,
        system: SystemSpec::Continuous { ac: to_rows(&ac), bc: to_rows(&bc), h: SAMPLING_TIME },
        horizon: HORIZON,
        noise: NoiseSpec::Sigma2(SIGMA * SIGMA),
        x0: initial_state(),
        cost: CostSpec::Stationary { q: to_rows(&q), r: to_rows(&r), q_final: None },
        constraints: vec![constraint],
        solver: Default::default(),
    }
}

/// One line of the summary table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub label: String,
    pub alpha: Option<f64>,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub phase1_slack: f64,
    pub violation: Option<ViolationEstimate>,
    pub seconds: f64,
}

/// Synthesis plus `runs` closed-loop simulations.
pub fn run_scenario(problem: &Problem, label: &str, runs: usize, seed: u64) -> Result<BenchmarkRow> {
    Ok(run_scenario_detailed(problem, label, runs, seed)?.row)
}

/// [`run_scenario`] keeping the policy and the simulated batch.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub row: BenchmarkRow,
    pub policy: Option<PolicyParams>,
    pub batch: Option<RunBatch>,
}

pub fn run_scenario_detailed(problem: &Problem, label: &str, runs: usize, seed: u64) -> Result<ScenarioOutcome> {
    let alpha = problem.constraints.first().and_then(|c| c.relaxation.alpha());
    let start = Instant::now();
    let s = synthesize(problem)?;
    let batch = match &s.policy {
        Some(p) if runs > 0 => Some(simulate_runs(p, &problem.model, runs, seed)?),
        _ => None,
    };
    let violation = batch.as_ref().map(|b| joint_violation(problem, b)).transpose()?;
    let optimal = s.report.is_optimal();
    let row = BenchmarkRow {
        label: label.to_string(),
        alpha,
        status: s.report.status,
        objective: optimal.then_some(s.report.objective_value),
        kkt_residual: optimal.then_some(s.report.kkt_residual),
        phase1_slack: s.report.phase1_slack,
        violation,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(ScenarioOutcome { row, policy: s.policy, batch })
}

/// A run violates when any hard constraint of the problem fails.
pub fn joint_violation(problem: &Problem, batch: &RunBatch) -> Result<ViolationEstimate> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut any = vec![false; batch.len()];
    for c in &problem.constraints {
        for (a, v) in any.iter_mut().zip(batch.violations(c.hard.as_hard())) {
            *a |= v;
        }
    }
    ViolationEstimate::from_counts(any.iter().filter(|v| **v).count(), batch.len())
}

/// The unconstrained LQG policy evaluated against the scenario's hard
/// constraints; its violation statistics are new information, not a
/// reproduced figure.
pub fn lqg_baseline(problem: &Problem, runs: usize, seed: u64) -> Result<BenchmarkRow> {
    let start = Instant::now();
    let (q, r) = weights();
    let model = &problem.model;
    let lqg = lqg_riccati(model.a(), model.b(), &q, &r, model.horizon())?;
    let policy = state_feedback_policy(model, &lqg.gains)?;
    let cost = expected_cost(&policy, &problem.cost, model, &problem.mats)?;
    let violation = if runs > 0 {
        Some(joint_violation(problem, &simulate_runs(&policy, model, runs, seed)?)?)
    } else {
        None
    };
    Ok(BenchmarkRow {
        label: "lqg-baseline".into(),
        alpha: None,
        status: SolveStatus::Optimal,
        objective: Some(cost),
        kkt_residual: None,
        phase1_slack: f64::NAN,
        violation,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Feasibility verdicts over a grid of α.
pub fn alpha_sweep(scenario: Scenario, alphas: &[f64], bound: f64) -> Result<Vec<BenchmarkRow>> {
    alphas
        .iter()
        .map(|&a| {
            let p = scenario_spec(scenario, a, bound).build()?;
            run_scenario(&p, &format!("{scenario} alpha={a}"), 0, 0)
        })
        .collect()
}

/// `α = 0.01, 0.02, …, 0.20`.
pub fn default_sweep() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 100.0).collect()
}

pub fn write_table<W: std::io::Write>(rows: &[BenchmarkRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label",
        "alpha",
        "status",
        "objective",
        "kkt_residual",
        "phase1_slack",
        "violations",
        "runs",
        "rate",
        "ci_low",
        "ci_high",
        "seconds",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let v = r.violation;
        w.write_record([
            r.label.clone(),
            opt(r.alpha),
            r.status.to_string(),
            opt(r.objective),
            opt(r.kkt_residual),
            r.phase1_slack.to_string(),
            v.map(|e| e.violations.to_string()).unwrap_or_default(),
            v.map(|e| e.runs.to_string()).unwrap_or_default(),
            opt(v.map(|e| e.rate)),
            opt(v.map(|e| e.ci_low)),
            opt(v.map(|e| e.ci_high)),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Noise-free response of a policy, for quick inspection.
pub fn nominal_trajectory(problem: &Problem, policy: &PolicyParams) -> Result<DVector<f64>> {
    Ok(crate::policy::response_maps(policy, &problem.model, &problem.mats)?.c_theta)
}
