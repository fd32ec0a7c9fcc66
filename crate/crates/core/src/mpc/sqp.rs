//! Trust-region SQP over the condensed inputs.
//!
//! Each iteration linearizes the DCBF rows around the current inputs and
//! solves a strictly convex QP; the step is accepted by comparing the actual
//! and predicted decrease of the slack-eliminated objective
//! `J(u) + sum penalty(max(0, -r(u)))`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{build_reference, cost, rollout, MpcConfig, MpcProblem, MpcSolution, SlackPenalty, WarmStart};
use crate::barrier::{h_and_grad, BarrierParams};
use crate::geometry::Vec3;
use crate::qp::SoftQp;

/// Residuals `r_{j,i} = h_j(x_{i+1}) - (1 - gamma) h_j(x_i)` and their
/// Jacobian with respect to the stacked inputs. Row index is `j * N + i`.
#[derive(Debug, Clone)]
pub struct ConstraintLinearization {
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

pub fn linearize_constraints(
    x_hat: Vec3,
    inputs: &[Vec3],
    barriers: &[BarrierParams],
    dt: f64,
) -> ConstraintLinearization {
    let n = inputs.len();
    let states = rollout(x_hat, inputs, dt);
    let rows = barriers.len() * n;
    let mut residuals = DVector::zeros(rows);
    let mut jacobian = DMatrix::zeros(rows, 3 * n);
    for (j, barrier) in barriers.iter().enumerate() {
        let evals: Vec<(f64, Vec3)> = states.iter().map(|x| h_and_grad(x, barrier)).collect();
        let decay = 1.0 - barrier.gamma;
        for i in 0..n {
            let row = j * n + i;
            let (h_next, g_next) = evals[i + 1];
            let (h_curr, g_curr) = evals[i];
            residuals[row] = h_next - decay * h_curr;
            for l in 0..=i {
                let mut d = dt * g_next;
                if l < i {
                    d -= decay * dt * g_curr;
                }
                for c in 0..3 {
                    jacobian[(row, 3 * l + c)] = d[c];
                }
            }
        }
    }
    ConstraintLinearization {
        residuals,
        jacobian,
    }
}

fn stack(inputs: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(inputs.len() * 3, inputs.iter().flat_map(|u| u.iter().copied()))
}

fn unstack(u: &DVector<f64>) -> Vec<Vec3> {
    (0..u.len() / 3)
        .map(|i| Vec3::new(u[3 * i], u[3 * i + 1], u[3 * i + 2]))
        .collect()
}

struct Merit {
    penalty: SlackPenalty,
    weight: f64,
}

impl Merit {
    fn penalty_of(&self, residuals: impl Iterator<Item = f64>) -> f64 {
        residuals
            .map(|r| self.penalty.charge(self.weight, (-r).max(0.0)))
            .sum()
    }
}

pub fn solve(problem: &MpcProblem, config: &MpcConfig, warm: &WarmStart) -> MpcSolution {
    let started = Instant::now();
    let n = config.horizon;
    let dt = config.dt;
    let settings = &config.solver;
    let u_b = config.limits.u_b;

    let barriers: Vec<BarrierParams> = problem
        .obstacles
        .iter()
        .map(|o| BarrierParams {
            obstacle: *o,
            r_rob: problem.safety.r_rob,
            d_min: problem.safety.d_min,
            sigma: problem.sigma,
            gamma: problem.safety.gamma,
        })
        .collect();
    let start_violation = barriers
        .iter()
        .any(|b| h_and_grad(&problem.x_hat, b).0 <= 0.0);

    let reference = build_reference(problem.x_hat, problem.u_des, n, dt);
    let tracking = cost::assemble(problem, config, &reference);
    let merit = Merit {
        penalty: config.slack_penalty,
        weight: config.slack_weight,
    };
    let (rho, q_lin) = config.slack_penalty.coefficients(config.slack_weight);

    let mut u = stack(&warm.initial_inputs(problem, config));
    let mut lin = linearize_constraints(problem.x_hat, &unstack(&u), &barriers, dt);
    let mut phi = tracking.value(&u) + merit.penalty_of(lin.residuals.iter().copied());
    let mut radius = settings.initial_trust_radius;
    let mut iterations = 0;
    let mut qp_iterations = 0;
    let mut converged = false;
    let mut qp_guess = u.clone();

    for _ in 0..settings.max_iterations {
        iterations += 1;
        let qp = SoftQp {
            hessian: tracking.hessian.clone(),
            gradient: tracking.gradient.clone(),
            lower: u.map(|v| (v - radius).max(-u_b)),
            upper: u.map(|v| (v + radius).min(u_b)),
            rhs: &lin.jacobian * &u - &lin.residuals,
            rows: lin.jacobian.clone(),
            slack_quadratic: rho,
            slack_linear: q_lin,
        };
        let sub = qp.solve(&qp_guess, &settings.qp);
        qp_iterations += sub.iterations;
        let candidate = sub.u;
        let step = (&candidate - &u).amax();
        if step <= settings.step_tol {
            converged = sub.converged;
            break;
        }

        let predicted_res = &lin.residuals + &lin.jacobian * (&candidate - &u);
        let model = tracking.value(&candidate) + merit.penalty_of(predicted_res.iter().copied());
        let predicted = phi - model;

        let cand_lin = linearize_constraints(problem.x_hat, &unstack(&candidate), &barriers, dt);
        let cand_phi = tracking.value(&candidate) + merit.penalty_of(cand_lin.residuals.iter().copied());
        let actual = phi - cand_phi;

        if predicted <= 1e-12 * (1.0 + phi.abs()) {
            // No model decrease left inside the trust region.
            converged = sub.converged;
            break;
        }
        let ratio = actual / predicted;
        if ratio >= 0.1 {
            u = candidate;
            lin = cand_lin;
            phi = cand_phi;
            qp_guess = u.clone();
            if ratio > 0.75 && step >= 0.99 * radius {
                radius = (2.0 * radius).min(2.0 * u_b);
            }
        } else {
            radius = 0.25 * step;
            if radius < settings.step_tol {
                converged = sub.converged;
                break;
            }
        }
    }

    let u_seq = unstack(&u);
    let x_pred = rollout(problem.x_hat, &u_seq, dt);
    let omega: Vec<Vec<f64>> = (0..barriers.len())
        .map(|j| (0..n).map(|i| (-lin.residuals[j * n + i]).max(0.0)).collect())
        .collect();
    let cost = cost::evaluate(problem, config, &reference, &u_seq, &x_pred)
        + omega
            .iter()
            .flatten()
            .map(|w| config.slack_penalty.charge(config.slack_weight, *w))
            .sum::<f64>();

    MpcSolution {
        u_seq,
        x_pred,
        omega,
        iterations,
        qp_iterations,
        cost,
        solve_time: started.elapsed(),
        converged: converged && !start_violation,
        start_violation,
    }
}
