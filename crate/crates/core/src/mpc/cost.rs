//! Condensed tracking objective.
//!
//! States are eliminated through `x_i = x_hat + dt * sum_{l<i} u_l`, leaving a
//! quadratic `1/2 u'Hu + g'u + c` in the stacked inputs `u = [u_0; ...; u_{N-1}]`.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::{MpcConfig, MpcProblem, RateAnchor};
use crate::geometry::Vec3;

#[derive(Debug, Clone)]
pub struct TrackingCost {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
}

impl TrackingCost {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.gradient.dot(u) + self.constant
    }
}

fn add_block(m: &mut DMatrix<f64>, r: usize, c: usize, w: &Matrix3<f64>, scale: f64) {
    for i in 0..3 {
        for j in 0..3 {
            m[(3 * r + i, 3 * c + j)] += scale * w[(i, j)];
        }
    }
}

fn add_seg(v: &mut DVector<f64>, r: usize, x: &Vec3) {
    for i in 0..3 {
        v[3 * r + i] += x[i];
    }
}

/// Assembles the objective
/// `sum_{i<N} |x_i - ref_i|_Q + |u_i - u_des|_R + |u_i - u_{i-1}|_S + |x_N - ref_N|_P`
/// with `u_{-1} = u_prev` unless the rate anchor is `Horizon`.
pub fn assemble(problem: &MpcProblem, config: &MpcConfig, reference: &[Vec3]) -> TrackingCost {
    let n = config.horizon;
    let dt = config.dt;
    let dim = 3 * n;
    let mut hessian = DMatrix::zeros(dim, dim);
    let mut gradient = DVector::zeros(dim);
    let mut constant = 0.0;

    // State terms: x_i - ref_i = dt * sum_{l<i} u_l + (x_hat - ref_i).
    for i in 1..=n {
        let w = if i == n { &config.p } else { &config.q };
        let offset = problem.x_hat - reference[i];
        for a in 0..i {
            for b in 0..i {
                add_block(&mut hessian, a, b, w, 2.0 * dt * dt);
            }
            add_seg(&mut gradient, a, &(2.0 * dt * (w * offset)));
        }
        constant += offset.dot(&(w * offset));
    }
    // i = 0 has no decision dependence; its offset is x_hat - ref_0.
    let e0 = problem.x_hat - reference[0];
    constant += e0.dot(&(config.q * e0));

    for i in 0..n {
        add_block(&mut hessian, i, i, &config.r, 2.0);
        add_seg(&mut gradient, i, &(-2.0 * (config.r * problem.u_des)));
        constant += problem.u_des.dot(&(config.r * problem.u_des));

        if i == 0 {
            if config.rate_anchor == RateAnchor::PreviousInput {
                add_block(&mut hessian, 0, 0, &config.s, 2.0);
                add_seg(&mut gradient, 0, &(-2.0 * (config.s * problem.u_prev)));
                constant += problem.u_prev.dot(&(config.s * problem.u_prev));
            }
        } else {
            add_block(&mut hessian, i, i, &config.s, 2.0);
            add_block(&mut hessian, i - 1, i - 1, &config.s, 2.0);
            add_block(&mut hessian, i, i - 1, &config.s, -2.0);
            add_block(&mut hessian, i - 1, i, &config.s, -2.0);
        }
    }
    // Symmetrize to wash out any rounding asymmetry from the S blocks.
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    TrackingCost {
        hessian,
        gradient,
        constant,
    }
}

/// The same objective evaluated term by term on an explicit trajectory.
pub fn evaluate(
    problem: &MpcProblem,
    config: &MpcConfig,
    reference: &[Vec3],
    inputs: &[Vec3],
    states: &[Vec3],
) -> f64 {
    let n = config.horizon;
    let quad = |w: &Matrix3<f64>, e: Vec3| e.dot(&(w * e));
    let mut cost = 0.0;
    for i in 0..n {
        cost += quad(&config.q, states[i] - reference[i]);
        cost += quad(&config.r, inputs[i] - problem.u_des);
        match (i, config.rate_anchor) {
            (0, RateAnchor::Horizon) => {}
            (0, RateAnchor::PreviousInput) => cost += quad(&config.s, inputs[0] - problem.u_prev),
            _ => cost += quad(&config.s, inputs[i] - inputs[i - 1]),
        }
    }
    cost + quad(&config.p, states[n] - reference[n])
}
