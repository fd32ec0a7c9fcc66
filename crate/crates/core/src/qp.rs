//! Dense primal-dual interior-point solver for the condensed MPC subproblem.
//!
//! ```text
//! minimize    1/2 u'Hu + g'u + sum_k (1/2 rho w_k^2 + q w_k)
//! subject to  lower <= u <= upper
//!             a_k'u + w_k >= b_k,   w_k >= 0
//! ```
//!
//! Every soft row owns exactly one slack `w_k`, so the slack block of the
//! Newton system is diagonal and is eliminated before factorization; each
//! iteration costs one `n x n` Cholesky regardless of the number of rows.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct SoftQp {
    /// Symmetric positive-definite Hessian over `u`.
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// One row per soft constraint.
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Quadratic slack weight (`rho` above).
    pub slack_quadratic: f64,
    /// Linear slack weight (`q` above).
    pub slack_linear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Stationarity tolerance, relative to `1 + |g|_inf`.
    pub dual_tol: f64,
    pub primal_tol: f64,
    pub gap_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 80,
            dual_tol: 1e-8,
            primal_tol: 1e-9,
            gap_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub slack: DVector<f64>,
    /// Multipliers of the soft rows.
    pub row_multipliers: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Inequality block layout: `[soft rows | slack >= 0 | u - lower | upper - u]`.
struct Layout {
    n: usize,
    m: usize,
}

impl Layout {
    fn total(&self) -> usize {
        2 * self.m + 2 * self.n
    }
    fn rows(&self) -> std::ops::Range<usize> {
        0..self.m
    }
    fn slack(&self) -> std::ops::Range<usize> {
        self.m..2 * self.m
    }
    fn lower(&self) -> std::ops::Range<usize> {
        2 * self.m..2 * self.m + self.n
    }
    fn upper(&self) -> std::ops::Range<usize> {
        2 * self.m + self.n..self.total()
    }
}

impl SoftQp {
    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn objective(&self, u: &DVector<f64>, slack: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u))
            + self.gradient.dot(u)
            + slack
                .iter()
                .map(|w| 0.5 * self.slack_quadratic * w * w + self.slack_linear * w)
                .sum::<f64>()
    }

    fn constraints(&self, lay: &Layout, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(lay.total());
        let au = &self.rows * u;
        for k in 0..lay.m {
            c[k] = au[k] + w[k] - self.rhs[k];
            c[lay.m + k] = w[k];
        }
        for i in 0..lay.n {
            c[2 * lay.m + i] = u[i] - self.lower[i];
            c[2 * lay.m + lay.n + i] = self.upper[i] - u[i];
        }
        c
    }

    /// `C' v` split into the `u` and slack parts.
    fn transpose_apply(&self, lay: &Layout, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let v_rows = v.rows(lay.rows().start, lay.m);
        let mut tu = self.rows.tr_mul(&v_rows);
        for i in 0..lay.n {
            tu[i] += v[lay.lower().start + i] - v[lay.upper().start + i];
        }
        let tw = DVector::from_fn(lay.m, |k, _| v[k] + v[lay.slack().start + k]);
        (tu, tw)
    }

    /// Solves the QP from an initial guess. The guess need not be feasible.
    pub fn solve(&self, u_guess: &DVector<f64>, settings: &QpSettings) -> QpSolution {
        let lay = Layout {
            n: self.dim(),
            m: self.num_rows(),
        };
        let nc = lay.total();

        // Strictly interior start for the box; slacks cover any row deficit.
        let mut u = DVector::from_fn(lay.n, |i, _| {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let pad = 0.05 * (hi - lo);
            u_guess[i].clamp(lo + pad, hi - pad)
        });
        let au = &self.rows * &u;
        let mut w = DVector::from_fn(lay.m, |k, _| (self.rhs[k] - au[k]).max(0.0) + 0.1);
        let c0 = self.constraints(&lay, &u, &w);
        let mut s = c0.map(|c| c.max(1e-2));
        let mut lam = DVector::from_element(nc, 1.0);

        let g_scale = 1.0 + self.gradient.amax();
        let mut iterations = 0;
        let mut converged = false;

        for it in 0..settings.max_iterations {
            iterations = it;
            let c = self.constraints(&lay, &u, &w);
            let r_p = &c - &s;
            let (ct_lam_u, ct_lam_w) = self.transpose_apply(&lay, &lam);
            let r_du = &self.hessian * &u + &self.gradient - ct_lam_u;
            let r_dw = w.map(|wk| self.slack_quadratic * wk + self.slack_linear) - ct_lam_w;
            let mu = s.dot(&lam) / nc as f64;

            let dual_res = r_du.amax().max(r_dw.amax());
            if dual_res <= settings.dual_tol * g_scale
                && r_p.amax() <= settings.primal_tol
                && mu <= settings.gap_tol
            {
                converged = true;
                break;
            }

            let weights = DVector::from_fn(nc, |i, _| lam[i] / s[i]);
            let Some(system) = self.factor(&lay, &weights) else {
                break;
            };

            // Predictor.
            let r_c_aff = s.component_mul(&lam);
            let (dx_aff, ds_aff, dl_aff) =
                self.newton_step(&lay, &system, &weights, &r_du, &r_dw, &r_p, &r_c_aff, &s, &lam);
            let alpha_aff = max_step(&s, &ds_aff).min(max_step(&lam, &dl_aff));
            let mu_aff = (&s + alpha_aff * &ds_aff).dot(&(&lam + alpha_aff * &dl_aff)) / nc as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

            // Corrector.
            let r_c = DVector::from_fn(nc, |i, _| {
                s[i] * lam[i] + ds_aff[i] * dl_aff[i] - sigma * mu
            });
            let (dx, ds, dl) =
                self.newton_step(&lay, &system, &weights, &r_du, &r_dw, &r_p, &r_c, &s, &lam);
            drop(dx_aff);

            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
            u += alpha * dx.rows(0, lay.n);
            w += alpha * dx.rows(lay.n, lay.m);
            s += alpha * &ds;
            lam += alpha * &dl;
            s.apply(|v| *v = v.max(1e-300));
            lam.apply(|v| *v = v.max(1e-300));
            iterations = it + 1;
        }

        let objective = self.objective(&u, &w);
        QpSolution {
            row_multipliers: lam.rows(0, lay.m).into_owned(),
            u,
            slack: w,
            iterations,
            converged,
            objective,
        }
    }

    fn factor(&self, lay: &Layout, weights: &DVector<f64>) -> Option<ReducedSystem> {
        let (n, m) = (lay.n, lay.m);
        let w_rows = weights.rows(0, m);
        let w_slack = weights.rows(m, m);
        let diag_w = DVector::from_fn(m, |k, _| self.slack_quadratic + w_rows[k] + w_slack[k]);
        // Row weight after eliminating the slack: W1 (rho + W2) / D.
        let row_weight = DVector::from_fn(m, |k, _| {
            w_rows[k] * (self.slack_quadratic + w_slack[k]) / diag_w[k]
        });
        let mut schur = self.hessian.clone();
        for i in 0..n {
            schur[(i, i)] += weights[2 * m + i] + weights[2 * m + n + i];
        }
        let scaled = DMatrix::from_fn(m, n, |k, j| self.rows[(k, j)] * row_weight[k]);
        schur += self.rows.tr_mul(&scaled);
        let chol = Cholesky::new(schur.clone()).or_else(|| {
            let reg = 1e-10 * (1.0 + schur.diagonal().amax());
            Cholesky::new(schur + DMatrix::identity(n, n) * reg)
        })?;
        Some(ReducedSystem { chol, diag_w })
    }

    #[allow(clippy::too_many_arguments)]
    fn newton_step(
        &self,
        lay: &Layout,
        sys: &ReducedSystem,
        weights: &DVector<f64>,
        r_du: &DVector<f64>,
        r_dw: &DVector<f64>,
        r_p: &DVector<f64>,
        r_c: &DVector<f64>,
        s: &DVector<f64>,
        lam: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (n, m) = (lay.n, lay.m);
        let v = DVector::from_fn(lay.total(), |i, _| r_c[i] / s[i] + weights[i] * r_p[i]);
        let (ctv_u, ctv_w) = self.transpose_apply(lay, &v);
        let rhs_u = -r_du - ctv_u;
        let rhs_w = -r_dw - ctv_w;

        let w_rows = weights.rows(0, m);
        let fold = DVector::from_fn(m, |k, _| w_rows[k] * rhs_w[k] / sys.diag_w[k]);
        let du = sys.chol.solve(&(rhs_u - self.rows.tr_mul(&fold)));
        let a_du = &self.rows * &du;
        let dw = DVector::from_fn(m, |k, _| (rhs_w[k] - w_rows[k] * a_du[k]) / sys.diag_w[k]);

        // dc = C dx
        let mut dc = DVector::zeros(lay.total());
        for k in 0..m {
            dc[k] = a_du[k] + dw[k];
            dc[m + k] = dw[k];
        }
        for i in 0..n {
            dc[2 * m + i] = du[i];
            dc[2 * m + n + i] = -du[i];
        }
        let ds = dc + r_p;
        let dl = DVector::from_fn(lay.total(), |i, _| -(r_c[i] + lam[i] * ds[i]) / s[i]);
        let mut dx = DVector::zeros(n + m);
        dx.rows_mut(0, n).copy_from(&du);
        dx.rows_mut(n, m).copy_from(&dw);
        (dx, ds, dl)
    }
}

struct ReducedSystem {
    chol: Cholesky<f64, nalgebra::Dyn>,
    diag_w: DVector<f64>,
}

/// Largest `alpha` in (0, 1] keeping `v + alpha dv` non-negative.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}
