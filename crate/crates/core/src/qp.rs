//! Structured convex QP for optimal control, solved by a primal-dual
//! interior-point method whose Newton systems are factored with a Riccati
//! recursion along the horizon.
//!
//! ```text
//! min  sum_k 1/2 y_k' H_k y_k + h_k' y_k  +  1/2 x_N' H_N x_N + h_N' x_N
//! s.t. x_0 fixed
//!      x_{k+1} = A_k x_k + B_k z_k + c_k
//!      g_i' y_k <= b_i         (per-stage rows, y_k = [x_k; z_k])
//! ```
//!
//! The cost of one Newton step is linear in the horizon length.

use nalgebra::{SMatrix, SVector};

use crate::model::NX;

/// Stage decision variables besides the state: the three inputs and two
/// corridor slacks.
pub const NZ: usize = 5;
/// Size of the stacked stage vector `[x; z]`.
pub const NY: usize = NX + NZ;

pub type VecX = SVector<f64, NX>;
pub type VecZ = SVector<f64, NZ>;
pub type VecY = SVector<f64, NY>;
pub type MatX = SMatrix<f64, NX, NX>;
pub type MatXZ = SMatrix<f64, NX, NZ>;
pub type MatZ = SMatrix<f64, NZ, NZ>;
pub type MatZX = SMatrix<f64, NZ, NX>;
pub type MatY = SMatrix<f64, NY, NY>;

/// Inequality `coeffs' v <= bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row<const D: usize> {
    pub coeffs: SVector<f64, D>,
    pub bound: f64,
}

impl<const D: usize> Row<D> {
    pub fn new(coeffs: SVector<f64, D>, bound: f64) -> Self {
        Self { coeffs, bound }
    }

    /// `sign * v[index] <= bound`.
    pub fn single(index: usize, sign: f64, bound: f64) -> Self {
        let mut coeffs = SVector::<f64, D>::zeros();
        coeffs[index] = sign;
        Self { coeffs, bound }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpStage {
    pub hess: MatY,
    pub grad: VecY,
    pub a: MatX,
    pub b: MatXZ,
    pub c: VecX,
    pub rows: Vec<Row<NY>>,
}

impl QpStage {
    pub fn new(a: MatX, b: MatXZ) -> Self {
        Self {
            hess: MatY::zeros(),
            grad: VecY::zeros(),
            a,
            b,
            c: VecX::zeros(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpTerminal {
    pub hess: MatX,
    pub grad: VecX,
    pub rows: Vec<Row<NX>>,
}

impl Default for QpTerminal {
    fn default() -> Self {
        Self {
            hess: MatX::zeros(),
            grad: VecX::zeros(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpQp {
    pub x0: VecX,
    pub stages: Vec<QpStage>,
    pub terminal: QpTerminal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fraction_to_boundary: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            tolerance: 1e-9,
            fraction_to_boundary: 0.995,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// States `x_0..=x_N`.
    pub x: Vec<VecX>,
    /// Stage variables `z_0..z_{N-1}`.
    pub z: Vec<VecZ>,
    /// Row multipliers, stage by stage, terminal last.
    pub multipliers: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error(
        "interior point did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },
    #[error("Riccati factorization failed at stage {0}")]
    Factorization(usize),
    #[error("non-finite iterate")]
    NonFinite,
}

fn stack(x: &VecX, z: &VecZ) -> VecY {
    let mut y = VecY::zeros();
    y.fixed_rows_mut::<NX>(0).copy_from(x);
    y.fixed_rows_mut::<NZ>(NX).copy_from(z);
    y
}

/// Per-row interior-point state of one stage.
#[derive(Debug, Clone)]
struct RowState {
    slack: Vec<f64>,
    dual: Vec<f64>,
}

/// Solves the equality-constrained stage QP with the given (already
/// barrier-augmented) Hessians and gradients; returns the primal trajectory.
fn riccati(
    qp: &OcpQp,
    hess: &[MatY],
    grad: &[VecY],
    hess_n: &MatX,
    grad_n: &VecX,
) -> Result<(Vec<VecX>, Vec<VecZ>), QpError> {
    let n = qp.stages.len();
    let mut gains: Vec<(MatZX, VecZ)> = vec![(MatZX::zeros(), VecZ::zeros()); n];
    let mut p = *hess_n;
    let mut pv = *grad_n;
    for k in (0..n).rev() {
        let st = &qp.stages[k];
        let h = &hess[k];
        let g = &grad[k];
        let q_xx: MatX = h.fixed_view::<NX, NX>(0, 0).into();
        let s_zx: MatZX = h.fixed_view::<NZ, NX>(NX, 0).into();
        let r_zz: MatZ = h.fixed_view::<NZ, NZ>(NX, NX).into();
        let f = pv + p * st.c;
        let bt_p = st.b.transpose() * p;
        let mut quu = r_zz + bt_p * st.b;
        let qux = s_zx + bt_p * st.a;
        let qxx = q_xx + st.a.transpose() * p * st.a;
        let qu = g.fixed_rows::<NZ>(NX) + st.b.transpose() * f;
        let qx = g.fixed_rows::<NX>(0) + st.a.transpose() * f;
        quu = (quu + quu.transpose()) * 0.5;
        let chol = {
            let mut shift = 0.0;
            loop {
                let trial = quu + MatZ::identity() * shift;
                if let Some(c) = trial.cholesky() {
                    break c;
                }
                shift = if shift == 0.0 { 1e-10 } else { shift * 100.0 };
                if shift > 1e6 {
                    return Err(QpError::Factorization(k));
                }
            }
        };
        let gain = -chol.solve(&qux);
        let feedforward = -chol.solve(&qu);
        p = qxx + qux.transpose() * gain;
        p = (p + p.transpose()) * 0.5;
        pv = qx + qux.transpose() * feedforward;
        gains[k] = (gain, feedforward);
    }
    let mut xs = Vec::with_capacity(n + 1);
    let mut zs = Vec::with_capacity(n);
    let mut x = qp.x0;
    xs.push(x);
    for (k, st) in qp.stages.iter().enumerate() {
        let z = gains[k].0 * x + gains[k].1;
        x = st.a * x + st.b * z + st.c;
        zs.push(z);
        xs.push(x);
    }
    Ok((xs, zs))
}

impl OcpQp {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn objective(&self, x: &[VecX], z: &[VecZ]) -> f64 {
        let mut total = 0.0;
        for (k, st) in self.stages.iter().enumerate() {
            let y = stack(&x[k], &z[k]);
            total += 0.5 * y.dot(&(st.hess * y)) + st.grad.dot(&y);
        }
        let xn = &x[self.stages.len()];
        total + 0.5 * xn.dot(&(self.terminal.hess * xn)) + self.terminal.grad.dot(xn)
    }

    fn row_values(&self, x: &[VecX], z: &[VecZ]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self
            .stages
            .iter()
            .enumerate()
            .map(|(k, st)| {
                let y = stack(&x[k], &z[k]);
                st.rows.iter().map(|r| r.coeffs.dot(&y)).collect()
            })
            .collect();
        let xn = &x[self.stages.len()];
        out.push(
            self.terminal
                .rows
                .iter()
                .map(|r| r.coeffs.dot(xn))
                .collect(),
        );
        out
    }

    fn bounds(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self
            .stages
            .iter()
            .map(|st| st.rows.iter().map(|r| r.bound).collect())
            .collect();
        out.push(self.terminal.rows.iter().map(|r| r.bound).collect());
        out
    }

    /// Stationarity residual with respect to the stage variables `z`, with the
    /// dynamics multipliers eliminated by a backward pass.
    fn dual_residual(&self, x: &[VecX], z: &[VecZ], dual: &[Vec<f64>]) -> f64 {
        let n = self.stages.len();
        let mut costate = self.terminal.hess * x[n] + self.terminal.grad;
        for (r, l) in self.terminal.rows.iter().zip(&dual[n]) {
            costate += r.coeffs * *l;
        }
        let mut worst: f64 = 0.0;
        for k in (0..n).rev() {
            let st = &self.stages[k];
            let y = stack(&x[k], &z[k]);
            let mut grad = st.hess * y + st.grad;
            for (r, l) in st.rows.iter().zip(&dual[k]) {
                grad += r.coeffs * *l;
            }
            let rz = grad.fixed_rows::<NZ>(NX) + st.b.transpose() * costate;
            worst = worst.max(rz.amax());
            costate = grad.fixed_rows::<NX>(0) + st.a.transpose() * costate;
        }
        worst
    }

    pub fn solve(&self, options: &IpmOptions) -> Result<QpSolution, QpError> {
        let n = self.stages.len();
        let bounds = self.bounds();
        let rows_total: usize = bounds.iter().map(Vec::len).sum();

        // Start from the zero-input rollout.
        let mut z = vec![VecZ::zeros(); n];
        let mut x = Vec::with_capacity(n + 1);
        x.push(self.x0);
        for (k, st) in self.stages.iter().enumerate() {
            let next = st.a * x[k] + st.b * z[k] + st.c;
            x.push(next);
        }
        let values = self.row_values(&x, &z);
        let mut rs: Vec<RowState> = values
            .iter()
            .zip(&bounds)
            .map(|(v, b)| RowState {
                slack: v.iter().zip(b).map(|(v, b)| (b - v).max(1.0)).collect(),
                dual: vec![1.0; v.len()],
            })
            .collect();

        let scale = 1.0
            + self
                .stages
                .iter()
                .map(|s| s.grad.amax())
                .fold(self.terminal.grad.amax(), f64::max);

        let mut residual = f64::INFINITY;
        for iteration in 0..options.max_iterations {
            let values = self.row_values(&x, &z);
            let primal: Vec<Vec<f64>> = values
                .iter()
                .zip(&bounds)
                .zip(&rs)
                .map(|((v, b), s)| {
                    v.iter()
                        .zip(b)
                        .zip(&s.slack)
                        .map(|((v, b), t)| v + t - b)
                        .collect()
                })
                .collect();
            let mu = if rows_total > 0 {
                rs.iter()
                    .flat_map(|s| s.slack.iter().zip(&s.dual).map(|(t, l)| t * l))
                    .sum::<f64>()
                    / rows_total as f64
            } else {
                0.0
            };
            let duals: Vec<Vec<f64>> = rs.iter().map(|s| s.dual.clone()).collect();
            let primal_res = primal.iter().flatten().fold(0.0f64, |m, r| m.max(r.abs()));
            let dual_res = self.dual_residual(&x, &z, &duals);
            residual = primal_res.max(dual_res / scale).max(mu / scale);
            if residual < options.tolerance {
                let objective = self.objective(&x, &z);
                return Ok(QpSolution {
                    x,
                    z,
                    multipliers: duals,
                    objective,
                    iterations: iteration,
                });
            }

            // Affine predictor, then the centered corrector.
            let affine = self.newton_step(&x, &z, &rs, &primal, &bounds, |_, _, _| 0.0)?;
            let alpha_aff = self.step_length(&rs, &affine.1, &affine.2, 1.0);
            let mu_aff =
                if rows_total > 0 {
                    rs.iter()
                        .zip(affine.1.iter().zip(&affine.2))
                        .flat_map(|(s, (dt, dl))| {
                            s.slack.iter().zip(&s.dual).zip(dt.iter().zip(dl)).map(
                                |((t, l), (dt, dl))| (t + alpha_aff * dt) * (l + alpha_aff * dl),
                            )
                        })
                        .sum::<f64>()
                        / rows_total as f64
                } else {
                    0.0
                };
            let sigma = if mu > 0.0 {
                (mu_aff / mu).powi(3).min(1.0)
            } else {
                0.0
            };
            let target = sigma * mu;
            let (dt_aff, dl_aff) = (&affine.1, &affine.2);
            let step = self.newton_step(&x, &z, &rs, &primal, &bounds, |k, i, _| {
                target - dt_aff[k][i] * dl_aff[k][i]
            })?;
            let alpha = self.step_length(&rs, &step.1, &step.2, options.fraction_to_boundary);

            let ((dx, dz), dt, dl) = step;
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d * alpha;
            }
            for (zi, d) in z.iter_mut().zip(&dz) {
                *zi += d * alpha;
            }
            for (s, (dt, dl)) in rs.iter_mut().zip(dt.iter().zip(&dl)) {
                for i in 0..s.slack.len() {
                    s.slack[i] = (s.slack[i] + alpha * dt[i]).max(1e-300);
                    s.dual[i] = (s.dual[i] + alpha * dl[i]).max(1e-300);
                }
            }
            if x.iter().any(|v| !v.iter().all(|c| c.is_finite()))
                || z.iter().any(|v| !v.iter().all(|c| c.is_finite()))
            {
                return Err(QpError::NonFinite);
            }
        }
        Err(QpError::NotConverged {
            iterations: options.max_iterations,
            residual,
        })
    }

    fn step_length(&self, rs: &[RowState], dt: &[Vec<f64>], dl: &[Vec<f64>], tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for (s, (dt, dl)) in rs.iter().zip(dt.iter().zip(dl)) {
            for i in 0..s.slack.len() {
                if dt[i] < 0.0 {
                    alpha = alpha.min(-tau * s.slack[i] / dt[i]);
                }
                if dl[i] < 0.0 {
                    alpha = alpha.min(-tau * s.dual[i] / dl[i]);
                }
            }
        }
        alpha
    }

    /// Newton direction for the perturbed KKT system with complementarity
    /// target `slack * dual = centering(k, i, mu)`.
    #[allow(clippy::type_complexity)]
    fn newton_step(
        &self,
        x: &[VecX],
        z: &[VecZ],
        rs: &[RowState],
        primal: &[Vec<f64>],
        bounds: &[Vec<f64>],
        centering: impl Fn(usize, usize, f64) -> f64,
    ) -> Result<((Vec<VecX>, Vec<VecZ>), Vec<Vec<f64>>, Vec<Vec<f64>>), QpError> {
        let n = self.stages.len();
        let mut hess = Vec::with_capacity(n);
        let mut grad = Vec::with_capacity(n);
        // Complementarity residual r_c = t * l - target; the reduced gradient
        // is h + G' [l - r_c / t + Sigma (t - b)] with Sigma = l / t.
        let weight = |k: usize, i: usize| -> (f64, f64) {
            let t = rs[k].slack[i];
            let l = rs[k].dual[i];
            let rc = t * l - centering(k, i, 0.0);
            let sigma = l / t;
            (sigma, l - rc / t + sigma * (t - bounds[k][i]))
        };
        for (k, st) in self.stages.iter().enumerate() {
            let mut h = st.hess;
            let mut g = st.grad;
            for (i, r) in st.rows.iter().enumerate() {
                let (sigma, coef) = weight(k, i);
                h += r.coeffs * r.coeffs.transpose() * sigma;
                g += r.coeffs * coef;
            }
            hess.push(h);
            grad.push(g);
        }
        let mut hn = self.terminal.hess;
        let mut gn = self.terminal.grad;
        for (i, r) in self.terminal.rows.iter().enumerate() {
            let (sigma, coef) = weight(n, i);
            hn += r.coeffs * r.coeffs.transpose() * sigma;
            gn += r.coeffs * coef;
        }
        let (xp, zp) = riccati(self, &hess, &grad, &hn, &gn)?;
        let dx: Vec<VecX> = xp.iter().zip(x).map(|(a, b)| a - b).collect();
        let dz: Vec<VecZ> = zp.iter().zip(z).map(|(a, b)| a - b).collect();

        let mut dt = Vec::with_capacity(n + 1);
        let mut dl = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let deltas: Vec<f64> = if k < n {
                let dy = stack(&dx[k], &dz[k]);
                self.stages[k]
                    .rows
                    .iter()
                    .map(|r| r.coeffs.dot(&dy))
                    .collect()
            } else {
                self.terminal
                    .rows
                    .iter()
                    .map(|r| r.coeffs.dot(&dx[n]))
                    .collect()
            };
            let mut dtk = Vec::with_capacity(deltas.len());
            let mut dlk = Vec::with_capacity(deltas.len());
            for (i, gd) in deltas.iter().enumerate() {
                let t = rs[k].slack[i];
                let l = rs[k].dual[i];
                let rc = t * l - centering(k, i, 0.0);
                let d_slack = -primal[k][i] - gd;
                dtk.push(d_slack);
                dlk.push((-rc - l * d_slack) / t);
            }
            dt.push(dtk);
            dl.push(dlk);
        }
        Ok(((dx, dz), dt, dl))
    }
}
