//! Planning problem assembly, the convex-concave planner, a direct nonconvex
//! solver for comparison, and optimality diagnostics.
//!
//! The decision vector stacks one 9-block per step:
//! `(mdot, tsa, tma, tz, qhvac, x1', x2', eps_min, eps_max)` where `x'` is the
//! model state at the next step.

use std::time::{Duration, Instant};

use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thermpc_qp::{qp_solve, CsrMatrix, QpError, QpProblem, QpSettings, QpSolution, QpStatus, TripletBuilder};
use thiserror::Error;

use crate::domain::{ActuatorLimits, HvacConstants, StepBounds};
use crate::sysid::{StateSpace, ThermalModel};

pub const BLOCK: usize = 9;
pub const MDOT: usize = 0;
pub const TSA: usize = 1;
pub const TMA: usize = 2;
pub const TZ: usize = 3;
pub const QHVAC: usize = 4;
pub const X1: usize = 5;
pub const X2: usize = 6;
pub const EPS_MIN: usize = 7;
pub const EPS_MAX: usize = 8;

/// Per-component divisors of the iterate-difference norm.
pub const STEP_SCALE: [f64; BLOCK] = [1.0, 1.0, 1.0, 1.0, 10.0, 1.0, 1.0, 1.0, 1.0];

pub type Block = SMatrix<f64, BLOCK, BLOCK>;
pub type BlockVec = SVector<f64, BLOCK>;

#[inline]
pub fn idx(k: usize, j: usize) -> usize {
    BLOCK * k + j
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlanError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite planning data: {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Stage cost `½ zᵀ P z + qᵀ z`, the bilinear map `½ zᵀ P_c z` and the eigensplit of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    pub p: Block,
    pub q: BlockVec,
    pub p_c: Block,
    pub p_plus: Block,
    pub p_minus: Block,
    /// Eigenvectors of `P`, column-wise.
    pub eig_q: Block,
    pub lambda_plus: BlockVec,
    pub lambda_minus: BlockVec,
}

impl CostMatrices {
    pub fn new(c: &HvacConstants) -> Self {
        let dt = c.dt_hours();
        let mut p = Block::zeros();
        p[(MDOT, MDOT)] = 2.0 * c.a_f_kw() * dt;
        p[(MDOT, TSA)] = c.cpa * dt;
        p[(TSA, MDOT)] = c.cpa * dt;
        p[(MDOT, TMA)] = c.cpa / c.cop * dt;
        p[(TMA, MDOT)] = c.cpa / c.cop * dt;
        let mut q = BlockVec::zeros();
        q[MDOT] = -c.cpa * c.tca * (1.0 + c.cop) / c.cop * dt;
        q[EPS_MIN] = c.rho;
        q[EPS_MAX] = c.rho;
        let mut p_c = Block::zeros();
        p_c[(MDOT, TSA)] = c.cpa;
        p_c[(TSA, MDOT)] = c.cpa;
        p_c[(MDOT, TZ)] = -c.cpa;
        p_c[(TZ, MDOT)] = -c.cpa;

        let eig = p.symmetric_eigen();
        let cut = 1e-14 * p.amax();
        let lambda_plus = eig.eigenvalues.map(|l| if l > cut { l } else { 0.0 });
        let lambda_minus = eig.eigenvalues.map(|l| if l < -cut { l } else { 0.0 });
        let qm = eig.eigenvectors;
        let p_plus = sym(qm * Block::from_diagonal(&lambda_plus) * qm.transpose());
        let p_minus = sym(qm * Block::from_diagonal(&lambda_minus) * qm.transpose());
        Self { p, q, p_c, p_plus, p_minus, eig_q: qm, lambda_plus, lambda_minus }
    }

    pub fn stage(&self, zk: &[f64]) -> f64 {
        let z = BlockVec::from_column_slice(zk);
        0.5 * z.dot(&(self.p * z)) + self.q.dot(&z)
    }

    /// Majorizer of the stage cost, touching at `zeta`.
    pub fn stage_surrogate(&self, zk: &[f64], zeta: &[f64]) -> f64 {
        let z = BlockVec::from_column_slice(zk);
        let s = BlockVec::from_column_slice(zeta);
        0.5 * z.dot(&(self.p_plus * z)) + (self.p_minus * s + self.q).dot(&z) - 0.5 * s.dot(&(self.p_minus * s))
    }

    /// `−qhvac + ½ zᵀ P_c z`.
    pub fn bilinear(&self, zk: &[f64]) -> f64 {
        let z = BlockVec::from_column_slice(zk);
        -z[QHVAC] + 0.5 * z.dot(&(self.p_c * z))
    }

    /// Tangent of [`Self::bilinear`] at `zeta`, evaluated at `zk`.
    pub fn bilinear_tangent(&self, zk: &[f64], zeta: &[f64]) -> f64 {
        let z = BlockVec::from_column_slice(zk);
        let s = BlockVec::from_column_slice(zeta);
        -z[QHVAC] + (self.p_c * s).dot(&z) - 0.5 * s.dot(&(self.p_c * s))
    }
}

fn sym(m: Block) -> Block {
    (m + m.transpose()) * 0.5
}

/// One instance of the planning problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanInstance {
    pub n: usize,
    pub model: ThermalModel,
    pub x0: [f64; 2],
    pub toa: Vec<f64>,
    pub eta: Vec<f64>,
    pub wbar: Vec<f64>,
    pub bounds: Vec<StepBounds>,
    pub consts: HvacConstants,
    /// Largest change of `mdot` / `tsa` between consecutive steps.
    pub mdot_step: f64,
    pub tsa_step: f64,
    /// Command applied just before the horizon, if any.
    pub prev_cmd: Option<[f64; 2]>,
}

pub struct PlanForecast<'a> {
    pub toa: &'a [f64],
    pub eta: &'a [f64],
    pub wbar: &'a [f64],
}

pub fn build_instance(
    model: &ThermalModel,
    x0: [f64; 2],
    forecast: PlanForecast<'_>,
    bounds: &[StepBounds],
    limits: &ActuatorLimits,
    consts: &HvacConstants,
    prev_cmd: Option<[f64; 2]>,
) -> Result<PlanInstance, PlanError> {
    let n = bounds.len();
    if n == 0 || forecast.toa.len() != n || forecast.eta.len() != n || forecast.wbar.len() != n {
        return Err(PlanError::Dimension(format!(
            "bounds {n}, toa {}, eta {}, wbar {}",
            forecast.toa.len(),
            forecast.eta.len(),
            forecast.wbar.len()
        )));
    }
    let all_finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !all_finite(&x0) {
        return Err(PlanError::NonFinite("x0"));
    }
    if !(all_finite(forecast.toa) && all_finite(forecast.eta) && all_finite(forecast.wbar)) {
        return Err(PlanError::NonFinite("forecast"));
    }
    let mdot_step = limits.mdot_step(consts.dt);
    let tsa_step = limits.tsa_step(consts.dt);
    // a previous command outside one rate step of the first box is pulled onto its edge
    let prev_cmd = prev_cmd.map(|[m, t]| {
        let b = &bounds[0];
        [m.clamp(b.mdot_min - mdot_step, b.mdot_max + mdot_step), t.clamp(b.tsa_min - tsa_step, b.tsa_max + tsa_step)]
    });
    Ok(PlanInstance {
        n,
        model: model.clone(),
        x0,
        toa: forecast.toa.to_vec(),
        eta: forecast.eta.to_vec(),
        wbar: forecast.wbar.to_vec(),
        bounds: bounds.to_vec(),
        consts: *consts,
        mdot_step,
        tsa_step,
        prev_cmd,
    })
}

/// Inequality row families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    MdotMin,
    MdotMax,
    MdotRateUp,
    MdotRateDown,
    TsaMin,
    TsaMax,
    TsaRateUp,
    TsaRateDown,
    ComfortMin,
    ComfortMax,
    SlackMin,
    SlackMax,
}

/// The linear part of the planning problem: dynamics, output and mixed-air
/// equalities plus every inequality row.
#[derive(Debug, Clone)]
pub struct LinearRows {
    pub a_eq: CsrMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: CsrMatrix,
    pub b_in: Vec<f64>,
    pub in_kind: Vec<(RowKind, usize)>,
}

impl PlanInstance {
    pub fn dim(&self) -> usize {
        BLOCK * self.n
    }

    pub fn state_space(&self) -> StateSpace {
        self.model.to_state_space()
    }

    fn v(&self, k: usize) -> [f64; 3] {
        [self.toa[k], self.eta[k], self.wbar[k]]
    }

    pub fn linear_rows(&self) -> LinearRows {
        let n = self.n;
        let ss = self.state_space();
        let alpha = self.consts.alpha;
        let x0 = Vector2::new(self.x0[0], self.x0[1]);

        let mut eq = TripletBuilder::new(0, self.dim());
        let mut b_eq = Vec::with_capacity(4 * n);
        for k in 0..n {
            let v = self.v(k);
            let fv = ss.f * nalgebra::Vector3::new(v[0], v[1], v[2]);
            let gv = ss.g[0] * v[0] + ss.g[1] * v[1] + ss.g[2] * v[2];
            // x_{k+1} − A x_k − B q_k = F v_k
            for i in 0..2 {
                let r = eq.add_row();
                eq.push(r, idx(k, X1 + i), 1.0);
                eq.push(r, idx(k, QHVAC), -ss.b[i]);
                let mut rhs = fv[i];
                if k == 0 {
                    rhs += (ss.a * x0)[i];
                } else {
                    for j in 0..2 {
                        eq.push(r, idx(k - 1, X1 + j), -ss.a[(i, j)]);
                    }
                }
                b_eq.push(rhs);
            }
            // tz_k − C x_k − D q_k = G v_k
            let r = eq.add_row();
            eq.push(r, idx(k, TZ), 1.0);
            if ss.d != 0.0 {
                eq.push(r, idx(k, QHVAC), -ss.d);
            }
            let mut rhs = gv;
            if k == 0 {
                rhs += (ss.c * x0)[0];
            } else {
                for j in 0..2 {
                    eq.push(r, idx(k - 1, X1 + j), -ss.c[j]);
                }
            }
            b_eq.push(rhs);
            // tma_k − (1 − α) tz_k = α toa_k
            let r = eq.add_row();
            eq.push(r, idx(k, TMA), 1.0);
            eq.push(r, idx(k, TZ), -(1.0 - alpha));
            b_eq.push(alpha * self.toa[k]);
        }

        let mut ineq = TripletBuilder::new(0, self.dim());
        let mut b_in = Vec::with_capacity(12 * n);
        let mut kind = Vec::with_capacity(12 * n);
        let mut row = |entries: &[(usize, f64)], b: f64, kd: RowKind, k: usize| {
            let r = ineq.add_row();
            for &(c, v) in entries {
                ineq.push(r, c, v);
            }
            b_in.push(b);
            kind.push((kd, k));
        };
        for k in 0..n {
            let bd = &self.bounds[k];
            row(&[(idx(k, MDOT), -1.0)], -bd.mdot_min, RowKind::MdotMin, k);
            row(&[(idx(k, MDOT), 1.0)], bd.mdot_max, RowKind::MdotMax, k);
            row(&[(idx(k, TSA), -1.0)], -bd.tsa_min, RowKind::TsaMin, k);
            row(&[(idx(k, TSA), 1.0)], bd.tsa_max, RowKind::TsaMax, k);
            if k == 0 {
                if let Some([m, t]) = self.prev_cmd {
                    row(&[(idx(0, MDOT), 1.0)], self.mdot_step + m, RowKind::MdotRateUp, 0);
                    row(&[(idx(0, MDOT), -1.0)], self.mdot_step - m, RowKind::MdotRateDown, 0);
                    row(&[(idx(0, TSA), 1.0)], self.tsa_step + t, RowKind::TsaRateUp, 0);
                    row(&[(idx(0, TSA), -1.0)], self.tsa_step - t, RowKind::TsaRateDown, 0);
                }
            } else {
                row(&[(idx(k, MDOT), 1.0), (idx(k - 1, MDOT), -1.0)], self.mdot_step, RowKind::MdotRateUp, k);
                row(&[(idx(k, MDOT), -1.0), (idx(k - 1, MDOT), 1.0)], self.mdot_step, RowKind::MdotRateDown, k);
                row(&[(idx(k, TSA), 1.0), (idx(k - 1, TSA), -1.0)], self.tsa_step, RowKind::TsaRateUp, k);
                row(&[(idx(k, TSA), -1.0), (idx(k - 1, TSA), 1.0)], self.tsa_step, RowKind::TsaRateDown, k);
            }
            row(&[(idx(k, TZ), -1.0), (idx(k, EPS_MIN), -1.0)], -bd.tz_min, RowKind::ComfortMin, k);
            row(&[(idx(k, TZ), 1.0), (idx(k, EPS_MAX), -1.0)], bd.tz_max, RowKind::ComfortMax, k);
            row(&[(idx(k, EPS_MIN), -1.0)], 0.0, RowKind::SlackMin, k);
            row(&[(idx(k, EPS_MAX), -1.0)], 0.0, RowKind::SlackMax, k);
        }
        LinearRows { a_eq: eq.build(), b_eq, a_in: ineq.build(), b_in, in_kind: kind }
    }

    /// Command interval allowed at step `k` given the previous command.
    fn command_interval(&self, k: usize, prev: Option<[f64; 2]>) -> ([f64; 2], [f64; 2]) {
        let b = &self.bounds[k];
        let (mut m, mut t) = ([b.mdot_min, b.mdot_max], [b.tsa_min, b.tsa_max]);
        if let Some([pm, pt]) = prev {
            m = [m[0].max(pm - self.mdot_step), m[1].min(pm + self.mdot_step)];
            t = [t[0].max(pt - self.tsa_step), t[1].min(pt + self.tsa_step)];
        }
        // guard against an empty interval from round-off
        if m[0] > m[1] {
            m = [m[1], m[1]];
        }
        if t[0] > t[1] {
            t = [t[1], t[1]];
        }
        (m, t)
    }

    /// Forward clamp of a command sequence into the box and rate limits.
    pub fn project_commands(&self, cmds: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut prev = self.prev_cmd;
        let mut out = Vec::with_capacity(self.n);
        for k in 0..self.n {
            let (m, t) = self.command_interval(k, prev);
            let c = [cmds[k][0].clamp(m[0], m[1]), cmds[k][1].clamp(t[0], t[1])];
            out.push(c);
            prev = Some(c);
        }
        out
    }

    /// Fills every non-command variable of the plan by forward simulation of the
    /// model, so that all constraints hold.
    pub fn rollout(&self, cmds: &[[f64; 2]]) -> Vec<f64> {
        let ss = self.state_space();
        let c = &self.consts;
        let mut z = vec![0.0; self.dim()];
        let mut x = Vector2::new(self.x0[0], self.x0[1]);
        for k in 0..self.n {
            let [m, tsa] = cmds[k];
            let v = self.v(k);
            // tz = C x + D q + G v with q = cpa·m·(tsa − tz)
            let base = (ss.c * x)[0] + ss.g[0] * v[0] + ss.g[1] * v[1] + ss.g[2] * v[2];
            let tz = (base + ss.d * c.cpa * m * tsa) / (1.0 + ss.d * c.cpa * m);
            let q = c.cpa * m * (tsa - tz);
            let xn = ss.step(&x, q, &v);
            let b = &self.bounds[k];
            let zk = &mut z[BLOCK * k..BLOCK * (k + 1)];
            zk[MDOT] = m;
            zk[TSA] = tsa;
            zk[TMA] = (1.0 - c.alpha) * tz + c.alpha * self.toa[k];
            zk[TZ] = tz;
            zk[QHVAC] = q;
            zk[X1] = xn[0];
            zk[X2] = xn[1];
            zk[EPS_MIN] = (b.tz_min - tz).max(0.0);
            zk[EPS_MAX] = (tz - b.tz_max).max(0.0);
            x = xn;
        }
        z
    }

    pub fn commands(&self, z: &[f64]) -> Vec<[f64; 2]> {
        (0..self.n).map(|k| [z[idx(k, MDOT)], z[idx(k, TSA)]]).collect()
    }

    pub fn objective(&self, cost: &CostMatrices, z: &[f64]) -> f64 {
        z.chunks_exact(BLOCK).map(|zk| cost.stage(zk)).sum()
    }

    pub fn surrogate_objective(&self, cost: &CostMatrices, z: &[f64], zeta: &[f64]) -> f64 {
        z.chunks_exact(BLOCK).zip(zeta.chunks_exact(BLOCK)).map(|(a, b)| cost.stage_surrogate(a, b)).sum()
    }

    /// Steps whose planned mixed-air temperature is below the coil temperature.
    pub fn cold_mixed_air_steps(&self, z: &[f64]) -> Vec<usize> {
        (0..self.n).filter(|&k| z[idx(k, TMA)] < self.consts.tca - 1e-9).collect()
    }
}

/// Commands pinned at their lowest admissible values, with states and slacks
/// forward-solved. Satisfies every constraint of the planning problem.
pub fn feasible_start(inst: &PlanInstance) -> Vec<f64> {
    let mut prev = inst.prev_cmd;
    let mut cmds = Vec::with_capacity(inst.n);
    for k in 0..inst.n {
        let (m, t) = inst.command_interval(k, prev);
        let c = [m[0], t[0]];
        cmds.push(c);
        prev = Some(c);
    }
    inst.rollout(&cmds)
}

/// Previous plan advanced by `n_shift` steps with its last block repeated.
pub fn shift_plan(prev: &[f64], n_shift: usize) -> Vec<f64> {
    let n = prev.len() / BLOCK;
    let mut out = Vec::with_capacity(prev.len());
    for k in 0..n {
        let src = (k + n_shift).min(n - 1);
        out.extend_from_slice(&prev[BLOCK * src..BLOCK * (src + 1)]);
    }
    out
}

/// Warm start for a new instance from the previous cycle's plan.
pub fn warm_start(inst: &PlanInstance, prev_plan: &[f64], n_shift: usize) -> Option<Vec<f64>> {
    if prev_plan.len() != inst.dim() {
        return None;
    }
    let shifted = shift_plan(prev_plan, n_shift);
    Some(inst.rollout(&inst.project_commands(&inst.commands(&shifted))))
}

/// A convex subproblem together with the constant dropped from its objective.
#[derive(Debug, Clone)]
pub struct Convexified {
    pub qp: QpProblem,
    pub constant: f64,
}

fn assemble(
    inst: &PlanInstance,
    rows: &LinearRows,
    hess: &Block,
    prox: &[f64; BLOCK],
    lin: impl Fn(usize) -> BlockVec,
    tangent: Option<(&CostMatrices, &[f64])>,
) -> Result<QpProblem, QpError> {
    let n = inst.n;
    let dim = inst.dim();
    let mut h = TripletBuilder::new(dim, dim);
    let mut f = vec![0.0; dim];
    for k in 0..n {
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                let v = hess[(i, j)] + if i == j { prox[i] } else { 0.0 };
                if v != 0.0 {
                    h.push(idx(k, i), idx(k, j), v);
                }
            }
        }
        let l = lin(k);
        for i in 0..BLOCK {
            f[idx(k, i)] = l[i];
        }
    }
    let (a_eq, b_eq) = match tangent {
        Some((cost, zeta)) => {
            let mut t = TripletBuilder::new(n, dim);
            let mut b = Vec::with_capacity(n + rows.b_eq.len());
            for k in 0..n {
                let s = BlockVec::from_column_slice(&zeta[BLOCK * k..BLOCK * (k + 1)]);
                let g = cost.p_c * s;
                t.push(k, idx(k, QHVAC), -1.0);
                for j in 0..BLOCK {
                    if g[j] != 0.0 {
                        t.push(k, idx(k, j), g[j]);
                    }
                }
                b.push(0.5 * s.dot(&(cost.p_c * s)));
            }
            b.extend_from_slice(&rows.b_eq);
            (t.build().vstack(&rows.a_eq), b)
        }
        None => (rows.a_eq.clone(), rows.b_eq.clone()),
    };
    QpProblem::new(h.build(), f, a_eq, b_eq, rows.a_in.clone(), rows.b_in.clone())
}

/// Convex subproblem at `zeta`: majorized cost and tangent bilinear rows, all
/// other rows unchanged.
pub fn convexify(inst: &PlanInstance, cost: &CostMatrices, zeta: &[f64]) -> Result<Convexified, PlanError> {
    convexify_with(inst, &inst.linear_rows(), cost, zeta, 0.0)
}

fn convexify_with(
    inst: &PlanInstance,
    rows: &LinearRows,
    cost: &CostMatrices,
    zeta: &[f64],
    prox: f64,
) -> Result<Convexified, PlanError> {
    if zeta.len() != inst.dim() {
        return Err(PlanError::Dimension(format!("zeta {} vs {}", zeta.len(), inst.dim())));
    }
    let prox_diag = prox_weights(prox);
    let block = |k: usize| BlockVec::from_column_slice(&zeta[BLOCK * k..BLOCK * (k + 1)]);
    let lin = |k: usize| {
        let s = block(k);
        let mut l = cost.p_minus * s + cost.q;
        for i in 0..BLOCK {
            l[i] -= prox_diag[i] * s[i];
        }
        l
    };
    let qp = assemble(inst, rows, &cost.p_plus, &prox_diag, lin, Some((cost, zeta)))?;
    let constant = (0..inst.n)
        .map(|k| {
            let s = block(k);
            let mut c = -0.5 * s.dot(&(cost.p_minus * s));
            for i in 0..BLOCK {
                c += 0.5 * prox_diag[i] * s[i] * s[i];
            }
            c
        })
        .sum();
    Ok(Convexified { qp, constant })
}

fn prox_weights(prox: f64) -> [f64; BLOCK] {
    let mut w = [0.0; BLOCK];
    if prox > 0.0 {
        w[MDOT] = prox;
        w[TSA] = prox;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcpSettings {
    /// Stop when the scaled ∞-norm of the iterate change is at most this.
    pub delta: f64,
    pub max_iter: usize,
    /// Wall-clock budget per solve in milliseconds; `None` means unlimited.
    pub budget_ms: Option<u64>,
    /// Smallest step tried by the backtracking search.
    pub min_step: f64,
    /// Proximal weight on the commands in the subproblem cost.
    pub prox: f64,
    /// Relative objective decrease below which the iteration stops.
    pub obj_tol: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    /// Keep every iterate in the trace.
    pub keep_iterates: bool,
}

impl Default for CcpSettings {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            max_iter: 50,
            budget_ms: None,
            min_step: 1e-4,
            prox: 0.0,
            obj_tol: 1e-9,
            qp_tol: 1e-6,
            qp_max_iter: 20_000,
            keep_iterates: false,
        }
    }
}

impl CcpSettings {
    fn qp(&self) -> QpSettings {
        QpSettings { tol: self.qp_tol, max_iter: self.qp_max_iter, ..QpSettings::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Iterate change below `delta`.
    Converged,
    /// No descent step found along the subproblem direction.
    Stalled,
    /// Accepted step improved the objective by less than `obj_tol` relative.
    SmallDecrease,
    IterationCap,
    TimeBudget,
    /// A subproblem failed; the best iterate so far is returned.
    SubproblemFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpTrace {
    /// `J(ζ(n))` for every accepted iterate, starting with the initial guess.
    pub objectives: Vec<f64>,
    pub qp_status: Vec<QpStatus>,
    pub qp_iterations: Vec<usize>,
    /// Backtracking step taken at each iteration (0 when rejected).
    pub steps: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub stop: StopReason,
    pub warm_started: bool,
    pub elapsed: Duration,
    #[serde(skip)]
    pub iterates: Vec<Vec<f64>>,
}

impl CcpTrace {
    pub fn iterations(&self) -> usize {
        self.qp_status.len()
    }

    pub fn degraded(&self) -> bool {
        self.stop == StopReason::SubproblemFailed
    }

    /// Largest increase of the objective between consecutive iterates.
    pub fn worst_ascent(&self) -> f64 {
        self.objectives.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn scaled_step_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).enumerate().map(|(i, (x, y))| ((x - y) / STEP_SCALE[i % BLOCK]).abs()).fold(0.0, f64::max)
}

/// Convex-concave planner. Starts from the better of [`feasible_start`] and the
/// optional warm start; every iterate satisfies all constraints and the
/// objective never increases.
pub fn ccp_solve(inst: &PlanInstance, warm: Option<&[f64]>, settings: &CcpSettings) -> Result<(Vec<f64>, CcpTrace), PlanError> {
    let t0 = Instant::now();
    let cost = CostMatrices::new(&inst.consts);
    let rows = inst.linear_rows();
    let qps = settings.qp();
    let budget = settings.budget_ms.map(Duration::from_millis);

    let mut zeta = feasible_start(inst);
    let mut j = inst.objective(&cost, &zeta);
    let mut warm_started = false;
    if let Some(w) = warm {
        if w.len() == inst.dim() {
            let jw = inst.objective(&cost, w);
            if jw < j {
                zeta = w.to_vec();
                j = jw;
                warm_started = true;
            }
        }
    }

    let mut trace = CcpTrace {
        objectives: vec![j],
        qp_status: Vec::new(),
        qp_iterations: Vec::new(),
        steps: Vec::new(),
        step_norms: Vec::new(),
        stop: StopReason::IterationCap,
        warm_started,
        elapsed: Duration::ZERO,
        iterates: Vec::new(),
    };
    if settings.keep_iterates {
        trace.iterates.push(zeta.clone());
    }
    let mut qp_warm: Option<QpSolution> = None;
    for _ in 0..settings.max_iter {
        if budget.is_some_and(|b| t0.elapsed() >= b) {
            trace.stop = StopReason::TimeBudget;
            break;
        }
        let cvx = convexify_with(inst, &rows, &cost, &zeta, settings.prox)?;
        let (shifted, _) = cvx.qp.shifted(&zeta);
        let warm_sol = qp_warm.as_ref().map(|s| {
            let mut s = s.clone();
            // previous answer expressed relative to the new expansion point
            for (w, z) in s.z_star.iter_mut().zip(&zeta) {
                *w -= z;
            }
            s
        });
        let mut sol = qp_solve(&shifted, warm_sol.as_ref(), &qps);
        trace.qp_status.push(sol.status);
        trace.qp_iterations.push(sol.iterations);
        if matches!(sol.status, QpStatus::Infeasible | QpStatus::Unbounded) || sol.z_star.iter().any(|v| !v.is_finite()) {
            trace.steps.push(0.0);
            trace.step_norms.push(0.0);
            trace.stop = StopReason::SubproblemFailed;
            break;
        }
        for (w, z) in sol.z_star.iter_mut().zip(&zeta) {
            *w += z;
        }
        let target = inst.commands(&sol.z_star);
        let base = inst.commands(&zeta);
        let mut t = 1.0;
        let mut accepted = None;
        while t >= settings.min_step {
            let mixed: Vec<[f64; 2]> = base
                .iter()
                .zip(&target)
                .map(|(b, a)| [b[0] + t * (a[0] - b[0]), b[1] + t * (a[1] - b[1])])
                .collect();
            let cand = inst.rollout(&inst.project_commands(&mixed));
            let jc = inst.objective(&cost, &cand);
            if jc <= j {
                accepted = Some((cand, jc));
                break;
            }
            t *= 0.5;
        }
        qp_warm = Some(sol);
        match accepted {
            Some((cand, jc)) => {
                let norm = scaled_step_norm(&cand, &zeta);
                trace.steps.push(t);
                trace.step_norms.push(norm);
                trace.objectives.push(jc);
                zeta = cand;
                let j_prev = j;
                j = jc;
                if settings.keep_iterates {
                    trace.iterates.push(zeta.clone());
                }
                if norm <= settings.delta {
                    trace.stop = StopReason::Converged;
                    break;
                }
                if j_prev - jc <= settings.obj_tol * (1.0 + j_prev.abs()) {
                    trace.stop = StopReason::SmallDecrease;
                    break;
                }
            }
            None => {
                trace.steps.push(0.0);
                trace.step_norms.push(0.0);
                trace.stop = StopReason::Stalled;
                break;
            }
        }
    }
    let cold = inst.cold_mixed_air_steps(&zeta);
    if !cold.is_empty() {
        log::warn!("plan has {} steps with mixed air below the coil temperature (first at {})", cold.len(), cold[0]);
    }
    trace.elapsed = t0.elapsed();
    Ok((zeta, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NlpStatus {
    Converged,
    MaxIter,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlpSettings {
    /// Budget in QP subproblems; exhausting it is a timeout.
    pub max_qp_solves: usize,
    /// Wall-clock budget in milliseconds.
    pub budget_ms: Option<u64>,
    /// Initial penalty on the bilinear residuals.
    pub mu0: f64,
    pub mu_max: f64,
    /// Required ∞-norm of the bilinear residuals, kW.
    pub tol: f64,
    /// Required scaled iterate change.
    pub delta: f64,
    /// Proximal weight on every variable.
    pub prox: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for NlpSettings {
    fn default() -> Self {
        Self {
            max_qp_solves: 60,
            budget_ms: None,
            mu0: 1.0,
            mu_max: 1e6,
            tol: 1e-5,
            delta: 1e-3,
            prox: 1e-4,
            qp_tol: 1e-6,
            qp_max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpReport {
    pub status: NlpStatus,
    pub qp_solves: usize,
    pub outer_iterations: usize,
    /// Final ∞-norm of the bilinear residuals before the closing rollout.
    pub residual: f64,
    pub objective: f64,
    pub elapsed: Duration,
}

/// Augmented-Lagrangian method on the bilinear equalities. Each inner step
/// minimizes the convex part of the cost, the linearized concave part and the
/// linearized augmented terms over the linear constraints. The returned plan is
/// the rollout of the final commands.
pub fn nlp_solve(inst: &PlanInstance, start: Option<&[f64]>, settings: &NlpSettings) -> Result<(Vec<f64>, NlpReport), PlanError> {
    let t0 = Instant::now();
    let cost = CostMatrices::new(&inst.consts);
    let rows = inst.linear_rows();
    let qps = QpSettings { tol: settings.qp_tol, max_iter: settings.qp_max_iter, ..QpSettings::default() };
    let budget = settings.budget_ms.map(Duration::from_millis);
    let n = inst.n;

    let mut z = match start {
        Some(s) if s.len() == inst.dim() => s.to_vec(),
        _ => feasible_start(inst),
    };
    let residuals = |z: &[f64]| -> Vec<f64> { z.chunks_exact(BLOCK).map(|zk| cost.bilinear(zk)).collect() };
    let mut h = residuals(&z);
    let mut lam = vec![0.0; n];
    let mut mu = settings.mu0;
    let mut solves = 0;
    let mut outer = 0;
    let status;
    let mut qp_warm: Option<QpSolution> = None;
    let hess = cost.p_plus;
    let prox = [settings.prox; BLOCK];
    loop {
        if solves >= settings.max_qp_solves || budget.is_some_and(|b| t0.elapsed() >= b) {
            status = NlpStatus::Timeout;
            break;
        }
        outer += 1;
        // gradients of the bilinear residuals at the current point
        let grads: Vec<BlockVec> = (0..n)
            .map(|k| {
                let s = BlockVec::from_column_slice(&z[BLOCK * k..BLOCK * (k + 1)]);
                let mut g = cost.p_c * s;
                g[QHVAC] -= 1.0;
                g
            })
            .collect();
        // minimize ½zᵀ(P⁺ + τI + μ Σ g gᵀ)z + (P⁻ z̄ + q − τ z̄ + (λ + μ(h̄ − g·z̄)) g)ᵀ z
        let dim = inst.dim();
        let mut hb = TripletBuilder::new(dim, dim);
        let mut f = vec![0.0; dim];
        for k in 0..n {
            let zb = BlockVec::from_column_slice(&z[BLOCK * k..BLOCK * (k + 1)]);
            let g = grads[k];
            let hk = hess + g * g.transpose() * mu + Block::from_diagonal(&BlockVec::from_column_slice(&prox));
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    if hk[(i, j)] != 0.0 {
                        hb.push(idx(k, i), idx(k, j), hk[(i, j)]);
                    }
                }
            }
            let coef = lam[k] + mu * (h[k] - g.dot(&zb));
            let l = cost.p_minus * zb + cost.q - BlockVec::from_column_slice(&prox).component_mul(&zb) + g * coef;
            for i in 0..BLOCK {
                f[idx(k, i)] = l[i];
            }
        }
        let qp = QpProblem::new(hb.build(), f, rows.a_eq.clone(), rows.b_eq.clone(), rows.a_in.clone(), rows.b_in.clone())?;
        let (shifted, _) = qp.shifted(&z);
        let warm_sol = qp_warm.as_ref().map(|s| {
            let mut s = s.clone();
            s.z_star.iter_mut().for_each(|v| *v = 0.0);
            s
        });
        let mut sol = qp_solve(&shifted, warm_sol.as_ref(), &qps);
        solves += 1;
        if !sol.z_star.iter().all(|v| v.is_finite()) || matches!(sol.status, QpStatus::Infeasible | QpStatus::Unbounded) {
            status = NlpStatus::MaxIter;
            break;
        }
        for (w, zb) in sol.z_star.iter_mut().zip(&z) {
            *w += zb;
        }
        let step = scaled_step_norm(&sol.z_star, &z);
        z = sol.z_star.clone();
        qp_warm = Some(sol);
        let h_new = residuals(&z);
        let hn = h_new.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ho = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..n {
            lam[k] += mu * h_new[k];
        }
        if hn > 0.25 * ho && hn > settings.tol {
            mu = (mu * 10.0).min(settings.mu_max);
        }
        h = h_new;
        if hn <= settings.tol && step <= settings.delta {
            status = NlpStatus::Converged;
            break;
        }
    }
    let residual = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let plan = inst.rollout(&inst.project_commands(&inst.commands(&z)));
    let objective = inst.objective(&cost, &plan);
    Ok((plan, NlpReport { status, qp_solves: solves, outer_iterations: outer, residual, objective, elapsed: t0.elapsed() }))
}

/// Maximum absolute residual of each constraint family at `z`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub bilinear: f64,
    /// Dynamics, output and mixed-air rows.
    pub linear_eq: f64,
    /// Largest inequality violation.
    pub inequality: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.bilinear.max(self.linear_eq).max(self.inequality)
    }
}

pub fn constraint_residuals(inst: &PlanInstance, z: &[f64]) -> ConstraintResiduals {
    let cost = CostMatrices::new(&inst.consts);
    let rows = inst.linear_rows();
    let bilinear = z.chunks_exact(BLOCK).map(|zk| cost.bilinear(zk).abs()).fold(0.0, f64::max);
    let linear_eq = rows.a_eq.mul_vec(z).iter().zip(&rows.b_eq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let inequality = rows.a_in.mul_vec(z).iter().zip(&rows.b_in).map(|(a, b)| (a - b).max(0.0)).fold(0.0, f64::max);
    ConstraintResiduals { bilinear, linear_eq, inequality }
}

/// Inequality rows active at a claimed optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub active: Vec<(RowKind, usize)>,
    /// True when no inequality is active, which cannot happen at an optimum.
    pub suspect: bool,
}

impl BoundaryReport {
    pub fn count(&self, kind: RowKind) -> usize {
        self.active.iter().filter(|(k, _)| *k == kind).count()
    }
}

pub fn boundary_check(inst: &PlanInstance, z: &[f64]) -> BoundaryReport {
    boundary_check_tol(inst, z, 1e-6)
}

pub fn boundary_check_tol(inst: &PlanInstance, z: &[f64], tol: f64) -> BoundaryReport {
    let rows = inst.linear_rows();
    let az = rows.a_in.mul_vec(z);
    let active: Vec<(RowKind, usize)> = az
        .iter()
        .zip(&rows.b_in)
        .zip(&rows.in_kind)
        .filter(|((a, b), _)| (*a - *b).abs() <= tol)
        .map(|(_, k)| *k)
        .collect();
    let suspect = active.is_empty();
    BoundaryReport { active, suspect }
}
