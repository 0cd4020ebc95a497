//! Convex identification of the second-order zone model and the transformed disturbance.
//!
//! The model is fitted in equation-error form
//!
//! ```text
//! y_k + a1·y_{k-1} + a2·y_{k-2} = Σ_j (b_j1·u_{j,k-1} + b_j2·u_{j,k-2}) + g·w̄_k
//! ```
//!
//! with inputs `u = (qhvac, toa, eta_sol)`. The disturbance residual `e = g·w̄` is
//! free but carries a second-difference penalty `λ·‖D₂e‖²`. Minimizing over `e`
//! in closed form leaves an 8-variable QP over the coefficients, constrained to
//! the stability triangle and to positive DC gains.

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Matrix2x3, RowVector2, RowVector3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thermpc_qp::ldl::ProfileLdl;
use thiserror::Error;

/// Number of identified coefficients.
pub const N_COEFFS: usize = 8;
/// Margin used when certifying a returned model.
pub const CERT_EPS: f64 = 1e-6;
/// Tighter margin imposed inside the program so that solver round-off stays certified.
const FIT_EPS: f64 = 2e-6;
const DC_EPS: f64 = 1e-6;
const DC_FIT_EPS: f64 = 2e-6;
/// Pole of the fixed prefilter (time constant of about three samples).
const PREFILTER_POLE: f64 = 0.7;
/// Leading filtered samples left out of the regression while the filter settles.
const PREFILTER_BURN_IN: usize = 64;

pub const MODEL_FORMAT: &str = "thermpc-thermal-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdDataset {
    /// `(qhvac kW, toa °C, eta_sol kW/m²)` per sample.
    pub u: Vec<[f64; 3]>,
    /// Zone temperature, °C.
    pub y: Vec<f64>,
    pub dt: f64,
}

impl IdDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEstimate {
    /// kW-equivalent, one value per dataset sample.
    pub w_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitInfo {
    pub samples: usize,
    pub lambda: f64,
    pub objective: f64,
    /// RMS of the equation error before removing the disturbance, °C.
    pub rms_equation_error: f64,
    /// Inequalities active at the fitted coefficients.
    pub active_constraints: usize,
    /// True when the solver output needed a certificate repair.
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    /// `(a1, a2)`.
    pub a: [f64; 2],
    /// `(b_1, b_2)` for `qhvac`, `toa`, `eta_sol`, in that order.
    pub b: [[f64; 2]; 3],
    /// Scale from `w̄` to output equation error.
    pub g_dist: f64,
    #[serde(default)]
    pub fit: FitInfo,
}

/// Observable-canonical realization
/// `x⁺ = A x + B q + F v`, `tz = C x + D q + G v`, `v = (toa, eta_sol, w̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpace {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub d: f64,
    pub f: Matrix2x3<f64>,
    pub g: RowVector3<f64>,
}

impl StateSpace {
    pub fn step(&self, x: &Vector2<f64>, q: f64, v: &[f64; 3]) -> Vector2<f64> {
        self.a * x + self.b * q + self.f * Vector3::new(v[0], v[1], v[2])
    }

    pub fn output(&self, x: &Vector2<f64>, q: f64, v: &[f64; 3]) -> f64 {
        (self.c * x)[0] + self.d * q + self.g[0] * v[0] + self.g[1] * v[1] + self.g[2] * v[2]
    }
}

impl ThermalModel {
    /// `(a1, a2, b_q1, b_q2, b_toa1, b_toa2, b_eta1, b_eta2)`.
    pub fn coefficients(&self) -> [f64; N_COEFFS] {
        let [a1, a2] = self.a;
        let b = self.b;
        [a1, a2, b[0][0], b[0][1], b[1][0], b[1][1], b[2][0], b[2][1]]
    }

    pub fn to_state_space(&self) -> StateSpace {
        let [a1, a2] = self.a;
        let g = self.g_dist;
        StateSpace {
            a: Matrix2::new(-a1, 1.0, -a2, 0.0),
            b: Vector2::new(self.b[0][0], self.b[0][1]),
            c: RowVector2::new(1.0, 0.0),
            d: 0.0,
            f: Matrix2x3::new(self.b[1][0], self.b[2][0], -a1 * g, self.b[1][1], self.b[2][1], -a2 * g),
            g: RowVector3::new(0.0, 0.0, g),
        }
    }

    /// Roots of `z² + a1·z + a2`.
    pub fn poles(&self) -> [Complex<f64>; 2] {
        let [a1, a2] = self.a;
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            // numerically stable pair
            let r1 = if a1 >= 0.0 { (-a1 - s) / 2.0 } else { (-a1 + s) / 2.0 };
            let r2 = if r1 != 0.0 { a2 / r1 } else { -a1 - r1 };
            [Complex::new(r1, 0.0), Complex::new(r2, 0.0)]
        } else {
            let im = (-disc).sqrt() / 2.0;
            [Complex::new(-a1 / 2.0, im), Complex::new(-a1 / 2.0, -im)]
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Steady-state gain from each measurable input to `tz`.
    pub fn dc_gains(&self) -> [f64; 3] {
        let den = 1.0 + self.a[0] + self.a[1];
        [0, 1, 2].map(|j| (self.b[j][0] + self.b[j][1]) / den)
    }

    pub fn in_stability_triangle(&self, eps: f64) -> bool {
        let [a1, a2] = self.a;
        a2 < 1.0 - eps && a2 > -1.0 + a1 + eps && a2 > -1.0 - a1 + eps
    }

    pub fn is_certified(&self) -> bool {
        self.in_stability_triangle(CERT_EPS)
            && self.a.iter().chain(self.b.iter().flatten()).all(|v| v.is_finite())
            && self.b.iter().all(|b| b[0] + b[1] >= DC_EPS)
            && self.g_dist > 0.0
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
            spectral_radius: self.spectral_radius(),
            dc_gains: self.dc_gains(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SysidError> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| SysidError::Document(e.to_string()))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(SysidError::Document(format!("unsupported document {} v{}", doc.format, doc.version)));
        }
        if !doc.model.is_certified() {
            return Err(SysidError::Document("model fails its stability or DC-gain certificate".into()));
        }
        Ok(doc.model)
    }
}

/// Versioned on-disk form of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub model: ThermalModel,
    pub spectral_radius: f64,
    pub dc_gains: [f64; 3],
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SysidError {
    #[error("dataset has {got} samples, at least {need} required")]
    TooShort { got: usize, need: usize },
    #[error("dataset inputs and outputs differ in length ({u} vs {y})")]
    Length { u: usize, y: usize },
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("lambda must be > 0, got {0}")]
    BadLambda(f64),
    #[error("identification QP has no feasible stationary point")]
    NoFeasibleFit,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("model document: {0}")]
    Document(String),
}

/// `(I + λ D₂ᵀD₂)` as a pentadiagonal factorization.
fn smoother(m: usize, lambda: f64) -> Result<ProfileLdl, SysidError> {
    let pattern = (0..m).flat_map(|i| (i.saturating_sub(2)..=i).map(move |j| (i, j)));
    let mut ldl = ProfileLdl::symbolic(m, pattern);
    for i in 0..m {
        ldl.add(i, i, 1.0);
    }
    for r in 0..m.saturating_sub(2) {
        let idx = [r, r + 1, r + 2];
        let w = [1.0, -2.0, 1.0];
        for p in 0..3 {
            for q in 0..=p {
                ldl.add(idx[p], idx[q], lambda * w[p] * w[q]);
            }
        }
    }
    ldl.factor().map_err(|e| SysidError::Numerical(e.to_string()))?;
    Ok(ldl)
}

/// `(I + λ D₂D₂ᵀ)` of order `p`, pentadiagonal Toeplitz.
fn second_difference_gram(p: usize, lambda: f64) -> Result<ProfileLdl, SysidError> {
    let pattern = (0..p).flat_map(|i| (i.saturating_sub(2)..=i).map(move |j| (i, j)));
    let mut ldl = ProfileLdl::symbolic(p, pattern);
    for i in 0..p {
        ldl.add(i, i, 1.0 + 6.0 * lambda);
        if i >= 1 {
            ldl.add(i, i - 1, -4.0 * lambda);
        }
        if i >= 2 {
            ldl.add(i, i - 2, lambda);
        }
    }
    ldl.factor().map_err(|e| SysidError::Numerical(e.to_string()))?;
    Ok(ldl)
}

/// Minimizes `½zᵀHz + fᵀz` subject to `Az ≤ b` for strictly convex `H` by trying every
/// active set. Returns the minimizer and the size of its active set.
fn enumerate_qp(h: &DMatrix<f64>, f: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, usize)> {
    let (n, rows) = (h.nrows(), a.nrows());
    // ranked by constraint violation above `TOL`, then by objective
    const TOL: f64 = 1e-9;
    let mut best: Option<((f64, f64), DVector<f64>, usize)> = None;
    for mask in 0u32..(1 << rows) {
        let act: Vec<usize> = (0..rows).filter(|r| mask >> r & 1 == 1).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-f));
        for (p, &r) in act.iter().enumerate() {
            for c in 0..n {
                kkt[(n + p, c)] = a[(r, c)];
                kkt[(c, n + p)] = a[(r, c)];
            }
            rhs[n + p] = b[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        if !z.iter().all(|v| v.is_finite()) {
            continue;
        }
        let viol = (a * &z - b).iter().fold(0.0f64, |m, &v| m.max(v - TOL));
        let key = (viol, 0.5 * z.dot(&(h * &z)) + f.dot(&z));
        if best.as_ref().map_or(true, |(o, ..)| key.partial_cmp(o) == Some(std::cmp::Ordering::Less)) {
            best = Some((key, z, k));
        }
    }
    best.map(|(_, z, k)| (z, k))
}

fn validate(data: &IdDataset, lambda: f64) -> Result<(), SysidError> {
    if data.u.len() != data.y.len() {
        return Err(SysidError::Length { u: data.u.len(), y: data.y.len() });
    }
    let need = 10 * N_COEFFS;
    if data.len() < need {
        return Err(SysidError::TooShort { got: data.len(), need });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SysidError::BadLambda(lambda));
    }
    for k in 0..data.len() {
        if !(data.y[k].is_finite() && data.u[k].iter().all(|v| v.is_finite())) {
            return Err(SysidError::NonFinite(k));
        }
    }
    Ok(())
}

fn regressor(data: &IdDataset, k: usize) -> [f64; N_COEFFS] {
    let (u1, u2) = (data.u[k - 1], data.u[k - 2]);
    [-data.y[k - 1], -data.y[k - 2], u1[0], u2[0], u1[1], u2[1], u1[2], u2[2]]
}

/// Smallest-norm adjustment that restores the certificates after round-off.
fn repair(theta: &mut [f64; N_COEFFS]) -> bool {
    let mut changed = false;
    let inside = |a1: f64, a2: f64| a2 < 1.0 - CERT_EPS && a2 > -1.0 + a1 + CERT_EPS && a2 > -1.0 - a1 + CERT_EPS;
    let mut s = 1.0;
    while !inside(theta[0] * s, theta[1] * s) {
        s *= 1.0 - 1e-6;
        if s < 0.5 {
            s = 0.0;
            break;
        }
        changed = true;
    }
    theta[0] *= s;
    theta[1] *= s;
    for j in 0..3 {
        let b1 = theta[2 + 2 * j];
        if !(b1 + theta[3 + 2 * j] >= DC_EPS) {
            // large coefficients need a step above their rounding error
            let mut b2 = DC_FIT_EPS - b1;
            while b1 + b2 < DC_FIT_EPS {
                b2 += DC_FIT_EPS.max(b2.abs() * f64::EPSILON);
            }
            theta[3 + 2 * j] = b2;
            changed = true;
        }
    }
    changed
}

/// First-order low-pass applied to every signal before the fit, started at the first sample.
fn prefilter(x: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = f64::NAN;
    for v in x {
        s = if s.is_nan() { v } else { PREFILTER_POLE * s + (1.0 - PREFILTER_POLE) * v };
        out.push(s);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimal disturbance `S⁻¹(y' − Φθ)` and the penalized objective at `theta`.
fn disturbance_at(phi: &[[f64; N_COEFFS]], yp: &[f64], ldl: &ProfileLdl, lambda: f64, theta: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let resid: Vec<f64> = phi.iter().zip(yp).map(|(r, y)| y - dot(r, theta)).collect();
    let mut e = resid.clone();
    ldl.solve(&mut e);
    let m = e.len();
    let mut objective = 0.5 * resid.iter().zip(&e).map(|(r, e)| (r - e) * (r - e)).sum::<f64>();
    objective += 0.5 * lambda * (0..m.saturating_sub(2)).map(|k| (e[k] - 2.0 * e[k + 1] + e[k + 2]).powi(2)).sum::<f64>();
    (resid, e, objective)
}

/// Disturbance that best explains `data` for the fixed coefficients of `model`.
pub fn disturbance_for(model: &ThermalModel, data: &IdDataset, lambda: f64) -> Result<DisturbanceEstimate, SysidError> {
    validate(data, lambda)?;
    let n = data.len();
    let theta = model.coefficients();
    let phi: Vec<[f64; N_COEFFS]> = (2..n).map(|k| regressor(data, k)).collect();
    let (_, e, _) = disturbance_at(&phi, &data.y[2..], &smoother(n - 2, lambda)?, lambda, &theta);
    Ok(DisturbanceEstimate { w_bar: pad_disturbance(&e, model.g_dist) })
}

fn pad_disturbance(e: &[f64], g: f64) -> Vec<f64> {
    let mut w_bar = Vec::with_capacity(e.len() + 2);
    w_bar.push(e[0] / g);
    w_bar.push(e[0] / g);
    w_bar.extend(e.iter().map(|v| v / g));
    w_bar
}

/// Fits the model and disturbance to `data` with smoothness weight `lambda`.
///
/// The coefficients are fitted on low-pass filtered copies of all signals, which the
/// linear model maps onto each other unchanged; this keeps white sensor noise from
/// dominating the regression. The disturbance is then evaluated on the raw data.
pub fn identify(data: &IdDataset, lambda: f64) -> Result<(ThermalModel, DisturbanceEstimate), SysidError> {
    validate(data, lambda)?;
    let n = data.len();
    let filtered = IdDataset {
        y: prefilter(data.y.iter().copied()),
        u: {
            let cols: Vec<Vec<f64>> = (0..3).map(|j| prefilter(data.u.iter().map(|u| u[j]))).collect();
            (0..n).map(|k| [cols[0][k], cols[1][k], cols[2][k]]).collect()
        },
        dt: data.dt,
    };
    let first = 2 + PREFILTER_BURN_IN.min((n - 2) / 2);
    let phi: Vec<[f64; N_COEFFS]> = (first..n).map(|k| regressor(&filtered, k)).collect();
    let yp: Vec<f64> = filtered.y[first..].to_vec();
    let m = phi.len();
    let ldl = smoother(m, lambda)?;

    // Φᵀ(I − S⁻¹)Φ = λ(D₂Φ)ᵀ(I + λD₂D₂ᵀ)⁻¹(D₂Φ), formed as a Gram product
    let inner = second_difference_gram(m - 2, lambda)?;
    let half = |x: &[f64]| {
        let mut d: Vec<f64> = (0..x.len() - 2).map(|k| x[k] - 2.0 * x[k + 1] + x[k + 2]).collect();
        inner.half_solve(&mut d);
        d
    };
    let g: Vec<Vec<f64>> = (0..N_COEFFS).map(|j| half(&phi.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
    let gy = half(&yp);
    let mut h = [[0.0; N_COEFFS]; N_COEFFS];
    let mut f = [0.0; N_COEFFS];
    for i in 0..N_COEFFS {
        for j in 0..=i {
            let v = lambda * dot(&g[i], &g[j]);
            h[i][j] = v;
            h[j][i] = v;
        }
        f[i] = -lambda * dot(&g[i], &gy);
    }

    // Jacobi scaling θ = s ⊙ θ̃ plus a tiny ridge so the scaled Hessian is definite
    let s: Vec<f64> = (0..N_COEFFS).map(|i| if h[i][i] > 1e-300 { 1.0 / h[i][i].sqrt() } else { 1.0 }).collect();
    let mut hd = vec![0.0; N_COEFFS * N_COEFFS];
    for i in 0..N_COEFFS {
        for j in 0..N_COEFFS {
            hd[i * N_COEFFS + j] = h[i][j] * s[i] * s[j];
        }
        hd[i * N_COEFFS + i] += 1e-10;
    }
    let fd: Vec<f64> = (0..N_COEFFS).map(|i| f[i] * s[i]).collect();

    // a2 ≤ 1−ε, a1 − a2 ≤ 1−ε, −a1 − a2 ≤ 1−ε, −(b_j1 + b_j2) ≤ −ε_dc
    let mut a_in = vec![0.0; 6 * N_COEFFS];
    let mut b_in = vec![0.0; 6];
    let mut set = |r: usize, c: usize, v: f64| a_in[r * N_COEFFS + c] = v * s[c];
    set(0, 1, 1.0);
    set(1, 0, 1.0);
    set(1, 1, -1.0);
    set(2, 0, -1.0);
    set(2, 1, -1.0);
    for r in 0..3 {
        b_in[r] = 1.0 - FIT_EPS;
    }
    for j in 0..3 {
        set(3 + j, 2 + 2 * j, -1.0);
        set(3 + j, 3 + 2 * j, -1.0);
        b_in[3 + j] = -DC_FIT_EPS;
    }
    let (z, active) = enumerate_qp(
        &DMatrix::from_row_slice(N_COEFFS, N_COEFFS, &hd),
        &DVector::from_vec(fd),
        &DMatrix::from_row_slice(6, N_COEFFS, &a_in),
        &DVector::from_vec(b_in),
    )
    .ok_or(SysidError::NoFeasibleFit)?;
    let mut theta = [0.0; N_COEFFS];
    for i in 0..N_COEFFS {
        theta[i] = z[i] * s[i];
    }
    let repaired = repair(&mut theta);

    let (_, _, objective) = disturbance_at(&phi, &yp, &ldl, lambda, &theta);

    // disturbance on the raw data at the fitted coefficients
    let raw_phi: Vec<[f64; N_COEFFS]> = (2..n).map(|k| regressor(data, k)).collect();
    let raw_y = &data.y[2..];
    let (resid, e, _) = disturbance_at(&raw_phi, raw_y, &smoother(n - 2, lambda)?, lambda, &theta);

    let g = theta[2] + theta[3];
    let w_bar = pad_disturbance(&e, g);

    let model = ThermalModel {
        a: [theta[0], theta[1]],
        b: [[theta[2], theta[3]], [theta[4], theta[5]], [theta[6], theta[7]]],
        g_dist: g,
        fit: FitInfo {
            samples: n,
            lambda,
            objective,
            rms_equation_error: (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt(),
            active_constraints: active,
            repaired,
        },
    };
    debug_assert!(model.is_certified());
    Ok((model, DisturbanceEstimate { w_bar }))
}
