//! Operator-splitting solver.
//!
//! The iteration follows the OSQP splitting on `l ≤ A z ≤ u` with
//! `A = [A_eq; A_in]`: a reduced linear system `(H + σI + Aᵀ R A)` is factored
//! once per penalty value, the constraint copy is projected onto the box, and
//! duals take a relaxed ascent step. Data are Ruiz-equilibrated first. Once the
//! residuals are moderately small, a primal active-set refinement started from
//! the splitting iterate solves the reduced KKT system exactly; `Solved` is only
//! reported when the unscaled KKT residuals are within tolerance.

use crate::kkt::{kkt_residuals_raw, KktReport};
use crate::ldl::ProfileLdl;
use crate::problem::QpProblem;
use crate::sparse::{inf_norm, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIter,
    /// A primal infeasibility certificate was found.
    Infeasible,
    /// A dual infeasibility (unbounded direction) certificate was found.
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    /// Absolute tolerance on every KKT residual for `Solved`.
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub check_every: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    pub eps_infeasible: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            check_every: 10,
            scaling_iters: 10,
            polish: true,
            eps_infeasible: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z_star: Vec<f64>,
    pub lam_eq: Vec<f64>,
    /// Non-negative inequality multipliers.
    pub mu_in: Vec<f64>,
    pub status: QpStatus,
    pub kkt: KktReport,
    pub iterations: usize,
    pub polished: bool,
    /// Final step size of the splitting, reused by warm starts.
    pub rho: f64,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// Residuals of a solution against its problem.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> Result<KktReport, crate::QpError> {
    kkt_residuals_raw(p, &s.z_star, &s.lam_eq, &s.mu_in)
}

struct Scaled {
    h: CsrMatrix,
    f: Vec<f64>,
    a: CsrMatrix,
    lo: Vec<f64>,
    hi: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
    n_eq: usize,
}

fn equilibrate(p: &QpProblem, iters: usize) -> Scaled {
    let n = p.n();
    let mut h = p.h().clone();
    let mut a = p.a_eq().vstack(p.a_in());
    let m = a.nrows();
    let mut f = p.f().to_vec();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.clamp(1e-4, 1e4) };
    for _ in 0..iters {
        let hn = h.col_inf_norms();
        let an = a.col_inf_norms();
        let dd: Vec<f64> = (0..n).map(|j| 1.0 / clamp(hn[j].max(an[j])).sqrt()).collect();
        let ee: Vec<f64> = a.row_inf_norms().into_iter().map(|r| 1.0 / clamp(r).sqrt()).collect();
        h.scale(&dd, &dd);
        a.scale(&ee, &dd);
        for j in 0..n {
            f[j] *= dd[j];
            d[j] *= dd[j];
        }
        for i in 0..m {
            e[i] *= ee[i];
        }
        let hn = h.col_inf_norms();
        let mean = if n > 0 { hn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / clamp(mean.max(inf_norm(&f)));
        h.scale(&vec![gamma; n], &vec![1.0; n]);
        f.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    let n_eq = p.n_eq();
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    for (i, &b) in p.b_eq().iter().enumerate() {
        lo.push(b * e[i]);
        hi.push(b * e[i]);
    }
    for (i, &b) in p.b_in().iter().enumerate() {
        lo.push(f64::NEG_INFINITY);
        hi.push(b * e[n_eq + i]);
    }
    Scaled { h, f, a, lo, hi, d, e, c, n_eq }
}

/// Reduced system `H + σI + Aᵀ diag(ρ) A` with cached envelope.
struct Reduced {
    ldl: ProfileLdl,
}

impl Reduced {
    fn new(s: &Scaled) -> Self {
        let n = s.f.len();
        let mut pattern: Vec<(usize, usize)> = s.h.triplets().map(|(r, c, _)| (r, c)).collect();
        for r in 0..s.a.nrows() {
            let cols: Vec<usize> = s.a.row(r).map(|(c, _)| c).collect();
            for (k, &ci) in cols.iter().enumerate() {
                for &cj in &cols[..k] {
                    pattern.push((ci, cj));
                }
            }
        }
        Self { ldl: ProfileLdl::symbolic(n, pattern) }
    }

    fn factor(&mut self, s: &Scaled, sigma: f64, rho: &[f64]) -> bool {
        self.ldl.clear();
        for (r, c, v) in s.h.triplets() {
            if r >= c {
                self.ldl.add(r, c, v);
            }
        }
        for i in 0..s.f.len() {
            self.ldl.add(i, i, sigma);
        }
        for (r, &rr) in rho.iter().enumerate() {
            let row: Vec<(usize, f64)> = s.a.row(r).collect();
            for (k, &(ci, vi)) in row.iter().enumerate() {
                self.ldl.add(ci, ci, rr * vi * vi);
                for &(cj, vj) in &row[..k] {
                    self.ldl.add(ci, cj, rr * vi * vj);
                }
            }
        }
        self.ldl.factor().is_ok()
    }
}

fn rho_vector(rho: f64, m: usize, n_eq: usize, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| if i < n_eq || lo[i] == hi[i] { 1e3 * rho } else { rho })
        .collect()
}

pub fn qp_solve(p: &QpProblem, warm: Option<&QpSolution>, settings: &QpSettings) -> QpSolution {
    let n = p.n();
    let n_eq = p.n_eq();
    let s = equilibrate(p, settings.scaling_iters);
    let m = s.a.nrows();

    let mut rho = warm.map(|w| w.rho).filter(|r| r.is_finite() && *r > 0.0).unwrap_or(settings.rho);
    let mut rho_vec = rho_vector(rho, m, n_eq, &s.lo, &s.hi);
    let mut reduced = Reduced::new(&s);
    let mut sigma = settings.sigma;
    while !reduced.factor(&s, sigma, &rho_vec) {
        // only reachable through round-off on huge penalties
        sigma *= 10.0;
        if sigma > 1.0 {
            break;
        }
    }

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    if let Some(w) = warm.filter(|w| w.z_star.len() == n && w.lam_eq.len() == n_eq && w.mu_in.len() == p.n_in()) {
        for j in 0..n {
            x[j] = w.z_star[j] / s.d[j];
        }
        for (i, v) in w.lam_eq.iter().chain(&w.mu_in).enumerate() {
            y[i] = v * s.c / s.e[i];
        }
    }
    let mut z: Vec<f64> = s.a.mul_vec(&x).iter().enumerate().map(|(i, v)| v.clamp(s.lo[i], s.hi[i])).collect();

    let eps = settings.tol;
    let mut polish_gap = settings.check_every;
    let mut next_polish = 0;
    let mut best: Option<QpSolution> = None;
    let mut iter = 0;
    let mut status = QpStatus::MaxIter;
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; m];
    let mut adapt_interval = settings.check_every * 5;
    let mut next_adapt = adapt_interval;

    while iter < settings.max_iter {
        iter += 1;
        let mut rhs: Vec<f64> = (0..n).map(|j| sigma * x[j] - s.f[j]).collect();
        let w: Vec<f64> = (0..m).map(|i| rho_vec[i] * z[i] - y[i]).collect();
        for (r, v) in rhs.iter_mut().zip(s.a.tmul_vec(&w)) {
            *r += v;
        }
        reduced.ldl.solve(&mut rhs);
        let x_tilde = rhs;
        let z_tilde = s.a.mul_vec(&x_tilde);
        for j in 0..n {
            let xn = settings.alpha * x_tilde[j] + (1.0 - settings.alpha) * x[j];
            dx[j] = xn - x[j];
            x[j] = xn;
        }
        for i in 0..m {
            let relaxed = settings.alpha * z_tilde[i] + (1.0 - settings.alpha) * z[i];
            let zn = (relaxed + y[i] / rho_vec[i]).clamp(s.lo[i], s.hi[i]);
            let yn = y[i] + rho_vec[i] * (relaxed - zn);
            dy[i] = yn - y[i];
            y[i] = yn;
            z[i] = zn;
        }

        if iter % settings.check_every != 0 && iter != settings.max_iter {
            continue;
        }

        let ax = s.a.mul_vec(&x);
        let hx = s.h.mul_vec(&x);
        let aty = s.a.tmul_vec(&y);
        let (r_prim, prim_scale) = {
            let mut r = 0.0f64;
            let mut sc = 0.0f64;
            for i in 0..m {
                r = r.max(((ax[i] - z[i]) / s.e[i]).abs());
                sc = sc.max((ax[i] / s.e[i]).abs()).max((z[i] / s.e[i]).abs());
            }
            (r, sc)
        };
        let (r_dual, dual_scale) = {
            let mut r = 0.0f64;
            let (mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64);
            for j in 0..n {
                let inv = 1.0 / (s.d[j] * s.c);
                r = r.max(((hx[j] + s.f[j] + aty[j]) * inv).abs());
                s1 = s1.max((hx[j] * inv).abs());
                s2 = s2.max((aty[j] * inv).abs());
                s3 = s3.max((s.f[j] * inv).abs());
            }
            (r, s1.max(s2).max(s3))
        };

        let converged = r_prim <= eps + eps * prim_scale && r_dual <= eps + eps * dual_scale;
        let near = r_prim <= POLISH_REL * (1.0 + prim_scale) && r_dual <= POLISH_REL * (1.0 + dual_scale);
        if converged || (settings.polish && near && iter >= next_polish) {
            let mut chosen = unscale(p, &s, &x, &y, iter, rho);
            if settings.polish && (chosen.kkt.within(settings.tol) || iter >= next_polish) {
                polish_gap *= 2;
                next_polish = iter + polish_gap;
                if let Some(pol) = polish(p, &chosen, settings.tol) {
                    if pol.kkt.max() <= chosen.kkt.max() {
                        chosen = pol;
                    }
                }
            }
            if chosen.kkt.within(settings.tol) {
                chosen.status = QpStatus::Solved;
                return chosen;
            }
            if best.as_ref().is_none_or(|b| chosen.kkt.max() < b.kkt.max()) {
                best = Some(chosen);
            }
        }

        if infeasible(p, &s, &dy, settings.eps_infeasible) {
            status = QpStatus::Infeasible;
            break;
        }
        if unbounded(&s, &dx, settings.eps_infeasible) {
            status = QpStatus::Unbounded;
            break;
        }

        if settings.adaptive_rho && iter >= next_adapt {
            next_adapt = iter + adapt_interval;
            let pn = r_prim / prim_scale.max(1e-30);
            let dn = r_dual / dual_scale.max(1e-30);
            if pn > 0.0 && dn > 0.0 {
                let proposed = (rho * (pn / dn).sqrt()).clamp(1e-6, 1e6);
                if proposed > 5.0 * rho || proposed < 0.2 * rho {
                    rho = proposed;
                    // back off so the penalty cannot cycle indefinitely
                    adapt_interval *= 2;
                    rho_vec = rho_vector(rho, m, n_eq, &s.lo, &s.hi);
                    while !reduced.factor(&s, sigma, &rho_vec) && sigma < 1.0 {
                        sigma *= 10.0;
                    }
                }
            }
        }
    }

    let last = unscale(p, &s, &x, &y, iter, rho);
    let mut out = match best {
        Some(b) if b.kkt.max() < last.kkt.max() => b,
        _ => last,
    };
    out.status = status;
    out.iterations = iter;
    out
}

fn unscale(p: &QpProblem, s: &Scaled, x: &[f64], y: &[f64], iter: usize, rho: f64) -> QpSolution {
    let z_star: Vec<f64> = x.iter().zip(&s.d).map(|(v, d)| v * d).collect();
    let yu: Vec<f64> = y.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect();
    let lam_eq = yu[..s.n_eq].to_vec();
    let mu_in: Vec<f64> = yu[s.n_eq..].iter().map(|v| v.max(0.0)).collect();
    let kkt = kkt_residuals_raw(p, &z_star, &lam_eq, &mu_in).unwrap_or(KktReport {
        stationarity: f64::INFINITY,
        primal_eq: f64::INFINITY,
        primal_in: f64::INFINITY,
        complementarity: f64::INFINITY,
    });
    QpSolution { z_star, lam_eq, mu_in, status: QpStatus::MaxIter, kkt, iterations: iter, polished: false, rho }
}

fn infeasible(p: &QpProblem, s: &Scaled, dy: &[f64], eps: f64) -> bool {
    let norm = dy.iter().zip(&s.e).fold(0.0f64, |mx, (v, e)| mx.max((v * e).abs()));
    if norm <= 1e-12 {
        return false;
    }
    let mut support = 0.0;
    for (i, (&v, &e)) in dy.iter().zip(&s.e).enumerate() {
        let du = v * e;
        if i < s.n_eq {
            support += p.b_eq()[i] * du;
        } else if du < -eps * norm {
            return false;
        } else if du > 0.0 {
            support += p.b_in()[i - s.n_eq] * du;
        }
    }
    let aty = s.a.tmul_vec(dy);
    let res = aty.iter().zip(&s.d).fold(0.0f64, |mx, (v, d)| mx.max((v / d).abs()));
    res <= eps * norm && support < -eps * norm
}

fn unbounded(s: &Scaled, dx: &[f64], eps: f64) -> bool {
    let norm = dx.iter().zip(&s.d).fold(0.0f64, |mx, (v, d)| mx.max((v * d).abs()));
    if norm <= 1e-12 {
        return false;
    }
    let hdx = s.h.mul_vec(dx);
    let hres = hdx.iter().zip(&s.d).fold(0.0f64, |mx, (v, d)| mx.max((v / d).abs())) / s.c;
    let fdx: f64 = s.f.iter().zip(dx).map(|(f, v)| f * v).sum::<f64>() / s.c;
    if hres > eps * norm || fdx >= -eps * norm {
        return false;
    }
    let adx = s.a.mul_vec(dx);
    adx.iter().enumerate().all(|(i, v)| {
        let av = v / s.e[i];
        if s.lo[i] == s.hi[i] {
            av.abs() <= eps * norm
        } else {
            av <= eps * norm
        }
    })
}

/// Solves the equality-constrained problem on the guessed active set.
fn polish(p: &QpProblem, guess: &QpSolution, tol: f64) -> Option<QpSolution> {
    let slack_of = |z: &[f64]| -> Vec<f64> { p.a_in().mul_vec(z).iter().zip(p.b_in()).map(|(a, b)| b - a).collect() };
    let slack = slack_of(&guess.z_star);
    let mut active: Vec<bool> = (0..p.n_in()).map(|i| slack[i] < guess.mu_in[i]).collect();
    let mut z = guess.z_star.clone();
    // primal active-set iterations started from the splitting iterate
    for _ in 0..POLISH_ROUNDS {
        let (z_w, lam_eq, mu_signed) = solve_active(p, &active, tol)?;
        if !z_w.iter().chain(&lam_eq).chain(&mu_signed).all(|v| v.is_finite()) {
            return None;
        }
        let step: Vec<f64> = z_w.iter().zip(&z).map(|(a, b)| a - b).collect();
        let slack = slack_of(&z);
        let a_step = p.a_in().mul_vec(&step);
        let mut alpha = 1.0;
        let mut blocking = None;
        let tiny = 1e-10 * (1.0 + inf_norm(&z));
        for i in 0..p.n_in() {
            if !active[i] && a_step[i] > tiny {
                let t = slack[i].max(0.0) / a_step[i];
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        if let Some(i) = blocking {
            for (zj, sj) in z.iter_mut().zip(&step) {
                *zj += alpha * sj;
            }
            active[i] = true;
            continue;
        }
        z = z_w;
        let worst = (0..p.n_in()).filter(|&i| active[i]).min_by(|&a, &b| mu_signed[a].total_cmp(&mu_signed[b]));
        if let Some(i) = worst.filter(|&i| mu_signed[i] < -tol) {
            active[i] = false;
            continue;
        }
        let mu_in: Vec<f64> = mu_signed.iter().map(|v| v.max(0.0)).collect();
        let kkt = kkt_residuals_raw(p, &z, &lam_eq, &mu_in).ok()?;
        return Some(QpSolution {
            z_star: z,
            lam_eq,
            mu_in,
            status: QpStatus::MaxIter,
            kkt,
            iterations: guess.iterations,
            polished: true,
            rho: guess.rho,
        });
    }
    None
}

const POLISH_ROUNDS: usize = 100;
/// Relative residual level at which polishing is first attempted.
const POLISH_REL: f64 = 1e-3;

/// Solves the equality-constrained KKT system for the given active inequalities.
/// Returns the primal point, equality multipliers and signed inequality multipliers.
fn solve_active(p: &QpProblem, active: &[bool], tol: f64) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = p.n();
    let n_eq = p.n_eq();
    let active_in: Vec<usize> = (0..p.n_in()).filter(|&i| active[i]).collect();

    // rows: all equalities, then active inequalities
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::with_capacity(n_eq + active_in.len());
    for i in 0..n_eq {
        rows.push((p.a_eq().row(i).collect(), p.b_eq()[i]));
    }
    for &i in &active_in {
        rows.push((p.a_in().row(i).collect(), p.b_in()[i]));
    }
    let n_rows = rows.len();

    // Interleave each constraint row right after its last variable.
    let mut after: Vec<Vec<usize>> = vec![Vec::new(); n.max(1)];
    let mut leading: Vec<usize> = Vec::new();
    for (r, (row, _)) in rows.iter().enumerate() {
        match row.iter().map(|(c, _)| *c).max() {
            Some(c) => after[c].push(r),
            None => leading.push(r),
        }
    }
    let dim = n + n_rows;
    let mut pos_var = vec![0usize; n];
    let mut pos_row = vec![0usize; n_rows];
    let mut next = 0;
    for &r in &leading {
        pos_row[r] = next;
        next += 1;
    }
    for j in 0..n {
        pos_var[j] = next;
        next += 1;
        for &r in &after[j] {
            pos_row[r] = next;
            next += 1;
        }
    }

    let scale = p.h().max_abs().max(1.0);
    let delta = 1e-9 * scale;
    let mut pattern: Vec<(usize, usize)> = p.h().triplets().map(|(r, c, _)| (pos_var[r], pos_var[c])).collect();
    for (r, (row, _)) in rows.iter().enumerate() {
        for (c, _) in row {
            pattern.push((pos_row[r], pos_var[*c]));
        }
    }
    let mut ldl = ProfileLdl::symbolic(dim, pattern);
    for (r, c, v) in p.h().triplets() {
        if r >= c {
            ldl.add(pos_var[r], pos_var[c], v);
        }
    }
    for j in 0..n {
        ldl.add(pos_var[j], pos_var[j], delta);
    }
    for (r, (row, _)) in rows.iter().enumerate() {
        for &(c, v) in row {
            ldl.add(pos_row[r], pos_var[c], v);
        }
        ldl.add(pos_row[r], pos_row[r], -delta);
    }
    ldl.factor().ok()?;

    // exact system: [H Aᵀ; A 0] [x; ν] = [-f; b]
    let apply = |sol: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let xs: Vec<f64> = (0..n).map(|j| sol[pos_var[j]]).collect();
        let hx = p.h().mul_vec(&xs);
        for j in 0..n {
            out[pos_var[j]] = hx[j];
        }
        for (r, (row, _)) in rows.iter().enumerate() {
            let nu = sol[pos_row[r]];
            let mut ax = 0.0;
            for &(c, v) in row {
                out[pos_var[c]] += v * nu;
                ax += v * xs[c];
            }
            out[pos_row[r]] = ax;
        }
        out
    };
    let mut target = vec![0.0; dim];
    for j in 0..n {
        target[pos_var[j]] = -p.f()[j];
    }
    for (r, (_, b)) in rows.iter().enumerate() {
        target[pos_row[r]] = *b;
    }
    let mut sol = target.clone();
    ldl.solve(&mut sol);
    for _ in 0..10 {
        let k = apply(&sol);
        let mut resid: Vec<f64> = target.iter().zip(&k).map(|(t, v)| t - v).collect();
        if inf_norm(&resid) <= 1e-3 * tol {
            break;
        }
        ldl.solve(&mut resid);
        for (s, d) in sol.iter_mut().zip(&resid) {
            *s += d;
        }
    }

    let z_star: Vec<f64> = (0..n).map(|j| sol[pos_var[j]]).collect();
    let lam_eq: Vec<f64> = (0..n_eq).map(|r| sol[pos_row[r]]).collect();
    let mut mu = vec![0.0; p.n_in()];
    for (k, &i) in active_in.iter().enumerate() {
        mu[i] = sol[pos_row[n_eq + k]];
    }
    Some((z_star, lam_eq, mu))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_square_above_one() {
        let p = QpProblem::with_inequalities(
            CsrMatrix::identity(1),
            vec![0.0],
            CsrMatrix::from_dense(1, 1, &[-1.0]),
            vec![-1.0],
        )
        .unwrap();
        let s = qp_solve(&p, None, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z_star[0] - 1.0).abs() < 1e-9);
        assert!((s.mu_in[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // z ≤ -1 and -z ≤ -1
        let p = QpProblem::with_inequalities(
            CsrMatrix::identity(1),
            vec![0.0],
            CsrMatrix::from_dense(2, 1, &[1.0, -1.0]),
            vec![-1.0, -1.0],
        )
        .unwrap();
        let s = qp_solve(&p, None, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded_lp() {
        // min -z s.t. -z ≤ 0
        let p = QpProblem::with_inequalities(
            CsrMatrix::zeros(1, 1),
            vec![-1.0],
            CsrMatrix::from_dense(1, 1, &[-1.0]),
            vec![0.0],
        )
        .unwrap();
        let s = qp_solve(&p, None, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Unbounded);
    }

    #[test]
    fn zero_iteration_budget_reports_max_iter() {
        let p = QpProblem::with_inequalities(
            CsrMatrix::identity(1),
            vec![1.0],
            CsrMatrix::from_dense(1, 1, &[-1.0]),
            vec![-1.0],
        )
        .unwrap();
        let s = qp_solve(&p, None, &QpSettings { max_iter: 0, ..Default::default() });
        assert_eq!(s.status, QpStatus::MaxIter);
        assert_eq!(s.iterations, 0);
    }
}

