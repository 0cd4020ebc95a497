use crate::problem::QpProblem;
use crate::sparse::inf_norm;
use crate::QpError;

/// Infinity-norm residuals of the four KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// `‖H z + f + A_eqᵀ λ + A_inᵀ μ‖∞`
    pub stationarity: f64,
    /// `‖A_eq z − b_eq‖∞`
    pub primal_eq: f64,
    /// `‖max(A_in z − b_in, 0)‖∞`
    pub primal_in: f64,
    /// `‖μ ⊙ (A_in z − b_in)‖∞`
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_eq).max(self.primal_in).max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// KKT residuals of a primal-dual triple. Rejects negative inequality multipliers.
pub fn kkt_residuals_raw(p: &QpProblem, z: &[f64], lam_eq: &[f64], mu_in: &[f64]) -> Result<KktReport, QpError> {
    if z.len() != p.n() || lam_eq.len() != p.n_eq() || mu_in.len() != p.n_in() {
        return Err(QpError::Dimension(format!(
            "solution sizes ({}, {}, {}) vs problem ({}, {}, {})",
            z.len(),
            lam_eq.len(),
            mu_in.len(),
            p.n(),
            p.n_eq(),
            p.n_in()
        )));
    }
    if let Some((index, &value)) = mu_in.iter().enumerate().find(|(_, m)| **m < 0.0 || !m.is_finite()) {
        return Err(QpError::NegativeMultiplier { index, value });
    }
    let mut grad = p.h().mul_vec(z);
    for (g, f) in grad.iter_mut().zip(p.f()) {
        *g += f;
    }
    for (g, v) in grad.iter_mut().zip(p.a_eq().tmul_vec(lam_eq)) {
        *g += v;
    }
    for (g, v) in grad.iter_mut().zip(p.a_in().tmul_vec(mu_in)) {
        *g += v;
    }
    let eq: Vec<f64> = p.a_eq().mul_vec(z).iter().zip(p.b_eq()).map(|(a, b)| a - b).collect();
    let ineq: Vec<f64> = p.a_in().mul_vec(z).iter().zip(p.b_in()).map(|(a, b)| a - b).collect();
    Ok(KktReport {
        stationarity: inf_norm(&grad),
        primal_eq: inf_norm(&eq),
        primal_in: ineq.iter().fold(0.0f64, |m, r| m.max(r.max(0.0))),
        complementarity: ineq.iter().zip(mu_in).fold(0.0f64, |m, (r, mu)| m.max((r * mu).abs())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;

    fn half_z_squared_above_one() -> QpProblem {
        // min ½z² s.t. -z ≤ -1
        QpProblem::with_inequalities(
            CsrMatrix::identity(1),
            vec![0.0],
            CsrMatrix::from_dense(1, 1, &[-1.0]),
            vec![-1.0],
        )
        .unwrap()
    }

    #[test]
    fn hand_optimal_pair_has_zero_residuals() {
        let p = half_z_squared_above_one();
        let r = kkt_residuals_raw(&p, &[1.0], &[], &[1.0]).unwrap();
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn perturbation_grows_stationarity_linearly() {
        let p = half_z_squared_above_one();
        for delta in [1e-2, 1e-4, 1e-6] {
            let r = kkt_residuals_raw(&p, &[1.0 + delta], &[], &[1.0]).unwrap();
            assert!((r.stationarity - delta).abs() < 1e-12, "{delta}: {r:?}");
        }
    }

    #[test]
    fn negative_multiplier_is_rejected() {
        let p = half_z_squared_above_one();
        assert!(matches!(
            kkt_residuals_raw(&p, &[1.0], &[], &[-0.5]),
            Err(QpError::NegativeMultiplier { index: 0, .. })
        ));
    }
}
