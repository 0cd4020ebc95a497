//! Envelope (profile) LDLᵀ factorization for symmetric matrices.
//!
//! Each row `i` stores the lower-triangle entries from its first structural
//! nonzero `first[i]` up to the diagonal. Fill-in never leaves the envelope, so
//! banded and arrowhead (dense rows last) matrices factor without growth.
//! No pivoting is performed: the matrix must be positive definite or
//! quasi-definite in the supplied ordering.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("zero or non-finite pivot {value} at row {row}")]
    BadPivot { row: usize, value: f64 },
}

#[derive(Debug, Clone)]
pub struct ProfileLdl {
    first: Vec<usize>,
    offset: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    negative_pivots: usize,
}

impl ProfileLdl {
    /// Builds the envelope from the structural pattern (either triangle is accepted).
    pub fn symbolic(n: usize, pattern: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in pattern {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f;
        }
        offset.push(total);
        Self { first, offset, lower: vec![0.0; total], diag: vec![0.0; n], negative_pivots: 0 }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Number of stored off-diagonal entries.
    pub fn envelope_size(&self) -> usize {
        self.lower.len()
    }

    pub fn clear(&mut self) {
        self.lower.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        self.negative_pivots = 0;
    }

    /// Adds `v` to entry `(i, j)`; the mirrored entry is implied.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi == lo {
            self.diag[hi] += v;
        } else {
            let f = self.first[hi];
            assert!(lo >= f, "entry ({hi},{lo}) outside the symbolic envelope");
            self.lower[self.offset[hi] + lo - f] += v;
        }
    }

    /// Factors the accumulated matrix in place.
    pub fn factor(&mut self) -> Result<(), LdlError> {
        let n = self.dim();
        self.negative_pivots = 0;
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            // u_ij = L_ij * D_j, computed left to right
            for j in fi..i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.lower[oi + j - fi];
                if start < j {
                    let ri = &self.lower[oi + start - fi..oi + j - fi];
                    let oj = self.offset[j];
                    let rj = &self.lower[oj + start - fj..oj + j - fj];
                    s -= dot(ri, rj);
                }
                self.lower[oi + j - fi] = s;
            }
            let mut d = self.diag[i];
            for j in fi..i {
                let u = self.lower[oi + j - fi];
                let l = u / self.diag[j];
                d -= u * l;
                self.lower[oi + j - fi] = l;
            }
            if !d.is_finite() || d == 0.0 {
                return Err(LdlError::BadPivot { row: i, value: d });
            }
            if d < 0.0 {
                self.negative_pivots += 1;
            }
            self.diag[i] = d;
        }
        Ok(())
    }

    pub fn negative_pivots(&self) -> usize {
        self.negative_pivots
    }

    pub fn min_pivot(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Applies `D^{-1/2} L⁻¹` in place, so `‖b‖²` becomes `bᵀ(LDLᵀ)⁻¹b`. Needs positive pivots.
    pub fn half_solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            b[i] -= dot(&self.lower[oi..oi + i - fi], &b[fi..i]);
        }
        for i in 0..n {
            b[i] /= self.diag[i].sqrt();
        }
    }

    /// Solves `L D Lᵀ x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            b[i] -= dot(&self.lower[oi..oi + i - fi], &b[fi..i]);
        }
        for i in 0..n {
            b[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            let bi = b[i];
            if bi != 0.0 {
                for (k, l) in self.lower[oi..oi + i - fi].iter().enumerate() {
                    b[fi + k] -= l * bi;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
