use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::ldl::ProfileLdl;
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::QpError;

/// Convex quadratic program
///
/// ```text
/// minimize   ½ zᵀ H z + fᵀ z
/// subject to A_eq z = b_eq
///            A_in z ≤ b_in
/// ```
///
/// `H` is stored with both triangles and must be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: CsrMatrix,
    f: Vec<f64>,
    a_eq: CsrMatrix,
    b_eq: Vec<f64>,
    a_in: CsrMatrix,
    b_in: Vec<f64>,
}

/// Relative diagonal shift applied before the PSD test.
pub const PSD_SHIFT: f64 = 1e-9;

impl QpProblem {
    pub fn new(
        h: CsrMatrix,
        f: Vec<f64>,
        a_eq: CsrMatrix,
        b_eq: Vec<f64>,
        a_in: CsrMatrix,
        b_in: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = f.len();
        let dims_ok = h.nrows() == n
            && h.ncols() == n
            && a_eq.ncols() == n
            && a_in.ncols() == n
            && a_eq.nrows() == b_eq.len()
            && a_in.nrows() == b_in.len();
        if !dims_ok {
            return Err(QpError::Dimension(format!(
                "h {}x{}, f {}, a_eq {}x{}, b_eq {}, a_in {}x{}, b_in {}",
                h.nrows(),
                h.ncols(),
                n,
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len(),
                a_in.nrows(),
                a_in.ncols(),
                b_in.len()
            )));
        }
        let finite = f.iter().chain(&b_eq).chain(&b_in).all(|v| v.is_finite())
            && [&h, &a_eq, &a_in].iter().all(|m| m.triplets().all(|(_, _, v)| v.is_finite()));
        if !finite {
            return Err(QpError::NonFinite);
        }
        let scale = h.max_abs();
        if !h.is_symmetric(1e-12 * scale.max(1.0)) {
            return Err(QpError::NotSymmetric);
        }
        check_psd(&h)?;
        Ok(Self { h, f, a_eq, b_eq, a_in, b_in })
    }

    /// Problem with no equality rows.
    pub fn with_inequalities(h: CsrMatrix, f: Vec<f64>, a_in: CsrMatrix, b_in: Vec<f64>) -> Result<Self, QpError> {
        let n = f.len();
        Self::new(h, f, CsrMatrix::zeros(0, n), Vec::new(), a_in, b_in)
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_in(&self) -> usize {
        self.b_in.len()
    }

    pub fn h(&self) -> &CsrMatrix {
        &self.h
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn a_eq(&self) -> &CsrMatrix {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &[f64] {
        &self.b_eq
    }

    pub fn a_in(&self) -> &CsrMatrix {
        &self.a_in
    }

    pub fn b_in(&self) -> &[f64] {
        &self.b_in
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let hz = self.h.mul_vec(z);
        z.iter().zip(&hz).map(|(a, b)| 0.5 * a * b).sum::<f64>() + z.iter().zip(&self.f).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Re-expresses the problem in `w = z - offset`. Returns the problem in `w`
    /// and the constant dropped from its objective.
    pub fn shifted(&self, offset: &[f64]) -> (QpProblem, f64) {
        assert_eq!(offset.len(), self.n());
        let ho = self.h.mul_vec(offset);
        let f = self.f.iter().zip(&ho).map(|(a, b)| a + b).collect();
        let constant = self.objective(offset);
        let shift_rhs = |a: &CsrMatrix, b: &[f64]| -> Vec<f64> {
            let ao = a.mul_vec(offset);
            b.iter().zip(&ao).map(|(b, a)| b - a).collect()
        };
        let p = QpProblem {
            h: self.h.clone(),
            f,
            a_eq: self.a_eq.clone(),
            b_eq: shift_rhs(&self.a_eq, &self.b_eq),
            a_in: self.a_in.clone(),
            b_in: shift_rhs(&self.a_in, &self.b_in),
        };
        (p, constant)
    }

    /// Writes the problem in the plain-text dump format (see crate docs).
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "qp-dump v1");
        let _ = writeln!(s, "dims {} {} {}", self.n(), self.n_eq(), self.n_in());
        let mat = |s: &mut String, tag: &str, m: &CsrMatrix| {
            let _ = writeln!(s, "{tag} {}", m.nnz());
            for (r, c, v) in m.triplets() {
                let _ = writeln!(s, "{r} {c} {v:e}");
            }
        };
        let vec = |s: &mut String, tag: &str, v: &[f64]| {
            let _ = writeln!(s, "{tag} {}", v.len());
            for x in v {
                let _ = writeln!(s, "{x:e}");
            }
        };
        mat(&mut s, "h", &self.h);
        vec(&mut s, "f", &self.f);
        mat(&mut s, "a_eq", &self.a_eq);
        vec(&mut s, "b_eq", &self.b_eq);
        mat(&mut s, "a_in", &self.a_in);
        vec(&mut s, "b_in", &self.b_in);
        out.write_all(s.as_bytes())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, QpError> {
        let mut cur = DumpCursor::new(input)?;
        let header = cur.next_line("header")?;
        if header != ["qp-dump", "v1"] {
            return Err(cur.err("missing `qp-dump v1` header"));
        }
        let dims = cur.next_line("dims")?;
        if dims.len() != 4 || dims[0] != "dims" {
            return Err(cur.err("expected `dims n n_eq n_in`"));
        }
        let n = cur.index(&dims[1])?;
        let m_eq = cur.index(&dims[2])?;
        let m_in = cur.index(&dims[3])?;
        let h = cur.matrix("h", n, n)?;
        let f = cur.vector("f", n)?;
        let a_eq = cur.matrix("a_eq", m_eq, n)?;
        let b_eq = cur.vector("b_eq", m_eq)?;
        let a_in = cur.matrix("a_in", m_in, n)?;
        let b_in = cur.vector("b_in", m_in)?;
        QpProblem::new(h, f, a_eq, b_eq, a_in, b_in)
    }
}

struct DumpCursor {
    lines: Vec<(usize, Vec<String>)>,
    pos: usize,
    line_no: usize,
}

impl DumpCursor {
    fn new<R: BufRead>(input: R) -> Result<Self, QpError> {
        let mut lines = Vec::new();
        for (i, l) in input.lines().enumerate() {
            let l = l.map_err(|e| QpError::Parse { line: i + 1, msg: e.to_string() })?;
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            lines.push((i + 1, t.split_whitespace().map(str::to_owned).collect()));
        }
        Ok(Self { lines, pos: 0, line_no: 0 })
    }

    fn err(&self, msg: &str) -> QpError {
        QpError::Parse { line: self.line_no, msg: msg.to_owned() }
    }

    fn next_line(&mut self, expect: &str) -> Result<Vec<String>, QpError> {
        let (no, toks) = self
            .lines
            .get(self.pos)
            .cloned()
            .ok_or_else(|| QpError::Parse { line: self.line_no, msg: format!("unexpected end of input, expected {expect}") })?;
        self.pos += 1;
        self.line_no = no;
        Ok(toks)
    }

    fn index(&self, s: &str) -> Result<usize, QpError> {
        s.parse::<usize>().map_err(|e| self.err(&format!("{s:?}: {e}")))
    }

    fn number(&self, s: &str) -> Result<f64, QpError> {
        s.parse::<f64>().map_err(|e| self.err(&format!("{s:?}: {e}")))
    }

    fn section(&mut self, tag: &str) -> Result<usize, QpError> {
        let head = self.next_line(tag)?;
        if head.len() != 2 || head[0] != tag {
            return Err(self.err(&format!("expected `{tag} <count>`")));
        }
        self.index(&head[1])
    }

    fn matrix(&mut self, tag: &str, rows: usize, cols: usize) -> Result<CsrMatrix, QpError> {
        let nnz = self.section(tag)?;
        let mut b = TripletBuilder::new(rows, cols);
        for _ in 0..nnz {
            let t = self.next_line("triplet")?;
            if t.len() != 3 {
                return Err(self.err("expected `row col value`"));
            }
            let (r, c) = (self.index(&t[0])?, self.index(&t[1])?);
            if r >= rows || c >= cols {
                return Err(self.err(&format!("index ({r},{c}) out of range")));
            }
            let v = self.number(&t[2])?;
            b.push(r, c, v);
        }
        Ok(b.build())
    }

    fn vector(&mut self, tag: &str, len: usize) -> Result<Vec<f64>, QpError> {
        let count = self.section(tag)?;
        if count != len {
            return Err(self.err(&format!("{tag} has {count} entries, expected {len}")));
        }
        (0..len)
            .map(|_| {
                let t = self.next_line("value")?;
                match t.as_slice() {
                    [v] => self.number(v),
                    _ => Err(self.err("expected a single value")),
                }
            })
            .collect()
    }
}

fn check_psd(h: &CsrMatrix) -> Result<(), QpError> {
    let scale = h.max_abs();
    if scale == 0.0 {
        return Ok(());
    }
    let n = h.nrows();
    let mut ldl = ProfileLdl::symbolic(n, h.triplets().map(|(r, c, _)| (r, c)));
    for (r, c, v) in h.triplets() {
        if r >= c {
            ldl.add(r, c, v);
        }
    }
    for i in 0..n {
        ldl.add(i, i, PSD_SHIFT * scale);
    }
    match ldl.factor() {
        Ok(()) if ldl.negative_pivots() == 0 => Ok(()),
        Ok(()) => Err(QpError::NotPsd { min_pivot: ldl.min_pivot() }),
        Err(crate::ldl::LdlError::BadPivot { value, .. }) => Err(QpError::NotPsd { min_pivot: value }),
    }
}
