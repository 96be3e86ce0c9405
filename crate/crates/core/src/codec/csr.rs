use crate::error::{Error, Result};

/// Compressed sparse row storage: non-zero values `a`, cumulative row counts
/// `ir` (length `rows + 1`) and column indices `ic`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T = f64> {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<T>,
    pub ir: Vec<usize>,
    pub ic: Vec<usize>,
}

impl<T> CsrMatrix<T> {
    pub fn nonzeros(&self) -> usize {
        self.a.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.ir[r]..self.ir[r + 1];
        (&self.ic[span.clone()], &self.a[span])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Corrupt(format!("CSR matrix: {what}")));
        if self.ir.len() != self.rows + 1 {
            return bad(format!("IR has {} entries for {} rows", self.ir.len(), self.rows));
        }
        if self.ir[0] != 0 || self.ir.windows(2).any(|w| w[0] > w[1]) {
            return bad("IR must start at 0 and be non-decreasing".into());
        }
        if self.ir[self.rows] != self.a.len() || self.a.len() != self.ic.len() {
            return bad(format!(
                "IR ends at {} but A has {} and IC {} entries",
                self.ir[self.rows],
                self.a.len(),
                self.ic.len()
            ));
        }
        for r in 0..self.rows {
            let cols = &self.ic[self.ir[r]..self.ir[r + 1]];
            if cols.iter().any(|c| *c >= self.cols) || cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {r} has out-of-range or unsorted columns"));
            }
        }
        Ok(())
    }
}

/// Row-major dense matrix to CSR. Entries equal to `T::default()` are zeros.
pub fn to_csr<T: Copy + Default + PartialEq>(dense: &[T], rows: usize, cols: usize) -> Result<CsrMatrix<T>> {
    if dense.len() != rows * cols {
        return Err(Error::Input(format!(
            "{} values do not form a {rows}x{cols} matrix",
            dense.len()
        )));
    }
    let zero = T::default();
    let mut m = CsrMatrix {
        rows,
        cols,
        a: Vec::new(),
        ir: Vec::with_capacity(rows + 1),
        ic: Vec::new(),
    };
    m.ir.push(0);
    for r in 0..rows {
        for (c, &v) in dense[r * cols..(r + 1) * cols].iter().enumerate() {
            if v != zero {
                m.a.push(v);
                m.ic.push(c);
            }
        }
        m.ir.push(m.a.len());
    }
    Ok(m)
}

pub fn from_csr<T: Copy + Default>(m: &CsrMatrix<T>) -> Result<Vec<T>> {
    m.validate()?;
    let mut dense = vec![T::default(); m.rows * m.cols];
    for r in 0..m.rows {
        let (cols, vals) = m.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            dense[r * m.cols + c] = v;
        }
    }
    Ok(dense)
}

/// `|W| / (2|W≠0| + K + 1)`: the rate of plain CSR storage when every entry
/// of A, IR and IC takes as many bits as a dense weight.
pub fn naive_rate<T>(m: &CsrMatrix<T>) -> f64 {
    (m.rows * m.cols) as f64 / (2 * m.nonzeros() + m.rows + 1) as f64
}
