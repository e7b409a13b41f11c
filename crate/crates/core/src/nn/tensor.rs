use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Tensor2 {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Tensor2 {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor2> {
        if data.len() != rows * cols {
            return Err(Error::ShapeError {
                op: "from_vec",
                detail: format!("{} values for a {rows}x{cols} tensor", data.len()),
            });
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor2 {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor2 { rows, cols, data }
    }

    pub fn identity(n: usize) -> Tensor2 {
        Tensor2::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn transpose(&self) -> Tensor2 {
        Tensor2::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor2 {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    fn check(op: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeError {
                op,
                detail: detail(),
            })
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        Self::check("matmul", self.cols == other.rows, || {
            format!(
                "({}x{})·({}x{})",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        let mut out = Tensor2::zeros(self.rows, other.cols);
        let m = other.cols;
        for r in 0..self.rows {
            let dst = &mut out.data[r * m..(r + 1) * m];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * m..(k + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Tensor2) -> Result<Tensor2> {
        Self::check("matmul_t", self.cols == other.cols, || {
            format!(
                "({}x{})·({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        let mut out = Tensor2::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..other.rows {
                let b = other.row(c);
                out.data[r * other.rows + c] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        Self::check("t_matmul", self.rows == other.rows, || {
            format!(
                "({}x{})ᵀ·({}x{})",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        let m = other.cols;
        let mut out = Tensor2::zeros(self.cols, m);
        for k in 0..self.rows {
            let src = other.row(k);
            for r in 0..self.cols {
                let a = self.data[k * self.cols + r];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[r * m..(r + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_loop(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_triple_loop() {
        let a = Tensor2::from_fn(3, 4, |r, c| (r as f64 * 1.3 - c as f64 * 0.7).sin());
        let b = Tensor2::from_fn(4, 5, |r, c| (r as f64 * 0.4 + c as f64 * 1.1).cos());
        let reference = triple_loop(&a, &b);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&reference) < 1e-14);
        assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&reference) < 1e-14);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&reference) < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor2::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeError { .. })));
        assert!(Tensor2::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
