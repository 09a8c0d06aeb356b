//! Small dense linear-algebra helpers: a square matrix type and a growable
//! lower-triangular Cholesky factor in packed row storage.

use std::fmt;

/// Square dense matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SquareMatrix({}x{})", self.n, self.n)?;
        for i in 0..self.n.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.n.min(8)])?;
        }
        Ok(())
    }
}

/// The matrix handed to [`Cholesky::factor`] was not numerically positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

/// Lower-triangular factor `L` with `L Lᵀ = A`, stored row by row so that a
/// new trailing row can be appended without touching existing storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cholesky {
    n: usize,
    packed: Vec<f64>,
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl Cholesky {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn factor(a: &SquareMatrix) -> Result<Self, NotPositiveDefinite> {
        let mut chol = Self::empty();
        let mut col = Vec::with_capacity(a.dim());
        for i in 0..a.dim() {
            col.clear();
            col.extend((0..i).map(|j| a.get(i, j)));
            chol.push_row(&col, a.get(i, i))?;
        }
        Ok(chol)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row `i` of `L`, entries `0..=i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let o = row_offset(i);
        &self.packed[o..o + i + 1]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.packed[row_offset(i) + i]
    }

    /// Appends the factor row for a new trailing row `[cross, diag]` of `A`.
    ///
    /// `cross[j] = A[n][j]` for the existing `n` rows.
    pub fn push_row(&mut self, cross: &[f64], diag: f64) -> Result<(), NotPositiveDefinite> {
        assert_eq!(cross.len(), self.n, "cross-covariance length mismatch");
        let l = self.forward_solve(cross);
        let d2 = diag - l.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 0.0) || !d2.is_finite() {
            return Err(NotPositiveDefinite {
                pivot: self.n,
                value: d2,
            });
        }
        self.packed.extend_from_slice(&l);
        self.packed.push(d2.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Solves `L v = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut v = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s: f64 = row[..i].iter().zip(&v).map(|(l, x)| l * x).sum();
            v.push((b[i] - s) / row[i]);
        }
        v
    }

    /// Solves `Lᵀ x = v`.
    pub fn backward_solve(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut x = v.to_vec();
        for i in (0..self.n).rev() {
            x[i] /= self.diag(i);
            let xi = x[i];
            let row = self.row(i);
            for j in 0..i {
                x[j] -= row[j] * xi;
            }
        }
        x
    }

    /// Solves `A x = b` with `A = L Lᵀ`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward_solve(&self.forward_solve(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Dense `L Lᵀ`.
    pub fn reconstruct(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.n, |i, j| {
            let k = i.min(j);
            self.row(i)[..=k]
                .iter()
                .zip(&self.row(j)[..=k])
                .map(|(a, b)| a * b)
                .sum()
        })
    }
}
