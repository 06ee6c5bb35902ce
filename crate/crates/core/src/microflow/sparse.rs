//! Fixed-pattern compressed-column storage and a reusable sparse LU.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::MatMut;

use super::FlowError;

/// Square sparsity pattern shared by every operator of one discretisation.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl Pattern {
    /// Builds the pattern from `(row, col)` pairs; duplicates are merged and
    /// the diagonal is always present.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for (r, c) in entries {
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut col in cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(&col);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Storage position of entry `(row, col)`.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.nnz()]
    }

    /// `y = A x`.
    pub fn mul(&self, vals: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_add(vals, x, 1.0, &mut y);
        y
    }

    /// `y += s A x`.
    pub fn mul_add(&self, vals: &[f64], x: &[f64], s: f64, y: &mut [f64]) {
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let sx = s * xj;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += vals[k] * sx;
            }
        }
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }
}

/// Sparse LU whose symbolic analysis is computed once per pattern.
#[derive(Debug, Clone)]
pub struct Factorizer {
    symbolic: SymbolicLu<usize>,
}

/// Numeric factors of one matrix.
#[derive(Debug, Clone)]
pub struct Factors {
    lu: Lu<usize, f64>,
}

impl Factorizer {
    pub fn new(pattern: &Pattern) -> Result<Self, FlowError> {
        let symbolic = SymbolicLu::try_new(pattern.symbolic()).map_err(|e| FlowError::LinearSolver(format!("{e:?}")))?;
        Ok(Self { symbolic })
    }

    pub fn factor(&self, pattern: &Pattern, vals: &[f64]) -> Result<Factors, FlowError> {
        let mat = SparseColMatRef::new(pattern.symbolic(), vals);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat)
            .map_err(|e| FlowError::LinearSolver(format!("{e:?}")))?;
        Ok(Factors { lu })
    }
}

impl Factors {
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<(), FlowError> {
        let n = rhs.len();
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
        if rhs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FlowError::LinearSolver("non-finite solution (singular matrix)".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [[4, 1, 0], [1, 3, 0], [0, 2, 5]]
        let entries = [(0, 0, 4.0), (1, 0, 1.0), (0, 1, 1.0), (1, 1, 3.0), (2, 1, 2.0), (2, 2, 5.0)];
        let p = Pattern::from_entries(3, entries.iter().map(|&(r, c, _)| (r, c)));
        let mut vals = p.zeros();
        for &(r, c, v) in &entries {
            vals[p.position(r, c).unwrap()] += v;
        }
        let x = [1.0, -2.0, 0.5];
        let mut b = p.mul(&vals, &x);
        let f = Factorizer::new(&p).unwrap().factor(&p, &vals).unwrap();
        f.solve_in_place(&mut b).unwrap();
        for (a, e) in b.iter().zip(x) {
            assert!((a - e).abs() < 1e-14);
        }
        assert_eq!(p.position(2, 0), None);
    }
}
