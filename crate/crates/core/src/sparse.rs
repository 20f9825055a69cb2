//! Minimal CSR matrices for operator assembly, and a sparse LU wrapper that
//! reuses the symbolic factorisation across Newton steps with a fixed
//! sparsity pattern.

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::lu::partial_pivoting::factor::PartialPivLuParams;
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Spec};

use crate::error::SolveError;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Duplicate entries are summed; explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `out += s·Aᵀy`.
    pub fn matvec_t_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += scale * v * yr;
            }
        }
    }

    #[cfg(test)]
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.matvec_t_add(y, 1.0, &mut out);
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Sparse product `self · rhs`.
    pub fn mul(&self, rhs: &Csr) -> Self {
        assert_eq!(self.ncols, rhs.nrows);
        let mut acc = vec![0.0; rhs.ncols];
        let mut mark = vec![usize::MAX; rhs.ncols];
        let mut touched = Vec::new();
        let mut trips = Vec::new();
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                trips.push((r, c, acc[c]));
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, rhs.ncols, trips)
    }

    pub fn add(&self, rhs: &Csr) -> Self {
        assert_eq!((self.nrows, self.ncols), (rhs.nrows, rhs.ncols));
        Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(rhs.triplets()).collect())
    }

    /// Assembles a block matrix; `None` blocks are zero.
    pub fn block(rows: &[usize], cols: &[usize], blocks: &[&[Option<&Csr>]]) -> Self {
        let mut trips = Vec::new();
        let mut r0 = 0;
        for (bi, brow) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (bj, blk) in brow.iter().enumerate() {
                if let Some(m) = blk {
                    assert_eq!((m.nrows, m.ncols), (rows[bi], cols[bj]));
                    trips.extend(m.triplets().map(|(r, c, v)| (r + r0, c + c0, v)));
                }
                c0 += cols[bj];
            }
            r0 += rows[bi];
        }
        Self::from_triplets(rows.iter().sum(), cols.iter().sum(), trips)
    }

    pub fn block_diag(blocks: &[&Csr]) -> Self {
        let rows: Vec<usize> = blocks.iter().map(|b| b.nrows).collect();
        let cols: Vec<usize> = blocks.iter().map(|b| b.ncols).collect();
        let grid: Vec<Vec<Option<&Csr>>> = (0..blocks.len())
            .map(|i| (0..blocks.len()).map(|j| (i == j).then_some(blocks[i])).collect())
            .collect();
        let refs: Vec<&[Option<&Csr>]> = grid.iter().map(|r| r.as_slice()).collect();
        Self::block(&rows, &cols, &refs)
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }
}

/// Square sparse LU with a frozen sparsity pattern.
///
/// Entries are supplied as a value slice aligned with the `(row, col)` index
/// list given at construction; duplicates are summed.
pub struct PatternLu {
    symbolic_mat: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    symbolic_lu: SymbolicLu<usize>,
}

impl PatternLu {
    pub fn new(n: usize, pattern: &[(usize, usize)]) -> Result<Self, SolveError> {
        let idx: Vec<Pair<usize, usize>> = pattern.iter().map(|&(r, c)| Pair::new(r, c)).collect();
        let (symbolic_mat, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &idx)
            .map_err(|e| SolveError::LinearSolveFailure(format!("pattern: {e:?}")))?;
        let symbolic_lu = factorize_symbolic_lu(symbolic_mat.as_ref(), LuSymbolicParams::default())
            .map_err(|e| SolveError::LinearSolveFailure(format!("symbolic LU: {e:?}")))?;
        Ok(Self {
            symbolic_mat,
            argsort,
            symbolic_lu,
        })
    }

    pub fn factor(&self, values: &[f64]) -> Result<Factored<'_>, SolveError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::LinearSolveFailure("non-finite matrix entry".into()));
        }
        let mat = SparseColMat::new_from_argsort(self.symbolic_mat.clone(), &self.argsort, values)
            .map_err(|e| SolveError::LinearSolveFailure(format!("assembly: {e:?}")))?;
        let params: Spec<PartialPivLuParams, f64> = Default::default();
        let mut buf = MemBuffer::new(self.symbolic_lu.factorize_numeric_lu_scratch::<f64>(Par::Seq, params));
        let mut numeric = NumericLu::new();
        self.symbolic_lu
            .factorize_numeric_lu(&mut numeric, mat.as_ref(), Par::Seq, MemStack::new(&mut buf), params)
            .map_err(|e| SolveError::LinearSolveFailure(format!("numeric LU: {e:?}")))?;
        Ok(Factored {
            symbolic: &self.symbolic_lu,
            numeric,
            mat,
        })
    }
}

pub struct Factored<'a> {
    symbolic: &'a SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    mat: SparseColMat<usize, f64>,
}

impl Factored<'_> {
    fn run(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>, SolveError> {
        let n = rhs.len();
        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let lu = LuRef::new_unchecked(self.symbolic, &self.numeric);
        let mut buf = MemBuffer::new(StackReq::any_of(&[
            self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq),
            self.symbolic.solve_transpose_in_place_scratch::<f64>(1, Par::Seq),
        ]));
        let stack = MemStack::new(&mut buf);
        if transpose {
            lu.solve_transpose_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, stack);
        } else {
            lu.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, stack);
        }
        let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::LinearSolveFailure("non-finite solution (singular system)".into()));
        }
        Ok(out)
    }

    fn residual(&self, x: &[f64], rhs: &[f64], transpose: bool) -> Vec<f64> {
        let mut r = rhs.to_vec();
        let m = self.mat.as_ref();
        let sym = m.symbolic();
        let vals = m.val();
        for c in 0..sym.ncols() {
            let span = sym.col_range(c);
            for (k, &row) in sym.row_idx()[span.clone()].iter().enumerate() {
                let v = vals[span.start + k];
                if transpose {
                    r[c] -= v * x[row];
                } else {
                    r[row] -= v * x[c];
                }
            }
        }
        r
    }

    /// Solves `A x = b` with one step of iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        self.refined(rhs, false)
    }

    /// Solves `Aᵀ x = b` with one step of iterative refinement.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        self.refined(rhs, true)
    }

    fn refined(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>, SolveError> {
        let mut x = self.run(rhs, transpose)?;
        let r = self.residual(&x, rhs, transpose);
        let dx = self.run(&r, transpose)?;
        x.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        Ok(x)
    }
}
