use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;

use super::{SubsystemLayout, C64};

/// Entries with magnitude at or below this are dropped by [`Operator::prune`].
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Square sparse complex matrix in compressed-row form.
///
/// Column indices inside a row are kept sorted and unique, so two operators
/// with the same entries compare equal regardless of how they were built.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
    layout: Option<SubsystemLayout>,
}

impl Operator {
    /// Builds an operator from `(row, col, value)` triplets. Duplicates are
    /// summed and the result is pruned.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut trip: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &trip {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
        }
        trip.sort_by_key(|t| (t.0, t.1));

        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<C64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            indptr[r + 1] += indptr[r];
        }
        let mut op = Operator {
            dim,
            indptr,
            indices,
            values,
            layout: None,
        };
        op.prune(PRUNE_THRESHOLD);
        op
    }

    pub fn zeros(dim: usize) -> Self {
        Operator {
            dim,
            indptr: vec![0; dim + 1],
            indices: Vec::new(),
            values: Vec::new(),
            layout: None,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Operator::from_triplets(dim, (0..dim).map(|i| (i, i, C64::new(1.0, 0.0))))
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Operator::from_triplets(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i, i, v)),
        )
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator must be square");
        let n = m.nrows();
        let trip = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m[(i, j)]));
        Operator::from_triplets(n, trip)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn layout(&self) -> Option<&SubsystemLayout> {
        self.layout.as_ref()
    }

    pub fn with_layout(mut self, layout: SubsystemLayout) -> Self {
        debug_assert_eq!(layout.total_dim(), self.dim);
        self.layout = Some(layout);
        self
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let (lo, hi) = (self.indptr[row], self.indptr[row + 1]);
        match self.indices[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |p| (r, self.indices[p], self.values[p]))
        })
    }

    pub(crate) fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub(crate) fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    /// Drops entries with `|v| <= threshold`.
    pub fn prune(&mut self, threshold: f64) {
        let mut w = 0;
        let mut new_ptr = vec![0usize; self.dim + 1];
        for r in 0..self.dim {
            for p in self.indptr[r]..self.indptr[r + 1] {
                if self.values[p].norm() > threshold {
                    self.indices[w] = self.indices[p];
                    self.values[w] = self.values[p];
                    w += 1;
                }
            }
            new_ptr[r + 1] = w;
        }
        self.indices.truncate(w);
        self.values.truncate(w);
        self.indptr = new_ptr;
    }

    pub fn dagger(&self) -> Self {
        let mut op = Operator::from_triplets(self.dim, self.iter().map(|(i, j, v)| (j, i, v.conj())));
        op.layout = self.layout.clone();
        op
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut op = self.clone();
        op.values.iter_mut().for_each(|v| *v *= c);
        op.prune(PRUNE_THRESHOLD);
        op
    }

    pub fn matmul(&self, rhs: &Operator) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in product");
        let n = self.dim;
        let mut acc = vec![C64::new(0.0, 0.0); n];
        let mut touched = vec![false; n];
        let mut cols = Vec::new();
        let mut trip = Vec::new();
        for r in 0..n {
            let (ci, cv) = self.row(r);
            for (&k, &a) in ci.iter().zip(cv) {
                let (ri, rv) = rhs.row(k);
                for (&c, &b) in ri.iter().zip(rv) {
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &cols {
                trip.push((r, c, acc[c]));
                acc[c] = C64::new(0.0, 0.0);
                touched[c] = false;
            }
            cols.clear();
        }
        let mut op = Operator::from_triplets(n, trip);
        op.layout = self.layout.clone().or_else(|| rhs.layout.clone());
        op
    }

    fn combine(&self, rhs: &Operator, sign: f64) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in sum");
        let trip = self
            .iter()
            .chain(rhs.iter().map(|(i, j, v)| (i, j, v * sign)));
        let mut op = Operator::from_triplets(self.dim, trip);
        op.layout = self.layout.clone().or_else(|| rhs.layout.clone());
        op
    }

    /// Tensor product `self ⊗ rhs` with `self` as the slower-varying index.
    pub fn kron(&self, rhs: &Operator) -> Self {
        let m = rhs.dim;
        let trip = self.iter().flat_map(|(i, j, a)| {
            rhs.iter().map(move |(k, l, b)| (i * m + k, j * m + l, a * b))
        });
        Operator::from_triplets(self.dim * m, trip)
    }

    pub fn commutator(&self, rhs: &Operator) -> Self {
        &self.matmul(rhs) - &rhs.matmul(self)
    }

    /// Applies the operator to a state vector.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                let (ci, cv) = self.row(r);
                ci.iter().zip(cv).map(|(&c, &a)| a * v[c]).sum()
            })
            .collect()
    }

    /// `self · x` for a dense square matrix `x`.
    pub fn mul_dense(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.dim, x.ncols());
        self.mul_dense_into(x, &mut out);
        out
    }

    pub(crate) fn mul_dense_into(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = self.dim;
        assert_eq!(x.nrows(), n);
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for (xcol, ocol) in xs.chunks_exact(n).zip(os.chunks_exact_mut(n)) {
            for (r, o) in ocol.iter_mut().enumerate() {
                let (ci, cv) = self.row(r);
                let mut acc = C64::new(0.0, 0.0);
                for (&c, &a) in ci.iter().zip(cv) {
                    acc += a * xcol[c];
                }
                *o = acc;
            }
        }
    }

    /// `x · self` for a dense square matrix `x`.
    pub fn dense_mul(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(x.nrows(), self.dim);
        self.dense_mul_acc(x, C64::new(1.0, 0.0), &mut out);
        out
    }

    /// `out += scale · x · self`. Columns of `x` are combined with contiguous
    /// axpy loops, which is the fast direction for column-major storage.
    pub(crate) fn dense_mul_acc(&self, x: &DMatrix<C64>, scale: C64, out: &mut DMatrix<C64>) {
        let n = x.nrows();
        assert_eq!(x.ncols(), self.dim);
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..self.dim {
            let xcol = &xs[j * n..(j + 1) * n];
            let (ci, cv) = self.row(j);
            for (&k, &a) in ci.iter().zip(cv) {
                let f = a * scale;
                let ocol = &mut os[k * n..(k + 1) * n];
                for (o, &xv) in ocol.iter_mut().zip(xcol) {
                    *o += f * xv;
                }
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry magnitude of `self - self†`.
    pub fn hermiticity_error(&self) -> f64 {
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.combine(rhs, -1.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.matmul(rhs)
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale(C64::new(rhs, 0.0))
    }
}
