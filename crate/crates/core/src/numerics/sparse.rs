use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates (row, col, value) triplets; duplicates are summed on build.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, entries: Vec::new() }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Self { n_rows, n_cols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.entries.push((row, col, value));
    }

    /// Adds every entry of `m`, shifted by (row_off, col_off) and scaled.
    pub fn push_matrix(&mut self, m: &CsrMatrix, row_off: usize, col_off: usize, scale: f64) {
        for i in 0..m.n_rows {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                self.push(i + row_off, m.col_idx[k] + col_off, scale * m.values[k]);
            }
        }
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, self.entries)
    }
}

impl CsrMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &entries {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of range {n_rows}x{n_cols}");
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    /// Builds from raw CSR arrays, validating the invariants.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(Error::InvalidArgument("row pointer length".into()));
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::InvalidArgument("row pointer does not match entries".into()));
        }
        for i in 0..n_rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::InvalidArgument("row pointers not monotone".into()));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.iter().any(|&c| c >= n_cols) || cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("row {i}: columns unsorted or out of range")));
            }
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, row_ptr: vec![0; n_rows + 1], col_idx: vec![], values: vec![] }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(p) => self.values[self.row_ptr[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut count = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            count[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            count[j + 1] += count[j];
        }
        let row_ptr = count.clone();
        let mut next = count;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                let p = next[c];
                col_idx[p] = i;
                values[p] = self.values[k];
                next[c] += 1;
            }
        }
        Self { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr, col_idx, values }
    }

    /// Sparse product `self * other` (row-by-row Gustavson).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let n = other.n_cols;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.n_rows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n_rows: self.n_rows, n_cols: n, row_ptr, col_idx, values }
    }

    /// `alpha * self + beta * other`.
    pub fn add(&self, other: &CsrMatrix, alpha: f64, beta: f64) -> CsrMatrix {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n_rows {
            let (mut p, pe) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let (mut q, qe) = (other.row_ptr[i], other.row_ptr[i + 1]);
            while p < pe || q < qe {
                let cp = if p < pe { self.col_idx[p] } else { usize::MAX };
                let cq = if q < qe { other.col_idx[q] } else { usize::MAX };
                if cp == cq {
                    col_idx.push(cp);
                    values.push(alpha * self.values[p] + beta * other.values[q]);
                    p += 1;
                    q += 1;
                } else if cp < cq {
                    col_idx.push(cp);
                    values.push(alpha * self.values[p]);
                    p += 1;
                } else {
                    col_idx.push(cq);
                    values.push(beta * other.values[q]);
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_ptr, col_idx, values }
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> CsrMatrix {
        assert_eq!(d.len(), self.n_rows);
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                out.values[k] *= d[i];
            }
        }
        out
    }

    /// Keeps only the rows selected by `mask`; other rows become empty.
    pub fn select_rows(&self, mask: &[bool]) -> CsrMatrix {
        assert_eq!(mask.len(), self.n_rows);
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n_rows {
            if mask[i] {
                for (c, v) in self.row(i) {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_ptr, col_idx, values }
    }

    /// Sub-matrix on the given (sorted, unique) row and column index sets.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n_cols];
        for (p, &c) in cols.iter().enumerate() {
            map[c] = p;
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &i in rows {
            for (c, v) in self.row(i) {
                if map[c] != usize::MAX {
                    col_idx.push(map[c]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        // Column maps are monotone when `cols` is sorted, so rows stay sorted.
        CsrMatrix { n_rows: rows.len(), n_cols: cols.len(), row_ptr, col_idx, values }
    }

    /// Interleaves a 2×2 block operator [[a, b], [c, d]] acting on (re, im)
    /// pairs: unknown 2k is the real part and 2k+1 the imaginary part of node k.
    pub fn interleave_2x2(a: &CsrMatrix, b: &CsrMatrix, c: &CsrMatrix, d: &CsrMatrix) -> CsrMatrix {
        let n = a.n_rows;
        let m = a.n_cols;
        for blk in [b, c, d] {
            assert_eq!((blk.n_rows, blk.n_cols), (n, m));
        }
        let mut t = TripletBuilder::with_capacity(2 * n, 2 * m, a.nnz() + b.nnz() + c.nnz() + d.nnz());
        for (blk, ro, co) in [(a, 0, 0), (b, 0, 1), (c, 1, 0), (d, 1, 1)] {
            for i in 0..n {
                for (j, v) in blk.row(i) {
                    t.push(2 * i + ro, 2 * j + co, v);
                }
            }
        }
        t.build()
    }

    /// Real representation of the complex-linear map (re + i·im) acting on
    /// interleaved (re, im) vectors.
    pub fn complex_as_real(re: &CsrMatrix, im: &CsrMatrix) -> CsrMatrix {
        let neg_im = im.scale_rows(&vec![-1.0; im.n_rows]);
        Self::interleave_2x2(re, &neg_im, im, re)
    }

    /// Sum of each row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out[i][j] = v;
            }
        }
        out
    }

    pub(crate) fn to_faer(&self) -> Result<faer::sparse::SparseColMat<usize, f64>> {
        use faer::sparse::{SparseColMat, Triplet};
        let trip: Vec<Triplet<usize, usize, f64>> = (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &trip)
            .map_err(|e| Error::LinearSolveFailure(format!("matrix conversion: {e:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let m = b[0].len();
        let k = b.len();
        let mut c = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                for l in 0..k {
                    c[i][j] += a[i][l] * b[l][j];
                }
            }
        }
        c
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn raw_validation_rejects_unsorted() {
        assert!(CsrMatrix::from_raw(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::from_raw(1, 3, vec![0, 2], vec![1, 2], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn complex_as_real_matches_complex_product() {
        let re = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0), (0, 1, 0.5)]);
        let im = CsrMatrix::from_triplets(2, 2, vec![(0, 0, -1.0), (1, 0, 3.0)]);
        let m = CsrMatrix::complex_as_real(&re, &im);
        // x = (1 + 2i, -1 + 0.5i)
        let x = [1.0, 2.0, -1.0, 0.5];
        let y = m.mul_vec(&x);
        // row 0: (1 - i)(1 + 2i) + 0.5(-1 + 0.5i) = 3 + i - 0.5 + 0.25i
        assert!((y[0] - 2.5).abs() < 1e-14 && (y[1] - 1.25).abs() < 1e-14);
        // row 1: 3i(1 + 2i) + 2(-1 + 0.5i) = -6 + 3i - 2 + i
        assert!((y[2] + 8.0).abs() < 1e-14 && (y[3] - 4.0).abs() < 1e-14);
    }

    fn arb_matrix(n: usize, m: usize) -> impl Strategy<Value = CsrMatrix> {
        proptest::collection::vec((0..n, 0..m, -2.0f64..2.0), 0..(n * m + 1))
            .prop_map(move |t| CsrMatrix::from_triplets(n, m, t))
    }

    proptest! {
        #[test]
        fn invariants_hold(a in arb_matrix(5, 4)) {
            let rp = a.row_ptr();
            prop_assert!(rp.windows(2).all(|w| w[0] <= w[1]));
            for i in 0..5 {
                let cols: Vec<usize> = a.row(i).map(|(c, _)| c).collect();
                prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(cols.iter().all(|&c| c < 4));
            }
        }

        #[test]
        fn matmul_matches_dense(a in arb_matrix(4, 5), b in arb_matrix(5, 3)) {
            let c = a.matmul(&b).to_dense();
            let d = dense_mul(&a.to_dense(), &b.to_dense());
            for i in 0..4 { for j in 0..3 { prop_assert!((c[i][j] - d[i][j]).abs() < 1e-12); } }
        }

        #[test]
        fn add_and_transpose(a in arb_matrix(4, 3), b in arb_matrix(4, 3)) {
            let s = a.add(&b, 2.0, -1.0).to_dense();
            let (da, db) = (a.to_dense(), b.to_dense());
            let at = a.transpose().to_dense();
            for i in 0..4 { for j in 0..3 {
                prop_assert!((s[i][j] - (2.0 * da[i][j] - db[i][j])).abs() < 1e-12);
                prop_assert_eq!(at[j][i], da[i][j]);
            } }
        }
    }
}
