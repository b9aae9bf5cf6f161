//! Compressed sparse row storage and the banded factorizations used for the
//! spatial solves and the direct slab reference.

use std::collections::BTreeMap;
use std::io::Write;

use crate::denselin::DenseMatrix;
use crate::error::{Error, Result};

/// Real CSR matrix. Column indices are strictly increasing within each row
/// and no explicit zeros are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator; duplicate entries are summed on finalization.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<BTreeMap<usize, f64>>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        TripletBuilder {
            n_rows,
            n_cols,
            rows: vec![BTreeMap::new(); n_rows],
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n_rows && j < self.n_cols, "entry out of bounds");
        *self.rows[i].entry(j).or_insert(0.0) += v;
    }

    pub fn build(self) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in self.rows {
            for (j, v) in row {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut b = TripletBuilder::new(d.rows(), d.cols());
        for i in 0..d.rows() {
            for j in 0..d.cols() {
                if d[(i, j)] != 0.0 {
                    b.add(i, j, d[(i, j)]);
                }
            }
        }
        b.build()
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

    /// Iterator over `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "matvec input length");
        assert_eq!(y.len(), self.n_rows, "matvec output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `y += a * self * x`
    pub fn matvec_acc(&self, a: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi += a * s;
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                b.add(j, i, v);
            }
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= s;
        }
        if s == 0.0 {
            return SparseMatrix::zeros(self.n_rows, self.n_cols);
        }
        out
    }

    /// `a * self + b * other` on the union pattern.
    pub fn linear_combination(&self, a: f64, other: &SparseMatrix, b: f64) -> SparseMatrix {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut t = TripletBuilder::new(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                t.add(i, j, a * v);
            }
            for (j, v) in other.row(i) {
                t.add(i, j, b * v);
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n_rows {
            for (j, _) in self.row(i) {
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }

    /// Maximum absolute asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Sparse Kronecker product `a ⊗ b` for a dense left factor.
    pub fn kron_dense_left(a: &DenseMatrix, b: &SparseMatrix) -> SparseMatrix {
        let mut t = TripletBuilder::new(a.rows() * b.n_rows, a.cols() * b.n_cols);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                let s = a[(i, j)];
                if s == 0.0 {
                    continue;
                }
                for r in 0..b.n_rows {
                    for (c, v) in b.row(r) {
                        t.add(i * b.n_rows + r, j * b.n_cols + c, s * v);
                    }
                }
            }
        }
        t.build()
    }

    /// Sparse Kronecker product of two sparse matrices.
    pub fn kron(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
        let mut t = TripletBuilder::new(a.n_rows * b.n_rows, a.n_cols * b.n_cols);
        for i in 0..a.n_rows {
            for (j, s) in a.row(i) {
                for r in 0..b.n_rows {
                    for (c, v) in b.row(r) {
                        t.add(i * b.n_rows + r, j * b.n_cols + c, s * v);
                    }
                }
            }
        }
        t.build()
    }

    /// Symmetric permutation `P A Pᵀ` where `perm[new] = old`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> SparseMatrix {
        assert_eq!(self.n_rows, self.n_cols);
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut t = TripletBuilder::new(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                t.add(inv[i], inv[j], v);
            }
        }
        t.build()
    }

    /// MatrixMarket coordinate (real general) export.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Cholesky factorization `A = L Lᵀ` of a symmetric positive definite band matrix.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i-bw..=i] at offsets 0..=bw
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::Dimension {
                expected: a.n_rows(),
                found: a.n_cols(),
            });
        }
        let n = a.n_rows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        let scale = (0..n)
            .map(|i| l[i * w + bw].abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // L[i,j] = (A[i,j] - sum_k L[i,k] L[j,k]) / L[j,j]
                let mut s = l[i * w + (j + bw - i)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j == i {
                    if s <= 1e-14 * scale || !s.is_finite() {
                        return Err(Error::Definiteness { index: i, value: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// LU factorization with partial pivoting of a general band matrix
/// (LAPACK `gbtrf` layout: the upper band widens to `kl + ku` under pivoting).
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::Dimension {
                expected: a.n_rows(),
                found: a.n_cols(),
            });
        }
        let n = a.n_rows();
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        let w = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * w];
        // entry (i, j) stored at data[i*w + j + kl - i]
        for i in 0..n {
            for (j, v) in a.row(i) {
                data[i * w + j + kl - i] = v;
            }
        }
        let scale = a_max_abs(a).max(f64::MIN_POSITIVE);
        let mut piv = vec![0; n];
        let at = |i: usize, j: usize| i * w + j + kl - i;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = data[at(k, k)].abs();
            for i in k + 1..=last {
                let v = data[at(i, k)].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax <= 1e-15 * scale || !pmax.is_finite() {
                return Err(Error::Singular { index: k, pivot: pmax });
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    data.swap(at(k, j), at(p, j));
                }
            }
            let d = data[at(k, k)];
            for i in k + 1..=last {
                let li = data[at(i, k)] / d;
                data[at(i, k)] = li;
                if li != 0.0 {
                    for j in k + 1..=jmax {
                        let ukj = data[at(k, j)];
                        data[at(i, j)] -= li * ukj;
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, data, piv })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let w = 2 * kl + ku + 1;
        let at = |i: usize, j: usize| i * w + j + kl - i;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                    b[i] -= self.data[at(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                s -= self.data[at(i, j)] * b[j];
            }
            b[i] = s / self.data[at(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn a_max_abs(a: &SparseMatrix) -> f64 {
    a.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                t.add(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        t.build()
    }

    #[test]
    fn triplets_merge_duplicates_and_drop_zeros() {
        let mut t = TripletBuilder::new(2, 3);
        t.add(0, 2, 1.0);
        t.add(0, 0, 2.0);
        t.add(0, 2, 1.5);
        t.add(1, 1, 1.0);
        t.add(1, 1, -1.0);
        let m = t.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), 2.5);
        assert_eq!(m.get(1, 1), 0.0);
        let cols: Vec<_> = m.row(0).map(|(j, _)| j).collect();
        assert_eq!(cols, vec![0, 2]);
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_systems() {
        // zero diagonal forces pivoting
        let mut a = random_banded(40, 3, 5, 7).to_dense();
        for i in 0..40 {
            a[(i, i)] = 0.0;
        }
        let a = SparseMatrix::from_dense(&a);
        let lu = BandedLu::factor(&a).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec(&x);
        let y = lu.solve(&b);
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn banded_lu_detects_singularity() {
        let a = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]));
        assert!(matches!(BandedLu::factor(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn banded_cholesky_solves_spd_and_rejects_indefinite() {
        let b = random_banded(30, 4, 4, 3);
        let bt = b.transpose();
        let mut t = TripletBuilder::new(30, 30);
        // B Bᵀ + I restricted to a band is not SPD in general; use Bᵀ B dense then sparsify
        let g = bt.to_dense().matmul(&b.to_dense());
        for i in 0..30 {
            for j in 0..30 {
                if g[(i, j)] != 0.0 {
                    t.add(i, j, g[(i, j)]);
                }
            }
            t.add(i, i, 1.0);
        }
        let a = t.build();
        let ch = BandedCholesky::factor(&a).unwrap();
        let x: Vec<f64> = (0..30).map(|i| 1.0 + i as f64).collect();
        let y = ch.solve(&a.matvec(&x));
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);

        let ind = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]));
        assert!(matches!(BandedCholesky::factor(&ind), Err(Error::Definiteness { .. })));
    }

    #[test]
    fn symmetric_permutation_roundtrip() {
        let a = random_banded(6, 2, 1, 11);
        let perm = vec![3, 0, 5, 1, 4, 2];
        let p = a.permute_symmetric(&perm);
        for (ni, &oi) in perm.iter().enumerate() {
            for (nj, &oj) in perm.iter().enumerate() {
                assert_eq!(p.get(ni, nj), a.get(oi, oj));
            }
        }
    }
}
