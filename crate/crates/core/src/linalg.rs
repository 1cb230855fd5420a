//! Dense exact matrices: arithmetic, echelon forms and rank.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;

use crate::scalar::{mulmod, powmod, Field, Scalar};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    field: Field,
    data: Vec<Scalar>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} over {}", self.rows, self.cols, self.field)?;
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self[(r, c)].to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = Scalar;
    fn index(&self, (r, c): (usize, usize)) -> &Scalar {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Scalar {
        &mut self.data[r * self.cols + c]
    }
}

impl Matrix {
    pub fn zeros(field: Field, rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, field, data: vec![field.zero(); rows * cols] }
    }

    pub fn identity(field: Field, n: usize) -> Matrix {
        let mut m = Matrix::zeros(field, n, n);
        for i in 0..n {
            m[(i, i)] = field.one();
        }
        m
    }

    /// The matrix unit e_ij (0-based indices).
    pub fn unit(field: Field, n: usize, i: usize, j: usize) -> Matrix {
        let mut m = Matrix::zeros(field, n, n);
        m[(i, j)] = field.one();
        m
    }

    pub fn from_rows(field: Field, rows: Vec<Vec<Scalar>>) -> Matrix {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            for s in row {
                assert!(s.belongs_to(field), "entry outside {field}");
                data.push(s);
            }
        }
        Matrix { rows: r, cols: c, field, data }
    }

    pub fn from_i64(field: Field, rows: &[&[i64]]) -> Matrix {
        Matrix::from_rows(
            field,
            rows.iter().map(|r| r.iter().map(|&v| field.from_i64(v)).collect()).collect(),
        )
    }

    pub fn diagonal(field: Field, d: &[Scalar]) -> Matrix {
        let mut m = Matrix::zeros(field, d.len(), d.len());
        for (i, s) in d.iter().enumerate() {
            m[(i, i)] = s.clone();
        }
        m
    }

    pub fn random<R: Rng + ?Sized>(field: Field, rows: usize, cols: usize, rng: &mut R, bound: i64) -> Matrix {
        let data = (0..rows * cols).map(|_| field.random_small(rng, bound)).collect();
        Matrix { rows, cols, field, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> &[Scalar] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<Scalar>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Scalar::is_zero)
    }

    pub fn is_identity(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| {
                (0..self.cols).all(|c| if r == c { self[(r, c)].is_one() } else { self[(r, c)].is_zero() })
            })
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|r| (0..self.cols).all(|c| r == c || self[(r, c)].is_zero()))
    }

    fn check_same(&self, o: &Matrix) {
        assert!(
            self.rows == o.rows && self.cols == o.cols && self.field == o.field,
            "matrix mismatch: {}x{}/{} vs {}x{}/{}",
            self.rows,
            self.cols,
            self.field,
            o.rows,
            o.cols,
            o.field
        );
    }

    pub fn add(&self, o: &Matrix) -> Matrix {
        self.check_same(o);
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect();
        self.with_data(data)
    }

    pub fn sub(&self, o: &Matrix) -> Matrix {
        self.check_same(o);
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect();
        self.with_data(data)
    }

    pub fn neg(&self) -> Matrix {
        self.with_data(self.data.iter().map(|a| -a).collect())
    }

    pub fn scale(&self, s: &Scalar) -> Matrix {
        self.with_data(self.data.iter().map(|a| a * s).collect())
    }

    fn with_data(&self, data: Vec<Scalar>) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, field: self.field, data }
    }

    pub fn mul(&self, o: &Matrix) -> Matrix {
        assert!(self.cols == o.rows && self.field == o.field, "product dimension mismatch");
        let mut out = Matrix::zeros(self.field, self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..o.cols {
                    let b = &o[(k, j)];
                    if !b.is_zero() {
                        out[(i, j)] = &out[(i, j)] + &(a * b);
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.field, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].clone();
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Matrix {
        let mut out = Matrix::zeros(self.field, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    /// z ⊗ 1_g with row index a·g + u.
    pub fn kron_identity(&self, g: usize) -> Matrix {
        let mut out = Matrix::zeros(self.field, self.rows * g, self.cols * g);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self[(r, c)].is_zero() {
                    continue;
                }
                for u in 0..g {
                    out[(r * g + u, c * g + u)] = self[(r, c)].clone();
                }
            }
        }
        out
    }

    pub fn kron(&self, o: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.field, self.rows * o.rows, self.cols * o.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self[(r, c)].is_zero() {
                    continue;
                }
                for r2 in 0..o.rows {
                    for c2 in 0..o.cols {
                        out[(r * o.rows + r2, c * o.cols + c2)] = &self[(r, c)] * &o[(r2, c2)];
                    }
                }
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for r in 0..b.rows {
            for c in 0..b.cols {
                self[(r0 + r, c0 + c)] = b[(r, c)].clone();
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(self.field, rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out[(r, c)] = self[(r0 + r, c0 + c)].clone();
            }
        }
        out
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.field, self.rows, cols.len());
        for r in 0..self.rows {
            for (k, &c) in cols.iter().enumerate() {
                out[(r, k)] = self[(r, c)].clone();
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.field, rows.len(), self.cols);
        for (k, &r) in rows.iter().enumerate() {
            for c in 0..self.cols {
                out[(k, c)] = self[(r, c)].clone();
            }
        }
        out
    }

    pub fn hstack(&self, o: &Matrix) -> Matrix {
        assert_eq!(self.rows, o.rows);
        let mut out = Matrix::zeros(self.field, self.rows, self.cols + o.cols);
        out.set_block(0, 0, self);
        out.set_block(0, self.cols, o);
        out
    }

    pub fn vstack(&self, o: &Matrix) -> Matrix {
        assert_eq!(self.cols, o.cols);
        let mut out = Matrix::zeros(self.field, self.rows + o.rows, self.cols);
        out.set_block(0, 0, self);
        out.set_block(self.rows, 0, o);
        out
    }

    pub fn trace(&self) -> Scalar {
        let mut t = self.field.zero();
        for i in 0..self.rows.min(self.cols) {
            t = &t + &self[(i, i)];
        }
        t
    }

    /// Reduced row echelon form and pivot columns.
    pub fn rref(&self) -> (Matrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..m.cols {
            if row == m.rows {
                break;
            }
            let Some(pr) = (row..m.rows).find(|&r| !m[(r, col)].is_zero()) else { continue };
            m.swap_rows(row, pr);
            let inv = m[(row, col)].inv().expect("nonzero pivot");
            for c in col..m.cols {
                m[(row, c)] = &m[(row, c)] * &inv;
            }
            for r in 0..m.rows {
                if r != row && !m[(r, col)].is_zero() {
                    let f = m[(r, col)].clone();
                    for c in col..m.cols {
                        if !m[(row, c)].is_zero() {
                            m[(r, c)] = &m[(r, c)] - &(&f * &m[(row, c)]);
                        }
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        (m, pivots)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for c in 0..self.cols {
                self.data.swap(a * self.cols + c, b * self.cols + c);
            }
        }
    }

    /// Exact rank (fraction-free elimination, with a modular full-rank shortcut).
    pub fn rank(&self) -> usize {
        rank_exact(self)
    }

    /// Columns spanning the kernel {v : self·v = 0}, as a matrix with one column per basis vector.
    pub fn kernel(&self) -> Matrix {
        let (r, piv) = self.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !piv.contains(c)).collect();
        let mut out = Matrix::zeros(self.field, self.cols, free.len());
        for (k, &fc) in free.iter().enumerate() {
            out[(fc, k)] = self.field.one();
            for (i, &pc) in piv.iter().enumerate() {
                out[(pc, k)] = -&r[(i, fc)];
            }
        }
        out
    }

    /// A basis of the column space taken from pivot columns of `self`.
    pub fn column_basis(&self) -> Matrix {
        let (_, piv) = self.rref();
        self.select_cols(&piv)
    }

    pub fn inverse(&self) -> Option<Matrix> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let aug = self.hstack(&Matrix::identity(self.field, n));
        let (r, piv) = aug.rref();
        if piv.len() < n || piv[n - 1] != n - 1 {
            return None;
        }
        Some(r.block(0, n, n, n))
    }

    /// Some X with self·X = b, if one exists.
    pub fn solve(&self, b: &Matrix) -> Option<Matrix> {
        assert_eq!(self.rows, b.rows);
        let aug = self.hstack(b);
        let (r, piv) = aug.rref();
        if piv.iter().any(|&c| c >= self.cols) {
            return None;
        }
        let mut x = Matrix::zeros(self.field, self.cols, b.cols);
        for (i, &pc) in piv.iter().enumerate() {
            for j in 0..b.cols {
                x[(pc, j)] = r[(i, self.cols + j)].clone();
            }
        }
        Some(x)
    }

    /// Some X with X·self = b, if one exists.
    pub fn solve_left(&self, b: &Matrix) -> Option<Matrix> {
        self.transpose().solve(&b.transpose()).map(|x| x.transpose())
    }
}

trait Domain: Clone {
    fn d_zero(&self) -> bool;
    fn d_mul(&self, o: &Self) -> Self;
    fn d_sub(&self, o: &Self) -> Self;
    fn d_div(&self, o: &Self) -> Self;
}

impl Domain for BigInt {
    fn d_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn d_mul(&self, o: &Self) -> Self {
        self * o
    }
    fn d_sub(&self, o: &Self) -> Self {
        self - o
    }
    fn d_div(&self, o: &Self) -> Self {
        debug_assert!((self % o).is_zero());
        self / o
    }
}

#[derive(Clone, Debug)]
struct GInt(BigInt, BigInt);

impl Domain for GInt {
    fn d_zero(&self) -> bool {
        self.0.is_zero() && self.1.is_zero()
    }
    fn d_mul(&self, o: &Self) -> Self {
        GInt(&self.0 * &o.0 - &self.1 * &o.1, &self.0 * &o.1 + &self.1 * &o.0)
    }
    fn d_sub(&self, o: &Self) -> Self {
        GInt(&self.0 - &o.0, &self.1 - &o.1)
    }
    fn d_div(&self, o: &Self) -> Self {
        let n = &o.0 * &o.0 + &o.1 * &o.1;
        let re = &self.0 * &o.0 + &self.1 * &o.1;
        let im = &self.1 * &o.0 - &self.0 * &o.1;
        debug_assert!((&re % &n).is_zero() && (&im % &n).is_zero());
        GInt(re / &n, im / n)
    }
}

fn bareiss_rank<T: Domain>(mut m: Vec<Vec<T>>, cols: usize) -> usize {
    let rows = m.len();
    let mut rank = 0;
    let mut prev: Option<T> = None;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(pr) = (rank..rows).find(|&r| !m[r][col].d_zero()) else { continue };
        m.swap(rank, pr);
        let piv = m[rank][col].clone();
        for r in rank + 1..rows {
            let f = m[r][col].clone();
            for c in col..cols {
                let v = m[r][c].d_mul(&piv).d_sub(&f.d_mul(&m[rank][c]));
                m[r][c] = match &prev {
                    Some(p) => v.d_div(p),
                    None => v,
                };
            }
        }
        prev = Some(piv);
        rank += 1;
    }
    rank
}

fn lcm_of_denoms<'a>(it: impl Iterator<Item = &'a BigRational>) -> BigInt {
    it.fold(BigInt::one(), |acc, r| acc.lcm(r.denom()))
}

fn integer_rows(m: &Matrix) -> Vec<Vec<BigInt>> {
    (0..m.rows)
        .map(|r| {
            let row: Vec<&BigRational> = m
                .row(r)
                .iter()
                .map(|s| match s {
                    Scalar::Q(a) => a,
                    _ => unreachable!(),
                })
                .collect();
            let l = lcm_of_denoms(row.iter().copied());
            row.iter().map(|a| (*a * BigRational::from_integer(l.clone())).to_integer()).collect()
        })
        .collect()
}

fn gaussian_rows(m: &Matrix) -> Vec<Vec<GInt>> {
    (0..m.rows)
        .map(|r| {
            let row = m.row(r);
            let l = lcm_of_denoms(row.iter().flat_map(|s| match s {
                Scalar::QI(a, b) => [a, b],
                _ => unreachable!(),
            }));
            let lr = BigRational::from_integer(l);
            row.iter()
                .map(|s| match s {
                    Scalar::QI(a, b) => GInt((a * &lr).to_integer(), (b * &lr).to_integer()),
                    _ => unreachable!(),
                })
                .collect()
        })
        .collect()
}

const PRIME_Q: u64 = 2_305_843_009_213_693_951;
const PRIME_QI: u64 = 1_000_000_009;

fn sqrt_minus_one(p: u64) -> u64 {
    for a in 2..p {
        if powmod(a, (p - 1) / 2, p) == p - 1 {
            return powmod(a, (p - 1) / 4, p);
        }
    }
    unreachable!()
}

fn reduce_mod(x: &BigInt, p: u64) -> u64 {
    let m = x.mod_floor(&BigInt::from(p));
    m.try_into().expect("residue")
}

/// Rank of a residue matrix over GF(p).
pub(crate) fn rank_mod_p(mut m: Vec<Vec<u64>>, cols: usize, p: u64) -> usize {
    let rows = m.len();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(pr) = (rank..rows).find(|&r| m[r][col] != 0) else { continue };
        m.swap(rank, pr);
        let inv = powmod(m[rank][col], p - 2, p);
        for r in rank + 1..rows {
            if m[r][col] == 0 {
                continue;
            }
            let f = mulmod(m[r][col], inv, p);
            for c in col..cols {
                let sub = mulmod(f, m[rank][c], p);
                m[r][c] = (m[r][c] + p - sub) % p;
            }
        }
        rank += 1;
    }
    rank
}

/// A lower bound for the rank from one modular image.
pub fn modular_rank_lower_bound(m: &Matrix) -> usize {
    match m.field {
        Field::GF(p) => rank_mod_p(gf_rows(m), m.cols, p),
        Field::Q => {
            let rows = integer_rows(m).iter().map(|r| r.iter().map(|x| reduce_mod(x, PRIME_Q)).collect()).collect();
            rank_mod_p(rows, m.cols, PRIME_Q)
        }
        Field::QI => {
            let s = sqrt_minus_one(PRIME_QI);
            let rows = gaussian_rows(m)
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|g| (reduce_mod(&g.0, PRIME_QI) + mulmod(reduce_mod(&g.1, PRIME_QI), s, PRIME_QI)) % PRIME_QI)
                        .collect()
                })
                .collect();
            rank_mod_p(rows, m.cols, PRIME_QI)
        }
    }
}

fn gf_rows(m: &Matrix) -> Vec<Vec<u64>> {
    (0..m.rows)
        .map(|r| {
            m.row(r)
                .iter()
                .map(|s| match s {
                    Scalar::GF(v, _) => *v,
                    _ => unreachable!(),
                })
                .collect()
        })
        .collect()
}

/// Rank by fraction-free elimination alone.
pub fn rank_bareiss(m: &Matrix) -> usize {
    match m.field {
        Field::GF(p) => rank_mod_p(gf_rows(m), m.cols, p),
        Field::Q => bareiss_rank(integer_rows(m), m.cols),
        Field::QI => bareiss_rank(gaussian_rows(m), m.cols),
    }
}

fn rank_exact(m: &Matrix) -> usize {
    if m.rows == 0 || m.cols == 0 {
        return 0;
    }
    if let Field::GF(_) = m.field {
        return rank_bareiss(m);
    }
    let full = m.rows.min(m.cols);
    if m.rows * m.cols >= 16 && modular_rank_lower_bound(m) == full {
        return full;
    }
    rank_bareiss(m)
}

/// Integer square root helper used by number-theoretic code.
pub fn is_square(n: &BigInt) -> Option<BigInt> {
    if n.is_negative() {
        return None;
    }
    let r = n.sqrt();
    (&r * &r == *n).then_some(r)
}
