//! Sparse square matrices whose rank is computed one connected component at a time.

use std::collections::{BTreeMap, HashMap};

use crate::linalg::Matrix;
use crate::scalar::{Field, Scalar};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sparse {
    field: Field,
    n: usize,
    entries: BTreeMap<(usize, usize), Scalar>,
}

type ComponentKey = (usize, usize, Vec<(usize, usize, Scalar)>);

/// Memoizes ranks of components up to relabelling of rows and columns.
#[derive(Default)]
pub struct RankCache {
    ranks: HashMap<ComponentKey, usize>,
}

impl RankCache {
    pub fn new() -> RankCache {
        RankCache::default()
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl Sparse {
    pub fn zero(field: Field, n: usize) -> Sparse {
        Sparse { field, n, entries: BTreeMap::new() }
    }

    pub fn identity(field: Field, n: usize) -> Sparse {
        Sparse::from_entries(field, n, (0..n).map(|i| (i, i, field.one())))
    }

    pub fn unit(field: Field, n: usize, i: usize, j: usize) -> Sparse {
        Sparse::from_entries(field, n, [(i, j, field.one())])
    }

    /// Builds a matrix from triples; repeated positions are summed.
    pub fn from_entries<I: IntoIterator<Item = (usize, usize, Scalar)>>(field: Field, n: usize, it: I) -> Sparse {
        let mut s = Sparse::zero(field, n);
        for (r, c, v) in it {
            s.add_at(r, c, &v);
        }
        s
    }

    pub fn from_dense(m: &Matrix) -> Sparse {
        assert!(m.is_square());
        let mut s = Sparse::zero(m.field(), m.rows());
        for r in 0..m.rows() {
            for (c, v) in m.row(r).iter().enumerate() {
                if !v.is_zero() {
                    s.entries.insert((r, c), v.clone());
                }
            }
        }
        s
    }

    pub fn to_dense(&self) -> Matrix {
        let mut rows = vec![vec![self.field.zero(); self.n]; self.n];
        for ((r, c), v) in &self.entries {
            rows[*r][*c] = v.clone();
        }
        Matrix::from_rows(self.field, rows)
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> Scalar {
        self.entries.get(&(r, c)).cloned().unwrap_or_else(|| self.field.zero())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &Scalar)> {
        self.entries.iter().map(|((r, c), v)| (*r, *c, v))
    }

    fn add_at(&mut self, r: usize, c: usize, v: &Scalar) {
        assert!(r < self.n && c < self.n, "entry ({r}, {c}) outside M_{}", self.n);
        if v.is_zero() {
            return;
        }
        let sum = match self.entries.get(&(r, c)) {
            Some(old) => old + v,
            None => v.clone(),
        };
        if sum.is_zero() {
            self.entries.remove(&(r, c));
        } else {
            self.entries.insert((r, c), sum);
        }
    }

    pub fn add(&self, o: &Sparse) -> Sparse {
        assert_eq!(self.n, o.n);
        let mut s = self.clone();
        for (r, c, v) in o.entries() {
            s.add_at(r, c, v);
        }
        s
    }

    pub fn sub(&self, o: &Sparse) -> Sparse {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Sparse {
        self.scale(&-self.field.one())
    }

    pub fn scale(&self, k: &Scalar) -> Sparse {
        if k.is_zero() {
            return Sparse::zero(self.field, self.n);
        }
        let entries = self.entries.iter().map(|(rc, v)| (*rc, v * k)).collect();
        Sparse { field: self.field, n: self.n, entries }
    }

    pub fn mul(&self, o: &Sparse) -> Sparse {
        assert_eq!(self.n, o.n);
        let mut by_row: HashMap<usize, Vec<(usize, &Scalar)>> = HashMap::new();
        for (r, c, v) in o.entries() {
            by_row.entry(r).or_default().push((c, v));
        }
        let mut s = Sparse::zero(self.field, self.n);
        for (r, k, a) in self.entries() {
            if let Some(row) = by_row.get(&k) {
                for (c, b) in row {
                    s.add_at(r, *c, &(a * *b));
                }
            }
        }
        s
    }

    pub fn adjoint(&self) -> Sparse {
        let entries = self.entries.iter().map(|((r, c), v)| ((*c, *r), v.conj())).collect();
        Sparse { field: self.field, n: self.n, entries }
    }

    /// self ⊗ 1_g with row index a·g + w.
    pub fn kron_identity(&self, g: usize) -> Sparse {
        self.kron_diag(&vec![true; g])
    }

    /// self ⊗ diag(mask) with row index a·g + w, g = mask.len().
    pub fn kron_diag(&self, mask: &[bool]) -> Sparse {
        let g = mask.len();
        let mut entries = BTreeMap::new();
        for ((r, c), v) in &self.entries {
            for (w, on) in mask.iter().enumerate() {
                if *on {
                    entries.insert((r * g + w, c * g + w), v.clone());
                }
            }
        }
        Sparse { field: self.field, n: self.n * g, entries }
    }

    /// Exact rank, summed over the connected components of the bipartite support graph.
    pub fn rank(&self, cache: &mut RankCache) -> usize {
        if self.entries.is_empty() {
            return 0;
        }
        let mut rows: Vec<usize> = self.entries.keys().map(|(r, _)| *r).collect();
        rows.sort_unstable();
        rows.dedup();
        let mut cols: Vec<usize> = self.entries.keys().map(|(_, c)| *c).collect();
        cols.sort_unstable();
        cols.dedup();
        let row_ix: HashMap<usize, usize> = rows.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        let col_ix: HashMap<usize, usize> = cols.iter().enumerate().map(|(i, c)| (*c, rows.len() + i)).collect();
        let mut parent: Vec<usize> = (0..rows.len() + cols.len()).collect();
        for (r, c) in self.entries.keys() {
            let a = find(&mut parent, row_ix[r]);
            let b = find(&mut parent, col_ix[c]);
            if a != b {
                parent[a] = b;
            }
        }
        let mut comps: HashMap<usize, Vec<(usize, usize, Scalar)>> = HashMap::new();
        for ((r, c), v) in &self.entries {
            let root = find(&mut parent, row_ix[r]);
            comps.entry(root).or_default().push((*r, *c, v.clone()));
        }
        comps.into_values().map(|es| component_rank(self.field, es, cache)).sum()
    }
}

fn component_rank(field: Field, es: Vec<(usize, usize, Scalar)>, cache: &mut RankCache) -> usize {
    let mut rs: Vec<usize> = es.iter().map(|e| e.0).collect();
    rs.sort_unstable();
    rs.dedup();
    let mut cs: Vec<usize> = es.iter().map(|e| e.1).collect();
    cs.sort_unstable();
    cs.dedup();
    if es.len() == 1 {
        return 1;
    }
    let ri: HashMap<usize, usize> = rs.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let ci: HashMap<usize, usize> = cs.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut local: Vec<(usize, usize, Scalar)> = es.into_iter().map(|(r, c, v)| (ri[&r], ci[&c], v)).collect();
    local.sort_by_key(|a| (a.0, a.1));
    let key = (rs.len(), cs.len(), local);
    if let Some(r) = cache.ranks.get(&key) {
        return *r;
    }
    let mut rows = vec![vec![field.zero(); key.1]; key.0];
    for (r, c, v) in &key.2 {
        rows[*r][*c] = v.clone();
    }
    let rank = Matrix::from_rows(field, rows).rank();
    cache.ranks.insert(key, rank);
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, n: usize, nnz: usize) -> Sparse {
        let f = Field::Q;
        Sparse::from_entries(f, n, (0..nnz).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), f.from_i64(rng.gen_range(-2..=2)))))
    }

    #[test]
    fn rank_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cache = RankCache::new();
        for _ in 0..60 {
            let n = rng.gen_range(1..9);
            let nnz = rng.gen_range(0..2 * n);
            let s = random_sparse(&mut rng, n, nnz);
            assert_eq!(s.rank(&mut cache), s.to_dense().rank());
        }
    }

    #[test]
    fn algebra_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_sparse(&mut rng, 5, 9);
        let b = random_sparse(&mut rng, 5, 9);
        assert_eq!(a.mul(&b).to_dense(), a.to_dense().mul(&b.to_dense()));
        assert_eq!(a.sub(&b).to_dense(), a.to_dense().sub(&b.to_dense()));
        assert_eq!(a.kron_identity(3).to_dense(), a.to_dense().kron_identity(3));
        assert_eq!(a.adjoint().to_dense(), a.to_dense().adjoint());
        assert!(a.sub(&a).is_zero());
    }

    #[test]
    fn kron_diag_rank() {
        let f = Field::Q;
        let mut cache = RankCache::new();
        let a = Sparse::from_dense(&Matrix::from_i64(f, &[&[1, 2], &[2, 4]]));
        assert_eq!(a.kron_diag(&[true, false, true]).rank(&mut cache), 2);
        assert_eq!(Sparse::identity(f, 1000).rank(&mut cache), 1000);
    }
}
