//! The ambient factor M_n seen through nested frames.
//!
//! Frame k views the ambient index set (or the part of it used by stage k) as
//! p_k rows times s_k = n/q_k slots, and ρ_k(z) acts as z ⊗ 1 on the slots.
//! Frame k+1 places g blocks of s_{k+1} consecutive frame-k slots, so that
//! P_{k+1}(a·g + w, t) = P_k(a, start_w + t). Elements are finite sums of
//! slot-diagonal terms and ranks are computed region by region.

use std::collections::HashMap;
use std::ops::Range;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::sparse::{RankCache, Sparse};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{Field, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub p: usize,
    pub q: usize,
    pub slots: usize,
    /// Block starts in the previous frame's slot range; empty for frame 0.
    pub starts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlotAmbient {
    pub field: Field,
    pub n: usize,
    pub frames: Vec<Frame>,
}

impl SlotAmbient {
    pub fn new(field: Field, n: usize) -> Result<SlotAmbient> {
        if n == 0 {
            return Err(Error::Input("ambient size must be positive".into()));
        }
        Ok(SlotAmbient { field, n, frames: vec![Frame { p: 1, q: 1, slots: n, starts: vec![] }] })
    }

    pub fn divisors(&self) -> Vec<usize> {
        divisors(self.n)
    }

    pub fn last(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn frame(&self, k: usize) -> &Frame {
        &self.frames[k]
    }

    /// Adds frame k+1 with denominator q and blocks starting at `starts` in frame k.
    pub fn push_frame(&mut self, q: usize, starts: Vec<usize>) -> Result<usize> {
        if q == 0 || !self.n.is_multiple_of(q) {
            return Err(Error::Infeasible(format!("no idempotent of rank 1/{q} in M_{}", self.n)));
        }
        let prev = self.frames.last().expect("frame 0");
        let slots = self.n / q;
        let mut sorted = starts.clone();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] + slots > w[1] {
                return Err(Error::Construction(format!("blocks at {} and {} overlap", w[0], w[1])));
            }
        }
        if let Some(last) = sorted.last() {
            if last + slots > prev.slots {
                return Err(Error::Construction(format!("block at {last} leaves the {} slots of the frame", prev.slots)));
            }
        }
        let p = prev.p * starts.len();
        self.frames.push(Frame { p, q, slots, starts });
        Ok(self.last())
    }

    /// Frame-k slots not covered by a block of frame k+1.
    pub fn leftover(&self, k: usize) -> Vec<Range<usize>> {
        let next = &self.frames[k + 1];
        let mut starts = next.starts.clone();
        starts.sort_unstable();
        let mut out = Vec::new();
        let mut at = 0;
        for s in starts {
            if s > at {
                out.push(at..s);
            }
            at = s + next.slots;
        }
        if at < self.frames[k].slots {
            out.push(at..self.frames[k].slots);
        }
        out
    }

    /// Ambient index of row a, slot t in frame k.
    pub fn index(&self, k: usize, a: usize, t: usize) -> usize {
        if k == 0 {
            return t;
        }
        let g = self.frames[k].starts.len();
        self.index(k - 1, a / g, self.frames[k].starts[a % g] + t)
    }

    /// γ_{k,b}: M_{p_b} → M_{p_k}.
    pub fn lift_matrix(&self, m: &Sparse, b: usize, k: usize) -> Sparse {
        let ratio = self.frames[k].p / self.frames[b].p;
        if ratio == 1 {
            m.clone()
        } else {
            m.kron_identity(ratio)
        }
    }
}

pub fn divisors(n: usize) -> Vec<usize> {
    let mut ds = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            ds.push(d);
            if d * d != n {
                ds.push(n / d);
            }
        }
        d += 1;
    }
    ds.sort_unstable();
    ds
}

/// ρ_cut(γ_{cut,base}(mat)) restricted to a range of frame-cut slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub base: usize,
    pub cut: usize,
    pub mat: Sparse,
    pub range: Option<Range<usize>>,
}

/// A finite sum of slot-diagonal terms.
#[derive(Clone, Debug, Default)]
pub struct SlotElement {
    pub terms: Vec<Term>,
}

impl SlotElement {
    pub fn zero() -> SlotElement {
        SlotElement::default()
    }

    pub fn term(t: Term) -> SlotElement {
        SlotElement { terms: vec![t] }
    }

    /// ρ_k(z) for z ∈ M_{p_k}.
    pub fn rho(k: usize, z: Sparse) -> SlotElement {
        SlotElement::term(Term { base: k, cut: k, mat: z, range: None })
    }

    /// ρ_k(z) cut down to a range of frame-k slots.
    pub fn rho_on(k: usize, z: Sparse, range: Range<usize>) -> SlotElement {
        SlotElement::term(Term { base: k, cut: k, mat: z, range: Some(range) })
    }

    /// ρ_k(γ_{k,b}(z)) for z ∈ M_{p_b}, b ≤ k.
    pub fn rho_lifted(b: usize, k: usize, z: Sparse) -> SlotElement {
        SlotElement::term(Term { base: b, cut: k, mat: z, range: None })
    }

    pub fn one(field: Field) -> SlotElement {
        SlotElement::rho(0, Sparse::identity(field, 1))
    }

    pub fn add(&self, o: &SlotElement) -> SlotElement {
        let mut terms = self.terms.clone();
        terms.extend(o.terms.iter().cloned());
        SlotElement { terms }
    }

    pub fn scale(&self, k: &Scalar) -> SlotElement {
        SlotElement { terms: self.terms.iter().map(|t| Term { mat: t.mat.scale(k), ..t.clone() }).collect() }
    }

    pub fn neg(&self) -> SlotElement {
        SlotElement { terms: self.terms.iter().map(|t| Term { mat: t.mat.neg(), ..t.clone() }).collect() }
    }

    pub fn sub(&self, o: &SlotElement) -> SlotElement {
        self.add(&o.neg())
    }

    pub fn adjoint(&self) -> SlotElement {
        SlotElement { terms: self.terms.iter().map(|t| Term { mat: t.mat.adjoint(), ..t.clone() }).collect() }
    }

    pub fn mul(&self, o: &SlotElement, amb: &SlotAmbient) -> Result<SlotElement> {
        let mut terms = Vec::new();
        for s in &self.terms {
            for t in &o.terms {
                if let Some(u) = mul_terms(amb, s, t)? {
                    terms.push(u);
                }
            }
        }
        Ok(SlotElement { terms })
    }

    pub fn max_cut(&self) -> usize {
        self.terms.iter().map(|t| t.cut).max().unwrap_or(0)
    }
}

fn intersect(a: &Option<Range<usize>>, b: &Option<Range<usize>>) -> Option<Option<Range<usize>>> {
    match (a, b) {
        (None, None) => Some(None),
        (Some(r), None) | (None, Some(r)) => Some(Some(r.clone())),
        (Some(r), Some(s)) => {
            let lo = r.start.max(s.start);
            let hi = r.end.min(s.end);
            (lo < hi).then_some(Some(lo..hi))
        }
    }
}

/// The part of a term living on the frame-k index set, as a frame-k term.
pub fn lift_term(amb: &SlotAmbient, t: &Term, k: usize) -> Result<Option<Term>> {
    if k < t.cut || k >= amb.frames.len() {
        return Err(Error::Input(format!("cannot view a frame-{} term in frame {k}", t.cut)));
    }
    let mut t = t.clone();
    while t.cut < k {
        let Some(range) = t.range.clone() else {
            t.cut = k;
            break;
        };
        let next = &amb.frames[t.cut + 1];
        let mut mask = Vec::with_capacity(next.starts.len());
        for s in &next.starts {
            let block = *s..s + next.slots;
            if block.start >= range.start && block.end <= range.end {
                mask.push(true);
            } else if block.end <= range.start || block.start >= range.end {
                mask.push(false);
            } else {
                return Err(Error::Construction(format!(
                    "slot range {range:?} cuts the frame-{} block {block:?}",
                    t.cut + 1
                )));
            }
        }
        if mask.iter().all(|m| !m) {
            return Ok(None);
        }
        if mask.iter().all(|m| *m) {
            t = Term { base: t.base, cut: t.cut + 1, mat: t.mat, range: None };
        } else {
            let m = amb.lift_matrix(&t.mat, t.base, t.cut).kron_diag(&mask);
            t = Term { base: t.cut + 1, cut: t.cut + 1, mat: m, range: None };
        }
    }
    Ok(Some(t))
}

fn mul_terms(amb: &SlotAmbient, s: &Term, t: &Term) -> Result<Option<Term>> {
    let m = s.cut.max(t.cut);
    let (Some(s), Some(t)) = (lift_term(amb, s, m)?, lift_term(amb, t, m)?) else {
        return Ok(None);
    };
    let Some(range) = intersect(&s.range, &t.range) else {
        return Ok(None);
    };
    let b = s.base.max(t.base);
    let mat = amb.lift_matrix(&s.mat, s.base, b).mul(&amb.lift_matrix(&t.mat, t.base, b));
    Ok((!mat.is_zero()).then_some(Term { base: b, cut: m, mat, range }))
}

/// rank(x) as an integer count of ambient indices.
pub fn rank(amb: &SlotAmbient, x: &SlotElement, cache: &mut RankCache) -> Result<usize> {
    let j = x.max_cut();
    let mut total = 0;
    for k in 0..=j {
        let region = if k < j { amb.leftover(k) } else { vec![0..amb.frames[k].slots] };
        let mut active = Vec::new();
        for t in x.terms.iter().filter(|t| t.cut <= k) {
            if let Some(l) = lift_term(amb, t, k)? {
                active.push(l);
            }
        }
        total += region_rank(amb, k, &region, &active, cache);
    }
    Ok(total)
}

fn region_rank(amb: &SlotAmbient, k: usize, region: &[Range<usize>], active: &[Term], cache: &mut RankCache) -> usize {
    if active.is_empty() {
        return 0;
    }
    let mut cuts: Vec<usize> = Vec::new();
    for r in region {
        cuts.push(r.start);
        cuts.push(r.end);
    }
    for t in active {
        if let Some(r) = &t.range {
            cuts.push(r.start);
            cuts.push(r.end);
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    let mut memo: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut total = 0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !region.iter().any(|r| r.start <= a && b <= r.end) {
            continue;
        }
        let live: Vec<usize> = (0..active.len())
            .filter(|i| active[*i].range.as_ref().is_none_or(|r| r.start <= a && b <= r.end))
            .collect();
        if live.is_empty() {
            continue;
        }
        let per_slot = *memo.entry(live.clone()).or_insert_with(|| {
            let bmax = live.iter().map(|i| active[*i].base).max().unwrap();
            let mut sum = Sparse::zero(amb.field, amb.frames[bmax].p);
            for i in &live {
                sum = sum.add(&amb.lift_matrix(&active[*i].mat, active[*i].base, bmax));
            }
            sum.rank(cache) * (amb.frames[k].p / amb.frames[bmax].p)
        });
        total += per_slot * (b - a);
    }
    total
}

/// The M_{p_k} matrix by which x acts on every frame-k slot of `range`; x must act uniformly there.
pub fn compress(amb: &SlotAmbient, x: &SlotElement, k: usize, range: &Range<usize>) -> Result<Sparse> {
    let mut out = Sparse::zero(amb.field, amb.frames[k].p);
    for t in &x.terms {
        if t.cut > k {
            return Err(Error::Input(format!("a frame-{} term does not act on whole frame-{k} slots", t.cut)));
        }
        let Some(l) = lift_term(amb, t, k)? else { continue };
        let covers = match &l.range {
            None => true,
            Some(r) if r.start <= range.start && range.end <= r.end => true,
            Some(r) if r.end <= range.start || range.end <= r.start => false,
            Some(r) => return Err(Error::Construction(format!("term range {r:?} splits {range:?}"))),
        };
        if covers {
            out = out.add(&amb.lift_matrix(&l.mat, l.base, k));
        }
    }
    Ok(out)
}

/// N(x) = rank(x)/n.
pub fn norm(amb: &SlotAmbient, x: &SlotElement, cache: &mut RankCache) -> Result<BigRational> {
    Ok(BigRational::new(rank(amb, x, cache)?.into(), amb.n.into()))
}

/// Dense n × n matrix of x; only sensible for small n.
pub fn materialize(amb: &SlotAmbient, x: &SlotElement) -> Matrix {
    let mut m = Matrix::zeros(amb.field, amb.n, amb.n);
    for t in &x.terms {
        let mat = amb.lift_matrix(&t.mat, t.base, t.cut);
        let range = t.range.clone().unwrap_or(0..amb.frames[t.cut].slots);
        for (r, c, v) in mat.entries() {
            for s in range.clone() {
                let (i, j) = (amb.index(t.cut, r, s), amb.index(t.cut, c, s));
                let cur = m[(i, j)].clone();
                m[(i, j)] = &cur + v;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_ambient() -> SlotAmbient {
        // n = 24: frame 1 has 2 blocks of 6 slots, frame 2 has 3 blocks of 2 slots.
        let mut amb = SlotAmbient::new(Field::Q, 24).unwrap();
        amb.push_frame(4, vec![1, 12]).unwrap();
        amb.push_frame(12, vec![0, 3]).unwrap();
        amb
    }

    fn random_mat(rng: &mut ChaCha8Rng, n: usize) -> Sparse {
        let f = Field::Q;
        let nnz = rng.gen_range(0..=2 * n);
        Sparse::from_entries(f, n, (0..nnz).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), f.from_i64(rng.gen_range(-2..=2)))))
    }

    fn random_element(rng: &mut ChaCha8Rng, amb: &SlotAmbient) -> SlotElement {
        let mut x = SlotElement::zero();
        for _ in 0..rng.gen_range(1..4) {
            let cut = rng.gen_range(0..amb.frames.len());
            let base = rng.gen_range(0..=cut);
            let mat = random_mat(rng, amb.frames[base].p);
            let range = match (cut, rng.gen_range(0..3)) {
                (0, 1) => Some(0..12),
                (0, 2) => Some(7..24),
                (1, 1) => Some(0..3),
                (1, 2) => Some(2..6),
                _ => None,
            };
            x.terms.push(Term { base, cut, mat, range });
        }
        x
    }

    #[test]
    fn index_map_is_injective() {
        let amb = small_ambient();
        let mut seen = std::collections::HashSet::new();
        for k in 0..3 {
            seen.clear();
            for a in 0..amb.frames[k].p {
                for t in 0..amb.frames[k].slots {
                    assert!(seen.insert(amb.index(k, a, t)));
                }
            }
        }
        assert_eq!(amb.leftover(0), vec![0..1, 7..12, 18..24]);
        assert_eq!(amb.leftover(1), vec![2..3, 5..6]);
    }

    #[test]
    fn rank_engine_matches_dense() {
        let amb = small_ambient();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cache = RankCache::new();
        for _ in 0..80 {
            let x = random_element(&mut rng, &amb);
            let y = random_element(&mut rng, &amb);
            assert_eq!(rank(&amb, &x, &mut cache).unwrap(), materialize(&amb, &x).rank());
            let xy = x.mul(&y, &amb).unwrap();
            assert_eq!(materialize(&amb, &xy), materialize(&amb, &x).mul(&materialize(&amb, &y)));
            assert_eq!(rank(&amb, &xy, &mut cache).unwrap(), materialize(&amb, &xy).rank());
            assert_eq!(materialize(&amb, &x.adjoint()), materialize(&amb, &x).adjoint());
        }
    }

    #[test]
    fn rho_is_a_unital_corner_embedding() {
        let amb = small_ambient();
        let mut cache = RankCache::new();
        let one = SlotElement::rho(2, Sparse::identity(Field::Q, 4));
        assert_eq!(norm(&amb, &one, &mut cache).unwrap(), BigRational::new(1.into(), 3.into()));
        let e = SlotElement::rho(1, Sparse::unit(Field::Q, 2, 0, 0));
        assert_eq!(rank(&amb, &e, &mut cache).unwrap(), 6);
    }

    #[test]
    fn cut_blocks_are_rejected() {
        let amb = small_ambient();
        let t = Term { base: 0, cut: 0, mat: Sparse::identity(Field::Q, 1), range: Some(0..4) };
        assert!(matches!(lift_term(&amb, &t, 1), Err(Error::Construction(_))));
        assert!(matches!(SlotAmbient::new(Field::Q, 24).unwrap().push_frame(5, vec![0]), Err(Error::Infeasible(_))));
    }
}
