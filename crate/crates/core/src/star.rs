//! The *-regular layer: projections, relative inverses, perturbation bounds,
//! *-equivalence over ℚ(i) and finite-stage LP∼RP exhaustion.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{is_square, Matrix};
use crate::matalg::{standard_embedding, Element, PseudoRank, Shape, Subalgebra};
use crate::numtheory::{factorize, norm_class, norm_preimage};
use crate::scalar::{rational_str, Field, Scalar};

/// A self-adjoint idempotent, validated at construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Projection(Element);

impl Projection {
    pub fn new(e: Element) -> Result<Projection> {
        e.field().require_star()?;
        if !e.is_idempotent() {
            return Err(Error::Precondition("projection is not idempotent".into()));
        }
        if !e.is_self_adjoint() {
            return Err(Error::Precondition("projection is not self-adjoint".into()));
        }
        Ok(Projection(e))
    }

    pub fn element(&self) -> &Element {
        &self.0
    }

    pub fn into_element(self) -> Element {
        self.0
    }

    /// self ≤ other, i.e. self·other = other·self = self.
    pub fn le(&self, other: &Projection) -> bool {
        self.0.mul(&other.0) == self.0 && other.0.mul(&self.0) == self.0
    }
}

/// w with w·w* = target and w*·w = source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartialIsometryWitness {
    pub w: Element,
    pub source: Projection,
    pub target: Projection,
}

impl PartialIsometryWitness {
    pub fn new(w: Element, source: Projection, target: Projection) -> Result<PartialIsometryWitness> {
        let ws = w.adjoint();
        if w.mul(&ws) != *target.element() {
            return Err(Error::Precondition("w·w* differs from the target projection".into()));
        }
        if ws.mul(&w) != *source.element() {
            return Err(Error::Precondition("w*·w differs from the source projection".into()));
        }
        Ok(PartialIsometryWitness { w, source, target })
    }
}

pub fn adjoint(x: &Element) -> Element {
    x.adjoint()
}

fn inner(x: &Matrix, y: &Matrix) -> Scalar {
    x.adjoint().mul(y)[(0, 0)].clone()
}

fn lp_matrix(x: &Matrix) -> Matrix {
    let c = x.column_basis();
    if c.cols() == 0 {
        return Matrix::zeros(x.field(), x.rows(), x.rows());
    }
    let ct = c.adjoint();
    let g = ct.mul(&c).inverse().expect("positive definite Gram matrix");
    c.mul(&g).mul(&ct)
}

fn blockwise(x: &Element, f: impl Fn(&Matrix) -> Matrix) -> Element {
    Element::new(x.field(), x.blocks().iter().map(f).collect()).expect("same shape")
}

/// The projection onto the column space of x.
pub fn lp(x: &Element) -> Result<Projection> {
    x.field().require_star()?;
    Ok(Projection(blockwise(x, lp_matrix)))
}

/// The projection onto the row space of x.
pub fn rp(x: &Element) -> Result<Projection> {
    x.field().require_star()?;
    Ok(Projection(blockwise(x, |m| lp_matrix(&m.adjoint()))))
}

fn moore_penrose(x: &Matrix) -> Matrix {
    let c = x.column_basis();
    if c.cols() == 0 {
        return Matrix::zeros(x.field(), x.cols(), x.rows());
    }
    let ct = c.adjoint();
    let cc_inv = ct.mul(&c).inverse().expect("positive definite");
    let r = cc_inv.mul(&ct).mul(x);
    let rt = r.adjoint();
    let rr_inv = r.mul(&rt).inverse().expect("positive definite");
    rt.mul(&rr_inv).mul(&cc_inv).mul(&ct)
}

/// The unique y with x·y = LP(x), y·x = RP(x) (and y·x·y = y).
pub fn rel_inverse(x: &Element) -> Result<Element> {
    x.field().require_star()?;
    Ok(blockwise(x, moore_penrose))
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    #[serde(with = "rational_str")]
    pub dist: BigRational,
    #[serde(with = "rational_str")]
    pub n_r: BigRational,
    #[serde(with = "rational_str")]
    pub n_r_star: BigRational,
    #[serde(with = "rational_str")]
    pub rel_inverse_dist: BigRational,
    #[serde(with = "rational_str")]
    pub lp_dist: BigRational,
    #[serde(with = "rational_str")]
    pub rp_dist: BigRational,
    pub isometric: bool,
    pub rel_inverse_ok: bool,
    pub lp_ok: bool,
    pub rp_ok: bool,
}

impl PerturbationReport {
    pub fn holds(&self) -> bool {
        self.isometric && self.rel_inverse_ok && self.lp_ok && self.rp_ok
    }

    /// Observed ratios (relative inverse, LP, RP) against N(r − s).
    pub fn ratios(&self) -> [BigRational; 3] {
        [&self.rel_inverse_dist / &self.dist, &self.lp_dist / &self.dist, &self.rp_dist / &self.dist]
    }
}

/// N(r*) = N(r), N(r̄ − s̄) ≤ 3N(r − s), N(LP(r) − LP(s)) ≤ 4N(r − s), N(RP(r) − RP(s)) ≤ 4N(r − s).
pub fn perturbation_ratios(r: &Element, s: &Element, n: &PseudoRank) -> Result<PerturbationReport> {
    r.field().require_star()?;
    if r == s {
        return Err(Error::Precondition("r = s".into()));
    }
    let dist = n.dist(r, s)?;
    let n_r = n.eval(r)?;
    let n_r_star = n.eval(&r.adjoint())?;
    let rel_inverse_dist = n.dist(&rel_inverse(r)?, &rel_inverse(s)?)?;
    let lp_dist = n.dist(lp(r)?.element(), lp(s)?.element())?;
    let rp_dist = n.dist(rp(r)?.element(), rp(s)?.element())?;
    let three = BigRational::from_integer(3.into());
    let four = BigRational::from_integer(4.into());
    Ok(PerturbationReport {
        isometric: n_r == n_r_star,
        rel_inverse_ok: rel_inverse_dist <= &three * &dist,
        lp_ok: lp_dist <= &four * &dist,
        rp_ok: rp_dist <= &four * &dist,
        dist,
        n_r,
        n_r_star,
        rel_inverse_dist,
        lp_dist,
        rp_dist,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ShrinkResult {
    pub e1_prime: Projection,
    pub e2_prime: Projection,
    pub witness: PartialIsometryWitness,
    #[serde(with = "rational_str")]
    pub d1: BigRational,
    #[serde(with = "rational_str")]
    pub d2: BigRational,
    #[serde(with = "rational_str")]
    pub bound: BigRational,
}

/// Subprojections eᵢ' ≤ eᵢ with e₁' ∼* e₂' and N(eᵢ − eᵢ') ≤ 5ε, given eᵢ near fᵢ and f₁ ∼* f₂ via w.
pub fn shrink_to_star_equiv(
    e1: &Projection,
    e2: &Projection,
    f1: &Projection,
    f2: &Projection,
    w: &PartialIsometryWitness,
    n: &PseudoRank,
    eps: &BigRational,
) -> Result<ShrinkResult> {
    if w.target != *f1 || w.source != *f2 {
        return Err(Error::Precondition("w must satisfy w·w* = f₁ and w*·w = f₂".into()));
    }
    for (e, f, i) in [(e1, f1, 1), (e2, f2, 2)] {
        let d = n.dist(e.element(), f.element())?;
        if d > *eps {
            return Err(Error::Precondition(format!("N(e{i} − f{i}) = {} exceeds ε", rational_str::to_string(&d))));
        }
    }
    let (e1m, e2m, wm) = (e1.element(), e2.element(), &w.w);
    let ws = wm.adjoint();
    let a = e1m.sub(&e1m.mul(wm).mul(&ws).mul(e1m));
    let p1 = lp(&a)?;
    let p1p = e1m.sub(p1.element());
    let w1 = p1p.mul(wm);
    if w1.mul(&w1.adjoint()) != p1p {
        return Err(Error::Construction("p₁' ≠ w'(w')*".into()));
    }
    let b = e2m.sub(&e2m.mul(&w1.adjoint()).mul(&w1).mul(e2m));
    let e2p = e2m.sub(lp(&b)?.element());
    let w2 = w1.mul(&e2p);
    let e1p = w2.mul(&w2.adjoint());
    let e1p = Projection::new(e1p)?;
    let e2p = Projection::new(e2p)?;
    if !e1p.le(e1) || !e2p.le(e2) {
        return Err(Error::Construction("shrunk projections are not subprojections".into()));
    }
    let witness = PartialIsometryWitness::new(w2, e2p.clone(), e1p.clone())?;
    let d1 = n.dist(e1.element(), e1p.element())?;
    let d2 = n.dist(e2.element(), e2p.element())?;
    let bound = eps * BigRational::from_integer(5.into());
    if d1 > bound || d2 > bound {
        return Err(Error::Assertion("N(eᵢ − eᵢ') ≤ 5ε violated".into()));
    }
    Ok(ShrinkResult { e1_prime: e1p, e2_prime: e2p, witness, d1, d2, bound })
}

/// Rank and discriminant class of the hermitian form induced on the range of a projection over ℚ(i).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HermitianClassInvariant {
    pub rank: usize,
    #[serde(serialize_with = "ser_bigint")]
    pub discriminant: BigInt,
}

fn ser_bigint<S: serde::Serializer>(b: &BigInt, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&b.to_string())
}

/// Gram–Schmidt without normalization: orthogonal columns spanning the same space, and their norms.
fn orthogonal_basis(v: &Matrix) -> (Vec<Matrix>, Vec<BigRational>) {
    let mut out: Vec<Matrix> = Vec::new();
    let mut norms: Vec<BigRational> = Vec::new();
    for c in 0..v.cols() {
        let mut x = v.select_cols(&[c]);
        for (b, nb) in out.iter().zip(&norms) {
            let coef = inner(b, &x).scale_rational(&nb.recip());
            x = x.sub(&b.scale(&coef));
        }
        let nx = inner(&x, &x).as_rational().expect("hermitian norm is rational");
        if !nx.is_zero() {
            out.push(x);
            norms.push(nx);
        }
    }
    (out, norms)
}

trait ScaleRational {
    fn scale_rational(&self, r: &BigRational) -> Scalar;
}

impl ScaleRational for Scalar {
    fn scale_rational(&self, r: &BigRational) -> Scalar {
        self * &self.field().from_rational(r)
    }
}

pub fn hermitian_invariant(p: &Matrix) -> Result<HermitianClassInvariant> {
    if p.field() != Field::QI {
        return Err(Error::Input("hermitian class invariants are implemented over ℚ(i)".into()));
    }
    let (_, norms) = orthogonal_basis(&p.column_basis());
    let det: BigRational = norms.iter().fold(BigRational::one(), |a, b| a * b);
    Ok(HermitianClassInvariant { rank: norms.len(), discriminant: norm_class(&det)? })
}

/// Class of a positive rational modulo norms: ℚ(i) uses N(ℚ(i)*), ℚ uses squares.
fn class_of(r: &BigRational, field: Field) -> Result<BigInt> {
    match field {
        Field::QI => norm_class(r),
        Field::Q => {
            let mut class = BigInt::one();
            for part in [r.numer(), r.denom()] {
                for (p, e) in factorize(part)? {
                    if e % 2 == 1 {
                        class *= p;
                    }
                }
            }
            Ok(class)
        }
        Field::GF(_) => Err(Error::NotPositiveDefinite(field)),
    }
}

/// c with c*·c = r, when one exists.
fn norm_root(r: &BigRational, field: Field) -> Result<Option<Scalar>> {
    Ok(match field {
        Field::QI => norm_preimage(r)?.map(|(a, b)| Scalar::QI(a, b)),
        Field::Q => match (is_square(r.numer()), is_square(r.denom())) {
            (Some(a), Some(b)) => Some(Scalar::Q(BigRational::new(a, b))),
            _ => None,
        },
        Field::GF(_) => None,
    })
}

const NORM_STEPS: [(i64, i64); 8] = [(1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)];
const SEARCH_BUDGET: usize = 4000;

/// Small combinations Σ cₖ·bₖ of orthogonal vectors, with their hermitian norms.
fn candidates(basis: &[Matrix], norms: &[BigRational], field: Field) -> Vec<(Vec<usize>, Vec<usize>, BigRational)> {
    let steps: Vec<usize> = match field {
        Field::QI => (0..NORM_STEPS.len()).collect(),
        _ => vec![0, 2, 5],
    };
    let d = basis.len();
    let mut out = Vec::new();
    for k in 0..d {
        out.push((vec![k], vec![0], norms[k].clone()));
    }
    'outer: for size in 2..=d.min(3) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let mut coefs = vec![0usize; size];
            loop {
                let h = idx
                    .iter()
                    .zip(&coefs)
                    .map(|(&i, &c)| {
                        let (a, b) = NORM_STEPS[steps[c]];
                        &norms[i] * BigRational::from_integer((a * a + b * b).into())
                    })
                    .sum();
                out.push((idx.clone(), coefs.iter().map(|&c| steps[c]).collect(), h));
                if out.len() >= SEARCH_BUDGET {
                    break 'outer;
                }
                let mut t = 1;
                while t < size {
                    coefs[t] += 1;
                    if coefs[t] < steps.len() {
                        break;
                    }
                    coefs[t] = 0;
                    t += 1;
                }
                if t == size {
                    break;
                }
            }
            let mut t = size;
            while t > 0 {
                t -= 1;
                if idx[t] < d - size + t {
                    idx[t] += 1;
                    for u in t + 1..size {
                        idx[u] = idx[u - 1] + 1;
                    }
                    break;
                }
                if t == 0 {
                    continue 'outer;
                }
            }
        }
    }
    out
}

fn combine(basis: &[Matrix], idx: &[usize], steps: &[usize], field: Field) -> Matrix {
    let mut v = basis[idx[0]].scale(&field.zero());
    for (&i, &s) in idx.iter().zip(steps) {
        let (a, b) = NORM_STEPS[s];
        let c = match field {
            Field::QI => Scalar::QI(BigRational::from_integer(a.into()), BigRational::from_integer(b.into())),
            _ => field.from_i64(a),
        };
        v = v.add(&basis[i].scale(&c));
    }
    v
}

fn complement_in(basis: &[Matrix], v: &Matrix) -> Matrix {
    let hv = inner(v, v).as_rational().expect("rational").recip();
    let field = v.field();
    let mut cols: Option<Matrix> = None;
    for b in basis {
        let c = inner(v, b).scale_rational(&hv);
        let x = b.sub(&v.scale(&c));
        cols = Some(match cols {
            Some(m) => m.hstack(&x),
            None => x,
        });
    }
    match cols {
        Some(m) => m.column_basis(),
        None => Matrix::zeros(field, v.rows(), 0),
    }
}

/// Stepwise isometry construction from the range of q into the range of p within one block.
/// Returns the partial isometry built before the search got stuck and whether it is complete.
fn star_witness_block(p: &Matrix, q: &Matrix) -> Result<(Matrix, bool)> {
    let field = p.field();
    let mut vr = p.column_basis();
    let mut ur = q.column_basis();
    let mut w = Matrix::zeros(field, p.rows(), p.cols());
    while vr.cols() > 0 && ur.cols() > 0 {
        let (vb, vn) = orthogonal_basis(&vr);
        let (ub, un) = orthogonal_basis(&ur);
        let vc = candidates(&vb, &vn, field);
        let uc = candidates(&ub, &un, field);
        let mut by_class: HashMap<BigInt, usize> = HashMap::new();
        for (k, (_, _, h)) in vc.iter().enumerate() {
            by_class.entry(class_of(h, field)?).or_insert(k);
        }
        let mut found = None;
        for (ui, (_, _, h)) in uc.iter().enumerate() {
            if let Some(&vi) = by_class.get(&class_of(h, field)?) {
                found = Some((ui, vi));
                break;
            }
        }
        let Some((ui, vi)) = found else { return Ok((w, false)) };
        let u = combine(&ub, &uc[ui].0, &uc[ui].1, field);
        let v = combine(&vb, &vc[vi].0, &vc[vi].1, field);
        let target = (&uc[ui].2 * &vc[vi].2).recip();
        let c = norm_root(&target, field)?.ok_or_else(|| Error::Construction("norm equation unsolved".into()))?;
        w = w.add(&v.mul(&u.adjoint()).scale(&c));
        vr = complement_in(&vb, &v);
        ur = complement_in(&ub, &u);
    }
    Ok((w, vr.cols() == 0 && ur.cols() == 0))
}

/// A *-equivalence witness for p ∼* q, block by block, by stepwise isometry construction.
/// `None` means no witness was found; over ℚ(i) this is decisive only together with the invariants.
pub fn find_star_witness(p: &Projection, q: &Projection) -> Result<Option<PartialIsometryWitness>> {
    let mut blocks = Vec::new();
    for (pb, qb) in p.element().blocks().iter().zip(q.element().blocks()) {
        match star_witness_block(pb, qb)? {
            (w, true) => blocks.push(w),
            (_, false) => return Ok(None),
        }
    }
    let w = Element::new(p.element().field(), blocks)?;
    PartialIsometryWitness::new(w, q.clone(), p.clone()).map(Some)
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum StarVerdict {
    StarEquivalent { witness: PartialIsometryWitness },
    NotStarEquivalent { p: HermitianClassInvariant, q: HermitianClassInvariant, equivalent: bool },
}

impl StarVerdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, StarVerdict::StarEquivalent { .. })
    }
}

/// Decides p ∼* q for projections of a single block over ℚ(i) by rank and discriminant class.
pub fn decide_star_equivalence(p: &Projection, q: &Projection) -> Result<StarVerdict> {
    let (pe, qe) = (p.element(), q.element());
    if pe.field() != Field::QI || pe.blocks().len() != 1 || qe.shape() != pe.shape() {
        return Err(Error::Input("decision needs two projections of one block over ℚ(i)".into()));
    }
    let pi = hermitian_invariant(pe.block(0))?;
    let qi = hermitian_invariant(qe.block(0))?;
    if pi != qi {
        let equivalent = pi.rank == qi.rank;
        return Ok(StarVerdict::NotStarEquivalent { p: pi, q: qi, equivalent });
    }
    if p == q {
        let witness = PartialIsometryWitness::new(pe.clone(), p.clone(), p.clone())?;
        return Ok(StarVerdict::StarEquivalent { witness });
    }
    match find_star_witness(p, q)? {
        Some(witness) => Ok(StarVerdict::StarEquivalent { witness }),
        None => Err(Error::Construction("isometry search budget exhausted for matching invariants".into())),
    }
}

/// Returns *-equivalent subprojections of the residuals with small enough defect.
pub trait SubEquivOracle {
    /// p_n ≤ p', q_n ≤ q', w with w·w* = p_n, w*·w = q_n and N(p' − p_n), N(q' − q_n) < bound.
    fn sub_equivalent(
        &self,
        p: &Projection,
        q: &Projection,
        bound: &BigRational,
        stage: usize,
    ) -> Result<(Projection, Projection, PartialIsometryWitness)>;
}

/// Oracle backed by the stepwise isometry search: matches as much of the two ranges as it can.
pub struct SearchOracle;

impl SubEquivOracle for SearchOracle {
    fn sub_equivalent(
        &self,
        p: &Projection,
        q: &Projection,
        _bound: &BigRational,
        _stage: usize,
    ) -> Result<(Projection, Projection, PartialIsometryWitness)> {
        let field = p.element().field();
        let mut blocks = Vec::new();
        for (pb, qb) in p.element().blocks().iter().zip(q.element().blocks()) {
            blocks.push(star_witness_block(pb, qb)?.0);
        }
        let w = Element::new(field, blocks)?;
        let pn = Projection::new(w.mul(&w.adjoint()))?;
        let qn = Projection::new(w.adjoint().mul(&w))?;
        let witness = PartialIsometryWitness::new(w, qn.clone(), pn.clone())?;
        Ok((pn, qn, witness))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionStage {
    pub stage: usize,
    pub p_n: Projection,
    pub q_n: Projection,
    pub w_n: Element,
    #[serde(with = "rational_str")]
    pub residual_p: BigRational,
    #[serde(with = "rational_str")]
    pub residual_q: BigRational,
    #[serde(with = "rational_str")]
    pub n_w: BigRational,
    #[serde(with = "rational_str")]
    pub tail_bound: BigRational,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionTranscript {
    pub stages: Vec<ExhaustionStage>,
    pub partial_isometry: Element,
    pub terminated: bool,
}

fn pow2_inv(n: usize) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << n)
}

/// Stage-by-stage exhaustion of p ∼ q by *-equivalent pieces with residuals below 2⁻ⁿ.
pub fn lp_rp_exhaustion(
    p: &Projection,
    q: &Projection,
    n: &PseudoRank,
    oracle: &dyn SubEquivOracle,
    stages: usize,
) -> Result<ExhaustionTranscript> {
    if p.element().block_ranks() != q.element().block_ranks() {
        return Err(Error::Precondition("p and q are not equivalent".into()));
    }
    let field = p.element().field();
    let shape = p.element().shape();
    let mut sum_p = Element::zero(field, &shape);
    let mut sum_q = Element::zero(field, &shape);
    let mut sum_w = Element::zero(field, &shape);
    let mut out = Vec::new();
    let mut terminated = false;
    let n_p = n.eval(p.element())?;
    for stage in 1..=stages {
        let rp_ = Projection::new(p.element().sub(&sum_p))?;
        let rq_ = Projection::new(q.element().sub(&sum_q))?;
        let bound = pow2_inv(stage);
        let fail = |reason: String| Error::Oracle { stage, reason };
        let (pn, qn, wn) = oracle.sub_equivalent(&rp_, &rq_, &bound, stage)?;
        if wn.target != pn || wn.source != qn {
            return Err(fail("witness does not match the returned projections".into()));
        }
        if !pn.le(&rp_) || !qn.le(&rq_) {
            return Err(fail("returned projections are not below the residuals".into()));
        }
        sum_p = sum_p.add(pn.element());
        sum_q = sum_q.add(qn.element());
        sum_w = sum_w.add(&wn.w);
        let residual_p = n.dist(p.element(), &sum_p)?;
        let residual_q = n.dist(q.element(), &sum_q)?;
        if residual_p >= bound || residual_q >= bound {
            return Err(fail(format!(
                "residuals {} and {} are not below 2^-{stage}",
                rational_str::to_string(&residual_p),
                rational_str::to_string(&residual_q)
            )));
        }
        let n_w = n.eval(&wn.w)?;
        let tail_bound = if stage == 1 { n_p.clone() } else { pow2_inv(stage - 1) };
        let tail_ok = if stage == 1 { n_w <= tail_bound } else { n_w < tail_bound };
        if !tail_ok {
            return Err(Error::Assertion(format!("stage {stage}: N(w_n) exceeds the tail bound")));
        }
        out.push(ExhaustionStage { stage, p_n: pn, q_n: qn, w_n: wn.w, residual_p, residual_q, n_w, tail_bound });
        if sum_p == *p.element() && sum_q == *q.element() {
            terminated = true;
            break;
        }
    }
    PartialIsometryWitness::new(sum_w.clone(), Projection::new(sum_q)?, Projection::new(sum_p)?)?;
    Ok(ExhaustionTranscript { stages: out, partial_isometry: sum_w, terminated })
}

/// A unital *-subalgebra u·φ(B)·u* of the ambient, with φ a standard embedding of B.
#[derive(Clone, Debug, Serialize)]
pub struct StarPresentation {
    pub field: Field,
    pub shape: Shape,
    pub ambient: Shape,
    pub mult: Vec<Vec<usize>>,
    pub u: Element,
}

impl StarPresentation {
    pub fn new(field: Field, shape: Shape, ambient: Shape, mult: Vec<Vec<usize>>, u: Element) -> Result<StarPresentation> {
        field.require_star()?;
        if u.shape() != ambient || !u.mul(&u.adjoint()).is_one() {
            return Err(Error::Precondition("presentation needs a unitary of the ambient".into()));
        }
        let pres = StarPresentation { field, shape, ambient, mult, u };
        if !standard_embedding(pres.field, &pres.shape, &pres.ambient, &pres.mult)?.is_unital() {
            return Err(Error::Precondition("presented subalgebra is not unital".into()));
        }
        Ok(pres)
    }

    pub fn standard(field: Field, shape: Shape, ambient: Shape, mult: Vec<Vec<usize>>) -> Result<StarPresentation> {
        let u = Element::one(field, &ambient);
        StarPresentation::new(field, shape, ambient, mult, u)
    }

    pub fn hom(&self) -> Result<crate::matalg::ConcreteHom> {
        standard_embedding(self.field, &self.shape, &self.ambient, &self.mult)?.conjugated(&self.u, &self.u.adjoint())
    }

    pub fn subalgebra(&self) -> Result<Subalgebra> {
        Subalgebra::conjugated_standard(self.field, &self.shape, &self.ambient, &self.mult, &self.u, &self.u.adjoint())
    }

    /// The presentation with every block enlarged t-fold, containing this one, when multiplicities allow.
    pub fn refined(&self, t: usize) -> Option<StarPresentation> {
        if t < 2 || self.mult.iter().flatten().any(|m| m % t != 0) {
            return None;
        }
        let shape = Shape::new(self.shape.sizes().iter().map(|n| n * t).collect()).ok()?;
        let mult = self.mult.iter().map(|r| r.iter().map(|m| m / t).collect()).collect();
        Some(StarPresentation { field: self.field, shape, ambient: self.ambient.clone(), mult, u: self.u.clone() })
    }
}

/// Diagonal image in every simple component of the presented algebra.
pub fn is_standard_projection(p: &Projection, pres: &StarPresentation) -> Result<bool> {
    let a = pres.subalgebra()?;
    Ok(a.coordinates(p.element()).is_some_and(|c| c.blocks().iter().all(Matrix::is_diagonal)))
}

fn standard_of_ranks(field: Field, shape: &Shape, ranks: &[usize]) -> Element {
    let blocks = shape
        .sizes()
        .iter()
        .zip(ranks)
        .map(|(&n, &r)| {
            let d: Vec<Scalar> = (0..n).map(|i| if i < r { field.one() } else { field.zero() }).collect();
            Matrix::diagonal(field, &d)
        })
        .collect();
    Element::new(field, blocks).expect("shape")
}

#[derive(Clone, Debug, Serialize)]
pub struct QuasiStandardWitness {
    pub standard: Element,
    pub w: Element,
}

/// Clause (1): a witness, in the presented coordinates, that p is *-equivalent to a standard projection.
pub fn quasi_standard_witness(p: &Projection, pres: &StarPresentation) -> Result<Option<QuasiStandardWitness>> {
    let a = pres.subalgebra()?;
    let coords = a
        .coordinates(p.element())
        .ok_or_else(|| Error::Precondition("projection is not in the presented subalgebra".into()))?;
    let pc = Projection::new(coords)?;
    let standard = Projection::new(standard_of_ranks(pres.field, &pres.shape, &pc.element().block_ranks()))?;
    if pres.field == Field::QI {
        for (pb, sb) in pc.element().blocks().iter().zip(standard.element().blocks()) {
            if hermitian_invariant(pb)? != hermitian_invariant(sb)? {
                return Ok(None);
            }
        }
    }
    Ok(find_star_witness(&standard, &pc)?.map(|w| QuasiStandardWitness {
        standard: a.to_ambient(standard.element()),
        w: a.to_ambient(&w.w),
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct HereditaryEntry {
    pub sub: Projection,
    pub enlarged: StarPresentation,
    pub shrunk: Projection,
    #[serde(with = "rational_str")]
    pub defect: BigRational,
    pub witness: QuasiStandardWitness,
    pub nested: Vec<HereditaryEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HqsCertificate {
    pub witness: QuasiStandardWitness,
    #[serde(with = "rational_str")]
    pub eps: BigRational,
    pub depth: usize,
    pub entries: Vec<HereditaryEntry>,
}

fn contains_all(big: &StarPresentation, small: &StarPresentation) -> Result<bool> {
    let sa = big.subalgebra()?;
    let hom = small.hom()?;
    for (b, &n) in small.shape.sizes().iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                if !sa.contains(hom.image(b, i, j)) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Rank-one subprojections of p in the presented coordinates, mapped to the ambient.
fn rank_one_pieces(p: &Projection, pres: &StarPresentation) -> Result<Vec<Projection>> {
    let a = pres.subalgebra()?;
    let coords = a
        .coordinates(p.element())
        .ok_or_else(|| Error::Precondition("projection is not in the presented subalgebra".into()))?;
    let shape = coords.shape();
    let mut out = Vec::new();
    for (b, blk) in coords.blocks().iter().enumerate() {
        let (basis, _) = orthogonal_basis(&blk.column_basis());
        for v in basis {
            let mut e = Element::zero(pres.field, &shape);
            *e.block_mut(b) = lp_matrix(&v);
            out.push(Projection::new(a.to_ambient(&e))?);
        }
    }
    Ok(out)
}

/// p'' ≤ p' inside some A' ⊇ A with N(p' − p'') < ε and p'' quasi-standard in A'.
fn hereditary_entry(
    sub: &Projection,
    pres: &StarPresentation,
    n: &PseudoRank,
    eps: &BigRational,
    depth: usize,
) -> Result<Option<HereditaryEntry>> {
    let mut attempts: Vec<(StarPresentation, Projection)> = Vec::new();
    for t in [2usize, 3, 4] {
        if let Some(r) = pres.refined(t) {
            if contains_all(&r, pres)? {
                attempts.push((r, sub.clone()));
            }
        }
    }
    attempts.push((pres.clone(), sub.clone()));
    for piece in rank_one_pieces(sub, pres)? {
        attempts.push((pres.clone(), Projection::new(sub.element().sub(piece.element()))?));
    }
    for (enlarged, shrunk) in attempts {
        let defect = n.dist(sub.element(), shrunk.element())?;
        if defect >= *eps || !shrunk.le(sub) {
            continue;
        }
        if let Some(witness) = quasi_standard_witness(&shrunk, &enlarged)? {
            let half = eps / BigRational::from_integer(2.into());
            let nested = if depth > 1 {
                match hereditary_entry(&shrunk, &enlarged, n, &half, depth - 1)? {
                    Some(e) => vec![e],
                    None => continue,
                }
            } else {
                Vec::new()
            };
            return Ok(Some(HereditaryEntry { sub: sub.clone(), enlarged, shrunk, defect, witness, nested }));
        }
    }
    Ok(None)
}

/// Certifies clause (1) and, for p itself and the given subprojections (its rank-one coordinate
/// pieces when none are given), clause (2) at tolerance ε, recursing `depth` levels.
pub fn certify_hereditarily_quasi_standard(
    p: &Projection,
    pres: &StarPresentation,
    family: &[Projection],
    n: &PseudoRank,
    eps: &BigRational,
    depth: usize,
) -> Result<HqsCertificate> {
    let witness = quasi_standard_witness(p, pres)?.ok_or_else(|| Error::Certification {
        clause: 1,
        reason: "the range form is not *-equivalent to a diagonal one".into(),
    })?;
    let mut subs: Vec<Projection> = family.to_vec();
    if subs.is_empty() {
        subs.push(p.clone());
        subs.extend(rank_one_pieces(p, pres)?);
    }
    let mut entries = Vec::new();
    if depth > 0 {
        for sub in &subs {
            if !sub.le(p) {
                return Err(Error::Precondition("family member is not a subprojection of p".into()));
            }
            match hereditary_entry(sub, pres, n, eps, depth)? {
                Some(e) => entries.push(e),
                None => {
                    return Err(Error::Certification {
                        clause: 2,
                        reason: format!(
                            "no enlargement found for a subprojection of rank {} within ε = {}",
                            rational_str::to_string(&n.eval(sub.element())?),
                            rational_str::to_string(eps)
                        ),
                    })
                }
            }
        }
    }
    Ok(HqsCertificate { witness, eps: eps.clone(), depth, entries })
}

/// Re-verifies every identity recorded in a certificate.
pub fn verify_hqs_certificate(p: &Projection, pres: &StarPresentation, cert: &HqsCertificate, n: &PseudoRank) -> Result<bool> {
    fn check_witness(p: &Element, w: &QuasiStandardWitness) -> bool {
        let ws = w.w.adjoint();
        w.w.mul(&ws) == w.standard && ws.mul(&w.w) == *p
    }
    fn check_entry(e: &HereditaryEntry, outer: &StarPresentation, n: &PseudoRank, eps: &BigRational) -> Result<bool> {
        let ok = e.shrunk.le(&e.sub)
            && n.dist(e.sub.element(), e.shrunk.element())? < *eps
            && contains_all(&e.enlarged, outer)?
            && e.enlarged.subalgebra()?.contains(e.shrunk.element())
            && is_standard_projection(&Projection::new(e.witness.standard.clone())?, &e.enlarged)?
            && check_witness(e.shrunk.element(), &e.witness);
        let half = eps / BigRational::from_integer(2.into());
        let mut nested_ok = true;
        for inner in &e.nested {
            nested_ok &= check_entry(inner, &e.enlarged, n, &half)?;
        }
        Ok(ok && nested_ok)
    }
    let mut ok = check_witness(p.element(), &cert.witness)
        && is_standard_projection(&Projection::new(cert.witness.standard.clone())?, pres)?;
    for e in &cert.entries {
        ok &= check_entry(e, pres, n, &cert.eps)?;
    }
    Ok(ok)
}

/// Cayley transform (1 − S)(1 + S)⁻¹ of a random skew-hermitian S: a unitary with small entries.
pub fn random_unitary<R: rand::Rng + ?Sized>(field: Field, shape: &Shape, rng: &mut R, bound: i64) -> Result<Element> {
    field.require_star()?;
    let x = Element::random(field, shape, rng, bound);
    let s = x.sub(&x.adjoint());
    let one = Element::one(field, shape);
    let mut blocks = Vec::new();
    for (sb, ob) in s.blocks().iter().zip(one.blocks()) {
        let inv = ob.add(sb).inverse().ok_or(Error::NotPositiveDefinite(field))?;
        blocks.push(ob.sub(sb).mul(&inv));
    }
    Element::new(field, blocks)
}
