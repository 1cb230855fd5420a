//! Matrix-unit stabilization: approximate matrix units near a subalgebra are replaced by exact
//! matrix units inside it, with every intermediate rank inequality audited.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::matalg::{standard_embedding, verify_matrix_units, ConcreteHom, Element, PseudoRank, Shape, Subalgebra};
use crate::regular::{idempotent_near_with, left_ideal_generator, right_ideal_generator, Complement, NearMode};
use crate::scalar::{rational_str, Field};
use crate::star::{lp, Projection};

pub const INSTANCE_SCHEMA: &str = "vnfactor.stabilization-instance/1";
pub const RESULT_SCHEMA: &str = "vnfactor.stabilization-result/1";

fn pow2(k: usize) -> BigInt {
    BigInt::one() << k
}

/// K(1) = 4, K(p) = (2^{p+3} + 2^p − 2)·K(p−1) + 2^{p+3} + 2^p.
pub fn k_constant(p: usize) -> BigInt {
    assert!(p >= 1, "K(p) needs p ≥ 1");
    let mut k = BigInt::from(4);
    for q in 2..=p {
        k = (pow2(q + 3) + pow2(q) - 2) * k + pow2(q + 3) + pow2(q);
    }
    k
}

/// K*(1) = 16, K*(p) = (2^{p+5} + 2^p − 2)·K*(p−1) + 2^{p+5} + 2^p.
pub fn k_star_constant(p: usize) -> BigInt {
    assert!(p >= 1, "K*(p) needs p ≥ 1");
    let mut k = BigInt::from(16);
    for q in 2..=p {
        k = (pow2(q + 5) + pow2(q) - 2) * k + pow2(q + 5) + pow2(q);
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Published,
    ArtifactDefined,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantEntry {
    pub p: usize,
    #[serde(serialize_with = "ser_big")]
    pub k: BigInt,
    #[serde(serialize_with = "ser_big")]
    pub k_star: BigInt,
    pub k_star_provenance: Provenance,
}

fn ser_big<S: serde::Serializer>(b: &BigInt, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&b.to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantLedger {
    pub entries: Vec<ConstantEntry>,
}

impl ConstantLedger {
    pub fn up_to(p: usize) -> ConstantLedger {
        let entries = (1..=p)
            .map(|q| ConstantEntry {
                p: q,
                k: k_constant(q),
                k_star: k_star_constant(q),
                k_star_provenance: Provenance::ArtifactDefined,
            })
            .collect();
        ConstantLedger { entries }
    }
}

/// A = u·φ(M)·u⁻¹ for a standard embedding φ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgebraPresentation {
    pub field: Field,
    pub shape: Shape,
    pub ambient: Shape,
    pub mult: Vec<Vec<usize>>,
    pub u: Element,
    pub u_inv: Element,
}

impl AlgebraPresentation {
    pub fn new(field: Field, shape: Shape, ambient: Shape, mult: Vec<Vec<usize>>, u: Element, u_inv: Element) -> Result<AlgebraPresentation> {
        if u.shape() != ambient || !u.mul(&u_inv).is_one() {
            return Err(Error::Precondition("u·u⁻¹ ≠ 1".into()));
        }
        let pres = AlgebraPresentation { field, shape, ambient, mult, u, u_inv };
        if !standard_embedding(pres.field, &pres.shape, &pres.ambient, &pres.mult)?.is_unital() {
            return Err(Error::Precondition("presented subalgebra is not unital".into()));
        }
        Ok(pres)
    }

    pub fn hom(&self) -> Result<ConcreteHom> {
        standard_embedding(self.field, &self.shape, &self.ambient, &self.mult)?.conjugated(&self.u, &self.u_inv)
    }

    pub fn subalgebra(&self) -> Result<Subalgebra> {
        Subalgebra::conjugated_standard(self.field, &self.shape, &self.ambient, &self.mult, &self.u, &self.u_inv)
    }

    pub fn is_star(&self) -> bool {
        self.u_inv == self.u.adjoint()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilizationInstance {
    pub schema: String,
    pub field: Field,
    pub p: usize,
    pub algebra: AlgebraPresentation,
    pub rank: PseudoRank,
    /// ρ(e_ij) at index i·p + j.
    pub rho: Vec<Element>,
    /// x_ij ∈ A at index i·p + j.
    pub approximants: Vec<Element>,
    #[serde(with = "rational_str")]
    pub eps: BigRational,
    #[serde(with = "rational_str")]
    pub eps_observed: BigRational,
}

impl StabilizationInstance {
    pub fn new(
        p: usize,
        algebra: AlgebraPresentation,
        rank: PseudoRank,
        rho: Vec<Element>,
        approximants: Vec<Element>,
        eps: BigRational,
    ) -> Result<StabilizationInstance> {
        let field = algebra.field;
        let inst = StabilizationInstance {
            schema: INSTANCE_SCHEMA.into(),
            field,
            p,
            algebra,
            rank,
            rho,
            approximants,
            eps,
            eps_observed: BigRational::zero(),
        };
        let eps_observed = inst.validate()?;
        Ok(StabilizationInstance { eps_observed, ..inst })
    }

    /// Checks the instance invariants and returns max N(ρ(e_ij) − x_ij).
    pub fn validate(&self) -> Result<BigRational> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(Error::Input(format!("unsupported schema {}", self.schema)));
        }
        let p = self.p;
        if p == 0 || self.rho.len() != p * p || self.approximants.len() != p * p {
            return Err(Error::Input("ρ and the approximants need p² entries".into()));
        }
        let family: Vec<Vec<Element>> = (0..p).map(|i| self.rho[i * p..(i + 1) * p].to_vec()).collect();
        let verdict = verify_matrix_units(&family, false);
        if !verdict.pass {
            return Err(Error::Precondition(format!("ρ images are not matrix units: {:?}", verdict.first_violation)));
        }
        let a = self.algebra.subalgebra()?;
        let mut worst = BigRational::zero();
        for (k, (r, x)) in self.rho.iter().zip(&self.approximants).enumerate() {
            if !a.contains(x) {
                return Err(Error::Precondition(format!("x_{}{} ∉ A", k / p + 1, k % p + 1)));
            }
            let d = self.rank.dist(r, x)?;
            if d >= self.eps {
                return Err(Error::Precondition(format!(
                    "N(ρ(e_{}{}) − x) = {} is not < ε",
                    k / p + 1,
                    k % p + 1,
                    rational_str::to_string(&d)
                )));
            }
            worst = worst.max(d);
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<StabilizationInstance> {
        let inst: StabilizationInstance = serde_json::from_str(s)?;
        let observed = inst.validate()?;
        if observed != inst.eps_observed {
            return Err(Error::Input("recorded ε_observed does not match the instance".into()));
        }
        Ok(inst)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub field: Field,
    pub p: usize,
    pub ambient: usize,
    /// Rank of the perturbation u − 1 (of the skew generator in star mode).
    pub budget: usize,
    /// Coordinate rank of the noise added to every approximant.
    pub noise: usize,
    pub star: bool,
}

fn random_perturbation_unit(field: Field, n: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<(Element, Element)> {
    let one = Matrix::identity(field, n);
    if r == 0 {
        let e = Element::single(one);
        return Ok((e.clone(), e));
    }
    for _ in 0..64 {
        let a = Matrix::random(field, n, r, rng, 2);
        let b = Matrix::random(field, r, n, rng, 2);
        let u = one.add(&a.mul(&b));
        if let Some(ui) = u.inverse() {
            return Ok((Element::single(u), Element::single(ui)));
        }
    }
    Err(Error::Infeasible("no invertible perturbation found".into()))
}

fn random_low_rank_unitary(field: Field, n: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<(Element, Element)> {
    field.require_star()?;
    let one = Matrix::identity(field, n);
    if r == 0 {
        let e = Element::single(one);
        return Ok((e.clone(), e));
    }
    let a = Matrix::random(field, n, r, rng, 2);
    let b = Matrix::random(field, n, r, rng, 2);
    let s = a.mul(&b.adjoint()).sub(&b.mul(&a.adjoint()));
    let inv = one.add(&s).inverse().ok_or(Error::NotPositiveDefinite(field))?;
    let u = one.sub(&s).mul(&inv);
    let ua = u.adjoint();
    Ok((Element::single(u), Element::single(ua)))
}

/// A seeded instance in M_n with A = u·(M_{n/2} ⊗ 1₂)·u⁻¹ and ρ the standard embedding of M_p.
pub fn generate_instance(seed: u64, cfg: &GeneratorConfig) -> Result<StabilizationInstance> {
    let (field, p, n) = (cfg.field, cfg.p, cfg.ambient);
    if p == 0 || n % 2 != 0 || (n / 2) % p != 0 {
        return Err(Error::Input(format!("need p | n/2 (p = {p}, n = {n})")));
    }
    if 2 * cfg.budget + 2 * cfg.noise >= n {
        return Err(Error::Infeasible(format!("budget {} with noise {} cannot keep ε < 1 in M_{n}", cfg.budget, cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, u_inv) = if cfg.star {
        random_low_rank_unitary(field, n, cfg.budget, &mut rng)?
    } else {
        random_perturbation_unit(field, n, cfg.budget, &mut rng)?
    };
    let half = Shape::single(n / 2);
    let ambient = Shape::single(n);
    let algebra = AlgebraPresentation::new(field, half.clone(), ambient.clone(), vec![vec![2]], u.clone(), u_inv.clone())?;
    let a = algebra.subalgebra()?;
    let rho_hom = standard_embedding(field, &Shape::single(p), &ambient, &[vec![n / p]])?;
    let rho: Vec<Element> = (0..p * p).map(|k| rho_hom.image(0, k / p, k % p).clone()).collect();
    let plain = algebra_without_conjugation(&algebra)?;
    let mut approximants = Vec::with_capacity(p * p);
    for r in &rho {
        let mut c = plain.coordinates(r).ok_or_else(|| Error::Construction("ρ does not land in the standard image".into()))?;
        if cfg.noise > 0 {
            c = c.add(&Element::random_low_rank(field, &half, cfg.noise, &mut rng, 2));
        }
        approximants.push(a.to_ambient(&c));
    }
    let rank = PseudoRank::unit();
    let mut eps_observed = BigRational::zero();
    for (r, x) in rho.iter().zip(&approximants) {
        eps_observed = eps_observed.max(rank.dist(r, x)?);
    }
    let eps = &eps_observed + BigRational::new(BigInt::one(), BigInt::from(2 * n));
    let inst = StabilizationInstance::new(p, algebra, rank, rho, approximants, eps)?;
    debug_assert_eq!(inst.eps_observed, eps_observed);
    Ok(inst)
}

fn algebra_without_conjugation(alg: &AlgebraPresentation) -> Result<Subalgebra> {
    let one = Element::one(alg.field, &alg.ambient);
    Subalgebra::conjugated_standard(alg.field, &alg.shape, &alg.ambient, &alg.mult, &one, &one)
}

/// One inequality from the proof, both sides exact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub step: String,
    #[serde(with = "rational_str")]
    pub lhs: BigRational,
    #[serde(with = "rational_str")]
    pub rhs: BigRational,
    pub strict: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    pub entries: Vec<AuditEntry>,
}

impl Audit {
    fn check(&mut self, step: impl Into<String>, lhs: BigRational, rhs: BigRational, strict: bool) -> Result<()> {
        let holds = if strict { lhs < rhs } else { lhs <= rhs };
        let step = step.into();
        self.entries.push(AuditEntry { step: step.clone(), lhs: lhs.clone(), rhs: rhs.clone(), strict, holds });
        if holds {
            Ok(())
        } else {
            let rel = if strict { "<" } else { "≤" };
            Err(Error::Assertion(format!(
                "{step}: {} {rel} {} fails",
                rational_str::to_string(&lhs),
                rational_str::to_string(&rhs)
            )))
        }
    }

    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(|e| e.holds)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilizationResult {
    pub schema: String,
    pub p: usize,
    pub star: bool,
    pub shortcut: bool,
    /// ψ(e_ij) in the ambient at index i·p + j.
    pub units: Vec<Element>,
    #[serde(with = "rational_vec")]
    pub distances: Vec<BigRational>,
    #[serde(with = "rational_str")]
    pub eps: BigRational,
    #[serde(serialize_with = "ser_big")]
    pub constant: BigInt,
    /// max N(ρ(e_ij) − ψ(e_ij)) / ε.
    #[serde(with = "rational_str")]
    pub ratio: BigRational,
    pub audit: Audit,
}

mod rational_vec {
    use num_rational::BigRational;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(crate::scalar::rational_str::to_string))
    }
}

impl StabilizationResult {
    pub fn hom(&self, ambient: &Shape) -> Result<ConcreteHom> {
        ConcreteHom::new(Shape::single(self.p), ambient.clone(), vec![self.units.clone()])
    }
}

struct Ctx<'a> {
    a: &'a Subalgebra,
    n: &'a PseudoRank,
    rho: &'a [Element],
    x: Vec<Element>,
    p: usize,
    eps: &'a BigRational,
    star: bool,
    f: Option<Element>,
    audit: Audit,
}

fn r(k: &BigInt) -> BigRational {
    BigRational::from_integer(k.clone())
}

impl Ctx<'_> {
    fn d(&self, coords: &Element, i: usize, j: usize) -> Result<BigRational> {
        self.n.dist(&self.a.to_ambient(coords), &self.rho[i * self.p + j])
    }

    fn size(&self, coords: &Element) -> Result<BigRational> {
        self.n.eval(&self.a.to_ambient(coords))
    }

    fn lp(&self, m: &Element) -> Result<Element> {
        Ok(lp(m)?.into_element())
    }

    fn constant(&self, q: usize) -> BigInt {
        if self.star {
            k_star_constant(q)
        } else {
            k_constant(q)
        }
    }

    fn base(&mut self) -> Result<Vec<Element>> {
        let eps = self.eps.clone();
        let x11 = self.x[0].clone();
        let near = idempotent_near_with(&x11, NearMode::Weak, Complement::Fitting)?;
        let dg = self.d(&near.g, 0, 0)?;
        self.audit.check("p=1: N(ρ(e11) − g)", dg.clone(), &eps * BigRational::from_integer(4.into()), true)?;
        if !self.star {
            return Ok(vec![near.g]);
        }
        if let Some(f) = self.f.clone() {
            let df = self.d(&f, 0, 0)?;
            self.audit.check("p=1: N(ρ(e11) − f)", df, eps.clone(), true)?;
            return Ok(vec![f]);
        }
        let pr = self.lp(&near.g)?;
        let dp = self.d(&pr, 0, 0)?;
        self.audit.check("p=1: N(ρ(e11) − LP(g)) vs 4·N(ρ(e11) − g)", dp.clone(), dg * BigRational::from_integer(4.into()), false)?;
        self.audit.check("p=1: N(ρ(e11) − LP(g))", dp, &eps * r(&k_star_constant(1)), true)?;
        Ok(vec![pr])
    }

    /// Exact q×q matrix units in A's coordinates at index i·q + j.
    fn stab(&mut self, q: usize) -> Result<Vec<Element>> {
        if q == 1 {
            return self.base();
        }
        let y = self.stab(q - 1)?;
        let m = q - 1;
        let eps = self.eps.clone();
        let k = r(&self.constant(m));
        let field = self.a.field();
        let one = Element::one(field, self.a.shape());
        let last = q - 1;
        let mut z = self.x[last].clone();
        let mut zz = self.x[last * self.p].clone();
        let mut b = BigRational::one();
        for i in 0..m {
            let prod = z.mul(&y[i * m]);
            let g = if self.star { self.lp(&prod)? } else { right_ideal_generator(&prod) };
            let ng = self.size(&g)?;
            self.audit.check(format!("p={q}: N(g_{}) for (1,{q})", i + 1), ng, (&b + &k) * &eps, true)?;
            z = one.sub(&g).mul(&z);
            b = &b * BigRational::from_integer(2.into()) + &k;
            let dz = self.d(&z, 0, last)?;
            self.audit.check(format!("p={q}: N(z^({}) − ρ(e1{q}))", i + 1), dz, &b * &eps, true)?;
        }
        if self.star {
            zz = z.adjoint();
            let dzz = self.d(&zz, last, 0)?;
            self.audit.check(format!("p={q}: N(z' − ρ(e{q}1)) by isometry"), dzz, &b * &eps, true)?;
        } else {
            let mut bb = BigRational::one();
            for i in 0..m {
                let prod = y[i].mul(&zz);
                let g = left_ideal_generator(&prod);
                let ng = self.size(&g)?;
                self.audit.check(format!("p={q}: N(g_{}) for ({q},1)", i + 1), ng, (&bb + &k) * &eps, true)?;
                zz = zz.mul(&one.sub(&g));
                bb = &bb * BigRational::from_integer(2.into()) + &k;
                let dz = self.d(&zz, last, 0)?;
                self.audit.check(format!("p={q}: N(z^({}) − ρ(e{q}1))", i + 1), dz, &bb * &eps, true)?;
            }
        }
        for i in 0..m {
            if !z.mul(&y[i * m]).is_zero() || !y[i].mul(&zz).is_zero() {
                return Err(Error::Construction(format!("p={q}: orthogonalization against index {} failed", i + 1)));
            }
        }
        let x11 = &y[0];
        let xp = x11.mul(&z).mul(&zz).mul(x11);
        let two_q = BigRational::from_integer(pow2(q));
        let corner = (&k + BigRational::one()) * &two_q * &eps;
        let dxp = self.d(&xp, 0, 0)?;
        self.audit.check(format!("p={q}: N(x'11 − ρ(e11))"), dxp, corner.clone(), true)?;
        let defect = self.size(&xp.sub(&xp.mul(&xp)))?;
        self.audit.check(format!("p={q}: N(x'11 − x'11²)"), defect, &corner * BigRational::from_integer(3.into()), true)?;
        let complement = if self.star { Complement::Orthogonal } else { Complement::Fitting };
        let near = idempotent_near_with(&xp, NearMode::Strong, complement)?;
        let mut g = near.g;
        let dg = self.d(&g, 0, 0)?;
        let g_bound = &corner * BigRational::from_integer(4.into());
        self.audit.check(format!("p={q}: N(g − ρ(e11))"), dg.clone(), g_bound.clone(), true)?;
        let row_bound = if self.star {
            let pr = self.lp(&g)?;
            let dp = self.d(&pr, 0, 0)?;
            self.audit.check(format!("p={q}: N(LP(g) − ρ(e11)) vs 4·N(g − ρ(e11))"), dp.clone(), &dg * BigRational::from_integer(4.into()), false)?;
            let p_bound = &g_bound * BigRational::from_integer(4.into());
            self.audit.check(format!("p={q}: N(LP(g) − ρ(e11))"), dp, p_bound.clone(), true)?;
            g = pr;
            p_bound + &b * &eps
        } else {
            &g_bound + &b * &eps
        };
        if x11.mul(&g) != g || g.mul(x11) != g {
            return Err(Error::Construction(format!("p={q}: g ≰ x11")));
        }
        if self.star {
            if g.mul(&xp).mul(&g) != g {
                return Err(Error::Construction(format!("p={q}: P·x'·P ≠ P")));
            }
        } else if g.mul(&z).mul(&zz).mul(&g) != g {
            return Err(Error::Construction(format!("p={q}: g·z'·z''·g ≠ g")));
        }
        let mut row = vec![g.clone()];
        let mut col = vec![g.clone()];
        for i in 1..m {
            row.push(g.mul(&y[i]));
            col.push(y[i * m].mul(&g));
        }
        row.push(g.mul(&z));
        col.push(zz.mul(&g));
        if self.star {
            col = row.iter().map(Element::adjoint).collect();
        }
        for j in 0..q {
            let dr = self.d(&row[j], 0, j)?;
            self.audit.check(format!("p={q}: N(y1{} − ρ(e1{}))", j + 1, j + 1), dr, row_bound.clone(), true)?;
            let dc = self.d(&col[j], j, 0)?;
            self.audit.check(format!("p={q}: N(y{}1 − ρ(e{}1))", j + 1, j + 1), dc, row_bound.clone(), true)?;
        }
        let kq = r(&self.constant(q));
        let mut units = Vec::with_capacity(q * q);
        for i in 0..q {
            for j in 0..q {
                let u = col[i].mul(&row[j]);
                let du = self.d(&u, i, j)?;
                self.audit.check(format!("p={q}: N(ψ(e{}{}) − ρ(e{}{}))", i + 1, j + 1, i + 1, j + 1), du, &kq * &eps, true)?;
                units.push(u);
            }
        }
        Ok(units)
    }
}

fn run(inst: &StabilizationInstance, star: bool, f: Option<&Projection>, allow_shortcut: bool) -> Result<StabilizationResult> {
    inst.validate()?;
    let a = inst.algebra.subalgebra()?;
    if star {
        inst.field.require_star()?;
        if !inst.algebra.is_star() {
            return Err(Error::Precondition("star mode needs a unitary presentation".into()));
        }
    }
    let p = inst.p;
    let x = inst
        .approximants
        .iter()
        .map(|e| a.coordinates(e).ok_or_else(|| Error::Precondition("approximant ∉ A".into())))
        .collect::<Result<Vec<_>>>()?;
    let f_coords = match f {
        Some(f) => Some(a.coordinates(f.element()).ok_or_else(|| Error::Precondition("f ∉ A".into()))?),
        None => None,
    };
    let constant = if star { k_star_constant(p) } else { k_constant(p) };
    let shortcut_ok = allow_shortcut && f.is_none() && inst.rho.iter().zip(&inst.approximants).all(|(r, x)| r == x);
    let mut ctx = Ctx { a: &a, n: &inst.rank, rho: &inst.rho, x, p, eps: &inst.eps, star, f: f_coords, audit: Audit::default() };
    let (units, shortcut) = if shortcut_ok {
        (inst.rho.clone(), true)
    } else {
        let coords = ctx.stab(p)?;
        (coords.iter().map(|c| a.to_ambient(c)).collect(), false)
    };
    let family: Vec<Vec<Element>> = (0..p).map(|i| units[i * p..(i + 1) * p].to_vec()).collect();
    let verdict = verify_matrix_units(&family, star);
    if !verdict.pass {
        return Err(Error::Construction(format!("output is not a system of matrix units: {:?}", verdict.first_violation)));
    }
    if let Some(f) = f {
        let e11 = &units[0];
        if e11.mul(f.element()) != *e11 || f.element().mul(e11) != *e11 {
            return Err(Error::Construction("ψ(e11) ≰ f".into()));
        }
    }
    let mut distances = Vec::with_capacity(p * p);
    for (u, r) in units.iter().zip(&inst.rho) {
        distances.push(inst.rank.dist(u, r)?);
    }
    let worst = distances.iter().max().cloned().unwrap_or_else(BigRational::zero);
    let ratio = if inst.eps.is_zero() { BigRational::zero() } else { &worst / &inst.eps };
    ctx.audit.check(format!("final: max N(ρ(e_ij) − ψ(e_ij)) < {}·ε", constant), worst, r(&constant) * &inst.eps, true)?;
    Ok(StabilizationResult {
        schema: RESULT_SCHEMA.into(),
        p,
        star,
        shortcut,
        units,
        distances,
        eps: inst.eps.clone(),
        constant,
        ratio,
        audit: ctx.audit,
    })
}

/// Exact matrix units ψ(e_ij) ∈ A with N(ρ(e_ij) − ψ(e_ij)) < K(p)·ε, following the inductive proof.
/// Approximants equal to the ρ images are returned unchanged.
pub fn stabilize_matrix_units(inst: &StabilizationInstance) -> Result<StabilizationResult> {
    run(inst, false, None, true)
}

/// The inductive construction without the exact-input shortcut.
pub fn stabilize_matrix_units_full(inst: &StabilizationInstance) -> Result<StabilizationResult> {
    run(inst, false, None, false)
}

/// *-matrix units ψ(e_ij) ∈ A with N(ρ(e_ij) − ψ(e_ij)) < K*(p)·ε and, when f is given, ψ(e11) ≤ f.
pub fn stabilize_star(inst: &StabilizationInstance, f: Option<&Projection>) -> Result<StabilizationResult> {
    run(inst, true, f, true)
}

pub fn stabilize_star_full(inst: &StabilizationInstance, f: Option<&Projection>) -> Result<StabilizationResult> {
    run(inst, true, f, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use proptest::prelude::*;

    fn cfg(field: Field, p: usize, ambient: usize, budget: usize, noise: usize, star: bool) -> GeneratorConfig {
        GeneratorConfig { field, p, ambient, budget, noise, star }
    }

    #[test]
    fn constants() {
        assert_eq!(k_constant(1), BigInt::from(4));
        assert_eq!(k_constant(2), BigInt::from(172));
        assert_eq!(k_constant(3), BigInt::from(12112));
        assert_eq!(k_star_constant(1), BigInt::from(16));
        assert_eq!(k_star_constant(2), BigInt::from(130 * 16 + 132));
        let ledger = ConstantLedger::up_to(3);
        assert_eq!(ledger.entries[2].k, BigInt::from(12112));
        assert_eq!(ledger.entries[0].k_star_provenance, Provenance::ArtifactDefined);
    }

    #[test]
    fn exact_input_is_returned_unchanged() {
        let inst = generate_instance(5, &cfg(Field::Q, 2, 8, 0, 0, false)).unwrap();
        assert!(inst.eps_observed.is_zero());
        let short = stabilize_matrix_units(&inst).unwrap();
        assert!(short.shortcut);
        assert_eq!(short.units, inst.rho);
        let full = stabilize_matrix_units_full(&inst).unwrap();
        assert!(!full.shortcut);
        assert_eq!(full.units, inst.rho);
        assert!(full.distances.iter().all(Zero::is_zero));
    }

    #[test]
    fn base_case_bound() {
        let inst = generate_instance(1, &cfg(Field::Q, 1, 6, 1, 1, false)).unwrap();
        let out = stabilize_matrix_units(&inst).unwrap();
        assert_eq!(out.constant, BigInt::from(4));
        assert!(out.audit.all_hold());
    }

    #[test]
    fn rank_one_perturbation_budget() {
        let inst = generate_instance(9, &cfg(Field::Q, 2, 8, 1, 0, false)).unwrap();
        assert!(inst.eps_observed <= rat(2, 8));
        assert_eq!(inst.eps, &inst.eps_observed + rat(1, 16));
    }

    #[test]
    fn p2_and_p3_instances() {
        for (p, n) in [(2, 8), (3, 12)] {
            let inst = generate_instance(17, &cfg(Field::Q, p, n, 1, 1, false)).unwrap();
            let out = stabilize_matrix_units(&inst).unwrap();
            assert!(!out.shortcut);
            assert!(out.audit.all_hold());
            assert!(out.ratio < BigRational::from_integer(k_constant(p)));
            assert!(out.audit.entries.len() > p * p);
        }
    }

    #[test]
    fn star_instances() {
        let inst = generate_instance(23, &cfg(Field::QI, 2, 8, 1, 1, true)).unwrap();
        let out = stabilize_star(&inst, None).unwrap();
        assert!(out.audit.all_hold());
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.units[j * 2 + i], out.units[i * 2 + j].adjoint());
            }
        }
        assert!(stabilize_star(&generate_instance(2, &cfg(Field::Q, 1, 4, 1, 0, false)).unwrap(), None).is_err());
    }

    #[test]
    fn star_with_given_projection() {
        let inst = generate_instance(31, &cfg(Field::QI, 1, 6, 1, 1, true)).unwrap();
        let alg = &inst.algebra;
        let f = Projection::new(alg.u.mul(&inst.rho[0]).mul(&alg.u_inv)).unwrap();
        let mut wide = inst.clone();
        let df = inst.rank.dist(f.element(), &inst.rho[0]).unwrap();
        if df >= wide.eps {
            wide.eps = &df + rat(1, 12);
        }
        let out = stabilize_star(&wide, Some(&f)).unwrap();
        assert_eq!(&out.units[0], f.element());
        let inst2 = generate_instance(32, &cfg(Field::QI, 2, 8, 1, 1, true)).unwrap();
        let f2 = Projection::new(inst2.algebra.u.mul(&inst2.rho[0]).mul(&inst2.algebra.u_inv)).unwrap();
        let mut wide2 = inst2.clone();
        let df2 = inst2.rank.dist(f2.element(), &inst2.rho[0]).unwrap();
        if df2 >= wide2.eps {
            wide2.eps = &df2 + rat(1, 16);
        }
        let out2 = stabilize_star(&wide2, Some(&f2)).unwrap();
        let e11 = &out2.units[0];
        assert_eq!(e11.mul(f2.element()), *e11);
    }

    #[test]
    fn deterministic_and_serializable() {
        let c = cfg(Field::QI, 2, 8, 1, 1, false);
        let a = generate_instance(77, &c).unwrap();
        let b = generate_instance(77, &c).unwrap();
        let ja = a.to_json().unwrap();
        assert_eq!(ja, b.to_json().unwrap());
        let back = StabilizationInstance::from_json(&ja).unwrap();
        assert_eq!(back.to_json().unwrap(), ja);
        let ra = serde_json::to_string(&stabilize_matrix_units(&a).unwrap()).unwrap();
        let rb = serde_json::to_string(&stabilize_matrix_units(&b).unwrap()).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn infeasible_budget() {
        assert!(matches!(generate_instance(0, &cfg(Field::Q, 2, 8, 3, 1, false)), Err(Error::Infeasible(_))));
        assert!(matches!(generate_instance(0, &cfg(Field::Q, 3, 8, 0, 0, false)), Err(Error::Input(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn larger_eps_never_fails(seed in any::<u64>(), extra in 1i64..8) {
            let inst = generate_instance(seed, &cfg(Field::Q, 2, 8, 1, 1, false)).unwrap();
            let out = stabilize_matrix_units(&inst).unwrap();
            prop_assert!(out.audit.all_hold());
            let mut wide = inst.clone();
            wide.eps = &inst.eps + rat(extra, 8);
            prop_assert!(stabilize_matrix_units(&wide).unwrap().audit.all_hold());
        }
    }
}
