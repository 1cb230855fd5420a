//! Quasi-inverses, principal one-sided ideals and idempotent correction in matricial algebras.

use num_rational::BigRational;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::matalg::{Element, PseudoRank, Subalgebra};
use crate::scalar::{rational_str, Field};

fn per_block(x: &Element, f: impl Fn(&Matrix) -> Matrix) -> Element {
    Element::new(x.field(), x.blocks().iter().map(f).collect()).expect("same shape")
}

/// Quasi-inverse of one block from the rank factorization x = C·R with pivot-order complements.
pub fn quasi_inverse_matrix(x: &Matrix) -> Matrix {
    let field = x.field();
    let (rref, piv) = x.rref();
    let r = piv.len();
    if r == 0 {
        return Matrix::zeros(field, x.cols(), x.rows());
    }
    let c = x.select_cols(&piv);
    let (_, row_piv) = c.transpose().rref();
    let ct_inv = c.select_rows(&row_piv).inverse().expect("independent rows");
    debug_assert_eq!(rref.block(0, 0, r, x.cols()).select_cols(&piv), Matrix::identity(field, r));
    // y = S·L with S selecting pivot columns of R and L a left inverse of C supported on row_piv.
    let mut y = Matrix::zeros(field, x.cols(), x.rows());
    for (k, &pc) in piv.iter().enumerate() {
        for (t, &pr) in row_piv.iter().enumerate() {
            y[(pc, pr)] = ct_inv[(k, t)].clone();
        }
    }
    y
}

/// Some y with x·y·x = x and y·x·y = y.
pub fn quasi_inverse(x: &Element) -> Element {
    let y = per_block(x, quasi_inverse_matrix);
    debug_assert!(x.mul(&y).mul(x) == *x && y.mul(x).mul(&y) == y);
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdealKind {
    /// m = b·a
    Left,
    /// m = a·c
    Right,
    /// m = b·a·c
    Corner,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdealMembershipCertificate {
    pub kind: IdealKind,
    pub witnesses: Vec<Element>,
}

impl IdealMembershipCertificate {
    pub fn verify(&self, m: &Element, a: &Element) -> bool {
        match (self.kind, self.witnesses.as_slice()) {
            (IdealKind::Left, [b]) => b.mul(a) == *m,
            (IdealKind::Right, [c]) => a.mul(c) == *m,
            (IdealKind::Corner, [b, c]) => b.mul(a).mul(c) == *m,
            _ => false,
        }
    }
}

/// A certificate m = b·a, found iff every block's row space of m lies in that of a.
pub fn in_left_ideal(m: &Element, a: &Element) -> Option<IdealMembershipCertificate> {
    let blocks = m
        .blocks()
        .iter()
        .zip(a.blocks())
        .map(|(mb, ab)| ab.solve_left(mb))
        .collect::<Option<Vec<_>>>()?;
    let b = Element::new(m.field(), blocks).ok()?;
    Some(IdealMembershipCertificate { kind: IdealKind::Left, witnesses: vec![b] })
}

/// A certificate m = a·c, found iff every block's column space of m lies in that of a.
pub fn in_right_ideal(m: &Element, a: &Element) -> Option<IdealMembershipCertificate> {
    let blocks =
        m.blocks().iter().zip(a.blocks()).map(|(mb, ab)| ab.solve(mb)).collect::<Option<Vec<_>>>()?;
    let c = Element::new(m.field(), blocks).ok()?;
    Some(IdealMembershipCertificate { kind: IdealKind::Right, witnesses: vec![c] })
}

/// An idempotent g with g·A = m·A.
pub fn right_ideal_generator(m: &Element) -> Element {
    m.mul(&quasi_inverse(m))
}

/// An idempotent g with A·g = A·m.
pub fn left_ideal_generator(m: &Element) -> Element {
    quasi_inverse(m).mul(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NearMode {
    /// g² = g and x − g ∈ A(x − x²).
    Weak,
    /// additionally g ∈ xA ∩ Ax and x·g = g.
    Strong,
}

/// How the kernel of g is completed around ker x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Complement {
    /// Fitting decomposition of x − 1.
    Fitting,
    /// The orthogonal complement of ker(x − 1); yields a projection when x is self-adjoint.
    Orthogonal,
}

#[derive(Clone, Debug)]
pub struct NearIdempotent {
    pub g: Element,
    pub mode: NearMode,
    /// x − g = b·(x − x²)
    pub certificate: IdealMembershipCertificate,
}

fn near_block(x: &Matrix, complement: Complement) -> Matrix {
    let field = x.field();
    let n = x.rows();
    let id = Matrix::identity(field, n);
    let xm1 = x.sub(&id);
    let e1 = xm1.kernel();
    if e1.cols() == 0 {
        return Matrix::zeros(field, n, n);
    }
    if e1.cols() == n {
        return id;
    }
    let w = match complement {
        Complement::Orthogonal if field.is_positive_definite() => {
            let w = e1.adjoint().kernel();
            let kx = x.kernel();
            if kx.cols() == 0 || w.hstack(&kx).rank() == w.cols() {
                Some(w)
            } else {
                None
            }
        }
        _ => None,
    };
    let w = w.unwrap_or_else(|| {
        let mut pow = xm1.clone();
        for _ in 1..n {
            pow = pow.mul(&xm1);
        }
        let rest = pow.column_basis();
        let f1 = pow.kernel();
        let mut span = e1.clone();
        let mut extra: Option<Matrix> = None;
        for c in 0..f1.cols() {
            let v = f1.select_cols(&[c]);
            let trial = span.hstack(&v);
            if trial.rank() > span.rank() {
                span = trial;
                extra = Some(match extra {
                    Some(e) => e.hstack(&v),
                    None => v,
                });
            }
        }
        match extra {
            Some(e) if rest.cols() > 0 => rest.hstack(&e),
            Some(e) => e,
            None => rest,
        }
    });
    let basis = e1.hstack(&w);
    let inv = basis.inverse().expect("E₁ ⊕ W spans");
    let mut d = Matrix::zeros(field, n, n);
    for i in 0..e1.cols() {
        d[(i, i)] = field.one();
    }
    basis.mul(&d).mul(&inv)
}

fn brute_force_block(x: &Matrix, mode: NearMode) -> Option<Matrix> {
    let Field::GF(p) = x.field() else { return None };
    let n = x.rows();
    let count = (p as u128).checked_pow((n * n) as u32)?;
    if n > 3 || count > 1_000_000 {
        return None;
    }
    let field = x.field();
    let e = Element::single(x.clone());
    for code in 0..count as u64 {
        let mut c = code;
        let mut g = Matrix::zeros(field, n, n);
        for r in 0..n {
            for k in 0..n {
                g[(r, k)] = field.from_i64((c % p) as i64);
                c /= p;
            }
        }
        let ge = Element::single(g.clone());
        if check_near(&e, &ge, mode).is_ok() {
            return Some(g);
        }
    }
    None
}

fn check_near(x: &Element, g: &Element, mode: NearMode) -> Result<IdealMembershipCertificate> {
    if !g.is_idempotent() {
        return Err(Error::Construction("candidate is not idempotent".into()));
    }
    let defect = x.sub(&x.mul(x));
    let cert = in_left_ideal(&x.sub(g), &defect)
        .ok_or_else(|| Error::Construction("x − g ∉ A(x − x²)".into()))?;
    if mode == NearMode::Strong {
        if in_right_ideal(g, x).is_none() {
            return Err(Error::Construction("g ∉ xA".into()));
        }
        if in_left_ideal(g, x).is_none() {
            return Err(Error::Construction("g ∉ Ax".into()));
        }
        if x.mul(g) != *g {
            return Err(Error::Construction("x·g ≠ g".into()));
        }
    }
    Ok(cert)
}

/// Idempotent correction of x inside its own matricial algebra, with verified postconditions.
///
/// g is the projection onto ker(x − 1) along a complement containing ker x; any failed
/// postcondition falls back to exhaustive search on tiny prime-field blocks and is otherwise an error.
pub fn idempotent_near_with(x: &Element, mode: NearMode, complement: Complement) -> Result<NearIdempotent> {
    let mut blocks = Vec::new();
    for (b, m) in x.blocks().iter().enumerate() {
        let g = near_block(m, complement);
        let ok = check_near(&Element::single(m.clone()), &Element::single(g.clone()), mode);
        match ok {
            Ok(_) => blocks.push(g),
            Err(e) => match brute_force_block(m, mode) {
                Some(g) => blocks.push(g),
                None => return Err(Error::Construction(format!("block {b}: {e}"))),
            },
        }
    }
    let g = Element::new(x.field(), blocks)?;
    let certificate = check_near(x, &g, mode)?;
    Ok(NearIdempotent { g, mode, certificate })
}

pub fn idempotent_near_coords(x: &Element, mode: NearMode) -> Result<NearIdempotent> {
    idempotent_near_with(x, mode, Complement::Fitting)
}

/// Idempotent correction for an element of a subalgebra A, returned in ambient form.
pub fn idempotent_near(x: &Element, a: &Subalgebra, mode: NearMode) -> Result<NearIdempotent> {
    let c = a.coordinates(x).ok_or_else(|| Error::Precondition("x ∉ A".into()))?;
    let r = idempotent_near_coords(&c, mode)?;
    let g = a.to_ambient(&r.g);
    let witnesses = r.certificate.witnesses.iter().map(|w| a.to_ambient(w)).collect();
    let certificate = IdealMembershipCertificate { kind: r.certificate.kind, witnesses };
    debug_assert!(certificate.verify(&x.sub(&g), &x.sub(&x.mul(x))));
    Ok(NearIdempotent { g, mode, certificate })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectionReport {
    #[serde(with = "rational_str")]
    pub eps: BigRational,
    #[serde(with = "rational_str")]
    pub dist_rho_x: BigRational,
    #[serde(with = "rational_str")]
    pub dist_rho_g: BigRational,
    #[serde(with = "rational_str")]
    pub bound: BigRational,
    pub holds: bool,
}

/// Runs the correction and checks N(ρ(1) − g) < 4ε given N(ρ(1) − x) < ε.
pub fn idempotent_correction_bound(
    rho1: &Element,
    x: &Element,
    a: &Subalgebra,
    n: &PseudoRank,
    eps: &BigRational,
) -> Result<(NearIdempotent, CorrectionReport)> {
    if !rho1.is_idempotent() {
        return Err(Error::Precondition("ρ(1) is not idempotent".into()));
    }
    let dist_rho_x = n.dist(rho1, x)?;
    if dist_rho_x >= *eps {
        return Err(Error::Precondition(format!(
            "N(ρ(1) − x) = {} is not < ε = {}",
            rational_str::to_string(&dist_rho_x),
            rational_str::to_string(eps)
        )));
    }
    let near = idempotent_near(x, a, NearMode::Weak)?;
    let dist_rho_g = n.dist(rho1, &near.g)?;
    let bound = eps * BigRational::from_integer(4.into());
    let holds = dist_rho_g < bound;
    Ok((near, CorrectionReport { eps: eps.clone(), dist_rho_x, dist_rho_g, bound, holds }))
}
