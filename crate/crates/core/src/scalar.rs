//! Exact scalars over ℚ, ℚ(i) and GF(p), with their involutions.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Involution {
    Identity,
    GaussianConjugation,
}

/// A coefficient field together with its involution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Q,
    QI,
    GF(u64),
}

pub type InvolutiveField = Field;

impl Field {
    pub fn gf(p: u64) -> Result<Field> {
        if !(2..(1 << 62)).contains(&p) || !is_prime_u64(p) {
            return Err(Error::Input(format!("gf modulus {p} is not a supported prime")));
        }
        Ok(Field::GF(p))
    }

    pub fn involution(&self) -> Involution {
        match self {
            Field::QI => Involution::GaussianConjugation,
            _ => Involution::Identity,
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        !matches!(self, Field::GF(_))
    }

    pub fn require_star(&self) -> Result<()> {
        if self.is_positive_definite() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite(*self))
        }
    }

    pub fn zero(&self) -> Scalar {
        self.from_i64(0)
    }

    pub fn one(&self) -> Scalar {
        self.from_i64(1)
    }

    pub fn from_i64(&self, v: i64) -> Scalar {
        match *self {
            Field::Q => Scalar::Q(BigRational::from_integer(v.into())),
            Field::QI => Scalar::QI(BigRational::from_integer(v.into()), BigRational::zero()),
            Field::GF(p) => Scalar::GF(v.rem_euclid(p as i64) as u64, p),
        }
    }

    pub fn from_rational(&self, r: &BigRational) -> Scalar {
        match *self {
            Field::Q => Scalar::Q(r.clone()),
            Field::QI => Scalar::QI(r.clone(), BigRational::zero()),
            Field::GF(p) => {
                let m = BigInt::from(p);
                let n = r.numer().mod_floor(&m);
                let d = r.denom().mod_floor(&m);
                let n: u64 = n.try_into().expect("residue");
                let d: u64 = d.try_into().expect("residue");
                assert!(d != 0, "denominator divisible by the characteristic");
                Scalar::GF(mulmod(n, powmod(d, p - 2, p), p), p)
            }
        }
    }

    /// The imaginary unit of ℚ(i).
    pub fn i(&self) -> Option<Scalar> {
        match self {
            Field::QI => Some(Scalar::QI(BigRational::zero(), BigRational::one())),
            _ => None,
        }
    }

    /// A random element with small integer (Gaussian integer) coordinates in [-bound, bound].
    pub fn random_small<R: Rng + ?Sized>(&self, rng: &mut R, bound: i64) -> Scalar {
        match *self {
            Field::Q => self.from_i64(rng.gen_range(-bound..=bound)),
            Field::QI => Scalar::QI(
                BigRational::from_integer(rng.gen_range(-bound..=bound).into()),
                BigRational::from_integer(rng.gen_range(-bound..=bound).into()),
            ),
            Field::GF(p) => Scalar::GF(rng.gen_range(0..p), p),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Q => write!(f, "q"),
            Field::QI => write!(f, "qi"),
            Field::GF(p) => write!(f, "gf:{p}"),
        }
    }
}

impl FromStr for Field {
    type Err = Error;
    fn from_str(s: &str) -> Result<Field> {
        match s {
            "q" => Ok(Field::Q),
            "qi" => Ok(Field::QI),
            _ => match s.strip_prefix("gf:") {
                Some(p) => Field::gf(
                    p.parse()
                        .map_err(|_| Error::Input(format!("bad gf modulus `{p}`")))?,
                ),
                None => Err(Error::Input(format!("unknown field `{s}` (expected q, qi or gf:p)"))),
            },
        }
    }
}

impl Serialize for Field {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Field {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Field, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An exact field element. `QI(a, b)` is a + b·i; `GF(v, p)` is v mod p.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Scalar {
    Q(BigRational),
    QI(BigRational, BigRational),
    GF(u64, u64),
}

impl Scalar {
    pub fn field(&self) -> Field {
        match self {
            Scalar::Q(_) => Field::Q,
            Scalar::QI(..) => Field::QI,
            Scalar::GF(_, p) => Field::GF(*p),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Q(a) => a.is_zero(),
            Scalar::QI(a, b) => a.is_zero() && b.is_zero(),
            Scalar::GF(v, _) => *v == 0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Scalar::Q(a) => a.is_one(),
            Scalar::QI(a, b) => a.is_one() && b.is_zero(),
            Scalar::GF(v, _) => *v == 1,
        }
    }

    pub fn zero_like(&self) -> Scalar {
        self.field().zero()
    }

    pub fn one_like(&self) -> Scalar {
        self.field().one()
    }

    pub fn belongs_to(&self, f: Field) -> bool {
        self.field() == f
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self) -> Option<Scalar> {
        if self.is_zero() {
            return None;
        }
        Some(match self {
            Scalar::Q(a) => Scalar::Q(a.recip()),
            Scalar::QI(a, b) => {
                let n = a * a + b * b;
                Scalar::QI(a / &n, -(b / &n))
            }
            Scalar::GF(v, p) => Scalar::GF(powmod(*v, p - 2, *p), *p),
        })
    }

    /// The field involution.
    pub fn conj(&self) -> Scalar {
        match self {
            Scalar::QI(a, b) => Scalar::QI(a.clone(), -b),
            other => other.clone(),
        }
    }

    /// x*·x as a rational, for the positive definite fields.
    pub fn norm(&self) -> Option<BigRational> {
        match self {
            Scalar::Q(a) => Some(a * a),
            Scalar::QI(a, b) => Some(a * a + b * b),
            Scalar::GF(..) => None,
        }
    }

    /// The rational value, if the element lies in the prime field ℚ.
    pub fn as_rational(&self) -> Option<BigRational> {
        match self {
            Scalar::Q(a) => Some(a.clone()),
            Scalar::QI(a, b) if b.is_zero() => Some(a.clone()),
            _ => None,
        }
    }

    /// Canonical form. Constructors already keep values canonical, so this is idempotent.
    pub fn normalized(&self) -> Scalar {
        match self {
            Scalar::Q(a) => Scalar::Q(BigRational::new(a.numer().clone(), a.denom().clone())),
            Scalar::QI(a, b) => Scalar::QI(
                BigRational::new(a.numer().clone(), a.denom().clone()),
                BigRational::new(b.numer().clone(), b.denom().clone()),
            ),
            Scalar::GF(v, p) => Scalar::GF(v % p, *p),
        }
    }
}

fn mismatch(a: &Scalar, b: &Scalar) -> ! {
    panic!("scalar field mismatch: {} vs {}", a.field(), b.field())
}

impl Add for &Scalar {
    type Output = Scalar;
    fn add(self, o: &Scalar) -> Scalar {
        match (self, o) {
            (Scalar::Q(a), Scalar::Q(b)) => Scalar::Q(a + b),
            (Scalar::QI(a, b), Scalar::QI(c, d)) => Scalar::QI(a + c, b + d),
            (Scalar::GF(a, p), Scalar::GF(b, q)) if p == q => Scalar::GF(addmod(*a, *b, *p), *p),
            _ => mismatch(self, o),
        }
    }
}

impl Sub for &Scalar {
    type Output = Scalar;
    fn sub(self, o: &Scalar) -> Scalar {
        self + &(-o)
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Q(a) => Scalar::Q(-a),
            Scalar::QI(a, b) => Scalar::QI(-a, -b),
            Scalar::GF(v, p) => Scalar::GF(if *v == 0 { 0 } else { p - v }, *p),
        }
    }
}

impl Mul for &Scalar {
    type Output = Scalar;
    fn mul(self, o: &Scalar) -> Scalar {
        match (self, o) {
            (Scalar::Q(a), Scalar::Q(b)) => Scalar::Q(a * b),
            (Scalar::QI(a, b), Scalar::QI(c, d)) => {
                if b.is_zero() && d.is_zero() {
                    Scalar::QI(a * c, BigRational::zero())
                } else {
                    Scalar::QI(a * c - b * d, a * d + b * c)
                }
            }
            (Scalar::GF(a, p), Scalar::GF(b, q)) if p == q => Scalar::GF(mulmod(*a, *b, *p), *p),
            _ => mismatch(self, o),
        }
    }
}

macro_rules! owned_binop {
    ($tr:ident, $m:ident) => {
        impl $tr for Scalar {
            type Output = Scalar;
            fn $m(self, o: Scalar) -> Scalar {
                (&self).$m(&o)
            }
        }
    };
}
owned_binop!(Add, add);
owned_binop!(Sub, sub);
owned_binop!(Mul, mul);

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        -&self
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Q(a) => write!(f, "{a}"),
            Scalar::QI(a, b) => {
                if b.is_zero() {
                    write!(f, "{a}")
                } else if a.is_zero() {
                    write!(f, "{b}i")
                } else if b.is_negative() {
                    write!(f, "{a}-{}i", -b)
                } else {
                    write!(f, "{a}+{b}i")
                }
            }
            Scalar::GF(v, p) => write!(f, "{v} (mod {p})"),
        }
    }
}

/// The involution applied to `x`, checking that `x` belongs to `f`.
pub fn involute(x: &Scalar, f: Field) -> Result<Scalar> {
    if !x.belongs_to(f) {
        return Err(Error::FieldMismatch { expected: f, found: x.field() });
    }
    Ok(x.conj())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdVerdict {
    Consistent,
    ZeroSumWithNonzeroEntry,
}

/// Tests Σ xᵢ*xᵢ = 0 against the presence of a nonzero entry.
pub fn check_positive_definite(xs: &[Scalar], f: Field) -> Result<PdVerdict> {
    let mut sum = f.zero();
    let mut any_nonzero = false;
    for x in xs {
        let c = involute(x, f)?;
        sum = &sum + &(&c * x);
        any_nonzero |= !x.is_zero();
    }
    Ok(if sum.is_zero() && any_nonzero {
        PdVerdict::ZeroSumWithNonzeroEntry
    } else {
        PdVerdict::Consistent
    })
}

pub(crate) fn addmod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + b as u128) % p as u128) as u64
}

pub(crate) fn mulmod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

pub(crate) fn powmod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1 % p;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, b, p);
        }
        b = mulmod(b, b, p);
        e >>= 1;
    }
    r
}

/// Deterministic Miller–Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ScalarRepr {
    Q { num: String, den: String },
    Qi { re_num: String, re_den: String, im_num: String, im_den: String },
    Gf { p: String, value: String },
}

fn parse_rational(num: &str, den: &str) -> std::result::Result<BigRational, String> {
    let n: BigInt = num.parse().map_err(|_| format!("bad numerator `{num}`"))?;
    let d: BigInt = den.parse().map_err(|_| format!("bad denominator `{den}`"))?;
    if d.is_zero() {
        return Err("zero denominator".into());
    }
    Ok(BigRational::new(n, d))
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Scalar::Q(a) => ScalarRepr::Q { num: a.numer().to_string(), den: a.denom().to_string() },
            Scalar::QI(a, b) => ScalarRepr::Qi {
                re_num: a.numer().to_string(),
                re_den: a.denom().to_string(),
                im_num: b.numer().to_string(),
                im_den: b.denom().to_string(),
            },
            Scalar::GF(v, p) => ScalarRepr::Gf { p: p.to_string(), value: v.to_string() },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Scalar, D::Error> {
        use serde::de::Error as _;
        Ok(match ScalarRepr::deserialize(d)? {
            ScalarRepr::Q { num, den } => Scalar::Q(parse_rational(&num, &den).map_err(D::Error::custom)?),
            ScalarRepr::Qi { re_num, re_den, im_num, im_den } => Scalar::QI(
                parse_rational(&re_num, &re_den).map_err(D::Error::custom)?,
                parse_rational(&im_num, &im_den).map_err(D::Error::custom)?,
            ),
            ScalarRepr::Gf { p, value } => {
                let p: u64 = p.parse().map_err(|_| D::Error::custom("bad gf modulus"))?;
                Field::gf(p).map_err(D::Error::custom)?;
                let v: u64 = value.parse().map_err(|_| D::Error::custom("bad gf residue"))?;
                Scalar::GF(v % p, p)
            }
        })
    }
}

/// Exact rational serialized as a decimal string "a/b" (or "a" when b = 1).
pub mod rational_str {
    use super::*;

    pub fn to_string(r: &BigRational) -> String {
        if r.denom().is_one() {
            r.numer().to_string()
        } else {
            format!("{}/{}", r.numer(), r.denom())
        }
    }

    pub fn parse(s: &str) -> Result<BigRational> {
        let s = s.trim();
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s, "1"),
        };
        parse_rational(n, d).map_err(|e| Error::Input(format!("rational `{s}`: {e}")))
    }

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&to_string(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qi(a: i64, b: i64) -> Scalar {
        Scalar::QI(rat(a, 1), rat(b, 1))
    }

    #[test]
    fn conjugation_examples() {
        assert_eq!(involute(&qi(3, 2), Field::QI).unwrap(), qi(3, -2));
        let q = Scalar::Q(rat(5, 7));
        assert_eq!(involute(&q, Field::Q).unwrap(), q);
        let two = &qi(1, 1) * &qi(1, -1);
        assert_eq!(two, qi(2, 0));
        assert_eq!(involute(&two, Field::QI).unwrap(), two);
        assert!(involute(&q, Field::QI).is_err());
    }

    #[test]
    fn positive_definite_checker() {
        let f = Field::QI;
        assert_eq!(check_positive_definite(&[f.one(), f.i().unwrap()], f).unwrap(), PdVerdict::Consistent);
        assert_eq!(check_positive_definite(&[f.zero(), f.zero()], f).unwrap(), PdVerdict::Consistent);
        let g = Field::gf(5).unwrap();
        assert_eq!(
            check_positive_definite(&[g.one(), g.from_i64(2)], g).unwrap(),
            PdVerdict::ZeroSumWithNonzeroEntry
        );
    }

    #[test]
    fn gf_rejects_composites() {
        assert!(Field::gf(9).is_err());
        assert!(Field::gf(1).is_err());
        assert_eq!(Field::gf(7).unwrap(), Field::GF(7));
        assert!("gf:x".parse::<Field>().is_err());
        assert_eq!("gf:13".parse::<Field>().unwrap(), Field::GF(13));
    }

    #[test]
    fn json_round_trip_exact() {
        for s in [Scalar::Q(rat(-3, 4)), qi(5, -2), Scalar::QI(rat(1, 3), rat(-7, 9)), Scalar::GF(4, 7)] {
            let j = serde_json::to_string(&s).unwrap();
            let back: Scalar = serde_json::from_str(&j).unwrap();
            assert_eq!(back, s);
        }
        let j = serde_json::to_string(&Scalar::Q(rat(6, -8))).unwrap();
        assert_eq!(j, r#"{"kind":"q","num":"-3","den":"4"}"#);
        assert!(serde_json::from_str::<Scalar>(r#"{"kind":"q","num":"1","den":"0"}"#).is_err());
    }

    fn arb_field() -> impl Strategy<Value = Field> {
        prop_oneof![Just(Field::Q), Just(Field::QI), Just(Field::GF(7)), Just(Field::GF(101))]
    }

    fn arb_scalar(f: Field) -> impl Strategy<Value = Scalar> {
        (-20i64..20, 1i64..9, -20i64..20, 1i64..9).prop_map(move |(a, b, c, d)| match f {
            Field::Q => Scalar::Q(rat(a, b)),
            Field::QI => Scalar::QI(rat(a, b), rat(c, d)),
            Field::GF(_) => &f.from_i64(a) * &f.from_i64(c),
        })
    }

    fn triple() -> impl Strategy<Value = (Scalar, Scalar, Scalar)> {
        arb_field().prop_flat_map(|f| (arb_scalar(f), arb_scalar(f), arb_scalar(f)))
    }

    proptest! {
        #[test]
        fn field_axioms((x, y, z) in triple()) {
            prop_assert_eq!(&(&x * &y) * &z, &x * &(&y * &z));
            prop_assert_eq!(&(&x + &y) + &z, &x + &(&y + &z));
            prop_assert_eq!(&x * &(&y + &z), &(&x * &y) + &(&x * &z));
            prop_assert_eq!(&x * &y, &y * &x);
            if let Some(xi) = x.inv() {
                prop_assert!((&x * &xi).is_one());
            }
            prop_assert!((&x - &x).is_zero());
        }

        #[test]
        fn involution_laws((x, y, _z) in triple()) {
            let f = x.field();
            prop_assert_eq!(involute(&involute(&x, f).unwrap(), f).unwrap(), x.clone());
            prop_assert_eq!(involute(&(&x * &y), f).unwrap(), &involute(&y, f).unwrap() * &involute(&x, f).unwrap());
            prop_assert_eq!(involute(&(&x + &y), f).unwrap(), &involute(&x, f).unwrap() + &involute(&y, f).unwrap());
        }

        #[test]
        fn normalize_idempotent((x, _y, _z) in triple()) {
            prop_assert_eq!(x.normalized().normalized(), x.normalized());
            prop_assert_eq!(x.normalized(), x);
        }

        #[test]
        fn gaussian_norm_nonnegative(a in -50i64..50, b in 1i64..20, c in -50i64..50, d in 1i64..20) {
            let x = Scalar::QI(rat(a, b), rat(c, d));
            let n = &x.conj() * &x;
            let r = n.as_rational().unwrap();
            prop_assert!(!r.is_negative());
            prop_assert_eq!(r.is_zero(), x.is_zero());
        }
    }
}
