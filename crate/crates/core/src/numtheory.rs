//! Factorization, norm classes of ℚ(i) and two-squares decompositions.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::scalar::{is_prime_u64, mulmod, powmod};

const TRIAL_LIMIT: u64 = 100_000;

fn gcd_u64(a: u64, b: u64) -> u64 {
    a.gcd(&b)
}

fn pollard_rho(n: u64) -> u64 {
    if n.is_multiple_of(2) {
        return 2;
    }
    for c in 1..u64::MAX {
        let f = |x: u64| (mulmod(x, x, n) + c) % n;
        let (mut x, mut y, mut d) = (2u64, 2u64, 1u64);
        while d == 1 {
            x = f(x);
            y = f(f(y));
            d = gcd_u64(x.abs_diff(y), n);
        }
        if d != n {
            return d;
        }
    }
    unreachable!()
}

fn factor_u64(n: u64, out: &mut Vec<(BigInt, u32)>) {
    if n == 1 {
        return;
    }
    if is_prime_u64(n) {
        push_factor(out, BigInt::from(n), 1);
        return;
    }
    let d = pollard_rho(n);
    factor_u64(d, out);
    factor_u64(n / d, out);
}

fn push_factor(out: &mut Vec<(BigInt, u32)>, p: BigInt, e: u32) {
    if let Some(slot) = out.iter_mut().find(|(q, _)| *q == p) {
        slot.1 += e;
    } else {
        out.push((p, e));
    }
}

/// Prime factorization of |n| (n ≠ 0); fails when a cofactor beyond 64 bits survives trial division.
pub fn factorize(n: &BigInt) -> Result<Vec<(BigInt, u32)>> {
    if n.is_zero() {
        return Err(Error::Input("cannot factor zero".into()));
    }
    let mut m = n.abs();
    let mut out = Vec::new();
    let mut p = 2u64;
    while p <= TRIAL_LIMIT {
        let bp = BigInt::from(p);
        if &bp * &bp > m {
            break;
        }
        let mut e = 0;
        while (&m % &bp).is_zero() {
            m /= &bp;
            e += 1;
        }
        if e > 0 {
            push_factor(&mut out, bp, e);
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if !m.is_one() {
        match m.to_u64() {
            Some(v) => factor_u64(v, &mut out),
            None => {
                return Err(Error::FactorizationBudget(format!(
                    "cofactor {m} exceeds 64 bits after trial division"
                )))
            }
        }
    }
    out.sort();
    Ok(out)
}

/// The class of a nonzero rational in ℚ*/N(ℚ(i)*) for positive inputs: the product of the
/// primes ≡ 3 (mod 4) occurring to an odd power. Negative rationals are never norms.
pub fn norm_class(r: &BigRational) -> Result<BigInt> {
    if !r.is_positive() {
        return Err(Error::Input("norm class is defined here for positive rationals".into()));
    }
    let mut class = BigInt::one();
    let four = BigInt::from(4);
    for part in [r.numer(), r.denom()] {
        for (p, e) in factorize(part)? {
            if e % 2 == 1 && p.mod_floor(&four) == BigInt::from(3) {
                class *= p;
            }
        }
    }
    Ok(class)
}

pub fn is_norm(r: &BigRational) -> Result<bool> {
    Ok(r.is_positive() && norm_class(r)?.is_one())
}

fn sqrt_minus_one_mod(p: u64) -> u64 {
    for a in 2..p {
        if powmod(a, (p - 1) / 2, p) == p - 1 {
            return powmod(a, (p - 1) / 4, p);
        }
    }
    unreachable!("p ≡ 1 (mod 4)")
}

/// a² + b² = p for a prime p ≡ 1 (mod 4).
pub fn two_squares_prime(p: u64) -> (u64, u64) {
    if p == 2 {
        return (1, 1);
    }
    let x = sqrt_minus_one_mod(p);
    let (mut a, mut b) = (p, x);
    let limit = (p as f64).sqrt() as u64;
    while b > limit || b * b > p {
        let r = a % b;
        a = b;
        b = r;
    }
    let rest = p - b * b;
    let c = (rest as f64).sqrt() as u64;
    let c = (c.saturating_sub(2)..=c + 2).find(|c| c * c == rest).expect("Hermite–Serret");
    (b, c)
}

type GaussInt = (BigInt, BigInt);

fn gmul(a: &GaussInt, b: &GaussInt) -> GaussInt {
    (&a.0 * &b.0 - &a.1 * &b.1, &a.0 * &b.1 + &a.1 * &b.0)
}

/// x² + y² = n for a positive integer n that is a sum of two squares.
pub fn two_squares(n: &BigInt) -> Result<Option<(BigInt, BigInt)>> {
    if !n.is_positive() {
        return Ok(if n.is_zero() { Some((BigInt::zero(), BigInt::zero())) } else { None });
    }
    let mut acc: GaussInt = (BigInt::one(), BigInt::zero());
    let four = BigInt::from(4);
    for (p, e) in factorize(n)? {
        let r = p.mod_floor(&four);
        if r == BigInt::from(3) {
            if e % 2 == 1 {
                return Ok(None);
            }
            acc = gmul(&acc, &(p.pow(e / 2), BigInt::zero()));
        } else {
            let pv = p.to_u64().expect("prime fits");
            let (a, b) = two_squares_prime(pv);
            let g: GaussInt = (BigInt::from(a), BigInt::from(b));
            for _ in 0..e {
                acc = gmul(&acc, &g);
            }
        }
    }
    debug_assert_eq!(&acc.0 * &acc.0 + &acc.1 * &acc.1, *n);
    Ok(Some(acc))
}

/// (a, b) rational with a² + b² = r, when r is a norm from ℚ(i).
pub fn norm_preimage(r: &BigRational) -> Result<Option<(BigRational, BigRational)>> {
    if !r.is_positive() {
        return Ok(None);
    }
    let st = r.numer() * r.denom();
    Ok(two_squares(&st)?.map(|(x, y)| {
        let t = BigRational::from_integer(r.denom().clone());
        (BigRational::from_integer(x) / &t, BigRational::from_integer(y) / t)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use proptest::prelude::*;

    #[test]
    fn factor_examples() {
        assert_eq!(factorize(&BigInt::from(360)).unwrap(), vec![(2.into(), 3), (3.into(), 2), (5.into(), 1)]);
        let big = BigInt::from(1_000_000_007u64) * BigInt::from(998_244_353u64);
        assert_eq!(factorize(&big).unwrap(), vec![(998_244_353.into(), 1), (1_000_000_007.into(), 1)]);
        let huge = BigInt::from(1_000_000_007u64).pow(3) * BigInt::from(998_244_353u64).pow(2);
        assert!(matches!(factorize(&huge), Err(Error::FactorizationBudget(_))));
    }

    #[test]
    fn norm_classes() {
        assert_eq!(norm_class(&rat(3, 1)).unwrap(), BigInt::from(3));
        assert_eq!(norm_class(&rat(2, 1)).unwrap(), BigInt::one());
        assert_eq!(norm_class(&rat(9, 5)).unwrap(), BigInt::one());
        assert_eq!(norm_class(&rat(21, 2)).unwrap(), BigInt::from(21));
        assert_eq!(norm_class(&rat(1, 3)).unwrap(), BigInt::from(3));
        assert!(is_norm(&rat(1, 2)).unwrap());
        assert!(!is_norm(&rat(-1, 1)).unwrap());
    }

    #[test]
    fn two_square_primes() {
        for p in [5u64, 13, 17, 29, 37, 41, 1_000_000_009] {
            let (a, b) = two_squares_prime(p);
            assert_eq!(a * a + b * b, p);
        }
    }

    proptest! {
        #[test]
        fn two_squares_matches_brute_force(n in 1u64..3000) {
            let brute = (0..=((n as f64).sqrt() as u64 + 1)).any(|x| {
                let r = n.saturating_sub(x * x);
                x * x <= n && { let y = (r as f64).sqrt() as u64; (y.saturating_sub(1)..=y + 1).any(|y| y * y == r) }
            });
            let got = two_squares(&BigInt::from(n)).unwrap();
            prop_assert_eq!(got.is_some(), brute);
            if let Some((x, y)) = got {
                prop_assert_eq!(&x * &x + &y * &y, BigInt::from(n));
            }
            prop_assert_eq!(is_norm(&rat(n as i64, 1)).unwrap(), brute);
        }

        #[test]
        fn norm_preimage_exact(a in 1i64..200, b in 1i64..200) {
            let r = rat(a, b);
            if let Some((x, y)) = norm_preimage(&r).unwrap() {
                prop_assert_eq!(&x * &x + &y * &y, r);
            } else {
                prop_assert!(!is_norm(&r).unwrap());
            }
        }
    }
}
