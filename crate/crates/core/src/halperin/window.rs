//! Rational windows below the local ranks and integer windows for the new multiplicities.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;

use super::{Checks, Rel};
use crate::error::{Error, Result};
use crate::scalar::rational_str;

fn r(n: usize) -> BigRational {
    BigRational::from_integer(n.into())
}

/// Largest integer strictly below v.
fn floor_below(v: &BigRational) -> BigInt {
    let c = v.ceil().to_integer();
    c - 1
}

/// Numerators p_i ≥ 1 over q with 0 < v_i − p_i/q < δ, taking the largest admissible p_i.
pub fn window_at(values: &[BigRational], delta: &BigRational, q: usize) -> Option<Vec<usize>> {
    values
        .iter()
        .map(|v| {
            let p = floor_below(&(v * r(q)));
            let gap = v - BigRational::new(p.clone(), q.into());
            (p >= BigInt::from(1) && gap < *delta).then(|| p.to_usize()).flatten()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RationalWindow {
    pub q: usize,
    pub p: Vec<usize>,
}

/// The smallest common denominator q' in `divisors` admitting the windows.
pub fn choose_rational_window(values: &[BigRational], delta: &BigRational, divisors: &[usize]) -> Result<RationalWindow> {
    if *delta <= BigRational::zero() {
        return Err(Error::Precondition("δ must be positive".into()));
    }
    let mut ds = divisors.to_vec();
    ds.sort_unstable();
    for q in ds {
        if let Some(p) = window_at(values, delta, q) {
            return Ok(RationalWindow { q, p });
        }
    }
    let hint = (1..=SUGGEST_LIMIT)
        .find(|q| window_at(values, delta, *q).is_some())
        .map(|q| format!("; the smallest ambient size with an admissible divisor is n = {q}"))
        .unwrap_or_else(|| format!("; no denominator up to {SUGGEST_LIMIT} works"));
    Err(Error::Infeasible(format!("no divisor of the ambient size gives windows of width {}{hint}", rational_str::to_string(delta))))
}

const SUGGEST_LIMIT: usize = 2_000_000;

/// Choices of p' tried per piece when enumerating plans.
pub const POOL_LIMIT: usize = 6;

/// Up to `limit` values p' ≥ 0 with (5/8)ε < (p − p')/q < (3/4)ε, largest first.
pub fn integer_window(eps: &BigRational, q: usize, p: usize, limit: usize) -> Vec<usize> {
    let lo = eps * r(q) * BigRational::new(5.into(), 8.into());
    let hi = eps * r(q) * BigRational::new(3.into(), 4.into());
    let mut d: BigInt = lo.floor().to_integer() + 1;
    let mut out = Vec::new();
    while out.len() < limit && BigRational::from_integer(d.clone()) < hi {
        if d > BigInt::from(p) {
            break;
        }
        out.push(p - d.to_usize().expect("d ≤ p"));
        d += 1;
    }
    out
}

/// The largest p' with (5/8)ε < p/q − p'/q < (3/4)ε, under the sufficient condition εq/8 > 1.
pub fn choose_integer_in_window(eps: &BigRational, q: usize, p: usize) -> Result<usize> {
    if eps * r(q) / r(8) <= BigRational::from_integer(1.into()) {
        return Err(Error::Precondition(format!(
            "ε·q'/8 = {} is not above 1",
            rational_str::to_string(&(eps * r(q) / r(8)))
        )));
    }
    integer_window(eps, q, p, 1)
        .first()
        .copied()
        .ok_or_else(|| Error::Precondition("the integer window contains no nonnegative p'".into()))
}

/// The arithmetic of one inductive step, independent of any ambient construction.
#[derive(Clone, Debug, Serialize)]
pub struct StepPlan {
    pub p: usize,
    pub q: usize,
    #[serde(with = "rational_str")]
    pub theta: BigRational,
    #[serde(serialize_with = "ser_vec")]
    pub values: Vec<BigRational>,
    pub r: Vec<usize>,
    #[serde(with = "rational_str")]
    pub delta: BigRational,
    pub q_new: usize,
    pub p_i: Vec<usize>,
    #[serde(with = "rational_str")]
    pub alpha: BigRational,
    #[serde(serialize_with = "ser_vec")]
    pub lambda: Vec<BigRational>,
    #[serde(serialize_with = "ser_vec")]
    pub eps_i: Vec<BigRational>,
    pub p_i_new: Vec<usize>,
    pub g: usize,
    pub p_new: usize,
}

pub(crate) fn ser_vec<S: serde::Serializer>(v: &[BigRational], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(rational_str::to_string))
}

impl StepPlan {
    pub fn gap(&self) -> BigRational {
        BigRational::new(self.p.into(), self.q.into()) - &self.theta
    }

    pub fn new_ratio(&self) -> BigRational {
        BigRational::new(self.p_new.into(), self.q_new.into())
    }

    pub fn delta_for(p: usize, q: usize, theta: &BigRational, rs: &[usize]) -> BigRational {
        let gap = BigRational::new(p.into(), q.into()) - theta;
        gap / r(48 * p * rs.iter().sum::<usize>())
    }

    /// Completes a plan from a window choice and chosen p_i'; None when a window is empty.
    pub fn complete(
        p: usize,
        q: usize,
        theta: &BigRational,
        values: &[BigRational],
        rs: &[usize],
        win: &RationalWindow,
        pick: &dyn Fn(usize, &[usize]) -> Option<usize>,
    ) -> Option<StepPlan> {
        let gap = BigRational::new(p.into(), q.into()) - theta;
        let qn = win.q;
        let inv_alpha: BigRational = win.p.iter().zip(rs).map(|(pi, ri)| BigRational::new((pi * ri).into(), qn.into())).sum();
        let alpha = BigRational::from_integer(1.into()) / inv_alpha;
        let mut lambda = Vec::new();
        let mut eps_i = Vec::new();
        let mut p_new_i = Vec::new();
        for (i, (pi, ri)) in win.p.iter().zip(rs).enumerate() {
            let l = &alpha * r(pi * ri) / r(qn);
            let e = &l / r(p * ri) * &gap;
            if &e * r(qn) / r(8) <= BigRational::from_integer(1.into()) {
                return None;
            }
            let choices = integer_window(&e, qn, *pi, 1);
            p_new_i.push(pick(i, &choices)?);
            lambda.push(l);
            eps_i.push(e);
        }
        let g: usize = p_new_i.iter().zip(rs).map(|(a, b)| a * b).sum();
        if g == 0 {
            return None;
        }
        Some(StepPlan {
            p,
            q,
            theta: theta.clone(),
            values: values.to_vec(),
            r: rs.to_vec(),
            delta: StepPlan::delta_for(p, q, theta, rs),
            q_new: qn,
            p_i: win.p.clone(),
            alpha,
            lambda,
            eps_i,
            p_i_new: p_new_i,
            g,
            p_new: p * g,
        })
    }

    /// The inequalities of the window arithmetic. `local_defect` is |1/q − Σ r_i N(f_i)| and
    /// `k_eps` is K(p)·ε.
    pub fn verify(&self, local_defect: &BigRational, k_eps: &BigRational, checks: &mut Checks) -> Result<()> {
        let gap = self.gap();
        let one = BigRational::from_integer(1.into());
        let frac = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        let pq = BigRational::new(self.p.into(), self.q.into());
        checks.check("δ > 0", &BigRational::zero(), Rel::Lt, &self.delta)?;
        checks.check("local ranks: |1/q − Σ rᵢN(fᵢ)| < K(p)ε", local_defect, Rel::Lt, k_eps)?;
        for (i, (v, pi)) in self.values.iter().zip(&self.p_i).enumerate() {
            let approx = BigRational::new((*pi).into(), self.q_new.into());
            checks.check(format!("window {i}: 0 < N(f_{i}) − p_{i}/q'"), &BigRational::zero(), Rel::Lt, &(v - &approx))?;
            checks.check(format!("window {i}: N(f_{i}) − p_{i}/q' < δ"), &(v - &approx), Rel::Lt, &self.delta)?;
        }
        let lsum: BigRational = self.lambda.iter().sum();
        checks.check("Σ λᵢ = 1", &lsum, Rel::Eq, &one)?;
        let pa = r(self.p) / &self.alpha;
        let dev = (&pq - &pa).abs();
        checks.check("|p/q − p/α'| < (1/24)(p/q − θ)", &dev, Rel::Lt, &(&gap * frac(1, 24)))?;
        checks.check("|p/q − p/α'| < (1/8)(p/q − θ)", &dev, Rel::Lt, &(&gap * frac(1, 8)))?;
        for (i, ((e, pi), pn)) in self.eps_i.iter().zip(&self.p_i).zip(&self.p_i_new).enumerate() {
            let qn = r(self.q_new);
            checks.check(format!("εᵢq'/8 > 1 (i = {i})"), &one, Rel::Lt, &(e * &qn / r(8)))?;
            checks.check(format!("5εᵢq'/8 < pᵢ (i = {i})"), &(e * &qn * frac(5, 8)), Rel::Lt, &r(*pi))?;
            let drop = BigRational::new((pi - pn).into(), self.q_new.into());
            checks.check(format!("(5/8)εᵢ < (pᵢ − pᵢ')/q' (i = {i})"), &(e * frac(5, 8)), Rel::Lt, &drop)?;
            checks.check(format!("(pᵢ − pᵢ')/q' < (3/4)εᵢ (i = {i})"), &drop, Rel::Lt, &(e * frac(3, 4)))?;
        }
        let sum_new: BigRational = self.p_i_new.iter().zip(&self.r).map(|(a, b)| BigRational::new((a * b).into(), self.q_new.into())).sum();
        let mid = &one / &self.alpha - &sum_new;
        let pp = r(self.p);
        checks.check("(5/(8p))(p/q − θ) < 1/α' − Σ rᵢpᵢ'/q'", &(&gap * frac(5, 8) / &pp), Rel::Lt, &mid)?;
        checks.check("1/α' − Σ rᵢpᵢ'/q' < (3/(4p))(p/q − θ)", &mid, Rel::Lt, &(&gap * frac(3, 4) / &pp))?;
        let pn = self.new_ratio();
        checks.check("(5/8)(p/q − θ) < p/α' − p'/q'", &(&gap * frac(5, 8)), Rel::Lt, &(&pa - &pn))?;
        checks.check("p/α' − p'/q' < (3/4)(p/q − θ)", &(&pa - &pn), Rel::Lt, &(&gap * frac(3, 4)))?;
        checks.check("key: (1/2)(p/q − θ) < p/q − p'/q'", &(&gap * frac(1, 2)), Rel::Lt, &(&pq - &pn))?;
        checks.check("key: p/q − p'/q' < (7/8)(p/q − θ)", &(&pq - &pn), Rel::Lt, &(&gap * frac(7, 8)))?;
        checks.check("p' = p·g", &r(self.p_new), Rel::Eq, &r(self.p * self.g))?;
        Ok(())
    }
}

/// Every plan reachable from the given local ranks, deduplicated by (q', p').
pub fn plan_options(p: usize, q: usize, theta: &BigRational, values: &[BigRational], rs: &[usize], divisors: &[usize]) -> Vec<StepPlan> {
    let delta = StepPlan::delta_for(p, q, theta, rs);
    let mut out: Vec<StepPlan> = Vec::new();
    for &qn in divisors {
        let Some(top) = window_at(values, &delta, qn) else { continue };
        // Besides the largest numerators, also try one lower where the window still holds.
        let mut alts: Vec<Vec<usize>> = vec![top.clone()];
        for i in 0..top.len() {
            let mut lower = top.clone();
            if lower[i] > 1 {
                lower[i] -= 1;
                let ok = values[i].clone() - BigRational::new(lower[i].into(), qn.into()) < delta;
                if ok {
                    alts.push(lower);
                }
            }
        }
        for ps in alts {
            let win = RationalWindow { q: qn, p: ps };
            let Some(probe) = StepPlan::complete(p, q, theta, values, rs, &win, &|_, c| c.first().copied()) else {
                continue;
            };
            let pools: Vec<Vec<usize>> =
                win.p.iter().enumerate().map(|(i, pi)| integer_window(&probe.eps_i[i], qn, *pi, POOL_LIMIT)).collect();
            let mut idx = vec![0usize; pools.len()];
            loop {
                let choice = idx.clone();
                let pools_ref = &pools;
                if let Some(plan) = StepPlan::complete(p, q, theta, values, rs, &win, &|i, _| pools_ref[i].get(choice[i]).copied()) {
                    if !out.iter().any(|o| o.q_new == plan.q_new && o.p_new == plan.p_new) {
                        out.push(plan);
                    }
                }
                let mut k = 0;
                while k < idx.len() {
                    idx[k] += 1;
                    if idx[k] < pools[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == idx.len() {
                    break;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halperin::slot::divisors;
    use crate::scalar::rat;

    /// Independent scan: the first q in ascending order admitting all windows, by floating-free brute force.
    fn oracle_window(values: &[(i64, i64)], delta: (i64, i64), divs: &[usize]) -> Option<(usize, Vec<usize>)> {
        for &q in divs {
            let mut ps = Vec::new();
            for &(a, b) in values {
                // largest p with p/q < a/b is ⌈aq/b⌉ − 1
                let num = a * q as i64;
                let p = (num + b - 1) / b - 1;
                // gap a/b − p/q < δ  ⇔  (aq − pb)·δ_den < δ_num·bq
                let lhs = (num - p * b) * delta.1;
                let rhs = delta.0 * b * q as i64;
                if p < 1 || lhs >= rhs {
                    break;
                }
                ps.push(p as usize);
            }
            if ps.len() == values.len() {
                return Some((q, ps));
            }
        }
        None
    }

    #[test]
    fn window_examples() {
        let divs = divisors(16 * 9 * 25 * 7);
        let got = choose_rational_window(&[rat(1, 3), rat(1, 4)], &rat(1, 100), &divs).unwrap();
        assert_eq!(Some((got.q, got.p.clone())), oracle_window(&[(1, 3), (1, 4)], (1, 100), &divs));
        assert_eq!((got.q, got.p), (70, vec![23, 17]));
        let trivial = choose_rational_window(&[rat(1, 2)], &rat(1, 1), &divs).unwrap();
        assert_eq!((trivial.q, trivial.p), (3, vec![1]));
        let err = choose_rational_window(&[rat(1, 3)], &rat(1, 100_000), &divisors(2520)).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("n = 33334")), "{err}");
    }

    #[test]
    fn integer_window_examples() {
        // ε·q' = 16: d ranges over (10, 12), so p' = 100 − 11.
        assert_eq!(choose_integer_in_window(&rat(16, 1000), 1000, 100).unwrap(), 89);
        assert!(matches!(choose_integer_in_window(&rat(8, 1000), 1000, 100), Err(Error::Precondition(_))));
        for n in [1usize, 7, 50] {
            let p = choose_integer_in_window(&rat(16, 1000), 1000 * n, 100 * n).unwrap();
            let d = rat((100 * n - p) as i64, (1000 * n) as i64);
            assert!(d > rat(10, 1000) && d < rat(12, 1000));
        }
    }

    #[test]
    fn first_step_numbers() {
        let theta = rat(1, 3);
        let opts = plan_options(1, 1, &theta, &[rat(1, 1)], &[1], &divisors(1_663_200));
        let first = &opts[0];
        assert_eq!((first.q_new, first.p_i.clone(), first.p_new), (75, vec![74], 42));
        let mut checks = Checks::default();
        first.verify(&BigRational::zero(), &rat(1, 1000), &mut checks).unwrap();
        assert!(checks.all_hold());
    }
}
