//! The telescoping chain ρ₀, ρ₁, … and its finite-stage checks.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::slot::{norm, SlotAmbient, SlotElement};
use super::sparse::{RankCache, Sparse};
use super::step::{
    algebra_sample, corner_approximation, halperin_step, halperin_step_star, random_sparse, StageState, StarGate, StepConfig,
    StepTrace,
};
use super::window::{plan_options, StepPlan};
use super::{Checks, Eps, Rel};
use crate::error::{Error, Result};
use crate::scalar::{rational_str, Field};

pub const CHAIN_SCHEMA: &str = "vnfactor.halperin-chain/1";

/// Search nodes explored before a plan search gives up.
const SEARCH_BUDGET: usize = 20_000;
const SUGGEST_BUDGET: usize = 2_000;
const SUGGEST_MULTIPLIERS: [usize; 14] = [2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 24, 30, 40, 60];

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub field: Field,
    pub n: usize,
    pub theta: BigRational,
    pub stages: usize,
    /// Simple factors of A₀ carrying ψ(e₁₁).
    pub pieces: usize,
    /// Trailing slots where the stage-0 approximant of ρ(1) vanishes.
    pub defect: usize,
    pub star: bool,
    pub step: StepConfig,
    /// Tolerance for the surjectivity desk-check; every stage is checked at its own δ when absent.
    pub eta: Option<BigRational>,
    /// Size of the z sample for the rank identity and Cauchy bounds: 0, 1, e₁₁, then random.
    pub z_samples: usize,
}

impl ChainConfig {
    pub fn new(field: Field, n: usize, theta: BigRational, stages: usize) -> ChainConfig {
        ChainConfig { field, n, theta, stages, pieces: 2, defect: 1, star: false, step: StepConfig::default(), eta: None, z_samples: 4 }
    }
}

fn values_of(st: &StageState, n: usize) -> Vec<BigRational> {
    st.pieces.iter().map(|r| BigRational::new(r.len().into(), n.into())).collect()
}

#[allow(clippy::too_many_arguments)]
fn search(
    divs: &[usize],
    theta: &BigRational,
    p: usize,
    q: usize,
    values: &[BigRational],
    depth: usize,
    budget: &mut usize,
    failed: &mut HashSet<(usize, usize, usize)>,
    best: &mut Vec<StepPlan>,
    path: &mut Vec<StepPlan>,
) -> bool {
    if path.len() > best.len() {
        *best = path.clone();
    }
    if depth == 0 {
        return true;
    }
    if !path.is_empty() && failed.contains(&(p, q, depth)) {
        return false;
    }
    let rs = vec![1; values.len()];
    for plan in plan_options(p, q, theta, values, &rs, divs) {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let gap_new = plan.new_ratio() - theta;
        if gap_new <= BigRational::zero() || gap_new * BigRational::from_integer(2.into()) >= plan.gap() {
            continue;
        }
        let (pn, qn) = (plan.p_new, plan.q_new);
        path.push(plan);
        let next = [BigRational::new(1.into(), qn.into())];
        if search(divs, theta, pn, qn, &next, depth - 1, budget, failed, best, path) {
            return true;
        }
        path.pop();
    }
    if *budget > 0 {
        failed.insert((p, q, depth));
    }
    false
}

/// Plans for `stages` consecutive steps from the initial state, by depth-first search over the window choices.
pub fn plan_chain(amb: &SlotAmbient, st: &StageState, stages: usize) -> Result<Vec<StepPlan>> {
    let divs = amb.divisors();
    let mut budget = SEARCH_BUDGET;
    let mut best = Vec::new();
    let mut path = Vec::new();
    let mut failed = HashSet::new();
    if search(&divs, &st.theta, st.p, st.q, &values_of(st, amb.n), stages, &mut budget, &mut failed, &mut best, &mut path) {
        return Ok(path);
    }
    let hint = suggest_ambient(amb, st, stages).map(|m| format!("; n = {m} admits {stages} stages")).unwrap_or_default();
    Err(Error::Infeasible(format!(
        "M_{} admits only {} of {stages} stages at θ = {}{hint}",
        amb.n,
        best.len(),
        rational_str::to_string(&st.theta)
    )))
}

fn suggest_ambient(amb: &SlotAmbient, st: &StageState, stages: usize) -> Option<usize> {
    SUGGEST_MULTIPLIERS.iter().map(|m| amb.n * m).find(|&n| {
        let Ok(big) = SlotAmbient::new(amb.field, n) else { return false };
        let scaled: Vec<BigRational> = st.pieces.iter().map(|r| BigRational::new((r.len() * (n / amb.n)).into(), n.into())).collect();
        let mut budget = SUGGEST_BUDGET;
        let (mut best, mut path) = (Vec::new(), Vec::new());
        search(&big.divisors(), &st.theta, st.p, st.q, &scaled, stages, &mut budget, &mut HashSet::new(), &mut best, &mut path)
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainState {
    pub schema: String,
    pub field: Field,
    pub n: usize,
    #[serde(with = "rational_str")]
    pub theta: BigRational,
    pub seed: u64,
    pub star: bool,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    #[serde(serialize_with = "super::window::ser_vec")]
    pub delta: Vec<BigRational>,
    pub eps: Vec<Eps>,
    pub traces: Vec<StepTrace>,
    pub checks: Checks,
    #[serde(skip)]
    pub ambient: Option<SlotAmbient>,
    #[serde(skip)]
    pub states: Vec<StageState>,
}

impl ChainState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn stage_count(&self) -> usize {
        self.traces.len()
    }

    pub fn all_hold(&self) -> bool {
        self.checks.all_hold() && self.traces.iter().all(|t| t.checks.all_hold())
    }
}

/// Builds the chain stage by stage and runs the Cauchy, rank-identity and surjectivity checks.
pub fn chain_build(cfg: &ChainConfig) -> Result<ChainState> {
    let mut amb = SlotAmbient::new(cfg.field, cfg.n)?;
    let st0 = StageState::initial(&amb, &cfg.theta, cfg.pieces, cfg.defect, cfg.star)?;
    let plans = plan_chain(&amb, &st0, cfg.stages)?;
    let mut states = vec![st0];
    let mut traces = Vec::new();
    for (i, plan) in plans.into_iter().enumerate() {
        let st = states.last().expect("stage 0");
        let step_cfg = StepConfig { seed: cfg.step.seed.wrapping_add(i as u64), ..cfg.step.clone() };
        let tr = if cfg.star {
            halperin_step_star(&mut amb, st, &StarGate::Standard, Some(plan), &step_cfg)?
        } else {
            halperin_step(&mut amb, st, Some(plan), &step_cfg)?
        };
        states.push(tr.output.clone());
        traces.push(tr);
    }
    let mut checks = Checks::default();
    chain_checks(&amb, &states, &traces, cfg, &mut checks)?;
    Ok(ChainState {
        schema: CHAIN_SCHEMA.into(),
        field: cfg.field,
        n: cfg.n,
        theta: cfg.theta.clone(),
        seed: cfg.step.seed,
        star: cfg.star,
        p: states.iter().map(|s| s.p).collect(),
        q: states.iter().map(|s| s.q).collect(),
        delta: states.iter().map(|s| s.gap()).collect(),
        eps: states.iter().map(|s| s.eps.clone()).collect(),
        traces,
        checks,
        ambient: Some(amb),
        states,
    })
}

fn pow2(e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::one() << e as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-e) as usize)
    }
}

fn chain_checks(amb: &SlotAmbient, states: &[StageState], traces: &[StepTrace], cfg: &ChainConfig, checks: &mut Checks) -> Result<()> {
    let field = amb.field;
    let last = states.len() - 1;
    let delta: Vec<BigRational> = states.iter().map(|s| s.gap()).collect();
    let mut cache = RankCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.step.seed ^ 0x5eed);

    for (i, st) in states.iter().enumerate() {
        checks.check(format!("θ < p_{i}/q_{i}"), &cfg.theta, Rel::Lt, &st.ratio())?;
        checks.check(format!("δ_{i} < 2^-{i}·δ_0"), &delta[i], if i == 0 { Rel::Le } else { Rel::Lt }, &(&delta[0] * pow2(-(i as i64))))?;
        checks.check(format!("K(p_{i})ε_{i} < δ_{i}, so ε_{i} < δ_{i}"), &st.eps.coeff, Rel::Lt, &delta[i])?;
        if i > 0 {
            checks.check(format!("p_{i}/q_{i} < p_{}/q_{}", i - 1, i - 1), &st.ratio(), Rel::Lt, &states[i - 1].ratio())?;
            checks.check(format!("δ_{i} < δ_{}/2", i - 1), &delta[i], Rel::Lt, &(&delta[i - 1] / BigRational::from_integer(2.into())))?;
        }
    }

    // Cauchy bounds and the rank identity on sampled z ∈ M_{p_i}.
    for i in 0..=last {
        let pi = states[i].p;
        let mut zs = vec![Sparse::zero(field, pi), Sparse::identity(field, pi), Sparse::unit(field, pi, 0, 0)];
        zs.truncate(cfg.z_samples);
        while zs.len() < cfg.z_samples {
            zs.push(random_sparse(field, pi, &mut rng));
        }
        for (s, z) in zs.iter().enumerate() {
            let mut dense_rank = RankCache::new();
            let rank_z = z.rank(&mut dense_rank);
            let nz = BigRational::new(rank_z.into(), pi.into());
            for j in i..=last {
                let fj = states[j].frame;
                let rj = SlotElement::rho_lifted(states[i].frame, fj, z.clone());
                let nj = norm(amb, &rj, &mut cache)?;
                checks.check(format!("rank identity: N(ρ_{j}(γ_{j},{i}(z{s}))) = (p_{j}/q_{j})·rank(z)/p_{i}"), &nj, Rel::Eq, &(states[j].ratio() * &nz))?;
                let tail: BigRational = delta[j..].iter().sum();
                let trend = (&nj - &cfg.theta * &nz).abs();
                checks.check(format!("trend: |N(ρ_{j}γ(z{s})) − θ·rank(z)| ≤ Σ_(t≥{j}) δ_t + δ_{j}"), &trend, Rel::Le, &(tail + &delta[j]))?;
                for h in j + 1..=last {
                    let rh = SlotElement::rho_lifted(states[i].frame, states[h].frame, z.clone());
                    let d = norm(amb, &rh.sub(&rj), &mut cache)?;
                    let bound: BigRational = delta[j..h].iter().sum();
                    checks.check(format!("Cauchy (i,j,h) = ({i},{j},{h}), z{s}: N(ρ_h γ(z) − ρ_j γ(z)) < Σ δ"), &d, Rel::Lt, &bound)?;
                    checks.check(format!("Cauchy (j,h) = ({j},{h}): Σ δ < 2^-{j}·2"), &bound, Rel::Lt, &pow2(1 - j as i64))?;
                    if s == 0 {
                        checks.check(format!("z = 0: distance at ({i},{j},{h}) is 0"), &d, Rel::Eq, &BigRational::zero())?;
                    }
                }
            }
        }
    }

    // Surjectivity desk-check: a corner element of A_i is within δ_i of ρ_J(M_{p_J}) after cutting by e = ρ_J(1).
    let e = SlotElement::rho(states[last].frame, Sparse::identity(field, states[last].p));
    let stages: Vec<usize> = match &cfg.eta {
        None => (0..last).collect(),
        Some(eta) => {
            let Some(i) = (0..last).find(|&i| delta[i] <= *eta) else {
                return Err(Error::Infeasible(format!(
                    "the {last} built stages never bring δ below η = {}",
                    rational_str::to_string(eta)
                )));
            };
            vec![i]
        }
    };
    for i in stages {
        let st = &states[i];
        let rho_one = SlotElement::rho(st.frame, Sparse::identity(field, st.p));
        for s in 0..cfg.step.samples.max(1) {
            let x = rho_one.mul(&algebra_sample(field, st, &mut rng), amb)?.mul(&rho_one, amb)?;
            let (_, y) = corner_approximation(amb, st, &traces[i].layout.piece_of, &x)?;
            let w = SlotElement::rho_lifted(states[i + 1].frame, states[last].frame, y);
            let exe = e.mul(&x, amb)?.mul(&e, amb)?;
            let d = norm(amb, &exe.sub(&w), &mut cache)?;
            let eta = cfg.eta.clone().unwrap_or_else(|| delta[i].clone());
            checks.check(format!("surjectivity at stage {i}, x{s}: N(e·x·e − ρ_J(γ(w))) < η"), &d, Rel::Lt, &eta.min(delta[i].clone()))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingStage {
    pub stage: usize,
    pub rank_e: usize,
    pub rank_complement: usize,
    /// Rows and slots removed from e to reach e½.
    pub removed: usize,
    pub rank_half: usize,
    pub rank_half_complement: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingReport {
    pub n: usize,
    pub stages: Vec<DoublingStage>,
    /// M_n ≅ M₂(e½ M_n e½) once e½ ∼ 1 − e½; the block size of the amplification.
    pub half_block: usize,
    pub checks: Checks,
}

/// For θ = 1/2: at every stage e = ρ_j(1) contains an idempotent e½ with N(e − e½) = δ_j and
/// rank(e½) = rank(1 − e½) = n/2, so e½ ∼ 1 − e½ in the single-block ambient.
pub fn theta_half_doubling_check(chain: &ChainState) -> Result<DoublingReport> {
    let half = BigRational::new(1.into(), 2.into());
    if chain.theta != half {
        return Err(Error::Precondition(format!("the doubling check needs θ = 1/2, not {}", rational_str::to_string(&chain.theta))));
    }
    let amb = chain.ambient.as_ref().ok_or_else(|| Error::Input("the chain carries no ambient".into()))?;
    let n = amb.n;
    if n % 2 != 0 {
        return Err(Error::Precondition(format!("M_{n} has no idempotent of rank n/2")));
    }
    let field = amb.field;
    let mut cache = RankCache::new();
    let mut checks = Checks::default();
    let mut stages = Vec::new();
    let rank_of = |x: &SlotElement, cache: &mut RankCache| super::slot::rank(amb, x, cache);
    for (j, st) in chain.states.iter().enumerate() {
        let k = st.frame;
        let (p, slots) = (st.p, amb.frames[k].slots);
        let e = SlotElement::rho(k, Sparse::identity(field, p));
        let comp = SlotElement::one(field).sub(&e);
        let (re, rc) = (rank_of(&e, &mut cache)?, rank_of(&comp, &mut cache)?);
        let ne = norm(amb, &e, &mut cache)?;
        let nc = norm(amb, &comp, &mut cache)?;
        checks.check(format!("stage {j}: N(e) + N(1 − e) = 1"), &(&ne + &nc), Rel::Eq, &BigRational::one())?;
        if j == 0 {
            checks.check("stage 0: N(e) = 1", &ne, Rel::Eq, &BigRational::one())?;
        }
        let removed = re - n / 2;
        let (m, rem) = (removed / slots, removed % slots);
        let rows: Vec<(usize, usize, _)> = (0..m).map(|a| (a, a, field.one())).collect();
        let mut e_half = e.sub(&SlotElement::rho(k, Sparse::from_entries(field, p, rows)));
        if rem > 0 {
            e_half = e_half.sub(&SlotElement::rho_on(k, Sparse::unit(field, p, m, m), 0..rem));
        }
        let half_comp = SlotElement::one(field).sub(&e_half);
        let (rh, rhc) = (rank_of(&e_half, &mut cache)?, rank_of(&half_comp, &mut cache)?);
        let sq = e_half.mul(&e_half, amb)?.sub(&e_half);
        checks.check(format!("stage {j}: e½ is idempotent"), &norm(amb, &sq, &mut cache)?, Rel::Eq, &BigRational::zero())?;
        checks.check(format!("stage {j}: e½ ≤ e"), &norm(amb, &e.mul(&e_half, amb)?.sub(&e_half), &mut cache)?, Rel::Eq, &BigRational::zero())?;
        checks.check(format!("stage {j}: N(e − e½) = δ_{j}"), &norm(amb, &e.sub(&e_half), &mut cache)?, Rel::Eq, &st.gap())?;
        checks.check(format!("stage {j}: rank(e½) = n/2"), &BigRational::from_integer(rh.into()), Rel::Eq, &BigRational::from_integer((n / 2).into()))?;
        checks.check(format!("stage {j}: rank(e½) = rank(1 − e½)"), &BigRational::from_integer(rh.into()), Rel::Eq, &BigRational::from_integer(rhc.into()))?;
        stages.push(DoublingStage { stage: j, rank_e: re, rank_complement: rc, removed, rank_half: rh, rank_half_complement: rhc });
    }
    Ok(DoublingReport { n, stages, half_block: n / 2, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;

    #[test]
    fn one_stage_at_one_half() {
        let cfg = ChainConfig::new(Field::Q, 27720, rat(1, 2), 1);
        let chain = chain_build(&cfg).unwrap();
        let r = chain.states[1].ratio();
        assert!(r > rat(1, 2) && r < rat(1, 1));
        assert!(chain.delta[1] < rat(1, 4));
        assert!(chain.all_hold());
    }

    #[test]
    fn three_stages_need_a_larger_ambient() {
        let cfg = ChainConfig::new(Field::Q, 27720, rat(1, 3), 3);
        let err = chain_build(&cfg).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("n = 554400")), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn doubling_at_one_half() {
        let cfg = ChainConfig::new(Field::Q, 27720, rat(1, 2), 2);
        let chain = chain_build(&cfg).unwrap();
        let rep = theta_half_doubling_check(&chain).unwrap();
        assert!(rep.checks.all_hold());
        assert_eq!(rep.stages.len(), 3);
        for s in &rep.stages {
            assert_eq!(s.rank_half, 13860);
            assert_eq!(s.rank_e + s.rank_complement, 27720);
        }
        let other = chain_build(&ChainConfig::new(Field::Q, 27720, rat(2, 5), 1)).unwrap();
        assert!(matches!(theta_half_doubling_check(&other), Err(Error::Precondition(_))));
    }

    #[test]
    fn eta_beyond_the_built_stages() {
        let mut cfg = ChainConfig::new(Field::Q, 27720, rat(1, 2), 1);
        cfg.eta = Some(rat(1, 1000));
        assert!(matches!(chain_build(&cfg), Err(Error::Infeasible(_))));
        cfg.eta = Some(rat(1, 2));
        assert!(chain_build(&cfg).unwrap().all_hold());
    }
}
