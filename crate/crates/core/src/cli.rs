//! Command-line harness: randomized campaigns, dispatchers over the library and JSON run reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halperin::chain::{chain_build, theta_half_doubling_check, ChainConfig, ChainState, DoublingReport};
use crate::halperin::{Check, Rel};
use crate::linalg::Matrix;
use crate::matalg::{Element, PseudoRank, Shape};
use crate::scalar::{rational_str, Field, Scalar};
use crate::stabilize::{
    generate_instance, k_constant, k_star_constant, stabilize_matrix_units_full, stabilize_star_full, GeneratorConfig,
    StabilizationInstance, StabilizationResult,
};
use crate::star::{
    decide_star_equivalence, find_star_witness, lp, perturbation_ratios, shrink_to_star_equiv, PartialIsometryWitness,
    Projection, StarVerdict,
};

pub const REPORT_SCHEMA: &str = "vnfactor.run-report/1";
pub const PAIR_SCHEMA: &str = "vnfactor.projection-pair/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One asserted relation. Campaign assertions carry the worst trial, so a pass covers every trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub lhs: String,
    pub relation: Rel,
    pub rhs: String,
    pub verdict: Verdict,
    pub trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_trial: Option<u64>,
}

impl Assertion {
    pub fn single(name: impl Into<String>, lhs: &BigRational, relation: Rel, rhs: &BigRational) -> Assertion {
        Assertion {
            name: name.into(),
            lhs: rational_str::to_string(lhs),
            relation,
            rhs: rational_str::to_string(rhs),
            verdict: if relation.holds(lhs, rhs) { Verdict::Pass } else { Verdict::Fail },
            trials: 1,
            worst_trial: None,
        }
    }

    /// Re-evaluates the relation from the serialized sides.
    pub fn recheck(&self) -> Result<bool> {
        let lhs = rational_str::parse(&self.lhs)?;
        let rhs = rational_str::parse(&self.rhs)?;
        Ok(self.relation.holds(&lhs, &rhs))
    }
}

impl From<&Check> for Assertion {
    fn from(c: &Check) -> Assertion {
        Assertion {
            name: c.label.clone(),
            lhs: c.lhs.clone(),
            relation: c.rel,
            rhs: c.rhs.clone(),
            verdict: if c.holds { Verdict::Pass } else { Verdict::Fail },
            trials: 1,
            worst_trial: None,
        }
    }
}

/// Largest observed value of an informative quantity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extremum {
    pub name: String,
    pub value: String,
    pub trial: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub assertions: Vec<Assertion>,
    pub maxima: Vec<Extremum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunReport {
    pub fn new(command: impl Into<String>, seed: u64) -> RunReport {
        RunReport {
            schema: REPORT_SCHEMA.into(),
            command: command.into(),
            seed,
            config: BTreeMap::new(),
            assertions: Vec::new(),
            maxima: Vec::new(),
            detail: None,
            timing: None,
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.into(), value.to_string());
    }

    pub fn absorb(&mut self, out: CampaignOutput) {
        self.assertions.extend(out.assertions);
        self.maxima.extend(out.maxima);
    }

    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.verdict == Verdict::Pass)
    }

    pub fn failures(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| a.verdict == Verdict::Fail).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report without timing: byte-identical across reruns with the same seed and config.
    pub fn canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.timing = None;
        r.to_json()
    }

    pub fn from_json(s: &str) -> Result<RunReport> {
        let r: RunReport = serde_json::from_str(s)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Input(format!("unknown report schema {:?}", r.schema)));
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, Default)]
pub struct CampaignOutput {
    pub assertions: Vec<Assertion>,
    pub maxima: Vec<Extremum>,
}

impl CampaignOutput {
    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.verdict == Verdict::Pass)
    }
}

/// What one trial observed: named relations and named informative values.
#[derive(Default)]
struct Trial {
    checks: Vec<(String, Rel, BigRational, BigRational)>,
    values: Vec<(String, BigRational)>,
}

impl Trial {
    fn check(&mut self, name: impl Into<String>, lhs: BigRational, rel: Rel, rhs: BigRational) {
        self.checks.push((name.into(), rel, lhs, rhs));
    }

    fn value(&mut self, name: impl Into<String>, v: BigRational) {
        self.values.push((name.into(), v));
    }
}

struct Tally {
    name: String,
    rel: Rel,
    trials: u64,
    last: u64,
    worst: (u64, BigRational, BigRational, bool),
}

/// Worse of two outcomes of the same relation: by lhs/rhs when both bounds are positive.
fn exceeds(lhs: &BigRational, rhs: &BigRational, wl: &BigRational, wr: &BigRational) -> bool {
    if rhs.is_positive() && wr.is_positive() {
        lhs / rhs > wl / wr
    } else {
        lhs - rhs > wl - wr
    }
}

impl Tally {
    fn add(&mut self, t: u64, lhs: BigRational, rhs: BigRational) {
        if t != self.last {
            self.trials += 1;
            self.last = t;
        }
        let holds = self.rel.holds(&lhs, &rhs);
        let (_, wl, wr, wh) = &self.worst;
        let worse = match (*wh, holds) {
            (true, false) => true,
            (false, true) => false,
            _ => exceeds(&lhs, &rhs, wl, wr),
        };
        if worse {
            self.worst = (t, lhs, rhs, holds);
        }
    }

    fn finish(self) -> Assertion {
        let (t, lhs, rhs, holds) = self.worst;
        Assertion {
            name: self.name,
            lhs: rational_str::to_string(&lhs),
            relation: self.rel,
            rhs: rational_str::to_string(&rhs),
            verdict: if holds { Verdict::Pass } else { Verdict::Fail },
            trials: self.trials,
            worst_trial: Some(t),
        }
    }
}

/// Per-trial generator keyed by (seed, campaign, trial), so parallel execution never changes output.
pub fn trial_rng(seed: u64, campaign: &str, trial: u64) -> ChaCha8Rng {
    let tag = campaign.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag);
    rng.set_stream(trial);
    rng
}

/// Runs the trials in parallel and folds them in trial order; the first failing trial's error wins.
fn campaign<F>(trials: u64, f: F) -> Result<CampaignOutput>
where
    F: Fn(u64) -> Result<Trial> + Sync,
{
    let results: Vec<Result<Trial>> = (0..trials).into_par_iter().map(&f).collect();
    let mut tallies: Vec<Tally> = Vec::new();
    let mut maxima: Vec<(String, u64, BigRational)> = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        let t = t as u64;
        let trial = r?;
        for (name, rel, lhs, rhs) in trial.checks {
            match tallies.iter_mut().find(|x| x.name == name) {
                Some(x) => x.add(t, lhs, rhs),
                None => {
                    let holds = rel.holds(&lhs, &rhs);
                    tallies.push(Tally { name, rel, trials: 1, last: t, worst: (t, lhs, rhs, holds) });
                }
            }
        }
        for (name, v) in trial.values {
            match maxima.iter_mut().find(|x| x.0 == name) {
                Some(x) if v > x.2 => *x = (name, t, v),
                Some(_) => {}
                None => maxima.push((name, t, v)),
            }
        }
    }
    Ok(CampaignOutput {
        assertions: tallies.into_iter().map(Tally::finish).collect(),
        maxima: maxima
            .into_iter()
            .map(|(name, trial, v)| Extremum { name, value: rational_str::to_string(&v), trial })
            .collect(),
    })
}

fn r(n: i64) -> BigRational {
    BigRational::from_integer(n.into())
}

fn big(n: &BigInt) -> BigRational {
    BigRational::from_integer(n.clone())
}

/// Positive weights k_b / Σk with k_b ∈ [1, 4].
fn random_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<PseudoRank> {
    let ks: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
    let total: i64 = ks.iter().sum();
    PseudoRank::new(ks.into_iter().map(|x| BigRational::new(x.into(), total.into())).collect())
}

fn random_invertible<R: Rng + ?Sized>(field: Field, n: usize, rng: &mut R) -> (Matrix, Matrix) {
    let tri = |rng: &mut R, lower: bool| {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match i.cmp(&j) {
                        std::cmp::Ordering::Equal => field.one(),
                        std::cmp::Ordering::Greater if lower => field.random_small(rng, 2),
                        std::cmp::Ordering::Less if !lower => field.random_small(rng, 2),
                        _ => field.zero(),
                    })
                    .collect()
            })
            .collect();
        Matrix::from_rows(field, rows)
    };
    let u = tri(rng, true).mul(&tri(rng, false));
    let ui = u.inverse().expect("unitriangular products are invertible");
    (u, ui)
}

/// Orthogonal idempotents u·D_e·u⁻¹ and u·D_f·u⁻¹ with disjoint random diagonal supports.
fn orthogonal_idempotents<R: Rng + ?Sized>(field: Field, shape: &Shape, rng: &mut R) -> Result<(Element, Element)> {
    let (mut es, mut fs) = (Vec::new(), Vec::new());
    for &n in shape.sizes() {
        let (u, ui) = random_invertible(field, n, rng);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let diag = |l: u8| -> Vec<Scalar> { labels.iter().map(|&x| if x == l { field.one() } else { field.zero() }).collect() };
        es.push(u.mul(&Matrix::diagonal(field, &diag(0))).mul(&ui));
        fs.push(u.mul(&Matrix::diagonal(field, &diag(1))).mul(&ui));
    }
    let (e, f) = (Element::new(field, es)?, Element::new(field, fs)?);
    let zero = Element::zero(field, shape);
    if e.mul(&e) != e || f.mul(&f) != f || e.mul(&f) != zero || f.mul(&e) != zero {
        return Err(Error::Construction("sampled idempotents are not orthogonal".into()));
    }
    Ok((e, f))
}

fn max_size(shape: &Shape) -> usize {
    shape.sizes().iter().copied().max().unwrap_or(1)
}

/// Axioms of a pseudo-rank function on random triples (a, b, orthogonal idempotent pair).
pub fn axioms_campaign(field: Field, shape: &Shape, trials: u64, seed: u64) -> Result<CampaignOutput> {
    let m = max_size(shape);
    campaign(trials, |t| {
        let mut rng = trial_rng(seed, "axioms", t);
        let n = random_weights(shape.num_blocks(), &mut rng)?;
        let ra = rng.gen_range(0..=m);
        let a = Element::random_low_rank(field, shape, ra, &mut rng, 3);
        let rb = rng.gen_range(0..=m);
        let b = Element::random_low_rank(field, shape, rb, &mut rng, 3);
        let (e, f) = orthogonal_idempotents(field, shape, &mut rng)?;
        let (na, nb) = (n.eval(&a)?, n.eval(&b)?);
        let mut tr = Trial::default();
        tr.check("N(1) = 1", n.eval(&Element::one(field, shape))?, Rel::Eq, BigRational::one());
        tr.check("0 ≤ N(a)", BigRational::zero(), Rel::Le, na.clone());
        tr.check("N(a) ≤ 1", na.clone(), Rel::Le, BigRational::one());
        tr.check("N(a + b) ≤ N(a) + N(b)", n.eval(&a.add(&b))?, Rel::Le, &na + &nb);
        let nab = n.eval(&a.mul(&b))?;
        tr.check("N(ab) ≤ N(a)", nab.clone(), Rel::Le, na);
        tr.check("N(ab) ≤ N(b)", nab, Rel::Le, nb);
        tr.check("N(e + f) = N(e) + N(f) for orthogonal idempotents", n.eval(&e.add(&f))?, Rel::Eq, n.eval(&e)? + n.eval(&f)?);
        Ok(tr)
    })
}

/// N(r*) = N(r) and the 3·, 4·, 4· perturbation bounds for the relative inverse, LP and RP.
pub fn perturbation_campaign(field: Field, shape: &Shape, trials: u64, seed: u64) -> Result<CampaignOutput> {
    field.require_star()?;
    let m = max_size(shape);
    campaign(trials, |t| {
        let mut rng = trial_rng(seed, "perturbation", t);
        let n = random_weights(shape.num_blocks(), &mut rng)?;
        let rr = rng.gen_range(1..=m);
        let x = Element::random_low_rank(field, shape, rr, &mut rng, 3);
        let rd = rng.gen_range(1..=2.min(m));
        let mut y = x.add(&Element::random_low_rank(field, shape, rd, &mut rng, 2));
        if y == x {
            y = y.add(&Element::unit(field, shape, 0, 0, 0));
        }
        let rep = perturbation_ratios(&x, &y, &n)?;
        let mut tr = Trial::default();
        tr.check("involution isometry: N(r*) = N(r)", rep.n_r_star.clone(), Rel::Eq, rep.n_r.clone());
        tr.check("relative inverse: N(r̄ − s̄) ≤ 3·N(r − s)", rep.rel_inverse_dist.clone(), Rel::Le, r(3) * &rep.dist);
        tr.check("N(LP(r) − LP(s)) ≤ 4·N(r − s)", rep.lp_dist.clone(), Rel::Le, r(4) * &rep.dist);
        tr.check("N(RP(r) − RP(s)) ≤ 4·N(r − s)", rep.rp_dist.clone(), Rel::Le, r(4) * &rep.dist);
        let [ri, rl, rp] = rep.ratios();
        tr.value("N(r̄ − s̄)/N(r − s)", ri);
        tr.value("N(LP(r) − LP(s))/N(r − s)", rl);
        tr.value("N(RP(r) − RP(s))/N(r − s)", rp);
        Ok(tr)
    })
}

fn diag_projection(field: Field, shape: &Shape, pick: impl Fn(usize, usize) -> bool) -> Result<Projection> {
    let blocks = shape
        .sizes()
        .iter()
        .enumerate()
        .map(|(b, &n)| {
            let d: Vec<Scalar> = (0..n).map(|i| if pick(b, i) { field.one() } else { field.zero() }).collect();
            Matrix::diagonal(field, &d)
        })
        .collect();
    Projection::new(Element::new(field, blocks)?)
}

/// Shrinking eᵢ near fᵢ (f₁ ∼* f₂) to *-equivalent subprojections within 5ε.
pub fn shrink_campaign(field: Field, shape: &Shape, trials: u64, seed: u64) -> Result<CampaignOutput> {
    field.require_star()?;
    campaign(trials, |t| {
        let mut rng = trial_rng(seed, "shrink", t);
        let n = random_weights(shape.num_blocks(), &mut rng)?;
        let ks: Vec<usize> = shape.sizes().iter().map(|&m| rng.gen_range(1..=(m / 2).max(1))).collect();
        let sizes = shape.sizes().to_vec();
        let f1 = diag_projection(field, shape, |b, i| i < ks[b])?;
        let f2 = diag_projection(field, shape, |b, i| i >= sizes[b] - ks[b])?;
        let mut wb = Vec::new();
        for (b, &m) in sizes.iter().enumerate() {
            let mut w = Matrix::zeros(field, m, m);
            for i in 0..ks[b] {
                w = w.add(&Matrix::unit(field, m, i, m - ks[b] + i));
            }
            wb.push(w);
        }
        let w = PartialIsometryWitness::new(Element::new(field, wb)?, f2.clone(), f1.clone())?;
        let e1 = lp(&f1.element().add(&Element::random_low_rank(field, shape, 1, &mut rng, 2)))?;
        let e2 = lp(&f2.element().add(&Element::random_low_rank(field, shape, 1, &mut rng, 2)))?;
        let eps = n.dist(e1.element(), f1.element())?.max(n.dist(e2.element(), f2.element())?);
        let out = shrink_to_star_equiv(&e1, &e2, &f1, &f2, &w, &n, &eps)?;
        let mut tr = Trial::default();
        tr.check("N(e₁ − e₁') ≤ 5ε", out.d1.clone(), Rel::Le, r(5) * &eps);
        tr.check("N(e₂ − e₂') ≤ 5ε", out.d2.clone(), Rel::Le, r(5) * &eps);
        if !eps.is_zero() {
            tr.value("max N(eᵢ − eᵢ')/ε", out.d1.max(out.d2) / &eps);
        }
        Ok(tr)
    })
}

/// Ambient M_n used for stabilization campaigns at p = 1, 2, 3.
pub fn stabilization_ambient(p: usize) -> usize {
    match p {
        1 => 6,
        2 => 8,
        _ => 4 * p,
    }
}

/// Stabilization on generated instances: max N(ρ(e_ij) − ψ(e_ij)) < K(p)·ε and every audited inequality.
pub fn stabilization_campaign(field: Field, p: usize, ambient: usize, star: bool, trials: u64, seed: u64) -> Result<CampaignOutput> {
    let cfg = GeneratorConfig { field, p, ambient, budget: 1, noise: 1, star };
    let (kname, k) = if star { ("K*", k_star_constant(p)) } else { ("K", k_constant(p)) };
    let tag = format!("stabilize-{kname}-{p}");
    campaign(trials, |t| {
        let inst_seed = trial_rng(seed, &tag, t).gen::<u64>();
        let inst = generate_instance(inst_seed, &cfg)?;
        let res = run_stabilization(&inst, star)?;
        let mut tr = stabilization_trial(&res, kname, &k, &inst.eps);
        tr.value(format!("{kname}({p}) ratio max N(ρ(e_ij) − ψ(e_ij))/ε"), res.ratio.clone());
        Ok(tr)
    })
}

fn run_stabilization(inst: &StabilizationInstance, star: bool) -> Result<StabilizationResult> {
    if star {
        stabilize_star_full(inst, None)
    } else {
        stabilize_matrix_units_full(inst)
    }
}

fn stabilization_trial(res: &StabilizationResult, kname: &str, k: &BigInt, eps: &BigRational) -> Trial {
    let p = res.p;
    let mut tr = Trial::default();
    let worst = res.distances.iter().max().cloned().unwrap_or_default();
    tr.check(format!("{kname}({p}) = {k}: max N(ρ(e_ij) − ψ(e_ij)) < {kname}({p})·ε"), worst, Rel::Lt, big(k) * eps);
    for e in &res.audit.entries {
        let rel = if e.strict { Rel::Lt } else { Rel::Le };
        tr.check(format!("{kname}({p}) audit: {}", e.step), e.lhs.clone(), rel, e.rhs.clone());
    }
    tr
}

#[derive(Clone, Debug)]
pub struct BoundsConfig {
    pub field: Field,
    pub shape: Shape,
    pub trials: u64,
    /// Trials per stabilization campaign; defaults to `trials`.
    pub k_trials: Option<u64>,
    pub seed: u64,
}

/// Randomized campaigns for the pseudo-rank axioms, the 3/4/5 perturbation bounds, isometry of the
/// involution and the stabilization constants K(p), p ∈ {1, 2, 3}.
pub fn cmd_bounds(cfg: &BoundsConfig) -> Result<RunReport> {
    let mut rep = RunReport::new("bounds", cfg.seed);
    let k_trials = cfg.k_trials.unwrap_or(cfg.trials);
    rep.config("field", cfg.field);
    rep.config("shape", serde_json::to_string(&cfg.shape)?);
    rep.config("trials", cfg.trials);
    rep.config("k_trials", k_trials);
    if cfg.trials == 0 {
        return Ok(rep);
    }
    rep.absorb(axioms_campaign(cfg.field, &cfg.shape, cfg.trials, cfg.seed)?);
    let star = cfg.field.is_positive_definite();
    if star {
        rep.absorb(perturbation_campaign(cfg.field, &cfg.shape, cfg.trials, cfg.seed)?);
        rep.absorb(shrink_campaign(cfg.field, &cfg.shape, cfg.trials, cfg.seed)?);
    } else {
        rep.config("star_campaigns", "skipped: no positive definite involution");
    }
    for p in 1..=3 {
        rep.absorb(stabilization_campaign(cfg.field, p, stabilization_ambient(p), false, k_trials, cfg.seed)?);
    }
    if star {
        for p in 1..=2 {
            rep.absorb(stabilization_campaign(cfg.field, p, stabilization_ambient(p), true, k_trials, cfg.seed)?);
        }
    }
    Ok(rep)
}

/// Runs stabilization on an instance file's contents (star mode when A is presented by a unitary).
pub fn cmd_stabilize(instance_json: &str) -> Result<RunReport> {
    let inst = StabilizationInstance::from_json(instance_json)?;
    let star = inst.algebra.is_star() && inst.field.is_positive_definite();
    let mut rep = RunReport::new("stabilize", 0);
    rep.config("field", inst.field);
    rep.config("p", inst.p);
    rep.config("star", star);
    rep.config("eps", rational_str::to_string(&inst.eps));
    rep.config("eps_observed", rational_str::to_string(&inst.eps_observed));
    let res = run_stabilization(&inst, star)?;
    let (kname, k) = if star { ("K*", k_star_constant(inst.p)) } else { ("K", k_constant(inst.p)) };
    let tr = stabilization_trial(&res, kname, &k, &inst.eps);
    for (name, rel, lhs, rhs) in tr.checks {
        rep.assertions.push(Assertion::single(name, &lhs, rel, &rhs));
    }
    rep.maxima.push(Extremum { name: format!("{kname}({}) ratio", inst.p), value: rational_str::to_string(&res.ratio), trial: 0 });
    rep.detail = Some(serde_json::to_value(&res)?);
    Ok(rep)
}

#[derive(Debug, Serialize)]
pub struct HalperinTranscript {
    #[serde(flatten)]
    pub chain: ChainState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doubling: Option<DoublingReport>,
}

impl HalperinTranscript {
    pub fn all_hold(&self) -> bool {
        self.chain.all_hold() && self.doubling.as_ref().is_none_or(|d| d.checks.all_hold())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Builds the chain; at θ = 1/2 with n even the doubling bookkeeping is attached.
pub fn cmd_halperin(cfg: &ChainConfig) -> Result<HalperinTranscript> {
    let chain = chain_build(cfg)?;
    let half = BigRational::new(1.into(), 2.into());
    let doubling = if cfg.theta == half && cfg.n.is_multiple_of(2) { Some(theta_half_doubling_check(&chain)?) } else { None };
    Ok(HalperinTranscript { chain, doubling })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionPair {
    pub schema: String,
    pub p: Element,
    pub q: Element,
}

impl ProjectionPair {
    pub fn new(p: &Projection, q: &Projection) -> ProjectionPair {
        ProjectionPair { schema: PAIR_SCHEMA.into(), p: p.element().clone(), q: q.element().clone() }
    }

    pub fn from_json(s: &str) -> Result<(Projection, Projection)> {
        let pair: ProjectionPair = serde_json::from_str(s)?;
        if pair.schema != PAIR_SCHEMA {
            return Err(Error::Input(format!("unsupported schema {}", pair.schema)));
        }
        Ok((Projection::new(pair.p)?, Projection::new(pair.q)?))
    }
}

/// Decides p ∼* q and verifies any witness.
pub fn cmd_star_equiv(pair_json: &str) -> Result<RunReport> {
    let (p, q) = ProjectionPair::from_json(pair_json)?;
    let field = p.element().field();
    let mut rep = RunReport::new("star-equiv", 0);
    rep.config("field", field);
    rep.config("shape", serde_json::to_string(&p.element().shape())?);
    let verdict = decide_star_equivalence(&p, &q)?;
    let n = PseudoRank::uniform(p.element().shape().num_blocks());
    let zero = BigRational::zero();
    match &verdict {
        StarVerdict::StarEquivalent { witness } => {
            let w = &witness.w;
            let d1 = n.dist(&w.mul(&w.adjoint()), p.element())?;
            let d2 = n.dist(&w.adjoint().mul(w), q.element())?;
            rep.assertions.push(Assertion::single("N(w·w* − p) = 0", &d1, Rel::Eq, &zero));
            rep.assertions.push(Assertion::single("N(w*·w − q) = 0", &d2, Rel::Eq, &zero));
            rep.config("verdict", "*-equivalent");
        }
        StarVerdict::NotStarEquivalent { p: ip, q: iq, equivalent } => {
            if find_star_witness(&p, &q)?.is_some() {
                return Err(Error::Assertion("a witness exists for distinct invariants".into()));
            }
            let (rp, rq) = (n.eval(p.element())?, n.eval(q.element())?);
            if *equivalent {
                rep.assertions.push(Assertion::single("ordinary equivalence: N(p) = N(q)", &rp, Rel::Eq, &rq));
            }
            rep.config("verdict", "not *-equivalent");
            rep.config("equivalent", equivalent);
            rep.config("discriminant_p", &ip.discriminant);
            rep.config("discriminant_q", &iq.discriminant);
        }
    }
    rep.detail = Some(serde_json::to_value(&verdict)?);
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum GenKind {
    /// A stabilization instance.
    Stabilization,
    /// A pair (e₁₁, LP(v)) in M_n(ℚ(i)) with v of Gaussian height ≤ 3.
    Pair,
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub kind: GenKind,
    pub field: Field,
    pub p: usize,
    pub ambient: usize,
    pub budget: usize,
    pub noise: usize,
    pub star: bool,
    pub seed: u64,
}

pub fn cmd_gen(cfg: &GenConfig) -> Result<String> {
    match cfg.kind {
        GenKind::Stabilization => {
            let g = GeneratorConfig {
                field: cfg.field,
                p: cfg.p,
                ambient: cfg.ambient,
                budget: cfg.budget,
                noise: cfg.noise,
                star: cfg.star,
            };
            generate_instance(cfg.seed, &g)?.to_json()
        }
        GenKind::Pair => {
            let n = cfg.ambient;
            if n < 2 {
                return Err(Error::Input("a pair needs n ≥ 2".into()));
            }
            let field = Field::QI;
            let shape = Shape::single(n);
            let mut rng = trial_rng(cfg.seed, "pair", 0);
            let mut col = vec![vec![field.one()]];
            col.extend((1..n).map(|_| vec![field.random_small(&mut rng, 3)]));
            let v = Element::single(Matrix::from_rows(field, col).hstack(&Matrix::zeros(field, n, n - 1)));
            let p = Projection::new(Element::unit(field, &shape, 0, 0, 0))?;
            let q = lp(&v)?;
            Ok(serde_json::to_string_pretty(&ProjectionPair::new(&p, &q))?)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vnfactor", version, about = "Exact pseudo-rank campaigns, matrix-unit stabilization and Halperin chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the timing field out of reports.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomized campaigns for the axioms, perturbation bounds and K(p).
    Bounds {
        #[arg(long, default_value = "qi")]
        field: Field,
        /// Block sizes, comma separated.
        #[arg(long, default_value = "6")]
        shape: String,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        /// Trials per stabilization campaign (defaults to --trials).
        #[arg(long)]
        k_trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Stabilize the matrix units of an instance file.
    Stabilize {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Build a finite-stage chain in M_n and write its transcript.
    Halperin {
        #[arg(long, default_value = "q")]
        field: Field,
        #[arg(long, default_value = "1/3")]
        theta: String,
        #[arg(long, default_value_t = 1)]
        stages: usize,
        #[arg(long, default_value_t = 1_663_200)]
        ambient: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simple factors of A₀ carrying ψ(e₁₁).
        #[arg(long, default_value_t = 2)]
        pieces: usize,
        /// Trailing slots where the stage-0 approximant of 1 vanishes.
        #[arg(long, default_value_t = 1)]
        defect: usize,
        /// Size of the z sample for the rank identity and Cauchy bounds.
        #[arg(long, default_value_t = 4)]
        z_samples: usize,
        /// Tolerance for the surjectivity desk-check.
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        star: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Decide *-equivalence for a projection pair file.
    StarEquiv {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Generate an instance file.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        #[arg(long, default_value = "q")]
        field: Field,
        #[arg(long, default_value_t = 2)]
        p: usize,
        #[arg(long, default_value_t = 8)]
        ambient: usize,
        #[arg(long, default_value_t = 1)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        noise: usize,
        #[arg(long)]
        star: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

pub fn parse_shape(s: &str) -> Result<Shape> {
    let sizes = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Input(format!("bad block size `{t}` in shape `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    Shape::new(sizes)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => std::fs::write(path, format!("{text}\n"))?,
        None => {
            use std::io::Write;
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn emit_report(output: &Output, mut rep: RunReport, start: Instant) -> Result<i32> {
    if !output.no_timing {
        rep.timing = Some(Timing { elapsed_ms: start.elapsed().as_millis() as u64 });
    }
    emit(output, &rep.to_json()?)?;
    for a in rep.failures() {
        eprintln!("violated: {}: {} {} {}", a.name, a.lhs, a.relation, a.rhs);
    }
    Ok(if rep.all_pass() { 0 } else { 2 })
}

/// Runs one command and returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    let start = Instant::now();
    match cli.command {
        Command::Bounds { field, shape, trials, k_trials, seed, output } => {
            let cfg = BoundsConfig { field, shape: parse_shape(&shape)?, trials, k_trials, seed };
            emit_report(&output, cmd_bounds(&cfg)?, start)
        }
        Command::Stabilize { input, output } => emit_report(&output, cmd_stabilize(&read(&input)?)?, start),
        Command::StarEquiv { input, output } => emit_report(&output, cmd_star_equiv(&read(&input)?)?, start),
        Command::Halperin { field, theta, stages, ambient, seed, pieces, defect, z_samples, eta, star, output } => {
            let mut cfg = ChainConfig::new(field, ambient, rational_str::parse(&theta)?, stages);
            cfg.pieces = pieces;
            cfg.defect = defect;
            cfg.z_samples = z_samples;
            cfg.star = star;
            cfg.step.seed = seed;
            cfg.eta = eta.as_deref().map(rational_str::parse).transpose()?;
            let t = cmd_halperin(&cfg)?;
            emit(&output, &t.to_json()?)?;
            Ok(if t.all_hold() { 0 } else { 2 })
        }
        Command::Gen { kind, field, p, ambient, budget, noise, star, seed, output } => {
            let cfg = GenConfig { kind, field, p, ambient, budget, noise, star, seed };
            emit(&output, &cmd_gen(&cfg)?)?;
            Ok(0)
        }
    }
}

/// Entry point of the binary: parses arguments, runs, and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
