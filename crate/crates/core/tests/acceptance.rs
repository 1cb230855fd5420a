use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use vnfactor::cli::{
    axioms_campaign, perturbation_campaign, shrink_campaign, stabilization_campaign, CampaignOutput, RunReport,
};
use vnfactor::halperin::chain::{chain_build, theta_half_doubling_check, ChainConfig};
use vnfactor::halperin::slot::{norm, SlotElement};
use vnfactor::halperin::sparse::{RankCache, Sparse};
use vnfactor::matalg::{Element, Shape};
use vnfactor::scalar::rat;
use vnfactor::stabilize::k_constant;
use vnfactor::star::{decide_star_equivalence, lp, Projection, StarVerdict};
use vnfactor::{Field, Matrix, Scalar};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SEED: u64 = 20_240_601;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Every assertion passes, re-checks from its serialized sides, and covers `trials` trials.
fn campaign_ok(out: &CampaignOutput, trials: u64) -> Result<(), String> {
    for a in &out.assertions {
        let again = a.recheck().map_err(|e| e.to_string())?;
        ensure(a.verdict == vnfactor::cli::Verdict::Pass && again, format!("{}: {} {} {}", a.name, a.lhs, a.relation, a.rhs))?;
        ensure(a.trials == trials, format!("{} covered {} of {trials} trials", a.name, a.trials))?;
    }
    Ok(())
}

fn maxima(out: &CampaignOutput) -> String {
    out.maxima.iter().map(|m| format!("{} = {}", m.name, m.value)).collect::<Vec<_>>().join("; ")
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, format!("{what} took {elapsed:.1?}, limit {limit:?}"))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = [(Field::Q, vec![4]), (Field::Q, vec![2, 3]), (Field::QI, vec![4])];
    let mut n = 0;
    for (field, sizes) in cases {
        let shape = Shape::new(sizes).map_err(|e| e.to_string())?;
        let out = axioms_campaign(field, &shape, 1000, SEED).map_err(|e| e.to_string())?;
        ensure(out.assertions.len() == 7, "expected seven axiom relations")?;
        campaign_ok(&out, 1000)?;
        n += out.assertions.len();
    }
    within(start.elapsed(), Duration::from_secs(60), "axiom campaigns")?;
    Ok(format!("3 shapes × 1000 triples, {n} relation families, {:.1?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let out = stabilization_campaign(Field::Q, 1, 6, false, 1000, SEED).map_err(|e| e.to_string())?;
    campaign_ok(&out, 1000)?;
    let bound = out
        .assertions
        .iter()
        .find(|a| a.name.starts_with("K(1) = 4:"))
        .ok_or("no K(1) bound assertion")?;
    ensure(bound.rhs != "0", "ε must be positive")?;
    Ok(format!("1000 instances in M6(Q), worst N(ρ(1) − g) = {} < {}; {}", bound.lhs, bound.rhs, maxima(&out)))
}

/// K(1) = 4, K(p) = (2^{p+3} + 2^p − 2)·K(p−1) + 2^{p+3} + 2^p evaluated in machine integers.
fn k_oracle(p: u32) -> i128 {
    (2..=p).fold(4i128, |k, q| (2i128.pow(q + 3) + 2i128.pow(q) - 2) * k + 2i128.pow(q + 3) + 2i128.pow(q))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    ensure(k_oracle(2) == 172 && k_oracle(3) == 12112, "recursion oracle disagrees with the printed constants")?;
    for p in 1..=6 {
        ensure(k_constant(p as usize) == BigInt::from(k_oracle(p)), format!("k_constant({p}) disagrees with the oracle"))?;
    }
    let trials = 1000;
    let mut notes = Vec::new();
    for (p, ambient) in [(2, 8), (3, 12)] {
        let out = stabilization_campaign(Field::Q, p, ambient, false, trials, SEED).map_err(|e| e.to_string())?;
        campaign_ok(&out, trials)?;
        let audited = out.assertions.iter().filter(|a| a.name.contains("audit")).count();
        ensure(audited > 0, "audit is empty")?;
        notes.push(format!("p = {p} in M{ambient}: {audited} audited inequalities, {}", maxima(&out)));
    }
    within(start.elapsed(), Duration::from_secs(300), "K(2), K(3) campaigns")?;
    Ok(format!("K(2) = 172, K(3) = 12112; {trials} trials each; {}; {:.1?}", notes.join("; "), start.elapsed()))
}

fn criterion_4() -> Outcome {
    let shape = Shape::single(6);
    let pert = perturbation_campaign(Field::QI, &shape, 1000, SEED).map_err(|e| e.to_string())?;
    campaign_ok(&pert, 1000)?;
    let shrink = shrink_campaign(Field::QI, &shape, 1000, SEED).map_err(|e| e.to_string())?;
    campaign_ok(&shrink, 1000)?;
    ensure(pert.assertions.len() == 4 && shrink.assertions.len() == 2, "missing bound families")?;
    Ok(format!("1000 trials each over M6(Q(i)), zero violations; maxima: {}; {}", maxima(&pert), maxima(&shrink)))
}

fn frac(a: usize, b: usize) -> BigRational {
    BigRational::new(a.into(), b.into())
}

fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    for theta in [rat(1, 3), rat(2, 5)] {
        let chain = chain_build(&ChainConfig::new(Field::Q, 27720, theta.clone(), 1)).map_err(|e| e.to_string())?;
        let t = &chain.traces[0];
        ensure(t.checks.all_hold(), "a step check failed")?;
        for c in 1..=6 {
            ensure(t.checks.items.iter().any(|x| x.label.starts_with(&format!("({c})"))), format!("condition ({c}) not verified"))?;
        }
        let (s0, s1) = (&chain.states[0], &chain.states[1]);
        ensure(s0.p == 1 && s0.q == 1, "first step must start from p = q = 1")?;
        let plan = &t.plan;
        for (i, e) in plan.eps_i.iter().enumerate() {
            let drop = frac(plan.p_i[i] - plan.p_i_new[i], plan.q_new);
            ensure(e * rat(5, 8) < drop && drop < e * rat(3, 4), format!("window inequality fails for piece {i}"))?;
        }
        let (old, new) = (BigRational::one(), frac(s1.p, s1.q));
        ensure((&old - &theta) / BigRational::from_integer(2.into()) < &old - &new, "key inequality fails")?;
        ensure(new > theta, "p'/q' must stay above θ")?;
        let amb = chain.ambient.as_ref().ok_or("ambient missing")?;
        let one = SlotElement::rho(s1.frame, Sparse::identity(Field::Q, s1.p));
        let n1 = norm(amb, &one, &mut RankCache::new()).map_err(|e| e.to_string())?;
        ensure(n1 == new, format!("N(ρ'(1)) = {n1}, expected {new}"))?;
        notes.push(format!("θ = {theta}: (q', p') = ({}, {}), {} checks", s1.q, s1.p, t.checks.len()));
    }
    Ok(format!("M27720(Q), {}", notes.join("; ")))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let theta = rat(1, 3);
    let mut cfg = ChainConfig::new(Field::Q, 1_663_200, theta.clone(), 3);
    cfg.z_samples = 10;
    let chain = chain_build(&cfg).map_err(|e| e.to_string())?;
    ensure(chain.all_hold(), "a chain check failed")?;
    let s = &chain.states;
    ensure(s.len() == 4, "expected stages 0..=3")?;
    let delta: Vec<BigRational> = s.iter().map(|st| frac(st.p, st.q) - &theta).collect();
    for i in 1..s.len() {
        ensure(s[i].p % s[i - 1].p == 0, "p_i must divide p_(i+1)")?;
        ensure(delta[i] > BigRational::zero() && delta[i].clone() * BigRational::from_integer(2.into()) < delta[i - 1], format!("δ_{i} is not below δ_{}/2", i - 1))?;
    }
    // ρ_j(1) ≥ ρ_h(1), so N(ρ_h(1) − ρ_j(1)) = p_j/q_j − p_h/q_h, which must sit below δ_j + ⋯ + δ_(h−1).
    let amb = chain.ambient.as_ref().ok_or("ambient missing")?;
    let mut cache = RankCache::new();
    let mut pairs = 0;
    for j in 0..s.len() {
        for h in j + 1..s.len() {
            let rj = SlotElement::rho_lifted(s[0].frame, s[j].frame, Sparse::identity(Field::Q, 1));
            let rh = SlotElement::rho_lifted(s[0].frame, s[h].frame, Sparse::identity(Field::Q, 1));
            let d = norm(amb, &rh.sub(&rj), &mut cache).map_err(|e| e.to_string())?;
            let bound: BigRational = delta[j..h].iter().sum();
            ensure(d == frac(s[j].p, s[j].q) - frac(s[h].p, s[h].q) && d < bound, format!("Cauchy bound fails at ({j}, {h})"))?;
            pairs += 1;
        }
    }
    let cauchy = chain.checks.items.iter().filter(|c| c.label.starts_with("Cauchy (i,j,h)")).count();
    for i in 0..s.len() {
        let ids = chain.checks.items.iter().filter(|c| c.label.starts_with("rank identity") && c.label.contains(&format!(",{i}(z"))).count();
        ensure(ids >= 10 * (s.len() - i), format!("rank identity sampled {ids} times from stage {i}"))?;
    }
    let stages: Vec<String> = s[1..].iter().map(|st| format!("({}, {})", st.q, st.p)).collect();
    Ok(format!(
        "M1663200(Q), stages (q, p) = {}; {} chain checks, {cauchy} Cauchy assertions, {pairs} pairwise oracle bounds; {:.1?}",
        stages.join(" "),
        chain.checks.len(),
        start.elapsed()
    ))
}

fn line(a: (i64, i64)) -> Result<Projection, String> {
    let f = Field::QI;
    let q = |re: i64, im: i64| Scalar::QI(rat(re, 1), rat(im, 1));
    let v = Matrix::from_rows(f, vec![vec![q(1, 0), f.zero()], vec![q(a.0, a.1), f.zero()]]);
    lp(&Element::single(v)).map_err(|e| e.to_string())
}

/// Exhaustive witness search for LP(1, a) ∼* LP(1, b): any witness is c·u·v* with |c|²·h(u)·h(v) = 1,
/// so it exists iff h(u)·h(v) = x² + y²; the found witness is checked by matrix products.
fn brute_force_witness(a: (i64, i64), b: (i64, i64)) -> Result<bool, String> {
    let (hu, hv) = (1 + a.0 * a.0 + a.1 * a.1, 1 + b.0 * b.0 + b.1 * b.1);
    let h = hu * hv;
    let f = Field::QI;
    let q = |re: i64, im: i64| Scalar::QI(rat(re, 1), rat(im, 1));
    for x in 0..=h {
        for y in 0..=h {
            if x * x + y * y != h {
                continue;
            }
            let u = Matrix::from_rows(f, vec![vec![q(1, 0)], vec![q(a.0, a.1)]]);
            let v = Matrix::from_rows(f, vec![vec![q(1, 0)], vec![q(b.0, b.1)]]);
            let c = Scalar::QI(BigRational::new(x.into(), h.into()), BigRational::new(y.into(), h.into()));
            let w = Element::single(u.mul(&v.adjoint()).scale(&c));
            let (p, r) = (line(a)?, line(b)?);
            ensure(w.mul(&w.adjoint()) == *p.element() && w.adjoint().mul(&w) == *r.element(), "brute-force witness does not verify")?;
            return Ok(true);
        }
    }
    Ok(false)
}

fn criterion_7() -> Outcome {
    let e11 = line((0, 0))?;
    match decide_star_equivalence(&line((1, 1))?, &e11).map_err(|e| e.to_string())? {
        StarVerdict::NotStarEquivalent { p, q, equivalent } => {
            ensure(equivalent, "rank-one projections must be equivalent")?;
            ensure(p.discriminant == BigInt::from(3) && q.discriminant == BigInt::one(), "unexpected discriminant classes")?;
        }
        _ => return Err("discriminant-3 projection reported *-equivalent to e11".into()),
    }
    match decide_star_equivalence(&line((1, 0))?, &e11).map_err(|e| e.to_string())? {
        StarVerdict::StarEquivalent { witness } => {
            let w = &witness.w;
            ensure(w.mul(&w.adjoint()) == *line((1, 0))?.element() && w.adjoint().mul(w) == *e11.element(), "witness does not verify")?;
        }
        _ => return Err("discriminant-2 projection reported not *-equivalent".into()),
    }
    let vals: Vec<(i64, i64)> = (-3..=3).flat_map(|a| (-3..=3).map(move |b| (a, b))).collect();
    let lines: Vec<Projection> = vals.iter().map(|&a| line(a)).collect::<Result<_, _>>()?;
    let (mut agree, mut yes) = (0, 0);
    for (i, &a) in vals.iter().enumerate() {
        for (j, &b) in vals.iter().enumerate().skip(i) {
            let v = decide_star_equivalence(&lines[i], &lines[j]).map_err(|e| e.to_string())?;
            let bf = brute_force_witness(a, b)?;
            ensure(v.is_equivalent() == bf, format!("oracle and brute force disagree on {a:?} vs {b:?}"))?;
            agree += 1;
            yes += bf as usize;
        }
    }
    Ok(format!("disc 3 not *-equivalent, disc 2 *-equivalent with verified witness; {agree} height-≤3 pairs agree ({yes} *-equivalent)"))
}

fn criterion_8() -> Outcome {
    let mut cfg = ChainConfig::new(Field::Q, 1_663_200, rat(1, 2), 2);
    cfg.z_samples = 4;
    let chain = chain_build(&cfg).map_err(|e| e.to_string())?;
    let rep = theta_half_doubling_check(&chain).map_err(|e| e.to_string())?;
    ensure(rep.checks.all_hold(), "a doubling check failed")?;
    ensure(rep.stages.len() == chain.states.len(), "doubling must cover every stage")?;
    for st in &rep.stages {
        ensure(st.rank_e + st.rank_complement == chain.n, "rank(e) + rank(1 − e) ≠ n")?;
        ensure(st.rank_half == st.rank_half_complement && 2 * st.rank_half == chain.n, format!("stage {}: rank(e½) ≠ rank(1 − e½)", st.stage))?;
    }
    let ranks: Vec<String> = rep.stages.iter().map(|s| format!("{}: rank(e) = {}, rank(e½) = rank(1 − e½) = {}", s.stage, s.rank_e, s.rank_half)).collect();
    Ok(format!("M1663200(Q), {}", ranks.join("; ")))
}

fn scratch() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vnfactor-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

fn run(args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vnfactor")).args(args).output().map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn criterion_9() -> Outcome {
    let dir = scratch();
    let inst = dir.join("instance.json");
    let pair = dir.join("pair.json");
    let (inst_s, pair_s) = (inst.to_str().unwrap(), pair.to_str().unwrap());
    std::fs::write(&inst, run(&["gen", "stabilization", "--p", "2", "--ambient", "8", "--seed", "7"])?.1).map_err(|e| e.to_string())?;
    std::fs::write(&pair, run(&["gen", "pair", "--ambient", "3", "--seed", "5"])?.1).map_err(|e| e.to_string())?;
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen", "stabilization", "--p", "2", "--ambient", "8", "--seed", "7"],
        vec!["gen", "pair", "--ambient", "3", "--seed", "5"],
        vec!["bounds", "--field", "qi", "--trials", "20", "--k-trials", "2", "--seed", "11"],
        vec!["bounds", "--field", "q", "--shape", "2,3", "--trials", "20", "--k-trials", "2", "--seed", "11"],
        vec!["stabilize", inst_s],
        vec!["star-equiv", pair_s],
        vec!["halperin", "--theta", "2/5", "--stages", "1", "--ambient", "27720", "--seed", "3"],
    ];
    for c in &commands {
        let (code_a, a) = run(c)?;
        let (code_b, b) = run(c)?;
        ensure(code_a == 0 && code_b == 0, format!("{} exited {code_a}/{code_b}", c.join(" ")))?;
        let text = String::from_utf8(a.clone()).map_err(|e| e.to_string())?;
        let canon = |t: &str| -> Result<String, String> {
            if t.contains("\"vnfactor.run-report/1\"") {
                RunReport::from_json(t).and_then(|r| r.canonical_json()).map_err(|e| e.to_string())
            } else {
                Ok(t.to_string())
            }
        };
        let (ca, cb) = (canon(&text)?, canon(&String::from_utf8(b).map_err(|e| e.to_string())?)?);
        ensure(ca == cb, format!("{} is not reproducible", c.join(" ")))?;
        let v: serde_json::Value = serde_json::from_str(&ca).map_err(|e| e.to_string())?;
        ensure(v["schema"].as_str().is_some_and(|s| s.starts_with("vnfactor.")), "output lacks a schema field")?;
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("{} commands rerun with identical seeds, byte-identical modulo timing", commands.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("pseudo-rank axioms", criterion_1),
        ("K(1) = 4 bound", criterion_2),
        ("K(2) = 172 and K(3) = 12112", criterion_3),
        ("perturbation bounds 3/4/5", criterion_4),
        ("inductive step conditions", criterion_5),
        ("chain Cauchy ledger", criterion_6),
        ("*-equivalence failure exhibit", criterion_7),
        ("θ = 1/2 doubling bookkeeping", criterion_8),
        ("determinism", criterion_9),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {reason}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
