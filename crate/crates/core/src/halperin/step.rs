//! One inductive step, run inside the slot ambient with every inequality of the proof asserted.

use std::ops::Range;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::slot::{compress, norm, SlotAmbient, SlotElement};
use super::sparse::{RankCache, Sparse};
use super::window::{choose_integer_in_window, choose_rational_window, StepPlan};
use super::{Checks, Eps, Rel};
use crate::error::{Error, Result};
use crate::matalg::PseudoRank;
use crate::scalar::{rational_str, Field};
use crate::star::{certify_hereditarily_quasi_standard, HqsCertificate, Projection, StarPresentation};

/// The data a stage hands to the next: ρ = ρ_frame, the pieces of A containing ψ(e₁₁) and ε.
///
/// A is ⊕ᵢ ρ(M_p)|Rᵢ ⊕ K·(defect) ⊕ K·(1 − ρ(1)). The approximants of ρ(e_ab) are Σᵢ ρ(e_ab)|Rᵢ;
/// they differ from ρ(e_ab) only on the defect slots.
#[derive(Clone, Debug, Serialize)]
pub struct StageState {
    pub frame: usize,
    pub p: usize,
    pub q: usize,
    #[serde(with = "rational_str")]
    pub theta: BigRational,
    pub eps: Eps,
    pub pieces: Vec<Range<usize>>,
    pub defect: Option<Range<usize>>,
    pub star: bool,
}

impl StageState {
    /// p = q = 1, ρ(1) = 1 and A = K^pieces ⊕ K on `defect` trailing slots.
    pub fn initial(amb: &SlotAmbient, theta: &BigRational, pieces: usize, defect: usize, star: bool) -> Result<StageState> {
        if *theta <= BigRational::zero() || *theta >= BigRational::from_integer(1.into()) {
            return Err(Error::Input(format!("θ = {} is not in (0, 1)", rational_str::to_string(theta))));
        }
        if amb.frames.len() != 1 {
            return Err(Error::Input("the ambient already carries later frames".into()));
        }
        if pieces == 0 || defect + pieces > amb.n {
            return Err(Error::Input(format!("cannot split M_{} into {pieces} pieces and {defect} defect slots", amb.n)));
        }
        let body = amb.n - defect;
        let size = body / pieces;
        let mut ranges: Vec<Range<usize>> = (0..pieces).map(|i| i * size..(i + 1) * size).collect();
        ranges.last_mut().expect("pieces ≥ 1").end = body;
        let gap = BigRational::from_integer(1.into()) - theta;
        Ok(StageState {
            frame: 0,
            p: 1,
            q: 1,
            theta: theta.clone(),
            eps: Eps::half_bound(1, &gap, star),
            pieces: ranges,
            defect: (defect > 0).then_some(body..amb.n),
            star,
        })
    }

    pub fn ratio(&self) -> BigRational {
        BigRational::new(self.p.into(), self.q.into())
    }

    pub fn gap(&self) -> BigRational {
        self.ratio() - &self.theta
    }
}

#[derive(Clone, Debug)]
pub struct StepConfig {
    pub seed: u64,
    /// Corner elements x for condition (3) and elements z for condition (4), besides the fixed ones.
    pub samples: usize,
    /// Index tuples checked for the identities that are too many to enumerate.
    pub pairs: usize,
}

impl Default for StepConfig {
    fn default() -> StepConfig {
        StepConfig { seed: 0, samples: 3, pairs: 4 }
    }
}

/// How the quasi-standard hypothesis on g is established before a *-step.
pub enum StarGate<'a> {
    /// g is a sum of diagonal matrix units of the presented standard algebra.
    Standard,
    /// A dense model of g and its algebra, certified through the star module.
    Dense { g: &'a Projection, pres: &'a StarPresentation, family: &'a [Projection], rank: &'a PseudoRank, eps: &'a BigRational, depth: usize },
}

fn sp(field: Field, n: usize, i: usize, j: usize) -> Sparse {
    Sparse::unit(field, n, i, j)
}

pub(crate) fn random_sparse(field: Field, n: usize, rng: &mut ChaCha8Rng) -> Sparse {
    let nnz = rng.gen_range(1..=(2 * n).min(24));
    Sparse::from_entries(field, n, (0..nnz).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), field.random_small(rng, 3))))
}

/// Index pairs: the corners plus random ones.
fn index_pairs(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)];
    if n <= 3 {
        out = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
    }
    for _ in 0..extra {
        out.push((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    out.dedup();
    out
}

/// Σᵢ ρ(z)|Rᵢ.
fn on_pieces(st: &StageState, z: &Sparse) -> SlotElement {
    let mut x = SlotElement::zero();
    for r in &st.pieces {
        x = x.add(&SlotElement::rho_on(st.frame, z.clone(), r.clone()));
    }
    x
}

fn approx(field: Field, st: &StageState, a: usize, b: usize) -> SlotElement {
    on_pieces(st, &sp(field, st.p, a, b))
}

fn defect_part(field: Field, st: &StageState) -> Option<SlotElement> {
    st.defect.clone().map(|d| SlotElement::rho_on(0, Sparse::identity(field, 1), d))
}

fn complement(field: Field, st: &StageState) -> SlotElement {
    SlotElement::one(field).sub(&SlotElement::rho(st.frame, Sparse::identity(field, st.p)))
}

/// A random element of A.
pub(crate) fn algebra_sample(field: Field, st: &StageState, rng: &mut ChaCha8Rng) -> SlotElement {
    let mut x = SlotElement::zero();
    for r in &st.pieces {
        x = x.add(&SlotElement::rho_on(st.frame, random_sparse(field, st.p, rng), r.clone()));
    }
    if let Some(d) = defect_part(field, st) {
        x = x.add(&d.scale(&field.random_small(rng, 3)));
    }
    x.add(&complement(field, st).scale(&field.random_small(rng, 3)))
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockLayout {
    /// Frame-(j+1) block size s' = n/q'.
    pub block: usize,
    /// Block starts in frame-j slots, piece by piece.
    pub starts: Vec<usize>,
    /// Piece of each block.
    pub piece_of: Vec<usize>,
    /// Piece hosting e = h_{(1,1),(1,1)}.
    pub e_piece: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepTrace {
    pub stage: usize,
    pub input: StageState,
    #[serde(with = "rational_str")]
    pub n_f_prime: BigRational,
    #[serde(serialize_with = "super::window::ser_vec")]
    pub n_f: Vec<BigRational>,
    /// The approximants already form matrix units, so ψ takes them as they are.
    pub stabilization: String,
    pub plan: StepPlan,
    pub layout: BlockLayout,
    pub output: StageState,
    /// g' = ρ'(e'₁₁) in *-mode.
    pub g_prime: Option<String>,
    pub certificate: Option<HqsCertificate>,
    pub checks: Checks,
}

/// Runs the step from `st`, extending the ambient by one frame.
pub fn halperin_step(amb: &mut SlotAmbient, st: &StageState, plan: Option<StepPlan>, cfg: &StepConfig) -> Result<StepTrace> {
    if st.star {
        return Err(Error::Input("a *-stage goes through halperin_step_star".into()));
    }
    run_step(amb, st, plan, cfg, None)
}

/// The *-version: the quasi-standard gate runs before anything is constructed.
pub fn halperin_step_star(
    amb: &mut SlotAmbient,
    st: &StageState,
    gate: &StarGate,
    plan: Option<StepPlan>,
    cfg: &StepConfig,
) -> Result<StepTrace> {
    amb.field.require_star()?;
    if !st.star {
        return Err(Error::Input("the stage was not built in *-mode".into()));
    }
    let cert = match gate {
        StarGate::Standard => None,
        StarGate::Dense { g, pres, family, rank, eps, depth } => {
            Some(certify_hereditarily_quasi_standard(g, pres, family, rank, eps, *depth)?)
        }
    };
    run_step(amb, st, plan, cfg, Some(cert))
}

fn default_plan(amb: &SlotAmbient, st: &StageState, values: &[BigRational]) -> Result<StepPlan> {
    let rs = vec![1; values.len()];
    let delta = StepPlan::delta_for(st.p, st.q, &st.theta, &rs);
    let win = choose_rational_window(values, &delta, &amb.divisors())?;
    if let Some(plan) = StepPlan::complete(st.p, st.q, &st.theta, values, &rs, &win, &|_, c| c.first().copied()) {
        return Ok(plan);
    }
    let gap = st.gap();
    let inv_alpha: BigRational = win.p.iter().map(|p| BigRational::new((*p).into(), win.q.into())).sum();
    for pi in &win.p {
        let lambda = BigRational::new((*pi).into(), win.q.into()) / &inv_alpha;
        let e = lambda / BigRational::from_integer(st.p.into()) * &gap;
        choose_integer_in_window(&e, win.q, *pi)?;
    }
    Err(Error::Infeasible("every piece lost all of its blocks".into()))
}

fn run_step(
    amb: &mut SlotAmbient,
    st: &StageState,
    plan: Option<StepPlan>,
    cfg: &StepConfig,
    star_cert: Option<Option<HqsCertificate>>,
) -> Result<StepTrace> {
    let field = amb.field;
    let j = st.frame;
    if j != amb.last() {
        return Err(Error::Input(format!("stage frame {j} is not the newest frame {}", amb.last())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((j as u64 + 1) << 32));
    let mut cache = RankCache::new();
    let mut checks = Checks::default();
    let (p, gap) = (st.p, st.gap());
    let kp = if st.star { "K*(p)" } else { "K(p)" };
    let k_eps = st.eps.coeff.clone();
    let rat = |a: usize, b: usize| BigRational::new(a.into(), b.into());
    let one_p = Sparse::identity(field, p);

    // Hypotheses (a)–(c).
    let rho_one = SlotElement::rho(j, one_p.clone());
    checks.check("(a) N(ρ(1)) = p/q", &norm(amb, &rho_one, &mut cache)?, Rel::Eq, &st.ratio())?;
    checks.check("(a) p/q > θ", &st.theta, Rel::Lt, &st.ratio())?;
    let pairs = index_pairs(p, cfg.pairs, &mut rng);
    for &(a, b) in &pairs {
        let d = norm(amb, &SlotElement::rho(j, sp(field, p, a, b)).sub(&approx(field, st, a, b)), &mut cache)?;
        st.eps.check_below(&mut checks, format!("(b) N(ρ(e_{a}{b}) − x_{a}{b}) < ε"), &d)?;
    }
    st.eps.check_below(&mut checks, "(b) the spanning family {1} lies in A", &BigRational::zero())?;
    checks.check(format!("(c) {kp}ε < (1/(48p²))(p/q − θ)"), &k_eps, Rel::Lt, &Eps::bound_coeff(p, &gap))?;

    // Stabilization: Σᵢ ρ(e_ab)|Rᵢ is a system of matrix units in A, so ψ(e_ab) is that sum.
    for &(a, b) in &pairs {
        for &(c, d) in pairs.iter().take(4) {
            let lhs = approx(field, st, a, b).mul(&approx(field, st, c, d), amb)?;
            let rhs = if b == c { approx(field, st, a, d) } else { SlotElement::zero() };
            checks.check(format!("ψ(e_{a}{b})ψ(e_{c}{d}) = δ ψ(e_{a}{d})"), &norm(amb, &lhs.sub(&rhs), &mut cache)?, Rel::Eq, &BigRational::zero())?;
        }
        let d = norm(amb, &SlotElement::rho(j, sp(field, p, a, b)).sub(&approx(field, st, a, b)), &mut cache)?;
        checks.check(format!("N(ρ(e_{a}{b}) − ψ(e_{a}{b})) < {kp}ε"), &d, Rel::Lt, &k_eps)?;
    }
    let f = approx(field, st, 0, 0);
    let f_prime = SlotElement::rho(j, sp(field, p, 0, 0));
    let n_f_prime = norm(amb, &f_prime, &mut cache)?;
    checks.check("N(f') = 1/q", &n_f_prime, Rel::Eq, &rat(1, st.q))?;
    checks.check(format!("N(f − f') < {kp}ε"), &norm(amb, &f.sub(&f_prime), &mut cache)?, Rel::Lt, &k_eps)?;
    if let Some(Some(_)) = &star_cert {
        checks.record("g certified hereditarily quasi-standard", "certificate".into(), Rel::Eq, "attached".into(), true)?;
    }

    // Decomposition f = Σ fᵢ with rᵢ = 1.
    let fi: Vec<SlotElement> = st.pieces.iter().map(|r| SlotElement::rho_on(j, sp(field, p, 0, 0), r.clone())).collect();
    let mut n_f = Vec::new();
    for (i, (e, r)) in fi.iter().zip(&st.pieces).enumerate() {
        let v = norm(amb, e, &mut cache)?;
        checks.check(format!("N(f_{i}) = |R_{i}|/n"), &v, Rel::Eq, &rat(r.len(), amb.n))?;
        n_f.push(v);
    }
    let sum_f: BigRational = n_f.iter().sum();
    let local = (rat(1, st.q) - &sum_f).abs();
    checks.check("N(f) = Σ rᵢ N(fᵢ)", &norm(amb, &f, &mut cache)?, Rel::Eq, &sum_f)?;

    let plan = match plan {
        Some(pl) => pl,
        None => default_plan(amb, st, &n_f)?,
    };
    if plan.p != p || plan.q != st.q || plan.values != n_f || plan.theta != st.theta {
        return Err(Error::Input("the supplied plan was made for different local ranks".into()));
    }
    plan.verify(&local, &k_eps, &mut checks)?;

    let trace_tail = build_and_verify(amb, st, &plan, &fi, &f, cfg, &mut rng, &mut cache, &mut checks, star_cert.is_some())?;
    let (layout, output, g_prime) = trace_tail;
    Ok(StepTrace {
        stage: j,
        input: st.clone(),
        n_f_prime,
        n_f,
        stabilization: if st.defect.is_some() {
            "approximants are matrix units; ψ(e_ab) = x_ab".into()
        } else {
            "approximants equal ρ(e_ab); ψ = ρ".into()
        },
        plan,
        layout,
        output,
        g_prime,
        certificate: star_cert.flatten(),
        checks,
    })
}

/// λ-matrices of a corner element x, one per piece: ψ(e₁ₐ)·x·ψ(e_b1) restricted to Rᵢ is Λᵢ[a, b]·fᵢ.
fn read_lambdas(amb: &SlotAmbient, st: &StageState, x: &SlotElement) -> Result<Vec<Sparse>> {
    st.pieces.iter().map(|r| compress(amb, x, st.frame, r)).collect()
}

/// The proof's x̃ = Σ ψ(e_a1)x_ab ψ(e_1b) and y = Σᵢ Λᵢ ⊗ Σ_{u in piece i} e_uu for a corner element x,
/// given the piece of every block of the next frame.
pub fn corner_approximation(amb: &SlotAmbient, st: &StageState, piece_of: &[usize], x: &SlotElement) -> Result<(SlotElement, Sparse)> {
    let lambdas = read_lambdas(amb, st, x)?;
    let mut xt = SlotElement::zero();
    let mut y = Sparse::zero(amb.field, st.p * piece_of.len());
    for (i, l) in lambdas.iter().enumerate() {
        let mask: Vec<bool> = piece_of.iter().map(|pi| *pi == i).collect();
        xt = xt.add(&SlotElement::rho_on(st.frame, l.clone(), st.pieces[i].clone()));
        y = y.add(&l.kron_diag(&mask));
    }
    Ok((xt, y))
}

#[allow(clippy::too_many_arguments)]
fn build_and_verify(
    amb: &mut SlotAmbient,
    st: &StageState,
    plan: &StepPlan,
    fi: &[SlotElement],
    f: &SlotElement,
    cfg: &StepConfig,
    rng: &mut ChaCha8Rng,
    cache: &mut RankCache,
    checks: &mut Checks,
    star: bool,
) -> Result<(BlockLayout, StageState, Option<String>)> {
    let field = amb.field;
    let (j, p, n) = (st.frame, st.p, amb.n);
    let gap = st.gap();
    let rat = |a: usize, b: usize| BigRational::new(a.into(), b.into());
    let frac = |a: i64, b: i64| BigRational::new(a.into(), b.into());
    let qn = plan.q_new;
    if n % qn != 0 {
        return Err(Error::Infeasible(format!("M_{n} has no idempotent e with N(e) = 1/{qn}")));
    }
    let block = n / qn;

    let mut starts = Vec::new();
    let mut piece_of = Vec::new();
    for (i, (r, pn)) in st.pieces.iter().zip(&plan.p_i_new).enumerate() {
        checks.check(format!("p_{i}'·e ≲ f_{i}: p_{i}'/q' < N(f_{i})"), &rat(*pn, qn), Rel::Lt, &plan.values[i])?;
        for u in 0..*pn {
            starts.push(r.start + u * block);
            piece_of.push(i);
        }
    }
    let e_piece = piece_of[0];
    let g = starts.len();
    let layout = BlockLayout { block, starts: starts.clone(), piece_of: piece_of.clone(), e_piece };
    let k = amb.push_frame(qn, starts)?;
    let pn = amb.frames[k].p;
    checks.check("p' = p·g in the new frame", &rat(pn, 1), Rel::Eq, &rat(plan.p_new, 1))?;

    // The h-system: h_{w1,w2} = ρ'(e₁₁ ⊗ e_{w1,w2}).
    let h = |w1: usize, w2: usize| SlotElement::rho(k, Sparse::unit(field, pn, w1, w2));
    let e = h(0, 0);
    checks.check("N(e) = 1/q'", &norm(amb, &e, cache)?, Rel::Eq, &rat(1, qn))?;
    checks.check(format!("e ≤ f_{e_piece}"), &norm(amb, &e.mul(&fi[e_piece], amb)?.sub(&e), cache)?, Rel::Eq, &BigRational::zero())?;
    let ws = index_pairs(g, cfg.pairs, rng);
    for &(w1, w2) in &ws {
        for &(w3, w4) in ws.iter().take(4) {
            let lhs = h(w1, w2).mul(&h(w3, w4), amb)?;
            let rhs = if w2 == w3 { h(w1, w4) } else { SlotElement::zero() };
            checks.check(format!("h_{w1}{w2}·h_{w3}{w4} = δ·h_{w1}{w4}"), &norm(amb, &lhs.sub(&rhs), cache)?, Rel::Eq, &BigRational::zero())?;
        }
        if star {
            let d = norm(amb, &h(w1, w2).adjoint().sub(&h(w2, w1)), cache)?;
            checks.check(format!("(h_{w1}{w2})* = h_{w2}{w1}"), &d, Rel::Eq, &BigRational::zero())?;
        }
        let fw = &fi[piece_of[w1]];
        let hw = h(w1, w1);
        let d = norm(amb, &hw.mul(fw, amb)?.sub(&hw), cache)? + norm(amb, &fw.mul(&hw, amb)?.sub(&hw), cache)?;
        checks.check(format!("h_{w1}{w1} ≤ f_{}", piece_of[w1]), &d, Rel::Eq, &BigRational::zero())?;
    }
    for (i, pni) in plan.p_i_new.iter().enumerate() {
        let diag: Vec<(usize, usize, _)> = (0..g).filter(|w| piece_of[*w] == i).map(|w| (w, w, field.one())).collect();
        let sum = SlotElement::rho(k, Sparse::from_entries(field, pn, diag));
        checks.check(format!("N(Σᵤ h^({i},{i})_uu) = p_{i}'/q'"), &norm(amb, &sum, cache)?, Rel::Eq, &rat(*pni, qn))?;
    }
    for _ in 0..cfg.pairs.max(1) {
        let (a, b) = (rng.gen_range(0..p), rng.gen_range(0..p));
        let (w1, w2) = (rng.gen_range(0..g), rng.gen_range(0..g));
        let lhs = SlotElement::rho(k, Sparse::unit(field, pn, a * g + w1, b * g + w2));
        let rhs = approx(field, st, a, 0).mul(&h(w1, w2), amb)?.mul(&approx(field, st, 0, b), amb)?;
        let d = norm(amb, &lhs.sub(&rhs), cache)?;
        checks.check(format!("ρ'(e_{a}{b} ⊗ e_{w1}{w2}) = ψ(e_{a}1)·h_{w1}{w2}·ψ(e_1{b})"), &d, Rel::Eq, &BigRational::zero())?;
    }

    // (1), (2).
    let ratio_new = rat(pn, qn);
    let rho_new_one = SlotElement::rho(k, Sparse::identity(field, pn));
    checks.check("(1) N(ρ'(1)) = p'/q'", &norm(amb, &rho_new_one, cache)?, Rel::Eq, &ratio_new)?;
    let gap_new = &ratio_new - &st.theta;
    checks.check("(2) 0 < p'/q' − θ", &BigRational::zero(), Rel::Lt, &gap_new)?;
    checks.check("(2) p'/q' − θ < (1/2)(p/q − θ)", &gap_new, Rel::Lt, &(&gap * frac(1, 2)))?;

    let corner = |x: &SlotElement, amb: &SlotAmbient| corner_approximation(amb, st, &piece_of, x);

    // (3).
    let rho_one = SlotElement::rho(j, Sparse::identity(field, p));
    let mut xs: Vec<SlotElement> = vec![SlotElement::one(field), SlotElement::rho(j, Sparse::unit(field, p, 0, 0))];
    for _ in 0..cfg.samples {
        xs.push(algebra_sample(field, st, rng));
    }
    let slack: BigRational = plan.values.iter().zip(&plan.p_i_new).map(|(v, pi)| v - rat(*pi, qn)).sum::<BigRational>() * rat(p, 1);
    for (s, xp) in xs.iter().enumerate() {
        let x = rho_one.mul(xp, amb)?.mul(&rho_one, amb)?;
        let (xt, y) = corner(&x, amb)?;
        let lambdas = read_lambdas(amb, st, &x)?;
        for &(a, b) in index_pairs(p, 1, rng).iter().take(3) {
            let xab = f.mul(&approx(field, st, 0, a), amb)?.mul(&x, amb)?.mul(&approx(field, st, b, 0), amb)?.mul(f, amb)?;
            let mut expect = SlotElement::zero();
            for (l, fe) in lambdas.iter().zip(fi) {
                expect = expect.add(&fe.scale(&l.get(a, b)));
            }
            checks.check(format!("(3) x{s}: x_{a}{b} = Σ λ(a,b)ᵢ fᵢ"), &norm(amb, &xab.sub(&expect), cache)?, Rel::Eq, &BigRational::zero())?;
        }
        let five = BigRational::from_integer((5 * p * p).into()) * &st.eps.coeff;
        checks.check(format!("(3) x{s}: N(x − x̃) < 5K(p)p²ε"), &norm(amb, &x.sub(&xt), cache)?, Rel::Lt, &five)?;
        let ry = SlotElement::rho(k, y);
        let d_t = norm(amb, &xt.sub(&ry), cache)?;
        checks.check(format!("(3) x{s}: N(x̃ − ρ'(y)) ≤ p·Σ rᵢ(N(fᵢ) − pᵢ'/q')"), &d_t, Rel::Le, &slack)?;
        checks.check(format!("(3) x{s}: N(x̃ − ρ'(y)) < (43/48)(p/q − θ)"), &d_t, Rel::Lt, &(&gap * frac(43, 48)))?;
        checks.check(format!("(3) x{s}: N(x − ρ'(y)) < p/q − θ"), &norm(amb, &x.sub(&ry), cache)?, Rel::Lt, &gap)?;
    }

    // (4).
    let mut zs = vec![Sparse::identity(field, p), Sparse::zero(field, p), Sparse::unit(field, p, 0, 0), Sparse::unit(field, p, p - 1, 0)];
    for _ in 0..cfg.samples {
        zs.push(random_sparse(field, p, rng));
    }
    for (s, z) in zs.iter().enumerate() {
        let rz = SlotElement::rho(j, z.clone());
        let gz = z.kron_identity(g);
        let d = norm(amb, &rz.sub(&SlotElement::rho(k, gz.clone())), cache)?;
        checks.check(format!("(4) z{s}: N(ρ(z) − ρ'(γ(z))) < p/q − θ"), &d, Rel::Lt, &gap)?;
        if s == 0 {
            checks.check("(4) N(ρ(1) − ρ'(1)) = p/q − p'/q'", &d, Rel::Eq, &(st.ratio() - &ratio_new))?;
            checks.check("(4) N(ρ(1) − ρ'(1)) < (7/8)(p/q − θ)", &d, Rel::Lt, &(&gap * frac(7, 8)))?;
        }
        let (_, y) = corner(&rz, amb)?;
        checks.record(format!("(4) z{s}: y built for x = ρ(z) equals γ(z)"), "y".into(), Rel::Eq, "z ⊗ 1_g".into(), y == gz)?;
    }

    // (5), (6) for A' = ρ'(M_{p'}) ⊕ K(1 − ρ'(1)).
    let eps_new = Eps::half_bound(pn, &gap_new, star);
    let output = StageState {
        frame: k,
        p: pn,
        q: qn,
        theta: st.theta.clone(),
        eps: eps_new.clone(),
        pieces: vec![0..block],
        defect: None,
        star,
    };
    for &(a, b) in &index_pairs(pn, cfg.pairs, rng) {
        let x = SlotElement::rho(k, Sparse::unit(field, pn, a, b));
        let back = on_pieces(&output, &Sparse::unit(field, pn, a, b));
        eps_new.check_below(checks, format!("(5) ρ'(e'_{a}{b}) ∈ A'"), &norm(amb, &x.sub(&back), cache)?)?;
    }
    let one_in = on_pieces(&output, &Sparse::identity(field, pn)).add(&complement(field, &output));
    eps_new.check_below(checks, "(5) the spanning family {1} lies in A'", &norm(amb, &SlotElement::one(field).sub(&one_in), cache)?)?;
    let g_prime = if star {
        let gp = approx(field, &output, 0, 0);
        let d = norm(amb, &SlotElement::rho(k, Sparse::unit(field, pn, 0, 0)).sub(&gp), cache)?;
        eps_new.check_below(checks, "(5*) N(ρ'(e'₁₁) − g') < ε'", &d)?;
        Some("g' = ρ'(e'₁₁), a diagonal matrix unit of the standard algebra A'".to_string())
    } else {
        None
    };
    let kp = if star { "K*(p')" } else { "K(p')" };
    checks.check(format!("(6) {kp}ε' < (1/(48p'²))(p'/q' − θ)"), &eps_new.coeff, Rel::Lt, &Eps::bound_coeff(pn, &gap_new))?;
    Ok((layout, output, g_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halperin::slot::materialize;
    use crate::linalg::Matrix;
    use crate::matalg::{Element, Shape};
    use crate::scalar::{rat, Scalar};
    use crate::star::lp;

    fn first_step(n: usize, theta: BigRational, pieces: usize, defect: usize) -> (SlotAmbient, StepTrace) {
        let mut amb = SlotAmbient::new(Field::Q, n).unwrap();
        let st = StageState::initial(&amb, &theta, pieces, defect, false).unwrap();
        let tr = halperin_step(&mut amb, &st, None, &StepConfig::default()).unwrap();
        (amb, tr)
    }

    #[test]
    fn degenerate_start_in_m2520() {
        let (_, tr) = first_step(2520, rat(1, 3), 2, 1);
        let r = tr.output.ratio();
        assert!(r > rat(1, 3) && r <= rat(2, 3));
        assert!(tr.checks.all_hold());
        for c in ["(1)", "(2)", "(3)", "(4)", "(5)", "(6)", "(a)", "(b)", "(c)"] {
            assert!(tr.checks.items.iter().any(|i| i.label.starts_with(c)), "no check for {c}");
        }
        assert_eq!(tr.plan.p, 1);
        assert_eq!(tr.plan.p_new, tr.plan.g);
        assert_eq!(tr.output.p, tr.plan.p_new);
    }

    #[test]
    fn eps_at_the_bound_is_rejected() {
        let mut amb = SlotAmbient::new(Field::Q, 2520).unwrap();
        let mut st = StageState::initial(&amb, &rat(1, 3), 1, 0, false).unwrap();
        st.eps.coeff = Eps::bound_coeff(1, &st.gap());
        let err = halperin_step(&mut amb, &st, None, &StepConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Assertion(ref m) if m.starts_with("(c)")), "{err}");
    }

    #[test]
    fn identity_distance_matches_key_inequality() {
        let (_, tr) = first_step(2520, rat(1, 3), 1, 0);
        let c = tr.checks.items.iter().find(|c| c.label == "(4) N(ρ(1) − ρ'(1)) = p/q − p'/q'").unwrap();
        assert_eq!(rational_str::parse(&c.lhs).unwrap(), rat(1, 1) - tr.output.ratio());
        let gap = rat(2, 3);
        let d = rat(1, 1) - tr.output.ratio();
        assert!(d > &gap / rat(2, 1) && d < gap * rat(7, 8));
    }

    #[test]
    fn dense_cross_check_of_a_two_stage_run() {
        let mut amb = SlotAmbient::new(Field::Q, 150).unwrap();
        let st = StageState::initial(&amb, &rat(1, 3), 1, 0, false).unwrap();
        let tr = halperin_step(&mut amb, &st, None, &StepConfig::default()).unwrap();
        assert_eq!((tr.plan.q_new, tr.plan.p_new), (75, 42));
        let mut cache = RankCache::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_sparse(Field::Q, 1, &mut rng);
        let x = SlotElement::rho(0, z.clone()).sub(&SlotElement::rho(1, z.kron_identity(42)));
        assert_eq!(rank_of(&amb, &x, &mut cache), materialize(&amb, &x).rank());
        let w = random_sparse(Field::Q, 42, &mut rng);
        let y = SlotElement::rho(1, w).mul(&SlotElement::rho_on(0, Sparse::identity(Field::Q, 1), 0..40), &amb).unwrap();
        assert_eq!(rank_of(&amb, &y, &mut cache), materialize(&amb, &y).rank());
        let dense_one = materialize(&amb, &SlotElement::rho(1, Sparse::identity(Field::Q, 42)));
        assert_eq!(dense_one.rank(), 84);
        assert_eq!(dense_one.mul(&dense_one), dense_one);
    }

    fn rank_of(amb: &SlotAmbient, x: &SlotElement, cache: &mut RankCache) -> usize {
        crate::halperin::slot::rank(amb, x, cache).unwrap()
    }

    #[test]
    fn star_step_over_gaussian_rationals() {
        let mut amb = SlotAmbient::new(Field::QI, 27720).unwrap();
        let st = StageState::initial(&amb, &rat(1, 3), 2, 1, true).unwrap();
        let tr = halperin_step_star(&mut amb, &st, &StarGate::Standard, None, &StepConfig::default()).unwrap();
        assert!(tr.checks.all_hold());
        assert!(tr.g_prime.is_some());
        assert!(tr.checks.items.iter().any(|c| c.label.starts_with("(h_")));
        assert!(halperin_step_star(&mut SlotAmbient::new(Field::gf(5).unwrap(), 27720).unwrap(), &st, &StarGate::Standard, None, &StepConfig::default()).is_err());
    }

    #[test]
    fn adversarial_gate_fails_before_construction() {
        let f = Field::QI;
        let pres = StarPresentation::standard(f, Shape::single(4), Shape::single(4), vec![vec![1]]).unwrap();
        let g = Projection::new(Element::single(Matrix::diagonal(f, &[f.one(), f.one(), f.zero(), f.zero()]))).unwrap();
        let mut col = Matrix::zeros(f, 4, 4);
        col[(0, 0)] = f.one();
        col[(1, 0)] = Scalar::QI(rat(1, 1), rat(1, 1));
        let sub = lp(&Element::single(col)).unwrap();
        let rank = PseudoRank::unit();
        let eps = rat(1, 8);
        let gate = StarGate::Dense { g: &g, pres: &pres, family: std::slice::from_ref(&sub), rank: &rank, eps: &eps, depth: 1 };
        let mut amb = SlotAmbient::new(f, 27720).unwrap();
        let st = StageState::initial(&amb, &rat(1, 3), 1, 0, true).unwrap();
        let err = halperin_step_star(&mut amb, &st, &gate, None, &StepConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Certification { clause: 2, .. }));
        assert_eq!(amb.frames.len(), 1);
    }

    #[test]
    fn tiny_delta_reports_infeasibility() {
        let mut amb = SlotAmbient::new(Field::Q, 30).unwrap();
        let st = StageState::initial(&amb, &rat(1, 3), 1, 0, false).unwrap();
        let err = halperin_step(&mut amb, &st, None, &StepConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("n = 73")), "{err}");
    }
}
