//! Matricial algebras, pseudo-rank functions, homomorphisms and embedding chains.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{rational_str, Field, Scalar};

/// Block sizes [n(1), …, n(k)] of M_{n(1)} × ⋯ × M_{n(k)}.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(sizes: Vec<usize>) -> Result<Shape> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Input(format!("invalid shape {sizes:?}")));
        }
        Ok(Shape(sizes))
    }

    pub fn single(n: usize) -> Shape {
        Shape::new(vec![n]).expect("n >= 1")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    /// Dimension of the algebra as a vector space.
    pub fn dim(&self) -> usize {
        self.0.iter().map(|n| n * n).sum()
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Shape, D::Error> {
        Shape::new(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// An element of a matricial algebra: one square matrix per block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Element {
    field: Field,
    blocks: Vec<Matrix>,
}

impl Element {
    pub fn new(field: Field, blocks: Vec<Matrix>) -> Result<Element> {
        if blocks.is_empty() {
            return Err(Error::ShapeMismatch("element with no blocks".into()));
        }
        for b in &blocks {
            if !b.is_square() || b.rows() == 0 {
                return Err(Error::ShapeMismatch("blocks must be nonempty square matrices".into()));
            }
            if b.field() != field {
                return Err(Error::FieldMismatch { expected: field, found: b.field() });
            }
        }
        Ok(Element { field, blocks })
    }

    pub fn single(m: Matrix) -> Element {
        Element::new(m.field(), vec![m]).expect("square matrix")
    }

    pub fn zero(field: Field, shape: &Shape) -> Element {
        Element { field, blocks: shape.sizes().iter().map(|&n| Matrix::zeros(field, n, n)).collect() }
    }

    pub fn one(field: Field, shape: &Shape) -> Element {
        Element { field, blocks: shape.sizes().iter().map(|&n| Matrix::identity(field, n)).collect() }
    }

    /// The canonical matrix unit e_ij of block `b` (0-based).
    pub fn unit(field: Field, shape: &Shape, b: usize, i: usize, j: usize) -> Element {
        let mut e = Element::zero(field, shape);
        e.blocks[b][(i, j)] = field.one();
        e
    }

    /// The identity of block `b`, zero elsewhere.
    pub fn block_identity(field: Field, shape: &Shape, b: usize) -> Element {
        let mut e = Element::zero(field, shape);
        e.blocks[b] = Matrix::identity(field, shape.sizes()[b]);
        e
    }

    pub fn random<R: Rng + ?Sized>(field: Field, shape: &Shape, rng: &mut R, bound: i64) -> Element {
        Element { field, blocks: shape.sizes().iter().map(|&n| Matrix::random(field, n, n, rng, bound)).collect() }
    }

    /// A random element whose blocks have rank at most `r`.
    pub fn random_low_rank<R: Rng + ?Sized>(field: Field, shape: &Shape, r: usize, rng: &mut R, bound: i64) -> Element {
        let blocks = shape
            .sizes()
            .iter()
            .map(|&n| {
                let k = r.min(n);
                Matrix::random(field, n, k, rng, bound).mul(&Matrix::random(field, k, n, rng, bound))
            })
            .collect();
        Element { field, blocks }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn shape(&self) -> Shape {
        Shape(self.blocks.iter().map(Matrix::rows).collect())
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &Matrix {
        &self.blocks[b]
    }

    pub fn block_mut(&mut self, b: usize) -> &mut Matrix {
        &mut self.blocks[b]
    }

    fn same_shape(&self, o: &Element) -> bool {
        self.field == o.field
            && self.blocks.len() == o.blocks.len()
            && self.blocks.iter().zip(&o.blocks).all(|(a, b)| a.rows() == b.rows())
    }

    fn zip(&self, o: &Element, f: impl Fn(&Matrix, &Matrix) -> Matrix) -> Element {
        assert!(self.same_shape(o), "element shape mismatch: {:?} vs {:?}", self.shape(), o.shape());
        Element { field: self.field, blocks: self.blocks.iter().zip(&o.blocks).map(|(a, b)| f(a, b)).collect() }
    }

    fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Element {
        Element { field: self.field, blocks: self.blocks.iter().map(f).collect() }
    }

    pub fn add(&self, o: &Element) -> Element {
        self.zip(o, Matrix::add)
    }

    pub fn sub(&self, o: &Element) -> Element {
        self.zip(o, Matrix::sub)
    }

    pub fn mul(&self, o: &Element) -> Element {
        self.zip(o, Matrix::mul)
    }

    pub fn neg(&self) -> Element {
        self.map(Matrix::neg)
    }

    pub fn scale(&self, s: &Scalar) -> Element {
        self.map(|m| m.scale(s))
    }

    /// Blockwise conjugate transpose.
    pub fn adjoint(&self) -> Element {
        self.map(Matrix::adjoint)
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(Matrix::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.blocks.iter().all(Matrix::is_identity)
    }

    pub fn is_idempotent(&self) -> bool {
        self.mul(self) == *self
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.adjoint() == *self
    }

    /// Ranks of the blocks.
    pub fn block_ranks(&self) -> Vec<usize> {
        self.blocks.iter().map(Matrix::rank).collect()
    }

    /// Row-major flattening of all blocks.
    pub fn flatten(&self) -> Vec<Scalar> {
        self.blocks.iter().flat_map(|m| m.to_rows().into_iter().flatten()).collect()
    }

    pub fn from_flat(field: Field, shape: &Shape, v: &[Scalar]) -> Element {
        let mut off = 0;
        let mut blocks = Vec::new();
        for &n in shape.sizes() {
            let rows = (0..n).map(|r| v[off + r * n..off + (r + 1) * n].to_vec()).collect();
            blocks.push(Matrix::from_rows(field, rows));
            off += n * n;
        }
        Element { field, blocks }
    }
}

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Vec<Vec<Scalar>>> = self.blocks.iter().map(Matrix::to_rows).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Element, D::Error> {
        use serde::de::Error as _;
        let v: Vec<Vec<Vec<Scalar>>> = Vec::deserialize(d)?;
        let field = v
            .first()
            .and_then(|b| b.first())
            .and_then(|r| r.first())
            .map(Scalar::field)
            .ok_or_else(|| D::Error::custom("empty element"))?;
        let mut blocks = Vec::new();
        for b in v {
            let n = b.len();
            if b.iter().any(|r| r.len() != n) {
                return Err(D::Error::custom("blocks must be square"));
            }
            if b.iter().flatten().any(|s| s.field() != field) {
                return Err(D::Error::custom("mixed fields in element"));
            }
            blocks.push(Matrix::from_rows(field, b));
        }
        Element::new(field, blocks).map_err(D::Error::custom)
    }
}

/// N(x) = Σ αᵢ·rank(xᵢ)/n(i) with rational weights summing to 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoRank {
    #[serde(with = "rational_vec")]
    weights: Vec<BigRational>,
}

mod rational_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> std::result::Result<S::Ok, S::Error> {
        let strs: Vec<String> = v.iter().map(rational_str::to_string).collect();
        strs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<BigRational>, D::Error> {
        let strs: Vec<String> = Vec::deserialize(d)?;
        strs.iter().map(|s| rational_str::parse(s).map_err(serde::de::Error::custom)).collect()
    }
}

impl PseudoRank {
    pub fn new(weights: Vec<BigRational>) -> Result<PseudoRank> {
        if weights.is_empty() || weights.iter().any(Signed::is_negative) {
            return Err(Error::Input("pseudo-rank weights must be nonnegative".into()));
        }
        let total: BigRational = weights.iter().sum();
        if !total.is_one() {
            return Err(Error::Input(format!("pseudo-rank weights sum to {total}, not 1")));
        }
        Ok(PseudoRank { weights })
    }

    /// The weight vector (1) of a single block.
    pub fn unit() -> PseudoRank {
        PseudoRank { weights: vec![BigRational::one()] }
    }

    /// Equal weights on every block.
    pub fn uniform(k: usize) -> PseudoRank {
        PseudoRank { weights: vec![BigRational::new(1.into(), (k as i64).into()); k] }
    }

    pub fn weights(&self) -> &[BigRational] {
        &self.weights
    }

    pub fn is_rank_function(&self) -> bool {
        self.weights.iter().all(|w| w.is_positive())
    }

    /// N(x).
    pub fn eval(&self, x: &Element) -> Result<BigRational> {
        rank_of(x, self)
    }

    /// N(x − y).
    pub fn dist(&self, x: &Element, y: &Element) -> Result<BigRational> {
        rank_of(&x.sub(y), self)
    }
}

pub fn rank_of(x: &Element, n: &PseudoRank) -> Result<BigRational> {
    if x.blocks.len() != n.weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "element has {} blocks, weights have {}",
            x.blocks.len(),
            n.weights.len()
        )));
    }
    let mut total = BigRational::zero();
    for (m, w) in x.blocks.iter().zip(&n.weights) {
        if w.is_zero() {
            continue;
        }
        let r = m.rank();
        total += w * BigRational::new((r as i64).into(), (m.rows() as i64).into());
    }
    Ok(total)
}

/// A homomorphism between matricial algebras, given by the images of the source matrix units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteHom {
    src: Shape,
    tgt: Shape,
    /// images[b][i·n(b) + j] is the image of e_ij in block b.
    images: Vec<Vec<Element>>,
    unital: bool,
}

impl ConcreteHom {
    pub fn new(src: Shape, tgt: Shape, images: Vec<Vec<Element>>) -> Result<ConcreteHom> {
        if images.len() != src.num_blocks() {
            return Err(Error::ShapeMismatch("one image list per source block required".into()));
        }
        for (b, imgs) in images.iter().enumerate() {
            let n = src.sizes()[b];
            if imgs.len() != n * n {
                return Err(Error::ShapeMismatch(format!("block {b} needs {} images", n * n)));
            }
            if imgs.iter().any(|e| e.shape() != tgt) {
                return Err(Error::ShapeMismatch("image outside the target shape".into()));
            }
        }
        let field = images[0][0].field();
        for (b, imgs) in images.iter().enumerate() {
            let n = src.sizes()[b];
            let fam: Vec<Vec<Element>> = (0..n).map(|i| imgs[i * n..(i + 1) * n].to_vec()).collect();
            let v = verify_matrix_units(&fam, false);
            if let Some(viol) = v.first_violation {
                return Err(Error::Input(format!("images of block {b} are not matrix units: {viol}")));
            }
        }
        for (b1, i1) in images.iter().enumerate() {
            for (b2, i2) in images.iter().enumerate() {
                if b1 != b2 && !i1[0].mul(&i2[0]).is_zero() {
                    return Err(Error::Input(format!("images of blocks {b1} and {b2} are not orthogonal")));
                }
            }
        }
        let mut h = ConcreteHom { src, tgt, images, unital: false };
        h.unital = h.image_of_one(field).is_one();
        Ok(h)
    }

    pub fn identity(field: Field, shape: &Shape) -> ConcreteHom {
        standard_embedding(field, shape, shape, &identity_multiplicities(shape.num_blocks())).expect("identity")
    }

    pub fn src(&self) -> &Shape {
        &self.src
    }

    pub fn tgt(&self) -> &Shape {
        &self.tgt
    }

    pub fn is_unital(&self) -> bool {
        self.unital
    }

    pub fn field(&self) -> Field {
        self.images[0][0].field()
    }

    /// Image of e_ij in source block b.
    pub fn image(&self, b: usize, i: usize, j: usize) -> &Element {
        &self.images[b][i * self.src.sizes()[b] + j]
    }

    pub fn image_of_one(&self, field: Field) -> Element {
        let mut acc = Element::zero(field, &self.tgt);
        for (b, &n) in self.src.sizes().iter().enumerate() {
            for i in 0..n {
                acc = acc.add(self.image(b, i, i));
            }
        }
        acc
    }

    pub fn apply(&self, x: &Element) -> Result<Element> {
        if x.shape() != self.src {
            return Err(Error::ShapeMismatch(format!("hom source {:?}, element {:?}", self.src, x.shape())));
        }
        let mut acc = Element::zero(x.field, &self.tgt);
        for (b, m) in x.blocks.iter().enumerate() {
            let n = m.rows();
            for i in 0..n {
                for j in 0..n {
                    if !m[(i, j)].is_zero() {
                        acc = acc.add(&self.image(b, i, j).scale(&m[(i, j)]));
                    }
                }
            }
        }
        Ok(acc)
    }

    /// self followed by `next`.
    pub fn then(&self, next: &ConcreteHom) -> Result<ConcreteHom> {
        if self.tgt != next.src {
            return Err(Error::ShapeMismatch("homs are not composable".into()));
        }
        let images = self
            .images
            .iter()
            .map(|imgs| imgs.iter().map(|e| next.apply(e)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        ConcreteHom::new(self.src.clone(), next.tgt.clone(), images)
    }

    /// True when images satisfy x_ji = x_ij*.
    pub fn is_star_hom(&self) -> bool {
        self.src.sizes().iter().enumerate().all(|(b, &n)| {
            (0..n).all(|i| (0..n).all(|j| self.image(b, j, i) == &self.image(b, i, j).adjoint()))
        })
    }

    /// The conjugate hom x ↦ u·φ(x)·u⁻¹.
    pub fn conjugated(&self, u: &Element, u_inv: &Element) -> Result<ConcreteHom> {
        let images = self.images.iter().map(|imgs| imgs.iter().map(|e| u.mul(e).mul(u_inv)).collect()).collect();
        ConcreteHom::new(self.src.clone(), self.tgt.clone(), images)
    }
}

pub fn identity_multiplicities(k: usize) -> Vec<Vec<usize>> {
    (0..k).map(|t| (0..k).map(|s| usize::from(s == t)).collect()).collect()
}

/// (target block, offset) of every copy of each source block in the standard layout.
fn placements(src: &Shape, tgt: &Shape, mult: &[Vec<usize>]) -> Vec<Vec<(usize, usize)>> {
    let mut offsets = vec![0usize; tgt.num_blocks()];
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); src.num_blocks()];
    for (t, row) in mult.iter().enumerate() {
        for (s, &m) in row.iter().enumerate() {
            for _ in 0..m {
                out[s].push((t, offsets[t]));
                offsets[t] += src.sizes()[s];
            }
        }
    }
    out
}

/// Block-diagonal hom with `mult[t][s]` copies of source block s in target block t.
pub fn standard_embedding(field: Field, src: &Shape, tgt: &Shape, mult: &[Vec<usize>]) -> Result<ConcreteHom> {
    if mult.len() != tgt.num_blocks() || mult.iter().any(|r| r.len() != src.num_blocks()) {
        return Err(Error::Input("multiplicity matrix must be (target blocks) × (source blocks)".into()));
    }
    for (t, row) in mult.iter().enumerate() {
        let used: usize = row.iter().zip(src.sizes()).map(|(m, n)| m * n).sum();
        if used > tgt.sizes()[t] {
            return Err(Error::Infeasible(format!(
                "target block {t} of size {} cannot hold {used} rows",
                tgt.sizes()[t]
            )));
        }
    }
    let placements = placements(src, tgt, mult);
    let mut images = Vec::new();
    for (s, &n) in src.sizes().iter().enumerate() {
        let mut imgs = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut e = Element::zero(field, tgt);
                for &(t, off) in &placements[s] {
                    e.blocks[t][(off + i, off + j)] = field.one();
                }
                imgs.push(e);
            }
        }
        images.push(imgs);
    }
    ConcreteHom::new(src.clone(), tgt.clone(), images)
}

/// z ⊗ 1_g.
pub fn tensor_stabilize(z: &Element, g: usize) -> Result<Element> {
    if z.blocks.len() != 1 || g == 0 {
        return Err(Error::ShapeMismatch("tensor_stabilize needs a single block and g ≥ 1".into()));
    }
    Ok(Element::single(z.blocks[0].kron_identity(g)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitVerdict {
    pub pass: bool,
    pub first_violation: Option<String>,
}

/// Checks x_ij·x_kl = δ_jk·x_il (and x_ji = x_ij* in star mode). Indices in messages are 1-based.
pub fn verify_matrix_units(family: &[Vec<Element>], star: bool) -> UnitVerdict {
    let p = family.len();
    let fail = |msg: String| UnitVerdict { pass: false, first_violation: Some(msg) };
    if family.iter().any(|r| r.len() != p) {
        return fail("index set is not square".into());
    }
    if p == 0 {
        return UnitVerdict { pass: true, first_violation: None };
    }
    let zero = family[0][0].sub(&family[0][0]);
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                for l in 0..p {
                    let prod = family[i][j].mul(&family[k][l]);
                    let expect = if j == k { &family[i][l] } else { &zero };
                    if &prod != expect {
                        return fail(format!("({},{})·({},{})", i + 1, j + 1, k + 1, l + 1));
                    }
                }
            }
            if star && family[j][i] != family[i][j].adjoint() {
                return fail(format!("adjoint symmetry at ({},{})", i + 1, j + 1));
            }
        }
    }
    UnitVerdict { pass: true, first_violation: None }
}

/// A chain of matricial algebras joined by homomorphisms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingChain {
    shapes: Vec<Shape>,
    homs: Vec<ConcreteHom>,
    factor_sequence: Option<Vec<usize>>,
}

impl EmbeddingChain {
    pub fn new(shapes: Vec<Shape>, homs: Vec<ConcreteHom>) -> Result<EmbeddingChain> {
        if shapes.is_empty() || homs.len() + 1 != shapes.len() {
            return Err(Error::Input("a chain of k shapes needs k−1 homs".into()));
        }
        for (i, h) in homs.iter().enumerate() {
            if h.src != shapes[i] || h.tgt != shapes[i + 1] {
                return Err(Error::ShapeMismatch(format!("hom {i} does not connect stages {i} and {}", i + 1)));
            }
        }
        Ok(EmbeddingChain { shapes, homs, factor_sequence: None })
    }

    /// M_{p₁} → M_{p₂} → ⋯ with z ↦ z ⊗ 1_{p_{i+1}/p_i}.
    pub fn factor_sequence(field: Field, ps: &[usize]) -> Result<EmbeddingChain> {
        if ps.is_empty() || ps.contains(&0) {
            return Err(Error::Input("factor sequence needs positive entries".into()));
        }
        let mut homs = Vec::new();
        for w in ps.windows(2) {
            if w[1] % w[0] != 0 {
                return Err(Error::Input(format!("{} does not divide {}", w[0], w[1])));
            }
            homs.push(standard_embedding(field, &Shape::single(w[0]), &Shape::single(w[1]), &[vec![w[1] / w[0]]])?);
        }
        let mut c = EmbeddingChain::new(ps.iter().map(|&p| Shape::single(p)).collect(), homs)?;
        c.factor_sequence = Some(ps.to_vec());
        Ok(c)
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn homs(&self) -> &[ConcreteHom] {
        &self.homs
    }

    pub fn factors(&self) -> Option<&[usize]> {
        self.factor_sequence.as_deref()
    }

    /// Single-block chains carry a unique compatible pseudo-rank, which is then extremal.
    pub fn is_single_block(&self) -> bool {
        self.shapes.iter().all(|s| s.num_blocks() == 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatVerdict {
    pub pass: bool,
    pub violations: Vec<String>,
    pub extremal_flag: bool,
}

/// Stage-wise compatibility N_i(u) = N_{i+1}(φ_i(u)) for every canonical matrix unit u.
pub fn check_rank_compatibility(chain: &EmbeddingChain, weights: &[PseudoRank]) -> Result<CompatVerdict> {
    if weights.len() != chain.shapes.len() {
        return Err(Error::Input(format!(
            "{} weight vectors for {} stages",
            weights.len(),
            chain.shapes.len()
        )));
    }
    let mut violations = Vec::new();
    for (i, h) in chain.homs.iter().enumerate() {
        let field = h.field();
        for (b, &n) in h.src.sizes().iter().enumerate() {
            for r in 0..n {
                for c in 0..n {
                    let u = Element::unit(field, &h.src, b, r, c);
                    let lhs = rank_of(&u, &weights[i])?;
                    let rhs = rank_of(h.image(b, r, c), &weights[i + 1])?;
                    if lhs != rhs {
                        violations.push(format!(
                            "stage {i}, block {b}, unit ({},{}): {} vs {}",
                            r + 1,
                            c + 1,
                            rational_str::to_string(&lhs),
                            rational_str::to_string(&rhs)
                        ));
                    }
                }
            }
        }
    }
    let single_ok = chain.is_single_block() && weights.iter().all(|w| w.weights == [BigRational::one()]);
    Ok(CompatVerdict { pass: violations.is_empty(), violations, extremal_flag: single_ok })
}

/// A unital matricial subalgebra of an ambient algebra, presented by an embedding of its standard shape.
#[derive(Clone, Debug)]
pub struct Subalgebra {
    /// The presenting hom, or for a conjugated presentation the unconjugated standard embedding.
    hom: ConcreteHom,
    coords: Coords,
    conjugated: std::sync::OnceLock<ConcreteHom>,
}

#[derive(Clone, Debug)]
enum Coords {
    Basis { basis: Matrix, pivot_rows: Vec<usize>, pivot_inverse: Matrix },
    Conjugated { u: Element, u_inv: Element, placements: Vec<Vec<(usize, usize)>> },
}

impl Subalgebra {
    pub fn new(hom: ConcreteHom) -> Result<Subalgebra> {
        let field = hom.field();
        let mut cols: Vec<Vec<Scalar>> = Vec::new();
        for (b, &n) in hom.src.sizes().iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    cols.push(hom.image(b, i, j).flatten());
                }
            }
        }
        let dim_b = hom.tgt.dim();
        let mut basis = Matrix::zeros(field, dim_b, cols.len());
        for (c, v) in cols.iter().enumerate() {
            for (r, s) in v.iter().enumerate() {
                basis[(r, c)] = s.clone();
            }
        }
        let (_, pivot_rows) = basis.transpose().rref();
        if pivot_rows.len() != cols.len() {
            return Err(Error::Input("subalgebra embedding is not injective".into()));
        }
        let pivot_inverse = basis.select_rows(&pivot_rows).inverse().expect("independent rows");
        Ok(Subalgebra { hom, coords: Coords::Basis { basis, pivot_rows, pivot_inverse }, conjugated: Default::default() })
    }

    /// u·φ(·)·u⁻¹ for the standard embedding φ; coordinates are read off u⁻¹·x·u directly.
    pub fn conjugated_standard(
        field: Field,
        src: &Shape,
        tgt: &Shape,
        mult: &[Vec<usize>],
        u: &Element,
        u_inv: &Element,
    ) -> Result<Subalgebra> {
        if u.shape() != *tgt || !u.mul(u_inv).is_one() {
            return Err(Error::Precondition("u·u⁻¹ ≠ 1".into()));
        }
        let hom = standard_embedding(field, src, tgt, mult)?;
        let placements = placements(src, tgt, mult);
        if placements.iter().any(Vec::is_empty) {
            return Err(Error::Input("subalgebra embedding is not injective".into()));
        }
        let coords = Coords::Conjugated { u: u.clone(), u_inv: u_inv.clone(), placements };
        Ok(Subalgebra { hom, coords, conjugated: Default::default() })
    }

    fn place(&self, placements: &[Vec<(usize, usize)>], c: &Element) -> Element {
        let mut e = Element::zero(self.field(), &self.hom.tgt);
        for (s, copies) in placements.iter().enumerate() {
            for &(t, off) in copies {
                e.blocks[t].set_block(off, off, &c.blocks[s]);
            }
        }
        e
    }

    pub fn hom(&self) -> &ConcreteHom {
        match &self.coords {
            Coords::Basis { .. } => &self.hom,
            Coords::Conjugated { u, u_inv, .. } => self
                .conjugated
                .get_or_init(|| self.hom.conjugated(u, u_inv).expect("conjugate of a valid hom")),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.hom.src
    }

    pub fn ambient_shape(&self) -> &Shape {
        &self.hom.tgt
    }

    pub fn field(&self) -> Field {
        self.hom.field()
    }

    pub fn is_unital(&self) -> bool {
        self.hom.unital
    }

    /// Coordinates of an ambient element in A's own matricial presentation, if it lies in A.
    pub fn coordinates(&self, x: &Element) -> Option<Element> {
        match &self.coords {
            Coords::Basis { basis, pivot_rows, pivot_inverse } => {
                let v = x.flatten();
                let mut rhs = Matrix::zeros(self.field(), pivot_rows.len(), 1);
                for (k, &r) in pivot_rows.iter().enumerate() {
                    rhs[(k, 0)] = v[r].clone();
                }
                let c = pivot_inverse.mul(&rhs);
                let back = basis.mul(&c);
                if (0..v.len()).any(|r| back[(r, 0)] != v[r]) {
                    return None;
                }
                let flat: Vec<Scalar> = (0..c.rows()).map(|r| c[(r, 0)].clone()).collect();
                Some(Element::from_flat(self.field(), self.shape(), &flat))
            }
            Coords::Conjugated { u, u_inv, placements } => {
                let y = u_inv.mul(x).mul(u);
                let blocks = placements
                    .iter()
                    .zip(self.shape().sizes())
                    .map(|(copies, &n)| {
                        let (t, off) = copies[0];
                        y.blocks[t].block(off, off, n, n)
                    })
                    .collect();
                let c = Element::new(self.field(), blocks).ok()?;
                (self.place(placements, &c) == y).then_some(c)
            }
        }
    }

    pub fn contains(&self, x: &Element) -> bool {
        self.coordinates(x).is_some()
    }

    pub fn to_ambient(&self, coords: &Element) -> Element {
        match &self.coords {
            Coords::Basis { .. } => self.hom.apply(coords).expect("coordinates in A's shape"),
            Coords::Conjugated { u, u_inv, placements } => u.mul(&self.place(placements, coords)).mul(u_inv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q() -> Field {
        Field::Q
    }

    #[test]
    fn rank_of_examples() {
        let s2 = Shape::single(2);
        assert_eq!(rank_of(&Element::one(q(), &s2), &PseudoRank::unit()).unwrap(), rat(1, 1));
        let s23 = Shape::new(vec![2, 3]).unwrap();
        let w = PseudoRank::new(vec![rat(1, 3), rat(2, 3)]).unwrap();
        assert_eq!(rank_of(&Element::one(q(), &s23), &w).unwrap(), rat(1, 1));
        assert_eq!(rank_of(&Element::unit(q(), &s2, 0, 0, 0), &PseudoRank::unit()).unwrap(), rat(1, 2));
        let x = Element::single(Matrix::from_i64(q(), &[&[1, 2], &[2, 4]]));
        assert_eq!(rank_of(&x, &PseudoRank::unit()).unwrap(), rat(1, 2));
        assert!(rank_of(&x, &w).is_err());
        assert!(PseudoRank::new(vec![rat(1, 2)]).is_err());
    }

    #[test]
    fn standard_embedding_examples() {
        let h = standard_embedding(q(), &Shape::single(2), &Shape::single(4), &[vec![2]]).unwrap();
        assert!(h.is_unital());
        let x = Element::single(Matrix::from_i64(q(), &[&[1, 2], &[3, 4]]));
        let y = h.apply(&x).unwrap();
        assert_eq!(y.block(0).block(0, 0, 2, 2), *x.block(0));
        assert_eq!(y.block(0).block(2, 2, 2, 2), *x.block(0));
        assert!(y.block(0).block(0, 2, 2, 2).is_zero());

        let id = standard_embedding(q(), &Shape::single(2), &Shape::single(2), &[vec![1]]).unwrap();
        assert_eq!(id.apply(&x).unwrap(), x);

        let h6 = standard_embedding(q(), &Shape::single(2), &Shape::single(6), &[vec![2]]).unwrap();
        assert!(!h6.is_unital());
        assert_eq!(rank_of(&h6.image_of_one(q()), &PseudoRank::unit()).unwrap(), rat(4, 6));
        assert!(standard_embedding(q(), &Shape::single(2), &Shape::single(3), &[vec![2]]).is_err());
    }

    #[test]
    fn identity_hom_is_identity() {
        let s = Shape::new(vec![2, 1]).unwrap();
        let id = ConcreteHom::identity(q(), &s);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Element::random(q(), &s, &mut rng, 5);
        assert_eq!(id.apply(&x).unwrap(), x);
    }

    #[test]
    fn tensor_stabilize_examples() {
        let e11 = Element::unit(q(), &Shape::single(2), 0, 0, 0);
        let t = tensor_stabilize(&e11, 2).unwrap();
        assert_eq!(rank_of(&t, &PseudoRank::unit()).unwrap(), rat(1, 2));
        assert!(tensor_stabilize(&Element::one(q(), &Shape::single(3)), 4).unwrap().is_one());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let z = Element::random_low_rank(q(), &Shape::single(2), 1, &mut rng, 3);
            let n = PseudoRank::unit();
            assert_eq!(rank_of(&z, &n).unwrap(), rank_of(&tensor_stabilize(&z, 3).unwrap(), &n).unwrap());
        }
    }

    fn units(field: Field, n: usize) -> Vec<Vec<Element>> {
        let s = Shape::single(n);
        (0..n).map(|i| (0..n).map(|j| Element::unit(field, &s, 0, i, j)).collect()).collect()
    }

    #[test]
    fn matrix_unit_verdicts() {
        assert!(verify_matrix_units(&units(q(), 3), true).pass);
        let mut bad = units(q(), 3);
        bad[0][1] = bad[0][1].scale(&q().from_i64(2));
        let v = verify_matrix_units(&bad, false);
        assert!(!v.pass);
        assert_eq!(v.first_violation.as_deref(), Some("(1,2)·(2,1)"));
        let u = Element::single(Matrix::from_i64(q(), &[&[1, 1, 0], &[0, 1, 2], &[0, 0, 1]]));
        let ui = Element::single(u.block(0).inverse().unwrap());
        let conj: Vec<Vec<Element>> =
            units(q(), 3).iter().map(|r| r.iter().map(|e| u.mul(e).mul(&ui)).collect()).collect();
        assert!(verify_matrix_units(&conj, false).pass);
        assert!(!verify_matrix_units(&conj, true).pass);
    }

    #[test]
    fn compatibility_examples() {
        let c = EmbeddingChain::factor_sequence(q(), &[2, 4, 8]).unwrap();
        let v = check_rank_compatibility(&c, &vec![PseudoRank::unit(); 3]).unwrap();
        assert!(v.pass && v.extremal_flag);

        let h = standard_embedding(q(), &Shape::single(1), &Shape::new(vec![1, 1]).unwrap(), &[vec![1], vec![1]])
            .unwrap();
        let chain = EmbeddingChain::new(vec![Shape::single(1), Shape::new(vec![1, 1]).unwrap()], vec![h]).unwrap();
        let ok = check_rank_compatibility(&chain, &[PseudoRank::unit(), PseudoRank::uniform(2)]).unwrap();
        assert!(ok.pass);
        let w = PseudoRank::new(vec![rat(1, 1), rat(0, 1)]).unwrap();
        assert!(check_rank_compatibility(&chain, &[PseudoRank::unit(), w]).unwrap().pass);
        let skew = standard_embedding(q(), &Shape::single(1), &Shape::new(vec![1, 1]).unwrap(), &[vec![1], vec![0]])
            .unwrap();
        let chain2 =
            EmbeddingChain::new(vec![Shape::single(1), Shape::new(vec![1, 1]).unwrap()], vec![skew]).unwrap();
        let w2 = PseudoRank::new(vec![rat(0, 1), rat(1, 1)]).unwrap();
        let bad = check_rank_compatibility(&chain2, &[PseudoRank::unit(), w2]).unwrap();
        assert!(!bad.pass);
        assert_eq!(bad.violations.len(), 1);
        assert!(check_rank_compatibility(&chain2, &[PseudoRank::unit()]).is_err());
    }

    #[test]
    fn composition_multiplies_multiplicities() {
        let a = standard_embedding(q(), &Shape::single(1), &Shape::new(vec![2, 3]).unwrap(), &[vec![2], vec![3]])
            .unwrap();
        let b = standard_embedding(
            q(),
            &Shape::new(vec![2, 3]).unwrap(),
            &Shape::new(vec![7, 5]).unwrap(),
            &[vec![2, 1], vec![1, 1]],
        )
        .unwrap();
        let c = a.then(&b).unwrap();
        let direct = standard_embedding(q(), &Shape::single(1), &Shape::new(vec![7, 5]).unwrap(), &[vec![7], vec![5]])
            .unwrap();
        let one = Element::one(q(), &Shape::single(1));
        assert_eq!(c.apply(&one).unwrap().block_ranks(), direct.apply(&one).unwrap().block_ranks());
    }

    #[test]
    fn subalgebra_coordinates() {
        let h = standard_embedding(q(), &Shape::single(2), &Shape::single(4), &[vec![2]]).unwrap();
        let a = Subalgebra::new(h).unwrap();
        let x = Element::single(Matrix::from_i64(q(), &[&[1, 2], &[3, 4]]));
        let amb = a.to_ambient(&x);
        assert_eq!(a.coordinates(&amb).unwrap(), x);
        assert!(!a.contains(&Element::unit(q(), &Shape::single(4), 0, 0, 1)));
    }

    #[test]
    fn element_json_round_trip() {
        let s = Shape::new(vec![2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Element::random(Field::QI, &s, &mut rng, 3);
        let j = serde_json::to_string(&x).unwrap();
        assert_eq!(serde_json::from_str::<Element>(&j).unwrap(), x);
        assert!(serde_json::from_str::<Shape>("[]").is_err());
    }

    fn shapes() -> impl Strategy<Value = (Shape, Field, u64)> {
        (
            prop_oneof![Just(vec![4]), Just(vec![2, 3]), Just(vec![3])],
            prop_oneof![Just(Field::Q), Just(Field::QI)],
            any::<u64>(),
        )
            .prop_map(|(s, f, seed)| (Shape::new(s).unwrap(), f, seed))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn pseudo_rank_axioms((s, f, seed) in shapes()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = s.num_blocks();
            let n = PseudoRank::uniform(k);
            let x = Element::random_low_rank(f, &s, 2, &mut rng, 2);
            let y = Element::random_low_rank(f, &s, 1, &mut rng, 2);
            let nx = rank_of(&x, &n).unwrap();
            let ny = rank_of(&y, &n).unwrap();
            prop_assert!(rank_of(&x.add(&y), &n).unwrap() <= &nx + &ny);
            let nxy = rank_of(&x.mul(&y), &n).unwrap();
            prop_assert!(nxy <= nx.clone() && nxy <= ny.clone());
            prop_assert_eq!(nx.is_zero(), x.is_zero());
        }

        #[test]
        fn rank_scales_through_single_block_homs(seed in any::<u64>(), g in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = standard_embedding(q(), &Shape::single(2), &Shape::single(2 * g + 1), &[vec![g]]).unwrap();
            let n = PseudoRank::unit();
            let c = rank_of(&h.image_of_one(q()), &n).unwrap();
            let z = Element::random_low_rank(q(), &Shape::single(2), 1, &mut rng, 3);
            prop_assert_eq!(rank_of(&h.apply(&z).unwrap(), &n).unwrap(), c * rank_of(&z, &n).unwrap());
        }
    }
}
