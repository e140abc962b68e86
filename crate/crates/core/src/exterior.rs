//! Exact finite-dimensional exterior algebra.
//!
//! A [`FormElement`] is a sparse sum of basis monomials `e_I = e_{i1}∧…∧e_{ip}`
//! with complex coefficients, the monomial stored as a bit mask. A
//! [`BigradedElement`] is the graded tensor product of a base and a fiber
//! exterior algebra with the Koszul sign
//!
//! ```text
//! (ω⊗ξ)·(ω'⊗ξ') = (−1)^{deg ξ · deg ω'} (ω∧ω')⊗(ξ∧ξ')
//! ```
//!
//! which is realized by embedding both factors in a single exterior algebra
//! whose generators list the base first and the fiber after it. This is the
//! only place where that sign is decided.

use std::collections::{BTreeMap, HashMap};

use itertools::Itertools;
use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Largest number of generators a mask can hold.
pub const MAX_GENERATORS: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExteriorError {
    #[error("generator counts differ: {0} vs {1}")]
    MismatchedGenerators(usize, usize),
    #[error("generator index {index} out of range for {n} generators")]
    GeneratorOutOfRange { index: usize, n: usize },
    #[error("Pfaffian needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("matrix is not skew-symmetric at ({0}, {1})")]
    NotSkew(usize, usize),
    #[error("matrix is empty")]
    Empty,
    #[error("matrix is not square")]
    NotSquare,
    #[error("degree {p} out of range 0..={d}")]
    DegreeOutOfRange { p: usize, d: usize },
    #[error("expected {expected} matrices of size {expected}x{expected}")]
    SizeMismatch { expected: usize },
    #[error("entry ({0}, {1}) is not of pure even degree")]
    OddEntry(usize, usize),
}

/// Sign of moving monomial `b` past monomial `a` into sorted order, or `None`
/// when they share a generator.
#[inline]
pub fn merge_sign(a: u64, b: u64) -> Option<f64> {
    if a & b != 0 {
        return None;
    }
    let mut swaps = 0u32;
    let mut rest = b;
    while rest != 0 {
        let j = rest.trailing_zeros();
        rest &= rest - 1;
        // generators of `a` above j must hop over e_j
        let above = if j >= 63 { 0 } else { a >> (j + 1) };
        swaps += above.count_ones();
    }
    Some(if swaps.is_multiple_of(2) { 1.0 } else { -1.0 })
}

fn mask_of(indices: &[usize]) -> u64 {
    indices.iter().fold(0u64, |m, &i| m | (1u64 << i))
}

fn indices_of(mask: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    let mut rest = mask;
    while rest != 0 {
        out.push(rest.trailing_zeros() as usize);
        rest &= rest - 1;
    }
    out
}

/// Element of the exterior algebra on `n` generators.
#[derive(Debug, Clone, PartialEq)]
pub struct FormElement {
    n: usize,
    terms: BTreeMap<u64, Complex64>,
}

impl FormElement {
    pub fn zero(n: usize) -> Self {
        assert!(n <= MAX_GENERATORS, "too many generators: {n}");
        FormElement {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar(n: usize, c: impl Into<Complex64>) -> Self {
        let mut f = FormElement::zero(n);
        f.add_term(0, c.into());
        f
    }

    pub fn one(n: usize) -> Self {
        FormElement::scalar(n, 1.0)
    }

    /// The generator `e_i` (0-based).
    pub fn generator(n: usize, i: usize) -> Self {
        assert!(i < n, "generator {i} out of range for {n}");
        let mut f = FormElement::zero(n);
        f.add_term(1 << i, Complex64::new(1.0, 0.0));
        f
    }

    /// `c · e_{indices}`; the indices may be in any order and the sign of the
    /// sorting permutation is applied. Repeated indices give zero.
    pub fn monomial(
        n: usize,
        indices: &[usize],
        c: impl Into<Complex64>,
    ) -> Result<Self, ExteriorError> {
        let mut mask = 0u64;
        let mut sign = 1.0;
        for &i in indices {
            if i >= n {
                return Err(ExteriorError::GeneratorOutOfRange { index: i, n });
            }
            match merge_sign(mask, 1 << i) {
                Some(s) => sign *= s,
                None => return Ok(FormElement::zero(n)),
            }
            mask |= 1 << i;
        }
        let mut f = FormElement::zero(n);
        f.add_term(mask, c.into() * sign);
        Ok(f)
    }

    pub fn n_generators(&self) -> usize {
        self.n
    }

    /// Terms as (strictly increasing index list, coefficient), in mask order.
    pub fn terms(&self) -> impl Iterator<Item = (Vec<usize>, Complex64)> + '_ {
        self.terms.iter().map(|(m, c)| (indices_of(*m), *c))
    }

    pub fn term_masks(&self) -> impl Iterator<Item = (u64, Complex64)> + '_ {
        self.terms.iter().map(|(m, c)| (*m, *c))
    }

    pub fn coefficient(&self, indices: &[usize]) -> Complex64 {
        self.coefficient_mask(mask_of(indices))
    }

    pub fn coefficient_mask(&self, mask: u64) -> Complex64 {
        self.terms.get(&mask).copied().unwrap_or_default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `c·e_mask`, dropping the entry if it cancels exactly.
    pub fn add_term(&mut self, mask: u64, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let entry = self.terms.entry(mask).or_default();
        *entry += c;
        if *entry == Complex64::new(0.0, 0.0) {
            self.terms.remove(&mask);
        }
    }

    /// Degree if homogeneous; `None` for zero or mixed elements.
    pub fn degree(&self) -> Option<usize> {
        let mut degrees = self.terms.keys().map(|m| m.count_ones() as usize);
        let first = degrees.next()?;
        degrees.all(|d| d == first).then_some(first)
    }

    /// Component of pure degree `p`.
    pub fn part(&self, p: usize) -> FormElement {
        FormElement {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.count_ones() as usize == p)
                .map(|(m, c)| (*m, *c))
                .collect(),
        }
    }

    pub fn scalar_part(&self) -> Complex64 {
        self.coefficient_mask(0)
    }

    pub fn is_even(&self) -> bool {
        self.terms.keys().all(|m| m.count_ones() % 2 == 0)
    }

    fn check(&self, other: &FormElement) -> Result<(), ExteriorError> {
        if self.n != other.n {
            return Err(ExteriorError::MismatchedGenerators(self.n, other.n));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &FormElement) -> Result<FormElement, ExteriorError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(*m, *c);
        }
        Ok(out)
    }

    pub fn scale(&self, s: impl Into<Complex64>) -> FormElement {
        let s = s.into();
        let mut out = FormElement::zero(self.n);
        for (m, c) in &self.terms {
            out.add_term(*m, c * s);
        }
        out
    }

    pub fn wedge(&self, other: &FormElement) -> Result<FormElement, ExteriorError> {
        self.check(other)?;
        let mut out = FormElement::zero(self.n);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                if let Some(s) = merge_sign(*ma, *mb) {
                    out.add_term(ma | mb, ca * cb * s);
                }
            }
        }
        Ok(out)
    }

    /// Coefficient of the top monomial `e_1∧…∧e_n`.
    pub fn berezin(&self) -> Complex64 {
        let top = if self.n == 0 { 0 } else { u64::MAX >> (64 - self.n) };
        self.coefficient_mask(top)
    }

    /// `exp(ω)` truncated after the powers that can reach degree
    /// `max_degree`. A scalar part `s` is split off as `e^s`.
    pub fn exp_nilpotent(&self, max_degree: usize) -> FormElement {
        let s = self.scalar_part();
        let mut nil = self.clone();
        nil.terms.remove(&0);
        let min_deg = nil
            .terms
            .keys()
            .map(|m| m.count_ones() as usize)
            .min()
            .unwrap_or(1)
            .max(1);
        let kmax = max_degree / min_deg;
        let mut sum = FormElement::one(self.n);
        let mut power = FormElement::one(self.n);
        for k in 1..=kmax {
            power = power.wedge(&nil).expect("same algebra").scale(1.0 / k as f64);
            if power.is_zero() {
                break;
            }
            sum = sum.try_add(&power).expect("same algebra");
        }
        sum.scale(s.exp())
    }

    /// Exact exponential: the series stops at the top degree.
    pub fn exp(&self) -> FormElement {
        self.exp_nilpotent(self.n)
    }

    /// Largest imaginary part among the coefficients.
    pub fn max_imag(&self) -> f64 {
        self.terms.values().map(|c| c.im.abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Add for &FormElement {
    type Output = FormElement;
    fn add(self, rhs: &FormElement) -> FormElement {
        self.try_add(rhs).expect("mismatched generator counts")
    }
}

impl std::ops::Sub for &FormElement {
    type Output = FormElement;
    fn sub(self, rhs: &FormElement) -> FormElement {
        self.try_add(&rhs.scale(-1.0))
            .expect("mismatched generator counts")
    }
}

impl std::ops::Neg for &FormElement {
    type Output = FormElement;
    fn neg(self) -> FormElement {
        self.scale(-1.0)
    }
}

/// Element of Λ(base) ⊗ Λ(fiber).
#[derive(Debug, Clone, PartialEq)]
pub struct BigradedElement {
    n_base: usize,
    n_fiber: usize,
    inner: FormElement,
}

impl BigradedElement {
    pub fn zero(n_base: usize, n_fiber: usize) -> Self {
        BigradedElement {
            n_base,
            n_fiber,
            inner: FormElement::zero(n_base + n_fiber),
        }
    }

    pub fn one(n_base: usize, n_fiber: usize) -> Self {
        Self::scalar(n_base, n_fiber, 1.0)
    }

    pub fn scalar(n_base: usize, n_fiber: usize, c: impl Into<Complex64>) -> Self {
        BigradedElement {
            n_base,
            n_fiber,
            inner: FormElement::scalar(n_base + n_fiber, c),
        }
    }

    /// `c · e_base ⊗ e_fiber`, index lists in any order.
    pub fn term(
        n_base: usize,
        n_fiber: usize,
        base: &[usize],
        fiber: &[usize],
        c: impl Into<Complex64>,
    ) -> Result<Self, ExteriorError> {
        for &i in base {
            if i >= n_base {
                return Err(ExteriorError::GeneratorOutOfRange { index: i, n: n_base });
            }
        }
        for &i in fiber {
            if i >= n_fiber {
                return Err(ExteriorError::GeneratorOutOfRange { index: i, n: n_fiber });
            }
        }
        let all: Vec<usize> = base
            .iter()
            .copied()
            .chain(fiber.iter().map(|i| i + n_base))
            .collect();
        Ok(BigradedElement {
            n_base,
            n_fiber,
            inner: FormElement::monomial(n_base + n_fiber, &all, c)?,
        })
    }

    /// `ω ⊗ 1`.
    pub fn from_base(omega: &FormElement, n_fiber: usize) -> Self {
        let mut inner = FormElement::zero(omega.n + n_fiber);
        for (m, c) in &omega.terms {
            inner.add_term(*m, *c);
        }
        BigradedElement {
            n_base: omega.n,
            n_fiber,
            inner,
        }
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn n_fiber(&self) -> usize {
        self.n_fiber
    }

    fn split(&self, mask: u64) -> (u64, u64) {
        let base = mask & ((1u64 << self.n_base) - 1);
        (base, mask >> self.n_base)
    }

    /// Terms as ((base indices, fiber indices), coefficient).
    pub fn terms(&self) -> impl Iterator<Item = ((Vec<usize>, Vec<usize>), Complex64)> + '_ {
        self.inner.terms.iter().map(|(m, c)| {
            let (b, f) = self.split(*m);
            ((indices_of(b), indices_of(f)), *c)
        })
    }

    pub fn coefficient(&self, base: &[usize], fiber: &[usize]) -> Complex64 {
        self.inner
            .coefficient_mask(mask_of(base) | (mask_of(fiber) << self.n_base))
    }

    pub fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }

    fn check(&self, other: &BigradedElement) -> Result<(), ExteriorError> {
        if self.n_base != other.n_base {
            return Err(ExteriorError::MismatchedGenerators(self.n_base, other.n_base));
        }
        if self.n_fiber != other.n_fiber {
            return Err(ExteriorError::MismatchedGenerators(self.n_fiber, other.n_fiber));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &BigradedElement) -> Result<BigradedElement, ExteriorError> {
        self.check(other)?;
        Ok(BigradedElement {
            n_base: self.n_base,
            n_fiber: self.n_fiber,
            inner: self.inner.try_add(&other.inner)?,
        })
    }

    pub fn scale(&self, s: impl Into<Complex64>) -> BigradedElement {
        BigradedElement {
            n_base: self.n_base,
            n_fiber: self.n_fiber,
            inner: self.inner.scale(s),
        }
    }

    pub fn mul(&self, other: &BigradedElement) -> Result<BigradedElement, ExteriorError> {
        self.check(other)?;
        Ok(BigradedElement {
            n_base: self.n_base,
            n_fiber: self.n_fiber,
            inner: self.inner.wedge(&other.inner)?,
        })
    }

    /// Projection onto top fiber degree: `B(ω⊗ξ) = ω·B(ξ)`.
    pub fn berezin_fiber(&self) -> FormElement {
        let top = if self.n_fiber == 0 {
            0
        } else {
            u64::MAX >> (64 - self.n_fiber)
        };
        let mut out = FormElement::zero(self.n_base);
        for (m, c) in &self.inner.terms {
            let (b, f) = self.split(*m);
            if f == top {
                out.add_term(b, *c);
            }
        }
        out
    }

    pub fn exp_nilpotent(&self, max_degree: usize) -> BigradedElement {
        BigradedElement {
            n_base: self.n_base,
            n_fiber: self.n_fiber,
            inner: self.inner.exp_nilpotent(max_degree),
        }
    }

    pub fn exp(&self) -> BigradedElement {
        self.exp_nilpotent(self.n_base + self.n_fiber)
    }

    pub fn max_imag(&self) -> f64 {
        self.inner.max_imag()
    }
}

// ---------------------------------------------------------------------------
// Pfaffians
// ---------------------------------------------------------------------------

/// Commutative ring operations needed by the Pfaffian expansion.
pub trait PfaffianEntry: Clone {
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
}

impl PfaffianEntry for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn one_like(&self) -> Self {
        1.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
}

impl PfaffianEntry for Complex64 {
    fn zero_like(&self) -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one_like(&self) -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
}

/// Only meaningful on even-degree entries, where the product commutes.
impl PfaffianEntry for FormElement {
    fn zero_like(&self) -> Self {
        FormElement::zero(self.n)
    }
    fn one_like(&self) -> Self {
        FormElement::one(self.n)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self.wedge(other).expect("mismatched generator counts")
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
}

/// Pfaffian by expansion along the first remaining row, memoized on the set
/// of remaining indices. `Pf([[0, c], [-c, 0]]) = c`.
pub fn pfaffian<T: PfaffianEntry>(a: &[Vec<T>]) -> Result<T, ExteriorError> {
    let d = a.len();
    if a.iter().any(|row| row.len() != d) {
        return Err(ExteriorError::NotSquare);
    }
    if !d.is_multiple_of(2) {
        return Err(ExteriorError::OddDimension(d));
    }
    if d == 0 {
        return Err(ExteriorError::Empty);
    }
    let full = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
    let mut memo: HashMap<u64, T> = HashMap::new();
    Ok(pf_rec(a, full, &mut memo))
}

fn pf_rec<T: PfaffianEntry>(a: &[Vec<T>], set: u64, memo: &mut HashMap<u64, T>) -> T {
    if set == 0 {
        return a[0][0].one_like();
    }
    if let Some(v) = memo.get(&set) {
        return v.clone();
    }
    let i = set.trailing_zeros() as usize;
    let rest = set & !(1u64 << i);
    let mut acc = a[0][0].zero_like();
    let mut positive = true;
    let mut r = rest;
    while r != 0 {
        let j = r.trailing_zeros() as usize;
        r &= r - 1;
        let minor = pf_rec(a, rest & !(1u64 << j), memo);
        let term = a[i][j].mul(&minor);
        acc = if positive { acc.add(&term) } else { acc.add(&term.neg()) };
        positive = !positive;
    }
    memo.insert(set, acc.clone());
    acc
}

/// Skew-symmetric matrix of even forms, such as a curvature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewFormMatrix {
    entries: Vec<Vec<FormElement>>,
}

impl SkewFormMatrix {
    pub fn new(entries: Vec<Vec<FormElement>>) -> Result<Self, ExteriorError> {
        let d = entries.len();
        if entries.iter().any(|r| r.len() != d) {
            return Err(ExteriorError::NotSquare);
        }
        for i in 0..d {
            for j in 0..d {
                if !entries[i][j].is_even() {
                    return Err(ExteriorError::OddEntry(i, j));
                }
                if entries[i][j] != -&entries[j][i] {
                    return Err(ExteriorError::NotSkew(i, j));
                }
            }
        }
        Ok(SkewFormMatrix { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> &FormElement {
        &self.entries[i][j]
    }

    pub fn pfaffian(&self) -> Result<FormElement, ExteriorError> {
        pfaffian(&self.entries)
    }
}

/// Pfaffian of a real skew matrix.
pub fn pfaffian_real(m: &DMatrix<f64>) -> Result<f64, ExteriorError> {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect();
    pfaffian(&rows)
}

// ---------------------------------------------------------------------------
// Derivation extensions and supertraces
// ---------------------------------------------------------------------------

/// Lexicographic basis of Λ^p on `d` generators.
pub fn lambda_basis(d: usize, p: usize) -> Vec<Vec<usize>> {
    (0..d).combinations(p).collect()
}

/// `D^p A` on Λ^p, where `A` acts on column vectors: `A e_i = Σ_j A[j,i] e_j`.
pub fn dp_extend(a: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>, ExteriorError> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(ExteriorError::NotSquare);
    }
    if p > d {
        return Err(ExteriorError::DegreeOutOfRange { p, d });
    }
    let basis = lambda_basis(d, p);
    let position: HashMap<u64, usize> = basis
        .iter()
        .enumerate()
        .map(|(k, idx)| (mask_of(idx), k))
        .collect();
    let n = basis.len();
    let mut out = DMatrix::zeros(n, n);
    if p == 0 {
        return Ok(out);
    }
    for (col, idx) in basis.iter().enumerate() {
        let mask = mask_of(idx);
        for (slot, &i) in idx.iter().enumerate() {
            let others = mask & !(1u64 << i);
            for j in 0..d {
                let coeff = a[(j, i)];
                if coeff == 0.0 || others & (1u64 << j) != 0 {
                    continue;
                }
                // e_j sits in slot `slot`; move it to its sorted position
                let before = idx[..slot].iter().filter(|&&k| k > j).count();
                let after = idx[slot + 1..].iter().filter(|&&k| k < j).count();
                let sign = if (before + after) % 2 == 0 { 1.0 } else { -1.0 };
                let row = position[&(others | (1u64 << j))];
                out[(row, col)] += sign * coeff;
            }
        }
    }
    Ok(out)
}

/// Elementary endomorphism `e_i* ⊗ e_j`, sending `e_i` to `e_j`.
pub fn elementary(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    m[(j, i)] = 1.0;
    m
}

/// Real 4-tensor `a^{ijkl} e_i*⊗e_j⊗e_k*⊗e_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    d: usize,
    a: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        Tensor4 {
            d,
            a: vec![0.0; d * d * d * d],
        }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor4::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        t.set(i, j, k, l, f(i, j, k, l));
                    }
                }
            }
        }
        t
    }

    /// `B ⊗ C` with `B = Σ b_ij E_ij`, i.e. `a^{ijkl} = B[j,i]·C[l,k]`.
    pub fn from_pair(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Self {
        let d = b.nrows();
        Tensor4::from_fn(d, |i, j, k, l| b[(j, i)] * c[(l, k)])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.d + j) * self.d + k) * self.d + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.a[self.idx(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let at = self.idx(i, j, k, l);
        self.a[at] = v;
    }
}

/// `Σ a^{ijkl} D^p(E_ij) ∘ D^p(E_kl)`.
pub fn dp_extend4(a: &Tensor4, p: usize) -> Result<DMatrix<f64>, ExteriorError> {
    let d = a.d;
    if p > d {
        return Err(ExteriorError::DegreeOutOfRange { p, d });
    }
    let ext: Vec<DMatrix<f64>> = (0..d * d)
        .map(|ij| dp_extend(&elementary(d, ij / d, ij % d), p))
        .collect::<Result<_, _>>()?;
    let n = ext[0].nrows();
    let mut out = DMatrix::zeros(n, n);
    for ij in 0..d * d {
        // contract over (k, l) first, then a single product
        let mut right = DMatrix::zeros(n, n);
        for kl in 0..d * d {
            let c = a.a[ij * d * d + kl];
            if c != 0.0 {
                right += &ext[kl] * c;
            }
        }
        out += &ext[ij] * right;
    }
    Ok(out)
}

/// `Σ_p (−1)^p tr(ops(p))` over `0 ≤ p ≤ d`.
pub fn supertrace<F>(ops: F, d: usize) -> f64
where
    F: Fn(usize) -> DMatrix<f64>,
{
    (0..=d)
        .map(|p| {
            let t = ops(p).trace();
            if p % 2 == 0 {
                t
            } else {
                -t
            }
        })
        .sum()
}

/// Coefficient of `x_1⋯x_d` in `det(x_1 A_1 + … + x_d A_d)`, by Möbius
/// inversion over the vertices of the unit cube.
pub fn patodi_coefficient(mats: &[DMatrix<f64>]) -> Result<f64, ExteriorError> {
    let d = mats.len();
    if d == 0 || mats.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(ExteriorError::SizeMismatch { expected: d });
    }
    let mut total = 0.0;
    for subset in 0u64..(1u64 << d) {
        let mut sum = DMatrix::zeros(d, d);
        for (i, m) in mats.iter().enumerate() {
            if subset & (1 << i) != 0 {
                sum += m;
            }
        }
        let sign = if (d - subset.count_ones() as usize).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        total += sign * sum.determinant();
    }
    Ok(total)
}

/// Sign of a permutation given as an image list.
pub fn permutation_sign(p: &[usize]) -> f64 {
    let mut inversions = 0;
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `Σ_{σ1,σ2} sgn σ1 sgn σ2 Π_m a^{σ1(2m−1) σ2(2m−1) σ1(2m) σ2(2m)}` for even
/// `d`, which equals the supertrace of `(D^p A)^{d/2}`.
pub fn double_permutation_sum(a: &Tensor4) -> Result<f64, ExteriorError> {
    let d = a.dim();
    if !d.is_multiple_of(2) {
        return Err(ExteriorError::OddDimension(d));
    }
    let perms: Vec<(Vec<usize>, f64)> = (0..d)
        .permutations(d)
        .map(|p| {
            let s = permutation_sign(&p);
            (p, s)
        })
        .collect();
    let mut total = 0.0;
    for (p1, s1) in &perms {
        for (p2, s2) in &perms {
            let mut term = s1 * s2;
            for m in 0..d / 2 {
                term *= a.get(p1[2 * m], p2[2 * m], p1[2 * m + 1], p2[2 * m + 1]);
                if term == 0.0 {
                    break;
                }
            }
            total += term;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn basis_products() {
        let e1 = FormElement::generator(3, 0);
        let e2 = FormElement::generator(3, 1);
        assert_eq!(e1.wedge(&e2).unwrap().coefficient(&[0, 1]), c(1.0));
        assert_eq!(e2.wedge(&e1).unwrap().coefficient(&[0, 1]), c(-1.0));
        let s = &e1 + &e2;
        assert!(s.wedge(&s).unwrap().is_zero());
        assert!(e1.wedge(&FormElement::generator(2, 0)).is_err());
    }

    #[test]
    fn monomial_sorts_with_sign() {
        let m = FormElement::monomial(4, &[3, 0, 2], 1.0).unwrap();
        // (3,0,2) -> (0,2,3) takes two transpositions
        assert_eq!(m.coefficient(&[0, 2, 3]), c(1.0));
        assert!(FormElement::monomial(4, &[1, 1], 1.0).unwrap().is_zero());
    }

    #[test]
    fn berezin_projects_top() {
        let w = &FormElement::monomial(3, &[0, 1, 2], 5.0).unwrap()
            + &FormElement::monomial(3, &[0, 1], 2.0).unwrap();
        assert_eq!(w.berezin(), c(5.0));
        assert_eq!(FormElement::generator(2, 0).berezin(), c(0.0));
        let a = FormElement::monomial(2, &[0, 1], 1.5).unwrap();
        assert_eq!(a.exp().berezin(), c(1.5));
    }

    #[test]
    fn exponential_of_two_blocks() {
        let (a, b) = (0.7, -1.3);
        let w = &FormElement::monomial(4, &[0, 1], a).unwrap()
            + &FormElement::monomial(4, &[2, 3], b).unwrap();
        let e = w.exp();
        assert_eq!(e.len(), 4);
        assert_eq!(e.scalar_part(), c(1.0));
        assert_eq!(e.coefficient(&[0, 1]), c(a));
        assert_eq!(e.coefficient(&[2, 3]), c(b));
        assert!((e.coefficient(&[0, 1, 2, 3]) - c(a * b)).norm() < 1e-15);
        assert_eq!(FormElement::zero(4).exp(), FormElement::one(4));
        let shifted = (&w + &FormElement::scalar(4, 0.4)).exp();
        let expected = e.scale(0.4f64.exp());
        assert!((&shifted - &expected).terms().all(|(_, z)| z.norm() < 1e-14));
    }

    #[test]
    fn koszul_sign() {
        // (1⊗f1)·(b1⊗1) = −(b1⊗f1)
        let f = BigradedElement::term(2, 2, &[], &[0], 1.0).unwrap();
        let b = BigradedElement::term(2, 2, &[0], &[], 1.0).unwrap();
        assert_eq!(f.mul(&b).unwrap().coefficient(&[0], &[0]), c(-1.0));
        assert_eq!(b.mul(&f).unwrap().coefficient(&[0], &[0]), c(1.0));
    }

    #[test]
    fn berezin_fiber_basics() {
        let w = FormElement::monomial(3, &[0, 2], 2.0).unwrap();
        let top = BigradedElement::term(3, 2, &[], &[0, 1], 1.0).unwrap();
        let x = BigradedElement::from_base(&w, 2).mul(&top).unwrap();
        assert_eq!(x.berezin_fiber(), w);
        assert!(BigradedElement::from_base(&w, 1).berezin_fiber().is_zero());
    }

    #[test]
    fn pfaffian_small() {
        let m = vec![vec![0.0, 2.5], vec![-2.5, 0.0]];
        assert_eq!(pfaffian(&m).unwrap(), 2.5);
        let (a, b) = (1.7, -0.4);
        let mut m = vec![vec![0.0; 4]; 4];
        m[0][1] = a;
        m[1][0] = -a;
        m[2][3] = b;
        m[3][2] = -b;
        assert!((pfaffian(&m).unwrap() - a * b).abs() < 1e-15);
        assert!(matches!(
            pfaffian(&vec![vec![0.0; 3]; 3]),
            Err(ExteriorError::OddDimension(3))
        ));
    }

    #[test]
    fn skew_form_matrix_checks() {
        let n = 2;
        let w = FormElement::monomial(n, &[0, 1], 1.0).unwrap();
        let z = FormElement::zero(n);
        let good = SkewFormMatrix::new(vec![vec![z.clone(), w.clone()], vec![-&w, z.clone()]]).unwrap();
        assert_eq!(good.pfaffian().unwrap(), w);
        assert!(SkewFormMatrix::new(vec![vec![z.clone(), w.clone()], vec![w.clone(), z.clone()]]).is_err());
        let odd = FormElement::generator(n, 0);
        assert!(SkewFormMatrix::new(vec![vec![z.clone(), odd.clone()], vec![-&odd, z]]).is_err());
    }

    #[test]
    fn dp_extend_identity_and_trace() {
        let id = DMatrix::<f64>::identity(4, 4);
        for p in 0..=4 {
            let m = dp_extend(&id, p).unwrap();
            let n = m.nrows();
            assert_eq!(m, DMatrix::identity(n, n) * p as f64);
        }
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.9]);
        let d2 = dp_extend(&a, 2).unwrap();
        assert_eq!(d2.nrows(), 1);
        assert!((d2[(0, 0)] - a.trace()).abs() < 1e-15);
        assert_eq!(dp_extend(&a, 1).unwrap(), a);
        assert!(dp_extend(&a, 3).is_err());
    }

    #[test]
    fn dp_extend4_decomposable() {
        let b = DMatrix::from_row_slice(3, 3, &[0.2, 1.0, -0.5, 0.3, 0.0, 0.7, -1.1, 0.4, 0.6]);
        let cm = DMatrix::from_row_slice(3, 3, &[1.0, -0.2, 0.0, 0.5, 0.8, -0.3, 0.1, 0.9, -0.7]);
        let t = Tensor4::from_pair(&b, &cm);
        for p in 0..=3 {
            let lhs = dp_extend4(&t, p).unwrap();
            let rhs = dp_extend(&b, p).unwrap() * dp_extend(&cm, p).unwrap();
            assert!((lhs - rhs).abs().max() < 1e-13);
        }
        let id = DMatrix::<f64>::identity(3, 3);
        let t = Tensor4::from_pair(&id, &id);
        let m = dp_extend4(&t, 2).unwrap();
        assert!((m - DMatrix::identity(3, 3) * 4.0).abs().max() < 1e-14);
    }

    #[test]
    fn supertrace_of_identity_vanishes() {
        let s = supertrace(|p| DMatrix::identity(lambda_basis(4, p).len(), lambda_basis(4, p).len()), 4);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn patodi_coefficient_examples() {
        let units: Vec<_> = (0..3).map(|i| elementary(3, i, i)).collect();
        assert!((patodi_coefficient(&units).unwrap() - 1.0).abs() < 1e-14);
        let ids = vec![DMatrix::<f64>::identity(2, 2); 2];
        assert!((patodi_coefficient(&ids).unwrap() - 2.0).abs() < 1e-14);
        assert!(patodi_coefficient(&ids[..1]).is_err());
    }

    #[test]
    fn merge_sign_counts_crossings() {
        assert_eq!(merge_sign(0b01, 0b10), Some(1.0));
        assert_eq!(merge_sign(0b10, 0b01), Some(-1.0));
        assert_eq!(merge_sign(0b110, 0b001), Some(1.0));
        assert_eq!(merge_sign(0b11, 0b01), None);
    }
}
