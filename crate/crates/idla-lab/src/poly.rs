//! Exact construction and evaluation of discrete harmonic polynomials on
//! `Z^d` and rescaled meshes `(1/m) Z^d`.
//!
//! Coefficients are arbitrary-precision rationals so that harmonicity can
//! be verified exactly; hot-loop evaluation goes through [`PolyEvaluator`],
//! which pre-converts coefficients to `f64` once and evaluates by Horner's
//! rule one variable at a time.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rat = BigRational;

fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

fn binomial(n: u32, k: u32) -> BigInt {
    let mut acc = BigInt::one();
    for j in 0..k.min(n - k) {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

/// Sparse multivariate polynomial with exact rational coefficients.
///
/// Zero coefficients are never stored; the exponent map is ordered so
/// iteration (and hence serialization and `f64` conversion) is
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactPolynomial {
    dim: usize,
    terms: BTreeMap<Vec<u32>, Rat>,
}

impl ExactPolynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, value: Rat) -> Self {
        let mut p = Self::zero(dim);
        if !value.is_zero() {
            p.terms.insert(vec![0; dim], value);
        }
        p
    }

    pub fn one(dim: usize) -> Self {
        Self::constant(dim, Rat::one())
    }

    /// The monomial `x_var`.
    pub fn variable(dim: usize, var: usize) -> Self {
        assert!(var < dim);
        let mut exps = vec![0; dim];
        exps[var] = 1;
        let mut p = Self::zero(dim);
        p.terms.insert(exps, Rat::one());
        p
    }

    pub fn monomial(dim: usize, exps: Vec<u32>, coeff: Rat) -> Self {
        assert_eq!(exps.len(), dim);
        let mut p = Self::zero(dim);
        if !coeff.is_zero() {
            p.terms.insert(exps, coeff);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Maximum total degree (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Rat)> {
        self.terms.iter()
    }

    pub fn coeff(&self, exps: &[u32]) -> Rat {
        self.terms.get(exps).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn constant_term(&self) -> Rat {
        self.coeff(&vec![0; self.dim])
    }

    fn insert_add(&mut self, exps: Vec<u32>, coeff: Rat) {
        if coeff.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(coeff);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().clone() + coeff;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.insert_add(e.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, factor: &Rat) -> Self {
        if factor.is_zero() {
            return Self::zero(self.dim);
        }
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = c.clone() * factor;
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = Self::zero(self.dim);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let exps: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.insert_add(exps, c1.clone() * c2.clone());
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::one(self.dim);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Substitute `x_var -> x_var + c`.
    pub fn shift(&self, var: usize, c: &Rat) -> Self {
        assert!(var < self.dim);
        let mut out = Self::zero(self.dim);
        for (e, coeff) in &self.terms {
            let k = e[var];
            // (x + c)^k = sum_j C(k, j) c^(k-j) x^j
            let mut cpow = Rat::one();
            for j in (0..=k).rev() {
                let b = Rat::from_integer(binomial(k, j));
                let mut exps = e.clone();
                exps[var] = j;
                out.insert_add(exps, coeff.clone() * b * cpow.clone());
                cpow *= c.clone();
            }
        }
        out
    }

    /// Symmetric second difference in direction `var`:
    /// `f(x + e_var) - 2 f(x) + f(x - e_var)` as a polynomial.
    pub fn second_difference(&self, var: usize) -> Self {
        let plus = self.shift(var, &Rat::one());
        let minus = self.shift(var, &(-Rat::one()));
        plus.add(&minus).sub(&self.scale(&rat_int(2)))
    }

    /// The full lattice Laplacian `sum_i D_i^2 f` as a polynomial.
    pub fn discrete_laplacian_poly(&self) -> Self {
        let mut out = Self::zero(self.dim);
        for i in 0..self.dim {
            out = out.add(&self.second_difference(i));
        }
        out
    }

    pub fn partial_derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut exps = e.clone();
                exps[var] -= 1;
                out.insert_add(exps, c.clone() * rat_int(e[var] as i64));
            }
        }
        out
    }

    /// The continuum Laplacian `sum_i d^2/dx_i^2 f`.
    pub fn laplacian(&self) -> Self {
        let mut out = Self::zero(self.dim);
        for i in 0..self.dim {
            out = out.add(&self.partial_derivative(i).partial_derivative(i));
        }
        out
    }

    pub fn is_harmonic(&self) -> bool {
        self.laplacian().is_zero()
    }

    pub fn eval_rational(&self, x: &[Rat]) -> Rat {
        assert_eq!(x.len(), self.dim);
        let mut acc = Rat::zero();
        for (e, c) in &self.terms {
            let mut term = c.clone();
            for (xi, &ei) in x.iter().zip(e) {
                for _ in 0..ei {
                    term *= xi.clone();
                }
            }
            acc += term;
        }
        acc
    }

    /// Exact evaluation at an integer lattice point.
    pub fn eval_lattice_exact(&self, x: &[i64]) -> Rat {
        let coords: Vec<Rat> = x.iter().map(|&v| rat_int(v)).collect();
        self.eval_rational(&coords)
    }

    /// Terms of the given total degree.
    pub fn homogeneous_component(&self, deg: u32) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            if e.iter().sum::<u32>() == deg {
                out.terms.insert(e.clone(), c.clone());
            }
        }
        out
    }

    pub fn to_f64_terms(&self) -> Vec<(Vec<u32>, f64)> {
        self.terms
            .iter()
            .map(|(e, c)| (e.clone(), c.to_f64().expect("coefficient fits f64")))
            .collect()
    }
}

/// The lattice Laplacian of `f` evaluated exactly at `x`.
///
/// Vanishes identically for images of harmonic polynomials under the
/// coordinate-wise factorial map.
pub fn discrete_laplacian_at(f: &ExactPolynomial, x: &[i64]) -> Rat {
    let mut acc = Rat::zero();
    let center = f.eval_lattice_exact(x);
    let mut pt = x.to_vec();
    for i in 0..f.dim() {
        pt[i] += 1;
        acc += f.eval_lattice_exact(&pt);
        pt[i] -= 2;
        acc += f.eval_lattice_exact(&pt);
        pt[i] += 1;
        acc -= center.clone() * rat_int(2);
    }
    acc
}

/// `P_k(x) = prod_{j=-(k-1)/2}^{(k-1)/2} (x + j)`, the symmetric
/// factorial polynomial, expanded in one variable.
///
/// `P_k` has the parity of `k`, and `P_k(x) - x^k` has degree at most
/// `k - 2`.
pub fn symmetric_factorial_poly(k: u32) -> ExactPolynomial {
    let x = ExactPolynomial::variable(1, 0);
    let mut p = ExactPolynomial::one(1);
    for a in 0..k {
        // j = a - (k-1)/2 stepping through k values, in halves: (2a - k + 1)/2
        let j = rat(2 * a as i64 - k as i64 + 1, 2);
        p = p.mul(&x.add(&ExactPolynomial::constant(1, j)));
    }
    p
}

fn univariate_in_var(p1: &ExactPolynomial, dim: usize, var: usize) -> ExactPolynomial {
    assert_eq!(p1.dim(), 1);
    let mut out = ExactPolynomial::zero(dim);
    for (e, c) in p1.terms() {
        let mut exps = vec![0; dim];
        exps[var] = e[0];
        out.insert_add(exps, c.clone());
    }
    out
}

/// The linear map sending each monomial `x_1^{k_1} ... x_d^{k_d}` to
/// `P_{k_1}(x_1) ... P_{k_d}(x_d)`.
///
/// If the input is harmonic of degree `k`, the image is discrete harmonic
/// on `Z^d` and differs from the input by a polynomial of degree at most
/// `k - 2`.
pub fn xi_transform(psi: &ExactPolynomial) -> ExactPolynomial {
    let dim = psi.dim();
    let mut cache: BTreeMap<u32, ExactPolynomial> = BTreeMap::new();
    let mut out = ExactPolynomial::zero(dim);
    for (e, c) in psi.terms() {
        let mut prod = ExactPolynomial::constant(dim, c.clone());
        for (var, &ei) in e.iter().enumerate() {
            if ei == 0 {
                continue;
            }
            let pk = cache
                .entry(ei)
                .or_insert_with(|| symmetric_factorial_poly(ei))
                .clone();
            prod = prod.mul(&univariate_in_var(&pk, dim, var));
        }
        out = out.add(&prod);
    }
    out
}

// ---------------------------------------------------------------------------
// Complex pair polynomials: exact-rational combinations of z^a zbar^b.
// ---------------------------------------------------------------------------

/// Exact Gaussian-rational scalar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexRat {
    pub re: Rat,
    pub im: Rat,
}

impl ComplexRat {
    pub fn zero() -> Self {
        Self {
            re: Rat::zero(),
            im: Rat::zero(),
        }
    }

    pub fn one() -> Self {
        Self {
            re: Rat::one(),
            im: Rat::zero(),
        }
    }

    pub fn new(re: Rat, im: Rat) -> Self {
        Self { re, im }
    }

    pub fn from_int(re: i64, im: i64) -> Self {
        Self::new(rat_int(re), rat_int(im))
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.re.clone(), -self.im.clone())
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.re.clone() + o.re.clone(), self.im.clone() + o.im.clone())
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.re.clone(), -self.im.clone())
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.re.clone() * o.re.clone() - self.im.clone() * o.im.clone(),
            self.re.clone() * o.im.clone() + self.im.clone() * o.re.clone(),
        )
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (
            self.re.to_f64().expect("re fits f64"),
            self.im.to_f64().expect("im fits f64"),
        )
    }

    pub fn abs_sq(&self) -> Rat {
        self.re.clone() * self.re.clone() + self.im.clone() * self.im.clone()
    }
}

/// Two-dimensional polynomial written in the monomials `z^a zbar^b` with
/// exact Gaussian-rational coefficients.  Houses the discrete harmonic
/// sequence `p_k` and its conjugates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexPairPolynomial {
    terms: BTreeMap<(u32, u32), ComplexRat>,
}

impl ComplexPairPolynomial {
    pub fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: ComplexRat) -> Self {
        let mut p = Self::zero();
        if !c.is_zero() {
            p.terms.insert((0, 0), c);
        }
        p
    }

    pub fn one() -> Self {
        Self::constant(ComplexRat::one())
    }

    pub fn monomial(a: u32, b: u32, c: ComplexRat) -> Self {
        let mut p = Self::zero();
        if !c.is_zero() {
            p.terms.insert((a, b), c);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|&(a, b)| a + b).max().unwrap_or(0)
    }

    pub fn coeff(&self, a: u32, b: u32) -> ComplexRat {
        self.terms
            .get(&(a, b))
            .cloned()
            .unwrap_or_else(ComplexRat::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32), &ComplexRat)> {
        self.terms.iter()
    }

    fn insert_add(&mut self, key: (u32, u32), c: ComplexRat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(key) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().add(&c);
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (k, c) in &o.terms {
            out.insert_add(*k, c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = c.neg();
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for ((a1, b1), c1) in &self.terms {
            for ((a2, b2), c2) in &o.terms {
                out.insert_add((a1 + a2, b1 + b2), c1.mul(c2));
            }
        }
        out
    }

    pub fn scale(&self, c: &ComplexRat) -> Self {
        let mut out = Self::zero();
        for (k, v) in &self.terms {
            out.insert_add(*k, v.mul(c));
        }
        out
    }

    /// Complex conjugation as a function: swaps `z^a zbar^b` with
    /// `z^b zbar^a` and conjugates the coefficient.
    pub fn conj(&self) -> Self {
        let mut out = Self::zero();
        for (&(a, b), c) in &self.terms {
            out.insert_add((b, a), c.conj());
        }
        out
    }

    /// Substitute `z -> z + delta` (and `zbar -> zbar + conj(delta)`).
    pub fn shift(&self, delta: &ComplexRat) -> Self {
        let deltabar = delta.conj();
        let mut out = Self::zero();
        for (&(a, b), c) in &self.terms {
            // (z + d)^a = sum_j C(a,j) d^(a-j) z^j, likewise for zbar.
            let mut dz = vec![ComplexRat::one()];
            for _ in 0..a {
                let last = dz.last().unwrap().mul(delta);
                dz.push(last);
            }
            let mut dzb = vec![ComplexRat::one()];
            for _ in 0..b {
                let last = dzb.last().unwrap().mul(&deltabar);
                dzb.push(last);
            }
            for j in 0..=a {
                for l in 0..=b {
                    let w = ComplexRat::new(
                        Rat::from_integer(binomial(a, j) * binomial(b, l)),
                        Rat::zero(),
                    );
                    let coeff = c.mul(&w).mul(&dz[(a - j) as usize]).mul(&dzb[(b - l) as usize]);
                    out.insert_add((j, l), coeff);
                }
            }
        }
        out
    }

    /// Lattice Laplacian on `Z + iZ` as a pair polynomial.
    pub fn discrete_laplacian_poly(&self) -> Self {
        let four = ComplexRat::from_int(4, 0);
        self.shift(&ComplexRat::from_int(1, 0))
            .add(&self.shift(&ComplexRat::from_int(-1, 0)))
            .add(&self.shift(&ComplexRat::from_int(0, 1)))
            .add(&self.shift(&ComplexRat::from_int(0, -1)))
            .sub(&self.scale(&four))
    }

    pub fn is_discrete_harmonic(&self) -> bool {
        self.discrete_laplacian_poly().is_zero()
    }

    /// Exact evaluation at the Gaussian integer `x + iy`.
    pub fn eval_gauss_exact(&self, x: i64, y: i64) -> ComplexRat {
        let z = ComplexRat::from_int(x, y);
        let zb = ComplexRat::from_int(x, -y);
        let max_a = self.terms.keys().map(|k| k.0).max().unwrap_or(0);
        let max_b = self.terms.keys().map(|k| k.1).max().unwrap_or(0);
        let mut zp = vec![ComplexRat::one()];
        for _ in 0..max_a {
            let last = zp.last().unwrap().mul(&z);
            zp.push(last);
        }
        let mut zbp = vec![ComplexRat::one()];
        for _ in 0..max_b {
            let last = zbp.last().unwrap().mul(&zb);
            zbp.push(last);
        }
        let mut acc = ComplexRat::zero();
        for (&(a, b), c) in &self.terms {
            acc = acc.add(&c.mul(&zp[a as usize]).mul(&zbp[b as usize]));
        }
        acc
    }

    /// Floating-point evaluation at `x + iy`.
    pub fn eval_f64(&self, x: f64, y: f64) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (&(a, b), c) in &self.terms {
            let (mut zr, mut zi) = (1.0, 0.0);
            for _ in 0..a {
                let nr = zr * x - zi * y;
                zi = zr * y + zi * x;
                zr = nr;
            }
            for _ in 0..b {
                let nr = zr * x + zi * y;
                zi = -zr * y + zi * x;
                zr = nr;
            }
            let (cr, ci) = c.to_f64();
            re += cr * zr - ci * zi;
            im += cr * zi + ci * zr;
        }
        (re, im)
    }

    /// Convert a polynomial given in real coordinates (`u + i v`, with `u`
    /// and `v` two-variable polynomials in `x`, `y`) to the `z, zbar`
    /// representation via `x = (z + zbar)/2`, `y = (z - zbar)/(2i)`.
    pub fn from_real_pair(u: &ExactPolynomial, v: &ExactPolynomial) -> Self {
        assert_eq!(u.dim(), 2);
        assert_eq!(v.dim(), 2);
        let half = rat(1, 2);
        // X = (z + zbar)/2
        let x_poly = Self::monomial(1, 0, ComplexRat::new(half.clone(), Rat::zero())).add(
            &Self::monomial(0, 1, ComplexRat::new(half.clone(), Rat::zero())),
        );
        // Y = -i (z - zbar)/2
        let y_poly = Self::monomial(1, 0, ComplexRat::new(Rat::zero(), -half.clone())).add(
            &Self::monomial(0, 1, ComplexRat::new(Rat::zero(), half)),
        );
        let mut out = Self::zero();
        let max_x = u
            .terms()
            .chain(v.terms())
            .map(|(e, _)| e[0])
            .max()
            .unwrap_or(0);
        let max_y = u
            .terms()
            .chain(v.terms())
            .map(|(e, _)| e[1])
            .max()
            .unwrap_or(0);
        let mut xp = vec![Self::one()];
        for _ in 0..max_x {
            let last = xp.last().unwrap().mul(&x_poly);
            xp.push(last);
        }
        let mut yp = vec![Self::one()];
        for _ in 0..max_y {
            let last = yp.last().unwrap().mul(&y_poly);
            yp.push(last);
        }
        for (unit, poly) in [(ComplexRat::one(), u), (ComplexRat::from_int(0, 1), v)] {
            for (e, c) in poly.terms() {
                let coeff = unit.mul(&ComplexRat::new(c.clone(), Rat::zero()));
                let term = xp[e[0] as usize].mul(&yp[e[1] as usize]).scale(&coeff);
                out = out.add(&term);
            }
        }
        out
    }
}

/// Real and imaginary parts of `(x_i + i x_j)^k` as polynomials in `dim`
/// variables.
pub fn zk_real_imag(dim: usize, i: usize, j: usize, k: u32) -> (ExactPolynomial, ExactPolynomial) {
    let mut re = ExactPolynomial::zero(dim);
    let mut im = ExactPolynomial::zero(dim);
    for l in 0..=k {
        let b = Rat::from_integer(binomial(k, l));
        let mut exps = vec![0; dim];
        exps[i] = k - l;
        exps[j] = l;
        // i^l cycles 1, i, -1, -i
        match l % 4 {
            0 => re.insert_add(exps, b),
            1 => im.insert_add(exps, b),
            2 => re.insert_add(exps, -b),
            _ => im.insert_add(exps, -b),
        }
    }
    (re, im)
}

/// The discrete harmonic polynomials `p_k` on `Z + iZ`.
///
/// `p_0 = 1`; for `k >= 1`, `p_k = Xi[z^k] - Xi[z^k](0)`; for negative
/// indices `p_{-k} = conj(p_k)`.  The sequence begins
/// `1, z, z^2, z^3 - zbar/4, z^4 - z zbar, ...`.
pub fn discrete_zk(k: i64) -> ComplexPairPolynomial {
    if k == 0 {
        return ComplexPairPolynomial::one();
    }
    if k < 0 {
        return discrete_zk(-k).conj();
    }
    let (re, im) = zk_real_imag(2, 0, 1, k as u32);
    let q = ComplexPairPolynomial::from_real_pair(&xi_transform(&re), &xi_transform(&im));
    let q0 = q.coeff(0, 0);
    q.sub(&ComplexPairPolynomial::constant(q0))
}

// ---------------------------------------------------------------------------
// Horner evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum HornerNode {
    Leaf(f64),
    Branch { var: usize, coeffs: Vec<HornerNode> },
}

impl HornerNode {
    fn build(terms: &[(Vec<u32>, f64)], var: usize, dim: usize) -> Self {
        if terms.is_empty() {
            return HornerNode::Leaf(0.0);
        }
        if var == dim {
            return HornerNode::Leaf(terms.iter().map(|t| t.1).sum());
        }
        let top = terms.iter().map(|(e, _)| e[var]).max().unwrap_or(0);
        let mut coeffs = Vec::with_capacity(top as usize + 1);
        for p in 0..=top {
            let sub: Vec<(Vec<u32>, f64)> = terms
                .iter()
                .filter(|(e, _)| e[var] == p)
                .cloned()
                .collect();
            coeffs.push(HornerNode::build(&sub, var + 1, dim));
        }
        HornerNode::Branch { var, coeffs }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            HornerNode::Leaf(c) => *c,
            HornerNode::Branch { var, coeffs } => {
                let mut acc = 0.0;
                for node in coeffs.iter().rev() {
                    acc = acc * x[*var] + node.eval(x);
                }
                acc
            }
        }
    }
}

/// Compiled `f64` evaluator: coefficients converted once, evaluation by
/// Horner's rule per variable on the expanded form.
#[derive(Debug, Clone)]
pub struct PolyEvaluator {
    dim: usize,
    root: HornerNode,
}

impl PolyEvaluator {
    pub fn new(poly: &ExactPolynomial) -> Self {
        let terms = poly.to_f64_terms();
        Self {
            dim: poly.dim(),
            root: HornerNode::build(&terms, 0, poly.dim()),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.root.eval(x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

// ---------------------------------------------------------------------------
// Mesh rescaling
// ---------------------------------------------------------------------------

/// A discrete harmonic polynomial on the mesh `(1/m) Z^d`, represented by
/// its base polynomial on `Z^d` with the evaluation rule
/// `psi_(m)(x) = m^(-k) psi1(m x)`.
#[derive(Debug, Clone)]
pub struct MeshPolynomial {
    base: ExactPolynomial,
    mesh: u32,
    degree: u32,
    evaluator: PolyEvaluator,
    scale: f64,
    origin: f64,
}

/// Wrap `psi1` (a discrete harmonic polynomial on `Z^d` of the given
/// degree) as a polynomial on the mesh `(1/m) Z^d`.
pub fn rescale_to_mesh(psi1: ExactPolynomial, m: u32, degree: u32) -> MeshPolynomial {
    assert!(m >= 1);
    let evaluator = PolyEvaluator::new(&psi1);
    let scale = (m as f64).powi(-(degree as i32));
    let origin = psi1
        .constant_term()
        .to_f64()
        .expect("constant term fits f64")
        * scale;
    MeshPolynomial {
        base: psi1,
        mesh: m,
        degree,
        evaluator,
        scale,
        origin,
    }
}

/// Convenience: apply the factorial map to a harmonic polynomial and put
/// the image on the mesh `(1/m) Z^d`.
pub fn mesh_from_harmonic(psi: &ExactPolynomial, m: u32) -> MeshPolynomial {
    let degree = psi.degree();
    rescale_to_mesh(xi_transform(psi), m, degree)
}

impl MeshPolynomial {
    pub fn base(&self) -> &ExactPolynomial {
        &self.base
    }

    pub fn mesh(&self) -> u32 {
        self.mesh
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// `psi_(m)(x/m)` for a lattice point `x` of `Z^d`; this is the value
    /// the growth observables sum over cluster sites.
    #[inline]
    pub fn eval_lattice(&self, x: &[f64]) -> f64 {
        self.scale * self.evaluator.eval(x)
    }

    /// `psi_(m)(y)` for an arbitrary point `y` (mesh points are `x/m`).
    pub fn eval(&self, y: &[f64]) -> f64 {
        let scaled: Vec<f64> = y.iter().map(|v| v * self.mesh as f64).collect();
        self.scale * self.evaluator.eval(&scaled)
    }

    /// `psi_(m)(0)`.
    #[inline]
    pub fn at_origin(&self) -> f64 {
        self.origin
    }

    /// Exact value of `psi_(m)(x/m)` at a lattice point of `Z^d`.
    pub fn eval_lattice_exact(&self, x: &[i64]) -> Rat {
        let mk = Rat::from_integer(BigInt::from(self.mesh).pow(self.degree));
        self.base.eval_lattice_exact(x) / mk
    }
}

// ---------------------------------------------------------------------------
// Harmonic generator families
// ---------------------------------------------------------------------------

fn zonal_3d(l: u32) -> ExactPolynomial {
    // Integer multiples of the solid zonal harmonics r^l P_l(x3/r).
    let z = ExactPolynomial::variable(3, 2);
    let r2 = ExactPolynomial::variable(3, 0)
        .pow(2)
        .add(&ExactPolynomial::variable(3, 1).pow(2))
        .add(&z.pow(2));
    let c = |n: i64| ExactPolynomial::constant(3, rat_int(n));
    match l {
        1 => z,
        2 => z.pow(2).scale(&rat_int(3)).sub(&r2),
        3 => z.pow(3).scale(&rat_int(5)).sub(&z.mul(&r2).scale(&rat_int(3))),
        4 => z
            .pow(4)
            .scale(&rat_int(35))
            .sub(&z.pow(2).mul(&r2).scale(&rat_int(30)))
            .add(&r2.pow(2).scale(&rat_int(3))),
        5 => z
            .pow(5)
            .scale(&rat_int(63))
            .sub(&z.pow(3).mul(&r2).scale(&rat_int(70)))
            .add(&z.mul(&r2.pow(2)).scale(&rat_int(15))),
        6 => z
            .pow(6)
            .scale(&rat_int(231))
            .sub(&z.pow(4).mul(&r2).scale(&rat_int(315)))
            .add(&z.pow(2).mul(&r2.pow(2)).scale(&rat_int(105)))
            .sub(&r2.pow(3).scale(&rat_int(5))),
        _ => c(0),
    }
}

fn tesseral_3d() -> Vec<ExactPolynomial> {
    let x = ExactPolynomial::variable(3, 0);
    let y = ExactPolynomial::variable(3, 1);
    let z = ExactPolynomial::variable(3, 2);
    let r2 = x.pow(2).add(&y.pow(2)).add(&z.pow(2));
    vec![
        // degree 2
        x.mul(&y),
        y.mul(&z),
        x.mul(&z),
        // degree 3
        x.mul(&z.pow(2).scale(&rat_int(4)).sub(&x.pow(2)).sub(&y.pow(2))),
        y.mul(&z.pow(2).scale(&rat_int(4)).sub(&x.pow(2)).sub(&y.pow(2))),
        z.mul(&x.pow(2).sub(&y.pow(2))),
        x.mul(&y).mul(&z),
        // degree 4
        x.mul(&z).mul(&z.pow(2).scale(&rat_int(7)).sub(&r2.scale(&rat_int(3)))),
        y.mul(&z).mul(&z.pow(2).scale(&rat_int(7)).sub(&r2.scale(&rat_int(3)))),
        x.pow(2).sub(&y.pow(2)).mul(&z.pow(2).scale(&rat_int(7)).sub(&r2)),
        x.mul(&y).mul(&z.pow(2).scale(&rat_int(7)).sub(&r2)),
        x.mul(&z).mul(&x.pow(2).sub(&y.pow(2).scale(&rat_int(3)))),
        y.mul(&z).mul(&x.pow(2).scale(&rat_int(3)).sub(&y.pow(2))),
    ]
}

fn zonal_4d(l: u32) -> ExactPolynomial {
    // r^l U_l(x4/r) with U the Chebyshev polynomials of the second kind;
    // these are the zonal harmonics for d = 4.
    let w = ExactPolynomial::variable(4, 3);
    let mut r2 = ExactPolynomial::zero(4);
    for i in 0..4 {
        r2 = r2.add(&ExactPolynomial::variable(4, i).pow(2));
    }
    match l {
        1 => w.scale(&rat_int(2)),
        2 => w.pow(2).scale(&rat_int(4)).sub(&r2),
        3 => w.pow(3).scale(&rat_int(8)).sub(&w.mul(&r2).scale(&rat_int(4))),
        4 => w
            .pow(4)
            .scale(&rat_int(16))
            .sub(&w.pow(2).mul(&r2).scale(&rat_int(12)))
            .add(&r2.pow(2)),
        5 => w
            .pow(5)
            .scale(&rat_int(32))
            .sub(&w.pow(3).mul(&r2).scale(&rat_int(32)))
            .add(&w.mul(&r2.pow(2)).scale(&rat_int(6))),
        6 => w
            .pow(6)
            .scale(&rat_int(64))
            .sub(&w.pow(4).mul(&r2).scale(&rat_int(80)))
            .add(&w.pow(2).mul(&r2.pow(2)).scale(&rat_int(24)))
            .sub(&r2.pow(3)),
        _ => ExactPolynomial::zero(4),
    }
}

/// Harmonic polynomial generators up to `max_degree`, per dimension:
/// real and imaginary parts of `z^k` for `d = 2`, solid spherical
/// harmonics with integer coefficients for `d = 3`, and pair products
/// plus zonal polynomials for `d = 4`.
pub fn harmonic_basis(d: usize, max_degree: u32) -> Vec<ExactPolynomial> {
    let mut out = vec![ExactPolynomial::one(d)];
    match d {
        2 => {
            for k in 1..=max_degree {
                let (re, im) = zk_real_imag(2, 0, 1, k);
                out.push(re);
                out.push(im);
            }
        }
        3 => {
            for k in 1..=max_degree {
                let (re, im) = zk_real_imag(3, 0, 1, k);
                out.push(re);
                out.push(im);
            }
            for l in 1..=max_degree.min(6) {
                out.push(zonal_3d(l));
            }
            for p in tesseral_3d() {
                if p.degree() <= max_degree {
                    out.push(p);
                }
            }
        }
        4 => {
            for k in 1..=max_degree {
                let (re, im) = zk_real_imag(4, 0, 1, k);
                out.push(re);
                out.push(im);
                let (re2, im2) = zk_real_imag(4, 2, 3, k);
                out.push(re2);
                out.push(im2);
            }
            // Products of harmonics in disjoint coordinate pairs are
            // harmonic: the cross gradient terms vanish.
            for a in 1..=max_degree.saturating_sub(1) {
                for b in 1..=(max_degree - a).min(a) {
                    let (ra, _) = zk_real_imag(4, 0, 1, a);
                    let (rb, ib) = zk_real_imag(4, 2, 3, b);
                    out.push(ra.mul(&rb));
                    out.push(ra.mul(&ib));
                }
            }
            for l in 1..=max_degree.min(6) {
                out.push(zonal_4d(l));
            }
        }
        _ => panic!("harmonic_basis supports d in {{2, 3, 4}}"),
    }
    out.retain(|p| !p.is_zero());
    out
}

// ---------------------------------------------------------------------------
// JSON serialization: lists of (exponent-vector, numerator, denominator).
// ---------------------------------------------------------------------------

pub fn exact_poly_to_json(p: &ExactPolynomial) -> serde_json::Value {
    let terms: Vec<serde_json::Value> = p
        .terms()
        .map(|(e, c)| {
            serde_json::json!({
                "exponents": e,
                "numerator": c.numer().to_string(),
                "denominator": c.denom().to_string(),
            })
        })
        .collect();
    serde_json::json!({ "dimension": p.dim(), "terms": terms })
}

pub fn exact_poly_from_json(v: &serde_json::Value) -> Result<ExactPolynomial> {
    let dim = v["dimension"]
        .as_u64()
        .ok_or_else(|| Error::InvalidConfig("polynomial JSON missing dimension".into()))?
        as usize;
    let mut p = ExactPolynomial::zero(dim);
    let terms = v["terms"]
        .as_array()
        .ok_or_else(|| Error::InvalidConfig("polynomial JSON missing terms".into()))?;
    for t in terms {
        let exps: Vec<u32> = t["exponents"]
            .as_array()
            .ok_or_else(|| Error::InvalidConfig("term missing exponents".into()))?
            .iter()
            .map(|x| x.as_u64().unwrap_or(0) as u32)
            .collect();
        if exps.len() != dim {
            return Err(Error::InvalidConfig("exponent vector length mismatch".into()));
        }
        let num: BigInt = t["numerator"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidConfig("bad numerator".into()))?;
        let den: BigInt = t["denominator"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidConfig("bad denominator".into()))?;
        if den.is_zero() {
            return Err(Error::InvalidConfig("zero denominator".into()));
        }
        p.insert_add(exps, Rat::new(num, den));
    }
    Ok(p)
}

pub fn pair_poly_to_json(p: &ComplexPairPolynomial) -> serde_json::Value {
    let terms: Vec<serde_json::Value> = p
        .terms()
        .map(|(&(a, b), c)| {
            serde_json::json!({
                "exponents": [a, b],
                "re_numerator": c.re.numer().to_string(),
                "re_denominator": c.re.denom().to_string(),
                "im_numerator": c.im.numer().to_string(),
                "im_denominator": c.im.denom().to_string(),
            })
        })
        .collect();
    serde_json::json!({ "monomials": "z^a zbar^b", "terms": terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pk_expected_2() -> ExactPolynomial {
        // x^2 - 1/4
        ExactPolynomial::monomial(1, vec![2], Rat::one())
            .add(&ExactPolynomial::constant(1, rat(-1, 4)))
    }

    #[test]
    fn symmetric_factorial_small_cases() {
        assert_eq!(symmetric_factorial_poly(0), ExactPolynomial::one(1));
        assert_eq!(symmetric_factorial_poly(1), ExactPolynomial::variable(1, 0));
        // k=2: (x - 1/2)(x + 1/2) = x^2 - 1/4
        assert_eq!(symmetric_factorial_poly(2), pk_expected_2());
        // k=3: (x-1) x (x+1) = x^3 - x
        let p3 = symmetric_factorial_poly(3);
        let expected = ExactPolynomial::monomial(1, vec![3], Rat::one())
            .add(&ExactPolynomial::monomial(1, vec![1], -Rat::one()));
        assert_eq!(p3, expected);
    }

    #[test]
    fn pk_parity_and_degree_drop() {
        for k in 0..=12u32 {
            let p = symmetric_factorial_poly(k);
            for (e, _) in p.terms() {
                assert_eq!(e[0] % 2, k % 2, "P_{k} parity");
            }
            let xk = ExactPolynomial::monomial(1, vec![k], Rat::one());
            let diff = p.sub(&xk);
            assert!(diff.is_zero() || diff.degree() + 2 <= k.max(2));
        }
    }

    #[test]
    fn second_difference_identity_up_to_12() {
        // D^2 P_k = k (k-1) P_{k-2} as an exact polynomial identity.
        for k in 2..=12u32 {
            let lhs = symmetric_factorial_poly(k).second_difference(0);
            let rhs = symmetric_factorial_poly(k - 2).scale(&rat_int((k * (k - 1)) as i64));
            assert_eq!(lhs, rhs, "D^2 P_{k}");
        }
    }

    #[test]
    fn xi_examples() {
        let x = ExactPolynomial::variable(2, 0);
        assert_eq!(xi_transform(&x), x);
        let x2 = ExactPolynomial::monomial(1, vec![2], Rat::one());
        assert_eq!(xi_transform(&x2), pk_expected_2());

        // Xi[x^3 - 3 x y^2] = P_3(x) - 3 x (y^2 - 1/4)
        let (re3, _) = zk_real_imag(2, 0, 1, 3);
        let img = xi_transform(&re3);
        // expanded: x^3 - 3 x y^2 - x/4
        let mut expected = ExactPolynomial::zero(2);
        expected.insert_add(vec![3, 0], Rat::one());
        expected.insert_add(vec![1, 2], rat_int(-3));
        expected.insert_add(vec![1, 0], rat(-1, 4));
        assert_eq!(img, expected);
    }

    #[test]
    fn xi_is_linear() {
        let (a, _) = zk_real_imag(2, 0, 1, 4);
        let (_, b) = zk_real_imag(2, 0, 1, 3);
        let combo = a.scale(&rat(2, 3)).add(&b.scale(&rat(-5, 7)));
        let lhs = xi_transform(&combo);
        let rhs = xi_transform(&a)
            .scale(&rat(2, 3))
            .add(&xi_transform(&b).scale(&rat(-5, 7)));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn xi_degree_drop_for_harmonics() {
        for d in [2usize, 3, 4] {
            for psi in harmonic_basis(d, 6) {
                let diff = psi.sub(&xi_transform(&psi));
                assert!(
                    diff.is_zero() || diff.degree() + 2 <= psi.degree(),
                    "degree drop failed in d={d} for degree {}",
                    psi.degree()
                );
            }
        }
    }

    #[test]
    fn harmonic_basis_is_harmonic() {
        for d in [2usize, 3, 4] {
            let basis = harmonic_basis(d, 6);
            assert!(basis.len() > 10);
            for psi in basis {
                assert!(psi.is_harmonic(), "non-harmonic generator in d={d}: {psi:?}");
            }
        }
    }

    #[test]
    fn xi_images_are_discrete_harmonic_symbolically() {
        for d in [2usize, 3, 4] {
            for psi in harmonic_basis(d, 6) {
                let img = xi_transform(&psi);
                assert!(
                    img.discrete_laplacian_poly().is_zero(),
                    "discrete Laplacian nonzero in d={d}"
                );
            }
        }
    }

    #[test]
    fn pk_sequence_matches_printed_values() {
        // 1, z, z^2, z^3 - zbar/4, z^4 - z zbar
        assert_eq!(discrete_zk(0), ComplexPairPolynomial::one());
        assert_eq!(
            discrete_zk(1),
            ComplexPairPolynomial::monomial(1, 0, ComplexRat::one())
        );
        assert_eq!(
            discrete_zk(2),
            ComplexPairPolynomial::monomial(2, 0, ComplexRat::one())
        );
        let p3 = ComplexPairPolynomial::monomial(3, 0, ComplexRat::one()).add(
            &ComplexPairPolynomial::monomial(0, 1, ComplexRat::new(rat(-1, 4), Rat::zero())),
        );
        assert_eq!(discrete_zk(3), p3);
        let p4 = ComplexPairPolynomial::monomial(4, 0, ComplexRat::one()).add(
            &ComplexPairPolynomial::monomial(1, 1, ComplexRat::new(rat_int(-1), Rat::zero())),
        );
        assert_eq!(discrete_zk(4), p4);
    }

    #[test]
    fn pk_negative_is_conjugate_and_vanishes_at_origin() {
        for k in 1..=8i64 {
            let p = discrete_zk(k);
            assert_eq!(discrete_zk(-k), p.conj());
            assert!(p.coeff(0, 0).is_zero(), "p_{k}(0) != 0");
            assert!(p.is_discrete_harmonic(), "p_{k} not discrete harmonic");
        }
    }

    #[test]
    fn discrete_laplacian_point_examples() {
        // f = x^2 at the origin: second difference is 2.
        let x2 = ExactPolynomial::monomial(2, vec![2, 0], Rat::one());
        assert_eq!(discrete_laplacian_at(&x2, &[0, 0]), rat_int(2));

        // p_3 is discrete harmonic everywhere.
        let p3 = discrete_zk(3);
        for (x, y) in [(0, 0), (1, 0), (2, -3), (-7, 5), (11, 13)] {
            let mut acc = ComplexRat::zero();
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                acc = acc.add(&p3.eval_gauss_exact(x + dx, y + dy));
            }
            acc = acc.add(
                &p3.eval_gauss_exact(x, y)
                    .mul(&ComplexRat::from_int(-4, 0)),
            );
            assert!(acc.is_zero(), "p_3 Laplacian at ({x},{y})");
        }

        // f = z^4 at z = 1: neighbor sum gives 4, using (1 +/- i)^4 = -4.
        let z4 = ComplexPairPolynomial::monomial(4, 0, ComplexRat::one());
        let mut acc = ComplexRat::zero();
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            acc = acc.add(&z4.eval_gauss_exact(1 + dx, dy));
        }
        acc = acc.add(&z4.eval_gauss_exact(1, 0).mul(&ComplexRat::from_int(-4, 0)));
        assert_eq!(acc, ComplexRat::from_int(4, 0));
    }

    #[test]
    fn mesh_identity_at_m1_and_exact_z2() {
        let (re2, _) = zk_real_imag(2, 0, 1, 2);
        let mesh = mesh_from_harmonic(&re2, 1);
        // Xi[z^2] = z^2, so the mesh polynomial is exact for every m.
        for m in [1u32, 4, 16] {
            let mesh_m = mesh_from_harmonic(&re2, m);
            for (x, y) in [(3i64, 5i64), (-2, 7), (10, -10)] {
                let exact = (x * x - y * y) as f64 / (m as f64 * m as f64);
                let got = mesh_m.eval_lattice(&[x as f64, y as f64]);
                assert!((got - exact).abs() < 1e-12);
            }
        }
        assert_eq!(mesh.mesh(), 1);
        assert_eq!(mesh.at_origin(), 0.0);
    }

    #[test]
    fn mesh_z3_has_quarter_m2_correction() {
        // psi = Re z^3 -> psi_(m)(x/m) = Re[(x/m)^3 - (1/(4 m^2)) conj(x/m)]
        let (re3, _) = zk_real_imag(2, 0, 1, 3);
        for m in [1u32, 2, 5, 8] {
            let mesh = mesh_from_harmonic(&re3, m);
            let mf = m as f64;
            for (x, y) in [(4i64, -3i64), (7, 2), (-5, -6)] {
                let (zx, zy) = (x as f64 / mf, y as f64 / mf);
                let re_z3 = zx * zx * zx - 3.0 * zx * zy * zy;
                let expected = re_z3 - (zx) / (4.0 * mf * mf) * 1.0 - 0.0 * zy;
                let got = mesh.eval_lattice(&[x as f64, y as f64]);
                assert!(
                    (got - expected).abs() < 1e-12,
                    "m={m} x={x} y={y}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn mesh_converges_quadratically() {
        // |psi_(m)(x) - psi(x)| = O(1/m^2) on bounded sets.
        let (re4, _) = zk_real_imag(2, 0, 1, 4);
        let ev = PolyEvaluator::new(&re4);
        let mut errs = Vec::new();
        for m in [4u32, 8, 16, 32] {
            let mesh = mesh_from_harmonic(&re4, m);
            let mut worst: f64 = 0.0;
            for i in -10..=10 {
                for j in -10..=10 {
                    let y = [i as f64 / 10.0, j as f64 / 10.0];
                    let err = (mesh.eval(&y) - ev.eval(&y)).abs();
                    worst = worst.max(err);
                }
            }
            errs.push(worst);
        }
        // Successive doubling of m should cut the error by about 4.
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.0 && ratio < 5.0, "ratios {errs:?}");
        }
    }

    #[test]
    fn pk_close_to_zk_with_exponent_k_minus_2() {
        // |p_k(z) - z^k| <= C |z|^(k-2): fit the growth exponent on
        // |z| in [10, 1000].
        for k in 2..=6i64 {
            let p = discrete_zk(k);
            let zk = ComplexPairPolynomial::monomial(k as u32, 0, ComplexRat::one());
            let diff = p.sub(&zk);
            let radii = [10.0, 31.6, 100.0, 316.0, 1000.0];
            let mut maxima = Vec::new();
            for &r in &radii {
                let mut worst: f64 = 0.0;
                for step in 0..64 {
                    let th = step as f64 / 64.0 * std::f64::consts::TAU;
                    let (dr, di) = diff.eval_f64(r * th.cos(), r * th.sin());
                    worst = worst.max((dr * dr + di * di).sqrt());
                }
                maxima.push(worst.max(1e-300));
            }
            let slope = (maxima.last().unwrap().ln() - maxima[0].ln())
                / (radii.last().unwrap().ln() - radii[0].ln());
            assert!(
                slope <= (k - 2) as f64 + 0.05,
                "p_{k} difference grows like r^{slope}"
            );
        }
    }

    #[test]
    fn horner_matches_exact_evaluation() {
        for d in [2usize, 3, 4] {
            for psi in harmonic_basis(d, 5) {
                let ev = PolyEvaluator::new(&psi);
                let pts: Vec<Vec<i64>> = vec![
                    vec![1; d],
                    (0..d as i64).map(|i| 3 - 2 * i).collect(),
                    (0..d as i64).map(|i| -4 + i).collect(),
                ];
                for p in pts {
                    let exact = psi.eval_lattice_exact(&p).to_f64().unwrap();
                    let xs: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                    let approx = ev.eval(&xs);
                    assert!(
                        (exact - approx).abs() <= 1e-9 * (1.0 + exact.abs()),
                        "d={d} point {p:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let (re3, _) = zk_real_imag(2, 0, 1, 3);
        let p = xi_transform(&re3);
        let json = exact_poly_to_json(&p);
        let back = exact_poly_from_json(&json).unwrap();
        assert_eq!(p, back);
    }
}
