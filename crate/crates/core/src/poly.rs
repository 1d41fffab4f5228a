//! Exact polynomial scalars for cohomology coefficients.
//!
//! * `CoefficientRing` fixes a list of named generators with grading weights
//!   (equivariant parameters, the twist parameter, or nothing at all)
//! * `Poly` is a sparse exact-rational polynomial in those generators;
//!   exponents are signed so Laurent monomials in a single generator can be
//!   carried through intermediate twist computations
//! * `PolyMatrix` is the square-matrix layer used for divisor actions

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

/// Names and grading weights of the scalar generators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoefficientRing {
    pub names: Vec<String>,
    pub weights: Vec<BigRational>,
}

impl CoefficientRing {
    /// Plain rationals: no generators.
    pub fn rational() -> Self {
        CoefficientRing { names: Vec::new(), weights: Vec::new() }
    }

    /// Generators `chi1..chir` of weight 1 (equivariant parameters).
    pub fn equivariant(r: usize) -> Self {
        CoefficientRing {
            names: (1..=r).map(|i| format!("chi{i}")).collect(),
            weights: vec![BigRational::one(); r],
        }
    }

    pub fn new(names: Vec<String>, weights: Vec<BigRational>) -> Self {
        assert_eq!(names.len(), weights.len());
        CoefficientRing { names, weights }
    }

    pub fn nvars(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Sparse exact polynomial; keys are exponent vectors of the ring's arity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Poly {
    pub terms: BTreeMap<Vec<i64>, BigRational>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly { terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(vec![0; nvars], c);
        }
        Poly { terms }
    }

    pub fn one(nvars: usize) -> Self {
        Poly::constant(nvars, BigRational::one())
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(e, BigRational::one());
        Poly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The coefficient of the constant monomial.
    pub fn constant_part(&self) -> BigRational {
        self.terms
            .iter()
            .find(|(e, _)| e.iter().all(|&x| x == 0))
            .map(|(_, c)| c.clone())
            .unwrap_or_else(BigRational::zero)
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.terms.is_empty() {
            return Some(BigRational::zero());
        }
        if self.terms.len() == 1 {
            let (e, c) = self.terms.iter().next().unwrap();
            if e.iter().all(|&x| x == 0) {
                return Some(c.clone());
            }
        }
        None
    }

    fn insert(&mut self, e: Vec<i64>, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(e).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            let key = self
                .terms
                .iter()
                .find(|(_, v)| v.is_zero())
                .map(|(k, _)| k.clone())
                .unwrap();
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.insert(e.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Poly {
        Poly {
            terms: self.terms.iter().map(|(e, c)| (e.clone(), -c.clone())).collect(),
        }
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<i64> = ea.iter().zip(eb.iter()).map(|(a, b)| a + b).collect();
                out.insert(e, ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Poly {
        if self.terms.is_empty() && k == 0 {
            // 0^0 with unknown arity: treat as the empty-arity unit.
            return Poly::constant(0, BigRational::one());
        }
        let nvars = self.terms.keys().next().map(|e| e.len()).unwrap_or(0);
        let mut out = Poly::one(nvars);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Multiply by `generator(var)^k`; `k` may be negative.
    pub fn mul_var_pow(&self, var: usize, k: i64) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let mut e2 = e.clone();
                    e2[var] += k;
                    (e2, c.clone())
                })
                .collect(),
        }
    }

    /// Smallest exponent of `var` across terms (None when zero).
    pub fn min_exponent(&self, var: usize) -> Option<i64> {
        self.terms.keys().map(|e| e[var]).min()
    }

    /// Reinterpret in a larger ring whose leading variables are this ring's.
    pub fn pad_vars(&self, nvars: usize) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    assert!(e.len() <= nvars);
                    let mut e2 = e.clone();
                    e2.resize(nvars, 0);
                    (e2, c.clone())
                })
                .collect(),
        }
    }

    /// Substitute 0 for `var`; terms with negative exponent make this
    /// undefined and are reported.
    pub fn substitute_zero(&self, var: usize) -> Result<Poly, i64> {
        if let Some(min) = self.min_exponent(var) {
            if min < 0 {
                return Err(min);
            }
        }
        Ok(Poly {
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e[var] == 0)
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        })
    }

    /// Drop a variable from the ring; every term must have exponent 0 there.
    pub fn remove_var(&self, var: usize) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    assert_eq!(e[var], 0, "variable {var} still occurs");
                    let mut e2 = e.clone();
                    e2.remove(var);
                    (e2, c.clone())
                })
                .collect(),
        }
    }

    /// Substitute an exact rational value for `var` (exponents must be ≥ 0).
    pub fn substitute(&self, var: usize, value: &BigRational) -> Result<Poly, i64> {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            if e[var] < 0 {
                return Err(e[var]);
            }
            let mut pow = BigRational::one();
            for _ in 0..e[var] {
                pow *= value;
            }
            let mut e2 = e.clone();
            e2[var] = 0;
            out.insert(e2, c * pow);
        }
        Ok(out)
    }

    /// The set of weighted monomial degrees appearing in this polynomial.
    pub fn weighted_degrees(&self, ring: &CoefficientRing) -> Vec<BigRational> {
        let mut out: Vec<BigRational> = self
            .terms
            .keys()
            .map(|e| {
                e.iter()
                    .zip(ring.weights.iter())
                    .map(|(&k, w)| BigRational::from_integer(BigInt::from(k)) * w)
                    .sum()
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Deterministic human-readable rendering, e.g. `3/2*kappa^2 - chi1`.
    pub fn render(&self, ring: &CoefficientRing) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut pieces = Vec::new();
        for (e, c) in &self.terms {
            let mut factors = Vec::new();
            for (i, &k) in e.iter().enumerate() {
                if k == 1 {
                    factors.push(ring.names[i].clone());
                } else if k != 0 {
                    factors.push(format!("{}^{}", ring.names[i], k));
                }
            }
            let coeff = crate::qnum::render_rational(c);
            let piece = if factors.is_empty() {
                coeff
            } else if c.is_one() {
                factors.join("*")
            } else if (-c.clone()).is_one() {
                format!("-{}", factors.join("*"))
            } else {
                format!("{}*{}", coeff, factors.join("*"))
            };
            pieces.push(piece);
        }
        let mut out = String::new();
        for (i, p) in pieces.iter().enumerate() {
            if i == 0 {
                out.push_str(p);
            } else if let Some(stripped) = p.strip_prefix('-') {
                out.push_str(" - ");
                out.push_str(stripped);
            } else {
                out.push_str(" + ");
                out.push_str(p);
            }
        }
        out
    }
}

/// Square matrix over `Poly`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyMatrix {
    pub dim: usize,
    pub data: Vec<Poly>,
}

impl PolyMatrix {
    pub fn zero(dim: usize) -> Self {
        PolyMatrix { dim, data: vec![Poly::zero(); dim * dim] }
    }

    pub fn from_rows(rows: Vec<Vec<Poly>>) -> Self {
        let dim = rows.len();
        assert!(rows.iter().all(|r| r.len() == dim));
        PolyMatrix { dim, data: rows.into_iter().flatten().collect() }
    }

    pub fn entry(&self, r: usize, c: usize) -> &Poly {
        &self.data[r * self.dim + c]
    }

    pub fn entry_mut(&mut self, r: usize, c: usize) -> &mut Poly {
        &mut self.data[r * self.dim + c]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|p| p.is_zero())
    }

    pub fn add(&self, other: &PolyMatrix) -> PolyMatrix {
        assert_eq!(self.dim, other.dim);
        PolyMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: &BigRational) -> PolyMatrix {
        PolyMatrix { dim: self.dim, data: self.data.iter().map(|p| p.scale(c)).collect() }
    }

    pub fn mat_mul(&self, other: &PolyMatrix) -> PolyMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = PolyMatrix::zero(self.dim);
        for r in 0..self.dim {
            for k in 0..self.dim {
                let a = self.entry(r, k);
                if a.is_zero() {
                    continue;
                }
                for c in 0..self.dim {
                    let b = other.entry(k, c);
                    if b.is_zero() {
                        continue;
                    }
                    let prod = a.mul(b);
                    let e = out.entry_mut(r, c);
                    *e = e.add(&prod);
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[Poly]) -> Vec<Poly> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                let mut acc = Poly::zero();
                for c in 0..self.dim {
                    let a = self.entry(r, c);
                    if !a.is_zero() && !v[c].is_zero() {
                        acc = acc.add(&a.mul(&v[c]));
                    }
                }
                acc
            })
            .collect()
    }

    pub fn commutes_with(&self, other: &PolyMatrix) -> bool {
        self.mat_mul(other) == other.mat_mul(self)
    }
}
