//! Truncated multivariate series with cohomology-valued coefficients.
//!
//! * keys are (rational Novikov exponent, extended-variable exponents,
//!   t-multi-order); values are finite z-Laurent maps into the algebra
//! * a shared context fixes the algebra, the scalar ring (which may extend
//!   the algebra's by twist parameters), the variable lists, and the
//!   truncation policy
//! * on top of the arithmetic: I-functions, z-asymptotics, condition-sharp
//!   checks, mirror maps, series reversion, J-functions, and quantum
//!   structure constants

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::cohomology::{AlgebraElement, ChenRuanAlgebra};
use crate::error::EngineError;
use crate::poly::{CoefficientRing, Poly, PolyMatrix};
use crate::qmat::{QMatrix, QVec};
use crate::qnum::{factorial, frac_part, is_integer, qi};
use crate::stackyfan::{ExtendedDegree, ExtendedStackyFan, Grading};
use crate::Result;

/// Which keys a series may store.
#[derive(Clone, Debug)]
pub struct TruncationPolicy {
    pub grading: Grading,
    pub cutoff: BigRational,
    pub max_t_order: u32,
    pub x_caps: Vec<Option<BigInt>>,
}

impl TruncationPolicy {
    pub fn new(
        grading: Grading,
        cutoff: BigRational,
        max_t_order: u32,
        x_caps: Vec<Option<BigInt>>,
    ) -> Self {
        TruncationPolicy { grading, cutoff, max_t_order, x_caps }
    }

    /// Grading value of a key's (q, x) part.
    pub fn key_grading(&self, key: &SeriesKey) -> BigRational {
        let q = &key.q;
        let mut acc = BigRational::zero();
        for (a, w) in q.iter().zip(self.grading.q_weights.iter()) {
            acc += a * w;
        }
        for (&e, w) in key.x.iter().zip(self.grading.x_weights.iter()) {
            acc += BigRational::from_integer(BigInt::from(e)) * w;
        }
        acc
    }

    pub fn admits(&self, key: &SeriesKey) -> bool {
        if key.t.iter().map(|&e| e as u64).sum::<u64>() > self.max_t_order as u64 {
            return false;
        }
        for (&e, cap) in key.x.iter().zip(self.x_caps.iter()) {
            if let Some(c) = cap {
                if &BigInt::from(e) > c {
                    return false;
                }
            }
        }
        self.key_grading(key) <= self.cutoff
    }
}

/// Monomial key of a series term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SeriesKey {
    pub q: Vec<BigRational>,
    pub x: Vec<u32>,
    pub t: Vec<u32>,
}

impl SeriesKey {
    pub fn zero(rank_l: usize, m: usize, n_t: usize) -> Self {
        SeriesKey {
            q: vec![BigRational::zero(); rank_l],
            x: vec![0; m],
            t: vec![0; n_t],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.q.iter().all(|a| a.is_zero())
            && self.x.iter().all(|&e| e == 0)
            && self.t.iter().all(|&e| e == 0)
    }

    pub fn t_order(&self) -> u32 {
        self.t.iter().sum()
    }

    pub fn add(&self, other: &SeriesKey) -> SeriesKey {
        SeriesKey {
            q: self.q.iter().zip(other.q.iter()).map(|(a, b)| a + b).collect(),
            x: self.x.iter().zip(other.x.iter()).map(|(a, b)| a + b).collect(),
            t: self.t.iter().zip(other.t.iter()).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Shared immutable context of a family of series.
#[derive(Clone, Debug)]
pub struct SeriesContext {
    pub algebra: Arc<ChenRuanAlgebra>,
    /// Scalar ring of stored coefficients; extends the algebra's ring.
    pub scalars: CoefficientRing,
    pub rank_l: usize,
    pub x_names: Vec<String>,
    pub t_count: usize,
    pub policy: TruncationPolicy,
    /// For composed series: the algebra basis index behind each x-variable.
    pub coordinate_dirs: Vec<usize>,
    /// Divisor actions with entries lifted into `scalars`.
    lifted_action: Vec<PolyMatrix>,
}

impl SeriesContext {
    pub fn new(
        algebra: Arc<ChenRuanAlgebra>,
        scalars: CoefficientRing,
        rank_l: usize,
        x_names: Vec<String>,
        t_count: usize,
        policy: TruncationPolicy,
    ) -> Result<Arc<Self>> {
        let base = &algebra.coeff;
        if scalars.names.len() < base.names.len()
            || scalars.names[..base.names.len()] != base.names[..]
        {
            return Err(EngineError::Construction(
                "series scalar ring must extend the algebra's coefficient ring".into(),
            ));
        }
        if policy.grading.q_weights.len() != rank_l
            || policy.grading.x_weights.len() != x_names.len()
            || policy.x_caps.len() != x_names.len()
        {
            return Err(EngineError::Construction(
                "truncation policy dimensions do not match the variable lists".into(),
            ));
        }
        let nv = scalars.nvars();
        let lifted_action = algebra
            .divisor_action
            .iter()
            .map(|m| PolyMatrix {
                dim: m.dim,
                data: m.data.iter().map(|p| p.pad_vars(nv)).collect(),
            })
            .collect();
        Ok(Arc::new(SeriesContext {
            algebra,
            scalars,
            rank_l,
            x_names,
            t_count,
            policy,
            coordinate_dirs: Vec::new(),
            lifted_action,
        }))
    }

    pub fn m(&self) -> usize {
        self.x_names.len()
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn zero_key(&self) -> SeriesKey {
        SeriesKey::zero(self.rank_l, self.m(), self.t_count)
    }

    /// Algebra element with all coordinates lifted into the scalar ring.
    pub fn lift(&self, a: &AlgebraElement) -> AlgebraElement {
        let nv = self.scalars.nvars();
        AlgebraElement { coords: a.coords.iter().map(|p| p.pad_vars(nv)).collect() }
    }

    pub fn unit(&self) -> AlgebraElement {
        self.lift(&self.algebra.unit())
    }

    pub fn sector_unit(&self, s: usize) -> AlgebraElement {
        self.lift(&self.algebra.sector_unit(s))
    }

    /// `u_i` acting in the lifted scalar ring.
    pub fn apply_divisor(&self, a: &AlgebraElement, i: usize) -> AlgebraElement {
        AlgebraElement { coords: self.lifted_action[i].apply(&a.coords) }
    }

    pub fn apply_divisor_combination(&self, a: &AlgebraElement, coeffs: &QVec) -> AlgebraElement {
        let mut out = AlgebraElement::zero(self.dim());
        for (i, c) in coeffs.iter().enumerate() {
            if !c.is_zero() {
                out = out.add(&self.apply_divisor(a, i).scale(c));
            }
        }
        out
    }

    fn compatible(&self, other: &SeriesContext) -> bool {
        std::ptr::eq(self, other)
            || (Arc::ptr_eq(&self.algebra, &other.algebra)
                && self.scalars == other.scalars
                && self.rank_l == other.rank_l
                && self.x_names == other.x_names
                && self.t_count == other.t_count)
    }
}

/// Algebra-valued truncated series.
#[derive(Clone, Debug)]
pub struct MultiSeries {
    pub ctx: Arc<SeriesContext>,
    pub terms: BTreeMap<SeriesKey, BTreeMap<i64, AlgebraElement>>,
}

/// Scalar-valued truncated series (coefficients in the scalar ring).
#[derive(Clone, Debug)]
pub struct ScalarSeries {
    pub ctx: Arc<SeriesContext>,
    pub terms: BTreeMap<SeriesKey, BTreeMap<i64, Poly>>,
}

impl PartialEq for MultiSeries {
    fn eq(&self, other: &Self) -> bool {
        self.ctx.compatible(&other.ctx) && self.terms == other.terms
    }
}

impl PartialEq for ScalarSeries {
    fn eq(&self, other: &Self) -> bool {
        self.ctx.compatible(&other.ctx) && self.terms == other.terms
    }
}

impl MultiSeries {
    pub fn zero(ctx: Arc<SeriesContext>) -> Self {
        MultiSeries { ctx, terms: BTreeMap::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Add one z-coefficient at a key, dropping zeros and truncated keys.
    pub fn insert(&mut self, key: SeriesKey, z: i64, value: AlgebraElement) {
        if value.is_zero() || !self.ctx.policy.admits(&key) {
            return;
        }
        let slot = self.terms.entry(key.clone()).or_default();
        let entry = slot.entry(z).or_insert_with(|| AlgebraElement::zero(value.coords.len()));
        *entry = entry.add(&value);
        if entry.is_zero() {
            slot.remove(&z);
        }
        if slot.is_empty() {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &MultiSeries) -> MultiSeries {
        assert!(self.ctx.compatible(&other.ctx));
        let mut out = self.clone();
        for (key, zmap) in &other.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.clone());
            }
        }
        out
    }

    pub fn sub(&self, other: &MultiSeries) -> MultiSeries {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> MultiSeries {
        self.map_values(|v| v.neg())
    }

    pub fn scale(&self, c: &BigRational) -> MultiSeries {
        if c.is_zero() {
            return MultiSeries::zero(self.ctx.clone());
        }
        self.map_values(|v| v.scale(c))
    }

    pub fn scale_poly(&self, p: &Poly) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.scale_poly(p));
            }
        }
        out
    }

    fn map_values(&self, f: impl Fn(&AlgebraElement) -> AlgebraElement) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, f(v));
            }
        }
        out
    }

    /// Multiply by z^delta.
    pub fn shift_z(&self, delta: i64) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z + delta, v.clone());
            }
        }
        out
    }

    /// Multiply by a scalar series.
    pub fn mul_scalar(&self, s: &ScalarSeries) -> MultiSeries {
        assert!(self.ctx.compatible(&s.ctx));
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (ka, za) in &self.terms {
            for (kb, zb) in &s.terms {
                let key = ka.add(kb);
                if !self.ctx.policy.admits(&key) {
                    continue;
                }
                for (&pa, va) in za {
                    for (&pb, vb) in zb {
                        out.insert(key.clone(), pa + pb, va.scale_poly(vb));
                    }
                }
            }
        }
        out
    }

    /// Partial derivative in the i-th t-variable.
    pub fn derivative_t(&self, i: usize) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.t[i] == 0 {
                continue;
            }
            let mut k2 = key.clone();
            k2.t[i] -= 1;
            let factor = qi(key.t[i] as i64);
            for (&z, v) in zmap {
                out.insert(k2.clone(), z, v.scale(&factor));
            }
        }
        out
    }

    /// Partial derivative in the j-th x-variable (or composed coordinate).
    pub fn derivative_x(&self, j: usize) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.x[j] == 0 {
                continue;
            }
            let mut k2 = key.clone();
            k2.x[j] -= 1;
            let factor = qi(key.x[j] as i64);
            for (&z, v) in zmap {
                out.insert(k2.clone(), z, v.scale(&factor));
            }
        }
        out
    }

    /// The Euler-type operator x_j d/dx_j (no key shift).
    pub fn x_derivative_x(&self, j: usize) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.x[j] == 0 {
                continue;
            }
            let factor = qi(key.x[j] as i64);
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.scale(&factor));
            }
        }
        out
    }

    /// Coefficient at a key and z-power.
    pub fn coefficient(&self, key: &SeriesKey, z: i64) -> AlgebraElement {
        self.terms
            .get(key)
            .and_then(|zmap| zmap.get(&z))
            .cloned()
            .unwrap_or_else(|| AlgebraElement::zero(self.ctx.dim()))
    }

    /// Slice at a fixed z-power, as a z-free series.
    pub fn z_slice(&self, z: i64) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if let Some(v) = zmap.get(&z) {
                out.insert(key.clone(), 0, v.clone());
            }
        }
        out
    }

    /// Scalar series of one algebra coordinate.
    pub fn component(&self, idx: usize) -> ScalarSeries {
        let mut out = ScalarSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                if !v.coords[idx].is_zero() {
                    out.insert(key.clone(), z, v.coords[idx].clone());
                }
            }
        }
        out
    }

    /// Largest z-power present anywhere.
    pub fn max_z(&self) -> Option<i64> {
        self.terms
            .values()
            .flat_map(|zmap| zmap.keys().copied())
            .max()
    }

    /// Drop every term with a nonzero exponent of the j-th x-variable.
    pub fn freeze_x(&self, j: usize) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.x[j] != 0 {
                continue;
            }
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.clone());
            }
        }
        out
    }

    /// Drop every term with a nonzero order in the i-th t-variable.
    pub fn freeze_t(&self, i: usize) -> MultiSeries {
        let mut out = MultiSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.t[i] != 0 {
                continue;
            }
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.clone());
            }
        }
        out
    }

    /// Re-truncate under a (usually stricter) policy, returning a series in
    /// the new context.
    pub fn retruncate(&self, ctx: Arc<SeriesContext>) -> MultiSeries {
        let mut out = MultiSeries::zero(ctx);
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.clone());
            }
        }
        out
    }

    /// Check term-by-term homogeneity: key degree (under the given true
    /// variable degrees) + z-power + class degree + scalar monomial weight
    /// must equal `expected`. Returns human-readable violations.
    pub fn check_homogeneous(
        &self,
        degrees: &Grading,
        expected: &BigRational,
    ) -> Vec<String> {
        let mut out = Vec::new();
        let alg = &self.ctx.algebra;
        for (key, zmap) in &self.terms {
            let mut kdeg = BigRational::zero();
            for (a, w) in key.q.iter().zip(degrees.q_weights.iter()) {
                kdeg += a * w;
            }
            for (&e, w) in key.x.iter().zip(degrees.x_weights.iter()) {
                kdeg += BigRational::from_integer(BigInt::from(e)) * w;
            }
            for (&z, v) in zmap {
                for (idx, p) in v.coords.iter().enumerate() {
                    if p.is_zero() {
                        continue;
                    }
                    let base = &kdeg
                        + BigRational::from_integer(BigInt::from(z))
                        + alg.grading(idx);
                    for d in p.weighted_degrees(&self.ctx.scalars) {
                        let total = &base + &d;
                        if &total != expected {
                            out.push(format!(
                                "term at q={:?} x={:?} z^{z} class {} has degree {} != {}",
                                key.q, key.x, alg.basis[idx].label, total, expected
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

impl ScalarSeries {
    pub fn zero(ctx: Arc<SeriesContext>) -> Self {
        ScalarSeries { ctx, terms: BTreeMap::new() }
    }

    pub fn one(ctx: Arc<SeriesContext>) -> Self {
        let mut s = ScalarSeries::zero(ctx);
        let key = s.ctx.zero_key();
        let nv = s.ctx.scalars.nvars();
        s.insert(key, 0, Poly::one(nv));
        s
    }

    pub fn constant(ctx: Arc<SeriesContext>, c: BigRational) -> Self {
        let mut s = ScalarSeries::zero(ctx);
        let key = s.ctx.zero_key();
        let nv = s.ctx.scalars.nvars();
        s.insert(key, 0, Poly::constant(nv, c));
        s
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn insert(&mut self, key: SeriesKey, z: i64, value: Poly) {
        if value.is_zero() || !self.ctx.policy.admits(&key) {
            return;
        }
        let slot = self.terms.entry(key.clone()).or_default();
        let entry = slot.entry(z).or_insert_with(Poly::zero);
        *entry = entry.add(&value);
        if entry.is_zero() {
            slot.remove(&z);
        }
        if slot.is_empty() {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &ScalarSeries) -> ScalarSeries {
        assert!(self.ctx.compatible(&other.ctx));
        let mut out = self.clone();
        for (key, zmap) in &other.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.clone());
            }
        }
        out
    }

    pub fn sub(&self, other: &ScalarSeries) -> ScalarSeries {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> ScalarSeries {
        let mut out = ScalarSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.neg());
            }
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> ScalarSeries {
        let mut out = ScalarSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            for (&z, v) in zmap {
                out.insert(key.clone(), z, v.scale(c));
            }
        }
        out
    }

    pub fn mul(&self, other: &ScalarSeries) -> ScalarSeries {
        assert!(self.ctx.compatible(&other.ctx));
        let mut out = ScalarSeries::zero(self.ctx.clone());
        for (ka, za) in &self.terms {
            for (kb, zb) in &other.terms {
                let key = ka.add(kb);
                if !self.ctx.policy.admits(&key) {
                    continue;
                }
                for (&pa, va) in za {
                    for (&pb, vb) in zb {
                        out.insert(key.clone(), pa + pb, va.mul(vb));
                    }
                }
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> ScalarSeries {
        let mut out = ScalarSeries::one(self.ctx.clone());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Coefficient of the zero key at z^0 (the series constant term).
    pub fn constant_term(&self) -> Poly {
        let key = self.ctx.zero_key();
        self.terms
            .get(&key)
            .and_then(|zmap| zmap.get(&0))
            .cloned()
            .unwrap_or_else(Poly::zero)
    }

    pub fn coefficient(&self, key: &SeriesKey, z: i64) -> Poly {
        self.terms
            .get(key)
            .and_then(|zmap| zmap.get(&z))
            .cloned()
            .unwrap_or_else(Poly::zero)
    }

    /// Partial derivative in the i-th t-variable.
    pub fn derivative_t(&self, i: usize) -> ScalarSeries {
        let mut out = ScalarSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.t[i] == 0 {
                continue;
            }
            let mut k2 = key.clone();
            k2.t[i] -= 1;
            let factor = qi(key.t[i] as i64);
            for (&z, v) in zmap {
                out.insert(k2.clone(), z, v.scale(&factor));
            }
        }
        out
    }

    /// Partial derivative in the j-th x-variable.
    pub fn derivative_x(&self, j: usize) -> ScalarSeries {
        let mut out = ScalarSeries::zero(self.ctx.clone());
        for (key, zmap) in &self.terms {
            if key.x[j] == 0 {
                continue;
            }
            let mut k2 = key.clone();
            k2.x[j] -= 1;
            let factor = qi(key.x[j] as i64);
            for (&z, v) in zmap {
                out.insert(k2.clone(), z, v.scale(&factor));
            }
        }
        out
    }

    /// Multiplicative inverse; requires an invertible (rational, nonzero)
    /// constant term and terminates by grading/t-order truncation.
    pub fn invert(&self) -> Result<ScalarSeries> {
        let c0 = self.constant_term();
        let c = c0.as_constant().ok_or_else(|| {
            EngineError::Domain(
                "series inversion needs a rational constant term".into(),
            )
        })?;
        if c.is_zero() {
            return Err(EngineError::Domain(
                "degenerate normalization: the series constant term is zero".into(),
            ));
        }
        // write self = c (1 - r); inverse = c^{-1} sum r^s
        let cinv = BigRational::one() / c;
        let mut r = ScalarSeries::one(self.ctx.clone()).sub(&self.scale(&cinv));
        if !r.constant_term().is_zero() {
            // constant-term polynomial with generators: keep the full poly in
            // r only when it is honestly nilpotent-free; refuse otherwise
            return Err(EngineError::Domain(
                "series inversion needs a rational constant term".into(),
            ));
        }
        // z-powers must be nonpositive in r? No: any finite z-structure works,
        // but termination relies on every key of r being nonzero.
        if r.terms.contains_key(&self.ctx.zero_key()) {
            return Err(EngineError::Domain(
                "series inversion does not support z-dependence at the constant key".into(),
            ));
        }
        let mut acc = ScalarSeries::one(self.ctx.clone());
        let mut pw = r.clone();
        let mut guard = 0u32;
        while !pw.is_zero() {
            acc = acc.add(&pw);
            pw = pw.mul(&r);
            guard += 1;
            if guard > 4096 {
                return Err(EngineError::NonTerminating(
                    "series inversion did not terminate under the truncation policy".into(),
                ));
            }
        }
        let _ = std::mem::take(&mut r.terms);
        Ok(acc.scale(&cinv))
    }

    /// Substitute the x-variables by other scalar series (t-slots must be
    /// absent), keeping Novikov exponents.
    pub fn compose(&self, args: &[ScalarSeries], out_ctx: Arc<SeriesContext>) -> Result<ScalarSeries> {
        assert_eq!(args.len(), self.ctx.m());
        assert_eq!(self.ctx.t_count, 0);
        for a in args {
            assert!(a.ctx.compatible(&out_ctx));
        }
        let mut out = ScalarSeries::zero(out_ctx.clone());
        for (key, zmap) in &self.terms {
            // Q^q times product of substituted argument powers
            let mut factor = ScalarSeries::one(out_ctx.clone());
            let mut qkey = out_ctx.zero_key();
            qkey.q = key.q.clone();
            let mut shifted = ScalarSeries::zero(out_ctx.clone());
            shifted.insert(qkey, 0, Poly::one(out_ctx.scalars.nvars()));
            factor = factor.mul(&shifted);
            for (j, &e) in key.x.iter().enumerate() {
                if e > 0 {
                    factor = factor.mul(&args[j].pow(e));
                }
            }
            for (&z, v) in zmap {
                for (k2, z2map) in &factor.terms {
                    for (&z2, v2) in z2map {
                        out.insert(k2.clone(), z + z2, v.mul(v2));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A finite z-Laurent vector of algebra elements; the value of one summand
/// while linear factors are applied to it.
#[derive(Clone, Debug)]
pub(crate) struct ZVec {
    pub(crate) terms: BTreeMap<i64, AlgebraElement>,
}

impl ZVec {
    pub(crate) fn single(z: i64, v: AlgebraElement) -> Self {
        let mut terms = BTreeMap::new();
        if !v.is_zero() {
            terms.insert(z, v);
        }
        ZVec { terms }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub(crate) fn insert(&mut self, z: i64, v: AlgebraElement) {
        if v.is_zero() {
            return;
        }
        let dim = v.coords.len();
        let entry = self.terms.entry(z).or_insert_with(|| AlgebraElement::zero(dim));
        *entry = entry.add(&v);
        if entry.is_zero() {
            self.terms.remove(&z);
        }
    }

    pub(crate) fn scale(&mut self, c: &BigRational) {
        for v in self.terms.values_mut() {
            *v = v.scale(c);
        }
        self.terms.retain(|_, v| !v.is_zero());
    }

    pub(crate) fn shift_z(&mut self, delta: i64) {
        let old = std::mem::take(&mut self.terms);
        for (z, v) in old {
            self.terms.insert(z + delta, v);
        }
    }

    /// Multiply by (u_i + a z); `i = None` means the divisor part is zero.
    pub(crate) fn apply_linear(&mut self, ctx: &SeriesContext, i: Option<usize>, a: &BigRational) {
        let old = std::mem::take(&mut self.terms);
        let mut out = ZVec { terms: BTreeMap::new() };
        for (z, v) in &old {
            if let Some(i) = i {
                out.insert(*z, ctx.apply_divisor(v, i));
            }
            if !a.is_zero() {
                out.insert(z + 1, v.scale(a));
            }
        }
        self.terms = out.terms;
    }

    /// Multiply by (u_i + a z)^{-1}. For a != 0 this is the geometric
    /// expansion in u_i/(az), which terminates when u_i acts nilpotently.
    /// At a = 0 only an invertible scalar-monomial action is accepted.
    pub(crate) fn apply_reciprocal(
        &mut self,
        ctx: &SeriesContext,
        i: Option<usize>,
        a: &BigRational,
    ) -> Result<()> {
        let dim = ctx.dim();
        match i {
            None => {
                if a.is_zero() {
                    return Err(EngineError::SingularFactor(
                        "reciprocal factor with zero divisor action and a = 0".into(),
                    ));
                }
                self.scale(&(BigRational::one() / a));
                self.shift_z(-1);
                Ok(())
            }
            Some(i) => {
                if a.is_zero() {
                    // invertible scalar monomial, or nothing
                    let mat = &ctx.lifted_action[i];
                    let mut diag: Option<Poly> = None;
                    for r in 0..dim {
                        for c in 0..dim {
                            let e = mat.entry(r, c);
                            if r == c {
                                match &diag {
                                    None => diag = Some(e.clone()),
                                    Some(d) => {
                                        if d != e {
                                            diag = None;
                                        }
                                    }
                                }
                                if diag.is_none() {
                                    break;
                                }
                            } else if !e.is_zero() {
                                diag = None;
                                break;
                            }
                        }
                        if diag.is_none() && r > 0 {
                            break;
                        }
                    }
                    let inv = diag.as_ref().and_then(|d| {
                        if d.terms.len() == 1 {
                            let (expts, c) = d.terms.iter().next().unwrap();
                            let mut inv_exp = expts.clone();
                            for e in inv_exp.iter_mut() {
                                *e = -*e;
                            }
                            let mut t = BTreeMap::new();
                            t.insert(inv_exp, BigRational::one() / c);
                            Some(Poly { terms: t })
                        } else {
                            None
                        }
                    });
                    match inv {
                        Some(p) => {
                            for v in self.terms.values_mut() {
                                *v = v.scale_poly(&p);
                            }
                            Ok(())
                        }
                        None => Err(EngineError::SingularFactor(format!(
                            "reciprocal factor (u_{} + 0 z) with a non-invertible divisor action",
                            i + 1
                        ))),
                    }
                } else {
                    let ainv = BigRational::one() / a;
                    let old = std::mem::take(&mut self.terms);
                    let mut out = ZVec { terms: BTreeMap::new() };
                    for (z, v) in &old {
                        // (u + az)^{-1} v = sum_{s>=0} (-1)^s a^{-s-1} z^{-s-1} u^s v
                        let mut cur = v.clone();
                        let mut coef = ainv.clone();
                        let mut s: usize = 0;
                        while !cur.is_zero() {
                            if s > dim + 1 {
                                return Err(EngineError::SingularFactor(format!(
                                    "the action of u_{} is not nilpotent; the geometric expansion of a reciprocal factor does not terminate",
                                    i + 1
                                )));
                            }
                            out.insert(z - (s as i64) - 1, cur.scale(&coef));
                            cur = ctx.apply_divisor(&cur, i);
                            coef = -&coef * &ainv;
                            s += 1;
                        }
                    }
                    self.terms = out.terms;
                    Ok(())
                }
            }
        }
    }
}

/// All multi-indices over `n` slots with total at most `bound`.
fn multi_indices(n: usize, bound: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, slot: usize, left: u32) {
        if slot == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[slot] = v;
            rec(out, cur, slot + 1, left - v);
        }
        cur[slot] = 0;
    }
    rec(&mut out, &mut cur, 0, bound);
    out
}

/// Map each box element to the algebra sector with the same group value.
fn sector_index_map(ext: &ExtendedStackyFan, alg: &ChenRuanAlgebra) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ext.box_elems.len());
    for b in &ext.box_elems {
        let pos = alg
            .sectors
            .iter()
            .position(|s| s.value == b.value)
            .ok_or_else(|| {
                EngineError::Invalid(format!(
                    "the algebra has no sector with group value {:?}",
                    b.value
                ))
            })?;
        if alg.sectors[pos].age != b.age {
            return Err(EngineError::Invalid(format!(
                "sector {:?} has age {} in the algebra but {} in the fan",
                b.value, alg.sectors[pos].age, b.age
            )));
        }
        out.push(pos);
    }
    Ok(out)
}

pub(crate) type SummandHook<'a> = &'a dyn Fn(&ExtendedDegree, usize, &mut ZVec) -> Result<()>;

/// Assemble the extended-degree sum with an optional per-summand hook
/// (used by the twisted variant); shared engine behind `i_function`.
pub(crate) fn i_function_with(
    ext: &ExtendedStackyFan,
    ctx: &Arc<SeriesContext>,
    hook: Option<SummandHook>,
) -> Result<MultiSeries> {
    let n = ext.n();
    let m = ext.m();
    if ctx.m() != m || ctx.t_count != n || ctx.rank_l != ext.rank_l() {
        return Err(EngineError::Invalid(
            "series context dimensions do not match the extended fan".into(),
        ));
    }
    let smap = sector_index_map(ext, &ctx.algebra)?;
    let groups = ext.enumerate_degrees(
        &ctx.policy.grading,
        &ctx.policy.cutoff,
        &ctx.policy.x_caps,
    )?;
    let max_t = ctx.policy.max_t_order;
    let pis = multi_indices(n, max_t);
    let mut acc = MultiSeries::zero(ctx.clone());
    for (&sector, degs) in &groups {
        let unit = ctx.sector_unit(smap[sector]);
        for deg in degs {
            let mut v = ZVec::single(0, unit.clone());
            // ray factors over the half-open interval of each coordinate
            for i in 0..n {
                let li = &deg.lambda[i];
                if li.is_positive() {
                    // denominator: a in (0, li] with <a> = <li>
                    let f = frac_part(li);
                    let mut a = if f.is_zero() { BigRational::one() } else { f };
                    while &a <= li {
                        v.apply_reciprocal(ctx, Some(i), &a)?;
                        a += BigRational::one();
                    }
                } else {
                    // numerator: a in (li, 0] with <a> = <li>
                    let f = frac_part(li);
                    let mut a = if f.is_zero() { BigRational::zero() } else { f - BigRational::one() };
                    while &a > li {
                        v.apply_linear(ctx, Some(i), &a);
                        a -= BigRational::one();
                    }
                }
                if v.is_zero() {
                    break;
                }
            }
            if v.is_zero() {
                continue;
            }
            // extended slots: each contributes 1/(k_j! z^{k_j})
            let mut xkey = Vec::with_capacity(m);
            for j in 0..m {
                let kj = deg.k[j].to_u32().ok_or_else(|| {
                    EngineError::NonTerminating("extended exponent too large".into())
                })?;
                xkey.push(kj);
                if kj > 0 {
                    v.scale(&(BigRational::one() / factorial(kj)));
                    v.shift_z(-(kj as i64));
                }
            }
            if let Some(h) = hook {
                h(deg, sector, &mut v)?;
            }
            if v.is_zero() {
                continue;
            }
            // e^{d t} to the t-order bound
            for pi in &pis {
                let mut coeff = BigRational::one();
                let mut dead = false;
                for (i, &p) in pi.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    if deg.d[i].is_zero() {
                        dead = true;
                        break;
                    }
                    let mut pw = BigRational::one();
                    for _ in 0..p {
                        pw *= &deg.d[i];
                    }
                    coeff *= pw / factorial(p);
                }
                if dead {
                    continue;
                }
                let key = SeriesKey { q: deg.q.clone(), x: xkey.clone(), t: pi.clone() };
                if !ctx.policy.admits(&key) {
                    continue;
                }
                for (&z, val) in &v.terms {
                    acc.insert(key.clone(), z, val.scale(&coeff));
                }
            }
        }
    }
    // prefactor e^{sum_i u_i t_i / z}
    let mut out = MultiSeries::zero(ctx.clone());
    for (key, zmap) in &acc.terms {
        let room = max_t - key.t_order();
        for pi in multi_indices(n, room) {
            let order: u32 = pi.iter().sum();
            let mut key2 = key.clone();
            for (i, &p) in pi.iter().enumerate() {
                key2.t[i] += p;
            }
            if !ctx.policy.admits(&key2) {
                continue;
            }
            let mut den = BigRational::one();
            for &p in &pi {
                den *= factorial(p);
            }
            let inv = BigRational::one() / den;
            for (&z, val) in zmap {
                let mut w = val.clone();
                for (i, &p) in pi.iter().enumerate() {
                    for _ in 0..p {
                        w = ctx.apply_divisor(&w, i);
                    }
                }
                out.insert(key2.clone(), z - order as i64, w.scale(&inv));
            }
        }
    }
    // global z prefactor
    Ok(out.shift_z(1))
}

/// The extended-degree hypergeometric series of the fan, valued in the given
/// algebra, truncated by the context policy.
pub fn i_function(ext: &ExtendedStackyFan, ctx: &Arc<SeriesContext>) -> Result<MultiSeries> {
    i_function_with(ext, ctx, None)
}

/// z-asymptotics of a series expected to look like F z + G + O(z^{-1}).
#[derive(Clone, Debug)]
pub struct Asymptotics {
    /// Scalar coefficient of z·1 (unit component of the z^1 slice).
    pub f: ScalarSeries,
    /// The z^0 slice.
    pub g: MultiSeries,
    pub tail_ok: bool,
    pub violations: Vec<String>,
}

pub fn asymptotics(series: &MultiSeries) -> Asymptotics {
    let ctx = &series.ctx;
    let unit_idx = ctx.algebra.unit_of_sector[0];
    let mut violations = Vec::new();
    let mut f = ScalarSeries::zero(ctx.clone());
    for (key, zmap) in &series.terms {
        for (&z, v) in zmap {
            if z >= 2 {
                violations.push(format!(
                    "z^{z} term at q={:?} x={:?} t={:?}",
                    key.q, key.x, key.t
                ));
            } else if z == 1 {
                for (idx, p) in v.coords.iter().enumerate() {
                    if p.is_zero() {
                        continue;
                    }
                    if idx == unit_idx {
                        f.insert(key.clone(), 0, p.clone());
                    } else {
                        violations.push(format!(
                            "z^1 term along {} at q={:?} x={:?} t={:?}",
                            ctx.algebra.basis[idx].label, key.q, key.x, key.t
                        ));
                    }
                }
            }
        }
    }
    Asymptotics {
        f,
        g: series.z_slice(0),
        tail_ok: violations.is_empty(),
        violations,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharpMode {
    Direct,
    Lemma,
}

#[derive(Clone, Debug)]
pub struct SharpWitness {
    /// Ray-pairing coordinates of the failing degree.
    pub lambda: QVec,
    pub anticanonical: BigRational,
    pub age: BigRational,
    pub integral_negatives: usize,
    pub order: BigRational,
}

#[derive(Clone, Debug)]
pub struct SharpReport {
    pub mode: SharpMode,
    pub holds: bool,
    /// For direct mode: the verdict only covers degrees up to this cutoff.
    pub cutoff: Option<BigRational>,
    pub witnesses: Vec<SharpWitness>,
    pub notes: Vec<String>,
}

/// Decide whether every nonzero effective curve degree satisfies
/// (anticanonical pairing) + age(reduction) + #(negative integral
/// coordinates) >= 2; directly up to a cutoff, or by the positive-age
/// criterion for complete Fano fans.
pub fn check_sharp(
    ext: &ExtendedStackyFan,
    mode: SharpMode,
    cutoff: Option<&BigRational>,
) -> Result<SharpReport> {
    match mode {
        SharpMode::Direct => {
            let cutoff = cutoff.ok_or_else(|| {
                EngineError::Invalid("direct mode needs a cutoff".into())
            })?;
            let bare = ExtendedStackyFan::extend(
                ext.fan.clone(),
                Vec::new(),
                Some(ext.mori_generators.clone()),
                Some(ext.degree_basis.clone()),
            )?;
            let grading = Grading {
                q_weights: bare.q_degrees(),
                x_weights: Vec::new(),
            };
            let groups = bare.enumerate_degrees(&grading, cutoff, &[])?;
            let mut witnesses = Vec::new();
            for (&sector, degs) in &groups {
                let age = bare.box_elems[sector].age.clone();
                for deg in degs {
                    if deg.lambda.iter().all(|c| c.is_zero()) {
                        continue;
                    }
                    let anticanonical: BigRational = deg.lambda.iter().cloned().sum();
                    let negints = deg
                        .lambda
                        .iter()
                        .filter(|c| c.is_negative() && is_integer(c))
                        .count();
                    let order = &anticanonical
                        + &age
                        + BigRational::from_integer(BigInt::from(negints));
                    if order < qi(2) {
                        witnesses.push(SharpWitness {
                            lambda: deg.lambda.clone(),
                            anticanonical,
                            age: age.clone(),
                            integral_negatives: negints,
                            order,
                        });
                    }
                }
            }
            Ok(SharpReport {
                mode,
                holds: witnesses.is_empty(),
                cutoff: Some(cutoff.clone()),
                witnesses,
                notes: Vec::new(),
            })
        }
        SharpMode::Lemma => {
            if !ext.fan.is_complete() {
                return Err(EngineError::Invalid(
                    "the positive-age criterion needs a complete fan".into(),
                ));
            }
            let mut notes = Vec::new();
            let mut holds = true;
            for g in &ext.mori_generators {
                let k: BigRational = g.iter().cloned().sum();
                if !k.is_positive() {
                    holds = false;
                    notes.push(format!(
                        "Mori generator {:?} has non-positive anticanonical degree {}",
                        g, k
                    ));
                }
            }
            for b in &ext.fan.box_elements() {
                if b.value.iter().all(|c| c.is_zero()) {
                    continue;
                }
                if b.age < BigRational::one() {
                    holds = false;
                    notes.push(format!(
                        "box element {:?} has age {} < 1",
                        b.value, b.age
                    ));
                }
            }
            if holds {
                notes.push("Fano with all nonzero ages at least 1".into());
            }
            Ok(SharpReport { mode, holds, cutoff: None, witnesses: Vec::new(), notes })
        }
    }
}

/// G/F from the asymptotics: the series whose coordinates give the
/// coordinate change of the base.
pub fn mirror_map(asym: &Asymptotics) -> Result<MultiSeries> {
    let finv = asym.f.invert()?;
    Ok(asym.g.mul_scalar(&finv))
}

/// The linear base embedding sum_i t_i u_i + sum_j x_j y^{b_j}, where b_j is
/// the box part of the j-th extension element.
pub fn linear_embedding(
    ext: &ExtendedStackyFan,
    ctx: &Arc<SeriesContext>,
) -> Result<MultiSeries> {
    let smap = sector_index_map(ext, &ctx.algebra)?;
    let mut out = MultiSeries::zero(ctx.clone());
    for i in 0..ctx.t_count {
        let mut key = ctx.zero_key();
        key.t[i] = 1;
        out.insert(key, 0, ctx.apply_divisor(&ctx.unit(), i));
    }
    let q0 = vec![BigRational::zero(); ext.rank_l()];
    for j in 0..ctx.m() {
        let mut k = vec![BigRational::zero(); ext.m()];
        k[j] = BigRational::one();
        let b = ext.reduction(&ext.lambda_of(&q0, &k))?;
        let mut key = ctx.zero_key();
        key.x[j] = 1;
        out.insert(key, 0, ctx.sector_unit(smap[b]));
    }
    Ok(out)
}

/// Verdict of the strong shape test on an extended series.
#[derive(Clone, Debug)]
pub struct ShapeReport {
    pub holds: bool,
    pub notes: Vec<String>,
}

/// Test that the series is exactly z + sum t_i u_i + sum x_j y^{b_j} +
/// O(1/z): no higher z-powers, z-linear coefficient identically 1, and a
/// z-free slice equal to the linear base embedding.  When this holds the
/// series is its own J-function restricted to the embedded base directions.
pub fn check_extended_shape(
    ext: &ExtendedStackyFan,
    series: &MultiSeries,
) -> Result<ShapeReport> {
    let ctx = &series.ctx;
    let asym = asymptotics(series);
    let mut notes = asym.violations.clone();
    if asym.f != ScalarSeries::one(ctx.clone()) {
        notes.push("the coefficient of z along the unit is not identically 1".into());
    }
    let expected = linear_embedding(ext, ctx)?;
    if asym.g != expected {
        let diff = asym.g.sub(&expected);
        for (key, zmap) in diff.terms.iter().take(3) {
            for v in zmap.values() {
                for (idx, p) in v.coords.iter().enumerate() {
                    if !p.is_zero() {
                        notes.push(format!(
                            "nonlinear z^0 term along {} at q={:?} x={:?} t={:?}",
                            ctx.algebra.basis[idx].label, key.q, key.x, key.t
                        ));
                    }
                }
            }
        }
    }
    Ok(ShapeReport { holds: notes.is_empty(), notes })
}

/// Reverse a formal coordinate change given by scalar series (one per output
/// coordinate) in a context with no t-variables. The linear part may carry
/// positive-grading corrections, but its constant block must be invertible.
pub fn reverse(map: &[ScalarSeries]) -> Result<Vec<ScalarSeries>> {
    let p = map.len();
    if p == 0 {
        return Ok(Vec::new());
    }
    let ctx = map[0].ctx.clone();
    if ctx.t_count != 0 || ctx.m() != p {
        return Err(EngineError::Invalid(
            "reversion needs a square system over the context's x-variables".into(),
        ));
    }
    for s in map {
        if !s.ctx.compatible(&ctx) {
            return Err(EngineError::Invalid("mixed contexts in reversion".into()));
        }
        for (key, zmap) in &s.terms {
            if zmap.keys().any(|&z| z != 0) {
                return Err(EngineError::Invalid(
                    "reversion expects z-free series".into(),
                ));
            }
            if key.x.iter().all(|&e| e == 0) {
                return Err(EngineError::Domain(
                    "coordinate change has a term free of the chart variables".into(),
                ));
            }
        }
    }
    // constant linear block
    let mut a0 = QMatrix::zero(p, p);
    for (g, s) in map.iter().enumerate() {
        for d in 0..p {
            let mut key = ctx.zero_key();
            key.x[d] = 1;
            if let Some(c) = s.coefficient(&key, 0).as_constant() {
                a0.data[g][d] = c;
            } else {
                return Err(EngineError::NonInvertible(
                    "the linear part of the coordinate change has non-constant leading coefficients".into(),
                ));
            }
        }
    }
    let a0inv = a0.inverse().map_err(|_| {
        EngineError::NonInvertible(
            "the linear part of the coordinate change is singular".into(),
        )
    })?;
    // start from the constant-linear inverse and refine blockwise
    let mut g: Vec<ScalarSeries> = Vec::with_capacity(p);
    let nv = ctx.scalars.nvars();
    for d in 0..p {
        let mut s = ScalarSeries::zero(ctx.clone());
        for e in 0..p {
            let c = a0inv.data[d][e].clone();
            if !c.is_zero() {
                let mut key = ctx.zero_key();
                key.x[e] = 1;
                s.insert(key, 0, Poly::constant(nv, c));
            }
        }
        g.push(s);
    }
    let identity: Vec<ScalarSeries> = (0..p)
        .map(|d| {
            let mut s = ScalarSeries::zero(ctx.clone());
            let mut key = ctx.zero_key();
            key.x[d] = 1;
            s.insert(key, 0, Poly::one(nv));
            s
        })
        .collect();
    let mut guard = 0u32;
    loop {
        guard += 1;
        if guard > 10000 {
            return Err(EngineError::NonTerminating(
                "reversion did not stabilize under the truncation policy".into(),
            ));
        }
        let mut residual: Vec<ScalarSeries> = Vec::with_capacity(p);
        for (gam, s) in map.iter().enumerate() {
            residual.push(s.compose(&g, ctx.clone())?.sub(&identity[gam]));
        }
        // minimal (x-degree, grading) block of the residual
        let mut best: Option<(u64, BigRational)> = None;
        for r in &residual {
            for key in r.terms.keys() {
                let xd: u64 = key.x.iter().map(|&e| e as u64).sum();
                let gr = ctx.policy.key_grading(key);
                let cand = (xd, gr);
                if best.as_ref().map_or(true, |b| cand < *b) {
                    best = Some(cand);
                }
            }
        }
        let Some(block) = best else { break };
        for d in 0..p {
            let mut corr = ScalarSeries::zero(ctx.clone());
            for (gam, r) in residual.iter().enumerate() {
                let c = &a0inv.data[d][gam];
                if c.is_zero() {
                    continue;
                }
                for (key, zmap) in &r.terms {
                    let xd: u64 = key.x.iter().map(|&e| e as u64).sum();
                    let gr = ctx.policy.key_grading(key);
                    if (xd, gr) != block {
                        continue;
                    }
                    for (&z, v) in zmap {
                        corr.insert(key.clone(), z, v.scale(c));
                    }
                }
            }
            g[d] = g[d].sub(&corr);
        }
    }
    // two-sided identity check
    for (gam, s) in map.iter().enumerate() {
        if s.compose(&g, ctx.clone())? != identity[gam] {
            return Err(EngineError::NonInvertible(
                "reversion failed the forward identity check".into(),
            ));
        }
    }
    for (gam, s) in g.iter().enumerate() {
        if s.compose(map, ctx.clone())? != identity[gam] {
            return Err(EngineError::NonInvertible(
                "reversion failed the backward identity check".into(),
            ));
        }
    }
    Ok(g)
}

/// A choice of base coordinates: which algebra basis directions are tracked
/// and which original series variable feeds each one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesVariable {
    T(usize),
    X(usize),
}

#[derive(Clone, Debug)]
pub struct CoordinateChart {
    pub directions: Vec<usize>,
    pub variables: Vec<SeriesVariable>,
    pub names: Vec<String>,
}

impl SeriesVariable {
    pub fn describe(&self) -> String {
        match self {
            SeriesVariable::T(i) => format!("t{}", i + 1),
            SeriesVariable::X(j) => format!("x{j}"),
        }
    }
}

/// Context for series living on the chart coordinates (no t-variables; one
/// x-variable per tracked direction).
pub fn chart_context(ctx: &Arc<SeriesContext>, chart: &CoordinateChart) -> Result<Arc<SeriesContext>> {
    if chart.directions.len() != chart.variables.len()
        || chart.directions.len() != chart.names.len()
    {
        return Err(EngineError::Invalid("chart lists have mismatched lengths".into()));
    }
    let floor = BigRational::new(BigInt::one(), BigInt::from(1000));
    let mut x_weights = Vec::new();
    let mut x_caps = Vec::new();
    for (pos, &dir) in chart.directions.iter().enumerate() {
        if dir >= ctx.dim() {
            return Err(EngineError::Invalid(format!(
                "chart direction {dir} out of range"
            )));
        }
        let w = BigRational::one() - ctx.algebra.grading(dir);
        x_weights.push(if w.is_positive() { w } else { floor.clone() });
        x_caps.push(match chart.variables[pos] {
            SeriesVariable::T(_) => Some(BigInt::from(ctx.policy.max_t_order)),
            SeriesVariable::X(j) => ctx.policy.x_caps.get(j).cloned().flatten(),
        });
    }
    let policy = TruncationPolicy {
        grading: Grading { q_weights: ctx.policy.grading.q_weights.clone(), x_weights },
        cutoff: ctx.policy.cutoff.clone(),
        max_t_order: ctx.policy.max_t_order,
        x_caps,
    };
    let mut inner = SeriesContext::new(
        ctx.algebra.clone(),
        ctx.scalars.clone(),
        ctx.rank_l,
        chart.names.clone(),
        0,
        policy,
    )?;
    Arc::get_mut(&mut inner).unwrap().coordinate_dirs = chart.directions.clone();
    Ok(inner)
}

/// Re-key a scalar series onto the chart variables; any dependence on a
/// variable outside the chart is an error.
fn restrict_to_chart(
    s: &ScalarSeries,
    chart: &CoordinateChart,
    ctx2: &Arc<SeriesContext>,
) -> Result<ScalarSeries> {
    let ctx = &s.ctx;
    let mut out = ScalarSeries::zero(ctx2.clone());
    for (key, zmap) in &s.terms {
        let mut key2 = ctx2.zero_key();
        key2.q = key.q.clone();
        let mut used_t = vec![0u32; ctx.t_count];
        let mut used_x = vec![0u32; ctx.m()];
        for (pos, var) in chart.variables.iter().enumerate() {
            match var {
                SeriesVariable::T(i) => {
                    key2.x[pos] = key.t[*i];
                    used_t[*i] = key.t[*i];
                }
                SeriesVariable::X(j) => {
                    key2.x[pos] = key.x[*j];
                    used_x[*j] = key.x[*j];
                }
            }
        }
        for i in 0..ctx.t_count {
            if key.t[i] != used_t[i] {
                return Err(EngineError::Domain(format!(
                    "the series depends on t{}, which is not in the chart; freeze it first",
                    i + 1
                )));
            }
        }
        for j in 0..ctx.m() {
            if key.x[j] != used_x[j] {
                return Err(EngineError::Domain(format!(
                    "the series depends on {}, which is not in the chart; freeze it first",
                    ctx.x_names[j]
                )));
            }
        }
        for (&z, v) in zmap {
            if z != 0 {
                return Err(EngineError::Domain(
                    "the coordinate change must be z-free".into(),
                ));
            }
            out.insert(key2.clone(), z, v.clone());
        }
    }
    Ok(out)
}

/// Substitute chart variables of an algebra-valued series by scalar series in
/// the chart context (zero constant terms checked by the caller via reverse).
fn compose_multi(
    series: &MultiSeries,
    chart: &CoordinateChart,
    args: &[ScalarSeries],
    ctx2: &Arc<SeriesContext>,
) -> Result<MultiSeries> {
    let ctx = &series.ctx;
    let mut out = MultiSeries::zero(ctx2.clone());
    for (key, zmap) in &series.terms {
        let mut factor = ScalarSeries::zero(ctx2.clone());
        let mut qkey = ctx2.zero_key();
        qkey.q = key.q.clone();
        factor.insert(qkey, 0, Poly::one(ctx2.scalars.nvars()));
        let mut used_t = vec![0u32; ctx.t_count];
        let mut used_x = vec![0u32; ctx.m()];
        for (pos, var) in chart.variables.iter().enumerate() {
            let e = match var {
                SeriesVariable::T(i) => {
                    used_t[*i] = key.t[*i];
                    key.t[*i]
                }
                SeriesVariable::X(j) => {
                    used_x[*j] = key.x[*j];
                    key.x[*j]
                }
            };
            if e > 0 {
                factor = factor.mul(&args[pos].pow(e));
            }
        }
        for i in 0..ctx.t_count {
            if key.t[i] != used_t[i] {
                return Err(EngineError::Domain(format!(
                    "the series depends on t{}, which is not in the chart; freeze it first",
                    i + 1
                )));
            }
        }
        for j in 0..ctx.m() {
            if key.x[j] != used_x[j] {
                return Err(EngineError::Domain(format!(
                    "the series depends on {}, which is not in the chart; freeze it first",
                    ctx.x_names[j]
                )));
            }
        }
        for (&z, v) in zmap {
            for (k2, z2map) in &factor.terms {
                for (&z2, c) in z2map {
                    out.insert(k2.clone(), z + z2, v.scale_poly(c));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct JOutput {
    /// The mirror map as an algebra-valued series in the original variables.
    pub tau: MultiSeries,
    /// Chart components of the mirror map, re-keyed to the chart variables.
    pub mirror: Vec<ScalarSeries>,
    /// The reversed coordinate change (original chart variables in terms of
    /// the new coordinates).
    pub inverse: Vec<ScalarSeries>,
    pub j: MultiSeries,
    pub shape_ok: bool,
    pub notes: Vec<String>,
}

/// Normalize by F, revert the mirror map on the chart, and substitute:
/// the series z + sum_g y_g phi_g + O(z^{-1}) in the new coordinates.
pub fn j_function(series: &MultiSeries, chart: &CoordinateChart) -> Result<JOutput> {
    let asym = asymptotics(series);
    if !asym.tail_ok {
        return Err(EngineError::Domain(format!(
            "the series does not have the shape F z + G + O(1/z); eliminate positive z-powers first ({})",
            asym.violations[0]
        )));
    }
    let tau = mirror_map(&asym)?;
    let ctx = &series.ctx;
    for idx in 0..ctx.dim() {
        if chart.directions.contains(&idx) {
            continue;
        }
        if !tau.component(idx).is_zero() {
            return Err(EngineError::Domain(format!(
                "the mirror map has a component along '{}' outside the chart",
                ctx.algebra.basis[idx].label
            )));
        }
    }
    let ctx2 = chart_context(ctx, chart)?;
    let mut mirror = Vec::with_capacity(chart.directions.len());
    for &dir in &chart.directions {
        mirror.push(restrict_to_chart(&tau.component(dir), chart, &ctx2)?);
    }
    let inverse = reverse(&mirror)?;
    let normalized = series.mul_scalar(&asym.f.invert()?);
    let j = compose_multi(&normalized, chart, &inverse, &ctx2)?;
    // shape: z + sum_g y_g phi_g + O(z^{-1})
    let mut notes = Vec::new();
    let mut expected_z0 = MultiSeries::zero(ctx2.clone());
    for (pos, &dir) in chart.directions.iter().enumerate() {
        let mut key = ctx2.zero_key();
        key.x[pos] = 1;
        let mut v = AlgebraElement::zero(ctx2.dim());
        v.coords[dir] = Poly::one(ctx2.scalars.nvars());
        expected_z0.insert(key, 0, ctx2.lift(&v));
    }
    let mut unit_z1 = MultiSeries::zero(ctx2.clone());
    unit_z1.insert(ctx2.zero_key(), 0, ctx2.unit());
    if j.z_slice(1) != unit_z1 {
        notes.push("z^1 part is not the bare unit".into());
    }
    if j.z_slice(0) != expected_z0 {
        notes.push("z^0 part is not the linear coordinate embedding".into());
    }
    if let Some(mz) = j.max_z() {
        if mz >= 2 {
            notes.push(format!("positive power z^{mz} remains"));
        }
    }
    let shape_ok = notes.is_empty();
    Ok(JOutput { tau, mirror, inverse, j, shape_ok, notes })
}

/// A family of series against which quantum-product relations are solved;
/// labels are for reporting.
#[derive(Clone, Debug)]
pub struct QuantumFamily {
    pub labels: Vec<String>,
    pub members: Vec<MultiSeries>,
}

/// Family member for the word w: z^{|w|-1} d_{w_1} ... d_{w_k} J
/// (the empty word gives z^{-1} J).
pub fn derivative_word_family(j: &MultiSeries, words: &[Vec<usize>]) -> QuantumFamily {
    let mut labels = Vec::new();
    let mut members = Vec::new();
    for w in words {
        let mut s = j.clone();
        for &g in w {
            s = s.derivative_x(g);
        }
        s = s.shift_z(w.len() as i64 - 1);
        labels.push(if w.is_empty() {
            "1".to_string()
        } else {
            w.iter()
                .map(|&g| format!("d{}", j.ctx.x_names[g]))
                .collect::<Vec<_>>()
                .join(" ")
        });
        members.push(s);
    }
    QuantumFamily { labels, members }
}

/// Solve z d_a d_b J = sum_k c^k F_k order by order in the key grading;
/// the c^k are z-free scalar series.
pub fn quantum_structure_constants(
    j: &MultiSeries,
    alpha: usize,
    beta: usize,
    family: &QuantumFamily,
) -> Result<Vec<ScalarSeries>> {
    solve_against_family(&j.derivative_x(alpha).derivative_x(beta).shift_z(1), family)
}

/// Express a series as sum_k c^k F_k with z-free scalar series c^k, solving
/// order by order against the family's leading profiles at the zero key.
pub fn solve_against_family(
    lhs: &MultiSeries,
    family: &QuantumFamily,
) -> Result<Vec<ScalarSeries>> {
    let ctx = &lhs.ctx;
    let p = family.members.len();
    let zero_key = ctx.zero_key();
    // leading profiles at the zero key
    let mut rows: Vec<(i64, usize)> = Vec::new();
    let mut profiles: Vec<BTreeMap<i64, AlgebraElement>> = Vec::new();
    for f in &family.members {
        let prof = f.terms.get(&zero_key).cloned().unwrap_or_default();
        for (&z, v) in &prof {
            for (c, pl) in v.coords.iter().enumerate() {
                if !pl.is_zero() && !rows.contains(&(z, c)) {
                    rows.push((z, c));
                }
            }
        }
        profiles.push(prof);
    }
    rows.sort();
    let mut mat = QMatrix::zero(rows.len(), p);
    for (k, prof) in profiles.iter().enumerate() {
        for (r, &(z, c)) in rows.iter().enumerate() {
            if let Some(v) = prof.get(&z) {
                mat.data[r][k] = v.coords[c].as_constant().ok_or_else(|| {
                    EngineError::RankDeficiency(
                        "the derivative family has non-constant leading coefficients".into(),
                    )
                })?;
            }
        }
    }
    if mat.clone().rank() < p {
        return Err(EngineError::RankDeficiency(
            "the derivative family is degenerate at leading order".into(),
        ));
    }
    // candidate key set: closed under subtracting family keys
    let mut keys: std::collections::BTreeSet<SeriesKey> = lhs.terms.keys().cloned().collect();
    let mut frontier: Vec<SeriesKey> = keys.iter().cloned().collect();
    let mut rounds = 0u32;
    while !frontier.is_empty() {
        rounds += 1;
        if rounds > 1000 {
            return Err(EngineError::NonTerminating(
                "candidate key closure did not stabilize".into(),
            ));
        }
        let mut next = Vec::new();
        for kappa in &frontier {
            for f in &family.members {
                for delta in f.terms.keys() {
                    if delta.is_zero() {
                        continue;
                    }
                    let mut ok = true;
                    let mut cand = kappa.clone();
                    for (q, dq) in cand.q.iter_mut().zip(delta.q.iter()) {
                        *q -= dq;
                    }
                    for (x, dx) in cand.x.iter_mut().zip(delta.x.iter()) {
                        if *x < *dx {
                            ok = false;
                            break;
                        }
                        *x -= dx;
                    }
                    if ok {
                        for (t, dt) in cand.t.iter_mut().zip(delta.t.iter()) {
                            if *t < *dt {
                                ok = false;
                                break;
                            }
                            *t -= dt;
                        }
                    }
                    if ok
                        && ctx.policy.admits(&cand)
                        && !ctx.policy.key_grading(&cand).is_negative()
                        && keys.insert(cand.clone())
                    {
                        next.push(cand);
                    }
                }
            }
        }
        frontier = next;
    }
    let mut order: Vec<SeriesKey> = keys.into_iter().collect();
    order.sort_by(|a, b| {
        ctx.policy
            .key_grading(a)
            .cmp(&ctx.policy.key_grading(b))
            .then_with(|| a.cmp(b))
    });
    let mut coeffs: Vec<ScalarSeries> = (0..p).map(|_| ScalarSeries::zero(ctx.clone())).collect();
    let mut solved: BTreeMap<SeriesKey, Vec<BigRational>> = BTreeMap::new();
    for kappa in &order {
        // residual = LHS(kappa) - sum over already-solved keys
        let mut res = ZVec { terms: lhs.terms.get(kappa).cloned().unwrap_or_default() };
        for (kp, cvec) in &solved {
            // need delta with kp + delta = kappa
            let mut delta = kappa.clone();
            let mut ok = true;
            for (q, kq) in delta.q.iter_mut().zip(kp.q.iter()) {
                *q -= kq;
            }
            for (x, kx) in delta.x.iter_mut().zip(kp.x.iter()) {
                if *x < *kx {
                    ok = false;
                    break;
                }
                *x -= kx;
            }
            if ok {
                for (t, kt) in delta.t.iter_mut().zip(kp.t.iter()) {
                    if *t < *kt {
                        ok = false;
                        break;
                    }
                    *t -= kt;
                }
            }
            if !ok || delta.is_zero() {
                continue;
            }
            for (k, f) in family.members.iter().enumerate() {
                if cvec[k].is_zero() {
                    continue;
                }
                if let Some(zmap) = f.terms.get(&delta) {
                    for (&z, v) in zmap {
                        res.insert(z, v.scale(&-&cvec[k]));
                    }
                }
            }
        }
        if res.is_zero() {
            solved.insert(kappa.clone(), vec![BigRational::zero(); p]);
            continue;
        }
        let mut rhs = vec![BigRational::zero(); rows.len()];
        for (&z, v) in &res.terms {
            for (c, pl) in v.coords.iter().enumerate() {
                if pl.is_zero() {
                    continue;
                }
                match rows.iter().position(|&rc| rc == (z, c)) {
                    Some(r) => {
                        rhs[r] = pl.as_constant().ok_or_else(|| {
                            EngineError::RankDeficiency(
                                "non-constant residual in the structure-constant solve".into(),
                            )
                        })?;
                    }
                    None => {
                        return Err(EngineError::RankDeficiency(format!(
                            "residual at q={:?} x={:?} lies outside the span of the derivative family",
                            kappa.q, kappa.x
                        )));
                    }
                }
            }
        }
        let sol = mat.solve(&rhs).ok_or_else(|| {
            EngineError::RankDeficiency(format!(
                "inconsistent linear system at q={:?} x={:?}",
                kappa.q, kappa.x
            ))
        })?;
        for (k, c) in sol.iter().enumerate() {
            if !c.is_zero() {
                let nv = ctx.scalars.nvars();
                coeffs[k].insert(kappa.clone(), 0, Poly::constant(nv, c.clone()));
            }
        }
        solved.insert(kappa.clone(), sol);
    }
    Ok(coeffs)
}
