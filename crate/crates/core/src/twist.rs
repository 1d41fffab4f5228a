//! Characteristic-class twists of the extended hypergeometric series.
//!
//! - universal Bernoulli-polynomial series `g_series` and its shift identities
//! - twist data: one functional per line bundle summand, normalized so that it
//!   pairs through the curve-class part of an extended degree
//! - per-summand modification factors, either with a symbolic Euler parameter
//!   `kappa` or with generic symbols `s0, s1, ...` truncated by weight
//! - convexity diagnostics: positivity on the Mori cone and triviality of the
//!   isotropy weights f(b, j)
//! - the complete-intersection pipeline: twist, push through a user-supplied
//!   restriction matrix, take the `kappa -> 0` limit, and read off the
//!   quantum period from the unit component

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::cohomology::{AlgebraElement, ChenRuanAlgebra};
use crate::error::EngineError;
use crate::poly::{CoefficientRing, Poly};
use crate::qmat::{QMatrix, QVec};
use crate::qnum::{factorial, frac_part, is_integer, render_rational};
use crate::series::{i_function, i_function_with, MultiSeries, ScalarSeries, SeriesContext, ZVec};
use crate::stackyfan::{ExtendedDegree, ExtendedStackyFan};
use crate::Result;

fn binomial(n: u32, k: u32) -> BigRational {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn dot(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// B_0 .. B_max with the B_1 = -1/2 convention.
pub fn bernoulli_numbers(max: usize) -> Vec<BigRational> {
    let mut out: Vec<BigRational> = Vec::with_capacity(max + 1);
    for m in 0..=max {
        if m == 0 {
            out.push(BigRational::one());
            continue;
        }
        // sum_{j=0}^{m} C(m+1, j) B_j = 0
        let mut acc = BigRational::zero();
        for (j, b) in out.iter().enumerate() {
            acc += binomial(m as u32 + 1, j as u32) * b;
        }
        out.push(-acc / BigRational::from_integer(BigInt::from(m as i64 + 1)));
    }
    out
}

/// B_m(y) = sum_i C(m, i) B_i y^{m-i}.
pub fn bernoulli_polynomial(m: usize, y: &BigRational) -> BigRational {
    let nums = bernoulli_numbers(m);
    let mut acc = BigRational::zero();
    let mut ypow = BigRational::one();
    // accumulate from i = m downward so the y-power grows by one each step
    for i in (0..=m).rev() {
        acc += binomial(m as u32, i as u32) * &nums[i] * &ypow;
        ypow *= y;
    }
    acc
}

/// Ring carrying the universal series: x, z, and one symbol per index.
pub fn g_series_ring(order: u32) -> CoefficientRing {
    let mut names = vec!["x".to_string(), "z".to_string()];
    for k in 0..=order {
        names.push(format!("s{k}"));
    }
    let weights = vec![BigRational::zero(); names.len()];
    CoefficientRing::new(names, weights)
}

/// The double series sum_{l,m} s_{m+l-1} (B_m(y)/m!) (x^l/l!) z^{m-1},
/// truncated to symbol index at most `order`; defined for 0 <= y < 1.
pub fn g_series(y: &BigRational, order: u32) -> Result<Poly> {
    if y.is_negative() || y >= &BigRational::one() {
        return Err(EngineError::Invalid(format!(
            "the universal series takes a fractional part in [0, 1); got {}",
            render_rational(y)
        )));
    }
    let mut terms = BTreeMap::new();
    let nvars = 3 + order as usize;
    for k in 0..=order {
        // s_{m+l-1} with m + l = k + 1
        for l in 0..=(k + 1) {
            let m = k + 1 - l;
            let c = bernoulli_polynomial(m as usize, y) / (factorial(m) * factorial(l));
            if c.is_zero() {
                continue;
            }
            let mut e = vec![0i64; nvars];
            e[0] = l as i64;
            e[1] = m as i64 - 1;
            e[2 + k as usize] = 1;
            terms.insert(e, c);
        }
    }
    Ok(Poly { terms })
}

/// How the twist symbols are specialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TwistMode {
    /// One parameter `kappa`; the factor for a summand is the finite product
    /// of (kappa + E_j + a z) over the pairing ladder.
    Euler,
    /// Keep symbols s_1..s_order and the exponential e^{s_0} as `es0`,
    /// truncating by the weighted symbol degree.
    GenericS { order: u32 },
}

/// Twist data: one functional per line-bundle summand, in the coordinates
/// (curve-class part | extension part) of an extended degree.
#[derive(Clone, Debug)]
pub struct TwistSpec {
    pub mode: TwistMode,
    pub epsilons: Vec<QVec>,
}

/// Replace each functional by its canonical representative vanishing on the
/// extension directions.  The dropped components must be integral, and the
/// result must pair integrally with the integral degree lattice; otherwise
/// the bundle does not descend from the coarse picture and the fractional
/// pairings would depend on the chosen sector representative.
pub fn normalize_epsilons(ext: &ExtendedStackyFan, spec: &TwistSpec) -> Result<Vec<QVec>> {
    let rl = ext.rank_l();
    let m = ext.m();
    let kernel = ext.extended_kernel()?;
    let mut out = Vec::with_capacity(spec.epsilons.len());
    for (j, eps) in spec.epsilons.iter().enumerate() {
        if eps.len() != rl + m {
            return Err(EngineError::Invalid(format!(
                "twist functional {j} has {} coordinates, expected {}",
                eps.len(),
                rl + m
            )));
        }
        for (slot, c) in eps[rl..].iter().enumerate() {
            if !is_integer(c) {
                return Err(EngineError::Convexity(format!(
                    "twist functional {j} pairs non-integrally ({}) with extension direction {slot}; \
                     it is not an integral class",
                    render_rational(c)
                )));
            }
        }
        let mut norm = eps.clone();
        for c in norm[rl..].iter_mut() {
            *c = BigRational::zero();
        }
        for (widx, w) in kernel.iter().enumerate() {
            let wq: QVec = w.iter().map(|v| BigRational::from_integer(v.clone())).collect();
            let (q, _k) = ext.split(&wq)?;
            let pair = dot(&norm[..rl], &q);
            if !is_integer(&pair) {
                return Err(EngineError::Convexity(format!(
                    "twist functional {j} pairs non-integrally ({}) with integral degree {widx}; \
                     sector pairings would depend on the representative",
                    render_rational(&pair)
                )));
            }
        }
        out.push(norm);
    }
    Ok(out)
}

/// Express each normalized functional as a combination of the toric divisors,
/// so that it can act on cohomology.  Solves against the degree basis.
pub fn realize_euler_classes(ext: &ExtendedStackyFan, epsilons: &[QVec]) -> Result<Vec<QVec>> {
    let rl = ext.rank_l();
    let n = ext.n();
    let mut b = QMatrix::zero(rl, n);
    for (al, basis) in ext.degree_basis.iter().enumerate() {
        for i in 0..n {
            b.data[al][i] = basis[i].clone();
        }
    }
    epsilons
        .iter()
        .map(|eps| {
            b.solve(&eps[..rl]).ok_or_else(|| {
                EngineError::Construction(
                    "twist functional is not realizable as a divisor combination".into(),
                )
            })
        })
        .collect()
}

/// Positivity on the Mori cone and triviality of the isotropy weights.
#[derive(Clone, Debug)]
pub struct ConvexityReport {
    /// Every bundle summand pairs non-negatively with every Mori generator.
    pub positive: bool,
    /// Every isotropy weight f(b, j) vanishes (pulled back from the coarse
    /// space).
    pub coarse: bool,
    /// (bundle, Mori generator, pairing value).
    pub pairings: Vec<(usize, usize, BigRational)>,
    /// (box element, bundle, fractional weight f(b, j)).
    pub f_values: Vec<(usize, usize, BigRational)>,
    pub violations: Vec<String>,
}

/// One effective extended degree per box element, found by enumerating with
/// an escalating cutoff.
fn box_representatives(ext: &ExtendedStackyFan) -> Result<Vec<ExtendedDegree>> {
    let grading = ext.default_grading();
    let caps = vec![Some(BigInt::from(8)); ext.m()];
    let nboxes = ext.box_elems.len();
    for cutoff in [1i64, 2, 4, 8, 16, 32] {
        let groups = ext.enumerate_degrees(
            &grading,
            &BigRational::from_integer(BigInt::from(cutoff)),
            &caps,
        )?;
        if (0..nboxes).all(|b| groups.contains_key(&b)) {
            return Ok((0..nboxes).map(|b| groups[&b][0].clone()).collect());
        }
    }
    Err(EngineError::Construction(
        "some box element is not represented by any effective degree up to cutoff 32".into(),
    ))
}

/// Evaluate the two convexity conditions for the given twist data.  Violations
/// are reported, not raised; only malformed input is an error.
pub fn convexity_check(ext: &ExtendedStackyFan, spec: &TwistSpec) -> Result<ConvexityReport> {
    let normalized = normalize_epsilons(ext, spec)?;
    let rl = ext.rank_l();
    let n = ext.n();
    let dmat = QMatrix::from_columns_with_rows(&ext.degree_basis, n);
    let mut report = ConvexityReport {
        positive: true,
        coarse: true,
        pairings: Vec::new(),
        f_values: Vec::new(),
        violations: Vec::new(),
    };
    for (g_idx, gen) in ext.mori_generators.iter().enumerate() {
        let q = dmat.solve(gen).ok_or_else(|| {
            EngineError::Construction("Mori generator outside the span of the degree basis".into())
        })?;
        for (j, eps) in normalized.iter().enumerate() {
            let val = dot(&eps[..rl], &q);
            if val.is_negative() {
                report.positive = false;
                report.violations.push(format!(
                    "bundle {j} pairs negatively ({}) with Mori generator {g_idx}",
                    render_rational(&val)
                ));
            }
            report.pairings.push((j, g_idx, val));
        }
    }
    let reps = box_representatives(ext)?;
    let kernel = ext.extended_kernel()?;
    for (b, rep) in reps.iter().enumerate() {
        for (j, eps) in normalized.iter().enumerate() {
            let f = frac_part(&-dot(&eps[..rl], &rep.q));
            // a second representative must give the same weight
            if let Some(w) = kernel.first() {
                let lam2: QVec = rep
                    .lambda
                    .iter()
                    .zip(w.iter())
                    .map(|(a, b)| a + BigRational::from_integer(b.clone()))
                    .collect();
                let (q2, _) = ext.split(&lam2)?;
                let f2 = frac_part(&-dot(&eps[..rl], &q2));
                if f != f2 {
                    return Err(EngineError::Construction(format!(
                        "isotropy weight of box {b} depends on the representative ({} vs {})",
                        render_rational(&f),
                        render_rational(&f2)
                    )));
                }
            }
            if !f.is_zero() {
                report.coarse = false;
                report.violations.push(format!(
                    "bundle {j} has isotropy weight {} on box {b}; it is not pulled back \
                     from the coarse space",
                    render_rational(&f)
                ));
            }
            report.f_values.push((b, j, f));
        }
    }
    Ok(report)
}

/// Extend a coefficient ring with the symbols of the chosen mode.
pub fn twisted_scalars(base: &CoefficientRing, mode: &TwistMode) -> CoefficientRing {
    let mut names = base.names.clone();
    let mut weights = base.weights.clone();
    match mode {
        TwistMode::Euler => {
            names.push("kappa".into());
            weights.push(BigRational::one());
        }
        TwistMode::GenericS { order } => {
            names.push("es0".into());
            weights.push(BigRational::zero());
            for k in 1..=*order {
                names.push(format!("s{k}"));
                weights.push(BigRational::zero());
            }
        }
    }
    CoefficientRing::new(names, weights)
}

/// Twist data resolved against a concrete series context.
struct PreparedTwist {
    mode: TwistMode,
    /// Curve-class part of each normalized functional.
    eps_q: Vec<QVec>,
    /// Divisor realization of each functional.
    classes: Vec<QVec>,
    kappa: Option<usize>,
    es0: Option<usize>,
    /// Scalar-ring index of s_k at position k - 1.
    s_vars: Vec<usize>,
}

fn prepare(
    ext: &ExtendedStackyFan,
    ctx: &SeriesContext,
    spec: &TwistSpec,
) -> Result<PreparedTwist> {
    let normalized = normalize_epsilons(ext, spec)?;
    let rl = ext.rank_l();
    let eps_q: Vec<QVec> = normalized.iter().map(|e| e[..rl].to_vec()).collect();
    let classes = realize_euler_classes(ext, &normalized)?;
    let missing = |name: &str| {
        EngineError::Invalid(format!(
            "the series scalar ring has no '{name}' variable; extend it with twisted_scalars"
        ))
    };
    let mut kappa = None;
    let mut es0 = None;
    let mut s_vars = Vec::new();
    match &spec.mode {
        TwistMode::Euler => {
            kappa = Some(ctx.scalars.index_of("kappa").ok_or_else(|| missing("kappa"))?);
        }
        TwistMode::GenericS { order } => {
            es0 = Some(ctx.scalars.index_of("es0").ok_or_else(|| missing("es0"))?);
            for k in 1..=*order {
                let name = format!("s{k}");
                s_vars.push(ctx.scalars.index_of(&name).ok_or_else(|| missing(&name))?);
            }
        }
    }
    Ok(PreparedTwist { mode: spec.mode.clone(), eps_q, classes, kappa, es0, s_vars })
}

/// Values a with <a> = <p>, in (0, p] for p > 0 or in (p, 0] for p <= 0;
/// the flag says which side.
fn half_open_ladder(p: &BigRational) -> (Vec<BigRational>, bool) {
    let f = frac_part(p);
    let mut ladder = Vec::new();
    if p.is_positive() {
        let mut a = if f.is_zero() { BigRational::one() } else { f };
        while &a <= p {
            ladder.push(a.clone());
            a += BigRational::one();
        }
        (ladder, true)
    } else {
        let mut a = if f.is_zero() { BigRational::zero() } else { f - BigRational::one() };
        while &a > p {
            ladder.push(a.clone());
            a -= BigRational::one();
        }
        (ladder, false)
    }
}

fn zvec_merge(acc: &mut ZVec, other: ZVec) {
    for (z, v) in other.terms {
        acc.insert(z, v);
    }
}

fn zvec_scale_poly(v: &mut ZVec, p: &Poly) {
    let old = std::mem::take(&mut v.terms);
    for (z, w) in old {
        let scaled = w.scale_poly(p);
        if !scaled.is_zero() {
            v.terms.insert(z, scaled);
        }
    }
}

/// Multiply by (scalar + E + a z) where `scalar` is an optional ring element
/// and E acts as a divisor combination.
fn mul_affine(
    ctx: &SeriesContext,
    v: &ZVec,
    scalar: Option<&Poly>,
    class: &QVec,
    a: &BigRational,
) -> ZVec {
    let mut out = ZVec { terms: BTreeMap::new() };
    for (z, w) in &v.terms {
        if let Some(p) = scalar {
            out.insert(*z, w.scale_poly(p));
        }
        out.insert(*z, ctx.apply_divisor_combination(w, class));
        if !a.is_zero() {
            out.insert(z + 1, w.scale(a));
        }
    }
    out
}

/// Weighted symbol degree: s_k counts with weight k.
fn symbol_weight(expts: &[i64], s_vars: &[usize]) -> i64 {
    s_vars
        .iter()
        .enumerate()
        .map(|(kidx, &var)| (kidx as i64 + 1) * expts[var])
        .sum()
}

fn prune_zvec(v: &mut ZVec, s_vars: &[usize], cap: i64) {
    let old = std::mem::take(&mut v.terms);
    for (z, mut w) in old {
        for p in w.coords.iter_mut() {
            p.terms.retain(|e, _| symbol_weight(e, s_vars) <= cap);
        }
        if !w.is_zero() {
            v.terms.insert(z, w);
        }
    }
}

/// Apply sum_k s_k sign sum_a (E + a z)^k / k! to a value.
fn generic_exponent_apply(
    ctx: &SeriesContext,
    pt: &PreparedTwist,
    class: &QVec,
    ladder: &[BigRational],
    positive: bool,
    v: &ZVec,
) -> ZVec {
    let nv = ctx.scalars.nvars();
    let sign = if positive { BigRational::one() } else { -BigRational::one() };
    let mut out = ZVec { terms: BTreeMap::new() };
    for (kidx, &svar) in pt.s_vars.iter().enumerate() {
        let k = kidx as u32 + 1;
        let scl = &sign / factorial(k);
        let sk = Poly::var(nv, svar);
        for a in ladder {
            let mut w = v.clone();
            for _ in 0..k {
                w = mul_affine(ctx, &w, None, class, a);
            }
            w.scale(&scl);
            zvec_scale_poly(&mut w, &sk);
            zvec_merge(&mut out, w);
        }
    }
    out
}

/// Multiply a summand value by the modification factor of its degree.
fn apply_modification(
    pt: &PreparedTwist,
    ctx: &SeriesContext,
    deg: &ExtendedDegree,
    v: &mut ZVec,
) -> Result<()> {
    for (j, eps_q) in pt.eps_q.iter().enumerate() {
        let p = dot(eps_q, &deg.q);
        let class = &pt.classes[j];
        match pt.mode {
            TwistMode::Euler => {
                if !is_integer(&p) {
                    return Err(EngineError::Convexity(format!(
                        "bundle {j} pairs to the non-integer {} on an effective degree; \
                         use the generic-symbol mode",
                        render_rational(&p)
                    )));
                }
                if p.is_negative() {
                    return Err(EngineError::Convexity(format!(
                        "bundle {j} pairs negatively ({}) with an effective degree; \
                         the Euler-parameter factor is not polynomial",
                        render_rational(&p)
                    )));
                }
                let steps = p.to_integer().to_i64().ok_or_else(|| {
                    EngineError::NonTerminating("twist pairing too large".into())
                })?;
                let kp = Poly::var(ctx.scalars.nvars(), pt.kappa.unwrap());
                for a in 1..=steps {
                    *v = mul_affine(
                        ctx,
                        v,
                        Some(&kp),
                        class,
                        &BigRational::from_integer(BigInt::from(a)),
                    );
                }
            }
            TwistMode::GenericS { order } => {
                let (ladder, positive) = half_open_ladder(&p);
                let count = ladder.len() as i64;
                let m_j = if positive { count } else { -count };
                if m_j != 0 {
                    let es0 = pt.es0.unwrap();
                    let old = std::mem::take(&mut v.terms);
                    for (z, w) in old {
                        let shifted = AlgebraElement {
                            coords: w.coords.iter().map(|p| p.mul_var_pow(es0, m_j)).collect(),
                        };
                        v.terms.insert(z, shifted);
                    }
                }
                if ladder.is_empty() {
                    continue;
                }
                // exp of the symbol-weighted exponent, truncated by weight
                let mut acc = v.clone();
                let mut term = v.clone();
                for d in 1..=order {
                    term = generic_exponent_apply(ctx, pt, class, &ladder, positive, &term);
                    term.scale(&(BigRational::one() / BigRational::from_integer(BigInt::from(d))));
                    prune_zvec(&mut term, &pt.s_vars, order as i64);
                    if term.is_zero() {
                        break;
                    }
                    zvec_merge(&mut acc, term.clone());
                }
                *v = acc;
            }
        }
    }
    Ok(())
}

/// The modification factor of one extended degree, applied to the unit of its
/// sector: a map from z-power to algebra value.
pub fn modification_factor(
    ext: &ExtendedStackyFan,
    ctx: &Arc<SeriesContext>,
    deg: &ExtendedDegree,
    spec: &TwistSpec,
) -> Result<BTreeMap<i64, AlgebraElement>> {
    let pt = prepare(ext, ctx, spec)?;
    let b = ext.reduction(&deg.lambda)?;
    let bx = ext.box_element(b);
    let sector = ctx
        .algebra
        .sectors
        .iter()
        .position(|s| s.value == bx.value)
        .ok_or_else(|| {
            EngineError::Invalid(format!("the algebra has no sector with value {:?}", bx.value))
        })?;
    let mut v = ZVec::single(0, ctx.sector_unit(sector));
    apply_modification(&pt, ctx, deg, &mut v)?;
    Ok(v.terms)
}

/// The extended hypergeometric series with a per-summand modification factor.
/// An empty twist is the plain series, bit for bit.
pub fn twisted_i_function(
    ext: &ExtendedStackyFan,
    ctx: &Arc<SeriesContext>,
    spec: &TwistSpec,
) -> Result<MultiSeries> {
    if spec.epsilons.is_empty() {
        return i_function(ext, ctx);
    }
    let pt = prepare(ext, ctx, spec)?;
    let hook = |deg: &ExtendedDegree, _sector: usize, v: &mut ZVec| -> Result<()> {
        apply_modification(&pt, ctx, deg, v)
    };
    i_function_with(ext, ctx, Some(&hook))
}

/// Twist over the ambient stack, restrict along a user-supplied class matrix,
/// and take the `kappa -> 0` limit.  Returns the restricted series together
/// with its context over the target algebra.
///
/// `class_map` has one row per target basis class and one column per ambient
/// basis class.
pub fn ci_i_function(
    ext: &ExtendedStackyFan,
    ctx: &Arc<SeriesContext>,
    spec: &TwistSpec,
    target: Arc<ChenRuanAlgebra>,
    class_map: &QMatrix,
) -> Result<(Arc<SeriesContext>, MultiSeries)> {
    let report = convexity_check(ext, spec)?;
    if !report.positive || !report.coarse {
        return Err(EngineError::Convexity(format!(
            "the twist is not convex: {}",
            report.violations.join("; ")
        )));
    }
    if !matches!(spec.mode, TwistMode::Euler) {
        return Err(EngineError::Invalid(
            "the restriction pipeline needs the Euler-parameter mode".into(),
        ));
    }
    let kappa = ctx
        .scalars
        .index_of("kappa")
        .ok_or_else(|| EngineError::Invalid("the series scalar ring has no 'kappa' variable".into()))?;
    let ambient_dim = ctx.dim();
    let target_dim = target.dim();
    if class_map.data.len() != target_dim
        || class_map.data.iter().any(|r| r.len() != ambient_dim)
    {
        return Err(EngineError::Invalid(format!(
            "class matrix must be {target_dim} x {ambient_dim}"
        )));
    }
    let twisted = twisted_i_function(ext, ctx, spec)?;
    let mut names = ctx.scalars.names.clone();
    let mut weights = ctx.scalars.weights.clone();
    names.remove(kappa);
    weights.remove(kappa);
    let scalars = CoefficientRing::new(names, weights);
    let out_ctx = SeriesContext::new(
        target,
        scalars,
        ctx.rank_l,
        ctx.x_names.clone(),
        ctx.t_count,
        ctx.policy.clone(),
    )?;
    let mut out = MultiSeries::zero(out_ctx.clone());
    for (key, zmap) in &twisted.terms {
        for (&z, v) in zmap {
            let mut coords = Vec::with_capacity(target_dim);
            for row in &class_map.data {
                let mut p = Poly::zero();
                for (c, entry) in row.iter().enumerate() {
                    if !entry.is_zero() {
                        p = p.add(&v.coords[c].scale(entry));
                    }
                }
                let limited = p.substitute_zero(kappa).map_err(|_| {
                    EngineError::Convexity(
                        "kappa appears in a denominator; the convexity limit does not exist"
                            .into(),
                    )
                })?;
                coords.push(limited.remove_var(kappa));
            }
            out.insert(key.clone(), z, AlgebraElement { coords });
        }
    }
    Ok((out_ctx, out))
}

/// Unit-component coefficients at vanishing coordinates: the series of
/// degree-indexed invariants carried by the unit class.
pub fn quantum_period(series: &MultiSeries) -> Result<ScalarSeries> {
    let alg = &series.ctx.algebra;
    let unit = alg.unit();
    let nonzero: Vec<usize> = unit
        .coords
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_zero())
        .map(|(i, _)| i)
        .collect();
    let [idx] = nonzero[..] else {
        return Err(EngineError::Invalid(
            "the unit is not a single basis class; cannot read off its component".into(),
        ));
    };
    let comp = series.component(idx);
    let mut out = ScalarSeries::zero(series.ctx.clone());
    for (key, zmap) in &comp.terms {
        if key.x.iter().all(|&e| e == 0) && key.t.iter().all(|&e| e == 0) {
            for (&z, p) in zmap {
                out.insert(key.clone(), z, p.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abelian::{FGAbelianGroup, IVec};
    use crate::cohomology::{
        algebra_from_structure_constants, chen_ruan_from_fan, AlgebraDescription, AlgebraMode,
        BasisClass, Sector,
    };
    use crate::poly::PolyMatrix;
    use crate::qnum::{qi, qq};
    use crate::series::{
        asymptotics, j_function, CoordinateChart, SeriesKey, SeriesVariable, TruncationPolicy,
    };
    use crate::stackyfan::StackyFan;

    fn iv(v: &[i64]) -> IVec {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    fn qv(v: &[i64]) -> QVec {
        v.iter().map(|&x| qi(x)).collect()
    }

    #[test]
    fn bernoulli_table() {
        let b = bernoulli_numbers(8);
        let expected = vec![
            qi(1),
            qq(-1, 2),
            qq(1, 6),
            qi(0),
            qq(-1, 30),
            qi(0),
            qq(1, 42),
            qi(0),
            qq(-1, 30),
        ];
        assert_eq!(b, expected);
        assert_eq!(bernoulli_polynomial(2, &qq(1, 2)), qq(-1, 12));
        assert_eq!(bernoulli_polynomial(1, &qq(1, 3)), qq(1, 3) - qq(1, 2));
    }

    /// Substitute x -> x + c z by binomial expansion; stays within the same
    /// symbol index.
    fn shift_x(p: &Poly, c: &BigRational) -> Poly {
        let mut out = Poly::zero();
        for (e, coeff) in &p.terms {
            let l = e[0] as u32;
            for i in 0..=l {
                let mut cpow = BigRational::one();
                for _ in 0..(l - i) {
                    cpow *= c;
                }
                let mut e2 = e.clone();
                e2[0] = i as i64;
                e2[1] += (l - i) as i64;
                let mut t = BTreeMap::new();
                t.insert(e2, coeff * binomial(l, i) * cpow);
                out = out.add(&Poly { terms: t });
            }
        }
        out
    }

    #[test]
    fn g_series_shift_identities() {
        let order = 8u32;
        let g0 = g_series(&BigRational::zero(), order).unwrap();
        for y in [qi(0), qq(1, 3), qq(1, 2), qq(2, 3)] {
            let gy = g_series(&y, order).unwrap();
            // linear in the symbols
            for e in gy.terms.keys() {
                let total: i64 = e[2..].iter().sum();
                assert_eq!(total, 1);
            }
            // G_y(x, z) = G_0(x + y z, z)
            assert_eq!(gy, shift_x(&g0, &y), "shift identity fails at y = {y}");
        }
        // G_0(x + z, z) = G_0(x, z) + sum_k s_k x^k / k!
        let nvars = 3 + order as usize;
        let mut s_of_x = Poly::zero();
        for k in 0..=order {
            let mut e = vec![0i64; nvars];
            e[0] = k as i64;
            e[2 + k as usize] = 1;
            let mut t = BTreeMap::new();
            t.insert(e, BigRational::one() / factorial(k));
            s_of_x = s_of_x.add(&Poly { terms: t });
        }
        assert_eq!(shift_x(&g0, &qi(1)), g0.add(&s_of_x));
        // domain of the fractional part
        assert!(g_series(&qi(1), 3).is_err());
        assert!(g_series(&qq(-1, 3), 3).is_err());
    }

    /// Projective space P(1,1,1,3,3): the ambient stack of the running
    /// hypersurface example.
    fn ambient_fan() -> StackyFan {
        StackyFan::new(
            FGAbelianGroup::free(4),
            vec![
                iv(&[-1, -1, -3, -3]),
                iv(&[1, 0, 0, 0]),
                iv(&[0, 1, 0, 0]),
                iv(&[0, 0, 1, 0]),
                iv(&[0, 0, 0, 1]),
            ],
            vec![
                vec![0, 1, 2, 3],
                vec![0, 1, 2, 4],
                vec![0, 1, 3, 4],
                vec![0, 2, 3, 4],
                vec![1, 2, 3, 4],
            ],
        )
        .unwrap()
    }

    fn ambient_ext() -> ExtendedStackyFan {
        ExtendedStackyFan::extend(
            ambient_fan(),
            vec![iv(&[0, 0, 0, 0]), iv(&[0, 0, -1, -1])],
            None,
            Some(vec![vec![qq(1, 3), qq(1, 3), qq(1, 3), qi(1), qi(1)]]),
        )
        .unwrap()
    }

    fn euler_spec() -> TwistSpec {
        TwistSpec { mode: TwistMode::Euler, epsilons: vec![vec![qi(2), qi(0), qi(0)]] }
    }

    fn ambient_ctx(
        ext: &ExtendedStackyFan,
        mode: &TwistMode,
        cutoff: i64,
        max_t: u32,
        caps: Vec<Option<BigInt>>,
    ) -> Arc<SeriesContext> {
        let alg = Arc::new(chen_ruan_from_fan(&ambient_fan(), AlgebraMode::Nonequivariant).unwrap());
        let scalars = twisted_scalars(&alg.coeff, mode);
        let policy = TruncationPolicy::new(ext.default_grading(), qi(cutoff), max_t, caps);
        let names = (0..ext.m()).map(|j| format!("x{j}")).collect();
        SeriesContext::new(alg, scalars, ext.rank_l(), names, ext.n(), policy).unwrap()
    }

    #[test]
    fn normalization_and_divisor_realization() {
        let ext = ambient_ext();
        assert_eq!(ext.n(), 5);
        assert_eq!(ext.m(), 2);
        assert_eq!(ext.rank_l(), 1);
        assert_eq!(ext.q_degrees(), vec![qi(3)]);
        let mut ages: Vec<BigRational> =
            ext.box_elems.iter().map(|b| b.age.clone()).collect();
        ages.sort();
        assert_eq!(ages, vec![qi(0), qi(1), qi(2)]);

        let norm = normalize_epsilons(&ext, &euler_spec()).unwrap();
        assert_eq!(norm, vec![vec![qi(2), qi(0), qi(0)]]);

        // an integral extension component is folded away
        let shifted = TwistSpec {
            mode: TwistMode::Euler,
            epsilons: vec![vec![qi(2), qi(0), qi(1)]],
        };
        assert_eq!(normalize_epsilons(&ext, &shifted).unwrap(), norm);

        // a fractional extension component is rejected
        let broken = TwistSpec {
            mode: TwistMode::Euler,
            epsilons: vec![vec![qi(2), qi(0), qq(1, 2)]],
        };
        match normalize_epsilons(&ext, &broken) {
            Err(EngineError::Convexity(_)) => {}
            other => panic!("expected a convexity error, got {other:?}"),
        }

        let classes = realize_euler_classes(&ext, &norm).unwrap();
        assert_eq!(classes, vec![qv(&[6, 0, 0, 0, 0])]);
        assert_eq!(dot(&classes[0], &ext.degree_basis[0]), qi(2));
    }

    #[test]
    fn convexity_verdicts() {
        let ext = ambient_ext();
        let report = convexity_check(&ext, &euler_spec()).unwrap();
        assert!(report.positive);
        assert!(report.coarse);
        assert!(report.violations.is_empty());
        assert_eq!(report.f_values.len(), 3);
        assert!(report.f_values.iter().all(|(_, _, f)| f.is_zero()));
        assert!(report.pairings.iter().all(|(_, _, v)| !v.is_negative()));

        // a degree-one bundle on the weighted plane pairs positively but has
        // nonzero isotropy weights on the twisted sectors
        let wp = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[3, -1]), iv(&[0, 1]), iv(&[-1, 0])],
            vec![vec![0, 1], vec![1, 2], vec![0, 2]],
        )
        .unwrap();
        let ext = ExtendedStackyFan::extend(
            wp,
            vec![],
            None,
            Some(vec![vec![qq(1, 3), qq(1, 3), qi(1)]]),
        )
        .unwrap();
        let spec = TwistSpec { mode: TwistMode::Euler, epsilons: vec![vec![qq(1, 3)]] };
        let report = convexity_check(&ext, &spec).unwrap();
        assert!(report.positive);
        assert!(!report.coarse);
        let mut fs: Vec<BigRational> =
            report.f_values.iter().map(|(_, _, f)| f.clone()).collect();
        fs.sort();
        assert_eq!(fs, vec![qi(0), qq(1, 3), qq(2, 3)]);

        // the Euler-parameter factor refuses the fractional pairing outright
        let ctx = {
            let alg = Arc::new(
                chen_ruan_from_fan(&ext.fan, AlgebraMode::Nonequivariant).unwrap(),
            );
            let scalars = twisted_scalars(&alg.coeff, &TwistMode::Euler);
            let policy =
                TruncationPolicy::new(ext.default_grading(), qi(10), 0, vec![]);
            SeriesContext::new(alg, scalars, ext.rank_l(), vec![], ext.n(), policy).unwrap()
        };
        match twisted_i_function(&ext, &ctx, &spec) {
            Err(EngineError::Convexity(msg)) => assert!(msg.contains("non-integer")),
            other => panic!("expected a convexity error, got {other:?}"),
        }
    }

    /// Find the enumerated degree with the given curve class and no extension
    /// exponents.
    fn degree_with_q(ext: &ExtendedStackyFan, ctx: &Arc<SeriesContext>, q: i64) -> ExtendedDegree {
        let groups = ext
            .enumerate_degrees(&ctx.policy.grading, &ctx.policy.cutoff, &ctx.policy.x_caps)
            .unwrap();
        for degs in groups.values() {
            for d in degs {
                if d.q == vec![qi(q)] && d.k.iter().all(|k| k.is_zero()) {
                    return d.clone();
                }
            }
        }
        panic!("no degree with q = {q}");
    }

    #[test]
    fn euler_factor_expands_the_pairing_ladder() {
        let ext = ambient_ext();
        let caps = vec![Some(BigInt::zero()), Some(BigInt::zero())];
        let ctx = ambient_ctx(&ext, &TwistMode::Euler, 3, 0, caps);
        let deg = degree_with_q(&ext, &ctx, 1);
        let factor = modification_factor(&ext, &ctx, &deg, &euler_spec()).unwrap();

        // the ladder for pairing 2 is (kappa + E + z)(kappa + E + 2z)
        let b = ext.reduction(&deg.lambda).unwrap();
        let bx = ext.box_element(b);
        assert_eq!(bx.age, qi(2));
        let sector = ctx
            .algebra
            .sectors
            .iter()
            .position(|s| s.value == bx.value)
            .unwrap();
        let unit = ctx.sector_unit(sector);
        let e6 = qv(&[6, 0, 0, 0, 0]);
        let e1 = ctx.apply_divisor_combination(&unit, &e6);
        let e2 = ctx.apply_divisor_combination(&e1, &e6);
        let kp = Poly::var(ctx.scalars.nvars(), ctx.scalars.index_of("kappa").unwrap());
        let mut expected = BTreeMap::new();
        expected.insert(
            0,
            unit.scale_poly(&kp.mul(&kp)).add(&e1.scale_poly(&kp.scale(&qi(2)))).add(&e2),
        );
        expected.insert(1, unit.scale_poly(&kp.scale(&qi(3))).add(&e1.scale(&qi(3))));
        expected.insert(2, unit.scale(&qi(2)));
        assert_eq!(factor, expected);

        // with every symbol set to its trivial value the generic factor is 1
        let gen_spec = TwistSpec {
            mode: TwistMode::GenericS { order: 2 },
            epsilons: euler_spec().epsilons,
        };
        let gctx = ambient_ctx(
            &ext,
            &gen_spec.mode,
            3,
            0,
            vec![Some(BigInt::zero()), Some(BigInt::zero())],
        );
        let gfactor = modification_factor(&ext, &gctx, &deg, &gen_spec).unwrap();
        let es0 = gctx.scalars.index_of("es0").unwrap();
        let s1 = gctx.scalars.index_of("s1").unwrap();
        let s2 = gctx.scalars.index_of("s2").unwrap();
        let mut trivial = BTreeMap::new();
        for (&z, v) in &gfactor {
            let coords: Vec<Poly> = v
                .coords
                .iter()
                .map(|p| {
                    p.substitute(es0, &qi(1))
                        .unwrap()
                        .substitute(s1, &qi(0))
                        .unwrap()
                        .substitute(s2, &qi(0))
                        .unwrap()
                })
                .collect();
            let v2 = AlgebraElement { coords };
            if !v2.is_zero() {
                trivial.insert(z, v2);
            }
        }
        let gunit = gctx.sector_unit(sector);
        assert_eq!(trivial, BTreeMap::from([(0, gunit)]));
    }

    /// es0 -> kappa^1, s_k -> (-1)^{k-1} (k-1)! kappa^{-k}: the substitution
    /// turning generic symbols into the Euler parameter.
    fn specialize_to_euler(
        p: &Poly,
        es0: usize,
        s_vars: &[usize],
        euler_nvars: usize,
        kappa: usize,
    ) -> Poly {
        let mut out = Poly::zero();
        for (e, c) in &p.terms {
            let mut kexp = e[es0];
            let mut coeff = c.clone();
            for (kidx, &var) in s_vars.iter().enumerate() {
                let k = kidx as i64 + 1;
                let ek = e[var];
                kexp -= k * ek;
                for _ in 0..ek {
                    let sk = if (k - 1) % 2 == 0 {
                        factorial(k as u32 - 1)
                    } else {
                        -factorial(k as u32 - 1)
                    };
                    coeff *= sk;
                }
            }
            let mut e2 = vec![0i64; euler_nvars];
            e2[kappa] = kexp;
            let mut t = BTreeMap::new();
            t.insert(e2, coeff);
            out = out.add(&Poly { terms: t });
        }
        out
    }

    #[test]
    fn generic_symbols_specialize_to_the_euler_factor() {
        let ext = ambient_ext();
        let caps = || vec![Some(BigInt::from(3)), Some(BigInt::from(3))];
        let ectx = ambient_ctx(&ext, &TwistMode::Euler, 3, 0, caps());
        let gmode = TwistMode::GenericS { order: 3 };
        let gctx = ambient_ctx(&ext, &gmode, 3, 0, caps());
        let gspec = TwistSpec { mode: gmode.clone(), epsilons: euler_spec().epsilons };
        let es0 = gctx.scalars.index_of("es0").unwrap();
        let s_vars: Vec<usize> =
            (1..=3).map(|k| gctx.scalars.index_of(&format!("s{k}")).unwrap()).collect();
        let kappa = ectx.scalars.index_of("kappa").unwrap();
        let env = ectx.scalars.nvars();

        // one summand: the ladder has two rungs, below the symbol order,
        // so the truncated exponential is exact
        let deg = degree_with_q(&ext, &ectx, 1);
        let efac = modification_factor(&ext, &ectx, &deg, &euler_spec()).unwrap();
        let gfac = modification_factor(&ext, &gctx, &deg, &gspec).unwrap();
        let spec_gfac: BTreeMap<i64, AlgebraElement> = gfac
            .iter()
            .map(|(&z, v)| {
                let coords = v
                    .coords
                    .iter()
                    .map(|p| specialize_to_euler(p, es0, &s_vars, env, kappa))
                    .collect();
                (z, AlgebraElement { coords })
            })
            .filter(|(_, v)| !v.is_zero())
            .collect();
        assert_eq!(spec_gfac, efac);

        // and the whole series agrees after the same substitution
        let eseries = twisted_i_function(&ext, &ectx, &euler_spec()).unwrap();
        let gseries = twisted_i_function(&ext, &gctx, &gspec).unwrap();
        assert_eq!(
            eseries.terms.keys().collect::<Vec<_>>(),
            gseries.terms.keys().collect::<Vec<_>>()
        );
        for (key, zmap) in &gseries.terms {
            let emap = &eseries.terms[key];
            let smap: BTreeMap<i64, AlgebraElement> = zmap
                .iter()
                .map(|(&z, v)| {
                    let coords = v
                        .coords
                        .iter()
                        .map(|p| specialize_to_euler(p, es0, &s_vars, env, kappa))
                        .collect();
                    (z, AlgebraElement { coords })
                })
                .filter(|(_, v): &(i64, AlgebraElement)| !v.is_zero())
                .collect();
            assert_eq!(&smap, emap, "mismatch at key {key:?}");
        }
    }

    #[test]
    fn empty_twist_is_the_plain_series() {
        let wp = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[3, -1]), iv(&[0, 1]), iv(&[-1, 0])],
            vec![vec![0, 1], vec![1, 2], vec![0, 2]],
        )
        .unwrap();
        let ext = ExtendedStackyFan::extend(
            wp,
            vec![],
            None,
            Some(vec![vec![qq(1, 3), qq(1, 3), qi(1)]]),
        )
        .unwrap();
        let alg = Arc::new(chen_ruan_from_fan(&ext.fan, AlgebraMode::Nonequivariant).unwrap());
        let policy = TruncationPolicy::new(ext.default_grading(), qi(7), 1, vec![]);
        let ctx = SeriesContext::new(
            alg.clone(),
            alg.coeff.clone(),
            ext.rank_l(),
            vec![],
            ext.n(),
            policy,
        )
        .unwrap();
        let spec = TwistSpec { mode: TwistMode::Euler, epsilons: vec![] };
        let plain = i_function(&ext, &ctx).unwrap();
        let twisted = twisted_i_function(&ext, &ctx, &spec).unwrap();
        assert_eq!(plain, twisted);
    }

    /// Transcribe the closed hypergeometric form of the twisted series:
    /// enumerate (l, k0, k1) directly and build each summand from its ladder
    /// products, without the shared summation engine.
    #[test]
    fn twisted_series_matches_the_closed_form() {
        let ext = ambient_ext();
        let caps = vec![Some(BigInt::from(4)), Some(BigInt::from(4))];
        let ctx = ambient_ctx(&ext, &TwistMode::Euler, 4, 0, caps);
        let computed = twisted_i_function(&ext, &ctx, &euler_spec()).unwrap();

        let kappa = ctx.scalars.index_of("kappa").unwrap();
        let kp = Poly::var(ctx.scalars.nvars(), kappa);
        let e_p = qv(&[1, 0, 0, 0, 0]);
        let e_3p = qv(&[3, 0, 0, 0, 0]);
        let e6 = qv(&[6, 0, 0, 0, 0]);
        let mut expected = MultiSeries::zero(ctx.clone());
        for l in 0..=1i64 {
            for k0 in 0..=4i64 {
                for k1 in 0..=4i64 {
                    // lambda = l (1/3,1/3,1/3,1,1 | 0,0) + k0 mu_1 + k1 mu_2
                    let a3 = qq(l - k1, 3);
                    let lambda = vec![
                        a3.clone(),
                        a3.clone(),
                        a3.clone(),
                        qi(l),
                        qi(l),
                        qi(k0),
                        qi(k1),
                    ];
                    let b = ext.reduction(&lambda).unwrap();
                    let bx = ext.box_element(b);
                    let sector = ctx
                        .algebra
                        .sectors
                        .iter()
                        .position(|s| s.value == bx.value)
                        .unwrap();
                    let mut v = ZVec::single(0, ctx.sector_unit(sector));
                    // three rays of class P at (l - k1)/3, two of class 3P at l
                    for _ in 0..3 {
                        let (ladder, positive) = half_open_ladder(&a3);
                        for a in &ladder {
                            if positive {
                                v.apply_reciprocal(&ctx, Some(0), a).unwrap();
                            } else {
                                let next = mul_affine(&ctx, &v, None, &e_p, a);
                                v = next;
                            }
                        }
                    }
                    for ray in [3usize, 4] {
                        for a in 1..=l {
                            v.apply_reciprocal(&ctx, Some(ray), &qi(a)).unwrap();
                        }
                        let _ = (ray, &e_3p);
                    }
                    // extension slots and the twist ladder
                    v.scale(&(BigRational::one() / (factorial(k0 as u32) * factorial(k1 as u32))));
                    v.shift_z(-(k0 + k1));
                    for bstep in 1..=(2 * l) {
                        let next = mul_affine(&ctx, &v, Some(&kp), &e6, &qi(bstep));
                        v = next;
                    }
                    let key = SeriesKey {
                        q: vec![qi(l)],
                        x: vec![k0 as u32, k1 as u32],
                        t: vec![0; 5],
                    };
                    for (&z, val) in &v.terms {
                        expected.insert(key.clone(), z + 1, val.clone());
                    }
                }
            }
        }
        assert_eq!(computed, expected);
    }

    /// The restriction target: a polynomial algebra Q[P]/(P^4) on the
    /// untwisted sector plus two rank-one point sectors.
    fn restriction_target() -> Arc<ChenRuanAlgebra> {
        let shift = |dim: usize, entries: &[(usize, usize, i64)]| {
            let mut m = PolyMatrix::zero(dim);
            for &(r, c, v) in entries {
                *m.entry_mut(r, c) = Poly::constant(0, qi(v));
            }
            m
        };
        let p_action = shift(6, &[(1, 0, 1), (2, 1, 1), (3, 2, 1)]);
        let p3_action = shift(6, &[(1, 0, 3), (2, 1, 3), (3, 2, 3)]);
        let desc = AlgebraDescription {
            coeff: CoefficientRing::rational(),
            sectors: vec![
                Sector { value: iv(&[0, 0, 0, 0]), age: qi(0) },
                Sector { value: iv(&[0, 0, -1, -1]), age: qi(1) },
                Sector { value: iv(&[0, 0, -2, -2]), age: qi(2) },
            ],
            basis: vec![
                BasisClass { sector: 0, label: "1".into(), coh_degree: qi(0) },
                BasisClass { sector: 0, label: "P".into(), coh_degree: qi(1) },
                BasisClass { sector: 0, label: "P^2".into(), coh_degree: qi(2) },
                BasisClass { sector: 0, label: "P^3".into(), coh_degree: qi(3) },
                BasisClass { sector: 1, label: "1".into(), coh_degree: qi(0) },
                BasisClass { sector: 2, label: "1".into(), coh_degree: qi(0) },
            ],
            unit_of_sector: vec![0, 4, 5],
            divisor_action: vec![
                p_action.clone(),
                p_action.clone(),
                p_action,
                p3_action.clone(),
                p3_action,
            ],
        };
        Arc::new(algebra_from_structure_constants(desc).unwrap())
    }

    /// Restriction matrix: ambient P^d maps to the target P^d (zero for
    /// d = 4), sector units map to sector units, twisted classes of positive
    /// degree map to zero.  Built from the divisor action so it does not
    /// depend on basis ordering conventions.
    fn restriction_matrix(
        ambient: &ChenRuanAlgebra,
        target: &ChenRuanAlgebra,
    ) -> QMatrix {
        let mut m = QMatrix::zero(target.dim(), ambient.dim());
        let e_p = qv(&[1, 0, 0, 0, 0]);
        // untwisted tower: P^d 1 is a single basis class with some scale
        let mut w = ambient.unit();
        for d in 0..=4usize {
            let nonzero: Vec<(usize, BigRational)> = w
                .coords
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.is_zero())
                .map(|(i, p)| (i, p.as_constant().unwrap()))
                .collect();
            let [(col, ref gamma)] = nonzero[..] else {
                panic!("the untwisted tower is not one-dimensional per degree")
            };
            if d <= 3 {
                m.data[d][col] = BigRational::one() / gamma;
            }
            if d < 4 {
                w = ambient.apply_divisor_combination(&w, &e_p);
            }
        }
        // twisted sector units, matched by sector value
        for (t_sector, a_value) in [(1usize, iv(&[0, 0, -1, -1])), (2, iv(&[0, 0, -2, -2]))] {
            let a_sector = ambient
                .sectors
                .iter()
                .position(|s| s.value == a_value)
                .unwrap();
            let col = ambient.unit_of_sector[a_sector];
            let row = target.unit_of_sector[t_sector];
            m.data[row][col] = BigRational::one();
        }
        m
    }

    fn ci_run(
        cutoff: i64,
        max_t: u32,
        caps: Vec<Option<BigInt>>,
    ) -> (Arc<SeriesContext>, MultiSeries) {
        let ext = ambient_ext();
        let ctx = ambient_ctx(&ext, &TwistMode::Euler, cutoff, max_t, caps);
        let target = restriction_target();
        let class_map = restriction_matrix(&ctx.algebra, &target);
        ci_i_function(&ext, &ctx, &euler_spec(), target, &class_map).unwrap()
    }

    /// Coefficients of the mirror-map component along the age-one unit:
    /// [x^{3m+1}] = (-1)^m prod_{j<m} (j + 1/3)^3 / (3m+1)!.
    fn age_one_mirror_coefficient(m: i64) -> BigRational {
        let mut c = BigRational::one() / factorial(3 * m as u32 + 1);
        if m % 2 == 1 {
            c = -c;
        }
        for j in 0..m {
            let f = qq(1, 3) + qi(j);
            c *= f.clone() * f.clone() * f;
        }
        c
    }

    #[test]
    fn restriction_limit_and_mirror_component() {
        let (ctx, series) = ci_run(2, 0, vec![Some(BigInt::zero()), Some(BigInt::from(10))]);
        let asym = asymptotics(&series);
        assert!(asym.tail_ok, "{:?}", asym.violations);
        // unit coefficient of z is exactly 1
        let mut one = ScalarSeries::zero(ctx.clone());
        one.insert(ctx.zero_key(), 0, Poly::one(ctx.scalars.nvars()));
        assert_eq!(asym.f, one);
        // the age-one component of the z^0 slice is the pure series in x1
        let comp = asym.g.component(4);
        let mut expected = ScalarSeries::zero(ctx.clone());
        for m in 0..=3i64 {
            let key = SeriesKey {
                q: vec![qi(0)],
                x: vec![0, (3 * m + 1) as u32],
                t: vec![0; 5],
            };
            expected.insert(key, 0, Poly::constant(0, age_one_mirror_coefficient(m)));
        }
        assert_eq!(comp, expected);
    }

    #[test]
    fn restricted_j_function_matches_the_hypergeometric_form() {
        let (_ctx, series) = ci_run(9, 2, vec![Some(BigInt::from(2)), Some(BigInt::from(4))]);
        let mut frozen = series;
        for i in 1..5 {
            frozen = frozen.freeze_t(i);
        }
        let chart = CoordinateChart {
            directions: vec![1, 0, 4],
            variables: vec![SeriesVariable::T(0), SeriesVariable::X(0), SeriesVariable::X(1)],
            names: vec!["tau".into(), "xi0".into(), "xi1".into()],
        };
        let out = j_function(&frozen, &chart).unwrap();
        assert!(out.shape_ok, "{:?}", out.notes);

        // the mirror map: tau itself, xi0 plus a correction from the degree
        // with unit pairing ladder, and the pure age-one series
        let key = |q: i64, x: [u32; 3]| SeriesKey { q: vec![qi(q)], x: x.to_vec(), t: vec![] };
        assert_eq!(out.mirror[0].coefficient(&key(0, [1, 0, 0]), 0), Poly::constant(0, qi(1)));
        assert_eq!(out.mirror[1].coefficient(&key(0, [0, 1, 0]), 0), Poly::constant(0, qi(1)));
        assert_eq!(out.mirror[1].coefficient(&key(1, [0, 0, 1]), 0), Poly::constant(0, qi(2)));
        assert_eq!(out.mirror[2].coefficient(&key(0, [0, 0, 1]), 0), Poly::constant(0, qi(1)));
        assert_eq!(
            out.mirror[2].coefficient(&key(0, [0, 0, 4]), 0),
            Poly::constant(0, qq(-1, 648))
        );
        // the reversed chart: x1 = xi1 + xi1^4/648 + ..., and x0 picks up
        // -2 Q e^{tau/3} g(xi1); the tau-coefficient is 1/3 because the
        // degree with one unit of Q pairs to 1/3 with the first divisor
        assert_eq!(out.inverse[2].coefficient(&key(0, [0, 0, 1]), 0), Poly::constant(0, qi(1)));
        assert_eq!(
            out.inverse[2].coefficient(&key(0, [0, 0, 4]), 0),
            Poly::constant(0, qq(1, 648))
        );
        assert_eq!(
            out.inverse[1].coefficient(&key(1, [0, 0, 1]), 0),
            Poly::constant(0, qi(-2))
        );
        assert_eq!(
            out.inverse[1].coefficient(&key(1, [1, 0, 1]), 0),
            Poly::constant(0, qq(-2, 3))
        );

        // unit component of J against the hypergeometric closed form, with
        // the full coordinate change: x0 = xi0 - 2 Q e^{tau/3} g(xi1),
        // x1 = g(xi1); each degree of l units of Q carries e^{(l/3) tau}
        let jctx = out.j.ctx.clone();
        let nv = jctx.scalars.nvars();
        let mut g = ScalarSeries::zero(jctx.clone());
        g.insert(key(0, [0, 0, 1]), 0, Poly::one(nv));
        g.insert(key(0, [0, 0, 4]), 0, Poly::constant(nv as usize, qq(1, 648)));
        let mut e_tau = ScalarSeries::zero(jctx.clone());
        for p in 0..=2u32 {
            let mut c = BigRational::one() / factorial(p);
            for _ in 0..p {
                c *= qq(1, 3);
            }
            e_tau.insert(key(0, [p, 0, 0]), 0, Poly::constant(nv, c));
        }
        let mut xi0 = ScalarSeries::zero(jctx.clone());
        xi0.insert(key(0, [0, 1, 0]), 0, Poly::one(nv));
        let mut q1 = ScalarSeries::zero(jctx.clone());
        q1.insert(key(1, [0, 0, 0]), 0, Poly::one(nv));
        let x0 = xi0.sub(&q1.mul(&e_tau).mul(&g).scale(&qi(2)));
        let mut expected = ScalarSeries::zero(jctx.clone());
        for l in 0..=3i64 {
            // e^{(l/3) tau}
            let mut etl = ScalarSeries::zero(jctx.clone());
            for p in 0..=2u32 {
                let mut c = BigRational::one() / factorial(p);
                for _ in 0..p {
                    c *= qq(l, 3);
                }
                etl.insert(key(0, [p, 0, 0]), 0, Poly::constant(nv, c));
            }
            for k0 in 0..=2u32 {
                for k1 in 0..=l {
                    if (l - k1) % 3 != 0 {
                        continue;
                    }
                    let c = (l - k1) / 3;
                    let mut coeff = factorial(2 * l as u32)
                        / (factorial(l as u32) * factorial(l as u32))
                        / factorial(k0)
                        / factorial(k1 as u32);
                    let cf = factorial(c as u32);
                    coeff /= cf.clone() * cf.clone() * cf;
                    let mut term = ScalarSeries::zero(jctx.clone());
                    term.insert(key(l, [0, 0, 0]), 1 - k0 as i64 - l, Poly::constant(nv, coeff));
                    let term = term
                        .mul(&etl)
                        .mul(&x0.pow(k0))
                        .mul(&g.pow(k1 as u32));
                    expected = expected.add(&term);
                }
            }
        }
        assert_eq!(out.j.component(0), expected);
    }

    #[test]
    fn quantum_period_of_the_restriction() {
        let (_ctx, series) = ci_run(27, 0, vec![Some(BigInt::zero()), Some(BigInt::zero())]);
        let qp = quantum_period(&series).unwrap();
        let mut grid = BTreeMap::new();
        for (k, zmap) in &qp.terms {
            for (&z, p) in zmap {
                grid.insert((k.q[0].clone(), z), p.as_constant().unwrap());
            }
        }
        let expected = BTreeMap::from([
            ((qi(0), 1), qi(1)),
            ((qi(3), -2), qi(20)),
            ((qi(6), -5), qq(231, 2)),
            ((qi(9), -8), qq(12155, 54)),
        ]);
        assert_eq!(grid, expected);
    }

    #[test]
    fn restriction_rejects_bad_twists() {
        // the weighted plane with the degree-one bundle is not coarse
        let wp = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[3, -1]), iv(&[0, 1]), iv(&[-1, 0])],
            vec![vec![0, 1], vec![1, 2], vec![0, 2]],
        )
        .unwrap();
        let ext = ExtendedStackyFan::extend(
            wp,
            vec![],
            None,
            Some(vec![vec![qq(1, 3), qq(1, 3), qi(1)]]),
        )
        .unwrap();
        let alg = Arc::new(chen_ruan_from_fan(&ext.fan, AlgebraMode::Nonequivariant).unwrap());
        let scalars = twisted_scalars(&alg.coeff, &TwistMode::Euler);
        let policy = TruncationPolicy::new(ext.default_grading(), qi(5), 0, vec![]);
        let ctx =
            SeriesContext::new(alg.clone(), scalars, ext.rank_l(), vec![], ext.n(), policy)
                .unwrap();
        let spec = TwistSpec { mode: TwistMode::Euler, epsilons: vec![vec![qq(1, 3)]] };
        let id = QMatrix::identity(alg.dim());
        match ci_i_function(&ext, &ctx, &spec, alg.clone(), &id) {
            Err(EngineError::Convexity(msg)) => assert!(msg.contains("coarse")),
            other => panic!("expected a convexity error, got {other:?}"),
        }

        // generic symbols cannot be pushed through the restriction limit
        let ext2 = ambient_ext();
        let gmode = TwistMode::GenericS { order: 2 };
        let gctx = ambient_ctx(
            &ext2,
            &gmode,
            2,
            0,
            vec![Some(BigInt::zero()), Some(BigInt::zero())],
        );
        let gspec = TwistSpec { mode: gmode, epsilons: euler_spec().epsilons };
        let target = restriction_target();
        let cm = restriction_matrix(&gctx.algebra, &target);
        match ci_i_function(&ext2, &gctx, &gspec, target, &cm) {
            Err(EngineError::Invalid(_)) => {}
            other => panic!("expected an invalid-mode error, got {other:?}"),
        }
    }
}
