//! Elimination of positive z-powers against a derivative family.
//!
//! A series with negative-degree variables can carry arbitrarily high powers
//! of z, so its z-asymptotics are not of the form F z + G + O(1/z).  Adding
//! multiples of z d_v(series), with coefficients polynomial in z, preserves
//! membership of the underlying cone; choosing the multiples well removes
//! every offending term.  This module picks them greedily:
//!
//! - offenders are terms at z^p with p >= 2, or at z^1 off the unit class
//! - the worst offender first: highest z, then lowest grading, then first key
//! - each offender is solved against the leading profiles of the family,
//!   the algebra values of z d_v(series) at the zero key and z^1
//!
//! Subtracting a multiple of a family member replaces the offender by terms
//! of strictly higher grading, so the loop terminates under any finite
//! truncation policy.

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::EngineError;
use crate::qmat::QMatrix;
use crate::qnum::render_rational;
use crate::series::{MultiSeries, ScalarSeries, SeriesContext, SeriesKey, SeriesVariable};
use crate::Result;

/// A series to reshape and the directions whose derivatives may be added.
#[derive(Clone, Debug)]
pub struct BirkhoffProblem {
    pub series: MultiSeries,
    pub family: Vec<SeriesVariable>,
}

/// Every first derivative of the context: t-directions, then x-slots.
pub fn default_family(ctx: &SeriesContext) -> Vec<SeriesVariable> {
    let mut out = Vec::with_capacity(ctx.t_count + ctx.m());
    for i in 0..ctx.t_count {
        out.push(SeriesVariable::T(i));
    }
    for j in 0..ctx.m() {
        out.push(SeriesVariable::X(j));
    }
    out
}

#[derive(Clone, Debug)]
pub struct BirkhoffOutput {
    /// The reshaped series: the input plus the corrected family combination.
    pub series: MultiSeries,
    /// One z-polynomial coefficient series per family member; the output is
    /// input + sum_v corrections[v] * z d_v(input).
    pub corrections: Vec<ScalarSeries>,
    pub iterations: u32,
}

fn render_key(key: &SeriesKey) -> String {
    let qs: Vec<String> = key.q.iter().map(render_rational).collect();
    format!(
        "Q^({}) x=({}) t=({})",
        qs.join(","),
        key.x.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
        key.t.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
    )
}

fn key_add(a: &SeriesKey, b: &SeriesKey) -> SeriesKey {
    SeriesKey {
        q: a.q.iter().zip(&b.q).map(|(x, y)| x + y).collect(),
        x: a.x.iter().zip(&b.x).map(|(x, y)| x + y).collect(),
        t: a.t.iter().zip(&b.t).map(|(x, y)| x + y).collect(),
    }
}

/// Remove every positive z-power that does not belong to the asymptotic
/// shape F z + G + O(1/z), by adding multiples of z d_v(series).
pub fn eliminate_positive_z(problem: &BirkhoffProblem) -> Result<BirkhoffOutput> {
    let series = &problem.series;
    let ctx = series.ctx.clone();
    let dim = ctx.dim();
    let unit_idx = ctx.algebra.unit_of_sector[0];

    let mut members = Vec::with_capacity(problem.family.len());
    let mut lmat = QMatrix::zero(dim, problem.family.len());
    for (vi, var) in problem.family.iter().enumerate() {
        let member = match var {
            SeriesVariable::T(i) => series.derivative_t(*i),
            SeriesVariable::X(j) => series.derivative_x(*j),
        }
        .shift_z(1);
        let lead = member.coefficient(&ctx.zero_key(), 1);
        for (g, p) in lead.coords.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let c = p.as_constant().ok_or_else(|| {
                EngineError::Construction(format!(
                    "the derivative along {} has a non-constant leading profile",
                    var.describe()
                ))
            })?;
            lmat.data[g][vi] = c;
        }
        members.push(member);
    }

    let mut out = series.clone();
    let mut corrections = vec![ScalarSeries::zero(ctx.clone()); problem.family.len()];
    let mut iterations = 0u32;
    loop {
        // worst offender: highest z, then lowest grading, then first key,
        // then first coordinate
        let mut offender: Option<(SeriesKey, i64, usize)> = None;
        let mut rank: Option<(i64, BigRational)> = None;
        for (key, zmap) in &out.terms {
            for (&z, v) in zmap {
                if z < 1 {
                    continue;
                }
                for (g, p) in v.coords.iter().enumerate() {
                    if p.is_zero() || (z == 1 && g == unit_idx) {
                        continue;
                    }
                    let cand = (-z, ctx.policy.key_grading(key));
                    if rank.as_ref().map_or(true, |r| cand < *r) {
                        offender = Some((key.clone(), z, g));
                        rank = Some(cand);
                    }
                    break;
                }
            }
        }
        let Some((key, z, g)) = offender else { break };
        iterations += 1;
        if iterations > 100_000 {
            return Err(EngineError::NonTerminating(
                "positive-z elimination did not stabilize".into(),
            ));
        }
        let mut rhs = vec![BigRational::zero(); dim];
        rhs[g] = BigRational::one();
        let beta = lmat.solve(&rhs).ok_or_else(|| {
            EngineError::Obstruction(format!(
                "the z^{z} term along '{}' at {} is outside the span of the derivative family",
                ctx.algebra.basis[g].label,
                render_key(&key),
            ))
        })?;
        let c = out.coefficient(&key, z).coords[g].clone();
        for (vi, b) in beta.iter().enumerate() {
            if b.is_zero() {
                continue;
            }
            let coeff = c.scale(&-b);
            corrections[vi].insert(key.clone(), z - 1, coeff.clone());
            for (k2, zmap2) in &members[vi].terms {
                let sum = key_add(&key, k2);
                for (&z2, v2) in zmap2 {
                    out.insert(sum.clone(), z - 1 + z2, v2.scale_poly(&coeff));
                }
            }
        }
    }
    Ok(BirkhoffOutput { series: out, corrections, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use num_bigint::BigInt;

    use crate::abelian::{FGAbelianGroup, IVec};
    use crate::cohomology::{chen_ruan_from_fan, AlgebraMode, ChenRuanAlgebra};
    use crate::poly::Poly;
    use crate::qmat::QVec;
    use crate::qnum::{factorial, qi, qq};
    use crate::series::{
        asymptotics, i_function, j_function, mirror_map, CoordinateChart, TruncationPolicy, ZVec,
    };
    use crate::stackyfan::{ExtendedStackyFan, StackyFan};

    fn iv(v: &[i64]) -> IVec {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    fn qv(v: &[i64]) -> QVec {
        v.iter().map(|&x| qi(x)).collect()
    }

    fn ctx_for(
        ext: &ExtendedStackyFan,
        alg: Arc<ChenRuanAlgebra>,
        cutoff: i64,
        max_t: u32,
        x_caps: Vec<Option<BigInt>>,
    ) -> Arc<SeriesContext> {
        let policy = TruncationPolicy::new(ext.default_grading(), qi(cutoff), max_t, x_caps);
        let names = (0..ext.m()).map(|j| format!("x{j}")).collect();
        SeriesContext::new(alg.clone(), alg.coeff.clone(), ext.rank_l(), names, ext.n(), policy)
            .unwrap()
    }

    #[test]
    fn shaped_series_pass_through_unchanged() {
        // gerbe on a point: every summand already sits at z <= 1 on the unit
        let group = FGAbelianGroup::new(0, vec![BigInt::from(3)]).unwrap();
        let fan = StackyFan::new(group, vec![], vec![]).unwrap();
        let alg = Arc::new(chen_ruan_from_fan(&fan, AlgebraMode::Nonequivariant).unwrap());
        let ext =
            ExtendedStackyFan::extend(fan, vec![iv(&[0]), iv(&[1]), iv(&[2])], None, None).unwrap();
        let ctx = ctx_for(&ext, alg, 2, 0, vec![None, None, None]);
        let i = i_function(&ext, &ctx).unwrap();
        let out = eliminate_positive_z(&BirkhoffProblem {
            series: i.clone(),
            family: default_family(&ctx),
        })
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.series, i);
        assert!(out.corrections.iter().all(|c| c.terms.is_empty()));

        // weighted plane extended by its age-two-thirds sector
        let fan = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[3, -1]), iv(&[0, 1]), iv(&[-1, 0])],
            vec![vec![0, 1], vec![1, 2], vec![0, 2]],
        )
        .unwrap();
        let alg = Arc::new(chen_ruan_from_fan(&fan, AlgebraMode::Nonequivariant).unwrap());
        let ext = ExtendedStackyFan::extend(
            fan,
            vec![iv(&[0, 0]), iv(&[1, 0])],
            None,
            Some(vec![vec![qq(1, 3), qq(1, 3), qi(1)]]),
        )
        .unwrap();
        let ctx = ctx_for(&ext, alg, 3, 1, vec![None, None]);
        let i = i_function(&ext, &ctx).unwrap();
        assert!(asymptotics(&i).tail_ok);
        let out = eliminate_positive_z(&BirkhoffProblem {
            series: i.clone(),
            family: default_family(&ctx),
        })
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.series, i);
        assert!(out.corrections.iter().all(|c| c.terms.is_empty()));
    }

    /// The plane extended by the point class: two extension elements, the
    /// origin and a lattice point interior to a maximal cone.  The second
    /// slot has negative degree, so the series carries positive z-powers.
    fn plane_with_point_class() -> ExtendedStackyFan {
        let fan = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[-1, -1]), iv(&[1, 0]), iv(&[0, 1])],
            vec![vec![0, 1], vec![0, 2], vec![1, 2]],
        )
        .unwrap();
        ExtendedStackyFan::extend(
            fan,
            vec![iv(&[0, 0]), iv(&[0, -1])],
            None,
            Some(vec![qv(&[1, 1, 1])]),
        )
        .unwrap()
    }

    fn plane_run(cutoff: i64) -> (Arc<SeriesContext>, MultiSeries, BirkhoffOutput) {
        let ext = plane_with_point_class();
        let alg = Arc::new(
            chen_ruan_from_fan(&ext.fan, AlgebraMode::Nonequivariant).unwrap(),
        );
        let ctx = ctx_for(&ext, alg, cutoff, 2, vec![Some(BigInt::from(3)), Some(BigInt::from(2))]);
        let i = i_function(&ext, &ctx).unwrap().freeze_t(1).freeze_t(2);
        let problem = BirkhoffProblem {
            series: i.clone(),
            family: vec![SeriesVariable::X(0), SeriesVariable::T(0), SeriesVariable::X(1)],
        };
        let out = eliminate_positive_z(&problem).unwrap();
        (ctx, i, out)
    }

    #[test]
    fn point_class_extension_needs_one_quadratic_correction() {
        let (ctx, i, out) = plane_run(10);

        // before: a z^1 term along P^2 with coefficient x1^2/2
        let offending = SeriesKey { q: vec![qi(0)], x: vec![0, 2], t: vec![0; 3] };
        let before = i.coefficient(&offending, 1);
        assert!(before.coords[0].is_zero());
        assert!(before.coords[1].is_zero());
        assert_eq!(before.coords[2], Poly::constant(0, qq(1, 2)));
        assert!(!asymptotics(&i).tail_ok);

        // one elimination step: subtract (x1^2/2) z d/dx1
        assert_eq!(out.iterations, 1);
        assert!(out.corrections[0].terms.is_empty());
        assert!(out.corrections[1].terms.is_empty());
        let mut expected = BTreeMap::new();
        expected.insert(offending.clone(), BTreeMap::from([(0, Poly::constant(0, qq(-1, 2)))]));
        assert_eq!(out.corrections[2].terms, expected);

        // after: the asymptotic shape holds and the coordinate change reads
        // (x0 - x1^2 Q e^{t1} / 2) 1 + t1 P + x1 P^2
        let asym = asymptotics(&out.series);
        assert!(asym.tail_ok, "{:?}", asym.violations);
        let tau = mirror_map(&asym).unwrap();
        let mut expected_tau = MultiSeries::zero(ctx.clone());
        let key = |q: i64, x: [u32; 2], t: u32| SeriesKey {
            q: vec![qi(q)],
            x: x.to_vec(),
            t: vec![t, 0, 0],
        };
        let class = |idx: usize, c: BigRational| {
            let mut v = crate::cohomology::AlgebraElement::zero(3);
            v.coords[idx] = Poly::constant(0, c);
            v
        };
        expected_tau.insert(key(0, [1, 0], 0), 0, class(0, qi(1)));
        expected_tau.insert(key(0, [0, 0], 1), 0, class(1, qi(1)));
        expected_tau.insert(key(0, [0, 1], 0), 0, class(2, qi(1)));
        for p in 0..=2u32 {
            expected_tau.insert(
                key(1, [0, 2], p),
                0,
                class(0, qq(-1, 2) / factorial(p)),
            );
        }
        assert_eq!(tau, expected_tau);
    }

    #[test]
    fn reshaped_series_gives_the_small_j_function_on_the_plane() {
        let (_ctx, _i, out) = plane_run(10);
        let chart = CoordinateChart {
            directions: vec![0, 1, 2],
            variables: vec![SeriesVariable::X(0), SeriesVariable::T(0), SeriesVariable::X(1)],
            names: vec!["a0".into(), "a1".into(), "a2".into()],
        };
        let jout = j_function(&out.series, &chart).unwrap();
        assert!(jout.shape_ok, "{:?}", jout.notes);

        // with the point-class coordinate set to zero this is the small
        // J-function: z e^{(a0 + a1 P)/z} sum_l Q^l e^{l a1} / prod (P+bz)^3
        let jctx = jout.j.ctx.clone();
        let mut oracle = MultiSeries::zero(jctx.clone());
        for l in 0..=3i64 {
            let mut base = ZVec::single(1, jctx.unit());
            for b in 1..=l {
                for ray in 0..3 {
                    base.apply_reciprocal(&jctx, Some(ray), &qi(b)).unwrap();
                }
            }
            for p0 in 0..=3u32 {
                for p1 in 0..=2u32 {
                    for pe in 0..=2u32 {
                        let mut c = BigRational::one()
                            / (factorial(p0) * factorial(p1) * factorial(pe));
                        for _ in 0..pe {
                            c *= qi(l);
                        }
                        let key = SeriesKey {
                            q: vec![qi(l)],
                            x: vec![p0, p1 + pe, 0],
                            t: vec![],
                        };
                        for (&z, v) in &base.terms {
                            let mut w = v.scale(&c);
                            for _ in 0..p1 {
                                w = jctx.apply_divisor(&w, 0);
                            }
                            oracle.insert(key.clone(), z - p0 as i64 - p1 as i64, w);
                        }
                    }
                }
            }
        }
        assert_eq!(jout.j.freeze_x(2), oracle);
    }

    #[test]
    fn offender_outside_the_family_span_is_an_obstruction() {
        let ext = plane_with_point_class();
        let alg = Arc::new(
            chen_ruan_from_fan(&ext.fan, AlgebraMode::Nonequivariant).unwrap(),
        );
        let ctx = ctx_for(&ext, alg, 7, 2, vec![Some(BigInt::from(3)), Some(BigInt::from(2))]);
        let i = i_function(&ext, &ctx).unwrap().freeze_t(1).freeze_t(2);
        let problem = BirkhoffProblem {
            series: i,
            family: vec![SeriesVariable::X(0), SeriesVariable::T(0)],
        };
        match eliminate_positive_z(&problem) {
            Err(EngineError::Obstruction(msg)) => {
                assert!(msg.contains("outside the span"), "{msg}");
                assert!(msg.contains("z^1"), "{msg}");
            }
            other => panic!("expected an obstruction, got {other:?}"),
        }
    }

    #[test]
    fn corrections_are_stable_under_cutoff_refinement() {
        let (ctx7, _i7, out7) = plane_run(7);
        let (_ctx10, _i10, out10) = plane_run(10);
        for (c7, c10) in out7.corrections.iter().zip(&out10.corrections) {
            let filtered: BTreeMap<_, _> = c10
                .terms
                .iter()
                .filter(|(k, _)| ctx7.policy.admits(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            assert_eq!(c7.terms, filtered);
        }
        let filtered: BTreeMap<_, _> = out10
            .series
            .terms
            .iter()
            .filter(|(k, _)| ctx7.policy.admits(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        assert_eq!(out7.series.terms, filtered);
    }
}
