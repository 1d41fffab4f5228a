//! Command implementations: each builds engine objects from the input
//! document, runs one pipeline stage, and packs the result into an
//! `OutputDoc`.

use std::sync::Arc;

use num_rational::BigRational;
use num_traits::ToPrimitive;

use toricgw::birkhoff::{eliminate_positive_z, BirkhoffProblem};
use toricgw::cohomology::ChenRuanAlgebra;
use toricgw::qnum::render_rational;
use toricgw::series::{
    asymptotics, check_extended_shape, check_sharp, derivative_word_family, i_function,
    j_function, mirror_map, quantum_structure_constants, MultiSeries, SeriesContext, SharpMode,
    TruncationPolicy,
};
use toricgw::stackyfan::ExtendedStackyFan;
use toricgw::twist::{ci_i_function, convexity_check, quantum_period, twisted_i_function};
use toricgw::{EngineError, Result};

use crate::input::{
    build_algebra, build_chart, build_context, build_ext, build_family, build_fan,
    build_degree_table, build_policy, build_restriction, build_twist, plain_scalars,
    twist_scalars, InputDocument, PolicyOverrides,
};
use crate::output::*;

/// Command-line flags that adjust how a command runs.
#[derive(Clone, Debug, Default)]
pub struct CommandFlags {
    pub cutoff: Option<BigRational>,
    pub t_order: Option<u32>,
    pub mode: Option<String>,
}

pub const COMMANDS: &[&str] = &[
    "validate", "box", "mori", "degrees", "ifunction", "sharp", "mirror-map", "jfunction",
    "qproduct", "twist", "ci", "qperiod", "birkhoff",
];

pub fn run(command: &str, doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    match command {
        "validate" => cmd_validate(doc, flags),
        "box" => cmd_box(doc),
        "mori" => cmd_mori(doc, flags),
        "degrees" => cmd_degrees(doc, flags),
        "ifunction" => cmd_ifunction(doc, flags),
        "sharp" => cmd_sharp(doc, flags),
        "mirror-map" => cmd_mirror_map(doc, flags),
        "jfunction" => cmd_jfunction(doc, flags),
        "qproduct" => cmd_qproduct(doc, flags),
        "twist" => cmd_twist(doc, flags),
        "ci" => cmd_ci(doc, flags),
        "qperiod" => cmd_qperiod(doc, flags),
        "birkhoff" => cmd_birkhoff(doc, flags),
        other => Err(EngineError::Parse(format!(
            "unknown command `{other}`; expected one of {}",
            COMMANDS.join(", ")
        ))),
    }
}

struct Setup {
    ext: ExtendedStackyFan,
    algebra: Arc<ChenRuanAlgebra>,
    policy: TruncationPolicy,
}

fn setup(doc: &InputDocument, flags: &CommandFlags) -> Result<Setup> {
    let fan = build_fan(doc)?;
    let messages = fan.validate();
    if !messages.is_empty() {
        return Err(EngineError::Invalid(messages.join("; ")));
    }
    let algebra = build_algebra(doc, &fan)?;
    let ext = build_ext(doc, fan)?;
    let over = PolicyOverrides { cutoff: flags.cutoff.clone(), max_t: flags.t_order };
    let policy = build_policy(doc, &ext, &over)?;
    Ok(Setup { ext, algebra, policy })
}

fn plain_context(s: &Setup) -> Result<Arc<SeriesContext>> {
    build_context(&s.ext, s.algebra.clone(), plain_scalars(&s.algebra), s.policy.clone())
}

/// Zero out the document's frozen divisor and extension variables.
fn apply_freezes(doc: &InputDocument, mut series: MultiSeries) -> Result<MultiSeries> {
    for &i in &doc.freeze_t {
        if i == 0 || i > series.ctx.t_count {
            return Err(EngineError::Invalid(format!(
                "freeze_t: index {i} out of range 1..={}",
                series.ctx.t_count
            )));
        }
        series = series.freeze_t(i - 1);
    }
    for &j in &doc.freeze_x {
        if j >= series.ctx.m() {
            return Err(EngineError::Invalid(format!(
                "freeze_x: index {j} out of range 0..{}",
                series.ctx.m()
            )));
        }
        series = series.freeze_x(j);
    }
    Ok(series)
}

fn policy_out(policy: &TruncationPolicy) -> PolicyOut {
    PolicyOut {
        cutoff: render_rational(&policy.cutoff),
        max_t: policy.max_t_order,
        x_caps: policy
            .x_caps
            .iter()
            .map(|c| c.as_ref().map(|v| v.to_string()))
            .collect(),
    }
}

fn cmd_validate(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let fan = &s.ext.fan;
    let grading = s.ext.default_grading();
    Ok(OutputDoc::Validate(ValidateOut {
        name: doc.name.clone(),
        group: GroupOut { rank: doc.group.rank, torsion: doc.group.torsion.clone() },
        rays: fan.rays.iter().map(render_ivec).collect(),
        cones: fan.max_cones.clone(),
        complete: fan.is_complete(),
        box_count: fan.box_elements().len(),
        extension: s.ext.s_elements.iter().map(render_ivec).collect(),
        algebra_dim: s.algebra.dim(),
        basis: basis_labels(&s.algebra),
        q_degrees: render_qvec(&s.ext.q_degrees()),
        x_degrees: (0..s.ext.m())
            .map(|j| render_rational(&s.ext.x_degree(j)))
            .collect(),
        grading: GradingOut {
            q_weights: render_qvec(&grading.q_weights),
            x_weights: render_qvec(&grading.x_weights),
        },
        policy: policy_out(&s.policy),
    }))
}

fn cmd_box(doc: &InputDocument) -> Result<OutputDoc> {
    let fan = build_fan(doc)?;
    let messages = fan.validate();
    if !messages.is_empty() {
        return Err(EngineError::Invalid(messages.join("; ")));
    }
    let elements = fan
        .box_elements()
        .into_iter()
        .map(|b| BoxElementOut {
            value: render_ivec(&b.value),
            sigma: b.sigma,
            frac: b.frac.iter().map(render_rational).collect(),
            age: render_rational(&b.age),
        })
        .collect();
    Ok(OutputDoc::Box(BoxOut { elements }))
}

fn cmd_mori(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    Ok(OutputDoc::Mori(MoriOut {
        generators: s.ext.mori_generators.iter().map(render_qvec).collect(),
        facets: s.ext.mori_facets_q.iter().map(render_qvec).collect(),
        degree_basis: s.ext.degree_basis.iter().map(render_qvec).collect(),
        q_degrees: render_qvec(&s.ext.q_degrees()),
    }))
}

fn cmd_degrees(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let table = s.ext.enumerate_degrees(
        &s.policy.grading,
        &s.policy.cutoff,
        &s.policy.x_caps,
    )?;
    let mut degrees = Vec::new();
    for (box_index, degs) in &table {
        let bv = render_ivec(&s.ext.box_elems[*box_index].value);
        for d in degs {
            let k: Vec<u32> = d
                .k
                .iter()
                .map(|v| v.to_u32().expect("extension exponents fit in u32"))
                .collect();
            let k_rats: Vec<BigRational> =
                d.k.iter().map(|v| BigRational::from_integer(v.clone())).collect();
            degrees.push(DegreeOut {
                q: render_qvec(&d.q),
                k,
                lambda: render_qvec(&d.lambda),
                d: render_qvec(&d.d),
                box_index: *box_index,
                box_value: bv.clone(),
                grading: render_rational(&s.policy.grading.value(&d.q, &k_rats)),
            });
        }
    }
    Ok(OutputDoc::Degrees(DegreesOut { count: degrees.len(), degrees }))
}

fn cmd_ifunction(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let ctx = plain_context(&s)?;
    let series = apply_freezes(doc, i_function(&s.ext, &ctx)?)?;
    let homogeneity = match build_degree_table(doc, &s.ext)? {
        None => None,
        Some((grading, total)) => Some(HomogeneityOut {
            total: render_rational(&total),
            violations: series.check_homogeneous(&grading, &total),
        }),
    };
    Ok(OutputDoc::Ifunction(IfunctionOut { terms: render_series(&series), homogeneity }))
}

fn cmd_sharp(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let mode = flags.mode.as_deref().unwrap_or("shape");
    let report = match mode {
        "shape" => {
            let ctx = plain_context(&s)?;
            let series = i_function(&s.ext, &ctx)?;
            let shape = check_extended_shape(&s.ext, &series)?;
            SharpOut {
                mode: "shape".into(),
                holds: shape.holds,
                cutoff: Some(render_rational(&s.policy.cutoff)),
                witnesses: Vec::new(),
                notes: shape.notes,
            }
        }
        "direct" | "lemma" => {
            let (m, cut) = if mode == "direct" {
                (SharpMode::Direct, Some(&s.policy.cutoff))
            } else {
                (SharpMode::Lemma, None)
            };
            let report = check_sharp(&s.ext, m, cut)?;
            SharpOut {
                mode: mode.into(),
                holds: report.holds,
                cutoff: report.cutoff.as_ref().map(render_rational),
                witnesses: report
                    .witnesses
                    .iter()
                    .map(|w| WitnessOut {
                        lambda: render_qvec(&w.lambda),
                        anticanonical: render_rational(&w.anticanonical),
                        age: render_rational(&w.age),
                        integral_negatives: w.integral_negatives,
                        order: render_rational(&w.order),
                    })
                    .collect(),
                notes: report.notes,
            }
        }
        other => {
            return Err(EngineError::Parse(format!(
                "unknown sharp mode `{other}`; expected shape, direct or lemma"
            )))
        }
    };
    Ok(OutputDoc::Sharp(report))
}

fn cmd_mirror_map(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let ctx = plain_context(&s)?;
    let series = apply_freezes(doc, i_function(&s.ext, &ctx)?)?;
    let asym = asymptotics(&series);
    if !asym.tail_ok {
        return Err(EngineError::Domain(format!(
            "the series does not have the z + t + O(1/z) shape needed for a mirror map: {}",
            asym.violations.first().map(String::as_str).unwrap_or("positive z-powers remain")
        )));
    }
    let tau = mirror_map(&asym)?;
    Ok(OutputDoc::MirrorMap(MirrorMapOut {
        f: render_scalar(&asym.f),
        tau: render_series(&tau),
    }))
}

fn cmd_jfunction(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let ctx = plain_context(&s)?;
    let series = apply_freezes(doc, i_function(&s.ext, &ctx)?)?;
    let chart = build_chart(doc, &ctx)?;
    let jout = j_function(&series, &chart)?;
    Ok(OutputDoc::Jfunction(JfunctionOut {
        chart: chart.names.clone(),
        mirror: chart
            .names
            .iter()
            .zip(&jout.mirror)
            .map(|(n, t)| NamedScalarOut { name: n.clone(), terms: render_scalar(t) })
            .collect(),
        inverse: chart
            .variables
            .iter()
            .zip(&jout.inverse)
            .map(|(v, t)| NamedScalarOut { name: v.describe(), terms: render_scalar(t) })
            .collect(),
        j: render_series(&jout.j),
        shape_ok: jout.shape_ok,
        notes: jout.notes,
    }))
}

fn cmd_qproduct(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let ctx = plain_context(&s)?;
    let series = apply_freezes(doc, i_function(&s.ext, &ctx)?)?;
    let chart = build_chart(doc, &ctx)?;
    let spec = doc
        .qproduct
        .as_ref()
        .ok_or_else(|| EngineError::Invalid("this command needs a `qproduct` section".into()))?;
    let nvars = chart.variables.len();
    for w in spec.words.iter().flatten().chain(spec.pairs.iter().flat_map(|(a, b)| [a, b])) {
        if *w >= nvars {
            return Err(EngineError::Invalid(format!(
                "qproduct: chart-variable index {w} out of range 0..{nvars}"
            )));
        }
    }
    let jout = j_function(&series, &chart)?;
    let family = derivative_word_family(&jout.j, &spec.words);
    let mut products = Vec::new();
    for &(a, b) in &spec.pairs {
        let constants = quantum_structure_constants(&jout.j, a, b, &family)?;
        products.push(ProductOut {
            left: chart.names[a].clone(),
            right: chart.names[b].clone(),
            constants: family
                .labels
                .iter()
                .zip(&constants)
                .map(|(l, c)| NamedScalarOut { name: l.clone(), terms: render_scalar(c) })
                .collect(),
        });
    }
    Ok(OutputDoc::Qproduct(QproductOut { family: family.labels.clone(), products }))
}

fn convexity_out(ext: &ExtendedStackyFan, doc: &InputDocument) -> Result<ConvexityOut> {
    let spec = build_twist(doc, ext)?;
    let report = convexity_check(ext, &spec)?;
    let pack = |list: &[(usize, usize, BigRational)]| {
        list.iter()
            .map(|(b, i, v)| PairingOut { bundle: *b, index: *i, value: render_rational(v) })
            .collect()
    };
    Ok(ConvexityOut {
        positive: report.positive,
        coarse: report.coarse,
        pairings: pack(&report.pairings),
        f_values: pack(&report.f_values),
        violations: report.violations,
    })
}

fn cmd_twist(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let spec = build_twist(doc, &s.ext)?;
    let convexity = convexity_out(&s.ext, doc)?;
    let scalars = twist_scalars(&s.algebra, &spec.mode);
    let ctx = build_context(&s.ext, s.algebra.clone(), scalars, s.policy.clone())?;
    let series = apply_freezes(doc, twisted_i_function(&s.ext, &ctx, &spec)?)?;
    Ok(OutputDoc::Twist(TwistOut { convexity, terms: render_series(&series) }))
}

fn ci_series(doc: &InputDocument, flags: &CommandFlags) -> Result<(ConvexityOut, MultiSeries)> {
    let s = setup(doc, flags)?;
    let spec = build_twist(doc, &s.ext)?;
    let convexity = convexity_out(&s.ext, doc)?;
    let (target, class_map) = build_restriction(doc, s.algebra.dim())?;
    let scalars = twist_scalars(&s.algebra, &spec.mode);
    let ctx = build_context(&s.ext, s.algebra.clone(), scalars, s.policy.clone())?;
    let (_tctx, series) = ci_i_function(&s.ext, &ctx, &spec, target, &class_map)?;
    Ok((convexity, apply_freezes(doc, series)?))
}

fn cmd_ci(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let (convexity, series) = ci_series(doc, flags)?;
    Ok(OutputDoc::Ci(CiOut { convexity, terms: render_series(&series) }))
}

fn cmd_qperiod(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let (_convexity, series) = ci_series(doc, flags)?;
    let period = quantum_period(&series)?;
    Ok(OutputDoc::Qperiod(QperiodOut { terms: render_scalar(&period) }))
}

fn cmd_birkhoff(doc: &InputDocument, flags: &CommandFlags) -> Result<OutputDoc> {
    let s = setup(doc, flags)?;
    let ctx = plain_context(&s)?;
    let series = apply_freezes(doc, i_function(&s.ext, &ctx)?)?;
    let family = build_family(doc, &ctx)?;
    let labels: Vec<String> = family.iter().map(|v| v.describe()).collect();
    let problem = BirkhoffProblem { series, family };
    let out = eliminate_positive_z(&problem)?;
    let tail_ok_after = asymptotics(&out.series).tail_ok;
    Ok(OutputDoc::Birkhoff(BirkhoffOut {
        iterations: out.iterations,
        family: labels.clone(),
        corrections: labels
            .iter()
            .zip(&out.corrections)
            .map(|(l, c)| NamedScalarOut { name: l.clone(), terms: render_scalar(c) })
            .collect(),
        tail_ok_after,
        terms: render_series(&out.series),
    }))
}
