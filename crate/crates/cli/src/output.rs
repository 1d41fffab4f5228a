//! Serializable result documents, one per command.
//!
//! Every number is rendered as an exact string ("p/q" or an integer); output
//! documents round-trip through JSON and compare with `==`, which the corpus
//! tests rely on.  The text format is a human-readable rendering of the same
//! data and is not machine-parsed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use toricgw::abelian::IVec;
use toricgw::cohomology::ChenRuanAlgebra;
use toricgw::qmat::QVec;
use toricgw::qnum::render_rational;
use toricgw::series::{MultiSeries, ScalarSeries, SeriesKey};

/// One algebra-valued series coefficient: monomial key plus basis components.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermOut {
    pub q: Vec<String>,
    pub x: Vec<u32>,
    pub t: Vec<u32>,
    pub z: i64,
    /// Nonzero components, keyed by basis label.
    pub value: BTreeMap<String, String>,
}

/// One scalar series coefficient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalarTermOut {
    pub q: Vec<String>,
    pub x: Vec<u32>,
    pub t: Vec<u32>,
    pub z: i64,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedScalarOut {
    pub name: String,
    pub terms: Vec<ScalarTermOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupOut {
    pub rank: usize,
    pub torsion: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingOut {
    pub q_weights: Vec<String>,
    pub x_weights: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOut {
    pub cutoff: String,
    pub max_t: u32,
    pub x_caps: Vec<Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateOut {
    pub name: Option<String>,
    pub group: GroupOut,
    pub rays: Vec<Vec<String>>,
    pub cones: Vec<Vec<usize>>,
    pub complete: bool,
    pub box_count: usize,
    pub extension: Vec<Vec<String>>,
    pub algebra_dim: usize,
    pub basis: Vec<String>,
    pub q_degrees: Vec<String>,
    pub x_degrees: Vec<String>,
    pub grading: GradingOut,
    pub policy: PolicyOut,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxElementOut {
    pub value: Vec<String>,
    pub sigma: Vec<usize>,
    pub frac: Vec<String>,
    pub age: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxOut {
    pub elements: Vec<BoxElementOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoriOut {
    pub generators: Vec<Vec<String>>,
    pub facets: Vec<Vec<String>>,
    pub degree_basis: Vec<Vec<String>>,
    pub q_degrees: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeOut {
    pub q: Vec<String>,
    pub k: Vec<u32>,
    pub lambda: Vec<String>,
    pub d: Vec<String>,
    pub box_index: usize,
    pub box_value: Vec<String>,
    pub grading: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreesOut {
    pub count: usize,
    pub degrees: Vec<DegreeOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomogeneityOut {
    pub total: String,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfunctionOut {
    pub terms: Vec<TermOut>,
    pub homogeneity: Option<HomogeneityOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessOut {
    pub lambda: Vec<String>,
    pub anticanonical: String,
    pub age: String,
    pub integral_negatives: usize,
    pub order: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharpOut {
    pub mode: String,
    pub holds: bool,
    pub cutoff: Option<String>,
    pub witnesses: Vec<WitnessOut>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorMapOut {
    /// Scalar factor in front of z along the unit.
    pub f: Vec<ScalarTermOut>,
    /// The z^0 slice after removing the divisor-logarithm part.
    pub tau: Vec<TermOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JfunctionOut {
    pub chart: Vec<String>,
    /// Chart components of the mirror map in the original variables.
    pub mirror: Vec<NamedScalarOut>,
    /// Original chart variables expanded in the flat coordinates.
    pub inverse: Vec<NamedScalarOut>,
    pub j: Vec<TermOut>,
    pub shape_ok: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductOut {
    pub left: String,
    pub right: String,
    /// Expansion of left * right over the family, keyed by family label.
    pub constants: Vec<NamedScalarOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QproductOut {
    pub family: Vec<String>,
    pub products: Vec<ProductOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingOut {
    pub bundle: usize,
    pub index: usize,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvexityOut {
    pub positive: bool,
    pub coarse: bool,
    /// Bundle summand vs Mori generator pairings.
    pub pairings: Vec<PairingOut>,
    /// Bundle summand vs box element isotropy weights.
    pub f_values: Vec<PairingOut>,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwistOut {
    pub convexity: ConvexityOut,
    pub terms: Vec<TermOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiOut {
    pub convexity: ConvexityOut,
    pub terms: Vec<TermOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QperiodOut {
    pub terms: Vec<ScalarTermOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BirkhoffOut {
    pub iterations: u32,
    pub family: Vec<String>,
    pub corrections: Vec<NamedScalarOut>,
    pub tail_ok_after: bool,
    pub terms: Vec<TermOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum OutputDoc {
    Validate(ValidateOut),
    Box(BoxOut),
    Mori(MoriOut),
    Degrees(DegreesOut),
    Ifunction(IfunctionOut),
    Sharp(SharpOut),
    MirrorMap(MirrorMapOut),
    Jfunction(JfunctionOut),
    Qproduct(QproductOut),
    Twist(TwistOut),
    Ci(CiOut),
    Qperiod(QperiodOut),
    Birkhoff(BirkhoffOut),
}

pub fn render_ivec(v: &IVec) -> Vec<String> {
    v.iter().map(BigInt::to_string).collect()
}

pub fn render_qvec(v: &QVec) -> Vec<String> {
    v.iter().map(render_rational).collect()
}

/// Stable human labels for algebra basis entries: the class label on the
/// untwisted sector, `y(v)` for other sector units, `label*y(v)` otherwise.
/// Duplicates get an `#index` suffix so labels stay unique map keys.
pub fn basis_labels(alg: &ChenRuanAlgebra) -> Vec<String> {
    let mut labels: Vec<String> = (0..alg.dim())
        .map(|i| {
            let b = &alg.basis[i];
            if b.sector == 0 {
                return b.label.clone();
            }
            let coords: Vec<String> =
                alg.sectors[b.sector].value.iter().map(BigInt::to_string).collect();
            let y = format!("y({})", coords.join(","));
            if alg.unit_of_sector[b.sector] == i {
                y
            } else {
                format!("{}*{}", b.label, y)
            }
        })
        .collect();
    for i in 0..labels.len() {
        if labels.iter().filter(|l| **l == labels[i]).count() > 1 {
            labels[i] = format!("{}#{i}", labels[i]);
        }
    }
    labels
}

fn key_parts(key: &SeriesKey) -> (Vec<String>, Vec<u32>, Vec<u32>) {
    (render_qvec(&key.q), key.x.clone(), key.t.clone())
}

pub fn render_series(series: &MultiSeries) -> Vec<TermOut> {
    let labels = basis_labels(&series.ctx.algebra);
    let ring = &series.ctx.scalars;
    let mut out = Vec::new();
    for (key, zmap) in &series.terms {
        let (q, x, t) = key_parts(key);
        for (&z, elem) in zmap {
            let mut value = BTreeMap::new();
            for (i, c) in elem.coords.iter().enumerate() {
                if !c.terms.is_empty() {
                    value.insert(labels[i].clone(), c.render(ring));
                }
            }
            if !value.is_empty() {
                out.push(TermOut { q: q.clone(), x: x.clone(), t: t.clone(), z, value });
            }
        }
    }
    out
}

pub fn render_scalar(series: &ScalarSeries) -> Vec<ScalarTermOut> {
    let ring = &series.ctx.scalars;
    let mut out = Vec::new();
    for (key, zmap) in &series.terms {
        let (q, x, t) = key_parts(key);
        for (&z, poly) in zmap {
            if !poly.terms.is_empty() {
                out.push(ScalarTermOut {
                    q: q.clone(),
                    x: x.clone(),
                    t: t.clone(),
                    z,
                    value: poly.render(ring),
                });
            }
        }
    }
    out
}

fn write_monomial(s: &mut String, q: &[String], x: &[u32], t: &[u32], z: i64) {
    let mut parts = Vec::new();
    if q.iter().any(|c| c != "0") {
        parts.push(format!("Q^({})", q.join(",")));
    }
    for (j, &e) in x.iter().enumerate() {
        if e > 0 {
            parts.push(if e == 1 { format!("x{j}") } else { format!("x{j}^{e}") });
        }
    }
    for (i, &e) in t.iter().enumerate() {
        if e > 0 {
            let i1 = i + 1;
            parts.push(if e == 1 { format!("t{i1}") } else { format!("t{i1}^{e}") });
        }
    }
    match z {
        0 => {}
        1 => parts.push("z".into()),
        _ => parts.push(format!("z^{z}")),
    }
    if parts.is_empty() {
        parts.push("1".into());
    }
    s.push_str(&parts.join(" "));
}

fn write_terms(out: &mut String, terms: &[TermOut]) {
    for t in terms {
        out.push_str("  ");
        write_monomial(out, &t.q, &t.x, &t.t, t.z);
        out.push_str(":  ");
        let comps: Vec<String> =
            t.value.iter().map(|(k, v)| format!("({v}) {k}")).collect();
        out.push_str(&comps.join(" + "));
        out.push('\n');
    }
}

fn write_scalar_terms(out: &mut String, terms: &[ScalarTermOut]) {
    for t in terms {
        out.push_str("  ");
        write_monomial(out, &t.q, &t.x, &t.t, t.z);
        let _ = writeln!(out, ":  {}", t.value);
    }
}

fn write_named(out: &mut String, items: &[NamedScalarOut]) {
    for item in items {
        let _ = writeln!(out, "  {} =", item.name);
        for t in &item.terms {
            out.push_str("  ");
            write_scalar_terms(out, std::slice::from_ref(t));
        }
    }
}

fn write_convexity(out: &mut String, c: &ConvexityOut) {
    let _ = writeln!(out, "convexity: positive={} coarse={}", c.positive, c.coarse);
    for p in &c.pairings {
        let _ = writeln!(out, "  bundle {} . mori {} = {}", p.bundle, p.index, p.value);
    }
    for p in &c.f_values {
        let _ = writeln!(out, "  bundle {} weight at box {} = {}", p.bundle, p.index, p.value);
    }
    for v in &c.violations {
        let _ = writeln!(out, "  violation: {v}");
    }
}

/// Plain-text rendering for terminals; the JSON form is the stable one.
pub fn render_text(doc: &OutputDoc) -> String {
    let mut s = String::new();
    match doc {
        OutputDoc::Validate(v) => {
            let name = v.name.as_deref().unwrap_or("(unnamed)");
            let _ = writeln!(s, "{name}: valid input");
            let _ = writeln!(
                s,
                "group Z^{} x Z/({:?}), {} rays, {} cones, complete={}",
                v.group.rank,
                v.group.torsion,
                v.rays.len(),
                v.cones.len(),
                v.complete
            );
            let _ = writeln!(
                s,
                "box elements: {}, extension slots: {}, algebra dimension {}",
                v.box_count,
                v.extension.len(),
                v.algebra_dim
            );
            let _ = writeln!(s, "basis: {}", v.basis.join(", "));
            let _ = writeln!(
                s,
                "deg Q = ({}), deg x = ({})",
                v.q_degrees.join(", "),
                v.x_degrees.join(", ")
            );
            let _ = writeln!(
                s,
                "policy: cutoff {} on Q-degree, t-order {}",
                v.policy.cutoff, v.policy.max_t
            );
        }
        OutputDoc::Box(b) => {
            let _ = writeln!(s, "{} box elements", b.elements.len());
            for e in &b.elements {
                let _ = writeln!(
                    s,
                    "  ({})  cone {:?}  frac ({})  age {}",
                    e.value.join(","),
                    e.sigma,
                    e.frac.join(","),
                    e.age
                );
            }
        }
        OutputDoc::Mori(m) => {
            s.push_str("mori generators:\n");
            for g in &m.generators {
                let _ = writeln!(s, "  ({})", g.join(", "));
            }
            s.push_str("facet normals:\n");
            for f in &m.facets {
                let _ = writeln!(s, "  ({})", f.join(", "));
            }
            let _ = writeln!(s, "deg Q = ({})", m.q_degrees.join(", "));
        }
        OutputDoc::Degrees(d) => {
            let _ = writeln!(s, "{} extended degrees inside the cutoff", d.count);
            for deg in &d.degrees {
                let _ = writeln!(
                    s,
                    "  Q=({}) k={:?}  lambda=({})  box {} ({})  grading {}",
                    deg.q.join(","),
                    deg.k,
                    deg.lambda.join(","),
                    deg.box_index,
                    deg.box_value.join(","),
                    deg.grading
                );
            }
        }
        OutputDoc::Ifunction(i) => {
            let _ = writeln!(s, "{} terms", i.terms.len());
            write_terms(&mut s, &i.terms);
            if let Some(h) = &i.homogeneity {
                if h.violations.is_empty() {
                    let _ = writeln!(s, "homogeneous of total degree {}", h.total);
                } else {
                    let _ = writeln!(s, "homogeneity violations (degree {}):", h.total);
                    for v in &h.violations {
                        let _ = writeln!(s, "  {v}");
                    }
                }
            }
        }
        OutputDoc::Sharp(r) => {
            let _ = writeln!(s, "mode {}: {}", r.mode, if r.holds { "holds" } else { "fails" });
            if let Some(c) = &r.cutoff {
                let _ = writeln!(s, "checked degrees up to {c}");
            }
            for w in &r.witnesses {
                let _ = writeln!(
                    s,
                    "  witness lambda=({}) anticanonical {} age {} negatives {} order {}",
                    w.lambda.join(","),
                    w.anticanonical,
                    w.age,
                    w.integral_negatives,
                    w.order
                );
            }
            for n in &r.notes {
                let _ = writeln!(s, "  note: {n}");
            }
        }
        OutputDoc::MirrorMap(m) => {
            s.push_str("F =\n");
            write_scalar_terms(&mut s, &m.f);
            s.push_str("tau =\n");
            write_terms(&mut s, &m.tau);
        }
        OutputDoc::Jfunction(j) => {
            let _ = writeln!(s, "chart variables: {}", j.chart.join(", "));
            s.push_str("mirror map:\n");
            write_named(&mut s, &j.mirror);
            s.push_str("inverse:\n");
            write_named(&mut s, &j.inverse);
            let _ = writeln!(s, "J ({} terms, shape_ok={}):", j.j.len(), j.shape_ok);
            write_terms(&mut s, &j.j);
            for n in &j.notes {
                let _ = writeln!(s, "  note: {n}");
            }
        }
        OutputDoc::Qproduct(q) => {
            let _ = writeln!(s, "family: {}", q.family.join(", "));
            for p in &q.products {
                let _ = writeln!(s, "{} * {}:", p.left, p.right);
                write_named(&mut s, &p.constants);
            }
        }
        OutputDoc::Twist(t) => {
            write_convexity(&mut s, &t.convexity);
            let _ = writeln!(s, "{} terms", t.terms.len());
            write_terms(&mut s, &t.terms);
        }
        OutputDoc::Ci(c) => {
            write_convexity(&mut s, &c.convexity);
            let _ = writeln!(s, "{} terms", c.terms.len());
            write_terms(&mut s, &c.terms);
        }
        OutputDoc::Qperiod(p) => {
            let _ = writeln!(s, "{} terms", p.terms.len());
            write_scalar_terms(&mut s, &p.terms);
        }
        OutputDoc::Birkhoff(b) => {
            let _ = writeln!(
                s,
                "{} eliminations, tail_ok_after={}",
                b.iterations, b.tail_ok_after
            );
            s.push_str("corrections:\n");
            write_named(&mut s, &b.corrections);
            let _ = writeln!(s, "{} terms", b.terms.len());
            write_terms(&mut s, &b.terms);
        }
    }
    s
}
