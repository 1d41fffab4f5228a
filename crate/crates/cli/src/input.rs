//! Input document schema and construction of engine objects from it.
//!
//! One JSON document describes everything a command might need:
//!
//! - the stacky fan: group, rays, cones
//! - extension elements, optional Mori generators, a degree basis
//! - the coefficient algebra: a mode or explicit structure constants
//! - twist data, a restriction target with its class map
//! - the truncation policy, frozen variables, chart and product requests
//! - an optional variable-degree table for homogeneity checks
//!
//! All numbers are exact: JSON integers or strings like "-5/3".  Floats are
//! rejected outright.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use toricgw::abelian::{FGAbelianGroup, IVec};
use toricgw::cohomology::{
    algebra_from_structure_constants, chen_ruan_from_fan, AlgebraDescription, AlgebraMode,
    BasisClass, ChenRuanAlgebra, Sector,
};
use toricgw::poly::{CoefficientRing, Poly, PolyMatrix};
use toricgw::qmat::{QMatrix, QVec};
use toricgw::qnum::{is_integer, parse_rational, render_rational};
use toricgw::series::{
    CoordinateChart, SeriesContext, SeriesVariable, TruncationPolicy,
};
use toricgw::stackyfan::{ExtendedStackyFan, Grading, StackyFan};
use toricgw::twist::{twisted_scalars, TwistMode, TwistSpec};
use toricgw::{EngineError, Result};

/// Exact rational: accepts an integer literal or a "p/q" string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rat(pub BigRational);

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&render_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Rat;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an integer or an exact fraction string like \"2/3\"")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Rat, E> {
                Ok(Rat(BigRational::from_integer(BigInt::from(v))))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Rat, E> {
                Ok(Rat(BigRational::from_integer(BigInt::from(v))))
            }
            fn visit_f64<E: de::Error>(self, _: f64) -> std::result::Result<Rat, E> {
                Err(E::custom(
                    "floating-point numbers are not accepted; write exact fractions as strings",
                ))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Rat, E> {
                parse_rational(v).map(Rat).map_err(|e| E::custom(e.to_string()))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub rank: usize,
    #[serde(default)]
    pub torsion: Vec<u64>,
}

/// An element of the group N: free coordinates plus torsion components.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    #[serde(default)]
    pub free: Vec<Rat>,
    #[serde(default)]
    pub torsion: Vec<Rat>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub cutoff: Rat,
    #[serde(default)]
    pub max_t: u32,
    #[serde(default)]
    pub x_caps: Option<Vec<Option<Rat>>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum AlgebraSpec {
    Mode(String),
    Structure { structure: AlgebraStructureSpec },
}

impl Default for AlgebraSpec {
    fn default() -> Self {
        AlgebraSpec::Mode("nonequivariant".into())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub value: Vec<Rat>,
    pub age: Rat,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub sector: usize,
    pub label: String,
    pub degree: Rat,
}

/// Explicit structure constants over the rational coefficient ring.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraStructureSpec {
    pub sectors: Vec<SectorSpec>,
    pub basis: Vec<BasisSpec>,
    pub unit_of_sector: Vec<usize>,
    /// One dim-by-dim rational matrix per toric divisor.
    pub divisor_action: Vec<Vec<Vec<Rat>>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum TwistModeSpec {
    Name(String),
    GenericS { generic_s: u32 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistInput {
    pub mode: TwistModeSpec,
    pub epsilons: Vec<Vec<Rat>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionInput {
    pub target: AlgebraStructureSpec,
    /// Rows: target coordinates of each source basis image.
    pub class_map: Vec<Vec<Rat>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub directions: Vec<usize>,
    pub variables: Vec<String>,
    pub names: Vec<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QProductSpec {
    /// Derivative words over chart variables defining the solve family.
    pub words: Vec<Vec<usize>>,
    /// Chart-variable index pairs whose product expansions are requested.
    pub pairs: Vec<(usize, usize)>,
}

/// Degree assignments for the homogeneity check: deg z = 1 implicitly.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeTable {
    pub q: Vec<Rat>,
    pub x: Vec<Rat>,
    pub total: Rat,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDocument {
    #[serde(default)]
    pub name: Option<String>,
    pub group: GroupSpec,
    pub rays: Vec<ElementSpec>,
    pub cones: Vec<Vec<usize>>,
    #[serde(default)]
    pub extension: Vec<ElementSpec>,
    #[serde(default)]
    pub mori: Option<Vec<Vec<Rat>>>,
    #[serde(default)]
    pub degree_basis: Option<Vec<Vec<Rat>>>,
    #[serde(default)]
    pub algebra: AlgebraSpec,
    #[serde(default)]
    pub twist: Option<TwistInput>,
    #[serde(default)]
    pub restriction: Option<RestrictionInput>,
    pub policy: PolicySpec,
    /// 1-based indices of divisor variables to set to zero in series output.
    #[serde(default)]
    pub freeze_t: Vec<usize>,
    /// 0-based indices of extension variables to set to zero in series output.
    #[serde(default)]
    pub freeze_x: Vec<usize>,
    #[serde(default)]
    pub chart: Option<ChartSpec>,
    /// Derivative family for positive-power elimination, e.g. ["x0","t1"].
    #[serde(default)]
    pub family: Option<Vec<String>>,
    #[serde(default)]
    pub qproduct: Option<QProductSpec>,
    #[serde(default)]
    pub degrees: Option<DegreeTable>,
}

fn invalid(msg: String) -> EngineError {
    EngineError::Invalid(msg)
}

/// Integer from an exact rational, with a located complaint otherwise.
fn as_int(r: &Rat, what: &str) -> Result<BigInt> {
    if is_integer(&r.0) {
        Ok(r.0.numer().clone())
    } else {
        Err(invalid(format!(
            "{what}: expected an integer, got {}",
            render_rational(&r.0)
        )))
    }
}

fn element_to_ivec(e: &ElementSpec, rank: usize, torsion: usize, what: &str) -> Result<IVec> {
    if e.free.len() != rank {
        return Err(invalid(format!(
            "{what}: expected {rank} free coordinates, got {} \
             (present N in integral coordinates)",
            e.free.len()
        )));
    }
    if e.torsion.len() != torsion {
        return Err(invalid(format!(
            "{what}: expected {torsion} torsion components, got {}",
            e.torsion.len()
        )));
    }
    let mut out = Vec::with_capacity(rank + torsion);
    for (i, c) in e.free.iter().enumerate() {
        out.push(as_int(c, &format!("{what}.free[{i}]"))?);
    }
    for (i, c) in e.torsion.iter().enumerate() {
        out.push(as_int(c, &format!("{what}.torsion[{i}]"))?);
    }
    Ok(out)
}

fn qvec(row: &[Rat]) -> QVec {
    row.iter().map(|r| r.0.clone()).collect()
}

pub fn build_fan(doc: &InputDocument) -> Result<StackyFan> {
    let torsion: Vec<BigInt> = doc.group.torsion.iter().map(|&n| BigInt::from(n)).collect();
    let group = FGAbelianGroup::new(doc.group.rank, torsion)?;
    let nt = doc.group.torsion.len();
    let rays = doc
        .rays
        .iter()
        .enumerate()
        .map(|(i, r)| element_to_ivec(r, doc.group.rank, nt, &format!("rays[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    StackyFan::new(group, rays, doc.cones.clone())
}

pub fn build_ext(doc: &InputDocument, fan: StackyFan) -> Result<ExtendedStackyFan> {
    let nt = doc.group.torsion.len();
    let s_elements = doc
        .extension
        .iter()
        .enumerate()
        .map(|(j, e)| element_to_ivec(e, doc.group.rank, nt, &format!("extension[{j}]")))
        .collect::<Result<Vec<_>>>()?;
    let n = doc.rays.len();
    let mori = match &doc.mori {
        None => None,
        Some(rows) => {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(invalid(format!(
                        "mori[{i}]: expected {n} ray pairings, got {}",
                        row.len()
                    )));
                }
            }
            Some(rows.iter().map(|r| qvec(r)).collect())
        }
    };
    let degree_basis = match &doc.degree_basis {
        None => None,
        Some(rows) => {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(invalid(format!(
                        "degree_basis[{i}]: expected {n} ray pairings, got {}",
                        row.len()
                    )));
                }
            }
            Some(rows.iter().map(|r| qvec(r)).collect())
        }
    };
    ExtendedStackyFan::extend(fan, s_elements, mori, degree_basis)
}

fn build_structure(spec: &AlgebraStructureSpec) -> Result<ChenRuanAlgebra> {
    let dim = spec.basis.len();
    let mut sectors = Vec::new();
    for (i, s) in spec.sectors.iter().enumerate() {
        let value = s
            .value
            .iter()
            .enumerate()
            .map(|(c, v)| as_int(v, &format!("structure.sectors[{i}].value[{c}]")))
            .collect::<Result<IVec>>()?;
        sectors.push(Sector { value, age: s.age.0.clone() });
    }
    let basis = spec
        .basis
        .iter()
        .map(|b| BasisClass {
            sector: b.sector,
            label: b.label.clone(),
            coh_degree: b.degree.0.clone(),
        })
        .collect();
    let mut divisor_action = Vec::new();
    for (i, m) in spec.divisor_action.iter().enumerate() {
        if m.len() != dim || m.iter().any(|row| row.len() != dim) {
            return Err(invalid(format!(
                "structure.divisor_action[{i}]: expected a {dim}x{dim} matrix"
            )));
        }
        let mut pm = PolyMatrix::zero(dim);
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                *pm.entry_mut(r, c) = Poly::constant(0, v.0.clone());
            }
        }
        divisor_action.push(pm);
    }
    algebra_from_structure_constants(AlgebraDescription {
        coeff: CoefficientRing::rational(),
        sectors,
        basis,
        unit_of_sector: spec.unit_of_sector.clone(),
        divisor_action,
    })
}

pub fn build_algebra(doc: &InputDocument, fan: &StackyFan) -> Result<Arc<ChenRuanAlgebra>> {
    match &doc.algebra {
        AlgebraSpec::Mode(m) => {
            let mode = match m.as_str() {
                "nonequivariant" => AlgebraMode::Nonequivariant,
                "equivariant" => AlgebraMode::Equivariant,
                other => {
                    return Err(invalid(format!(
                        "algebra: unknown mode `{other}` \
                         (expected \"nonequivariant\", \"equivariant\" or a structure)"
                    )))
                }
            };
            Ok(Arc::new(chen_ruan_from_fan(fan, mode)?))
        }
        AlgebraSpec::Structure { structure } => Ok(Arc::new(build_structure(structure)?)),
    }
}

/// Command-line overrides applied to the document's truncation policy.
#[derive(Clone, Debug, Default)]
pub struct PolicyOverrides {
    pub cutoff: Option<BigRational>,
    pub max_t: Option<u32>,
}

pub fn build_policy(
    doc: &InputDocument,
    ext: &ExtendedStackyFan,
    over: &PolicyOverrides,
) -> Result<TruncationPolicy> {
    let m = ext.m();
    let caps = match &doc.policy.x_caps {
        None => vec![None; m],
        Some(list) => {
            if list.len() != m {
                return Err(invalid(format!(
                    "policy.x_caps: expected {m} entries, got {}",
                    list.len()
                )));
            }
            list.iter()
                .enumerate()
                .map(|(j, c)| match c {
                    None => Ok(None),
                    Some(r) => {
                        let v = as_int(r, &format!("policy.x_caps[{j}]"))?;
                        if v.is_negative() {
                            return Err(invalid(format!(
                                "policy.x_caps[{j}]: caps must be non-negative"
                            )));
                        }
                        Ok(Some(v))
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let cutoff = over.cutoff.clone().unwrap_or_else(|| doc.policy.cutoff.0.clone());
    let max_t = over.max_t.unwrap_or(doc.policy.max_t);
    Ok(TruncationPolicy::new(ext.default_grading(), cutoff, max_t, caps))
}

/// Series context over the given scalar ring (plain or twisted).
pub fn build_context(
    ext: &ExtendedStackyFan,
    algebra: Arc<ChenRuanAlgebra>,
    scalars: CoefficientRing,
    policy: TruncationPolicy,
) -> Result<Arc<SeriesContext>> {
    let names = (0..ext.m()).map(|j| format!("x{j}")).collect();
    SeriesContext::new(algebra, scalars, ext.rank_l(), names, ext.n(), policy)
}

pub fn build_twist(doc: &InputDocument, ext: &ExtendedStackyFan) -> Result<TwistSpec> {
    let input = doc
        .twist
        .as_ref()
        .ok_or_else(|| invalid("this command needs a `twist` section".into()))?;
    let mode = match &input.mode {
        TwistModeSpec::Name(n) if n == "euler" => TwistMode::Euler,
        TwistModeSpec::Name(other) => {
            return Err(invalid(format!(
                "twist.mode: unknown mode `{other}` \
                 (expected \"euler\" or {{\"generic_s\": N}})"
            )))
        }
        TwistModeSpec::GenericS { generic_s } => TwistMode::GenericS { order: *generic_s },
    };
    let want = ext.rank_l() + ext.m();
    let mut epsilons = Vec::new();
    for (i, row) in input.epsilons.iter().enumerate() {
        if row.len() != want {
            return Err(invalid(format!(
                "twist.epsilons[{i}]: expected {want} coordinates \
                 (degree basis then extension slots), got {}",
                row.len()
            )));
        }
        epsilons.push(qvec(row));
    }
    Ok(TwistSpec { mode, epsilons })
}

pub fn build_restriction(
    doc: &InputDocument,
    source_dim: usize,
) -> Result<(Arc<ChenRuanAlgebra>, QMatrix)> {
    let input = doc
        .restriction
        .as_ref()
        .ok_or_else(|| invalid("this command needs a `restriction` section".into()))?;
    let target = Arc::new(build_structure(&input.target)?);
    let rows = input.class_map.len();
    if rows != target.dim() {
        return Err(invalid(format!(
            "restriction.class_map: expected {} rows (target dimension), got {rows}",
            target.dim()
        )));
    }
    let mut data = Vec::new();
    for (r, row) in input.class_map.iter().enumerate() {
        if row.len() != source_dim {
            return Err(invalid(format!(
                "restriction.class_map[{r}]: expected {source_dim} columns \
                 (source dimension), got {}",
                row.len()
            )));
        }
        data.push(qvec(row));
    }
    Ok((target, QMatrix::new(data)))
}

/// Parse a variable reference: "t<i>" (1-based) or an extension name "x<j>".
pub fn parse_variable(ctx: &SeriesContext, text: &str) -> Result<SeriesVariable> {
    if let Some(rest) = text.strip_prefix('t') {
        if let Ok(i) = rest.parse::<usize>() {
            if i >= 1 && i <= ctx.t_count {
                return Ok(SeriesVariable::T(i - 1));
            }
            return Err(invalid(format!(
                "variable `{text}`: divisor index out of range 1..={}",
                ctx.t_count
            )));
        }
    }
    if let Some(j) = ctx.x_names.iter().position(|n| n == text) {
        return Ok(SeriesVariable::X(j));
    }
    Err(invalid(format!(
        "variable `{text}`: expected t1..t{} or one of {:?}",
        ctx.t_count, ctx.x_names
    )))
}

pub fn build_chart(doc: &InputDocument, ctx: &SeriesContext) -> Result<CoordinateChart> {
    let spec = doc
        .chart
        .as_ref()
        .ok_or_else(|| invalid("this command needs a `chart` section".into()))?;
    if spec.directions.len() != spec.variables.len()
        || spec.directions.len() != spec.names.len()
    {
        return Err(invalid(
            "chart: directions, variables and names must have equal length".into(),
        ));
    }
    let dim = ctx.dim();
    for &d in &spec.directions {
        if d >= dim {
            return Err(invalid(format!(
                "chart.directions: index {d} out of range for a {dim}-dimensional algebra"
            )));
        }
    }
    let variables = spec
        .variables
        .iter()
        .map(|v| parse_variable(ctx, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoordinateChart {
        directions: spec.directions.clone(),
        variables,
        names: spec.names.clone(),
    })
}

pub fn build_family(doc: &InputDocument, ctx: &SeriesContext) -> Result<Vec<SeriesVariable>> {
    match &doc.family {
        None => Ok(toricgw::birkhoff::default_family(ctx)),
        Some(names) => names.iter().map(|v| parse_variable(ctx, v)).collect(),
    }
}

pub fn build_degree_table(
    doc: &InputDocument,
    ext: &ExtendedStackyFan,
) -> Result<Option<(Grading, BigRational)>> {
    let Some(table) = &doc.degrees else { return Ok(None) };
    if table.q.len() != ext.rank_l() {
        return Err(invalid(format!(
            "degrees.q: expected {} weights, got {}",
            ext.rank_l(),
            table.q.len()
        )));
    }
    if table.x.len() != ext.m() {
        return Err(invalid(format!(
            "degrees.x: expected {} weights, got {}",
            ext.m(),
            table.x.len()
        )));
    }
    Ok(Some((
        Grading { q_weights: qvec(&table.q), x_weights: qvec(&table.x) },
        table.total.0.clone(),
    )))
}

/// The scalar ring for untwisted commands.
pub fn plain_scalars(algebra: &ChenRuanAlgebra) -> CoefficientRing {
    algebra.coeff.clone()
}

/// The scalar ring carrying twist parameters.
pub fn twist_scalars(algebra: &ChenRuanAlgebra, mode: &TwistMode) -> CoefficientRing {
    twisted_scalars(&algebra.coeff, mode)
}
