//! Chen-Ruan cohomology backends.
//!
//! * a finite free module over a polynomial coefficient ring, decomposed into
//!   sectors indexed by box elements, with ages and a grading
//! * multiplication by the toric divisor classes `u_i` as commuting matrices
//! * automatic construction from a fan: nonequivariant for complete fans
//!   (Stanley-Reisner plus linear relations, sector by sector through star
//!   quotients), equivariant for affine quotient type
//! * manual structure-constant input with full invariant verification

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::abelian::{GroupHom, IVec};
use crate::error::EngineError;
use crate::poly::{CoefficientRing, Poly, PolyMatrix};
use crate::qmat::{QMatrix, QVec};
use crate::stackyfan::StackyFan;
use crate::Result;

/// Which coefficient ring a fan-built algebra lives over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgebraMode {
    Nonequivariant,
    Equivariant,
}

/// One inertia sector: the box element's value in `N` and its age.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sector {
    pub value: IVec,
    pub age: BigRational,
}

/// A basis class: which sector it lives in, a display label, and its
/// cohomological degree before the age shift.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisClass {
    pub sector: usize,
    pub label: String,
    pub coh_degree: BigRational,
}

/// A coordinate vector over the coefficient ring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlgebraElement {
    pub coords: Vec<Poly>,
}

impl AlgebraElement {
    pub fn zero(dim: usize) -> Self {
        AlgebraElement { coords: vec![Poly::zero(); dim] }
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|p| p.is_zero())
    }

    pub fn add(&self, other: &AlgebraElement) -> AlgebraElement {
        assert_eq!(self.coords.len(), other.coords.len());
        AlgebraElement {
            coords: self
                .coords
                .iter()
                .zip(other.coords.iter())
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &AlgebraElement) -> AlgebraElement {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> AlgebraElement {
        AlgebraElement { coords: self.coords.iter().map(|p| p.neg()).collect() }
    }

    pub fn scale(&self, c: &BigRational) -> AlgebraElement {
        AlgebraElement { coords: self.coords.iter().map(|p| p.scale(c)).collect() }
    }

    pub fn scale_poly(&self, p: &Poly) -> AlgebraElement {
        AlgebraElement { coords: self.coords.iter().map(|q| q.mul(p)).collect() }
    }
}

/// Polynomial in the divisor generators `u_1..u_n` with scalar coefficients,
/// keyed by exponent vector.
pub type DivisorPolynomial = BTreeMap<Vec<u32>, Poly>;

/// Manual input for `algebra_from_structure_constants`.
#[derive(Clone, Debug)]
pub struct AlgebraDescription {
    pub coeff: CoefficientRing,
    pub sectors: Vec<Sector>,
    pub basis: Vec<BasisClass>,
    pub unit_of_sector: Vec<usize>,
    pub divisor_action: Vec<PolyMatrix>,
}

/// Sector-decomposed module with commuting divisor actions.
#[derive(Clone, Debug)]
pub struct ChenRuanAlgebra {
    pub coeff: CoefficientRing,
    pub sectors: Vec<Sector>,
    pub basis: Vec<BasisClass>,
    pub unit_of_sector: Vec<usize>,
    pub divisor_action: Vec<PolyMatrix>,
}

impl ChenRuanAlgebra {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn n_divisors(&self) -> usize {
        self.divisor_action.len()
    }

    /// Age-shifted grading of a basis class.
    pub fn grading(&self, idx: usize) -> BigRational {
        &self.sectors[self.basis[idx].sector].age + &self.basis[idx].coh_degree
    }

    pub fn zero(&self) -> AlgebraElement {
        AlgebraElement::zero(self.dim())
    }

    /// The unit `y^b` of a sector.
    pub fn sector_unit(&self, sector: usize) -> AlgebraElement {
        let mut out = self.zero();
        out.coords[self.unit_of_sector[sector]] = Poly::one(self.coeff.nvars());
        out
    }

    /// The algebra unit: the untwisted sector's unit.
    pub fn unit(&self) -> AlgebraElement {
        self.sector_unit(0)
    }

    /// Basis indices belonging to one sector.
    pub fn sector_members(&self, sector: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.basis[i].sector == sector).collect()
    }

    /// Multiplication by `u_i`.
    pub fn apply_divisor(&self, a: &AlgebraElement, i: usize) -> AlgebraElement {
        AlgebraElement { coords: self.divisor_action[i].apply(&a.coords) }
    }

    /// Evaluate a polynomial in `u_1..u_n` on an element.
    pub fn multiply(&self, a: &AlgebraElement, p: &DivisorPolynomial) -> AlgebraElement {
        let mut out = self.zero();
        for (alpha, c) in p {
            assert_eq!(alpha.len(), self.n_divisors());
            let mut v = a.scale_poly(c);
            for (i, &e) in alpha.iter().enumerate() {
                for _ in 0..e {
                    v = self.apply_divisor(&v, i);
                }
            }
            out = out.add(&v);
        }
        out
    }

    /// Multiplication by a rational linear combination of the `u_i`.
    pub fn apply_divisor_combination(&self, a: &AlgebraElement, coeffs: &QVec) -> AlgebraElement {
        assert_eq!(coeffs.len(), self.n_divisors());
        let mut out = self.zero();
        for (i, c) in coeffs.iter().enumerate() {
            if !c.is_zero() {
                out = out.add(&self.apply_divisor(a, i).scale(c));
            }
        }
        out
    }

    /// Check every structural invariant; used by all constructors.
    pub fn verify(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(EngineError::Construction("algebra has empty basis".into()));
        }
        if self.sectors.is_empty() {
            return Err(EngineError::Construction("algebra has no sectors".into()));
        }
        if self.unit_of_sector.len() != self.sectors.len() {
            return Err(EngineError::Construction(
                "unit_of_sector length does not match the sector count".into(),
            ));
        }
        for b in &self.basis {
            if b.sector >= self.sectors.len() {
                return Err(EngineError::Construction(format!(
                    "basis class {} references a missing sector",
                    b.label
                )));
            }
        }
        if !self.sectors[0].value.iter().all(|x| x.is_zero()) || !self.sectors[0].age.is_zero() {
            return Err(EngineError::Construction(
                "the first sector must be the untwisted one (zero value, age 0)".into(),
            ));
        }
        for (s, &u) in self.unit_of_sector.iter().enumerate() {
            if u >= dim || self.basis[u].sector != s || !self.basis[u].coh_degree.is_zero() {
                return Err(EngineError::Construction(format!(
                    "unit of sector {s} must be a degree 0 class of that sector"
                )));
            }
        }
        for (i, m) in self.divisor_action.iter().enumerate() {
            if m.dim != dim {
                return Err(EngineError::Construction(format!(
                    "divisor action {} has wrong dimension",
                    i + 1
                )));
            }
            for r in 0..dim {
                for c in 0..dim {
                    let p = m.entry(r, c);
                    if p.is_zero() {
                        continue;
                    }
                    if self.basis[r].sector != self.basis[c].sector {
                        return Err(EngineError::Construction(format!(
                            "divisor action {} mixes sectors", i + 1
                        )));
                    }
                    let need = BigRational::one() + self.grading(c) - self.grading(r);
                    for d in p.weighted_degrees(&self.coeff) {
                        if d != need {
                            return Err(EngineError::Construction(format!(
                                "divisor action {} violates the grading at entry ({r},{c})",
                                i + 1
                            )));
                        }
                    }
                }
            }
        }
        for i in 0..self.divisor_action.len() {
            for j in (i + 1)..self.divisor_action.len() {
                if !self.divisor_action[i].commutes_with(&self.divisor_action[j]) {
                    return Err(EngineError::Construction(format!(
                        "divisor actions {} and {} do not commute",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Build an algebra from explicit data, verifying every invariant.
pub fn algebra_from_structure_constants(desc: AlgebraDescription) -> Result<ChenRuanAlgebra> {
    let alg = ChenRuanAlgebra {
        coeff: desc.coeff,
        sectors: desc.sectors,
        basis: desc.basis,
        unit_of_sector: desc.unit_of_sector,
        divisor_action: desc.divisor_action,
    };
    alg.verify()?;
    Ok(alg)
}

/// Untwisted cohomology ring of a complete fan, nonequivariantly.
pub fn ring_from_fan_nonequivariant(fan: &StackyFan) -> Result<ChenRuanAlgebra> {
    let violations = fan.validate();
    if !violations.is_empty() {
        return Err(EngineError::Invalid(violations.join("; ")));
    }
    if !fan.is_complete() {
        return Err(EngineError::Invalid(
            "fan is not complete; supply the algebra by structure constants".into(),
        ));
    }
    let n = fan.n_rays();
    let rays: Vec<QVec> = (0..n).map(|i| fan.ray_free(i)).collect();
    let labels: Vec<String> = (1..=n).map(|i| format!("u{i}")).collect();
    let ring = quotient_ring(&rays, fan.rank(), &fan.max_cones, &labels)?;
    let nvars = 0;
    let sector = Sector {
        value: vec![BigInt::zero(); fan.group.ngens()],
        age: BigRational::zero(),
    };
    let basis = ring
        .labels
        .iter()
        .zip(ring.degrees.iter())
        .map(|(label, &d)| BasisClass {
            sector: 0,
            label: label.clone(),
            coh_degree: BigRational::from_integer(BigInt::from(d)),
        })
        .collect();
    let divisor_action = ring
        .actions
        .iter()
        .map(|m| rational_matrix_to_poly(m, nvars))
        .collect();
    let alg = ChenRuanAlgebra {
        coeff: CoefficientRing::rational(),
        sectors: vec![sector],
        basis,
        unit_of_sector: vec![0],
        divisor_action,
    };
    alg.verify()?;
    Ok(alg)
}

/// Full Chen-Ruan algebra of a fan.
///
/// Nonequivariant mode needs a complete fan; each sector is the ring of the
/// star quotient of its box element, and `u_i` acts by zero on sectors whose
/// star omits the ray. Equivariant mode needs affine quotient type (a single
/// maximal cone containing every ray, spanning `N`); every sector is free of
/// rank one over the equivariant parameters in the ray-dual basis, where
/// `u_i` acts as the parameter `chi_i`.
pub fn chen_ruan_from_fan(fan: &StackyFan, mode: AlgebraMode) -> Result<ChenRuanAlgebra> {
    let violations = fan.validate();
    if !violations.is_empty() {
        return Err(EngineError::Invalid(violations.join("; ")));
    }
    match mode {
        AlgebraMode::Nonequivariant => chen_ruan_nonequivariant(fan),
        AlgebraMode::Equivariant => chen_ruan_equivariant(fan),
    }
}

fn chen_ruan_equivariant(fan: &StackyFan) -> Result<ChenRuanAlgebra> {
    let n = fan.n_rays();
    let affine = fan.rank() == n && fan.max_cones == vec![(0..n).collect::<Vec<usize>>()];
    if !affine {
        return Err(EngineError::Invalid(
            "equivariant mode supports only affine quotient type (one maximal cone \
             containing every ray); supply the algebra by structure constants"
                .into(),
        ));
    }
    let coeff = CoefficientRing::equivariant(n);
    let boxes = fan.box_elements();
    let sectors: Vec<Sector> = boxes
        .iter()
        .map(|b| Sector { value: b.value.clone(), age: b.age.clone() })
        .collect();
    let dim = sectors.len();
    let basis = (0..dim)
        .map(|s| BasisClass {
            sector: s,
            label: "1".into(),
            coh_degree: BigRational::zero(),
        })
        .collect();
    let mut divisor_action = Vec::new();
    for i in 0..n {
        let mut m = PolyMatrix::zero(dim);
        for s in 0..dim {
            *m.entry_mut(s, s) = Poly::var(n, i);
        }
        divisor_action.push(m);
    }
    let alg = ChenRuanAlgebra {
        coeff,
        sectors,
        basis,
        unit_of_sector: (0..dim).collect(),
        divisor_action,
    };
    alg.verify()?;
    Ok(alg)
}

fn chen_ruan_nonequivariant(fan: &StackyFan) -> Result<ChenRuanAlgebra> {
    if !fan.is_complete() {
        return Err(EngineError::Invalid(
            "fan is not complete; supply the algebra by structure constants".into(),
        ));
    }
    let n = fan.n_rays();
    let boxes = fan.box_elements();

    let mut sectors = Vec::new();
    let mut basis: Vec<BasisClass> = Vec::new();
    let mut unit_of_sector = Vec::new();
    // Per sector: local dimension and per-divisor local matrices.
    let mut local: Vec<(usize, Vec<QMatrix>)> = Vec::new();

    for (s, b) in boxes.iter().enumerate() {
        let sigma = &b.sigma;
        let star_cones: Vec<&Vec<usize>> = fan
            .max_cones
            .iter()
            .filter(|c| sigma.iter().all(|i| c.contains(i)))
            .collect();
        let star_idx: Vec<usize> = star_cones
            .iter()
            .flat_map(|c| c.iter().copied())
            .filter(|i| !sigma.contains(i))
            .collect::<BTreeSet<usize>>()
            .into_iter()
            .collect();

        let sigma_rays: Vec<IVec> = sigma.iter().map(|&i| fan.rays[i].clone()).collect();
        let coker = GroupHom::new(fan.group.clone(), sigma_rays)?.cokernel();
        let qrank = coker.group.rank;
        let q_rays: Vec<QVec> = star_idx
            .iter()
            .map(|&i| {
                coker
                    .group
                    .free_part(&coker.project(&fan.rays[i]))
                    .iter()
                    .map(|x| BigRational::from_integer(x.clone()))
                    .collect()
            })
            .collect();
        let q_cones: Vec<Vec<usize>> = star_cones
            .iter()
            .map(|c| {
                c.iter()
                    .filter(|i| !sigma.contains(i))
                    .map(|i| star_idx.iter().position(|j| j == i).unwrap())
                    .collect()
            })
            .collect();
        let labels: Vec<String> = star_idx.iter().map(|&i| format!("u{}", i + 1)).collect();
        let ring = quotient_ring(&q_rays, qrank, &q_cones, &labels)?;
        let dim_local = ring.labels.len();

        // Restriction of each ambient divisor class to this sector.
        let mut mats = Vec::new();
        for i in 0..n {
            if let Some(pos) = star_idx.iter().position(|&j| j == i) {
                mats.push(ring.actions[pos].clone());
            } else if sigma.contains(&i) {
                // Express u_i through the linear relations: pick chi with
                // chi(rho_k) = delta_{ik} on sigma, then restrict.
                let a = QMatrix::new(sigma.iter().map(|&k| fan.ray_free(k)).collect());
                let mut rhs = vec![BigRational::zero(); sigma.len()];
                rhs[sigma.iter().position(|&k| k == i).unwrap()] = BigRational::one();
                let chi = a.solve(&rhs).ok_or_else(|| {
                    EngineError::Construction(format!(
                        "no dual covector for ray {} in its own cone",
                        i + 1
                    ))
                })?;
                let mut m = QMatrix::zero(dim_local, dim_local);
                for (pos, &j) in star_idx.iter().enumerate() {
                    let pairing: BigRational = chi
                        .iter()
                        .zip(fan.ray_free(j).iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    if !pairing.is_zero() {
                        m = q_add(&m, &q_scale(&ring.actions[pos], &-pairing));
                    }
                }
                mats.push(m);
            } else {
                mats.push(QMatrix::zero(dim_local, dim_local));
            }
        }

        unit_of_sector.push(basis.len());
        for (label, &d) in ring.labels.iter().zip(ring.degrees.iter()) {
            basis.push(BasisClass {
                sector: s,
                label: label.clone(),
                coh_degree: BigRational::from_integer(BigInt::from(d)),
            });
        }
        sectors.push(Sector { value: b.value.clone(), age: b.age.clone() });
        local.push((dim_local, mats));
    }

    // Assemble block-diagonal divisor actions over the full basis.
    let dim: usize = local.iter().map(|(d, _)| d).sum();
    let mut divisor_action = Vec::new();
    for i in 0..n {
        let mut m = PolyMatrix::zero(dim);
        let mut offset = 0;
        for (dim_local, mats) in &local {
            for r in 0..*dim_local {
                for c in 0..*dim_local {
                    let v = &mats[i].data[r][c];
                    if !v.is_zero() {
                        *m.entry_mut(offset + r, offset + c) = Poly::constant(0, v.clone());
                    }
                }
            }
            offset += dim_local;
        }
        divisor_action.push(m);
    }
    let alg = ChenRuanAlgebra {
        coeff: CoefficientRing::rational(),
        sectors,
        basis,
        unit_of_sector,
        divisor_action,
    };
    alg.verify()?;
    Ok(alg)
}

struct QuotientRing {
    labels: Vec<String>,
    degrees: Vec<u32>,
    /// One matrix per generator, over the full quotient basis.
    actions: Vec<QMatrix>,
}

/// Graded quotient of `Q[x_1..x_k]` by the Stanley-Reisner ideal of the cone
/// complex and the linear relations given by the ray coordinates, computed
/// degree by degree with exact linear algebra.
fn quotient_ring(
    rays: &[QVec],
    rank: usize,
    max_cones: &[Vec<usize>],
    labels: &[String],
) -> Result<QuotientRing> {
    let k = rays.len();
    let nonfaces = minimal_nonfaces(k, max_cones);

    // Per degree: monomial list, chosen basis positions, and the normal form
    // of every monomial over that basis.
    let mut layer_monomials: Vec<Vec<Vec<u32>>> = Vec::new();
    let mut layer_basis: Vec<Vec<usize>> = Vec::new();
    let mut layer_normal: Vec<Vec<QVec>> = Vec::new();

    let cap = (k + rank + 8) as u32;
    let mut g = 0u32;
    loop {
        let monomials = monomials_of_degree(k, g);
        if monomials.is_empty() && g > 0 {
            break;
        }
        let index: BTreeMap<Vec<u32>, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let mut rows: Vec<QVec> = Vec::new();
        for nf in &nonfaces {
            let deg_nf: u32 = nf.iter().sum();
            if deg_nf > g {
                continue;
            }
            for m in monomials_of_degree(k, g - deg_nf) {
                let prod: Vec<u32> = m.iter().zip(nf.iter()).map(|(a, b)| a + b).collect();
                let mut row = vec![BigRational::zero(); monomials.len()];
                row[index[&prod]] = BigRational::one();
                rows.push(row);
            }
        }
        if g >= 1 {
            for t in 0..rank {
                for m in monomials_of_degree(k, g - 1) {
                    let mut row = vec![BigRational::zero(); monomials.len()];
                    for (i, ray) in rays.iter().enumerate() {
                        if ray[t].is_zero() {
                            continue;
                        }
                        let mut prod = m.clone();
                        prod[i] += 1;
                        row[index[&prod]] = &row[index[&prod]] + &ray[t];
                    }
                    if row.iter().any(|x| !x.is_zero()) {
                        rows.push(row);
                    }
                }
            }
        }

        let (basis_pos, normal) = reduce_layer(&rows, monomials.len());
        let empty = basis_pos.is_empty();
        layer_monomials.push(monomials);
        layer_basis.push(basis_pos);
        layer_normal.push(normal);
        if empty {
            layer_monomials.pop();
            layer_basis.pop();
            layer_normal.pop();
            break;
        }
        g += 1;
        if g > cap {
            return Err(EngineError::Construction(
                "cohomology basis does not terminate; the fan does not present a \
                 finite-dimensional ring"
                    .into(),
            ));
        }
    }

    // Flatten the global basis and index map.
    let mut out_labels = Vec::new();
    let mut out_degrees = Vec::new();
    let mut global: Vec<Vec<usize>> = Vec::new();
    for (g, basis_pos) in layer_basis.iter().enumerate() {
        let mut slots = Vec::new();
        for &p in basis_pos {
            slots.push(out_labels.len());
            out_labels.push(monomial_label(&layer_monomials[g][p], labels));
            out_degrees.push(g as u32);
        }
        global.push(slots);
    }
    let dim: usize = out_labels.len();

    let mut actions = Vec::new();
    for i in 0..k {
        let mut m = QMatrix::zero(dim, dim);
        for (g, basis_pos) in layer_basis.iter().enumerate() {
            if g + 1 >= layer_monomials.len() {
                continue; // products land beyond the top degree: zero
            }
            for (slot, &p) in basis_pos.iter().enumerate() {
                let col = global[g][slot];
                let mut prod = layer_monomials[g][p].clone();
                prod[i] += 1;
                let next_index = layer_monomials[g + 1]
                    .iter()
                    .position(|mm| *mm == prod)
                    .unwrap();
                let coords = &layer_normal[g + 1][next_index];
                for (t, c) in coords.iter().enumerate() {
                    if !c.is_zero() {
                        let row = global[g + 1][t];
                        m.data[row][col] = c.clone();
                    }
                }
            }
        }
        actions.push(m);
    }

    Ok(QuotientRing { labels: out_labels, degrees: out_degrees, actions })
}

/// Row-reduce the relation rows; returns the non-pivot (basis) positions and
/// the normal form of every monomial as coordinates over that basis.
fn reduce_layer(rows: &[QVec], width: usize) -> (Vec<usize>, Vec<QVec>) {
    let mut basis_pos: Vec<usize> = Vec::new();
    let mut normal: Vec<QVec> = Vec::new();
    if rows.is_empty() {
        for j in 0..width {
            basis_pos.push(j);
        }
        for j in 0..width {
            let mut e = vec![BigRational::zero(); width];
            e[j] = BigRational::one();
            normal.push(e);
        }
        return (basis_pos, normal);
    }
    let mut m = QMatrix::new(rows.to_vec());
    let pivots = m.rref();
    let pivot_set: BTreeSet<usize> = pivots.iter().copied().collect();
    for j in 0..width {
        if !pivot_set.contains(&j) {
            basis_pos.push(j);
        }
    }
    let pos_of: BTreeMap<usize, usize> = basis_pos
        .iter()
        .enumerate()
        .map(|(t, &j)| (j, t))
        .collect();
    for j in 0..width {
        let mut coords = vec![BigRational::zero(); basis_pos.len()];
        if let Some(&t) = pos_of.get(&j) {
            coords[t] = BigRational::one();
        } else {
            let r = pivots.iter().position(|&p| p == j).unwrap();
            for (&b, &t) in &pos_of {
                coords[t] = -&m.data[r][b];
            }
        }
        normal.push(coords);
    }
    (basis_pos, normal)
}

/// Minimal subsets of rays spanning no cone, as squarefree exponent vectors.
fn minimal_nonfaces(k: usize, max_cones: &[Vec<usize>]) -> Vec<Vec<u32>> {
    let mut found: Vec<BTreeSet<usize>> = Vec::new();
    for size in 2..=k {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            let set: BTreeSet<usize> = subset.iter().copied().collect();
            let is_face = max_cones.iter().any(|c| set.iter().all(|i| c.contains(i)));
            if !is_face && !found.iter().any(|f| f.is_subset(&set)) {
                found.push(set);
            }
            if !next_combination(&mut subset, k) {
                break;
            }
        }
    }
    found
        .into_iter()
        .map(|s| {
            let mut e = vec![0u32; k];
            for i in s {
                e[i] = 1;
            }
            e
        })
        .collect()
}

/// Advance to the next size-|subset| combination of {0..k}; false at the end.
fn next_combination(subset: &mut [usize], k: usize) -> bool {
    let size = subset.len();
    let mut i = size;
    while i > 0 {
        i -= 1;
        if subset[i] < k - size + i {
            subset[i] += 1;
            for t in (i + 1)..size {
                subset[t] = subset[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn monomials_of_degree(k: usize, g: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if k == 0 {
        if g == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut current = vec![0u32; k];
    fill_monomials(&mut current, 0, g, &mut out);
    out.sort();
    out
}

fn fill_monomials(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for v in 0..=remaining {
        current[pos] = v;
        fill_monomials(current, pos + 1, remaining - v, out);
    }
    current[pos] = 0;
}

fn monomial_label(m: &[u32], labels: &[String]) -> String {
    let mut parts = Vec::new();
    for (i, &e) in m.iter().enumerate() {
        if e == 1 {
            parts.push(labels[i].clone());
        } else if e > 1 {
            parts.push(format!("{}^{}", labels[i], e));
        }
    }
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

fn rational_matrix_to_poly(m: &QMatrix, nvars: usize) -> PolyMatrix {
    let mut out = PolyMatrix::zero(m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            if !m.data[r][c].is_zero() {
                *out.entry_mut(r, c) = Poly::constant(nvars, m.data[r][c].clone());
            }
        }
    }
    out
}

fn q_add(a: &QMatrix, b: &QMatrix) -> QMatrix {
    let mut out = a.clone();
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[r][c] = &a.data[r][c] + &b.data[r][c];
        }
    }
    out
}

fn q_scale(a: &QMatrix, s: &BigRational) -> QMatrix {
    let mut out = a.clone();
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[r][c] = &a.data[r][c] * s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abelian::FGAbelianGroup;
    use crate::qnum::{qi, qq};

    fn iv(v: &[i64]) -> IVec {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    fn plane() -> StackyFan {
        StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[-1, -1]), iv(&[1, 0]), iv(&[0, 1])],
            vec![vec![0, 1], vec![0, 2], vec![1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn plane_untwisted_ring() {
        let alg = ring_from_fan_nonequivariant(&plane()).unwrap();
        assert_eq!(alg.dim(), 3);
        let labels: Vec<&str> = alg.basis.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, vec!["1", "u1", "u1^2"]);
        for i in 0..3 {
            assert_eq!(alg.grading(i), qi(i as i64));
        }
        // all three divisor classes coincide
        assert_eq!(alg.divisor_action[0], alg.divisor_action[1]);
        assert_eq!(alg.divisor_action[0], alg.divisor_action[2]);
        // P^3 = 0
        let mut v = alg.unit();
        for _ in 0..2 {
            v = alg.apply_divisor(&v, 0);
            assert!(!v.is_zero());
        }
        assert!(alg.apply_divisor(&v, 0).is_zero());
        // Euler check: untwisted rank equals the number of maximal cones.
        assert_eq!(alg.sector_members(0).len(), 3);
    }

    #[test]
    fn weighted_line_untwisted_ring() {
        let fan = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[3, -1]), iv(&[0, 1]), iv(&[-1, 0])],
            vec![vec![0, 1], vec![1, 2], vec![0, 2]],
        )
        .unwrap();
        let alg = ring_from_fan_nonequivariant(&fan).unwrap();
        assert_eq!(alg.dim(), 3);
        assert_eq!(alg.divisor_action[0], alg.divisor_action[1]);
        let triple = alg.divisor_action[0].scale(&qi(3));
        assert_eq!(alg.divisor_action[2], triple);
        // (class of the degree-1 divisor)^3 = 0
        let v = alg.apply_divisor(&alg.unit(), 0);
        let v = alg.apply_divisor(&v, 0);
        assert!(!v.is_zero());
        assert!(alg.apply_divisor(&v, 0).is_zero());
    }

    #[test]
    fn football_full_chen_ruan() {
        let fan = StackyFan::new(
            FGAbelianGroup::free(1),
            vec![iv(&[-2]), iv(&[2])],
            vec![vec![0], vec![1]],
        )
        .unwrap();
        let alg = chen_ruan_from_fan(&fan, AlgebraMode::Nonequivariant).unwrap();
        assert_eq!(alg.sectors.len(), 3);
        assert_eq!(alg.dim(), 4);
        assert_eq!(alg.sector_members(0).len(), 2);
        assert_eq!(alg.sector_members(1).len(), 1);
        assert_eq!(alg.sector_members(2).len(), 1);
        // coarse relation u1 = u2 holds on every sector
        assert_eq!(alg.divisor_action[0], alg.divisor_action[1]);
        // the hyperplane class is nonzero on the untwisted sector ...
        assert!(!alg.apply_divisor(&alg.unit(), 0).is_zero());
        // ... and zero on the point sectors
        assert!(alg.apply_divisor(&alg.sector_unit(1), 0).is_zero());
        assert!(alg.apply_divisor(&alg.sector_unit(2), 0).is_zero());
        // age-shifted gradings
        assert_eq!(alg.grading(alg.unit_of_sector[1]), qq(1, 2));
        assert_eq!(alg.grading(alg.unit_of_sector[2]), qq(1, 2));
    }

    #[test]
    fn torsion_point_sectors() {
        let group = FGAbelianGroup::new(0, vec![BigInt::from(3)]).unwrap();
        let fan = StackyFan::new(group, vec![], vec![]).unwrap();
        let non = chen_ruan_from_fan(&fan, AlgebraMode::Nonequivariant).unwrap();
        assert_eq!(non.dim(), 3);
        assert_eq!(non.sectors.len(), 3);
        assert!(non.divisor_action.is_empty());
        let eq = chen_ruan_from_fan(&fan, AlgebraMode::Equivariant).unwrap();
        assert_eq!(eq.dim(), 3);
        assert_eq!(eq.coeff.nvars(), 0);
    }

    #[test]
    fn affine_equivariant_sectors() {
        let fan = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[3, -1]), iv(&[0, 1])],
            vec![vec![0, 1]],
        )
        .unwrap();
        let alg = chen_ruan_from_fan(&fan, AlgebraMode::Equivariant).unwrap();
        assert_eq!(alg.sectors.len(), 3);
        assert_eq!(alg.dim(), 3);
        assert_eq!(alg.coeff.names, vec!["chi1", "chi2"]);
        for s in 0..3 {
            let v = alg.apply_divisor(&alg.sector_unit(s), 0);
            assert_eq!(v.coords[alg.unit_of_sector[s]], Poly::var(2, 0));
            let w = alg.apply_divisor(&alg.sector_unit(s), 1);
            assert_eq!(w.coords[alg.unit_of_sector[s]], Poly::var(2, 1));
        }
        // nonequivariant mode refuses the non-complete fan
        let err = chen_ruan_from_fan(&fan, AlgebraMode::Nonequivariant).unwrap_err();
        assert!(matches!(err, EngineError::Invalid(_)));
        // equivariant mode refuses a complete fan (not affine type)
        let err = chen_ruan_from_fan(&plane(), AlgebraMode::Equivariant).unwrap_err();
        assert!(matches!(err, EngineError::Invalid(_)));
    }

    fn hypersurface_target() -> AlgebraDescription {
        // Q[P]/(P^4) on the untwisted sector plus two rank-1 point sectors.
        let shift = |dim: usize, entries: &[(usize, usize, i64)]| {
            let mut m = PolyMatrix::zero(dim);
            for &(r, c, v) in entries {
                *m.entry_mut(r, c) = Poly::constant(0, qi(v));
            }
            m
        };
        let p_action = shift(6, &[(1, 0, 1), (2, 1, 1), (3, 2, 1)]);
        let p3_action = shift(6, &[(1, 0, 3), (2, 1, 3), (3, 2, 3)]);
        AlgebraDescription {
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
        }
    }

    #[test]
    fn manual_structure_constants() {
        let alg = algebra_from_structure_constants(hypersurface_target()).unwrap();
        assert_eq!(alg.dim(), 6);
        // P^4 = 0
        let mut v = alg.unit();
        for _ in 0..3 {
            v = alg.apply_divisor(&v, 0);
        }
        assert!(!v.is_zero());
        assert!(alg.apply_divisor(&v, 0).is_zero());
        assert_eq!(alg.grading(4), qi(1));
        assert_eq!(alg.grading(5), qi(2));

        // non-commuting matrices are rejected by name: replace one action by
        // a differently weighted shift on the same chain
        let mut bad = hypersurface_target();
        *bad.divisor_action[1].entry_mut(2, 1) = Poly::constant(0, qi(2));
        let err = algebra_from_structure_constants(bad).unwrap_err();
        assert!(err.to_string().contains("commute"), "{err}");

        // grading violations are rejected by name
        let mut bad = hypersurface_target();
        *bad.divisor_action[0].entry_mut(3, 0) = Poly::one(0);
        let err = algebra_from_structure_constants(bad).unwrap_err();
        assert!(err.to_string().contains("grading"), "{err}");

        // a unit of nonzero degree is rejected
        let mut bad = hypersurface_target();
        bad.unit_of_sector[0] = 1;
        assert!(algebra_from_structure_constants(bad).is_err());
    }

    #[test]
    fn multiply_divisor_polynomial() {
        let alg = ring_from_fan_nonequivariant(&plane()).unwrap();
        // u1 * u2 acts as P^2
        let mut p: DivisorPolynomial = BTreeMap::new();
        p.insert(vec![1, 1, 0], Poly::one(0));
        let v = alg.multiply(&alg.unit(), &p);
        let mut expect = alg.zero();
        expect.coords[2] = Poly::one(0);
        assert_eq!(v, expect);
        // 1 acts as the identity
        let mut one: DivisorPolynomial = BTreeMap::new();
        one.insert(vec![0, 0, 0], Poly::one(0));
        assert_eq!(alg.multiply(&v, &one), v);
        // P^2 * P = 0
        let mut u1: DivisorPolynomial = BTreeMap::new();
        u1.insert(vec![1, 0, 0], Poly::one(0));
        assert!(alg.multiply(&v, &u1).is_zero());
    }

    #[test]
    fn surface_sector_ranks() {
        let fan = StackyFan::new(
            FGAbelianGroup::free(2),
            vec![iv(&[1, 0]), iv(&[0, 1]), iv(&[-1, -3]), iv(&[0, -2])],
            vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![0, 3]],
        )
        .unwrap();
        let alg = chen_ruan_from_fan(&fan, AlgebraMode::Nonequivariant).unwrap();
        assert_eq!(alg.sectors.len(), 2);
        // untwisted rank = number of maximal cones; the half sector is a
        // football-type coarse line of rank 2
        assert_eq!(alg.sector_members(0).len(), 4);
        assert_eq!(alg.sector_members(1).len(), 2);
        assert_eq!(alg.sectors[1].age, qq(1, 2));
    }
}
