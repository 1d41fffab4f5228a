//! Dense exact linear algebra over the rationals.
//!
//! Matrices are row-major `Vec<Vec<BigRational>>` wrapped in [`QMatrix`].
//! Everything reduces to Gauss-Jordan elimination with exact pivots; there is
//! no conditioning to worry about, only coefficient growth, and the inputs
//! here are small.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::EngineError;

pub type QVec = Vec<BigRational>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<QVec>,
}

impl QMatrix {
    pub fn new(data: Vec<QVec>) -> Self {
        let rows = data.len();
        let cols = data.first().map_or(0, |r| r.len());
        assert!(data.iter().all(|r| r.len() == cols), "ragged matrix");
        QMatrix { rows, cols, data }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        QMatrix { rows, cols, data: vec![vec![BigRational::zero(); cols]; rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = QMatrix::zero(n, n);
        for i in 0..n {
            m.data[i][i] = BigRational::one();
        }
        m
    }

    /// Like `from_columns`, but with an explicit row count so that an empty
    /// column list still produces a matrix of the right height.
    pub fn from_columns_with_rows(cols: &[QVec], rows: usize) -> Self {
        let mut m = QMatrix::zero(rows, cols.len());
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), rows, "column length mismatch");
            for i in 0..rows {
                m.data[i][j] = col[i].clone();
            }
        }
        m
    }

    pub fn from_columns(cols: &[QVec]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        let mut m = QMatrix::zero(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            assert_eq!(c.len(), rows, "ragged column set");
            for i in 0..rows {
                m.data[i][j] = c[i].clone();
            }
        }
        m
    }

    pub fn column(&self, j: usize) -> QVec {
        (0..self.rows).map(|i| self.data[i][j].clone()).collect()
    }

    pub fn columns(&self) -> Vec<QVec> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> QMatrix {
        let mut t = QMatrix::zero(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j][i] = self.data[i][j].clone();
            }
        }
        t
    }

    pub fn mat_vec(&self, v: &[BigRational]) -> QVec {
        assert_eq!(v.len(), self.cols, "dimension mismatch");
        self.data
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn mat_mul(&self, other: &QMatrix) -> QMatrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = QMatrix::zero(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self.data[i][k].is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let prod = &self.data[i][k] * &other.data[k][j];
                    out.data[i][j] += prod;
                }
            }
        }
        out
    }

    /// In-place reduced row echelon form; returns pivot column indices.
    pub fn rref(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            let Some(p) = (row..self.rows).find(|&r| !self.data[r][col].is_zero()) else {
                continue;
            };
            self.data.swap(row, p);
            let inv = self.data[row][col].recip();
            for x in self.data[row].iter_mut() {
                *x *= &inv;
            }
            for r in 0..self.rows {
                if r != row && !self.data[r][col].is_zero() {
                    let factor = self.data[r][col].clone();
                    for c in 0..self.cols {
                        let sub = &factor * &self.data[row][c];
                        self.data[r][c] -= sub;
                    }
                }
            }
            pivots.push(col);
            row += 1;
            if row == self.rows {
                break;
            }
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        m.rref().len()
    }

    /// Basis of the right kernel, one vector per free column.
    pub fn kernel_basis(&self) -> Vec<QVec> {
        let mut m = self.clone();
        let pivots = m.rref();
        let pivot_set: std::collections::HashSet<usize> = pivots.iter().copied().collect();
        let mut basis = Vec::new();
        for free in 0..self.cols {
            if pivot_set.contains(&free) {
                continue;
            }
            let mut v = vec![BigRational::zero(); self.cols];
            v[free] = BigRational::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m.data[r][free].clone();
            }
            basis.push(v);
        }
        basis
    }

    /// Solves `self * x = rhs`; `None` when inconsistent. With several
    /// solutions the free coordinates are set to zero.
    pub fn solve(&self, rhs: &[BigRational]) -> Option<QVec> {
        assert_eq!(rhs.len(), self.rows, "dimension mismatch");
        let mut aug = QMatrix::zero(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.data[i][j] = self.data[i][j].clone();
            }
            aug.data[i][self.cols] = rhs[i].clone();
        }
        let pivots = aug.rref();
        if pivots.contains(&self.cols) {
            return None;
        }
        let mut x = vec![BigRational::zero(); self.cols];
        for (r, &pc) in pivots.iter().enumerate() {
            x[pc] = aug.data[r][self.cols].clone();
        }
        Some(x)
    }

    /// Inverse of a square matrix.
    pub fn inverse(&self) -> Result<QMatrix, EngineError> {
        if self.rows != self.cols {
            return Err(EngineError::Domain("inverse of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut aug = QMatrix::zero(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug.data[i][j] = self.data[i][j].clone();
            }
            aug.data[i][n + i] = BigRational::one();
        }
        let pivots = aug.rref();
        // a pivot in the augmented half means the left block is singular
        if pivots.len() != n || pivots.iter().any(|&c| c >= n) {
            return Err(EngineError::Domain("singular matrix".into()));
        }
        let mut inv = QMatrix::zero(n, n);
        for i in 0..n {
            for j in 0..n {
                inv.data[i][j] = aug.data[i][n + j].clone();
            }
        }
        Ok(inv)
    }
}

/// Scales a rational vector to a primitive integer vector with the same
/// direction (positive multiple). Zero stays zero.
pub fn primitive_direction(v: &[BigRational]) -> QVec {
    let c = crate::qnum::content(v);
    if c.is_zero() {
        return v.to_vec();
    }
    v.iter().map(|x| x / &c).collect()
}

/// Facet description `{x : n_f . x >= 0}` of a polyhedral cone given by
/// generators, via Fourier-Motzkin elimination of the generator multipliers.
/// Returned normals are primitive integer vectors; the list can be empty when
/// the cone is the whole space.
pub fn cone_facets(generators: &[QVec], dim: usize) -> Vec<QVec> {
    if generators.is_empty() {
        // The zero cone: cut out by +/- every coordinate functional.
        let mut out = Vec::new();
        for i in 0..dim {
            let mut v = vec![BigRational::zero(); dim];
            v[i] = BigRational::one();
            out.push(v.clone());
            v[i] = -BigRational::one();
            out.push(v);
        }
        return out;
    }
    // Inequality system over (x, t): x = G t, t >= 0. Encode rows as
    // [coeffs over x | coeffs over t], eliminate t variables one at a time.
    let g = generators.len();
    let width = dim + g;
    let mut rows: Vec<(QVec, bool)> = Vec::new(); // (row, is_equality)
    for i in 0..dim {
        let mut row = vec![BigRational::zero(); width];
        row[i] = BigRational::one();
        for (j, gen) in generators.iter().enumerate() {
            row[dim + j] = -gen[i].clone();
        }
        rows.push((row, true));
    }
    for j in 0..g {
        let mut row = vec![BigRational::zero(); width];
        row[dim + j] = BigRational::one();
        rows.push((row, false));
    }
    for var in dim..width {
        // Prefer solving an equality for the variable.
        if let Some(pos) = rows
            .iter()
            .position(|(r, eq)| *eq && !r[var].is_zero())
        {
            let (pivot, _) = rows.remove(pos);
            let coeff = pivot[var].clone();
            for (r, _) in rows.iter_mut() {
                if !r[var].is_zero() {
                    let factor = &r[var] / &coeff;
                    for c in 0..width {
                        let sub = &factor * &pivot[c];
                        r[c] -= sub;
                    }
                }
            }
            continue;
        }
        let mut pos_rows = Vec::new();
        let mut neg_rows = Vec::new();
        let mut zero_rows = Vec::new();
        for (r, eq) in rows.drain(..) {
            if r[var].is_zero() {
                zero_rows.push((r, eq));
            } else if r[var] > BigRational::zero() {
                pos_rows.push(r);
            } else {
                neg_rows.push(r);
            }
        }
        rows = zero_rows;
        for p in &pos_rows {
            for n in &neg_rows {
                // p[var] > 0 > n[var]: combine to cancel var.
                let mut comb = vec![BigRational::zero(); width];
                for c in 0..width {
                    comb[c] = &p[c] * (-&n[var]) + &n[c] * p[var].clone();
                }
                if comb.iter().any(|x| !x.is_zero()) {
                    rows.push((comb, false));
                }
            }
        }
    }
    // Surviving inequality rows are facet normals over x (t-part is zero).
    let mut normals: Vec<QVec> = Vec::new();
    for (r, eq) in rows {
        let x_part: QVec = r[..dim].to_vec();
        if x_part.iter().all(|v| v.is_zero()) {
            continue;
        }
        let prim = primitive_direction(&x_part);
        let push = |dst: &mut Vec<QVec>, v: QVec| {
            if !dst.contains(&v) {
                dst.push(v);
            }
        };
        if eq {
            let neg: QVec = prim.iter().map(|x| -x.clone()).collect();
            push(&mut normals, prim);
            push(&mut normals, neg);
        } else {
            push(&mut normals, prim);
        }
    }
    normals.sort();
    normals
}

/// True when `point` lies in the cone spanned by `generators`.
pub fn cone_contains(generators: &[QVec], dim: usize, point: &[BigRational]) -> bool {
    cone_facets(generators, dim)
        .iter()
        .all(|n| n.iter().zip(point).map(|(a, b)| a * b).sum::<BigRational>() >= BigRational::zero())
}

/// All integer points of the polytope {y : g·y <= h for each (g, h)}.
///
/// Works by Fourier-Motzkin projection: eliminate the last variable, enumerate
/// the projected polytope recursively, then scan the exact interval left for
/// the last coordinate. Errors when some coordinate is unbounded (the caller is
/// expected to have made the region bounded via a positive grading or caps).
pub fn lattice_points_under(
    ineqs: &[(QVec, BigRational)],
    dim: usize,
) -> Result<Vec<Vec<BigInt>>, EngineError> {
    use crate::qnum::{ceil_int, floor_int};
    if dim == 0 {
        let feasible = ineqs.iter().all(|(_, h)| *h >= BigRational::zero());
        return Ok(if feasible { vec![Vec::new()] } else { Vec::new() });
    }
    let var = dim - 1;
    let mut kept: Vec<(QVec, BigRational)> = Vec::new();
    let mut pos: Vec<(QVec, BigRational)> = Vec::new();
    let mut neg: Vec<(QVec, BigRational)> = Vec::new();
    for (g, h) in ineqs {
        if g[var].is_zero() {
            kept.push((g[..var].to_vec(), h.clone()));
        } else if g[var] > BigRational::zero() {
            pos.push((g.clone(), h.clone()));
        } else {
            neg.push((g.clone(), h.clone()));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        // No two-sided constraint on this coordinate anywhere in the polytope.
        return Err(EngineError::NonTerminating(format!(
            "coordinate {var} is unbounded in the requested enumeration"
        )));
    }
    for (gp, hp) in &pos {
        for (gn, hn) in &neg {
            // gp[var] > 0 > gn[var]; positive combination cancels the variable.
            let a = gp[var].clone();
            let b = -gn[var].clone();
            let row: QVec = (0..var).map(|c| &gn[c] * &a + &gp[c] * &b).collect();
            let rhs = hn * &a + hp * &b;
            kept.push((row, rhs));
        }
    }
    let mut out = Vec::new();
    for prefix in lattice_points_under(&kept, var)? {
        let prefix_q: QVec =
            prefix.iter().map(|x| BigRational::from_integer(x.clone())).collect();
        let mut lo: Option<BigInt> = None;
        let mut hi: Option<BigInt> = None;
        let mut feasible = true;
        for (g, h) in ineqs {
            let rest = h
                - g[..var]
                    .iter()
                    .zip(&prefix_q)
                    .map(|(a, b)| a * b)
                    .sum::<BigRational>();
            if g[var].is_zero() {
                if rest < BigRational::zero() {
                    feasible = false;
                    break;
                }
            } else if g[var] > BigRational::zero() {
                let bound = floor_int(&(&rest / &g[var]));
                hi = Some(hi.map_or(bound.clone(), |b: BigInt| b.min(bound)));
            } else {
                let bound = ceil_int(&(&rest / &g[var]));
                lo = Some(lo.map_or(bound.clone(), |b: BigInt| b.max(bound)));
            }
        }
        if !feasible {
            continue;
        }
        let (lo, hi) = (lo.unwrap(), hi.unwrap());
        let mut y = lo;
        while y <= hi {
            let mut point = prefix.clone();
            point.push(y.clone());
            out.push(point);
            y += 1;
        }
    }
    Ok(out)
}
