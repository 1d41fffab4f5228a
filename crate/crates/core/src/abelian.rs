//! Finitely generated abelian groups, integer matrices, and Smith reduction.
//!
//! A group is stored in split form `Z^rank + Z/t_1 + ... + Z/t_l` with the
//! invariant factors in a divisibility chain. Elements are integer coordinate
//! vectors of length `rank + l`, torsion coordinates reduced into `[0, t_i)`.
//!
//! The homomorphisms we need always have a free source, so a map is a single
//! integer matrix whose columns are images of the standard basis. Kernels,
//! cokernels and Gale duals all come from one Smith normal form routine that
//! tracks its row and column transforms.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::EngineError;
use crate::qmat::QMatrix;

pub type IVec = Vec<BigInt>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<IVec>,
}

impl IMatrix {
    pub fn new(data: Vec<IVec>) -> Self {
        let rows = data.len();
        let cols = data.first().map_or(0, |r| r.len());
        assert!(data.iter().all(|r| r.len() == cols), "ragged matrix");
        IMatrix { rows, cols, data }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        IMatrix { rows, cols, data: vec![vec![BigInt::zero(); cols]; rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = IMatrix::zero(n, n);
        for i in 0..n {
            m.data[i][i] = BigInt::one();
        }
        m
    }

    /// Like `from_columns`, but with an explicit row count so that an empty
    /// column list still produces a matrix of the right height.
    pub fn from_columns_with_rows(cols: &[IVec], rows: usize) -> Self {
        let mut m = IMatrix::zero(rows, cols.len());
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), rows, "column length mismatch");
            for i in 0..rows {
                m.data[i][j] = col[i].clone();
            }
        }
        m
    }

    pub fn from_columns(cols: &[IVec]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        let mut m = IMatrix::zero(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            assert_eq!(c.len(), rows, "ragged column set");
            for i in 0..rows {
                m.data[i][j] = c[i].clone();
            }
        }
        m
    }

    pub fn from_i64(rows: &[&[i64]]) -> Self {
        IMatrix::new(rows.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect())
    }

    pub fn column(&self, j: usize) -> IVec {
        (0..self.rows).map(|i| self.data[i][j].clone()).collect()
    }

    pub fn transpose(&self) -> IMatrix {
        let mut t = IMatrix::zero(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j][i] = self.data[i][j].clone();
            }
        }
        t
    }

    pub fn mat_vec(&self, v: &[BigInt]) -> IVec {
        assert_eq!(v.len(), self.cols, "dimension mismatch");
        self.data
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn mat_mul(&self, other: &IMatrix) -> IMatrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = IMatrix::zero(self.rows, other.cols);
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

    pub fn to_rational(&self) -> QMatrix {
        QMatrix::new(
            self.data
                .iter()
                .map(|r| r.iter().map(|x| BigRational::from_integer(x.clone())).collect())
                .collect(),
        )
    }

    /// Exact determinant of a square matrix, via rational elimination.
    pub fn det(&self) -> BigInt {
        assert_eq!(self.rows, self.cols, "determinant of non-square matrix");
        let mut m = self.to_rational();
        let mut det = BigRational::one();
        for col in 0..m.cols {
            let Some(p) = (col..m.rows).find(|&r| !m.data[r][col].is_zero()) else {
                return BigInt::zero();
            };
            if p != col {
                m.data.swap(col, p);
                det = -det;
            }
            det *= &m.data[col][col];
            let inv = m.data[col][col].recip();
            for r in col + 1..m.rows {
                if m.data[r][col].is_zero() {
                    continue;
                }
                let factor = &m.data[r][col] * &inv;
                for c in col..m.cols {
                    let sub = &factor * &m.data[col][c];
                    m.data[r][c] -= sub;
                }
            }
        }
        assert!(det.is_integer(), "integer matrix has integer determinant");
        det.to_integer()
    }
}

/// Smith normal form `u * m * v = s` with `u`, `v` unimodular and `s`
/// diagonal; the nonzero diagonal entries form a divisibility chain.
#[derive(Debug, Clone)]
pub struct Snf {
    pub u: IMatrix,
    pub s: IMatrix,
    pub v: IMatrix,
    /// Nonzero diagonal entries of `s`, in chain order.
    pub diag: Vec<BigInt>,
}

pub fn smith_normal_form(m: &IMatrix) -> Snf {
    let mut s = m.clone();
    let mut u = IMatrix::identity(m.rows);
    let mut v = IMatrix::identity(m.cols);
    let limit = m.rows.min(m.cols);

    fn swap_rows(s: &mut IMatrix, u: &mut IMatrix, a: usize, b: usize) {
        s.data.swap(a, b);
        u.data.swap(a, b);
    }
    fn swap_cols(s: &mut IMatrix, v: &mut IMatrix, a: usize, b: usize) {
        for row in s.data.iter_mut() {
            row.swap(a, b);
        }
        for row in v.data.iter_mut() {
            row.swap(a, b);
        }
    }
    // row[dst] -= q * row[src]
    fn row_axpy(s: &mut IMatrix, u: &mut IMatrix, dst: usize, src: usize, q: &BigInt) {
        for c in 0..s.cols {
            let sub = q * &s.data[src][c];
            s.data[dst][c] -= sub;
        }
        for c in 0..u.cols {
            let sub = q * &u.data[src][c];
            u.data[dst][c] -= sub;
        }
    }
    // col[dst] -= q * col[src]
    fn col_axpy(s: &mut IMatrix, v: &mut IMatrix, dst: usize, src: usize, q: &BigInt) {
        for r in 0..s.rows {
            let sub = q * &s.data[r][src];
            s.data[r][dst] -= sub;
        }
        for r in 0..v.rows {
            let sub = q * &v.data[r][src];
            v.data[r][dst] -= sub;
        }
    }

    for t in 0..limit {
        'position: loop {
            // Smallest nonzero entry of the trailing submatrix becomes the pivot.
            let mut pivot: Option<(usize, usize)> = None;
            for i in t..s.rows {
                for j in t..s.cols {
                    if s.data[i][j].is_zero() {
                        continue;
                    }
                    let better = match &pivot {
                        None => true,
                        Some((pi, pj)) => s.data[i][j].abs() < s.data[*pi][*pj].abs(),
                    };
                    if better {
                        pivot = Some((i, j));
                    }
                }
            }
            let Some((pi, pj)) = pivot else {
                break 'position;
            };
            if pi != t {
                swap_rows(&mut s, &mut u, pi, t);
            }
            if pj != t {
                swap_cols(&mut s, &mut v, pj, t);
            }
            // Clear the pivot column and row; a nonzero remainder yields a
            // strictly smaller pivot, so restart from the pivot search.
            for i in t + 1..s.rows {
                if s.data[i][t].is_zero() {
                    continue;
                }
                let q = s.data[i][t].div_floor(&s.data[t][t]);
                row_axpy(&mut s, &mut u, i, t, &q);
                if !s.data[i][t].is_zero() {
                    continue 'position;
                }
            }
            for j in t + 1..s.cols {
                if s.data[t][j].is_zero() {
                    continue;
                }
                let q = s.data[t][j].div_floor(&s.data[t][t]);
                col_axpy(&mut s, &mut v, j, t, &q);
                if !s.data[t][j].is_zero() {
                    continue 'position;
                }
            }
            // Pull in any entry the pivot fails to divide, then reduce again.
            for i in t + 1..s.rows {
                for j in t + 1..s.cols {
                    if !(&s.data[i][j] % &s.data[t][t]).is_zero() {
                        let one = BigInt::from(-1);
                        row_axpy(&mut s, &mut u, t, i, &one);
                        continue 'position;
                    }
                }
            }
            break 'position;
        }
    }
    for t in 0..limit {
        if s.data[t][t].is_negative() {
            for c in 0..s.cols {
                s.data[t][c] = -s.data[t][c].clone();
            }
            for c in 0..u.cols {
                u.data[t][c] = -u.data[t][c].clone();
            }
        }
    }
    let diag: Vec<BigInt> =
        (0..limit).map(|t| s.data[t][t].clone()).filter(|d| !d.is_zero()).collect();
    Snf { u, s, v, diag }
}

/// Basis of the integer kernel of `m` (columns of `v` over zero columns of `s`).
pub fn integer_kernel(m: &IMatrix) -> Vec<IVec> {
    let snf = smith_normal_form(m);
    (snf.diag.len()..m.cols).map(|j| snf.v.column(j)).collect()
}

/// Solves `m x = b` over the integers.
pub fn integer_solve(m: &IMatrix, b: &[BigInt]) -> Option<IVec> {
    let snf = smith_normal_form(m);
    let ub = snf.u.mat_vec(b);
    let mut y = vec![BigInt::zero(); m.cols];
    for (i, coord) in ub.iter().enumerate() {
        if i < snf.diag.len() {
            let (q, r) = coord.div_rem(&snf.diag[i]);
            if !r.is_zero() {
                return None;
            }
            y[i] = q;
        } else if !coord.is_zero() {
            return None;
        }
    }
    Some(snf.v.mat_vec(&y))
}

/// Basis (as columns) of the lattice spanned by the columns of `m`.
pub fn lattice_basis(m: &IMatrix) -> Vec<IVec> {
    let snf = smith_normal_form(m);
    let u_inv = rational_to_integer(&snf.u.to_rational().inverse().expect("unimodular"));
    snf.diag
        .iter()
        .enumerate()
        .map(|(i, d)| u_inv.column(i).iter().map(|x| x * d).collect())
        .collect()
}

fn rational_to_integer(m: &QMatrix) -> IMatrix {
    IMatrix::new(
        m.data
            .iter()
            .map(|r| {
                r.iter()
                    .map(|x| {
                        assert!(x.is_integer(), "expected integral matrix");
                        x.to_integer()
                    })
                    .collect()
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FGAbelianGroup {
    pub rank: usize,
    /// Invariant factors, each at least 2, each dividing the next.
    pub torsion: Vec<BigInt>,
}

impl FGAbelianGroup {
    pub fn free(rank: usize) -> Self {
        FGAbelianGroup { rank, torsion: Vec::new() }
    }

    pub fn new(rank: usize, torsion: Vec<BigInt>) -> Result<Self, EngineError> {
        for w in torsion.windows(2) {
            if !(&w[1] % &w[0]).is_zero() {
                return Err(EngineError::Invalid(
                    "torsion orders must form a divisibility chain".into(),
                ));
            }
        }
        if torsion.iter().any(|t| t < &BigInt::from(2)) {
            return Err(EngineError::Invalid("torsion orders must be at least 2".into()));
        }
        Ok(FGAbelianGroup { rank, torsion })
    }

    pub fn ngens(&self) -> usize {
        self.rank + self.torsion.len()
    }

    pub fn is_free(&self) -> bool {
        self.torsion.is_empty()
    }

    pub fn zero(&self) -> IVec {
        vec![BigInt::zero(); self.ngens()]
    }

    pub fn is_zero(&self, v: &[BigInt]) -> bool {
        let mut v = v.to_vec();
        self.normalize(&mut v);
        v.iter().all(|x| x.is_zero())
    }

    pub fn normalize(&self, v: &mut [BigInt]) {
        assert_eq!(v.len(), self.ngens(), "coordinate length mismatch");
        for (k, t) in self.torsion.iter().enumerate() {
            let i = self.rank + k;
            v[i] = v[i].mod_floor(t);
        }
    }

    pub fn add(&self, a: &[BigInt], b: &[BigInt]) -> IVec {
        let mut out: IVec = a.iter().zip(b).map(|(x, y)| x + y).collect();
        self.normalize(&mut out);
        out
    }

    pub fn neg(&self, a: &[BigInt]) -> IVec {
        let mut out: IVec = a.iter().map(|x| -x).collect();
        self.normalize(&mut out);
        out
    }

    pub fn smul(&self, k: &BigInt, a: &[BigInt]) -> IVec {
        let mut out: IVec = a.iter().map(|x| k * x).collect();
        self.normalize(&mut out);
        out
    }

    /// Free-part coordinates (torsion forgotten).
    pub fn free_part<'a>(&self, v: &'a [BigInt]) -> &'a [BigInt] {
        &v[..self.rank]
    }

    /// Relation columns `t_i * e_{rank+i}` presenting the group as a cokernel.
    pub fn relation_columns(&self) -> IMatrix {
        let mut m = IMatrix::zero(self.ngens(), self.torsion.len());
        for (k, t) in self.torsion.iter().enumerate() {
            m.data[self.rank + k][k] = t.clone();
        }
        m
    }

    /// Every torsion coordinate tuple, as full-length elements with zero free part.
    pub fn torsion_elements(&self) -> Vec<IVec> {
        let mut out = vec![self.zero()];
        for (k, t) in self.torsion.iter().enumerate() {
            let mut next = Vec::new();
            for base in &out {
                let mut c = BigInt::zero();
                while &c < t {
                    let mut v = base.clone();
                    v[self.rank + k] = c.clone();
                    next.push(v);
                    c += 1;
                }
            }
            out = next;
        }
        out
    }

    pub fn order(&self) -> Option<BigInt> {
        if self.rank > 0 {
            return None;
        }
        Some(self.torsion.iter().product())
    }
}

/// Homomorphism from a free group `Z^source_rank` into `target`; columns of
/// `matrix` are the images of the standard basis.
#[derive(Debug, Clone)]
pub struct GroupHom {
    pub source_rank: usize,
    pub target: FGAbelianGroup,
    pub matrix: IMatrix,
}

impl GroupHom {
    pub fn new(target: FGAbelianGroup, images: Vec<IVec>) -> Result<Self, EngineError> {
        for im in &images {
            if im.len() != target.ngens() {
                return Err(EngineError::Invalid("image coordinate length mismatch".into()));
            }
        }
        let source_rank = images.len();
        Ok(GroupHom { source_rank, target, matrix: IMatrix::from_columns(&images) })
    }

    pub fn apply(&self, v: &[BigInt]) -> IVec {
        let mut out = self.matrix.mat_vec(v);
        self.target.normalize(&mut out);
        out
    }

    /// Image in `target (x) Q`, i.e. the free-part coordinates over the rationals.
    pub fn apply_rational(&self, v: &[BigRational]) -> Vec<BigRational> {
        assert_eq!(v.len(), self.source_rank, "dimension mismatch");
        (0..self.target.rank)
            .map(|i| {
                v.iter()
                    .enumerate()
                    .map(|(j, x)| x * BigRational::from_integer(self.matrix.data[i][j].clone()))
                    .sum()
            })
            .collect()
    }

    /// Presentation matrix `[A | Q]` whose image is `im(hom) + relations`.
    fn presentation(&self) -> IMatrix {
        let q = self.target.relation_columns();
        let mut m = IMatrix::zero(self.target.ngens(), self.source_rank + q.cols);
        for i in 0..self.target.ngens() {
            for j in 0..self.source_rank {
                m.data[i][j] = self.matrix.data[i][j].clone();
            }
            for j in 0..q.cols {
                m.data[i][self.source_rank + j] = q.data[i][j].clone();
            }
        }
        m
    }

    /// Basis of the kernel sublattice of `Z^source_rank`.
    ///
    /// Kernel vectors of `[A | Q]` project isomorphically onto the kernel of
    /// the map into the quotient group because `Q` is injective.
    pub fn kernel(&self) -> Vec<IVec> {
        integer_kernel(&self.presentation())
            .into_iter()
            .map(|v| v[..self.source_rank].to_vec())
            .collect()
    }

    pub fn cokernel(&self) -> Cokernel {
        Cokernel::of_presentation(self.target.ngens(), &self.presentation())
    }

    /// Gale dual: the cokernel of the transposed presentation, with the
    /// classes of the source basis vectors as distinguished generators.
    pub fn gale_dual(&self) -> GaleDual {
        let p = self.presentation().transpose();
        let coker = Cokernel::of_presentation(p.rows, &p);
        let classes = (0..self.source_rank)
            .map(|i| {
                let mut e = vec![BigInt::zero(); p.rows];
                e[i] = BigInt::one();
                coker.project(&e)
            })
            .collect();
        GaleDual { group: coker.group.clone(), classes, coker }
    }
}

/// Quotient of `Z^n` by the column span of a presentation matrix.
#[derive(Debug, Clone)]
pub struct Cokernel {
    pub group: FGAbelianGroup,
    /// Rows taken from the Smith `u`: free rows first, then torsion rows.
    proj: IMatrix,
}

impl Cokernel {
    pub fn of_presentation(ambient: usize, m: &IMatrix) -> Cokernel {
        assert_eq!(ambient, m.rows);
        let snf = smith_normal_form(m);
        let mut free_rows = Vec::new();
        let mut torsion_rows = Vec::new();
        let mut torsion = Vec::new();
        for i in 0..ambient {
            match snf.diag.get(i) {
                None => free_rows.push(i),
                Some(d) if d.is_one() => {}
                Some(d) => {
                    torsion_rows.push(i);
                    torsion.push(d.clone());
                }
            }
        }
        let group = FGAbelianGroup { rank: free_rows.len(), torsion };
        let mut proj = IMatrix::zero(group.ngens(), ambient);
        for (out_i, &i) in free_rows.iter().chain(torsion_rows.iter()).enumerate() {
            proj.data[out_i] = snf.u.data[i].clone();
        }
        Cokernel { group, proj }
    }

    pub fn project(&self, v: &[BigInt]) -> IVec {
        let mut out = self.proj.mat_vec(v);
        self.group.normalize(&mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct GaleDual {
    pub group: FGAbelianGroup,
    /// Class of each source basis vector of the original map.
    pub classes: Vec<IVec>,
    pub coker: Cokernel,
}
