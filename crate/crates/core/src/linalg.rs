//! Small dense helpers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-major `vec(M)`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, p: usize, q: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), p * q, "unvec: length {} is not {}x{}", v.len(), p, q);
    DMatrix::from_column_slice(p, q, v.as_slice())
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `max |m_ij − m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Flips `col` so that its largest-magnitude entry is positive; returns the
/// sign applied.
pub fn sign_normalize(col: &mut [f64]) -> f64 {
    let mut best = 0usize;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|x| *x < 0.0) {
        col.iter_mut().for_each(|x| *x = -*x);
        -1.0
    } else {
        1.0
    }
}

/// Orthonormal basis of the orthogonal complement of the column span of `u`
/// (`u` must have orthonormal columns). Columns are sign-normalized.
pub fn orthonormal_completion(u: &DMatrix<f64>) -> DMatrix<f64> {
    let p = u.nrows();
    let k = u.ncols();
    if k >= p {
        return DMatrix::zeros(p, 0);
    }
    if k == 0 {
        return DMatrix::identity(p, p);
    }
    let mut aug = DMatrix::zeros(p, k + p);
    aug.view_mut((0, 0), (p, k)).copy_from(u);
    aug.view_mut((0, k), (p, p)).copy_from(&DMatrix::<f64>::identity(p, p));
    let q = aug.qr().q();
    let mut comp = q.columns(k, p - k).into_owned();
    // One re-orthogonalization pass against u keeps ‖uᵀ comp‖ at rounding level.
    let proj = u * (u.transpose() * &comp);
    comp -= proj;
    for mut c in comp.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    let comp = comp.qr().q();
    let mut comp = comp.columns(0, p - k).into_owned();
    for j in 0..comp.ncols() {
        let mut col: Vec<f64> = comp.column(j).iter().copied().collect();
        sign_normalize(&mut col);
        comp.set_column(j, &DVector::from_vec(col));
    }
    comp
}

/// `[a, b]` side by side.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// Neumaier-compensated accumulator over a flat buffer.
#[derive(Debug, Clone)]
pub struct CompensatedSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSum {
    pub fn zeros(len: usize) -> Self {
        Self { sum: vec![0.0; len], comp: vec![0.0; len] }
    }

    #[inline]
    pub fn add(&mut self, idx: usize, x: f64) {
        let s = self.sum[idx];
        let t = s + x;
        if s.abs() >= x.abs() {
            self.comp[idx] += (s - t) + x;
        } else {
            self.comp[idx] += (x - t) + s;
        }
        self.sum[idx] = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        assert_eq!(self.sum.len(), other.sum.len());
        for i in 0..self.sum.len() {
            self.add(i, other.sum[i]);
            self.comp[i] += other.comp[i];
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

/// Serde adapter storing a matrix as a row-major array of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}
