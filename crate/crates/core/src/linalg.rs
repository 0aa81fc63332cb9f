//! Dense kernels shared by every estimator.
//!
//! All routines are pure functions of their inputs. Where a decomposition has
//! a sign or ordering ambiguity a fixed convention is applied, so two calls on
//! the same input produce bit-identical output:
//!
//! * eigenvectors: the largest-magnitude entry of each column is positive
//!   (ties go to the lowest row index);
//! * QR: the diagonal of `R` is strictly positive.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense real matrix. Storage is column-major; the wire format converts to
/// row-major when serializing.
pub type Matrix = DMatrix<f64>;

/// Tolerance for the column-orthonormality invariant of [`SubspaceEstimate`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative singular value cutoff for numerical rank.
pub const RANK_RTOL: f64 = 1e-12;

/// Relative tolerance on `‖S − Sᵀ‖_F / ‖S‖_F` accepted by the symmetric solvers.
pub const SYMMETRY_RTOL: f64 = 1e-10;

/// A `d × r` matrix with orthonormal columns spanning an `r`-dimensional
/// subspace of `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    basis: Matrix,
}

impl SubspaceEstimate {
    /// Wraps `basis` after checking `basisᵀ·basis = I` to [`ORTHONORMAL_TOL`].
    pub fn new(basis: Matrix) -> Result<Self> {
        Self::with_tolerance(basis, ORTHONORMAL_TOL)
    }

    /// Same as [`SubspaceEstimate::new`] with a caller-chosen tolerance.
    pub fn with_tolerance(basis: Matrix, tol: f64) -> Result<Self> {
        if basis.nrows() == 0 || basis.ncols() == 0 {
            return Err(Error::Shape("basis must be non-empty".into()));
        }
        if basis.ncols() > basis.nrows() {
            return Err(Error::Shape(format!(
                "subspace dimension {} exceeds ambient dimension {}",
                basis.ncols(),
                basis.nrows()
            )));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dev = orthonormality_defect(&basis);
        if dev > tol {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { basis })
    }

    pub(crate) fn from_trusted(basis: Matrix) -> Self {
        debug_assert!(orthonormality_defect(&basis) < 1e-8);
        Self { basis }
    }

    /// The first `r` columns of an orthogonal matrix.
    pub fn leading_columns(u: &Matrix, r: usize) -> Result<Self> {
        if r == 0 || r > u.ncols() {
            return Err(Error::Shape(format!("cannot take {r} columns of {}", u.ncols())));
        }
        Self::new(u.columns(0, r).into_owned())
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn into_inner(self) -> Matrix {
        self.basis
    }

    /// Ambient dimension `d`.
    pub fn dim_ambient(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace dimension `r`.
    pub fn dim_subspace(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis · Z`, another basis of the same subspace.
    pub fn rotated(&self, z: &OrthogonalTransform) -> Result<Self> {
        if z.dim() != self.dim_subspace() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} transform for a rank-{} basis",
                z.dim(),
                z.dim(),
                self.dim_subspace()
            )));
        }
        Ok(Self::from_trusted(&self.basis * z.matrix()))
    }

    /// Orthogonal projector `V·Vᵀ` (d × d).
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }
}

/// An `r × r` orthogonal matrix (determinant ±1).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalTransform {
    matrix: Matrix,
}

impl OrthogonalTransform {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape("orthogonal transform must be square".into()));
        }
        let dev = orthonormality_defect(&matrix);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { matrix })
    }

    pub fn identity(r: usize) -> Self {
        Self {
            matrix: Matrix::identity(r, r),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn transpose(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }
}

/// Largest absolute entry of `MᵀM − I`.
pub fn orthonormality_defect(m: &Matrix) -> f64 {
    let gram = m.transpose() * m;
    let mut dev = 0.0f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Spectral norm of a symmetric matrix, `max |λ_i|`.
pub fn spectral_norm_symmetric(s: &Matrix) -> Result<f64> {
    let sym = symmetrized(s)?;
    Ok(sym
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// Numerical rank with the relative cutoff [`RANK_RTOL`].
pub fn numerical_rank(a: &Matrix) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_RTOL * smax).count()
}

/// Thin QR factorization `A = Q·R` with positive `diag(R)`.
///
/// Fails with `RankDeficient` when `A` has numerical rank below its column
/// count; callers averaging bases treat that as a degenerate average.
pub fn qr_orthonormalize(a: &Matrix) -> Result<(SubspaceEstimate, Matrix)> {
    let (d, r) = a.shape();
    if r == 0 || d == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    if r > d {
        return Err(Error::Shape(format!("{d}x{r} matrix has more columns than rows")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let rank = numerical_rank(a);
    if rank < r {
        return Err(Error::RankDeficient(rank));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut rr = qr.r();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            rr.row_mut(j).neg_mut();
        }
    }
    Ok((SubspaceEstimate::from_trusted(q), rr))
}

/// Orthonormal basis for the column span of `A` from its left singular
/// vectors. Fails when the numerical rank is below the column count.
pub fn svd_orthonormalize(a: &Matrix) -> Result<SubspaceEstimate> {
    let (d, r) = a.shape();
    if r == 0 || d == 0 || r > d {
        return Err(Error::Shape(format!("cannot orthonormalize a {d}x{r} matrix")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s = &svd.singular_values;
    let smax = s.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let k = if smax == 0.0 {
        0
    } else {
        s.iter().filter(|&&v| v > RANK_RTOL * smax).count()
    };
    if k < r {
        return Err(Error::RankDeficient(k));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let mut basis = Matrix::zeros(d, r);
    for (dst, &src) in order.iter().take(r).enumerate() {
        basis.set_column(dst, &u.column(src));
        canonicalize_column_sign(&mut basis, dst);
    }
    Ok(SubspaceEstimate::from_trusted(basis))
}

fn symmetrized(s: &Matrix) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let st = s.transpose();
    let norm = s.norm();
    let asym = (s - &st).norm();
    if norm > 0.0 && asym > SYMMETRY_RTOL * norm {
        return Err(Error::NotSymmetric(asym / norm));
    }
    Ok((s + st) * 0.5)
}

/// Flips column `j` so that its largest-magnitude entry is positive.
pub(crate) fn canonicalize_column_sign(m: &mut Matrix, j: usize) {
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (i, v) in m.column(j).iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if m[(best, j)] < 0.0 {
        m.column_mut(j).neg_mut();
    }
}

/// Full eigendecomposition of a symmetric matrix: eigenvalues in descending
/// algebraic order with the matching eigenvectors as columns.
pub fn symmetric_eigen(s: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let sym = symmetrized(s)?;
    let d = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let mut values = Vec::with_capacity(d);
    let mut vectors = Matrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        canonicalize_column_sign(&mut vectors, dst);
    }
    Ok((values, vectors))
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    let sym = symmetrized(s)?;
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// Leading `r`-dimensional invariant subspace of a symmetric matrix together
/// with its full spectrum (descending).
pub fn top_eigenspace(s: &Matrix, r: usize) -> Result<(SubspaceEstimate, Vec<f64>)> {
    if r == 0 || r > s.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "requested {r} eigenvectors of a {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    let (values, vectors) = symmetric_eigen(s)?;
    let v = vectors.columns(0, r).into_owned();
    Ok((SubspaceEstimate::from_trusted(v), values))
}

/// Orthogonal `Z` minimising `‖A·Z − B‖_F` for arbitrary `p × q` matrices.
///
/// With `AᵀB = P·Σ·Qᵀ` the minimiser is `Z = P·Qᵀ`. The SVD of the square
/// `q × q` cross product is full, so `Z` stays orthogonal when `AᵀB` is
/// singular.
pub fn procrustes_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "procrustes operands {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let cross = a.transpose() * b;
    let svd = cross.svd(true, true);
    let p = svd.u.expect("left singular vectors requested");
    let qt = svd.v_t.expect("right singular vectors requested");
    Ok(p * qt)
}

/// Procrustes alignment of basis `A` onto basis `B`.
pub fn procrustes_rotation(a: &SubspaceEstimate, b: &SubspaceEstimate) -> Result<OrthogonalTransform> {
    let z = procrustes_matrix(a.basis(), b.basis())?;
    Ok(OrthogonalTransform { matrix: z })
}

/// `‖A·Z − B‖_F`.
pub fn procrustes_residual(a: &Matrix, z: &Matrix, b: &Matrix) -> f64 {
    (a * z - b).norm()
}
