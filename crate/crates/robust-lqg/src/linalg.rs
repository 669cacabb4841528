//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

pub fn hstack<T: nalgebra::Scalar + Default>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::from_element(rows, cols, T::default());
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

pub fn vstack<T: nalgebra::Scalar + Default>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::from_element(rows, cols, T::default());
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(*b);
        at += b.nrows();
    }
    out
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Largest singular value of a complex matrix.
pub fn sigma_max_c(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn sigma_max(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Thin SVD with singular values sorted in decreasing order.
pub fn svd_sorted(m: &Mat) -> (Mat, DVector<f64>, Mat) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let s = svd.singular_values;
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    let u_sorted = Mat::from_fn(u.nrows(), idx.len(), |r, c| u[(r, idx[c])]);
    let vt_sorted = Mat::from_fn(idx.len(), vt.ncols(), |r, c| vt[(idx[r], c)]);
    let s_sorted = DVector::from_fn(idx.len(), |i, _| s[idx[i]]);
    (u_sorted, s_sorted, vt_sorted)
}

/// Symmetric eigen-decomposition with eigenvalues in increasing order.
pub fn eig_sym(m: &Mat) -> (DVector<f64>, Mat) {
    let e = SymmetricEigen::new(sym(m));
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| {
        e.eigenvalues[i]
            .partial_cmp(&e.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_fn(idx.len(), |i, _| e.eigenvalues[idx[i]]);
    let vecs = Mat::from_fn(m.nrows(), idx.len(), |r, c| e.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

pub fn min_eig_sym(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrtm_psd(m: &Mat) -> Mat {
    let (vals, vecs) = eig_sym(m);
    let d = Mat::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    &vecs * d * vecs.transpose()
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn inv_sqrtm_pd(m: &Mat) -> Option<Mat> {
    let (vals, vecs) = eig_sym(m);
    if vals.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let d = Mat::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    Some(&vecs * d * vecs.transpose())
}

pub fn solve(a: &Mat, b: &Mat) -> Option<Mat> {
    if a.nrows() == 0 {
        return Some(Mat::zeros(0, b.ncols()));
    }
    a.clone().lu().solve(b)
}

pub fn inverse(a: &Mat) -> Option<Mat> {
    if a.nrows() == 0 {
        return Some(Mat::zeros(0, 0));
    }
    a.clone().try_inverse()
}

/// Orthonormal basis (columns) of the range of `m`, rank decided relative to `tol`.
pub fn range_basis(m: &Mat, tol: f64) -> Mat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let (u, s, _) = svd_sorted(m);
    let rank = s.iter().filter(|&&v| v > tol).count();
    u.columns(0, rank).into_owned()
}

/// Orthonormal basis of the orthogonal complement of the range of `m`.
pub fn complement_basis(m: &Mat, tol: f64) -> Mat {
    let n = m.nrows();
    if m.ncols() == 0 {
        return Mat::identity(n, n);
    }
    let svd = m.clone().svd(true, false);
    // full U is needed; pad with identity and orthonormalize
    let s = &svd.singular_values;
    let u = svd.u.expect("svd u");
    let rank = s.iter().filter(|&&v| v > tol).count();
    let range: Vec<usize> = {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
        idx.into_iter().take(rank).collect()
    };
    let mut basis: Vec<DVector<f64>> = range.iter().map(|&j| u.column(j).into_owned()).collect();
    let mut comp: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        let mut v = DVector::<f64>::zeros(n);
        v[k] = 1.0;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            v /= nv;
            basis.push(v.clone());
            comp.push(v);
        }
        if comp.len() + rank == n {
            break;
        }
    }
    let mut out = Mat::zeros(n, comp.len());
    for (j, c) in comp.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}
