//! Dense linear-algebra helpers shared by the solvers.
//!
//! Hermitian `d×d` matrices are identified with real vectors of length `d²`
//! through the orthonormal basis
//! `{e_αα} ∪ {(e_αβ+e_βα)/√2} ∪ {i(e_αβ−e_βα)/√2}` (α<β), so that the
//! Hilbert–Schmidt product `tr(AB)` becomes the Euclidean dot product.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::SQRT_2;

use crate::C64;

/// Real coordinates of a hermitian matrix.
pub fn herm_coords(h: &DMatrix<C64>) -> DVector<f64> {
    let d = h.nrows();
    let mut out = DVector::zeros(d * d);
    let mut pos = 0;
    for a in 0..d {
        out[pos] = h[(a, a)].re;
        pos += 1;
    }
    for a in 0..d {
        for b in (a + 1)..d {
            out[pos] = SQRT_2 * h[(a, b)].re;
            out[pos + 1] = SQRT_2 * h[(a, b)].im;
            pos += 2;
        }
    }
    out
}

/// Inverse of [`herm_coords`].
pub fn herm_from_coords(v: &DVector<f64>, d: usize) -> DMatrix<C64> {
    let mut h = DMatrix::zeros(d, d);
    let mut pos = 0;
    for a in 0..d {
        h[(a, a)] = C64::new(v[pos], 0.0);
        pos += 1;
    }
    for a in 0..d {
        for b in (a + 1)..d {
            let z = C64::new(v[pos], v[pos + 1]) / SQRT_2;
            h[(a, b)] = z;
            h[(b, a)] = z.conj();
            pos += 2;
        }
    }
    h
}

/// Real coordinates of the projector `|φ⟩⟨φ|`.
pub fn projector_coords(phi: DVectorView<'_, C64>) -> DVector<f64> {
    let d = phi.len();
    let mut out = DVector::zeros(d * d);
    let mut pos = 0;
    for a in 0..d {
        out[pos] = phi[a].norm_sqr();
        pos += 1;
    }
    for a in 0..d {
        for b in (a + 1)..d {
            let z = phi[a] * phi[b].conj();
            out[pos] = SQRT_2 * z.re;
            out[pos + 1] = SQRT_2 * z.im;
            pos += 2;
        }
    }
    out
}

/// Row-major vectorisation `|A⟩ = Σ A_αβ |αβ⟩`, the operator–vector
/// identification under which `|Ω⟩ = vec(1)`.
pub fn vec_row_major(m: &DMatrix<C64>) -> DVector<C64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |n, _| m[(n / c, n % c)])
}

/// Inverse of [`vec_row_major`] for square matrices.
pub fn unvec_row_major(v: &DVector<C64>, d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |a, b| v[a * d + b])
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(singular_values: &DVector<f64>, rel_tol: f64) -> usize {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Smallest eigenvalue of a hermitian matrix (the matrix is hermitised first).
pub fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Max-abs entry of `U*U − 1`.
pub fn orthonormality_deviation(u: &DMatrix<C64>) -> f64 {
    let g = u.adjoint() * u;
    let mut dev = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    dev
}

/// QR-based orthonormalisation with the triangular factor's diagonal made
/// positive. Applied to a Ginibre matrix this yields an exactly Haar unitary;
/// applied to a nearly unitary matrix it returns a nearby unitary.
pub fn orthonormalize(m: DMatrix<C64>) -> DMatrix<C64> {
    let qr = m.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..q.ncols() {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        let phase = if n > 0.0 { rjj / n } else { C64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// A `d×d` Haar-distributed unitary.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<C64> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    orthonormalize(g)
}

/// Unitary `exp(iH)` of a hermitian `H`, via its eigendecomposition.
pub fn expi_hermitian(h: &DMatrix<C64>) -> DMatrix<C64> {
    let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, l)));
    v * phases * v.adjoint()
}

/// Dimension of the space of real symmetric `n×n` matrices.
pub fn svec_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Orthonormal coordinates of a real symmetric matrix: diagonal entries
/// as-is, off-diagonal entries (i<j) scaled by √2, row-major over i≤j.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(svec_dim(n));
    let mut pos = 0;
    for i in 0..n {
        for j in i..n {
            out[pos] = if i == j { m[(i, i)] } else { SQRT_2 * m[(i, j)] };
            pos += 1;
        }
    }
    out
}

/// Adds `svec(a aᵀ)` into `out`.
pub fn svec_add_outer(a: &[f64], out: &mut [f64]) {
    let n = a.len();
    let mut pos = 0;
    for i in 0..n {
        let ai = a[i];
        out[pos] += ai * ai;
        pos += 1;
        let s = SQRT_2 * ai;
        for &aj in &a[i + 1..n] {
            out[pos] += s * aj;
            pos += 1;
        }
    }
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut pos = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                m[(i, i)] = v[pos];
            } else {
                let x = v[pos] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            pos += 1;
        }
    }
    m
}
