//! Small dense helpers shared by the operator, engine and test code.

use ndarray::{Array2, ArrayView2, Axis, ShapeBuilder};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(dim: usize) -> CMatrix {
    Array2::from_diag_elem(dim, ONE)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) - b.dot(a)
}

/// Largest elementwise modulus.
pub fn max_abs(m: ArrayView2<'_, C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// max |m - m†| elementwise.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// max |U†U - 1| elementwise.
pub fn unitarity_error(u: &CMatrix) -> f64 {
    let mut p = dagger(u).dot(u);
    for d in p.diag_mut() {
        *d -= ONE;
    }
    max_abs(p.view())
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diag().iter().sum()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMatrix::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[[i, j]];
            if s == ZERO {
                continue;
            }
            out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .zip_mut_with(b, |o, &x| *o = s * x);
        }
    }
    out
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues ascending, eigenvectors in columns.
pub fn eigh(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    // column-major copy: a row-major input would be read as its conjugate
    let mut f = CMatrix::zeros(m.raw_dim().f());
    f.assign(m);
    let (e, v) = f.eigh(UPLO::Lower)?;
    Ok((e.to_vec(), v))
}

/// Eigendecomposition of a real symmetric matrix.
pub fn eigh_real(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let (e, v) = m.eigh(UPLO::Lower)?;
    Ok((e.to_vec(), v))
}

/// exp(-i 2π H t) for Hermitian `h` given in Hz.
pub fn expm_hermitian(h: &CMatrix, t: f64, tol: f64) -> Result<CMatrix> {
    let herr = hermiticity_error(h);
    if herr > tol {
        return Err(Error::validation(format!(
            "matrix is not Hermitian (max |H - H†| = {herr:.3e})"
        )));
    }
    let (e, v) = eigh(h)?;
    Ok(reassemble(&e, &v, t))
}

/// V · diag(exp(-i 2π E t)) · V†.
pub(crate) fn reassemble(e: &[f64], v: &CMatrix, t: f64) -> CMatrix {
    let mut scaled = v.clone();
    for (mut col, &ev) in scaled.axis_iter_mut(Axis(1)).zip(e) {
        let ph = C64::from_polar(1.0, -2.0 * PI * ev * t);
        col.mapv_inplace(|z| z * ph);
    }
    scaled.dot(&dagger(v))
}

/// Real-eigenvector variant of [`reassemble`].
pub(crate) fn reassemble_real(e: &[f64], v: &Array2<f64>, t: f64) -> CMatrix {
    // V diag(cos) Vᵀ - i V diag(sin) Vᵀ as two real products
    let mut vc = v.clone();
    let mut vs = v.clone();
    for (k, &ev) in e.iter().enumerate() {
        let (s, c) = (-2.0 * PI * ev * t).sin_cos();
        vc.column_mut(k).mapv_inplace(|x| x * c);
        vs.column_mut(k).mapv_inplace(|x| x * s);
    }
    let re = vc.dot(&v.t());
    let im = vs.dot(&v.t());
    let mut out = CMatrix::zeros(re.dim());
    ndarray::Zip::from(&mut out)
        .and(&re)
        .and(&im)
        .for_each(|o, &r, &i| *o = C64::new(r, i));
    out
}

pub(crate) fn to_complex(m: &Array2<f64>) -> CMatrix {
    m.mapv(|x| C64::new(x, 0.0))
}
