//! Small dense complex linear-algebra toolkit on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

/// Pauli matrices indexed 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli(i: usize) -> CMat {
    let (a, b, cc, d) = match i {
        0 => (ONE, ZERO, ZERO, ONE),
        1 => (ZERO, ONE, ONE, ZERO),
        2 => (ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO),
        3 => (ONE, ZERO, ZERO, -ONE),
        _ => panic!("pauli index {i} out of range"),
    };
    CMat::from_row_slice(2, 2, &[a, b, cc, d])
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn dagger(a: &CMat) -> CMat {
    a.adjoint()
}

pub fn trace(a: &CMat) -> Complex64 {
    a.trace()
}

/// `|v><v|` for a column vector.
pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Projector onto computational basis state `k` of dimension `d`.
pub fn basis_projector(d: usize, k: usize) -> CMat {
    let mut m = zeros(d, d);
    m[(k, k)] = ONE;
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermiticity_residue(a: &CMat) -> f64 {
    max_abs_diff(a, &a.adjoint())
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Eigen-decomposition of the Hermitian part of `a`, eigenvalues ascending.
/// Eigenvectors are the columns of the returned matrix.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), zeros(0, 0));
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    eigh(a).0
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigvalsh(a).first().copied().unwrap_or(0.0)
}

/// Build `sum_k f(lambda_k) |v_k><v_k|` from an eigen-decomposition.
pub fn spectral_map(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vectors.nrows();
    let mut out = zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let w = f(lam);
        if w == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        out += (v * v.adjoint()).scale(w);
    }
    out
}

/// Square root of a positive semidefinite matrix; negative rounding noise is clipped.
pub fn psd_sqrt(a: &CMat) -> CMat {
    let (values, vectors) = eigh(a);
    spectral_map(&values, &vectors, |x| x.max(0.0).sqrt())
}

/// Unitary factor `W V^dagger` of the polar decomposition `G = (W V^dagger)(V S V^dagger)`.
pub fn polar_unitary(g: &CMat) -> CMat {
    let svd = g.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    u * v_t
}

/// Gaussian Hermitian matrix (GUE up to scale).
pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    let g = random_ginibre(d, d, rng);
    hermitian_part(&g)
}

pub fn random_ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    })
}

/// Haar-random unitary: QR of a Ginibre matrix with the diagonal phases fixed.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    let qr = random_ginibre(d, d, rng).qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = q;
    for j in 0..d {
        let diag = r[(j, j)];
        let phase = if diag.norm() > 0.0 { diag / diag.norm() } else { ONE };
        let mut col = u.column_mut(j);
        col *= phase;
    }
    u
}

pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVec {
    let g = random_ginibre(d, 1, rng);
    let norm = g.norm();
    CVec::from_iterator(d, g.iter().map(|z| z / norm))
}

/// Row-major nested `[re, im]` rows, the JSON form of a Kraus or POVM matrix.
pub fn to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat, String> {
    let r = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != cols) {
        return Err("ragged matrix rows".into());
    }
    Ok(CMat::from_fn(r, cols, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

/// Superoperator of `rho -> tr_t sum_k K rho K†` with the output split as
/// `(s, t)` if `keep_first`, else `(t, s)`; `s` is kept. Rows are indexed by
/// `(s, s')`, columns by `(a, a')`.
pub fn superoperator(
    kraus: &[CMat],
    d_in: usize,
    d_first: usize,
    d_second: usize,
    keep_first: bool,
) -> CMat {
    let (d_keep, d_trace) = if keep_first { (d_first, d_second) } else { (d_second, d_first) };
    let flat = |s: usize, t: usize| if keep_first { s * d_second + t } else { t * d_second + s };
    let mut out = zeros(d_keep * d_keep, d_in * d_in);
    for k in kraus {
        for s in 0..d_keep {
            for s2 in 0..d_keep {
                for t in 0..d_trace {
                    let (r1, r2) = (flat(s, t), flat(s2, t));
                    for a in 0..d_in {
                        let x = k[(r1, a)];
                        if x == ZERO {
                            continue;
                        }
                        for a2 in 0..d_in {
                            out[(s * d_keep + s2, a * d_in + a2)] += x * k[(r2, a2)].conj();
                        }
                    }
                }
            }
        }
    }
    out
}

/// Apply `S_a ⊗ S_b` to a matrix on `[a, b]`. `keep_a`, `keep_b` are the
/// output dimensions of the two superoperators; the result lives on `[a', b']`.
pub fn apply_local_superoperators(
    x: &CMat,
    (d_in_a, d_in_b): (usize, usize),
    (sa, keep_a): (&CMat, usize),
    (sb, keep_b): (&CMat, usize),
) -> CMat {
    let xr = CMat::from_fn(d_in_a * d_in_a, d_in_b * d_in_b, |r, c| {
        let (a, a2) = (r / d_in_a, r % d_in_a);
        let (b, b2) = (c / d_in_b, c % d_in_b);
        x[(a * d_in_b + b, a2 * d_in_b + b2)]
    });
    let z = sa * xr * sb.transpose();
    let dim = keep_a * keep_b;
    CMat::from_fn(dim, dim, |r, c| {
        let (s, t) = (r / keep_b, r % keep_b);
        let (s2, t2) = (c / keep_b, c % keep_b);
        z[(s * keep_a + s2, t * keep_b + t2)]
    })
}
