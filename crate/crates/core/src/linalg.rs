//! Dense complex linear algebra and superoperator machinery shared by the
//! rest of the crate.
//!
//! Everything operates on `nalgebra` dynamic matrices over `Complex<f64>`.
//! Superoperators use the column-stacking vectorization convention, so the
//! map X -> A X B^dag has matrix conj(B) (x) A.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ONE: C64 = Complex::new(1.0, 0.0);
pub const ZERO: C64 = Complex::new(0.0, 0.0);
pub const I: C64 = Complex::new(0.0, 1.0);

/// Centralized numerical tolerances, overridable via config.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub trace: f64,
    pub psd_slack: f64,
    pub flow_composition: f64,
    pub superop_action: f64,
    pub max_condition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hermiticity: 1e-10,
            trace: 1e-9,
            psd_slack: 1e-9,
            flow_composition: 1e-8,
            superop_action: 1e-10,
            max_condition: 1e12,
        }
    }
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn zeros(d: usize) -> CMatrix {
    CMatrix::zeros(d, d)
}

/// Matrix unit E_ij (1 in row i, column j).
pub fn matrix_unit(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(i, j)] = ONE;
    m
}

pub fn sigma1() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn sigma2() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn sigma3() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// sigma_+ = (sigma_1 + i sigma_2)/2 = |e><g|
pub fn sigma_plus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
}

/// sigma_- = (sigma_1 - i sigma_2)/2 = |g><e|
pub fn sigma_minus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
}

pub fn basis_vector(d: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[k] = ONE;
    v
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Hilbert-Schmidt inner product Tr(a^dag b).
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "hs_inner: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// Squared Hilbert-Schmidt norm of a - b.
pub fn hs_distance_sq(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm_sqr()).sum()
}

pub fn hs_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    hs_distance_sq(a, b).sqrt()
}

/// Kronecker product a (x) b.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Tr_1((weight (x) 1_H) g) for g acting on C^2 (x) H and a 2x2 weight.
pub fn partial_trace_first(g: &CMatrix, weight: &CMatrix) -> Result<CMatrix> {
    if weight.nrows() != 2 || weight.ncols() != 2 {
        return Err(Error::DimensionMismatch("weight must be 2x2".into()));
    }
    if g.nrows() != g.ncols() || g.nrows() % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "partial_trace_first: dimension {} is not even",
            g.nrows()
        )));
    }
    let d = g.nrows() / 2;
    let mut out = CMatrix::zeros(d, d);
    for i in 0..2 {
        for j in 0..2 {
            let block = g.view((i * d, j * d), (d, d));
            out += block * weight[(j, i)];
        }
    }
    Ok(out)
}

/// Dissipator D_L(rho) = 1/2 ([L, rho L^dag] + [L rho, L^dag]).
pub fn dissipator(l: &CMatrix, rho: &CMatrix) -> Result<CMatrix> {
    if l.nrows() != rho.nrows() || l.ncols() != rho.ncols() || l.nrows() != l.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "dissipator: {}x{} vs {}x{}",
            l.nrows(),
            l.ncols(),
            rho.nrows(),
            rho.ncols()
        )));
    }
    let ld = l.adjoint();
    let lrho = l * rho;
    let anticomm = &ld * &lrho + rho * &ld * l;
    Ok(&lrho * &ld - anticomm.scale(0.5))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted ascending.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn hermitian_eigen(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let dev = hermiticity_deviation(a);
    if dev > 1e-8 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let eig = hermitize(a).symmetric_eigen();
    let d = a.nrows();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMatrix::zeros(d, d);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

pub fn min_eigenvalue(a: &CMatrix) -> Result<f64> {
    let (vals, _) = hermitian_eigen(a)?;
    Ok(vals[0])
}

/// Hermitian PSD square root. Eigenvalues in [-slack, 0] are clipped to 0.
pub fn psd_sqrt(a: &CMatrix, slack: f64) -> Result<CMatrix> {
    let dev = hermiticity_deviation(a);
    if dev > 1e-8 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let (vals, vecs) = hermitian_eigen(a)?;
    if let Some(&min) = vals.first() {
        if min < -slack {
            return Err(Error::NotPositiveSemidefinite { value: min });
        }
    }
    let d = a.nrows();
    let mut out = CMatrix::zeros(d, d);
    for k in 0..d {
        let lam = vals[k].max(0.0).sqrt();
        let v = vecs.column(k);
        out += (v * v.adjoint()).scale(lam);
    }
    Ok(out)
}

/// Column-stacking vectorization.
pub fn vectorize(m: &CMatrix) -> CVector {
    let d = m.nrows();
    let mut v = CVector::zeros(d * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..d {
            v[j * d + i] = m[(i, j)];
        }
    }
    v
}

pub fn unvectorize(v: &CVector, d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            m[(i, j)] = v[j * d + i];
        }
    }
    m
}

/// A linear map on M_d stored as a d^2 x d^2 matrix acting on
/// column-vectorized operators.
#[derive(Debug, Clone)]
pub struct Superoperator {
    pub dim: usize,
    pub matrix: CMatrix,
}

impl Superoperator {
    pub fn new(dim: usize, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "superoperator: expected {0}x{0}, got {1}x{2}",
                dim * dim,
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Superoperator { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Superoperator {
            dim,
            matrix: CMatrix::identity(dim * dim, dim * dim),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Superoperator {
            dim,
            matrix: CMatrix::zeros(dim * dim, dim * dim),
        }
    }

    /// Build from direct evaluation of the map on matrix units.
    pub fn from_map(dim: usize, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        let n = dim * dim;
        let mut matrix = CMatrix::zeros(n, n);
        for j in 0..dim {
            for i in 0..dim {
                let col = vectorize(&f(&matrix_unit(dim, i, j)));
                matrix.set_column(j * dim + i, &col);
            }
        }
        Superoperator { dim, matrix }
    }

    /// Superoperator of X -> A X B^dag, i.e. conj(B) (x) A.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        Superoperator {
            dim: a.nrows(),
            matrix: kron(&b.map(|z| z.conj()), a),
        }
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        unvectorize(&(&self.matrix * vectorize(x)), self.dim)
    }

    pub fn compose(&self, inner: &Superoperator) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix * &inner.matrix,
        }
    }

    /// Choi matrix C = sum_ij E_ij (x) P(E_ij); the first tensor factor is
    /// the index space.
    pub fn choi_matrix(&self) -> CMatrix {
        let d = self.dim;
        let mut c = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let image = self.apply(&matrix_unit(d, i, j));
                for k in 0..d {
                    for m in 0..d {
                        c[(i * d + k, j * d + m)] += image[(k, m)];
                    }
                }
            }
        }
        c
    }

    /// Numerical inverse; errors when the condition number estimate exceeds
    /// `max_condition`.
    pub fn inverse_flow(&self, max_condition: f64) -> Result<Superoperator> {
        let svd = self.matrix.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !cond.is_finite() || cond > max_condition {
            return Err(Error::IllConditioned { cond });
        }
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or(Error::IllConditioned { cond })?;
        Ok(Superoperator {
            dim: self.dim,
            matrix: inv,
        })
    }

    /// Condition number estimate from singular values.
    pub fn condition_estimate(&self) -> f64 {
        let svd = self.matrix.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        }
    }
}

/// Physical state vector on the Bloch hyper-sphere.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub amplitudes: CVector,
}

impl StateVector {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { norm });
        }
        Ok(StateVector { amplitudes })
    }

    pub fn basis(d: usize, k: usize) -> Self {
        StateVector {
            amplitudes: basis_vector(d, k),
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// Density matrix with a declared trace (1 for physical states; non-trace
/// preserving objects carry their own scalar).
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub matrix: CMatrix,
    pub trace: f64,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix, trace: f64, tol: &Tolerances) -> Result<Self> {
        let dev = hermiticity_deviation(&matrix);
        if dev > tol.hermiticity {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let actual = matrix.trace().re;
        if (actual - trace).abs() > tol.trace {
            return Err(Error::TraceMismatch {
                actual,
                declared: trace,
            });
        }
        Ok(DensityMatrix { matrix, trace })
    }

    pub fn physical(matrix: CMatrix) -> Result<Self> {
        Self::new(matrix, 1.0, &Tolerances::default())
    }

    pub fn pure(psi: &StateVector) -> Self {
        DensityMatrix {
            matrix: psi.projector(),
            trace: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hs_inner_identity_and_paulis() {
        let id = identity(2);
        assert_abs_diff_eq!(hs_inner(&id, &id).unwrap().re, 2.0, epsilon = 1e-14);
        let v = hs_inner(&sigma1(), &sigma2()).unwrap();
        assert!(v.norm() < 1e-14);
        // direct 2x2 arithmetic: Tr(sigma_+^dag sigma_+) = 1
        let v = hs_inner(&sigma_plus(), &sigma_plus()).unwrap();
        assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn hs_inner_conjugate_symmetry() {
        let a = sigma_plus() + sigma3().scale(0.3);
        let b = sigma2().scale(1.7) - sigma_minus();
        let ab = hs_inner(&a, &b).unwrap();
        let ba = hs_inner(&b, &a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-14);
    }

    #[test]
    fn hs_inner_dimension_mismatch() {
        assert!(hs_inner(&identity(2), &identity(3)).is_err());
    }

    #[test]
    fn kron_basics() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        // sigma3 (x) L = block-diag(L, -L)
        let l = sigma_plus();
        let k = kron(&sigma3(), &l);
        assert_eq!(k.view((0, 0), (2, 2)).clone_owned(), l);
        assert_eq!(k.view((2, 2), (2, 2)).clone_owned(), -l);
        // sigma1 (x) 1 swaps 2x2 blocks: explicit 4x4 product
        let g = kron(&sigma3(), &sigma_plus());
        let swapped = kron(&sigma1(), &identity(2)) * &g;
        assert_eq!(swapped.view((2, 0), (2, 2)).clone_owned(), sigma_plus());
        assert_eq!(swapped.view((0, 2), (2, 2)).clone_owned(), -sigma_plus());
    }

    #[test]
    fn partial_trace_product_state() {
        let rho = identity(2).scale(0.5) + sigma3().scale(0.2);
        let g = kron(&identity(2).scale(0.5), &rho);
        let out = partial_trace_first(&g, &identity(2)).unwrap();
        assert!(max_abs(&(out - &rho)) < 1e-14);

        // sigma1 eigenstate ancilla
        let anc = (identity(2) + sigma1()).scale(0.5);
        let g = kron(&anc, &rho);
        let out = partial_trace_first(&g, &sigma1()).unwrap();
        assert!(max_abs(&(out - &rho)) < 1e-14);
    }

    #[test]
    fn partial_trace_off_diagonal_blocks() {
        // block arithmetic: gamma with off-diagonal blocks q/2 returns q
        let q = sigma3().scale(0.4) + identity(2).scale(0.1);
        let diag = identity(2).scale(0.25);
        let mut g = CMatrix::zeros(4, 4);
        g.view_mut((0, 0), (2, 2)).copy_from(&diag);
        g.view_mut((2, 2), (2, 2)).copy_from(&diag);
        g.view_mut((0, 2), (2, 2)).copy_from(&q.scale(0.5));
        g.view_mut((2, 0), (2, 2)).copy_from(&q.scale(0.5));
        let out = partial_trace_first(&g, &sigma1()).unwrap();
        assert!(max_abs(&(out - &q)) < 1e-14);
    }

    #[test]
    fn partial_trace_odd_dimension_rejected() {
        let g = CMatrix::zeros(3, 3);
        assert!(partial_trace_first(&g, &identity(2)).is_err());
    }

    #[test]
    fn dissipator_decay() {
        // hand-computed: D_{sigma-}(|e><e|) = |g><g| - |e><e|
        let excited = matrix_unit(2, 0, 0);
        let out = dissipator(&sigma_minus(), &excited).unwrap();
        let expected = matrix_unit(2, 1, 1) - matrix_unit(2, 0, 0);
        assert!(max_abs(&(out - expected)) < 1e-14);
    }

    #[test]
    fn dissipator_zero_state() {
        let out = dissipator(&sigma_minus(), &zeros(2)).unwrap();
        assert!(max_abs(&out) < 1e-15);
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let a = CMatrix::from_row_slice(2, 2, &[C64::new(4.0, 0.0), ZERO, ZERO, C64::new(9.0, 0.0)]);
        let s = psd_sqrt(&a, 1e-9).unwrap();
        let expected =
            CMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), ZERO, ZERO, C64::new(3.0, 0.0)]);
        assert!(max_abs(&(s - expected)) < 1e-12);
        assert!(max_abs(&(psd_sqrt(&identity(3), 1e-9).unwrap() - identity(3))) < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_negative() {
        let a = sigma3(); // eigenvalues +-1
        assert!(psd_sqrt(&a, 1e-9).is_err());
    }

    #[test]
    fn vectorize_round_trip() {
        let m = sigma2().scale(0.3) + sigma_plus();
        assert_eq!(unvectorize(&vectorize(&m), 2), m);
    }

    #[test]
    fn sandwich_convention() {
        // vec(A X B^dag) = (conj(B) (x) A) vec(X)
        let a = sigma_plus() + sigma3().scale(0.2);
        let b = sigma2().scale(0.7) + identity(2);
        let x = sigma1().scale(0.4) + sigma_minus();
        let s = Superoperator::sandwich(&a, &b);
        let direct = &a * &x * b.adjoint();
        assert!(max_abs(&(s.apply(&x) - direct)) < 1e-13);
    }

    #[test]
    fn choi_of_identity_map() {
        let s = Superoperator::identity(2);
        let c = s.choi_matrix();
        let (vals, _) = hermitian_eigen(&c).unwrap();
        assert_abs_diff_eq!(vals[3], 2.0, epsilon = 1e-12);
        assert!(vals[..3].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn choi_of_transpose_map() {
        let s = Superoperator::from_map(2, |x| x.transpose());
        let (vals, _) = hermitian_eigen(&s.choi_matrix()).unwrap();
        assert_abs_diff_eq!(vals[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn choi_of_depolarizing_map() {
        let s = Superoperator::from_map(2, |x| identity(2).scale(x.trace().re / 2.0));
        let c = s.choi_matrix();
        assert!(max_abs(&(c - identity(4).scale(0.5))) < 1e-13);
    }

    #[test]
    fn inverse_flow_identity_and_unitary() {
        let id = Superoperator::identity(2);
        let inv = id.inverse_flow(1e12).unwrap();
        assert!(max_abs(&(inv.matrix.clone() - identity(4))) < 1e-12);

        // unitary conjugation inverts to conjugation by U^dag
        let theta: f64 = 0.37;
        let u = identity(2).scale(theta.cos()) - sigma2().scale(theta.sin()) * I;
        let s = Superoperator::sandwich(&u, &u);
        let inv = s.inverse_flow(1e12).unwrap();
        let expected = Superoperator::sandwich(&u.adjoint(), &u.adjoint());
        assert!(max_abs(&(inv.matrix - expected.matrix)) < 1e-10);
    }

    #[test]
    fn hermitian_eigen_sorted() {
        let (vals, vecs) = hermitian_eigen(&sigma1()).unwrap();
        assert_abs_diff_eq!(vals[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 1.0, epsilon = 1e-12);
        // reconstruct
        let mut rec = zeros(2);
        for k in 0..2 {
            let v = vecs.column(k);
            rec += (v * v.adjoint()).scale(vals[k]);
        }
        assert!(max_abs(&(rec - sigma1())) < 1e-12);
    }
}
