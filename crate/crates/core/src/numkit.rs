//! Small dense complex linear algebra.
//!
//! Everything here is sized for beamforming problems with a handful of
//! antennas and users, so the routines favour clarity over blocking or
//! vectorisation. Matrices are row-major.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Real matrix from row slices; convenient in tests.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        Self::from_fn(rows.len(), cols, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |r, c| if r == c { C64::new(values[r], 0.0) } else { ZERO })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == ZERO {
                    continue;
                }
                for c in 0..rhs.cols {
                    out[(r, c)] += a * rhs[(k, c)];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * x`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// Largest entrywise modulus of `self - selfᴴ`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `aᴴ b` for column vectors stored as slices.
#[inline]
pub fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Frobenius norm.
pub fn frob_norm(m: &CMatrix) -> f64 {
    trace_gram(m).sqrt()
}

/// `Tr(M Mᴴ)`, the total power of a beamformer.
pub fn trace_gram(m: &CMatrix) -> f64 {
    norm_sqr(m.as_slice())
}

/// Eigendecomposition `A = U diag(λ) Uᴴ` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// Unitary matrix whose columns are eigenvectors.
    pub eigvecs: CMatrix,
    /// Eigenvalues in ascending order, matching the columns of `eigvecs`.
    pub eigvals: Vec<f64>,
}

impl EigResult {
    /// `U diag(λ) Uᴴ`.
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.eigvals.len();
        let u = &self.eigvecs;
        CMatrix::from_fn(n, n, |r, c| {
            (0..n)
                .map(|j| u[(r, j)] * self.eigvals[j] * u[(c, j)].conj())
                .sum()
        })
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;

fn off_diagonal_mass(a: &CMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                s += a[(r, c)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
///
/// Each rotation first removes the phase of the pivot `a_pq` with a diagonal
/// unitary and then applies the classic real symmetric rotation, so the
/// combined transform is `J = diag(1, e^{-iφ}) R(θ)`. Sweeps stop once the
/// off-diagonal Frobenius mass drops below `1e-12 ‖A‖_F`.
pub fn herm_eig(a: &CMatrix) -> Result<EigResult> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let scale = frob_norm(a);
    let defect = a.hermitian_defect();
    if defect > HERMITIAN_TOL * scale.max(1.0) {
        return Err(Error::NotHermitian(defect));
    }

    let mut work = a.clone();
    // Exact Hermitian symmetry from here on.
    for r in 0..n {
        work[(r, r)] = C64::new(work[(r, r)].re, 0.0);
        for c in r + 1..n {
            work[(c, r)] = work[(r, c)].conj();
        }
    }
    let mut vecs = CMatrix::identity(n);

    let target = JACOBI_REL_TOL * scale;
    let mut sweeps = 0;
    loop {
        let off = off_diagonal_mass(&work);
        if off <= target || scale == 0.0 {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off / scale,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut work, &mut vecs, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work[(i, i)].re.total_cmp(&work[(j, j)].re));
    let eigvals = order.iter().map(|&i| work[(i, i)].re).collect();
    let eigvecs = CMatrix::from_fn(n, n, |r, c| vecs[(r, order[c])]);
    Ok(EigResult { eigvecs, eigvals })
}

fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let b = apq.norm();
    if b == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    // Pivot negligible next to both diagonal entries: rotating would only add roundoff.
    if b <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = ZERO;
        a[(q, p)] = ZERO;
        return;
    }
    let phase = apq / b;
    let theta = (aqq - app) / (2.0 * b);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    // J = [[c, s], [-s e*, c e*]] acting on columns p, q.
    let jpp = C64::new(c, 0.0);
    let jpq = C64::new(s, 0.0);
    let jqp = -phase.conj() * s;
    let jqq = phase.conj() * c;

    let n = a.rows();
    for r in 0..n {
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        a[(r, p)] = arp * jpp + arq * jqp;
        a[(r, q)] = arp * jpq + arq * jqq;
    }
    for col in 0..n {
        let apc = a[(p, col)];
        let aqc = a[(q, col)];
        a[(p, col)] = jpp.conj() * apc + jqp.conj() * aqc;
        a[(q, col)] = jpq.conj() * apc + jqq.conj() * aqc;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = vrp * jpp + vrq * jqp;
        v[(r, q)] = vrp * jpq + vrq * jqq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn outer_sum(vs: &[Vec<C64>]) -> CMatrix {
        let n = vs[0].len();
        CMatrix::from_fn(n, n, |r, c| vs.iter().map(|h| h[r] * h[c].conj()).sum())
    }

    fn check_decomposition(a: &CMatrix, eig: &EigResult) {
        let n = a.rows();
        let scale = frob_norm(a).max(1.0);
        let err = frob_norm(&eig.reconstruct().sub(a));
        assert!(err <= 1e-10 * scale, "reconstruction error {err}");
        let gram = eig.eigvecs.adjoint().matmul(&eig.eigvecs).unwrap();
        let unit = frob_norm(&gram.sub(&CMatrix::identity(n)));
        assert!(unit <= 1e-10, "unitarity error {unit}");
        assert!(eig.eigvals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identity_spectrum() {
        let eig = herm_eig(&CMatrix::identity(4)).unwrap();
        assert_eq!(eig.eigvals, vec![1.0; 4]);
        check_decomposition(&CMatrix::identity(4), &eig);
    }

    #[test]
    fn diagonal_is_sorted_with_permuted_identity() {
        let a = CMatrix::diag_real(&[3.0, 1.0]);
        let eig = herm_eig(&a).unwrap();
        assert_eq!(eig.eigvals, vec![1.0, 3.0]);
        let expected = CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(eig.eigvecs, expected);
    }

    #[test]
    fn rank_one_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h = random_vec(&mut rng, 4);
            let a = outer_sum(std::slice::from_ref(&h));
            let eig = herm_eig(&a).unwrap();
            let energy = norm_sqr(&h);
            for &l in &eig.eigvals[..3] {
                assert!(l.abs() <= 1e-10, "{l}");
            }
            assert!((eig.eigvals[3] - energy).abs() <= 1e-10 * energy.max(1.0));
            check_decomposition(&a, &eig);
        }
    }

    #[test]
    fn random_psd_reconstruction_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let k = 1 + trial % 6;
            let hs: Vec<_> = (0..k).map(|_| random_vec(&mut rng, 4)).collect();
            let a = outer_sum(&hs);
            let eig = herm_eig(&a).unwrap();
            check_decomposition(&a, &eig);
            assert!(eig.eigvals[0] >= -1e-10);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hs: Vec<_> = (0..3).map(|_| random_vec(&mut rng, 5)).collect();
        let a = outer_sum(&hs);
        let e1 = herm_eig(&a).unwrap();
        let e2 = herm_eig(&a).unwrap();
        assert_eq!(e1.eigvals, e2.eigvals);
        assert_eq!(e1.eigvecs, e2.eigvecs);
    }

    #[test]
    fn rejects_non_square_and_non_hermitian() {
        assert!(matches!(
            herm_eig(&CMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
        let mut a = CMatrix::identity(2);
        a[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(herm_eig(&a), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn zero_matrix() {
        let eig = herm_eig(&CMatrix::zeros(3, 3)).unwrap();
        assert_eq!(eig.eigvals, vec![0.0; 3]);
    }

    #[test]
    fn norms() {
        assert_eq!(frob_norm(&CMatrix::zeros(3, 2)), 0.0);
        assert_eq!(frob_norm(&CMatrix::identity(4)), 2.0);
        assert_eq!(frob_norm(&CMatrix::from_real_rows(&[&[3.0, 4.0]])), 5.0);
        assert_eq!(trace_gram(&CMatrix::zeros(4, 4)), 0.0);
        assert_eq!(trace_gram(&CMatrix::identity(4)), 4.0);
    }

    proptest::proptest! {
        #[test]
        fn trace_gram_is_squared_frobenius(entries in proptest::collection::vec(-10.0f64..10.0, 24)) {
            let data = entries.chunks(2).map(|p| C64::new(p[0], p[1])).collect();
            let m = CMatrix::from_vec(3, 4, data).unwrap();
            let t = trace_gram(&m);
            let f = frob_norm(&m);
            proptest::prop_assert!((t - f * f).abs() <= 1e-12 * t.max(1e-300));
        }
    }
}
