//! Dense linear algebra helpers: norms, spectra, matrix exponential,
//! discretization, Riccati gain synthesis, pseudo-inverse and rank.

use nalgebra::{ComplexField, DMatrix, DVector, Dim, Matrix, RawStorage, Schur, SVD};

use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<C64>;
pub type RVec = DVector<f64>;
pub type CVec = DVector<C64>;

const SCHUR_MAX_ITER: usize = 10_000;
const DARE_MAX_ITER: usize = 200;
const DARE_TOL: f64 = 1e-12;

/// Lift a real or complex matrix into the complex domain.
pub trait ToComplex {
    fn to_cmat(&self) -> CMat;
}

impl ToComplex for RMat {
    fn to_cmat(&self) -> CMat {
        self.map(|v| C64::new(v, 0.0))
    }
}

impl ToComplex for RVec {
    fn to_cmat(&self) -> CMat {
        CMat::from_iterator(self.len(), 1, self.iter().map(|v| C64::new(*v, 0.0)))
    }
}

impl ToComplex for CMat {
    fn to_cmat(&self) -> CMat {
        self.clone()
    }
}

/// Induced ∞-norm: the largest row sum of entry moduli. Works for vectors too.
pub fn inf_norm<T, R, C, S>(m: &Matrix<T, R, C, S>) -> f64
where
    T: ComplexField<RealField = f64>,
    R: Dim,
    C: Dim,
    S: RawStorage<T, R, C>,
{
    m.row_iter()
        .map(|row| row.iter().map(|v| v.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigen-decomposition Ξ = V diag(λ) V⁻¹ with unit 2-norm eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    /// Sorted by descending modulus, ties broken by (re, im).
    pub eigenvalues: Vec<C64>,
    pub vectors: CMat,
    /// ‖V‖∞·‖V⁻¹‖∞, infinite when V is numerically singular.
    pub condition: f64,
}

impl EigDecomp {
    pub fn residual(&self, xi: &CMat) -> f64 {
        let lam = CMat::from_diagonal(&CVec::from_vec(self.eigenvalues.clone()));
        inf_norm(&(xi * &self.vectors - &self.vectors * lam))
    }
}

/// Complex Schur form M = Q·T·Q* as (Q, T).
pub fn schur(m: &CMat) -> Result<(CMat, CMat)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "{}x{} is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if (0..n).all(|i| (0..i).all(|j| m[(i, j)] == C64::new(0.0, 0.0))) {
        return Ok((CMat::identity(n, n), m.clone()));
    }
    if let Some(s) = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        return Ok(s.unpack());
    }
    // The shifted QR iteration has no exceptional shifts and can cycle on highly
    // symmetric inputs (e.g. some permutation matrices); a fixed unitary similarity
    // breaks the symmetry without changing the spectrum.
    let seed = CMat::from_fn(n, n, |i, j| {
        let t = (i * n + j + 1) as f64;
        C64::new((t * 0.618_033_988_7).fract() - 0.5, 0.0)
            + if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
    });
    let u = seed.qr().q();
    let rotated = u.adjoint() * m * &u;
    Schur::try_new(rotated, f64::EPSILON, SCHUR_MAX_ITER)
        .map(|s| {
            let (q, t) = s.unpack();
            (u * q, t)
        })
        .ok_or(Error::NotConverged {
            what: "Schur iteration",
            iterations: SCHUR_MAX_ITER,
        })
}

/// Eigenvalues (with multiplicity) from the complex Schur form.
pub fn eigenvalues(m: &impl ToComplex) -> Result<Vec<C64>> {
    let (_, t) = schur(&m.to_cmat())?;
    Ok(t.diagonal().iter().copied().collect())
}

pub fn spectral_radius(m: &impl ToComplex) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

fn ordering_key(l: &C64) -> (i64, f64, f64) {
    (-(l.norm() * 1e10).round() as i64, l.re, l.im)
}

/// Right eigenvectors by back-substitution on the triangular Schur factor.
pub fn eig(m: &impl ToComplex) -> Result<EigDecomp> {
    let m = m.to_cmat();
    let n = m.nrows();
    let (q, t) = schur(&m)?;
    let small = (f64::EPSILON * inf_norm(&t)).max(f64::MIN_POSITIVE);

    let mut pairs: Vec<(C64, CVec)> = (0..n)
        .map(|i| {
            let lam = t[(i, i)];
            let mut v = CVec::zeros(n);
            v[i] = C64::new(1.0, 0.0);
            for j in (0..i).rev() {
                let s: C64 = (j + 1..=i).map(|c| t[(j, c)] * v[c]).sum();
                let mut d = t[(j, j)] - lam;
                if d.norm() < small {
                    d = C64::new(small, 0.0);
                }
                v[j] = -s / d;
            }
            let x = &q * v;
            let nrm = x.norm();
            (lam, x / C64::new(nrm, 0.0))
        })
        .collect();

    pairs.sort_by(|a, b| {
        let (ka, kb) = (ordering_key(&a.0), ordering_key(&b.0));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
    });

    let eigenvalues = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<CVec> = pairs.into_iter().map(|p| p.1).collect();
    let vectors = CMat::from_columns(&cols);
    let condition = match vectors.clone().try_inverse() {
        Some(inv) => inf_norm(&vectors) * inf_norm(&inv),
        None => f64::INFINITY,
    };
    Ok(EigDecomp {
        eigenvalues,
        vectors,
        condition,
    })
}

pub fn expm(m: &RMat) -> RMat {
    m.clone().exp()
}

/// Zero-order-hold discretization via the exponential of [[A_c, B_c], [0, 0]]·h.
pub fn zoh_discretize(ac: &RMat, bc: &RMat, h: f64) -> Result<(RMat, RMat)> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be positive, got {h}"
        )));
    }
    let (n, m) = (ac.nrows(), bc.ncols());
    if !ac.is_square() || bc.nrows() != n {
        return Err(Error::Dimension(
            "A_c must be square and B_c must have as many rows".into(),
        ));
    }
    let mut aug = RMat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, m)).copy_from(bc);
    let e = expm(&(aug * h));
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

fn inverse(m: &RMat, what: &str) -> Result<RMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter(format!("{what} is singular")))
}

/// Stabilizing solution of P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q by structure-preserving doubling.
pub fn dare_solve(a: &RMat, b: &RMat, q: &RMat, r: &RMat) -> Result<RMat> {
    let n = a.nrows();
    if !a.is_square()
        || b.nrows() != n
        || q.shape() != (n, n)
        || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::Dimension(
            "DARE operands have inconsistent shapes".into(),
        ));
    }
    let eye = RMat::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * inverse(r, "input weight")? * b.transpose();
    let mut hk = q.clone();
    for _ in 0..DARE_MAX_ITER {
        let w = inverse(&(&eye + &gk * &hk), "doubling step")?;
        let aw = &ak * &w;
        let a_next = &aw * &ak;
        let g_next = &gk + &aw * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        if !h_next.iter().all(|v| v.is_finite()) {
            break;
        }
        let change = inf_norm(&(&h_next - &hk));
        let scale = inf_norm(&h_next).max(1.0);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if change <= DARE_TOL * scale {
            return Ok((&hk + hk.transpose()) * 0.5);
        }
    }
    Err(Error::NotConverged {
        what: "Riccati doubling",
        iterations: DARE_MAX_ITER,
    })
}

/// LQR gain K = (BᵀPB + R)⁻¹BᵀPA; asserts ρ(A − BK) < 1.
pub fn lqr_gain(a: &RMat, b: &RMat, q: &RMat, r: &RMat) -> Result<RMat> {
    let p = dare_solve(a, b, q, r)?;
    let bt = b.transpose();
    let k = inverse(&(&bt * &p * b + r), "BᵀPB + R")? * &bt * &p * a;
    let rho = spectral_radius(&(a - b * &k))?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable { rho });
    }
    Ok(k)
}

/// Steady-state one-step predictor gain L = APCᵀ(CPCᵀ + V)⁻¹ from the dual DARE;
/// asserts ρ(A − LC) < 1.
pub fn kalman_predictor_gain(a: &RMat, c: &RMat, w: &RMat, v: &RMat) -> Result<RMat> {
    let p = dare_solve(&a.transpose(), &c.transpose(), w, v)?;
    let ct = c.transpose();
    let l = a * &p * &ct * inverse(&(c * &p * &ct + v), "CPCᵀ + V")?;
    let rho = spectral_radius(&(a - &l * c))?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable { rho });
    }
    Ok(l)
}

fn default_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Number of singular values above `tol·σ_max` (default tol = max(rows, cols)·ε).
pub fn numerical_rank<T>(m: &DMatrix<T>, tol: Option<f64>) -> usize
where
    T: ComplexField<RealField = f64>,
{
    if m.is_empty() {
        return 0;
    }
    let tol = tol.unwrap_or_else(|| default_tol(m.nrows(), m.ncols()));
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Left inverse (M*M)⁻¹M*, computed through the SVD for accuracy.
pub fn pinv_left<T>(m: &DMatrix<T>) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64>,
{
    let rank = numerical_rank(m, None);
    if rank < m.ncols() || m.nrows() < m.ncols() {
        return Err(Error::RankDeficient {
            rank,
            required: m.ncols(),
        });
    }
    let svd = SVD::new(m.clone(), true, true);
    svd.pseudo_inverse(0.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// M^p by repeated squaring.
pub fn mat_pow(m: &RMat, p: usize) -> RMat {
    let mut result = RMat::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    let mut e = p;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shift(n: usize) -> RMat {
        RMat::from_fn(n, n, |i, j| if (j + 1) % n == i { 1.0 } else { 0.0 })
    }

    #[test]
    fn inf_norm_examples() {
        assert_eq!(inf_norm(&RMat::identity(5, 5)), 1.0);
        let m = RMat::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]);
        assert_eq!(inf_norm(&m), 3.0);
        assert_eq!(inf_norm(&RVec::from_vec(vec![1.0, -4.0])), 4.0);
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&RMat::zeros(3, 3)).unwrap(), 0.0);
        for n in 2..10 {
            assert_abs_diff_eq!(spectral_radius(&shift(n)).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_residual_and_ordering() {
        let m = RMat::from_row_slice(3, 3, &[0.5, 1.0, 0.0, -0.3, 0.2, 0.4, 0.1, 0.0, -0.7]);
        let d = eig(&m).unwrap();
        let scale = inf_norm(&m) * d.condition;
        assert!(d.residual(&m.to_cmat()) <= 1e-8 * scale);
        for w in d.eigenvalues.windows(2) {
            assert!(w[0].norm() >= w[1].norm() - 1e-9);
        }
        for c in d.vectors.column_iter() {
            assert_abs_diff_eq!(c.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn expm_examples() {
        let z = expm(&RMat::zeros(3, 3));
        assert_abs_diff_eq!(z, RMat::identity(3, 3), epsilon = 1e-15);
        let d = expm(&RMat::from_diagonal(&RVec::from_vec(vec![0.3, -1.2])));
        assert_abs_diff_eq!(d[(0, 0)], 0.3f64.exp(), epsilon = 1e-13);
        assert_abs_diff_eq!(d[(1, 1)], (-1.2f64).exp(), epsilon = 1e-13);
        assert_abs_diff_eq!(d[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zoh_scalar_matches_closed_form() {
        let (a, b) = zoh_discretize(
            &RMat::from_element(1, 1, -2.0),
            &RMat::from_element(1, 1, 3.0),
            0.5,
        )
        .unwrap();
        let ad = (-1.0f64).exp();
        assert_abs_diff_eq!(a[(0, 0)], ad, epsilon = 1e-14);
        assert_abs_diff_eq!(b[(0, 0)], 3.0 * (1.0 - ad) / 2.0, epsilon = 1e-14);
        assert!(zoh_discretize(&RMat::zeros(1, 1), &RMat::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn dare_trivial_cases() {
        let one = RMat::from_element(1, 1, 1.0);
        let p = dare_solve(&RMat::zeros(1, 1), &one, &one, &one).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        let k = lqr_gain(&RMat::zeros(1, 1), &one, &one, &one).unwrap();
        assert_abs_diff_eq!(k[(0, 0)], 0.0, epsilon = 1e-12);

        let a = RMat::from_row_slice(2, 2, &[0.5, 0.1, 0.0, -0.3]);
        let b = RMat::from_row_slice(2, 1, &[1.0, 1.0]);
        let p = dare_solve(&a, &b, &RMat::zeros(2, 2), &one).unwrap();
        assert_abs_diff_eq!(p, RMat::zeros(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn dare_scalar_closed_form() {
        // p = a²p − a²p²/(r+p) + q with a = 2, q = r = 1 ⇒ p² − 4p − 1 = 0.
        let p = dare_solve(
            &RMat::from_element(1, 1, 2.0),
            &RMat::from_element(1, 1, 1.0),
            &RMat::from_element(1, 1, 1.0),
            &RMat::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 2.0 + 5.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        let a = RMat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = RMat::from_row_slice(2, 1, &[0.0, 1.0]);
        let one = RMat::from_element(1, 1, 1.0);
        assert!(lqr_gain(&a, &b, &RMat::identity(2, 2), &one).is_err());
    }

    #[test]
    fn rank_and_pinv() {
        let a = shift(2);
        let c = RMat::from_row_slice(1, 2, &[1.0, 0.0]);
        let mut o = RMat::zeros(2, 2);
        o.row_mut(0).copy_from(&c.row(0));
        o.row_mut(1).copy_from(&(&c * &a).row(0));
        assert_eq!(numerical_rank(&o, None), 2);

        let m = RMat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert_abs_diff_eq!(
            pinv_left(&m).unwrap(),
            m.clone().try_inverse().unwrap(),
            epsilon = 1e-12
        );
        let deficient = RMat::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            pinv_left(&deficient),
            Err(Error::RankDeficient { rank: 1, .. })
        ));
    }

    #[test]
    fn mat_pow_matches_repeated_product() {
        let m = RMat::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let mut acc = RMat::identity(2, 2);
        for p in 0..9 {
            assert_abs_diff_eq!(mat_pow(&m, p), acc, epsilon = 1e-14);
            acc = &acc * &m;
        }
    }
}
