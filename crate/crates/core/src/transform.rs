//! Coordinate transforms R that bring ‖RΞR⁻¹‖∞ down to (nearly) ρ(Ξ), and
//! certified constants (M0, ρ, M) dominating the powers of the error dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{eig, inf_norm, schur, spectral_radius, CMat, RMat, ToComplex, C64};

/// Eigenvector matrices worse conditioned than this fall back to the Schur path.
const EIGEN_COND_LIMIT: f64 = 1e8;
/// Largest acceptable condition number of a Schur-path transform.
const SCHUR_COND_LIMIT: f64 = 1e14;
const CERT_MAX_POWER: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformTarget {
    A,
    AMinusLc,
    ClosedLoop,
    Explicit,
}

#[derive(Debug, Clone)]
pub struct Transform {
    pub r: CMat,
    pub r_inv: CMat,
    pub target: TransformTarget,
    /// ‖R·Ξ·R⁻¹‖∞ for the matrix Ξ the transform was built for.
    pub achieved_norm: f64,
}

impl Transform {
    pub fn identity(n: usize, target: TransformTarget, xi: &RMat) -> Self {
        Self {
            r: CMat::identity(n, n),
            r_inv: CMat::identity(n, n),
            target,
            achieved_norm: inf_norm(xi),
        }
    }

    /// Wrap a user-supplied R, checking invertibility.
    pub fn from_matrix(r: CMat, target: TransformTarget, xi: &RMat) -> Result<Self> {
        if !r.is_square() || r.nrows() != xi.nrows() {
            return Err(Error::Dimension(
                "transform must match the conditioned matrix".into(),
            ));
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("transform matrix is singular".into()))?;
        let mut t = Self {
            r,
            r_inv,
            target,
            achieved_norm: 0.0,
        };
        t.achieved_norm = t.conjugated_norm(xi);
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// R·M·R⁻¹
    pub fn conjugate(&self, m: &impl ToComplex) -> CMat {
        &self.r * m.to_cmat() * &self.r_inv
    }

    pub fn conjugated_norm(&self, m: &impl ToComplex) -> f64 {
        inf_norm(&self.conjugate(m))
    }

    /// ‖R·M‖∞
    pub fn left_norm(&self, m: &impl ToComplex) -> f64 {
        inf_norm(&(&self.r * m.to_cmat()))
    }

    /// ‖M·R⁻¹‖∞
    pub fn right_norm(&self, m: &impl ToComplex) -> f64 {
        inf_norm(&(m.to_cmat() * &self.r_inv))
    }

    pub fn r_norm(&self) -> f64 {
        inf_norm(&self.r)
    }

    /// ‖R·R⁻¹ − I‖∞
    pub fn inverse_defect(&self) -> f64 {
        let n = self.dim();
        inf_norm(&(&self.r * &self.r_inv - CMat::identity(n, n)))
    }
}

/// Build R with ‖R·Ξ·R⁻¹‖∞ ≤ ρ(Ξ) + eps.
///
/// Diagonalizable Ξ with a well-conditioned eigenbasis gets R = V⁻¹ (unit-norm
/// eigenvector columns), which achieves ρ(Ξ) itself. Otherwise the complex Schur
/// form T = U*ΞU is balanced with D = diag(1, δ, δ², …) so that the strictly upper
/// part of D⁻¹TD has row sums ≤ eps, giving R = D⁻¹U*.
pub fn scaled_jordan_transform(xi: &RMat, eps: f64, target: TransformTarget) -> Result<Transform> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let n = xi.nrows();
    if !xi.is_square() {
        return Err(Error::Dimension("transform target must be square".into()));
    }
    let rho = spectral_radius(xi)?;
    let decomp = eig(xi)?;
    if decomp.condition <= EIGEN_COND_LIMIT {
        if let Some(r) = decomp.vectors.clone().try_inverse() {
            let t = Transform {
                r_inv: decomp.vectors.clone(),
                r,
                target,
                achieved_norm: 0.0,
            };
            let achieved = t.conjugated_norm(xi);
            if achieved <= rho + eps {
                return Ok(Transform {
                    achieved_norm: achieved,
                    ..t
                });
            }
        }
    }

    let (u, tri) = schur(&xi.to_cmat())?;
    let off_diag = |delta: f64| -> f64 {
        (0..n)
            .map(|i| {
                (i + 1..n)
                    .map(|j| tri[(i, j)].norm() * delta.powi((j - i) as i32))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    let delta = if off_diag(1.0) <= eps {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if off_diag(mid) <= eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let cond = if n > 1 {
        delta.powi(-(n as i32 - 1))
    } else {
        1.0
    };
    if delta == 0.0 || cond > SCHUR_COND_LIMIT {
        return Err(Error::NearDefective {
            cond: decomp.condition.max(cond),
        });
    }
    let d_inv = CMat::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        C64::new(delta.powi(-(i as i32)), 0.0)
    }));
    let d = CMat::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        C64::new(delta.powi(i as i32), 0.0)
    }));
    let r = &d_inv * u.adjoint();
    let r_inv = &u * &d;
    let mut t = Transform {
        r,
        r_inv,
        target,
        achieved_norm: 0.0,
    };
    t.achieved_norm = t.conjugated_norm(xi);
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoChoice {
    /// ρ = ρ(Ξ)·(1 + margin); a nilpotent Ξ uses ρ = margin.
    Margin(f64),
    Fixed(f64),
}

impl Default for RhoChoice {
    fn default() -> Self {
        RhoChoice::Margin(1e-3)
    }
}

/// Constants with ‖RΞ^ℓR⁻¹‖∞ ≤ M0·ρ^ℓ and ‖RΞ^ℓL‖∞ ≤ M·ρ^ℓ for every ℓ ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBoundCert {
    pub m0: f64,
    pub m: f64,
    pub rho: f64,
    /// Block length p with ‖(RΞR⁻¹)^p‖∞ < ρ^p; the bounds are checked for ℓ ≤ p.
    pub verified_horizon: usize,
    /// ‖(RΞR⁻¹)^p‖∞^{1/p} / ρ
    pub tail_ratio: f64,
}

/// Smallest-M0 certificate for the closed matrix Ξ (A − LC, or A_cl) and
/// injection gain L (L, or L_cl).
pub fn fit_norm_bounds(
    t: &Transform,
    closed: &RMat,
    injection: &RMat,
    rho: RhoChoice,
) -> Result<NormBoundCert> {
    if closed.nrows() != t.dim() || injection.nrows() != t.dim() {
        return Err(Error::Dimension(
            "certificate operands do not match the transform".into(),
        ));
    }
    let rho = match rho {
        RhoChoice::Fixed(r) => r,
        RhoChoice::Margin(m) => {
            let sr = spectral_radius(closed)?;
            if sr > 0.0 {
                sr * (1.0 + m)
            } else {
                m
            }
        }
    };
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::NotSchurStable { rho });
    }
    let scaled = t.conjugate(closed) / C64::new(rho, 0.0);
    let inj = &t.r * injection.to_cmat();
    let n = t.dim();
    let mut power = CMat::identity(n, n);
    let mut m0 = 1.0f64;
    let mut m = inf_norm(&inj);
    for p in 1..=CERT_MAX_POWER {
        power = &power * &scaled;
        let np = inf_norm(&power);
        m0 = m0.max(np);
        m = m.max(inf_norm(&(&power * &inj)));
        if np < 1.0 {
            return Ok(NormBoundCert {
                m0,
                m,
                rho,
                verified_horizon: p,
                tail_ratio: np.powf(1.0 / p as f64),
            });
        }
    }
    Err(Error::CertificateHorizon(CERT_MAX_POWER))
}
