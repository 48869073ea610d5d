//! Closed-form invariant densities, their normalization, and the log-gamma
//! marginal laws.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

use crate::domain::{DomainError, DomainKind, ReflectionData};
use crate::potential::Potential;
use crate::quad::{self, QuadError};
use crate::stats::{digamma, Estimate};

#[derive(Debug, Error)]
pub enum DensityError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("density not integrable: {0}")]
    NonIntegrable(String),
}

/// How a normalization constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationMethod {
    Quadrature,
    MonteCarlo,
    Analytic,
}

/// An unnormalized log-density together with optional normalization data.
pub struct DensitySpec {
    pub log_density: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub dimension: usize,
    pub normalization: Option<(f64, NormalizationMethod)>,
    /// theta for the exponential case (gamma shape per coordinate).
    pub marginal_params: Option<Vec<f64>>,
}

impl std::fmt::Debug for DensitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensitySpec")
            .field("dimension", &self.dimension)
            .field("normalization", &self.normalization)
            .field("marginal_params", &self.marginal_params)
            .finish()
    }
}

/// log p_U(x) = 2 (sum_r U(n_r.x - b_r) - gamma(mu).x) for A = I data
/// satisfying the skew-symmetry condition.
pub fn log_density_general(
    data: &ReflectionData,
    u: &Potential,
    x: &[f64],
) -> Result<f64, DensityError> {
    let gamma = data.gamma_drift(None)?;
    let xv = DVector::from_column_slice(x);
    let mut sum = 0.0;
    for r in 0..data.num_faces() {
        let y = data.normals().row(r).transpose().dot(&xv) - data.offsets()[r];
        sum += u.u(y);
    }
    Ok(2.0 * (sum - gamma.dot(&xv)))
}

/// log density for orthant data with constant covariance diagonal alpha:
/// (2/alpha) (sum_j U(x_j) - delta(mu).x) with delta = (2A/alpha - I - Q)^-1 mu.
///
/// At alpha = 1 this is the familiar 2 (sum U(x_j) - delta.x). For
/// alpha != 1 the (2/alpha) prefactor is the form that satisfies the basic
/// adjoint relation for the generator with drift sum U'(x_r) v_r - mu,
/// as certified by the adjoint module.
pub fn log_density_orthant(
    data: &ReflectionData,
    u: &Potential,
    x: &[f64],
) -> Result<f64, DensityError> {
    if data.kind() != DomainKind::Orthant {
        return Err(DensityError::Parameter("orthant kind required".into()));
    }
    let delta = data.delta_drift()?;
    let alpha = data.alpha();
    let xv = DVector::from_column_slice(x);
    let sum: f64 = x.iter().map(|&xi| u.u(xi)).sum();
    Ok(2.0 / alpha * (sum - delta.dot(&xv)))
}

/// Normalization of an unnormalized log-density by adaptive quadrature on
/// an automatically chosen box (d <= 3). The box is grown until the
/// integrand at each face falls below e^-30 of its maximum; failure of the
/// decay test raises the non-integrability signal.
pub fn normalization_quadrature(spec: &DensitySpec, tol: f64) -> Result<f64, DensityError> {
    let d = spec.dimension;
    if d == 0 || d > 3 {
        return Err(DensityError::Parameter(format!(
            "quadrature supports 1 <= d <= 3, got {d}"
        )));
    }
    let f = &spec.log_density;
    // Coordinate-wise mode search from the origin.
    let mut center = vec![0.0; d];
    for _ in 0..4 {
        for axis in 0..d {
            let mut best = (f(&center), center[axis]);
            let mut t = -40.0;
            while t <= 40.0 {
                let mut p = center.clone();
                p[axis] = t;
                let v = f(&p);
                if v > best.0 {
                    best = (v, t);
                }
                t += 0.05;
            }
            center[axis] = best.1;
        }
    }
    let peak = f(&center);
    if !peak.is_finite() {
        return Err(DensityError::NonIntegrable(
            "log-density not finite at its numerical mode".into(),
        ));
    }
    // Expand each axis until the log-density drops 30 below the peak.
    let mut bounds = Vec::with_capacity(d);
    for axis in 0..d {
        let mut lims = [center[axis], center[axis]];
        for (side, dir) in [(0usize, -1.0), (1usize, 1.0)] {
            let mut step = 1.0;
            let mut t = center[axis];
            loop {
                t += dir * step;
                let mut p = center.clone();
                p[axis] = t;
                let v = f(&p);
                if v < peak - 30.0 {
                    lims[side] = t;
                    break;
                }
                if (t - center[axis]).abs() > 1e4 {
                    return Err(DensityError::NonIntegrable(format!(
                        "log-density fails the decay test along axis {axis}; \
                         check the stationarity parameters (theta_j <= 0 \
                         makes the exponential-case density non-integrable)"
                    )));
                }
                step *= 1.5;
            }
        }
        bounds.push((lims[0], lims[1]));
    }
    let g = |p: &[f64]| (f(p) - peak).exp();
    let z = quad::integrate_box(&g, &bounds, tol)?;
    if !z.is_finite() || z <= 0.0 {
        return Err(DensityError::NonIntegrable("quadrature returned a non-positive mass".into()));
    }
    Ok(z * peak.exp())
}

/// Importance-sampling proposal for Monte Carlo normalization.
pub struct Proposal {
    pub sample: Box<dyn Fn(&mut dyn rand::RngCore) -> Vec<f64> + Send + Sync>,
    pub log_pdf: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

/// Z = E_q[p(X)/q(X)] with X ~ q; returns the estimate with its standard
/// error.
pub fn normalization_monte_carlo<R: Rng>(
    spec: &DensitySpec,
    proposal: &Proposal,
    n: usize,
    rng: &mut R,
) -> Result<Estimate, DensityError> {
    if n == 0 {
        return Err(DensityError::Parameter("n must be positive".into()));
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let x = (proposal.sample)(rng);
        let w = ((spec.log_density)(&x) - (proposal.log_pdf)(&x)).exp();
        if !w.is_finite() {
            return Err(DensityError::NonIntegrable(
                "importance weight overflow; proposal tails too light".into(),
            ));
        }
        sum += w;
        sumsq += w * w;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    Ok(Estimate {
        value: mean,
        stderr: (var / n as f64).sqrt(),
    })
}

/// The law of -log(G / scale) for G ~ Gamma(shape, 1).
///
/// Its density is scale^shape e^{-shape x} exp{-scale e^{-x}} / Gamma(shape).
/// The log-gamma law Lambda_alpha (density proportional to
/// exp{-2(alpha x + e^{-x})}) is the case shape = 2 alpha, scale = 2.
#[derive(Debug, Clone, Copy)]
pub struct GammaLogLaw {
    pub shape: f64,
    pub scale: f64,
}

impl GammaLogLaw {
    pub fn new(shape: f64, scale: f64) -> Result<Self, DensityError> {
        if !(shape > 0.0) || !(scale > 0.0) {
            return Err(DensityError::Parameter(format!(
                "GammaLogLaw requires positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.shape * self.scale.ln() - self.shape * x - self.scale * (-x).exp()
            - ln_gamma(self.shape)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// P(-log(G/s) <= x) = P(G >= s e^{-x}) = 1 - P_lower(shape, s e^{-x}).
    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - gamma_lr(self.shape, self.scale * (-x).exp())
    }

    /// E[-log(G/s)] = ln(s) - psi(shape).
    pub fn mean(&self) -> f64 {
        self.scale.ln() - digamma(self.shape).expect("positive shape")
    }

    /// Normalizer of the unnormalized density e^{-shape x - scale e^{-x}}:
    /// scale^{-shape} Gamma(shape).
    pub fn unnormalized_mass(&self) -> f64 {
        (ln_gamma(self.shape) - self.shape * self.scale.ln()).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let g = Gamma::new(self.shape, 1.0).expect("positive shape");
        (0..n)
            .map(|_| -(g.sample(rng) / self.scale).ln())
            .collect()
    }
}

/// The log-gamma law Lambda_alpha with density
/// exp{-2(alpha x + e^{-x})} / Z, Z = 2^{-2 alpha} Gamma(2 alpha).
pub fn loggamma_marginal(alpha: f64) -> Result<GammaLogLaw, DensityError> {
    if !(alpha > 0.0) {
        return Err(DensityError::Parameter(format!(
            "Lambda_alpha requires alpha > 0, got {alpha}"
        )));
    }
    GammaLogLaw::new(2.0 * alpha, 2.0)
}

/// DensitySpec for the general-domain closed form, with theta recorded when
/// k = d.
pub fn general_density_spec(
    data: &ReflectionData,
    u: &Potential,
) -> Result<DensitySpec, DensityError> {
    let data = data.clone();
    let u = u.clone();
    let marginal_params = if data.num_faces() == data.dim() {
        data.theta_parameters().ok().map(|t| t.iter().cloned().collect())
    } else {
        None
    };
    let d = data.dim();
    Ok(DensitySpec {
        log_density: Box::new(move |x| {
            log_density_general(&data, &u, x).unwrap_or(f64::NEG_INFINITY)
        }),
        dimension: d,
        normalization: None,
        marginal_params,
    })
}

/// DensitySpec for the orthant closed form.
pub fn orthant_density_spec(
    data: &ReflectionData,
    u: &Potential,
) -> Result<DensitySpec, DensityError> {
    let delta = data.delta_drift()?;
    let marginal = Some((2.0 / data.alpha() * &delta).iter().cloned().collect());
    let data = data.clone();
    let u = u.clone();
    let d = data.dim();
    Ok(DensitySpec {
        log_density: Box::new(move |x| {
            log_density_orthant(&data, &u, x).unwrap_or(f64::NEG_INFINITY)
        }),
        dimension: d,
        normalization: None,
        marginal_params: marginal,
    })
}
