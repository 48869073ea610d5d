//! TASEP-like interacting Brownian particles: simulation, reduction of the
//! gap process to an orthant reflection instance, the equilibrium speed of
//! the system, and the step-initial-condition speed via convex conjugation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, ReflectionData};
use crate::potential::Potential;
use crate::sde::{self, PathEnsemble, SdeError, SimConfig};
use crate::stats::{self, StatsError};

#[derive(Debug, Error)]
pub enum ParticleError {
    #[error("invalid particle configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("supremum attained at the grid boundary (x = {x}); extend the table")]
    ExtendGrid { x: f64 },
    #[error("polymer partition supports n <= 3; got n = {0}")]
    Unsupported(usize),
}

/// Sign convention for the interaction drift on particle k+1.
///
/// `UPrime` uses +U'(X_{k+1} - X_k), which is the convention under which
/// the gap process is a reflected diffusion with generator drift
/// sum_r U'(y_r) v_r - mu. `MinusU` uses -U(X_{k+1} - X_k); the two agree
/// exactly when U(x) = -e^{-x} and otherwise differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriftConvention {
    #[default]
    UPrime,
    MinusU,
}

/// The n-particle system dX_1 = dB_1 + nu_1 dt,
/// dX_{k+1} = dB_{k+1} + U'(X_{k+1} - X_k) dt + nu_{k+1} dt.
pub struct ParticleConfig {
    pub n: usize,
    pub nu: Vec<f64>,
    pub u: Potential,
    pub convention: DriftConvention,
}

impl ParticleConfig {
    pub fn new(nu: Vec<f64>, u: Potential) -> Result<Self, ParticleError> {
        let n = nu.len();
        if n < 2 {
            return Err(ParticleError::Config(format!(
                "need at least 2 particles, got {n}"
            )));
        }
        if nu.iter().any(|v| !v.is_finite()) {
            return Err(ParticleError::Config("non-finite drift".to_string()));
        }
        Ok(Self { n, nu, u, convention: DriftConvention::default() })
    }

    pub fn with_convention(mut self, convention: DriftConvention) -> Self {
        self.convention = convention;
        self
    }

    fn interaction(&self, gap: f64) -> f64 {
        match self.convention {
            DriftConvention::UPrime => self.u.du(gap),
            DriftConvention::MinusU => -self.u.u(gap),
        }
    }
}

/// Euler--Maruyama for the particle system; cfg.x0 must have length n.
pub fn simulate_particles(
    pc: &ParticleConfig,
    cfg: &SimConfig,
) -> Result<PathEnsemble, ParticleError> {
    if cfg.x0.len() != pc.n {
        return Err(ParticleError::Config(format!(
            "x0 has dimension {}, expected {}",
            cfg.x0.len(),
            pc.n
        )));
    }
    let sigma = DMatrix::identity(pc.n, pc.n);
    let drift = |x: &[f64]| {
        let mut d = DVector::from_column_slice(&pc.nu);
        for k in 1..pc.n {
            d[k] += pc.interaction(x[k] - x[k - 1]);
        }
        d
    };
    Ok(sde::simulate_sde(&drift, &sigma, cfg, "particles-em")?)
}

/// The reflection instance governing the gap process Y_j = X_{j+1} - X_j:
/// N = I in dimension n-1, A the tridiagonal covariance of the driving
/// increments (diagonal 2, off-diagonal -1, so alpha = 2), reflection rows
/// q_r = -e_{r+1} encoding the one-sided drift coupling, and
/// mu_j = nu_j - nu_{j+1}.
pub fn gap_data(pc: &ParticleConfig) -> Result<ReflectionData, ParticleError> {
    let d = pc.n - 1;
    let mut q = DMatrix::zeros(d, d);
    let mut a = DMatrix::zeros(d, d);
    for r in 0..d {
        a[(r, r)] = 2.0;
        if r + 1 < d {
            a[(r, r + 1)] = -1.0;
            a[(r + 1, r)] = -1.0;
            q[(r, r + 1)] = -1.0;
        }
    }
    let mu = DVector::from_iterator(d, (0..d).map(|j| pc.nu[j] - pc.nu[j + 1]));
    Ok(ReflectionData::orthant(q, mu, a)?)
}

const SPEED_LO: f64 = -8.0;
const SPEED_HI: f64 = 80.0;
const SPEED_N: usize = 440_001;

/// Equilibrium speed Psi_U(alpha): the mean of the stationary law of a
/// single gap, whose density is fixed by the 1D Fokker--Planck oracle for
/// drift U'(y) - alpha and diffusion coefficient 2 (the variance rate of
/// the difference of two driving Brownian motions), i.e. proportional to
/// exp{U(y) - alpha y}.
pub fn equilibrium_speed(u: &Potential, alpha: f64) -> Result<f64, ParticleError> {
    equilibrium_speed_with_grid(u, alpha, SPEED_LO, SPEED_HI, SPEED_N)
}

pub fn equilibrium_speed_with_grid(
    u: &Potential,
    alpha: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<f64, ParticleError> {
    let u = u.clone();
    let drift = move |y: f64| u.du(y) - alpha;
    let table = stats::fokker_planck_1d_oracle(&drift, 2.0, lo, hi, n)?;
    Ok(table.mean())
}

/// The digamma expression -psi(alpha) reported alongside the quadrature
/// value for the exponential potential; printed as a diagnostic, never
/// asserted against other conventions.
pub fn digamma_diagnostic(alpha: f64) -> Result<f64, ParticleError> {
    Ok(-stats::digamma(alpha)?)
}

/// A tabulated speed function on an increasing grid.
#[derive(Debug, Clone)]
pub struct PsiTable {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl PsiTable {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self, ParticleError> {
        if xs.len() != values.len() || xs.len() < 3 {
            return Err(ParticleError::Config(
                "table needs at least 3 matching points".to_string(),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ParticleError::Config("grid must be increasing".to_string()));
        }
        Ok(Self { xs, values })
    }

    /// Tabulate alpha -> Psi_U(alpha) by quadrature.
    pub fn from_potential(
        u: &Potential,
        alphas: &[f64],
    ) -> Result<Self, ParticleError> {
        let values = alphas
            .iter()
            .map(|&a| equilibrium_speed(u, a))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(alphas.to_vec(), values)
    }
}

/// Convex conjugate f*(alpha) = sup_x {alpha x - f(x)} of a tabulated
/// function, reading the table as piecewise linear: the supremum is then
/// attained at a node, and the result is exactly a maximum of affine
/// functions of alpha (hence convex in alpha to machine precision). A
/// supremum on the boundary of the table raises
/// [`ParticleError::ExtendGrid`].
pub fn conjugate(table: &PsiTable, alpha: f64) -> Result<f64, ParticleError> {
    let (k, sup) = argmax_objective(table, alpha)?;
    let _ = k;
    Ok(sup)
}

/// [`conjugate`] refined by a local quadratic fit through the maximizing
/// node and its neighbours; sharper for tables of smooth functions, at the
/// cost of exact convexity in alpha.
pub fn conjugate_refined(table: &PsiTable, alpha: f64) -> Result<f64, ParticleError> {
    let (k, node_sup) = argmax_objective(table, alpha)?;
    let obj = |i: usize| alpha * table.xs[i] - table.values[i];
    let (x0, x1, x2) = (table.xs[k - 1], table.xs[k], table.xs[k + 1]);
    let (f0, f1, f2) = (obj(k - 1), obj(k), obj(k + 1));
    let d1 = (f1 - f0) / (x1 - x0);
    let d2 = (f2 - f1) / (x2 - x1);
    let curv = (d2 - d1) / (x2 - x0);
    // fall back to the node value unless the local fit is concave with an
    // interior vertex
    if curv < 0.0 {
        let xv = 0.5 * (x0 + x1) - 0.5 * d1 / curv;
        if xv > x0 && xv < x2 {
            return Ok(f0 + d1 * (xv - x0) + curv * (xv - x0) * (xv - x1));
        }
    }
    Ok(node_sup)
}

fn argmax_objective(table: &PsiTable, alpha: f64) -> Result<(usize, f64), ParticleError> {
    let obj: Vec<f64> = table
        .xs
        .iter()
        .zip(&table.values)
        .map(|(&x, &f)| alpha * x - f)
        .collect();
    let (k, &sup) = obj
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty table");
    if k == 0 || k == obj.len() - 1 {
        return Err(ParticleError::ExtendGrid { x: table.xs[k] });
    }
    Ok((k, sup))
}

/// Step-initial-condition speed
/// gamma(alpha) = inf_x {alpha x + Psi(x)} = -(-Psi)*(-alpha).
///
/// Psi is convex (it is the conjugation-compatible branch of the speed,
/// e.g. -digamma for the exponential potential), so the infimum of the
/// convex objective alpha x + Psi(x) is attained in the interior of an
/// adequate table; gamma is concave in alpha as an infimum of affine
/// functions.
pub fn step_speed(psi: &PsiTable, alpha: f64) -> Result<f64, ParticleError> {
    Ok(-conjugate(psi, -alpha)?)
}

/// Convex conjugate of the tabulated function at each point of `alphas`;
/// used for biconjugation checks.
pub fn conjugate_table(
    table: &PsiTable,
    alphas: &[f64],
) -> Result<PsiTable, ParticleError> {
    let values = alphas
        .iter()
        .map(|&a| conjugate(table, a))
        .collect::<Result<Vec<_>, _>>()?;
    PsiTable::new(alphas.to_vec(), values)
}

/// Z_n(t) for n <= 3 by trapezoid quadrature over the simplex
/// {0 <= s_1 <= ... <= s_{n-1} <= t} on the driver's grid. `paths` holds n
/// driver coordinates sampled at uniform step `dt`, all of length m with
/// paths[k][0] = B_{k+1}(0); t = (m-1) dt.
pub fn polymer_partition_smalln(paths: &[Vec<f64>], dt: f64) -> Result<f64, ParticleError> {
    let n = paths.len();
    if n == 0 || n > 3 {
        return Err(ParticleError::Unsupported(n));
    }
    let m = paths[0].len();
    if m < 2 || paths.iter().any(|p| p.len() != m) || !(dt > 0.0) {
        return Err(ParticleError::Config(
            "paths must share a length >= 2 and dt > 0".to_string(),
        ));
    }
    let last = m - 1;
    match n {
        1 => Ok(paths[0][last].exp()),
        2 => {
            // integral over s in [0, t] of exp{B_1(s) + B_2(t) - B_2(s)}
            let f =
                |i: usize| (paths[0][i] + paths[1][last] - paths[1][i]).exp();
            Ok(trapezoid_grid(&f, m, dt))
        }
        _ => {
            // integral over 0 <= s_1 <= s_2 <= t of
            // exp{B_1(s_1) + B_2(s_2) - B_2(s_1) + B_3(t) - B_3(s_2)}
            let mut total = 0.0;
            for i in 0..m {
                let inner = |j: usize| {
                    (paths[0][i] + paths[1][j] - paths[1][i] + paths[2][last]
                        - paths[2][j])
                        .exp()
                };
                // inner integral over s_2 in [s_1, t]
                let cells = last - i;
                let inner_val = if cells == 0 {
                    0.0
                } else {
                    let mut s = 0.5 * (inner(i) + inner(last));
                    for j in i + 1..last {
                        s += inner(j);
                    }
                    s * dt
                };
                let w = if i == 0 || i == last { 0.5 } else { 1.0 };
                total += w * inner_val;
            }
            Ok(total * dt)
        }
    }
}

fn trapezoid_grid(f: &dyn Fn(usize) -> f64, m: usize, dt: f64) -> f64 {
    let mut s = 0.5 * (f(0) + f(m - 1));
    for i in 1..m - 1 {
        s += f(i);
    }
    s * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GammaLogLaw;
    use approx::assert_relative_eq;

    fn exp_config(nu: Vec<f64>) -> ParticleConfig {
        ParticleConfig::new(nu, Potential::exponential()).unwrap()
    }

    #[test]
    fn zero_potential_gives_independent_brownian_motions() {
        let pc = ParticleConfig::new(vec![0.5, -0.5], Potential::zero()).unwrap();
        let cfg = SimConfig {
            dt: 1e-2,
            t_max: 4.0,
            burn_in: 0.0,
            seed: 3,
            x0: vec![0.0, 0.0],
            n_paths: 4000,
            save_every: 400,
        };
        let ens = simulate_particles(&pc, &cfg).unwrap();
        let idx = ens.n_stored() - 1;
        let m1: f64 = (0..cfg.n_paths).map(|p| ens.value(p, idx, 0)).sum::<f64>()
            / cfg.n_paths as f64;
        let m2: f64 = (0..cfg.n_paths).map(|p| ens.value(p, idx, 1)).sum::<f64>()
            / cfg.n_paths as f64;
        // means 2 and -2 with stderr 2/sqrt(4000) ~ 0.032
        assert!((m1 - 2.0).abs() < 0.15, "{m1}");
        assert!((m2 + 2.0).abs() < 0.15, "{m2}");
        let cov: f64 = (0..cfg.n_paths)
            .map(|p| (ens.value(p, idx, 0) - m1) * (ens.value(p, idx, 1) - m2))
            .sum::<f64>()
            / (cfg.n_paths - 1) as f64;
        assert!(cov.abs() < 0.3, "cov {cov}");
    }

    #[test]
    fn conventions_agree_for_exponential_potential() {
        let pc = exp_config(vec![1.0, 0.0]);
        let pc_paper = exp_config(vec![1.0, 0.0])
            .with_convention(DriftConvention::MinusU);
        for gap in [-1.5, -0.2, 0.0, 0.7, 3.0] {
            assert_relative_eq!(
                pc.interaction(gap),
                pc_paper.interaction(gap),
                epsilon = 1e-14
            );
        }
        let soft = ParticleConfig::new(vec![0.0, 0.0], Potential::softplus(1.0).unwrap())
            .unwrap()
            .with_convention(DriftConvention::MinusU);
        let soft_gen =
            ParticleConfig::new(vec![0.0, 0.0], Potential::softplus(1.0).unwrap()).unwrap();
        assert!((soft.interaction(0.3) - soft_gen.interaction(0.3)).abs() > 1e-3);
    }

    #[test]
    fn gap_data_matches_hand_instances() {
        let pc = exp_config(vec![1.0, 0.0]);
        let data = gap_data(&pc).unwrap();
        assert_eq!(data.dim(), 1);
        assert_relative_eq!(data.covariance()[(0, 0)], 2.0);
        assert_relative_eq!(data.reflections()[(0, 0)], 0.0);
        assert_relative_eq!(data.drift()[0], 1.0);

        let pc3 = exp_config(vec![1.0, 0.0, 0.0]);
        let d3 = gap_data(&pc3).unwrap();
        let a = d3.covariance();
        assert_relative_eq!(a[(0, 0)], 2.0);
        assert_relative_eq!(a[(0, 1)], -1.0);
        assert_relative_eq!(a[(1, 0)], -1.0);
        assert_relative_eq!(a[(1, 1)], 2.0);
        assert_relative_eq!(d3.reflections()[(0, 1)], -1.0);
        assert_relative_eq!(d3.reflections()[(1, 0)], 0.0);
        assert_eq!(d3.drift().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn gap_data_is_skew_symmetric_up_to_six_particles() {
        for n in 2..=6 {
            let mut nu = vec![0.0; n];
            nu[0] = 1.0;
            let pc = exp_config(nu);
            let data = gap_data(&pc).unwrap();
            assert!(data.validate().violations.is_empty(), "n = {n}");
            let report = data.skew_symmetry_defect();
            assert!(report.passed, "n = {n}: defect {}", report.max_abs_defect);
        }
    }

    #[test]
    fn gap_marginals_are_unit_loggamma_for_step_drift() {
        // nu = (1, 0, 0): delta = (1, 1) and each gap marginal under the
        // orthant density with alpha = 2 is the law of -log of a unit
        // exponential variable.
        let pc = exp_config(vec![1.0, 0.0, 0.0]);
        let data = gap_data(&pc).unwrap();
        let delta = data.delta_drift().unwrap();
        assert_relative_eq!(delta[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(delta[1], 1.0, epsilon = 1e-12);
        let law = GammaLogLaw { shape: 1.0, scale: 1.0 };
        assert_relative_eq!(law.mean(), -stats::digamma(1.0).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn two_particle_gap_matches_fokker_planck_oracle() {
        let alpha = 1.0;
        let pc = exp_config(vec![alpha, 0.0]);
        let cfg = SimConfig {
            dt: 1e-3,
            t_max: 120.0,
            burn_in: 20.0,
            seed: 17,
            x0: vec![0.0, 0.0],
            n_paths: 24,
            save_every: 100,
        };
        let ens = simulate_particles(&pc, &cfg).unwrap();
        let burn = ens.burn_in_index(cfg.burn_in);
        let mut gaps = Vec::new();
        for p in 0..cfg.n_paths {
            for s in burn..ens.n_stored() {
                gaps.push(ens.value(p, s, 1) - ens.value(p, s, 0));
            }
        }
        let u = pc.u.clone();
        let drift = move |y: f64| u.du(y) - alpha;
        let table = stats::fokker_planck_1d_oracle(&drift, 2.0, -8.0, 30.0, 20_001)
            .unwrap();
        let r = stats::ks_statistic(&gaps, |y| table.cdf_at(y)).unwrap();
        // autocorrelated samples: compare against a loose KS threshold
        assert!(r.d <= 0.05, "KS {}", r.d);
    }

    #[test]
    fn negative_gap_time_tracks_drift_and_potential_steepness() {
        let frac = |pc: &ParticleConfig| {
            let cfg = SimConfig {
                dt: 1e-3,
                t_max: 60.0,
                burn_in: 10.0,
                seed: 23,
                x0: vec![0.0, 0.0],
                n_paths: 8,
                save_every: 10,
            };
            let ens = simulate_particles(pc, &cfg).unwrap();
            let burn = ens.burn_in_index(cfg.burn_in);
            let mut neg = 0usize;
            let mut tot = 0usize;
            for p in 0..cfg.n_paths {
                for s in burn..ens.n_stored() {
                    tot += 1;
                    if ens.value(p, s, 1) < ens.value(p, s, 0) {
                        neg += 1;
                    }
                }
            }
            neg as f64 / tot as f64
        };
        // soft reflection lets the gap go negative; the stationary gap law
        // with leader drift alpha puts mass P(G_alpha > 1) below zero, which
        // grows with alpha
        let f_small = frac(&exp_config(vec![0.5, 0.0]));
        let f_large = frac(&exp_config(vec![2.0, 0.0]));
        assert!(f_small > 0.0, "soft reflection should allow negative gaps");
        assert!(
            f_large > f_small,
            "fractions {f_small} (alpha 0.5) vs {f_large} (alpha 2)"
        );
        // a steeper potential pushes the reflection towards a hard wall and
        // shrinks the time spent at negative gaps
        let f_soft = frac(
            &ParticleConfig::new(
                vec![0.5, 0.0],
                Potential::beta_exponential(1.0).unwrap(),
            )
            .unwrap(),
        );
        let f_stiff = frac(
            &ParticleConfig::new(
                vec![0.5, 0.0],
                Potential::beta_exponential(4.0).unwrap(),
            )
            .unwrap(),
        );
        assert!(
            f_stiff < f_soft,
            "fractions {f_soft} (beta 1) vs {f_stiff} (beta 4)"
        );
    }

    #[test]
    fn equilibrium_speed_matches_digamma_for_exponential() {
        // stationary gap density exp{-e^{-y} - alpha y} is the unit-scale
        // loggamma law with shape alpha, whose mean is -psi(alpha)
        let u = Potential::exponential();
        for alpha in [0.5, 1.0, 2.0] {
            let psi = equilibrium_speed(&u, alpha).unwrap();
            let law = GammaLogLaw { shape: alpha, scale: 1.0 };
            assert_relative_eq!(psi, law.mean(), epsilon = 1e-8);
            assert_relative_eq!(psi, digamma_diagnostic(alpha).unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn equilibrium_speed_zero_for_symmetric_density() {
        // U(y) = -y^4/4 with alpha = 0 gives the even density exp{-y^4/2}
        let u = Potential::custom(
            "quartic",
            |y| -0.25 * y.powi(4),
            |y| -y.powi(3),
            |y| -3.0 * y * y,
        );
        let psi = equilibrium_speed_with_grid(&u, 0.0, -10.0, 10.0, 80_001).unwrap();
        assert!(psi.abs() < 1e-8, "{psi}");
    }

    #[test]
    fn equilibrium_speed_decreasing_in_alpha() {
        let u = Potential::exponential();
        let p1 = equilibrium_speed(&u, 0.5).unwrap();
        let p2 = equilibrium_speed(&u, 1.0).unwrap();
        let p3 = equilibrium_speed(&u, 2.0).unwrap();
        assert!(p1 > p2 && p2 > p3, "{p1} {p2} {p3}");
    }

    #[test]
    fn conjugate_of_quadratic_is_quadratic() {
        let xs: Vec<f64> = (0..=4000).map(|i| -2.0 + i as f64 * 1e-3).collect();
        let fs: Vec<f64> = xs.iter().map(|x| 0.5 * x * x).collect();
        let table = PsiTable::new(xs, fs).unwrap();
        for alpha in [-1.5, -0.3, 0.0, 0.7, 1.4] {
            let conj = conjugate(&table, alpha).unwrap();
            assert_relative_eq!(conj, 0.5 * alpha * alpha, epsilon = 1e-4);
            let refined = conjugate_refined(&table, alpha).unwrap();
            assert_relative_eq!(refined, 0.5 * alpha * alpha, epsilon = 1e-6);
        }
    }

    #[test]
    fn linear_table_raises_boundary_signal() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let fs: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let table = PsiTable::new(xs, fs).unwrap();
        // conjugate of x -> 2x is finite only at alpha = 2
        let err = conjugate(&table, 1.0);
        assert!(matches!(err, Err(ParticleError::ExtendGrid { .. })), "{err:?}");
    }

    #[test]
    fn biconjugation_recovers_convex_function() {
        let xs: Vec<f64> = (0..=3000).map(|i| -3.0 + i as f64 * 2e-3).collect();
        let fs: Vec<f64> = xs.iter().map(|x| (x * x).cosh().ln()).collect();
        let f_table = PsiTable::new(xs.clone(), fs.clone()).unwrap();
        // slopes of f on the x-grid stay within (-6, 6); alphas must stay
        // strictly inside that range for an interior supremum
        let alphas: Vec<f64> = (0..=2000).map(|i| -5.8 + i as f64 * 0.0058).collect();
        let biconj = {
            let conj = conjugate_table(&f_table, &alphas).unwrap();
            // evaluate only where the slope of f stays within the alpha range
            conjugate_table(&conj, &xs[250..2751].to_vec()).unwrap()
        };
        for (i, &x) in biconj.xs.iter().enumerate() {
            let f = (x * x).cosh().ln();
            assert!(
                (biconj.values[i] - f).abs() < 1e-3,
                "x = {x}: {} vs {f}",
                biconj.values[i]
            );
        }
    }

    #[test]
    fn step_speed_table_is_concave() {
        let u = Potential::exponential();
        let alphas: Vec<f64> = (1..=40).map(|i| 0.2 + i as f64 * 0.1).collect();
        let psi = PsiTable::from_potential(&u, &alphas).unwrap();
        let grid: Vec<f64> = (0..=30).map(|i| 0.6 + i as f64 * 0.1).collect();
        let gammas: Vec<f64> = grid
            .iter()
            .map(|&a| step_speed(&psi, a).unwrap())
            .collect();
        for w in gammas.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-9, "{w:?}");
        }
    }

    #[test]
    fn polymer_partition_base_cases() {
        let dt = 1e-3;
        let m = 1001;
        let b1: Vec<f64> = (0..m).map(|i| 0.3 * i as f64 * dt).collect();
        assert_relative_eq!(
            polymer_partition_smalln(&[b1.clone()], dt).unwrap(),
            (0.3_f64).exp(),
            epsilon = 1e-12
        );
        // n = 2 with zero driver: Z_2(t) = t
        let zeros = vec![0.0; m];
        assert_relative_eq!(
            polymer_partition_smalln(&[zeros.clone(), zeros.clone()], dt).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(polymer_partition_smalln(&vec![zeros.clone(); 4], dt).is_err());
    }

    #[test]
    fn polymer_partition_two_particle_closed_form() {
        // B_1(s) = s, B_2 = 0 on [0, 1]: Z_2 = integral of e^s = e - 1
        let dt = 1e-4;
        let m = 10_001;
        let b1: Vec<f64> = (0..m).map(|i| i as f64 * dt).collect();
        let b2 = vec![0.0; m];
        let z = polymer_partition_smalln(&[b1, b2], dt).unwrap();
        assert_relative_eq!(z, 1.0_f64.exp() - 1.0, epsilon = 1e-6);
    }

    #[test]
    fn polymer_partition_three_particle_zero_driver() {
        // zero driver: Z_3(t) = volume of the 2-simplex = t^2/2
        let dt = 1e-3;
        let m = 2001; // t = 2
        let zeros = vec![0.0; m];
        let z = polymer_partition_smalln(&[zeros.clone(), zeros.clone(), zeros], dt)
            .unwrap();
        assert_relative_eq!(z, 2.0, epsilon = 1e-4);
    }

    #[test]
    fn rejects_single_particle() {
        assert!(ParticleConfig::new(vec![1.0], Potential::exponential()).is_err());
    }
}
