//! Path simulation: Euler--Maruyama for GRBM, the Harrison--Reiman
//! reflection map for the hard limit, and the beta -> infinity comparison.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::GeneratorSpec;
use crate::potential::Potential;
use crate::stats::{self, Estimate};

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(
        "drift blow-up at t = {t:.3} (|x| = {norm:.3e}); the potential may be \
         irregular — run the regularity report"
    )]
    BlowUp { t: f64, norm: f64 },
    #[error("reflection matrix not contractive (spectral radius {0:.3} >= 1)")]
    NonContractive(f64),
    #[error("Skorokhod fixed-point iteration did not converge")]
    NoConvergence,
    #[error("covariance is not positive semi-definite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

/// Parameters of one ensemble simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub n_paths: usize,
    /// Record every `save_every`-th step (1 = record all).
    #[serde(default = "default_save_every")]
    pub save_every: usize,
}

fn default_save_every() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.dt > 0.0) || !(self.t_max > 0.0) || self.dt > self.t_max {
            return Err(SdeError::Config(format!(
                "need 0 < dt <= t_max, got dt = {}, t_max = {}",
                self.dt, self.t_max
            )));
        }
        if !(self.burn_in < self.t_max) || self.burn_in < 0.0 {
            return Err(SdeError::Config(format!(
                "need 0 <= burn_in < t_max, got burn_in = {}",
                self.burn_in
            )));
        }
        if self.n_paths == 0 || self.save_every == 0 || self.x0.is_empty() {
            return Err(SdeError::Config(
                "n_paths, save_every and dim(x0) must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// A simulated ensemble on a uniform stored grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    /// Stored time points (step dt * save_every, starting at 0).
    pub times: Vec<f64>,
    /// Flat row-major storage: [path][stored step][coordinate].
    pub data: Vec<f64>,
    pub seed: u64,
    pub scheme: String,
}

impl PathEnsemble {
    pub fn n_stored(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, path: usize, step: usize, coord: usize) -> f64 {
        self.data[(path * self.n_stored() + step) * self.dim + coord]
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * self.n_stored() + step) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// One coordinate of one path as a dense series.
    pub fn coordinate_series(&self, path: usize, coord: usize) -> Vec<f64> {
        (0..self.n_stored()).map(|s| self.value(path, s, coord)).collect()
    }

    /// First stored index with time >= burn_in.
    pub fn burn_in_index(&self, burn_in: f64) -> usize {
        self.times.iter().position(|&t| t >= burn_in).unwrap_or(self.n_stored())
    }

    /// Post-burn-in values of `f` along all paths, path-major.
    pub fn post_burn_in<F: Fn(&[f64]) -> f64>(&self, f: F, burn_in: f64) -> Vec<f64> {
        let start = self.burn_in_index(burn_in);
        let mut out = Vec::new();
        for p in 0..self.n_paths {
            for s in start..self.n_stored() {
                out.push(f(self.state(p, s)));
            }
        }
        out
    }
}

/// The substream RNG for one path of a seeded ensemble.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Square root of a PSD matrix via symmetric eigendecomposition; small
/// negative eigenvalues (numerical noise) are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>, SdeError> {
    let eig = a.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-10 {
            return Err(SdeError::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

const BLOW_UP: f64 = 1e8;

/// Euler--Maruyama for dX = drift(X) dt + sigma dW with per-path ChaCha
/// substreams; paths run in parallel and are merged in path order, so the
/// output is deterministic in (seed, cfg).
pub fn simulate_sde<D>(
    drift: &D,
    sigma: &DMatrix<f64>,
    cfg: &SimConfig,
    scheme: &str,
) -> Result<PathEnsemble, SdeError>
where
    D: Fn(&[f64]) -> DVector<f64> + Sync,
{
    cfg.validate()?;
    let d = cfg.x0.len();
    let n_steps = cfg.n_steps();
    let n_stored = n_steps / cfg.save_every + 1;
    let sqrt_dt = cfg.dt.sqrt();
    let paths: Result<Vec<Vec<f64>>, SdeError> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let mut x = DVector::from_column_slice(&cfg.x0);
            let mut noise = DVector::zeros(d);
            let mut out = Vec::with_capacity(n_stored * d);
            out.extend_from_slice(x.as_slice());
            for step in 1..=n_steps {
                let mu = drift(x.as_slice());
                if mu.norm() > BLOW_UP || x.norm() > BLOW_UP {
                    return Err(SdeError::BlowUp {
                        t: step as f64 * cfg.dt,
                        norm: x.norm().max(mu.norm()),
                    });
                }
                for i in 0..d {
                    noise[i] = normal_sample(&mut rng);
                }
                x += mu * cfg.dt + sqrt_dt * (sigma * &noise);
                if step % cfg.save_every == 0 {
                    out.extend_from_slice(x.as_slice());
                }
            }
            Ok(out)
        })
        .collect();
    let paths = paths?;
    let times: Vec<f64> = (0..n_stored)
        .map(|i| i as f64 * cfg.dt * cfg.save_every as f64)
        .collect();
    Ok(PathEnsemble {
        dim: d,
        n_paths: cfg.n_paths,
        times,
        data: paths.concat(),
        seed: cfg.seed,
        scheme: scheme.to_string(),
    })
}

fn normal_sample<R: RngCore>(rng: &mut R) -> f64 {
    use rand_distr::StandardNormal;
    rand_distr::Distribution::sample(&StandardNormal, rng)
}

/// Euler--Maruyama simulation of the GRBM with generator spec `spec`.
pub fn simulate_grbm(spec: &GeneratorSpec, cfg: &SimConfig) -> Result<PathEnsemble, SdeError> {
    if cfg.x0.len() != spec.dim() {
        return Err(SdeError::Config(format!(
            "x0 has dimension {}, data has {}",
            cfg.x0.len(),
            spec.dim()
        )));
    }
    let sigma = psd_sqrt(spec.data.covariance())?;
    simulate_sde(&|x: &[f64]| spec.drift_field(x), &sigma, cfg, "euler-maruyama/grbm")
}

/// Brownian driver ensemble (no drift adjustment): B(0) = x0.
pub fn simulate_driver(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cfg: &SimConfig,
) -> Result<PathEnsemble, SdeError> {
    let mu = mu.clone();
    simulate_sde(&move |_: &[f64]| mu.clone(), sigma, cfg, "euler-maruyama/driver")
}

/// Spectral radius of |Q| by power iteration.
fn abs_spectral_radius(q: &DMatrix<f64>) -> f64 {
    let d = q.nrows();
    let absq = q.map(f64::abs);
    let mut v = DVector::from_element(d, 1.0);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = &absq * &v;
        let n = w.norm();
        if n < 1e-300 {
            return 0.0;
        }
        lambda = n / v.norm();
        v = w / n;
    }
    lambda
}

/// Harrison--Reiman reflection applied pathwise to a driver ensemble:
/// Z = B + (I + Q^T) Y with Y the minimal nondecreasing regulator, found by
/// Picard iteration of Y_j(t) = sup_{s<=t} [-(B + Q^T Y)_j(s)]^+.
///
/// Requires Q with nonpositive entries, zero diagonal and spectral radius
/// of |Q| below one.
pub fn skorokhod_reflect(driver: &PathEnsemble, q: &DMatrix<f64>) -> Result<PathEnsemble, SdeError> {
    let d = driver.dim;
    if q.nrows() != d || q.ncols() != d {
        return Err(SdeError::Config(format!(
            "Q is {}x{}, driver dimension is {d}",
            q.nrows(),
            q.ncols()
        )));
    }
    for i in 0..d {
        if q[(i, i)] != 0.0 {
            return Err(SdeError::Config("Q must have zero diagonal".into()));
        }
        for j in 0..d {
            if q[(i, j)] > 0.0 {
                return Err(SdeError::Config("Q must have nonpositive entries".into()));
            }
        }
    }
    let rho = abs_spectral_radius(q);
    if rho >= 1.0 {
        return Err(SdeError::NonContractive(rho));
    }
    let n = driver.n_stored();
    let qt = q.transpose();
    let out: Result<Vec<Vec<f64>>, SdeError> = (0..driver.n_paths)
        .into_par_iter()
        .map(|p| {
            // y[t][j]
            let mut y = vec![vec![0.0; d]; n];
            for _iter in 0..10_000 {
                let mut change = 0.0_f64;
                let mut running = vec![0.0; d];
                for t in 0..n {
                    let b = driver.state(p, t);
                    for j in 0..d {
                        let mut coupled = b[j];
                        for i in 0..d {
                            coupled += qt[(j, i)] * y[t][i];
                        }
                        if -coupled > running[j] {
                            running[j] = -coupled;
                        }
                    }
                    for j in 0..d {
                        change = change.max((running[j] - y[t][j]).abs());
                        y[t][j] = running[j];
                    }
                }
                if change < 1e-12 {
                    let mut z = Vec::with_capacity(n * d);
                    for (t, yt) in y.iter().enumerate() {
                        let b = driver.state(p, t);
                        for j in 0..d {
                            let mut v = b[j] + yt[j];
                            for i in 0..d {
                                v += qt[(j, i)] * yt[i];
                            }
                            z.push(v);
                        }
                    }
                    return Ok(z);
                }
            }
            Err(SdeError::NoConvergence)
        })
        .collect();
    Ok(PathEnsemble {
        dim: d,
        n_paths: driver.n_paths,
        times: driver.times.clone(),
        data: out?.concat(),
        seed: driver.seed,
        scheme: "skorokhod".to_string(),
    })
}

/// The regulator Y of the reflection (same fixed point as
/// [`skorokhod_reflect`]), exposed for complementarity checks.
pub fn skorokhod_regulator(
    driver: &PathEnsemble,
    q: &DMatrix<f64>,
) -> Result<PathEnsemble, SdeError> {
    let z = skorokhod_reflect(driver, q)?;
    // Y = (I + Q^T)^-1 (Z - B)
    let d = driver.dim;
    let m = (DMatrix::<f64>::identity(d, d) + q.transpose())
        .lu();
    let n = driver.n_stored();
    let mut data = Vec::with_capacity(z.data.len());
    for p in 0..driver.n_paths {
        for t in 0..n {
            let zb = DVector::from_iterator(
                d,
                (0..d).map(|j| z.value(p, t, j) - driver.value(p, t, j)),
            );
            let y = m.solve(&zb).ok_or(SdeError::NoConvergence)?;
            data.extend_from_slice(y.as_slice());
        }
    }
    Ok(PathEnsemble {
        dim: d,
        n_paths: driver.n_paths,
        times: driver.times.clone(),
        data,
        seed: driver.seed,
        scheme: "skorokhod-regulator".to_string(),
    })
}

/// One row of the hard-limit comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct BetaCompareRow {
    pub beta: f64,
    /// sup-norm pathwise distance to the reflected driver.
    pub sup_distance: f64,
    /// KS distance of the post-burn-in first coordinate to Exp(rate
    /// 2 gamma_1).
    pub ks_exponential: f64,
}

/// Simulates the GRBM with U_beta for each beta on a common driver and
/// compares to the Skorokhod reflection of that driver. `data` must be A =
/// I with skew-symmetry so gamma(mu) gives the exponential rates.
pub fn beta_limit_compare(
    data: &crate::domain::ReflectionData,
    betas: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<BetaCompareRow>, SdeError> {
    cfg.validate()?;
    let d = data.dim();
    let gamma = data
        .gamma_drift(None)
        .map_err(|e| SdeError::Config(e.to_string()))?;
    let sigma = DMatrix::<f64>::identity(d, d);
    let minus_mu = -data.drift().clone();
    let driver = simulate_driver(&minus_mu, &sigma, cfg)?;
    let q = data.reflections().clone();
    let hard = skorokhod_reflect(&driver, &q)?;
    let start = driver.burn_in_index(cfg.burn_in);
    let mut rows = Vec::new();
    for &beta in betas {
        let u = Potential::beta_exponential(beta)
            .map_err(|e| SdeError::Config(e.to_string()))?;
        let spec = GeneratorSpec::new(data.clone(), u);
        // Common random numbers: the same substreams drive every beta.
        let soft = simulate_grbm(&spec, cfg)?;
        let mut sup = 0.0_f64;
        let mut tail = Vec::new();
        for p in 0..cfg.n_paths {
            for t in 0..soft.n_stored() {
                for j in 0..d {
                    sup = sup.max((soft.value(p, t, j) - hard.value(p, t, j)).abs());
                }
                if t >= start {
                    tail.push(soft.value(p, t, 0));
                }
            }
        }
        let rate = 2.0 * gamma[0];
        let ks = stats::ks_statistic(&tail, |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                1.0 - (-rate * x).exp()
            }
        })?;
        rows.push(BetaCompareRow {
            beta,
            sup_distance: sup,
            ks_exponential: ks.d,
        });
    }
    Ok(rows)
}

/// Time-and-ensemble average of `f` after burn-in, with a batch-means
/// standard error.
pub fn ergodic_average<F: Fn(&[f64]) -> f64>(
    ensemble: &PathEnsemble,
    f: F,
    burn_in: f64,
) -> Result<Estimate, SdeError> {
    let series = ensemble.post_burn_in(f, burn_in);
    if series.is_empty() {
        return Err(SdeError::Config(format!(
            "no stored samples after burn_in = {burn_in}"
        )));
    }
    Ok(stats::batch_means(&series)?)
}
